"""Integrated planning and tracking loop.

Every planning step the DQN planner picks the next depth waypoint from the
turbine's realized depth; between waypoints the MPC tracker runs every
sampling period against the held reference and the plant is stepped.
Power accrues against the true current field.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .mpc import MPCConstraints, MPCTracker, MPCWeights
from .ocean import (
    DAY,
    load_gp,
    read_field_csv,
    sample_realization,
    synthesize_shear_profile,
)
from .planner import Planner, greedy_action
from .plant import (
    PHI,
    PSI,
    THETA,
    Z,
    PlantConfig,
    build_reference_model,
    discretize,
    load_model,
    step,
)
from .power import PowerParams, net_power

log = logging.getLogger(__name__)


class SimulationError(RuntimeError):
    """A component failed mid-run; the message carries the simulation time."""


@dataclass
class EnvironmentConfig:
    """Where the true current field comes from.

    ``synthetic`` generates a profile of ``kind``; ``csv`` loads an ADCP file;
    ``gp`` draws one posterior sample of a saved GP as the truth while the
    planner only sees the GP mean.
    """

    source: str = "synthetic"
    kind: str = "migrating"
    seed: int = 0
    csv: str | None = None
    gp: str | None = None
    gp_depths: tuple = (20.0, 100.0, 5.0)  # start, stop, step of the sampled grid
    gp_dt: float = 1800.0

    def __post_init__(self):
        if self.source not in ("synthetic", "csv", "gp"):
            raise ValueError(f"unknown environment source {self.source!r}")
        if self.source == "csv" and not self.csv:
            raise ValueError("csv environment needs a 'csv' path")
        if self.source == "gp" and not self.gp:
            raise ValueError("gp environment needs a 'gp' path")
        self.gp_depths = tuple(float(v) for v in self.gp_depths)


@dataclass
class TrackerConfig:
    N_t: int = 40
    N_c: int = 20
    q_term: float = 1.0
    slew_units: str = "percent"
    torque_fraction: float = 0.2
    y_min: float | None = None
    y_max: float | None = None
    tol: float = 1e-8


@dataclass
class SimulationConfig:
    plant: PlantConfig = field(default_factory=PlantConfig)
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    power: PowerParams = field(default_factory=PowerParams)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    model: str | None = None  # JSON model file; None builds the reference plant
    planner: str | None = None  # saved planner network
    T_s: float = 2.0
    duration: float = DAY
    z_eq: float = 50.0
    euler_bound_deg: float = 6.0

    def __post_init__(self):
        if not self.T_s > 0 or not self.duration > 0:
            raise ValueError("T_s and duration must be positive")
        if not _is_multiple(self.T_p, self.T_s):
            raise ValueError(f"T_p={self.T_p} is not an integer multiple of T_s={self.T_s}")
        if not _is_multiple(self.duration, self.T_p):
            raise ValueError(f"duration={self.duration} is not a multiple of T_p={self.T_p}")

    @property
    def T_p(self):
        return self.power.T_p

    @property
    def steps_per_plan(self):
        return int(round(self.T_p / self.T_s))

    @property
    def n_steps(self):
        return int(round(self.duration / self.T_s))


def _is_multiple(a, b):
    q = a / b
    return abs(q - round(q)) < 1e-9 and round(q) >= 1


@dataclass
class SimulationLog:
    time: np.ndarray  # (N,)
    states: np.ndarray  # (N, 13) deviation state at each record time
    inputs: np.ndarray  # (N, 3) input applied over the record's interval
    reference: np.ndarray  # (N,) absolute depth reference
    depth: np.ndarray  # (N,) realized absolute depth
    P_G: np.ndarray
    P_HD: np.ndarray
    P_CD: np.ndarray
    kkt_residual: np.ndarray
    iterations: np.ndarray
    decisions: list = field(default_factory=list)  # (time, snapped depth, waypoint)
    T_s: float = 2.0

    @property
    def P_net(self):
        return self.P_G - self.P_HD - self.P_CD

    def __len__(self):
        return self.time.size

    def to_csv(self, path):
        deg = np.degrees(self.states[:, [PHI, THETA, PSI]])
        cols = {
            "time_s": self.time, "z_m": self.depth, "z_ref_m": self.reference,
            "Bf": self.inputs[:, 0], "Ba": self.inputs[:, 1], "tau_em": self.inputs[:, 2],
            "phi_deg": deg[:, 0], "theta_deg": deg[:, 1], "psi_deg": deg[:, 2],
            "P_G": self.P_G, "P_HD": self.P_HD, "P_CD": self.P_CD, "P_net": self.P_net,
            "kkt_residual": self.kkt_residual, "iters": self.iterations,
        }
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in zip(*cols.values()):
                w.writerow([repr(float(v)) if not isinstance(v, (int, np.integer)) else int(v)
                            for v in row])


@dataclass
class Metrics:
    energy_J: float
    rmse_m: float
    max_euler_deg: float
    violations: int
    duration_s: float
    env_seed: int
    gain_percent: float | None = None

    def to_dict(self):
        return asdict(self)


def waypoints_to_reference(waypoints, T_s, T_p=300.0):
    """Zero-order hold: each waypoint repeated ``T_p/T_s`` times."""
    wp = np.atleast_1d(np.asarray(waypoints, dtype=float))
    if wp.size == 0:
        raise ValueError("need at least one waypoint")
    if not _is_multiple(T_p, T_s):
        raise ValueError(f"T_p={T_p} is not an integer multiple of T_s={T_s}")
    return np.repeat(wp, int(round(T_p / T_s)))


def build_environment(env: EnvironmentConfig):
    """Return ``(truth, forecast)``; the planner sees ``forecast``."""
    if env.source == "synthetic":
        truth = synthesize_shear_profile(env.kind, seed=env.seed)
        return truth, truth
    if env.source == "csv":
        truth = read_field_csv(env.csv)
        return truth, truth
    gp = load_gp(env.gp)
    start, stop, dz = env.gp_depths
    depths = np.arange(start, stop + 0.5 * dz, dz)
    times = np.arange(0.0, DAY + 0.5 * env.gp_dt, env.gp_dt)
    return sample_realization(gp, depths, times, seed=env.seed), gp


def training_sampler(env: EnvironmentConfig, n_gp_samples=8):
    """Episode sampler for the planner: a fresh field from the configured family.

    Synthetic profiles use a new seed per episode; a CSV field is reused as
    is; a GP contributes a small pool of posterior samples.
    """
    if env.source == "synthetic":
        return lambda rng: synthesize_shear_profile(env.kind, seed=int(rng.integers(2**31)))
    if env.source == "csv":
        fld = read_field_csv(env.csv)
        return lambda rng: fld
    gp = load_gp(env.gp)
    start, stop, dz = env.gp_depths
    depths = np.arange(start, stop + 0.5 * dz, dz)
    times = np.arange(0.0, DAY + 0.5 * env.gp_dt, env.gp_dt)
    pool = {}

    def draw(rng):
        i = int(rng.integers(n_gp_samples))
        if i not in pool:
            pool[i] = sample_realization(gp, depths, times, seed=10_000 + i)
        return pool[i]

    return draw


def build_tracker(cfg: SimulationConfig):
    cont = load_model(cfg.model) if cfg.model else build_reference_model(cfg.plant)
    model = discretize(cont, cfg.T_s)
    tc = cfg.tracker
    weights = MPCWeights.reference(model.n_states, model.n_inputs)
    weights.q_term = tc.q_term
    y_min = None if tc.y_min is None else tc.y_min - cfg.z_eq
    y_max = None if tc.y_max is None else tc.y_max - cfg.z_eq
    cons = MPCConstraints.reference(cfg.T_s, model.equilibrium, tc.slew_units,
                                tc.torque_fraction, y_min, y_max)
    return model, MPCTracker(model, weights, cons, tc.N_t, tc.N_c, tc.tol)


def _load_planner(cfg, planner):
    if planner is not None:
        return planner
    if not cfg.planner:
        raise ValueError("run_episode needs a planner (object or saved file path)")
    return Planner.load(cfg.planner)


def _simulate(cfg: SimulationConfig, choose_waypoint, fields=None):
    truth, forecast = fields or build_environment(cfg.environment)
    model, tracker = build_tracker(cfg)
    N, per_plan = cfg.n_steps, cfg.steps_per_plan
    n, m = model.n_states, model.n_inputs

    t = np.arange(N) * cfg.T_s
    X = np.empty((N, n))
    Uk = np.empty((N, m))
    ref = np.empty(N)
    P = np.empty((N, 3))
    kkt = np.empty(N)
    iters = np.empty(N, dtype=int)
    decisions = []

    x = np.zeros(n)
    u_prev = np.zeros(m)
    waypoint = cfg.z_eq
    violations = 0
    for k in range(N):
        try:
            if k % per_plan == 0:
                waypoint = choose_waypoint(k // per_plan, cfg.z_eq + x[Z], forecast)
                decisions.append((t[k], cfg.z_eq + x[Z], waypoint))
            sol = tracker.step(x, u_prev, np.full(tracker.N_t, waypoint - cfg.z_eq))
            u = sol.u
            violations += tracker.constraints.violations(u, u_prev)
            x_next = step(model, x, u)
            z_now, z_next = cfg.z_eq + x[Z], cfg.z_eq + x_next[Z]
            pb = net_power(z_now, z_next, truth, t[k], cfg.power, dt=cfg.T_s)
        except Exception as exc:
            raise SimulationError(f"at t={t[k]:.0f} s: {exc}") from exc
        X[k], Uk[k], ref[k] = x, u, waypoint
        P[k] = (pb.P_G, pb.P_HD, pb.P_CD)
        kkt[k], iters[k] = sol.kkt_residual, sol.iterations
        x, u_prev = x_next, u

    log_ = SimulationLog(t, X, Uk, ref, cfg.z_eq + X[:, Z], P[:, 0], P[:, 1], P[:, 2],
                         kkt, iters, decisions, cfg.T_s)
    return log_, compute_metrics(log_, cfg, violations)


def compute_metrics(log_: SimulationLog, cfg: SimulationConfig, violations=0):
    err = log_.depth - log_.reference
    euler = np.degrees(np.abs(log_.states[:, [PHI, THETA, PSI]]))
    return Metrics(
        energy_J=float(np.sum(log_.P_net * log_.T_s)),
        rmse_m=float(np.sqrt(np.mean(err**2))),
        max_euler_deg=float(euler.max(initial=0.0)),
        violations=int(violations),
        duration_s=float(len(log_) * log_.T_s),
        env_seed=int(cfg.environment.seed),
    )


def run_episode(cfg: SimulationConfig, planner: Planner | None = None, fields=None):
    """Planned run.  ``fields`` may pass a prebuilt ``(truth, forecast)`` pair."""
    planner = _load_planner(cfg, planner)
    pcfg = planner.cfg
    grid_step = min(abs(a) for a in pcfg.actions if a != 0)
    env_cache = {}

    def choose(j, z_real, forecast):
        env = env_cache.setdefault("env", planner.env(forecast))
        z = grid_step * round(z_real / grid_step)
        z = min(max(z, pcfg.z_min), pcfg.z_max)
        a = greedy_action(planner, env, z, j)
        return z + env.actions[a]

    return _simulate(cfg, choose, fields)


def run_baseline(cfg: SimulationConfig, fields=None):
    """Hold-depth baseline: constant reference ``z_eq``, no planner."""
    return _simulate(cfg, lambda j, z, f: cfg.z_eq, fields)


@dataclass
class Report:
    gain_percent: float
    rmse_m: float
    violations: int
    planned: Metrics
    baseline: Metrics

    def to_dict(self):
        return {
            "gain_percent": self.gain_percent,
            "rmse_m": self.rmse_m,
            "violations": self.violations,
            "planned": self.planned.to_dict(),
            "baseline": self.baseline.to_dict(),
        }


def energy_gain(E_p, E_b):
    if E_b == 0:
        raise ValueError("baseline energy is zero")
    return (E_p - E_b) / E_b * 100.0


def compare(planned: Metrics, baseline: Metrics):
    if not math.isclose(planned.duration_s, baseline.duration_s):
        raise ValueError(
            f"durations differ: planned {planned.duration_s} s vs baseline {baseline.duration_s} s"
        )
    if planned.env_seed != baseline.env_seed:
        raise ValueError("planned and baseline runs used different environment seeds")
    gain = energy_gain(planned.energy_J, baseline.energy_J)
    planned.gain_percent = gain
    return Report(gain, planned.rmse_m, planned.violations + baseline.violations,
                  planned, baseline)


# --- output -----------------------------------------------------------------


def write_metrics(metrics: Metrics, path):
    Path(path).write_text(json.dumps(metrics.to_dict(), indent=2))


def plot_log(log_: SimulationLog, out_dir, baseline: SimulationLog | None = None):
    """Depth, Euler angles, inputs and cumulative energy as SVG files."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "mctpath"  # stable element ids

    out = Path(out_dir)
    h = log_.time / 3600.0
    paths = []

    def save(fig, name):
        p = out / name
        fig.tight_layout()
        fig.savefig(p, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(p)

    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(h, log_.reference, "--", label="reference")
    ax.plot(h, log_.depth, label="depth")
    ax.invert_yaxis()
    ax.set(xlabel="time (h)", ylabel="depth (m)")
    ax.legend()
    save(fig, "depth.svg")

    fig, ax = plt.subplots(figsize=(8, 3.5))
    for i, name in zip((PHI, THETA, PSI), ("phi", "theta", "psi")):
        ax.plot(h, np.degrees(log_.states[:, i]), label=f"{name} deviation")
    ax.set(xlabel="time (h)", ylabel="angle (deg)")
    ax.legend()
    save(fig, "euler.svg")

    fig, axes = plt.subplots(3, 1, figsize=(8, 6), sharex=True)
    for i, (a, name) in enumerate(zip(axes, ("B_f", "B_a", "tau_em (N m)"))):
        a.plot(h, log_.inputs[:, i])
        a.set_ylabel(name)
    axes[-1].set_xlabel("time (h)")
    save(fig, "inputs.svg")

    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.plot(h, np.cumsum(log_.P_net * log_.T_s) / 3.6e6, label="planned")
    if baseline is not None:
        ax.plot(baseline.time / 3600.0, np.cumsum(baseline.P_net * baseline.T_s) / 3.6e6,
                label="baseline")
    ax.set(xlabel="time (h)", ylabel="energy (kWh)")
    ax.legend()
    save(fig, "energy.svg")
    return paths
