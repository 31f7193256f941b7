"""Ocean current environment: gridded fields, ADCP ingestion, synthetic
shear profiles and a Gaussian-process model over (depth, time)."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

log = logging.getLogger(__name__)

MAX_DEPTH = 400.0
CSV_HEADER = ("time_s", "depth_m", "speed_mps")
TIDAL_PERIOD = 12.42 * 3600.0
DAY = 86400.0


class FieldError(ValueError):
    pass


class GPError(ValueError):
    pass


@dataclass(frozen=True)
class CurrentObservation:
    t: float
    z: float
    v_c: float

    def __post_init__(self):
        if not all(math.isfinite(a) for a in (self.t, self.z, self.v_c)):
            raise ValueError("non-finite observation")
        if not 0.0 <= self.z <= MAX_DEPTH:
            raise ValueError(f"depth {self.z} outside [0, {MAX_DEPTH}] m")
        if self.v_c < 0:
            raise ValueError(f"negative current speed {self.v_c}")


class CurrentField:
    """Current speed on a depth x time grid, ``speeds[i_depth, i_time]``.

    Lookups interpolate bilinearly.  Depths outside the grid are an error;
    times outside it are clamped to the first/last column.
    """

    def __init__(self, depths, times, speeds):
        self.depths = np.asarray(depths, dtype=float)
        self.times = np.asarray(times, dtype=float)
        self.speeds = np.asarray(speeds, dtype=float)
        if self.depths.ndim != 1 or self.times.ndim != 1:
            raise FieldError("depth and time grids must be 1-D")
        if self.speeds.shape != (self.depths.size, self.times.size):
            raise FieldError(
                f"speed matrix {self.speeds.shape} does not match grids "
                f"({self.depths.size}, {self.times.size})"
            )
        for name, g in (("depth", self.depths), ("time", self.times)):
            if g.size > 1 and np.any(np.diff(g) <= 0):
                raise FieldError(f"{name} grid not strictly increasing")
        if not np.all(np.isfinite(self.speeds)) or np.any(self.speeds < 0):
            raise FieldError("speeds must be finite and non-negative")

    @property
    def shape(self):
        return self.speeds.shape

    def __eq__(self, other):
        if not isinstance(other, CurrentField):
            return NotImplemented
        return (
            np.array_equal(self.depths, other.depths)
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.speeds, other.speeds)
        )

    @staticmethod
    def _bracket(grid, x):
        if grid.size == 1:
            return 0, 0, 0.0
        j = int(np.searchsorted(grid, x, side="right")) - 1
        j = min(max(j, 0), grid.size - 2)
        w = (x - grid[j]) / (grid[j + 1] - grid[j])
        return j, j + 1, min(max(w, 0.0), 1.0)

    def speed(self, z, t):
        if not self.depths[0] - 1e-9 <= z <= self.depths[-1] + 1e-9:
            raise FieldError(f"depth {z} m outside field [{self.depths[0]}, {self.depths[-1]}]")
        i0, i1, wz = self._bracket(self.depths, z)
        j0, j1, wt = self._bracket(self.times, t)
        s = self.speeds
        top = (1 - wt) * s[i0, j0] + wt * s[i0, j1]
        bot = (1 - wt) * s[i1, j0] + wt * s[i1, j1]
        return float((1 - wz) * top + wz * bot)

    def observations(self):
        """All grid cells as an ``(n, 3)`` array of ``(t, z, v)`` rows."""
        zz, tt = np.meshgrid(self.depths, self.times, indexing="ij")
        return np.column_stack([tt.ravel(), zz.ravel(), self.speeds.ravel()])

    def mean_abs_vertical_gradient(self):
        return float(np.mean(np.abs(np.diff(self.speeds, axis=0) / np.diff(self.depths)[:, None])))

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            for j, t in enumerate(self.times):
                for i, z in enumerate(self.depths):
                    w.writerow((repr(float(t)), repr(float(z)), repr(float(self.speeds[i, j]))))


@dataclass
class FillReport:
    dropped_rows: list = field(default_factory=list)  # (line number, reason)
    filled_cells: list = field(default_factory=list)  # (time, depth)
    dropped_times: list = field(default_factory=list)

    @property
    def n_filled(self):
        return len(self.filled_cells)


def _bad_reason(t, z, v):
    if not (math.isfinite(t) and math.isfinite(z)):
        return "non-finite coordinate"
    if not 0.0 <= z <= MAX_DEPTH:
        return "depth outside instrument range"
    if not math.isfinite(v):
        return "non-finite speed"
    if v < 0:
        return "negative speed"
    return None


def load_adcp_csv(path):
    """Read ``time_s,depth_m,speed_mps`` rows into a gridded field.

    Bad rows are dropped.  Rows whose coordinates are valid still define grid
    nodes, and cells left empty are filled from the nearest valid depth in the
    same time column.  Returns ``(field, report)``.
    """
    report = FillReport()
    cells = {}
    depths, times = set(), set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise FieldError(f"{path}: empty file")
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise FieldError(f"{path}: expected header {','.join(CSV_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                t, z, v = (float(c) for c in row)
            except ValueError:
                report.dropped_rows.append((lineno, "unparseable"))
                continue
            reason = _bad_reason(t, z, v)
            if reason in ("non-finite coordinate", "depth outside instrument range"):
                report.dropped_rows.append((lineno, reason))
                continue
            depths.add(z)
            times.add(t)
            if reason:
                report.dropped_rows.append((lineno, reason))
                continue
            cells[(z, t)] = v
    if not cells:
        raise FieldError(f"{path}: no valid observations")

    zg = np.array(sorted(depths))
    tg = []
    for t in sorted(times):
        if any((z, t) in cells for z in zg):
            tg.append(t)
        else:
            report.dropped_times.append(t)
    tg = np.array(tg)

    speeds = np.empty((zg.size, tg.size))
    complete = 0
    for j, t in enumerate(tg):
        valid = np.array([(z, t) in cells for z in zg])
        complete += bool(valid.all())
        vz = zg[valid]
        for i, z in enumerate(zg):
            if valid[i]:
                speeds[i, j] = cells[(z, t)]
            else:
                src = vz[np.argmin(np.abs(vz - z))]
                speeds[i, j] = cells[(src, t)]
                report.filled_cells.append((float(t), float(z)))
    if complete == 0:
        raise FieldError(f"{path}: no complete time column")
    if report.n_filled:
        log.info("%s: filled %d missing cells", path, report.n_filled)
    return CurrentField(zg, tg, speeds), report


def read_field_csv(path):
    return load_adcp_csv(path)[0]


# --- synthetic profiles ---------------------------------------------------

SHEAR_DECAY = {"low": 0.004, "high": 0.011}


def synthesize_shear_profile(
    kind="low", duration=DAY, seed=0, dz=5.0, dt=300.0, z_max=150.0, noise=0.003
):
    """Synthetic current field.

    ``low``/``high``: surface-intensified speed decaying exponentially with
    depth, 1.6 m/s at 50 m, with tidal modulation.  ``high`` decays ~2.75x
    faster.  ``migrating``: a slower background plus a 0.6 m/s jet whose
    core wanders between 40 and 80 m over a day.
    """
    if not duration > 0:
        raise ValueError("duration must be positive")
    rng = np.random.default_rng(seed)
    z = np.arange(0.0, z_max + 0.5 * dz, dz)
    t = np.arange(0.0, duration + 0.5 * dt, dt)
    zz, tt = np.meshgrid(z, t, indexing="ij")

    if kind in SHEAR_DECAY:
        phase = rng.uniform(0, 2 * np.pi)
        mod = 1.0 + 0.08 * np.sin(2 * np.pi * tt / TIDAL_PERIOD + phase)
        v = 1.6 * mod * np.exp(-SHEAR_DECAY[kind] * (zz - 50.0))
    elif kind == "migrating":
        phase = rng.uniform(0, 2 * np.pi)
        core = 60.0 + 20.0 * np.sin(2 * np.pi * tt / DAY + phase)
        v = 1.25 - 0.002 * (zz - 50.0) + 0.6 * np.exp(-((zz - core) ** 2) / (2 * 12.0**2))
    else:
        raise ValueError(f"unknown profile kind {kind!r}")
    v = v + noise * rng.standard_normal(v.shape)
    return CurrentField(z, t, np.maximum(v, 0.0))


def uniform_field(speed, depths, duration=DAY, dt=300.0):
    t = np.arange(0.0, duration + 0.5 * dt, dt)
    return CurrentField(depths, t, np.full((len(depths), t.size), float(speed)))


# --- Gaussian process -----------------------------------------------------


@dataclass(frozen=True)
class GPHyperparameters:
    signal_var: float = 0.3**2
    length_z: float = 15.0
    length_t: float = 3 * 3600.0
    noise_var: float = 0.05**2

    def __post_init__(self):
        if min(self.signal_var, self.length_z, self.length_t) <= 0 or self.noise_var < 0:
            raise ValueError("GP hyperparameters must be positive")


def se_kernel(X1, X2, hp: GPHyperparameters):
    """Squared-exponential covariance between ``(depth, time)`` rows."""
    dz = (X1[:, 0:1] - X2[:, 0][None, :]) / hp.length_z
    dt = (X1[:, 1:2] - X2[:, 1][None, :]) / hp.length_t
    return hp.signal_var * np.exp(-0.5 * (dz * dz + dt * dt))


def _as_observations(obs):
    if isinstance(obs, CurrentField):
        obs = obs.observations()
    if len(obs) and isinstance(obs[0], CurrentObservation):
        obs = [(o.t, o.z, o.v_c) for o in obs]
    arr = np.atleast_2d(np.asarray(obs, dtype=float))
    if arr.size == 0:
        raise GPError("at least one observation required")
    if arr.shape[1] != 3:
        raise GPError("observations must be (t, z, v) rows")
    return arr


@dataclass(frozen=True)
class GPModel:
    X: np.ndarray  # (n, 2) rows of (depth, time)
    y: np.ndarray
    hyper: GPHyperparameters
    mean: float
    L: np.ndarray  # lower Cholesky factor of K + noise I
    alpha: np.ndarray

    def speed(self, z, t):
        m, _ = gp_predict(self, z, t)
        return max(float(m), 0.0)

    def to_dict(self):
        return {
            "hyperparameters": vars(self.hyper),
            "mean": self.mean,
            "observations": np.column_stack([self.X[:, 1], self.X[:, 0], self.y]).tolist(),
        }


def gp_fit(observations, hyper=GPHyperparameters(), mean=None):
    """Condition a zero-mean SE process (offset by a constant mean) on data.

    ``mean=None`` uses the empirical mean of the targets.
    """
    obs = _as_observations(observations)
    X = obs[:, [1, 0]]
    y = obs[:, 2]
    m = float(np.mean(y)) if mean is None else float(mean)
    K = se_kernel(X, X, hyper)
    K[np.diag_indices_from(K)] += hyper.noise_var
    try:
        L = np.linalg.cholesky(K)
    except np.linalg.LinAlgError:
        raise GPError("Gram matrix not positive definite (duplicate inputs with zero noise?)") from None
    if np.min(np.diag(L)) ** 2 < 1e-13 * np.max(np.diag(K)):
        raise GPError("Gram matrix numerically singular (duplicate inputs with zero noise?)")
    alpha = cho_solve((L, True), y - m)
    return GPModel(X, y, hyper, m, L, alpha)


def gp_model_from_dict(data):
    hp = GPHyperparameters(**data["hyperparameters"])
    return gp_fit(np.asarray(data["observations"]), hp, mean=data["mean"])


def gp_predict(model: GPModel, depth, time):
    """Posterior mean and latent variance at ``(depth, time)``.

    Scalars in give scalars out; arrays broadcast.
    """
    d, t = np.broadcast_arrays(np.asarray(depth, dtype=float), np.asarray(time, dtype=float))
    Xq = np.column_stack([d.ravel(), t.ravel()])
    Ks = se_kernel(Xq, model.X, model.hyper)
    mu = model.mean + Ks @ model.alpha
    V = solve_triangular(model.L, Ks.T, lower=True)
    var = model.hyper.signal_var - np.sum(V * V, axis=0)
    if np.any(var < -1e-12 * max(model.hyper.signal_var, 1.0)):
        log.warning("posterior variance below zero beyond round-off: %g", var.min())
    var = np.maximum(var, 0.0)
    if d.ndim == 0:
        return float(mu[0]), float(var[0])
    return mu.reshape(d.shape), var.reshape(d.shape)


def log_marginal_likelihood(observations, hyper, mean=None):
    model = gp_fit(observations, hyper, mean)
    r = model.y - model.mean
    n = r.size
    return float(
        -0.5 * r @ model.alpha - np.sum(np.log(np.diag(model.L))) - 0.5 * n * math.log(2 * math.pi)
    )


def fit_hyperparameters(observations, signal_vars, length_zs, length_ts, noise_vars):
    """Grid search for the hyperparameters maximizing marginal likelihood."""
    best, best_ll = None, -math.inf
    for sv in signal_vars:
        for lz in length_zs:
            for lt in length_ts:
                for nv in noise_vars:
                    hp = GPHyperparameters(sv, lz, lt, nv)
                    try:
                        ll = log_marginal_likelihood(observations, hp)
                    except GPError:
                        continue
                    if ll > best_ll:
                        best, best_ll = hp, ll
    if best is None:
        raise GPError("no admissible hyperparameters on the grid")
    return best, best_ll


def _psd_cholesky(S):
    scale = max(float(np.max(np.diag(S))), np.finfo(float).tiny)
    jitter = 1e-12 * scale
    for _ in range(8):
        try:
            return np.linalg.cholesky(S + jitter * np.eye(len(S)))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise GPError("posterior covariance could not be factorized")


def sample_realization(model: GPModel, depths, times, seed=0, max_points=4096):
    """Draw one posterior sample of the field on a depth x time grid."""
    depths = np.asarray(depths, dtype=float)
    times = np.asarray(times, dtype=float)
    n = depths.size * times.size
    if n > max_points:
        raise GPError(f"grid of {n} points exceeds the dense-sampling cap {max_points}")
    zz, tt = np.meshgrid(depths, times, indexing="ij")
    Xq = np.column_stack([zz.ravel(), tt.ravel()])
    Ks = se_kernel(Xq, model.X, model.hyper)
    mu = model.mean + Ks @ model.alpha
    V = solve_triangular(model.L, Ks.T, lower=True)
    S = se_kernel(Xq, Xq, model.hyper) - V.T @ V
    S = 0.5 * (S + S.T)
    Lp = _psd_cholesky(S)
    rng = np.random.default_rng(seed)
    sample = mu + Lp @ rng.standard_normal(n)
    return CurrentField(depths, times, np.maximum(sample, 0.0).reshape(zz.shape))


def save_gp(model: GPModel, path):
    Path(path).write_text(json.dumps(model.to_dict()))


def load_gp(path):
    return gp_model_from_dict(json.loads(Path(path).read_text()))
