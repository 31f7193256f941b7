"""Deep Q-learning depth planner.

The agent picks a depth change every planning step ``T_p``.  A move earns
``alpha`` when it strictly raises net power over holding the current depth;
holding earns ``alpha`` exactly when no admissible move would have.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .power import PowerParams, net_power
from .qnetwork import QNetwork, TrainingDivergence, sgd_step

log = logging.getLogger(__name__)


@dataclass
class TrainingConfig:
    gamma: float = 0.5
    eps_min: float = 0.01
    eps_max: float = 1.0
    decay: float = 0.01
    alpha: float = 1.0
    batch_size: int = 64
    buffer_capacity: int = 500_000
    target_sync: int = 500
    learning_rate: float = 1e-3
    lr_final: float | None = None  # geometric anneal target; None keeps lr fixed
    episodes: int = 300
    horizon: int = 288
    hidden: int = 64
    actions: tuple = (-5.0, 0.0, 5.0)
    z_min: float = 30.0
    z_max: float = 90.0
    seed: int = 0
    exploring_starts: bool = False  # also randomize the episode's first step

    def __post_init__(self):
        self.actions = tuple(float(a) for a in self.actions)
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 0.0 < self.eps_min < self.eps_max <= 1.0:
            raise ValueError("need 0 < eps_min < eps_max <= 1")
        if self.learning_rate <= 0 or (self.lr_final is not None and self.lr_final <= 0):
            raise ValueError("learning rates must be positive")
        if self.decay < 0:
            raise ValueError("decay must be non-negative")
        if self.z_min >= self.z_max:
            raise ValueError("empty depth band")
        if list(self.actions) != sorted(set(self.actions)):
            raise ValueError("actions must be strictly increasing")
        for k in ("batch_size", "buffer_capacity", "target_sync", "episodes", "horizon", "hidden"):
            if getattr(self, k) < 1:
                raise ValueError(f"{k} must be >= 1")


# --- Algorithm pieces ----------------------------------------------------


def reward(P_next, P_now, alpha=1.0):
    return alpha if P_next > P_now else 0.0


def epsilon(n_e, cfg: TrainingConfig):
    if n_e < 0:
        raise ValueError("episode index must be non-negative")
    return cfg.eps_min + (cfg.eps_max - cfg.eps_min) * math.exp(-cfg.decay * n_e)


def learning_rate(n_e, cfg: TrainingConfig):
    if cfg.lr_final is None or cfg.episodes < 2:
        return cfg.learning_rate
    frac = min(n_e / (cfg.episodes - 1), 1.0)
    return cfg.learning_rate * (cfg.lr_final / cfg.learning_rate) ** frac


def select_action(q_values, eps, rng, mask=None):
    """Epsilon-greedy choice among unmasked actions; ties go to the lowest index."""
    q = np.asarray(q_values, dtype=float)
    allowed = np.ones(q.size, bool) if mask is None else np.asarray(mask, bool)
    idx = np.flatnonzero(allowed)
    if idx.size == 0:
        raise ValueError("all actions are masked")
    if eps > 0.0 and rng.random() < eps:
        return int(idx[rng.integers(idx.size)])
    return int(idx[np.argmax(q[idx])])


def td_target(r, q_next_target, gamma, terminal=False):
    if terminal:
        return float(r)
    return float(r + gamma * np.max(q_next_target))


class ReplayBuffer:
    """Fixed-capacity FIFO of encoded transitions with uniform sampling."""

    def __init__(self, capacity, state_dim, n_actions):
        self.capacity = int(capacity)
        self.s = np.empty((self.capacity, state_dim))
        self.a = np.empty(self.capacity, dtype=int)
        self.r = np.empty(self.capacity)
        self.s_next = np.empty((self.capacity, state_dim))
        self.mask_next = np.empty((self.capacity, n_actions), dtype=bool)
        self.terminal = np.empty(self.capacity, dtype=bool)
        self._next = 0
        self._size = 0
        self.inserted = 0

    def __len__(self):
        return self._size

    def add(self, s, a, r, s_next, mask_next, terminal):
        i = self._next
        self.s[i], self.a[i], self.r[i] = s, a, r
        self.s_next[i], self.mask_next[i], self.terminal[i] = s_next, mask_next, terminal
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.inserted += 1

    def sample_indices(self, m, rng):
        if m > self._size:
            raise ValueError(f"cannot sample {m} from {self._size} transitions")
        if m * 4 < self._size:
            picked = set()
            while len(picked) < m:
                picked.update(rng.integers(self._size, size=m - len(picked)).tolist())
            return np.fromiter(sorted(picked), dtype=int, count=m)
        return rng.choice(self._size, size=m, replace=False)

    def sample(self, m, rng):
        i = self.sample_indices(m, rng)
        return self.s[i], self.a[i], self.r[i], self.s_next[i], self.mask_next[i], self.terminal[i]


# --- environment ----------------------------------------------------------


@dataclass(frozen=True)
class PlannerState:
    z: float
    v_local: np.ndarray  # speed reached by each action; masked actions repeat v(z)
    t_norm: float


class PlannerEnv:
    """Depth-waypoint MDP over one current field (or GP forecast)."""

    def __init__(self, source, cfg: TrainingConfig, power=PowerParams(), t0=0.0):
        self.source = source
        self.cfg = cfg
        self.power = power
        self.t0 = t0
        self.actions = np.array(cfg.actions)
        self.hold = int(np.flatnonzero(self.actions == 0.0)[0]) if 0.0 in cfg.actions else None

    def time(self, k):
        return self.t0 + k * self.power.T_p

    def mask(self, z):
        zn = z + self.actions
        return (zn >= self.cfg.z_min - 1e-9) & (zn <= self.cfg.z_max + 1e-9)

    def state(self, z, k):
        t = self.time(k)
        mask = self.mask(z)
        v0 = self.source.speed(z, t)
        v = np.array([self.source.speed(z + a, t) if ok and a != 0 else v0
                      for a, ok in zip(self.actions, mask)])
        return PlannerState(z, v, min(max(k / self.cfg.horizon, 0.0), 1.0))

    def encode(self, s: PlannerState):
        i0 = self.hold if self.hold is not None else len(self.actions) // 2
        v0 = s.v_local[i0]
        diffs = [s.v_local[i] - v0 for i in range(len(self.actions)) if i != self.hold]
        # discount-to-go lets a small net represent the finite-horizon tail
        togo = self.cfg.gamma ** round(self.cfg.horizon * (1.0 - s.t_norm))
        return np.array([s.z, v0, *diffs, s.t_norm, togo])

    @property
    def state_dim(self):
        return 4 + len(self.actions) - (self.hold is not None)

    def action_powers(self, z, k):
        """Net power of every admissible action at step ``k`` (NaN if masked)."""
        t = self.time(k)
        mask = self.mask(z)
        return np.array([
            net_power(z, z + a, self.source, t, self.power).P_net if ok else np.nan
            for a, ok in zip(self.actions, mask)
        ])

    def reward_for(self, z, k, a_idx, powers=None):
        P = self.action_powers(z, k) if powers is None else powers
        alpha = self.cfg.alpha
        if self.hold is None:
            return reward(P[a_idx], P[len(P) // 2], alpha)
        P_hold = P[self.hold]
        if a_idx != self.hold:
            return reward(P[a_idx], P_hold, alpha)
        moves = [P[i] for i in range(len(P)) if i != self.hold and np.isfinite(P[i])]
        if not moves:
            return alpha
        return alpha - reward(max(moves), P_hold, alpha)

    def step(self, z, k, a_idx):
        if not self.mask(z)[a_idx]:
            raise ValueError(f"action {self.actions[a_idx]} leaves the depth band from z={z}")
        return self.reward_for(z, k, a_idx), z + self.actions[a_idx]

    def grid_depths(self):
        step = min(abs(a) for a in self.actions if a != 0) if len(self.actions) > 1 else 1.0
        n = int(round((self.cfg.z_max - self.cfg.z_min) / step))
        return self.cfg.z_min + step * np.arange(n + 1)


# --- training -------------------------------------------------------------


@dataclass
class TrainingLog:
    returns: list = field(default_factory=list)
    losses: list = field(default_factory=list)
    epsilons: list = field(default_factory=list)


@dataclass
class Planner:
    """Trained network plus everything needed to run it."""

    net: QNetwork
    cfg: TrainingConfig
    power: PowerParams = field(default_factory=PowerParams)

    def env(self, source, t0=0.0):
        return PlannerEnv(source, self.cfg, self.power, t0)

    def to_dict(self):
        cfg = asdict(self.cfg)
        cfg["actions"] = list(self.cfg.actions)
        return {"network": self.net.to_dict(), "training": cfg,
                "actions": list(self.cfg.actions), "power": asdict(self.power)}

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def from_dict(cls, data):
        return cls(QNetwork.from_dict(data["network"]), TrainingConfig(**data["training"]),
                   PowerParams(**data["power"]))

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def _draw(sampler, rng):
    source = sampler(rng)
    if source is None:
        raise ValueError("environment sampler returned no field")
    return source


def _feature_stats(sampler, cfg, power, rng, n_fields=4):
    feats = []
    for _ in range(n_fields):
        env = PlannerEnv(_draw(sampler, rng), cfg, power)
        for z in env.grid_depths():
            for k in np.linspace(0, cfg.horizon, 13):
                feats.append(env.encode(env.state(z, int(k))))
    F = np.array(feats)
    std = F.std(axis=0)
    return F.mean(axis=0), np.where(std > 1e-9, std, 1.0)


def train(sampler, cfg: TrainingConfig = TrainingConfig(), power=PowerParams(), start=None):
    """Offline deep Q-learning over episodes drawn from ``sampler``.

    ``sampler(rng)`` returns a speed source for one episode.  ``start`` fixes
    the initial depth; by default each episode starts at a random grid depth.
    Returns ``(planner, log)``; bit-reproducible for a given ``cfg.seed``.
    """
    rng = np.random.default_rng(cfg.seed)
    probe = PlannerEnv(sampler(rng), cfg, power)
    n_act = len(cfg.actions)
    mean, std = _feature_stats(sampler, cfg, power, rng)
    net = QNetwork([probe.state_dim, cfg.hidden, cfg.hidden, n_act], rng, mean, std)
    target = net.copy()
    buf = ReplayBuffer(min(cfg.buffer_capacity, cfg.episodes * cfg.horizon), probe.state_dim, n_act)
    starts = probe.grid_depths()
    history = TrainingLog()
    steps = 0
    for ep in range(cfg.episodes):
        env = PlannerEnv(_draw(sampler, rng), cfg, power)
        eps = epsilon(ep, cfg)
        lr = learning_rate(ep, cfg)
        z = float(start) if start is not None else float(starts[rng.integers(starts.size)])
        k0 = int(rng.integers(cfg.horizon)) if cfg.exploring_starts else 0
        s = env.encode(env.state(z, k0))
        ep_return, ep_losses = 0.0, []
        for k in range(k0, cfg.horizon):
            mask = env.mask(z)
            a = select_action(net(s)[0], eps, rng, mask)
            r, z = env.step(z, k, a)
            terminal = k == cfg.horizon - 1
            s_next = env.encode(env.state(z, k + 1))
            buf.add(s, a, r, s_next, env.mask(z), terminal)
            ep_return += r
            s = s_next
            if len(buf) >= cfg.batch_size:
                bs, ba, br, bn, bm, bt = buf.sample(cfg.batch_size, rng)
                qn = np.where(bm, target(bn), -np.inf).max(axis=1)
                t = np.where(bt, br, br + cfg.gamma * qn)
                ep_losses.append(sgd_step(net, bs, ba, t, lr))
            steps += 1
            if steps % cfg.target_sync == 0:
                target.sync_from(net)
        history.returns.append(ep_return)
        history.losses.append(float(np.mean(ep_losses)) if ep_losses else float("nan"))
        history.epsilons.append(eps)
    if not net.is_finite():
        raise TrainingDivergence("network weights became non-finite")
    return Planner(net, cfg, power), history


# --- online planning --------------------------------------------------------


def greedy_action(planner: Planner, env: PlannerEnv, z, k):
    q = planner.net(env.encode(env.state(z, k)))[0]
    return select_action(q, 0.0, None, env.mask(z))


def plan_path(planner: Planner, source, z0, horizon, t0=0.0, k0=0):
    """Greedy waypoint rollout of ``horizon`` planning steps from ``z0``.

    ``source`` is a current field or a fitted GP (its posterior mean is the
    forecast).  Returns the absolute depths reached after each step.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if not planner.net.is_finite():
        raise ValueError("planner network has non-finite weights")
    env = planner.env(source, t0)
    z = float(z0)
    waypoints = []
    for k in range(k0, k0 + horizon):
        a = greedy_action(planner, env, z, k)
        z = z + env.actions[a]
        waypoints.append(z)
    return np.array(waypoints)
