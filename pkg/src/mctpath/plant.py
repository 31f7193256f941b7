"""Linear plant model of the moored marine current turbine.

States are deviations from the equilibrium point, ordered::

    [u v w p_b p_r q r x y z phi theta psi]

and inputs are deviations of ``[B_f B_a tau_em]`` (forward/aft tank fill
fraction, shaft torque in N m).  The published linearization only exposes
its spectrum, so :func:`build_reference_model` synthesizes a concrete,
controllable ``(A, B)`` pair carrying exactly that spectrum.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import expm

log = logging.getLogger(__name__)

STATE_NAMES = ("u", "v", "w", "p_b", "p_r", "q", "r", "x", "y", "z", "phi", "theta", "psi")
INPUT_NAMES = ("B_f", "B_a", "tau_em")
N_STATES = 13
N_INPUTS = 3

U, V, W, P_B, P_R, Q, R, X, Y, Z, PHI, THETA, PSI = range(N_STATES)
B_F, B_A, TAU_EM = range(N_INPUTS)

DEFAULT_X_EQ = (0.0, 0.0, 0.0, 0.0, 1.49, 0.0, 0.0, 554.50, 0.38, 50.0, 0.01, 0.00, 3.14)
DEFAULT_U_EQ = (0.4677, 0.4677, -188280.0)

# Published spectrum of the linearized turbine (rad/s).
PUBLISHED_PAIRS = (
    (-0.2731, 1.2585),
    (-0.2588, 0.9618),
    (-0.2647, 0.3564),
    (-0.1754, 0.3793),
    (-0.1121, 0.1549),
    (-0.0033, 0.0021),
)
PUBLISHED_REAL = -0.0483

# (position, velocity) state pair driven by each complex pair, in order.
_PAIR_STATES = ((PHI, P_B), (THETA, Q), (Z, W), (PSI, R), (Y, V), (X, U))
_REAL_STATE = P_R


class ModelError(ValueError):
    """Malformed or inconsistent plant model."""


class NyquistError(ValueError):
    """Sampling time too coarse for the fastest plant mode."""


class SaturationError(ValueError):
    """Control input outside the actuator saturation box."""


@dataclass(frozen=True)
class EquilibriumPoint:
    x_eq: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_X_EQ))
    u_eq: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_U_EQ))

    def __post_init__(self):
        object.__setattr__(self, "x_eq", np.asarray(self.x_eq, dtype=float))
        object.__setattr__(self, "u_eq", np.asarray(self.u_eq, dtype=float))


@dataclass(frozen=True)
class InputBounds:
    """Box on the input deviation, ``lower <= u <= upper``."""

    lower: np.ndarray
    upper: np.ndarray

    def contains(self, u, tol=1e-9):
        u = np.asarray(u, dtype=float)
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))


def actuator_bounds(equilibrium=None, fill_limit=0.5, torque_fraction=0.2):
    """Saturation box on ``[B_f, B_a, tau_em]`` deviations.

    Tank deviations are limited to ``fill_limit`` and additionally kept inside
    the physical [0, 1] fill range; torque deviation is limited to
    ``torque_fraction * |tau_eq|``.
    """
    eq = equilibrium or EquilibriumPoint()
    u_eq = eq.u_eq
    lo = np.empty(N_INPUTS)
    hi = np.empty(N_INPUTS)
    for i in (B_F, B_A):
        lo[i] = max(-fill_limit, -u_eq[i])
        hi[i] = min(fill_limit, 1.0 - u_eq[i])
    tau = torque_fraction * abs(u_eq[TAU_EM])
    lo[TAU_EM], hi[TAU_EM] = -tau, tau
    return InputBounds(lo, hi)


@dataclass(frozen=True)
class ContinuousLinearModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    equilibrium: EquilibriumPoint = field(default_factory=EquilibriumPoint)

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    def eigenvalues(self):
        return np.linalg.eigvals(self.A)

    def max_natural_frequency(self):
        return float(np.max(np.abs(self.eigenvalues())))

    def nyquist_limit(self):
        """Largest admissible sampling time, ``pi / omega_max``."""
        w = self.max_natural_frequency()
        return math.inf if w == 0.0 else math.pi / w


@dataclass(frozen=True)
class DiscreteLinearModel:
    A_d: np.ndarray
    B_d: np.ndarray
    C_d: np.ndarray
    T_s: float
    equilibrium: EquilibriumPoint = field(default_factory=EquilibriumPoint)
    input_bounds: InputBounds | None = None

    @property
    def n_states(self):
        return self.A_d.shape[0]

    @property
    def n_inputs(self):
        return self.B_d.shape[1]

    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.A_d))))


@dataclass
class PlantConfig:
    """Spectrum and input-coupling gains of the synthesized plant.

    ``depth_gain`` is the steady depth change (m) per unit fill deviation
    applied to both tanks together; ``pitch_gain`` the steady pitch (rad)
    per unit of ``B_f - B_a``; ``rotor_gain`` the steady rotor-speed change
    (rad/s) per N m of torque.
    """

    pairs: list = field(default_factory=lambda: [list(p) for p in PUBLISHED_PAIRS])
    real: float = PUBLISHED_REAL
    depth_gain: float = 3400.0
    pitch_gain: float = 2.0
    rotor_gain: float = 8.0e-6
    roll_inertia: float = 1.35e7
    surge_fill_gain: float = 0.01
    yaw_fill_gain: float = 0.05
    sway_torque_gain: float = 1.0e-9
    pitch_depth_coupling: float = 0.0015
    surge_depth_coupling: float = 0.8


def controllability_matrix(A, B):
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def is_controllable(A, B, rtol=1e-10):
    """PBH rank test, ``rank [lambda I - A, B] = n`` at every eigenvalue.

    Input columns are normalized first; the Krylov matrix itself is far too
    ill-conditioned for a floating-point rank when modes span three decades.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    norms = np.linalg.norm(B, axis=0)
    if np.any(norms == 0.0):
        return False
    Bn = B / norms
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        M = np.hstack([lam * np.eye(n) - A, Bn])
        s = np.linalg.svd(M, compute_uv=False)
        if s[-1] <= rtol * s[0]:
            return False
    return True


def _real_block_form(pairs, real):
    n = 2 * len(pairs) + 1
    L = np.zeros((n, n))
    for k, (a, b) in enumerate(pairs):
        i = 2 * k
        L[i : i + 2, i : i + 2] = [[a, b], [-b, a]]
    L[-1, -1] = real
    return L


def similarity_transform(cfg: PlantConfig):
    """Fixed transform ``T`` with ``A = T L T^-1`` from the real block form.

    Each rotation block ``[[a, b], [-b, a]]`` is mapped to a (position,
    velocity) pair with ``S = [[1, 0], [a, b]]``, which turns it into the
    companion form ``pos' = vel``, ``vel' = -|lambda|^2 pos + 2a vel``.  The
    pairs are then placed on their physical slots and mixed by ``I + E``:
    pitch follows depth and surge follows depth.  ``E`` only writes rows
    that it never reads, so ``(I + E)^-1 = I - E`` and the heave/depth rows
    of ``A`` stay uncoupled from everything downstream.
    """
    n = N_STATES
    P = np.zeros((n, n))  # modal coordinate -> physical slot
    for k, ((a, b), (pos, vel)) in enumerate(zip(cfg.pairs, _PAIR_STATES)):
        i = 2 * k
        P[pos, i] = 1.0
        P[vel, i] = a
        P[vel, i + 1] = b
    P[_REAL_STATE, n - 1] = 1.0

    E = np.zeros((n, n))
    E[THETA, Z] = E[Q, W] = cfg.pitch_depth_coupling
    E[X, Z] = E[U, W] = cfg.surge_depth_coupling
    return (np.eye(n) + E) @ P


def _check_spectrum(cfg: PlantConfig):
    if len(cfg.pairs) != len(_PAIR_STATES):
        raise ModelError(f"expected {len(_PAIR_STATES)} complex pairs, got {len(cfg.pairs)}")
    eig = []
    for a, b in cfg.pairs:
        if not (np.isfinite(a) and np.isfinite(b)) or b <= 0.0:
            raise ModelError(f"complex pair ({a}, {b}) needs a finite, positive imaginary part")
        eig += [complex(a, b), complex(a, -b)]
    eig.append(complex(cfg.real, 0.0))
    eig = np.array(eig)
    gaps = np.abs(eig[:, None] - eig[None, :]) + np.eye(len(eig))
    if np.min(gaps) < 1e-9:
        raise ModelError("repeated eigenvalues break the block structure")


def build_reference_model(cfg: PlantConfig | None = None, equilibrium=None):
    """Continuous 13-state model carrying the configured spectrum."""
    cfg = cfg or PlantConfig()
    _check_spectrum(cfg)
    L = _real_block_form(cfg.pairs, cfg.real)
    T = similarity_transform(cfg)
    A = T @ L @ np.linalg.inv(T)

    heave = cfg.pairs[_PAIR_STATES.index((Z, W))]
    pitch = cfg.pairs[_PAIR_STATES.index((THETA, Q))]
    w2_heave = heave[0] ** 2 + heave[1] ** 2
    w2_pitch = pitch[0] ** 2 + pitch[1] ** 2

    B = np.zeros((N_STATES, N_INPUTS))
    # symmetric fill drives heave; z_ss = depth_gain * (B_f + B_a) / 2
    B[W, B_F] = B[W, B_A] = 0.5 * cfg.depth_gain * w2_heave
    B[Q, B_F] = cfg.pitch_gain * w2_pitch
    B[Q, B_A] = -cfg.pitch_gain * w2_pitch
    B[U, B_F] = B[U, B_A] = cfg.surge_fill_gain
    B[R, B_F] = cfg.yaw_fill_gain
    B[R, B_A] = -cfg.yaw_fill_gain
    B[P_R, TAU_EM] = cfg.rotor_gain * abs(cfg.real)
    B[P_B, TAU_EM] = 1.0 / cfg.roll_inertia
    B[V, TAU_EM] = cfg.sway_torque_gain

    C = np.zeros((1, N_STATES))
    C[0, Z] = 1.0

    if not is_controllable(A, B):
        raise ModelError("input gains leave (A, B) uncontrollable")
    return ContinuousLinearModel(A, B, C, equilibrium or EquilibriumPoint())


def discretize(model: ContinuousLinearModel, T_s):
    """Zero-order-hold discretization via the augmented matrix exponential."""
    if not T_s > 0:
        raise ValueError(f"sampling time must be positive, got {T_s}")
    limit = model.nyquist_limit()
    if T_s >= limit:
        raise NyquistError(
            f"T_s={T_s} s violates the sampling limit pi/omega_max={limit:.4f} s"
        )
    n, m = model.n_states, model.n_inputs
    M = np.zeros((n + m, n + m))
    M[:n, :n] = model.A
    M[:n, n:] = model.B
    Phi = expm(M * T_s)
    bounds = actuator_bounds(model.equilibrium) if (n, m) == (N_STATES, N_INPUTS) else None
    return DiscreteLinearModel(
        A_d=Phi[:n, :n],
        B_d=Phi[:n, n:],
        C_d=np.array(model.C, dtype=float),
        T_s=float(T_s),
        equilibrium=model.equilibrium,
        input_bounds=bounds,
    )


def step(model: DiscreteLinearModel, x, u):
    """Advance the plant one sample: ``A_d x + B_d u``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    b = model.input_bounds
    if b is not None and not b.contains(u):
        bad = [
            f"{INPUT_NAMES[i]}={u[i]:.6g} not in [{b.lower[i]:.6g}, {b.upper[i]:.6g}]"
            for i in range(len(u))
            if not (b.lower[i] - 1e-9 <= u[i] <= b.upper[i] + 1e-9)
        ]
        raise SaturationError("input saturation violated: " + "; ".join(bad))
    return model.A_d @ x + model.B_d @ u


def output(model: DiscreteLinearModel, x):
    """Measured output (depth deviation for the reference plant)."""
    return model.C_d @ np.asarray(x, dtype=float)


def euler_rotation(phi, theta, psi):
    """Rotation from the inertial frame to the body frame (yaw-pitch-roll)."""
    sf, cf = math.sin(phi), math.cos(phi)
    st, ct = math.sin(theta), math.cos(theta)
    sp, cp = math.sin(psi), math.cos(psi)
    return np.array(
        [
            [cp * ct, sp * ct, -st],
            [cp * st * sf - sp * cf, cp * cf + sp * st * sf, ct * sf],
            [cp * st * cf + sp * sf, -cp * sf + sp * st * cf, ct * cf],
        ]
    )


# --- serialization -------------------------------------------------------


def model_to_dict(model: ContinuousLinearModel):
    return {
        "A": model.A.tolist(),
        "B": model.B.tolist(),
        "C": model.C.tolist(),
        "x_eq": model.equilibrium.x_eq.tolist(),
        "u_eq": model.equilibrium.u_eq.tolist(),
    }


def save_model(model: ContinuousLinearModel, path):
    Path(path).write_text(json.dumps(model_to_dict(model), indent=1))


def _matrix(data, key, shape):
    try:
        arr = np.array(data[key], dtype=float)
    except KeyError:
        raise ModelError(f"missing key {key!r}") from None
    except (TypeError, ValueError) as exc:
        raise ModelError(f"{key}: not a numeric array ({exc})") from None
    if arr.shape != shape:
        raise ModelError(f"{key}: expected shape {shape}, got {arr.shape}")
    bad = np.argwhere(~np.isfinite(arr))
    if len(bad):
        cell = "".join(f"[{int(i)}]" for i in bad[0])
        raise ModelError(f"non-finite entry at {key}{cell}")
    return arr


def model_from_dict(data):
    n, m = N_STATES, N_INPUTS
    A = _matrix(data, "A", (n, n))
    B = _matrix(data, "B", (n, m))
    C = _matrix(data, "C", (1, n))
    x_eq = _matrix(data, "x_eq", (n,))
    u_eq = _matrix(data, "u_eq", (m,))
    model = ContinuousLinearModel(A, B, C, EquilibriumPoint(x_eq, u_eq))
    if np.max(model.eigenvalues().real) >= 0.0:
        log.warning("loaded model has a non-Hurwitz state matrix")
    return model


def load_model(path):
    """Read a plant model from its JSON file."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelError(f"{path}: invalid JSON ({exc})") from None
    return model_from_dict(data)
