"""Receding-horizon depth tracking on the discrete plant.

Decision variables are the inputs ``[u(k) ... u(k+N_c-1)]``; inputs after
the control horizon are held at ``u(k+N_c-1)`` for the rest of the
prediction horizon.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .plant import DiscreteLinearModel, EquilibriumPoint, Z, actuator_bounds
from .qp import QPProblem, solve_qp

log = logging.getLogger(__name__)

TANK_SLEW_RATE = 7.45e-4  # as published, per second
SLEW_UNITS = {"percent": 1e-2, "fraction": 1.0}


@dataclass
class MPCWeights:
    Q_part: np.ndarray
    R_part: np.ndarray
    R_dpart: np.ndarray
    q_term: float = 1.0
    d: np.ndarray | None = None

    @classmethod
    def reference(cls, n_states=13, n_inputs=3, output_index=Z):
        Q = np.zeros((n_states, n_states))
        Q[output_index, output_index] = 1.0
        return cls(Q, np.zeros((n_inputs, n_inputs)), np.eye(n_inputs), 1.0)

    def __post_init__(self):
        for name in ("Q_part", "R_part", "R_dpart"):
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if not np.allclose(M, M.T):
                raise ValueError(f"{name} must be symmetric")
            if np.min(np.linalg.eigvalsh(M)) < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
            setattr(self, name, M)
        if self.q_term < 0:
            raise ValueError("q_term must be non-negative")
        if self.d is None:
            self.d = np.zeros(self.R_part.shape[0])
        self.d = np.asarray(self.d, dtype=float)


def _vec(v, m, fill):
    if v is None:
        return np.full(m, fill)
    return np.broadcast_to(np.asarray(v, dtype=float), (m,)).copy()


@dataclass
class MPCConstraints:
    u_min: np.ndarray
    u_max: np.ndarray
    du_min: np.ndarray
    du_max: np.ndarray
    y_min: float | None = None
    y_max: float | None = None

    def __post_init__(self):
        m = np.size(self.u_min)
        self.u_min = _vec(self.u_min, m, -np.inf)
        self.u_max = _vec(self.u_max, m, np.inf)
        self.du_min = _vec(self.du_min, m, -np.inf)
        self.du_max = _vec(self.du_max, m, np.inf)
        if np.any(self.u_min > self.u_max) or np.any(self.du_min > self.du_max):
            raise ValueError("constraint lower bound exceeds upper bound")
        if self.y_min is not None and self.y_max is not None and self.y_min > self.y_max:
            raise ValueError("y_min exceeds y_max")

    @classmethod
    def reference(cls, T_s, equilibrium=None, slew_units="percent", torque_fraction=0.2,
              y_min=None, y_max=None):
        """Actuator saturation plus per-step tank slew; torque slew is free."""
        b = actuator_bounds(equilibrium or EquilibriumPoint(), torque_fraction=torque_fraction)
        try:
            step = TANK_SLEW_RATE * SLEW_UNITS[slew_units] * T_s
        except KeyError:
            raise ValueError(f"slew_units must be one of {sorted(SLEW_UNITS)}") from None
        du = np.array([step, step, np.inf])
        return cls(b.lower, b.upper, -du, du, y_min, y_max)

    def violations(self, u, u_prev, tol=1e-9):
        """Number of box/slew bounds that ``u`` breaks, given ``u_prev``."""
        du = u - u_prev

        def over(val, lo, hi):
            scale = tol * np.maximum(1.0, np.abs(np.where(np.isfinite(hi), hi, 0.0)))
            return int(np.sum(val > hi + scale) + np.sum(val < lo - scale))

        return over(u, self.u_min, self.u_max) + over(du, self.du_min, self.du_max)


@dataclass
class MPCSolution:
    u_sequence: np.ndarray  # (N_c, m)
    x_pred: np.ndarray  # (N_t, n), states x(k+1) .. x(k+N_t)
    y_pred: np.ndarray  # (N_t,)
    kkt_residual: float
    iterations: int
    converged: bool
    objective: float

    @property
    def u(self):
        return self.u_sequence[0]


class Condenser:
    """Stacked prediction ``X = Phi x0 + Gamma w`` over the horizon."""

    def __init__(self, model: DiscreteLinearModel, N_t, N_c):
        if not 1 <= N_c <= N_t:
            raise ValueError(f"need 1 <= N_c <= N_t, got N_c={N_c}, N_t={N_t}")
        A, B = model.A_d, model.B_d
        n, m = A.shape[0], B.shape[1]
        self.n, self.m, self.N_t, self.N_c = n, m, N_t, N_c
        Phi = np.empty((N_t * n, n))
        Gamma = np.zeros((N_t * n, N_c * m))
        Ak = np.eye(n)
        for i in range(N_t):
            Ak = A @ Ak
            Phi[i * n : (i + 1) * n] = Ak
        # x_{i+1} = A x_i + B u_{min(i, N_c-1)}
        for i in range(N_t):
            rows = slice(i * n, (i + 1) * n)
            if i > 0:
                Gamma[rows] = A @ Gamma[(i - 1) * n : i * n]
            j = min(i, N_c - 1)
            Gamma[rows, j * m : (j + 1) * m] += B
        self.Phi, self.Gamma = Phi, Gamma
        self.C = np.atleast_2d(model.C_d)

    def predict(self, x0, w):
        return (self.Phi @ x0 + self.Gamma @ w).reshape(self.N_t, self.n)


class MPCTracker:
    """Condensed MPC with the horizon-invariant parts precomputed."""

    def __init__(self, model: DiscreteLinearModel, weights: MPCWeights,
                 constraints: MPCConstraints, N_t=40, N_c=20, tol=1e-8):
        self.model = model
        self.weights = weights
        self.constraints = constraints
        self.tol = tol
        cond = self.cond = Condenser(model, N_t, N_c)
        n, m = cond.n, cond.m
        C = cond.C
        if C.shape[0] != 1:
            raise ValueError("tracking needs a single output")
        C_pinv = np.linalg.pinv(C)

        Qbar = np.zeros((N_t * n, N_t * n))
        for i in range(N_t - 1):
            Qbar[i * n : (i + 1) * n, i * n : (i + 1) * n] = weights.Q_part
        Qbar[-n:, -n:] = weights.q_term * (C.T @ C)
        # state reference stack: x_ref_i = pinv(C) r_i
        Sref = np.zeros((N_t * n, N_t))
        for i in range(N_t):
            Sref[i * n : (i + 1) * n, i] = C_pinv[:, 0]

        Dm = np.eye(N_c * m) - np.eye(N_c * m, k=-m)  # move operator
        E = np.zeros((N_c * m, m))
        E[:m] = np.eye(m)
        Rd = np.kron(np.eye(N_c), weights.R_dpart)
        Rp = np.kron(np.eye(N_c), weights.R_part)

        GtQ = cond.Gamma.T @ Qbar
        H = GtQ @ cond.Gamma + Dm.T @ Rd @ Dm + Rp
        H = 0.5 * (H + H.T)
        lam_min = np.min(np.linalg.eigvalsh(H))
        if lam_min < 1e-9:
            log.info("regularizing MPC Hessian (min eigenvalue %.3g)", lam_min)
            H = H + 1e-9 * np.eye(H.shape[0])
        self.H = H
        self._f_x0 = GtQ @ cond.Phi
        self._f_ref = -GtQ @ Sref
        self._f_uprev = -Dm.T @ Rd @ E
        self._f_const = -Rp @ np.tile(weights.d, N_c)

        # constraint rows; h = h0 + Hu u_prev + Hx x0 (output rows only)
        c = constraints
        rows, h0, hu, hx = [], [], [], []
        I = np.eye(N_c * m)
        for sign, bound in ((1.0, c.u_max), (-1.0, c.u_min)):
            b = np.tile(bound, N_c)
            ok = np.isfinite(b)
            rows.append(sign * I[ok])
            h0.append(sign * b[ok])
            hu.append(np.zeros((ok.sum(), m)))
            hx.append(np.zeros((ok.sum(), n)))
        for sign, bound in ((1.0, c.du_max), (-1.0, c.du_min)):
            b = np.tile(bound, N_c)
            ok = np.isfinite(b)
            rows.append(sign * Dm[ok])
            h0.append(sign * b[ok])
            hu.append((sign * E)[ok])
            hx.append(np.zeros((ok.sum(), n)))
        CG = np.kron(np.eye(N_t), C) @ cond.Gamma
        CP = np.kron(np.eye(N_t), C) @ cond.Phi
        for sign, bound in ((1.0, c.y_max), (-1.0, c.y_min)):
            if bound is None:
                continue
            rows.append(sign * CG)
            h0.append(np.full(N_t, sign * bound))
            hu.append(np.zeros((N_t, m)))
            hx.append(-sign * CP)
        self.G = np.vstack(rows)
        self._h0 = np.concatenate(h0)
        self._hu = np.vstack(hu)
        self._hx = np.vstack(hx)

    @property
    def N_t(self):
        return self.cond.N_t

    @property
    def N_c(self):
        return self.cond.N_c

    def _window(self, reference):
        r = np.atleast_1d(np.asarray(reference, dtype=float))
        if r.size == 0:
            raise ValueError("empty reference window")
        if r.size > self.N_t:
            return r[: self.N_t]
        if r.size < self.N_t:
            r = np.concatenate([r, np.full(self.N_t - r.size, r[-1])])
        return r

    def build_qp(self, x0, u_prev, reference):
        x0 = np.asarray(x0, dtype=float)
        u_prev = np.asarray(u_prev, dtype=float)
        r = np.asarray(reference, dtype=float)
        if r.shape != (self.N_t,):
            raise ValueError(f"reference must have length N_t={self.N_t}, got {r.shape}")
        c = self.constraints
        lo = np.maximum(c.u_min, u_prev + c.du_min)
        hi = np.minimum(c.u_max, u_prev + c.du_max)
        if np.any(lo > hi):
            raise ValueError("infeasible bounds: slew range from u_prev misses the saturation box")
        f = self._f_x0 @ x0 + self._f_ref @ r + self._f_uprev @ u_prev + self._f_const
        h = self._h0 + self._hu @ u_prev + self._hx @ x0
        return QPProblem(self.H, f, self.G, h)

    def step(self, x0, u_prev, reference):
        """Solve one receding-horizon problem; apply only ``.u``."""
        qp = self.build_qp(x0, u_prev, self._window(reference))
        sol = solve_qp(qp, tol=self.tol)
        w = sol.w
        x_pred = self.cond.predict(np.asarray(x0, dtype=float), w)
        return MPCSolution(
            u_sequence=w.reshape(self.N_c, self.cond.m),
            x_pred=x_pred,
            y_pred=x_pred @ self.cond.C[0],
            kkt_residual=sol.kkt_residual,
            iterations=sol.iterations,
            converged=sol.converged,
            objective=sol.objective,
        )


def build_qp(model, x0, u_prev, reference, weights, constraints, N_t=40, N_c=20):
    """Condensed QP for one tracking step (see :class:`MPCTracker`)."""
    return MPCTracker(model, weights, constraints, N_t, N_c).build_qp(x0, u_prev, reference)


def mpc_step(model, x_k, u_prev, reference, weights, constraints, N_t=40, N_c=20, tol=1e-8):
    return MPCTracker(model, weights, constraints, N_t, N_c, tol).step(x_k, u_prev, reference)
