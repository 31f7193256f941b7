"""Primal-dual interior-point solver for convex QPs

    minimize    1/2 w'Hw + f'w
    subject to  G w <= h
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

log = logging.getLogger(__name__)


class InfeasibleQPError(RuntimeError):
    pass


@dataclass(frozen=True)
class QPProblem:
    H: np.ndarray
    f: np.ndarray
    G: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.H, dtype=float))
        f = np.asarray(self.f, dtype=float).ravel()
        n = f.size
        G = np.asarray(self.G, dtype=float).reshape(-1, n)
        h = np.asarray(self.h, dtype=float).ravel()
        if H.shape != (n, n):
            raise ValueError(f"H has shape {H.shape}, expected {(n, n)}")
        if G.shape[0] != h.size:
            raise ValueError(f"G has {G.shape[0]} rows but h has {h.size}")
        if not np.allclose(H, H.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(H).max())):
            raise ValueError("H is not symmetric")
        for name, val in (("H", H), ("f", f), ("G", G), ("h", h)):
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.f.size

    @property
    def m(self):
        return self.h.size

    def objective(self, w):
        return float(0.5 * w @ self.H @ w + self.f @ w)


@dataclass
class QPSolution:
    w: np.ndarray
    lam: np.ndarray
    iterations: int
    kkt_residual: float
    converged: bool
    objective: float


def kkt_residuals(qp: QPProblem, w, lam):
    """Normalized (stationarity, primal, dual, complementarity) residuals."""
    Hw = qp.H @ w
    Gl = qp.G.T @ lam
    stat = np.abs(Hw + qp.f + Gl).max(initial=0.0) / max(
        1.0, np.abs(Hw).max(initial=0.0), np.abs(qp.f).max(initial=0.0), np.abs(Gl).max(initial=0.0)
    )
    slack = qp.h - qp.G @ w
    prim = np.max(np.maximum(-slack, 0.0) / np.maximum(1.0, np.abs(qp.h)), initial=0.0)
    dual = np.max(np.maximum(-lam, 0.0), initial=0.0)
    obj = abs(0.5 * w @ Hw + qp.f @ w)
    comp = np.abs(lam * slack).max(initial=0.0) / max(1.0, obj)
    return float(stat), float(prim), float(dual), float(comp)


def kkt_residual(qp, w, lam):
    return max(kkt_residuals(qp, w, lam))


def _max_step(v, dv):
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return min(1.0, float(np.min(-v[neg] / dv[neg])))


def solve_qp(qp: QPProblem, tol=1e-8, max_iter=100, polish=3):
    """Mehrotra predictor-corrector on a diagonally equilibrated copy.

    Variables are scaled by ``1/sqrt(H_ii)`` and constraint rows to unit
    norm; residuals are always measured on the original problem.  Once the
    residual is below ``tol`` up to ``polish`` extra iterations run while it
    keeps shrinking, which tightens weakly active constraints.  Raises
    :class:`InfeasibleQPError` when the duals diverge; returns the best
    iterate with ``converged=False`` when the iteration cap is hit.
    """
    n, m = qp.n, qp.m
    d = np.diag(qp.H).copy()
    D = np.where(d > 0, 1.0 / np.sqrt(np.where(d > 0, d, 1.0)), 1.0)
    Hs = qp.H * D[:, None] * D[None, :]
    fs = qp.f * D
    Gs = qp.G * D[None, :]
    rn = np.linalg.norm(Gs, axis=1)
    zero = rn == 0.0
    if np.any(zero & (qp.h < 0)):
        raise InfeasibleQPError("constraint 0 <= h violated by an all-zero row")
    keep = ~zero
    Gs = Gs[keep] / rn[keep, None]
    hs = qp.h[keep] / rn[keep]
    mk = hs.size

    try:
        Hc = cho_factor(Hs)
    except LinAlgError:
        raise ValueError("H is not positive definite") from None
    ws = cho_solve(Hc, -fs)

    def unscale(ws_, ls_):
        lam = np.zeros(m)
        lam[keep] = ls_ / rn[keep]
        return ws_ * D, lam

    if mk == 0 or np.all(Gs @ ws <= hs + 1e-12 * (1.0 + np.abs(hs))):
        w, lam = unscale(ws, np.zeros(mk))
        return QPSolution(w, lam, 0, kkt_residual(qp, w, lam), True, qp.objective(w))

    s = np.maximum(hs - Gs @ ws, 1.0)
    lam_s = np.ones(mk)
    best = None
    extra = 0
    for it in range(1, max_iter + 1):
        w, lam = unscale(ws, lam_s)
        res = kkt_residual(qp, w, lam)
        improved = best is None or res < best[0]
        if improved:
            best = (res, w, lam, it - 1)
        if best[0] <= tol:
            if not improved or extra >= polish or best[0] <= 1e-6 * tol:
                res, w, lam, k = best
                return QPSolution(w, lam, k, res, True, qp.objective(w))
            extra += 1
        if np.max(lam_s) > 1e14:
            raise InfeasibleQPError("dual iterates diverge; constraints are infeasible")

        r_d = Hs @ ws + fs + Gs.T @ lam_s
        r_p = Gs @ ws + s - hs
        mu = s @ lam_s / mk
        Wd = lam_s / s
        try:
            Mc = cho_factor(Hs + Gs.T @ (Wd[:, None] * Gs))
        except LinAlgError:
            break

        def newton(r_c):
            rhs = -r_d - Gs.T @ ((lam_s * r_p - r_c) / s)
            dw = cho_solve(Mc, rhs)
            ds = -r_p - Gs @ dw
            dl = -(r_c + lam_s * ds) / s
            return dw, ds, dl

        dw, ds, dl = newton(s * lam_s)
        a_aff = min(_max_step(s, ds), _max_step(lam_s, dl))
        mu_aff = (s + a_aff * ds) @ (lam_s + a_aff * dl) / mk
        sigma = (mu_aff / mu) ** 3
        dw, ds, dl = newton(s * lam_s + ds * dl - sigma * mu)
        a = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(lam_s, dl)))
        ws = ws + a * dw
        s = s + a * ds
        lam_s = lam_s + a * dl

    w, lam = unscale(ws, lam_s)
    res = kkt_residual(qp, w, lam)
    if res < best[0]:
        best = (res, w, lam, max_iter)
    res, w, lam, it = best
    if res <= tol:
        return QPSolution(w, lam, it, res, True, qp.objective(w))
    if kkt_residuals(qp, w, lam)[1] > 1e-6:
        raise InfeasibleQPError("no feasible point found within the iteration cap")
    log.warning("QP not converged after %d iterations (residual %.3g)", max_iter, res)
    return QPSolution(w, lam, it, res, False, qp.objective(w))
