"""Generated and consumed power of the turbine."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class PowerParams:
    rho: float = 1030.0
    rotor_area: float = 100.0 * math.pi
    c_p: float = 0.415
    zeta1: float = 9.113
    zeta2: float = -0.0365
    T_p: float = 300.0

    def __post_init__(self):
        if not self.rho > 0 or not self.rotor_area > 0:
            raise ValueError("rho and rotor_area must be positive")
        if not 0.0 < self.c_p < 0.593:
            raise ValueError(f"c_p={self.c_p} outside (0, Betz limit)")
        if not self.T_p > 0:
            raise ValueError("T_p must be positive")
        if self.zeta1 < 0 or self.zeta2 > 0:
            raise ValueError("expected zeta1 >= 0 and zeta2 <= 0")


@dataclass(frozen=True)
class PowerBreakdown:
    P_G: float
    P_HD: float
    P_CD: float

    @property
    def P_net(self):
        return self.P_G - self.P_HD - self.P_CD


def generated_power(v_c, params=PowerParams()):
    if v_c < 0:
        raise ValueError(f"negative current speed {v_c}")
    return 0.5 * params.rho * params.rotor_area * params.c_p * v_c**3


def hold_depth_power(v_now, v_next, params=PowerParams(), dt=None):
    """Pumping power spent holding depth after moving into faster water.

    ``dt`` overrides the planning step ``T_p`` as the time base.
    """
    dv = v_next - v_now
    if dv <= 0.0:
        return 0.0
    return params.zeta1 / (dt or params.T_p) * dv


def change_depth_power(z_now, z_next, params=PowerParams(), dt=None):
    """Pumping power spent ascending (``z`` is positive down)."""
    dz = z_next - z_now
    if dz >= 0.0:
        return 0.0
    return params.zeta2 / (dt or params.T_p) * dz


def net_power(z_now, z_next, speed, t, params=PowerParams(), dt=None):
    """Power breakdown for a move ``z_now -> z_next`` at time ``t``.

    ``speed`` is anything with a ``speed(z, t)`` method (a current field or a
    fitted GP).  Generation is evaluated at the destination depth.
    """
    v_now = speed.speed(z_now, t)
    v_next = v_now if z_next == z_now else speed.speed(z_next, t)
    return PowerBreakdown(
        P_G=generated_power(v_next, params),
        P_HD=hold_depth_power(v_now, v_next, params, dt),
        P_CD=change_depth_power(z_now, z_next, params, dt),
    )
