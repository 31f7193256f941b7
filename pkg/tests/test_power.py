import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from mctpath.ocean import CurrentField
from mctpath.power import (
    PowerBreakdown,
    PowerParams,
    change_depth_power,
    generated_power,
    hold_depth_power,
    net_power,
)

P = PowerParams()
speeds = st.floats(0.0, 5.0)
depths = st.floats(30.0, 90.0)


def test_defaults():
    assert (P.rho, P.rotor_area, P.c_p, P.zeta1, P.zeta2, P.T_p) == (
        1030.0, 100.0 * math.pi, 0.415, 9.113, -0.0365, 300.0)


@pytest.mark.parametrize("kw", [{"rho": 0}, {"rotor_area": -1}, {"c_p": 0.6}, {"c_p": 0}, {"T_p": 0}])
def test_param_invariants(kw):
    with pytest.raises(ValueError):
        PowerParams(**kw)


def test_generated_power_values():
    assert generated_power(0.0) == 0.0
    hand = 0.5 * 1030 * 100 * math.pi * 0.415 * 1.6**3
    assert generated_power(1.6) == pytest.approx(hand, rel=1e-15)
    assert abs(generated_power(1.6) - 2.7502e5) < 1.0


@given(speeds)
def test_generated_power_cubic(v):
    assert generated_power(2 * v) == pytest.approx(8 * generated_power(v), rel=1e-12, abs=1e-9)


def test_generated_power_rejects_negative():
    with pytest.raises(ValueError):
        generated_power(-0.1)


def test_hold_depth_cases():
    assert hold_depth_power(1.6, 1.5) == 0.0
    assert hold_depth_power(1.3, 1.5) == pytest.approx(9.113 * 0.2 / 300)
    assert round(hold_depth_power(1.3, 1.5), 7) == 6.0753e-3
    assert hold_depth_power(1.5, 1.5) == 0.0


def test_change_depth_cases():
    assert change_depth_power(50.0, 55.0) == 0.0
    assert change_depth_power(55.0, 50.0) == pytest.approx(0.0365 * 5 / 300)
    assert round(change_depth_power(55.0, 50.0), 8) == 6.0833e-4
    assert change_depth_power(50.0, 50.0) == 0.0


def test_dt_override_rescales():
    assert hold_depth_power(1.0, 1.2, dt=2.0) == pytest.approx(9.113 * 0.2 / 2.0)
    assert change_depth_power(52.0, 50.0, dt=2.0) == pytest.approx(0.0365 * 2 / 2.0)


@given(speeds, speeds, depths, depths)
def test_consumption_non_negative(v0, v1, z0, z1):
    assert hold_depth_power(v0, v1) >= 0.0
    assert change_depth_power(z0, z1) >= 0.0


FIELD = CurrentField([40.0, 45.0, 50.0, 55.0, 60.0], [0.0, 1.0],
                     [[1.8, 1.8], [1.7, 1.7], [1.6, 1.6], [1.5, 1.5], [1.4, 1.4]])


def test_net_stationary():
    pb = net_power(50.0, 50.0, FIELD, 0.0)
    assert pb.P_HD == 0.0 and pb.P_CD == 0.0
    assert pb.P_net == pb.P_G == pytest.approx(2.7502e5, abs=1.0)


def test_net_ascend_into_faster_water():
    pb = net_power(50.0, 45.0, FIELD, 0.0)
    assert pb.P_HD > 0 and pb.P_CD > 0
    assert pb.P_G == generated_power(1.7)
    assert pb.P_net == pb.P_G - pb.P_HD - pb.P_CD


def test_net_descend_into_slower_water():
    pb = net_power(50.0, 55.0, FIELD, 0.0)
    assert pb.P_HD == 0.0 and pb.P_CD == 0.0
    assert pb.P_net == generated_power(1.5)


@given(st.floats(40.0, 60.0), st.floats(40.0, 60.0))
def test_breakdown_identity(z0, z1):
    pb = net_power(z0, z1, FIELD, 0.5)
    assert pb.P_net == pb.P_G - pb.P_HD - pb.P_CD
    assert min(pb.P_G, pb.P_HD, pb.P_CD) >= 0.0


def test_net_power_continuous_in_destination():
    a = net_power(50.0, 52.0, FIELD, 0.0).P_net
    b = net_power(50.0, 52.0 + 1e-9, FIELD, 0.0).P_net
    assert abs(a - b) < 1e-3


def test_net_power_outside_field():
    with pytest.raises(ValueError):
        net_power(50.0, 65.0, FIELD, 0.0)


def test_breakdown_is_plain_record():
    assert PowerBreakdown(3.0, 1.0, 0.5).P_net == 1.5
