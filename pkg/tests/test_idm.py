import math

import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq

from ramplab.config import IdmParams
from ramplab.idm import equilibrium_gap, idm_acceleration

PARAMS = IdmParams()


def test_free_road_from_standstill_is_max_accel():
    assert idm_acceleration(0.0, math.inf, 0.0, PARAMS) == pytest.approx(1.5)


def test_free_road_at_desired_speed_is_zero():
    assert idm_acceleration(25.0, math.inf, 0.0, PARAMS) == pytest.approx(0.0)


def test_free_road_formula():
    v = 15.0
    expected = PARAMS.a_max * (1.0 - (v / PARAMS.v0) ** 4)
    assert idm_acceleration(v, math.inf, 0.0, PARAMS) == pytest.approx(expected)


def test_tight_gap_brakes_hard():
    assert idm_acceleration(20.0, 3.0, 0.0, PARAMS) < -5.0


def test_closing_speed_term_can_go_negative():
    # follower much slower than leader: desired gap can be negative, and the
    # squared interaction term then pushes acceleration above free-road level
    v, v_leader, gap = 2.0, 24.0, 30.0
    s_star = PARAMS.s0 + v * PARAMS.T_headway + v * (v - v_leader) / (
        2.0 * math.sqrt(PARAMS.a_max * PARAMS.b_comf)
    )
    assert s_star < 0
    free = PARAMS.a_max * (1.0 - (v / PARAMS.v0) ** 4)
    assert idm_acceleration(v, gap, v_leader, PARAMS) == pytest.approx(
        free - PARAMS.a_max * (s_star / gap) ** 2
    )


def test_nonpositive_gap_rejected():
    with pytest.raises(ValueError):
        idm_acceleration(5.0, 0.0, 5.0, PARAMS)
    with pytest.raises(ValueError):
        idm_acceleration(5.0, -1.0, 5.0, PARAMS)


def test_equilibrium_gap_closed_form_at_20():
    # (s0 + v*T) / sqrt(1 - (v/v0)^4) at v=20
    expected = 22.0 / math.sqrt(1.0 - 0.8 ** 4)
    assert equilibrium_gap(20.0, PARAMS) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("v", [1.0, 5.0, 12.5, 20.0, 24.0])
def test_equilibrium_matches_root_finder(v):
    # independent oracle: root of the acceleration in the gap variable
    root = brentq(lambda gap: idm_acceleration(v, gap, v, PARAMS), 1e-3, 1e4, xtol=1e-12)
    assert equilibrium_gap(v, PARAMS) == pytest.approx(root, rel=1e-9)


def test_equilibrium_undefined_at_desired_speed():
    with pytest.raises(ValueError):
        equilibrium_gap(25.0, PARAMS)
    with pytest.raises(ValueError):
        equilibrium_gap(30.0, PARAMS)


@given(st.floats(min_value=0.0, max_value=24.5))
def test_acceleration_vanishes_at_equilibrium(v):
    gap = equilibrium_gap(v, PARAMS)
    assert abs(idm_acceleration(v, gap, v, PARAMS)) < 1e-9


@given(
    st.floats(min_value=0.0, max_value=24.0),
    st.floats(min_value=1.05, max_value=3.0),
)
def test_wider_than_equilibrium_gap_accelerates(v, factor):
    gap = equilibrium_gap(v, PARAMS)
    assert idm_acceleration(v, gap * factor, v, PARAMS) > 0.0
    assert idm_acceleration(v, gap / factor, v, PARAMS) < 0.0
