"""Intelligent-driver car-following controller.

Acceleration of a follower at speed ``v`` behind a leader at speed
``v_leader`` with net (bumper-to-bumper) gap ``gap``:

    a = a_max * (1 - (v / v0)**delta - (s_star / gap)**2)
    s_star = s0 + v * T + v * (v - v_leader) / (2 * sqrt(a_max * b_comf))

``s_star`` is used as written, including when the closing-speed term drives it
negative; a free road is signalled with ``gap = math.inf`` which drops the
interaction term entirely.
"""
from __future__ import annotations

import math

from ramplab.config import IdmParams


def idm_acceleration(v: float, gap: float, v_leader: float, params: IdmParams) -> float:
    """Follower acceleration in m/s^2.

    Parameters
    ----------
    v : float
        Follower speed, m/s (>= 0).
    gap : float
        Net gap to the leader, m.  Must be positive; ``math.inf`` means no
        leader.  Callers must resolve non-positive gaps (i.e. contact) before
        asking for an acceleration.
    v_leader : float
        Leader speed, m/s.  Ignored when ``gap`` is infinite.
    """
    free = 1.0 - (v / params.v0) ** params.delta
    if math.isinf(gap):
        return params.a_max * free
    if gap <= 0.0:
        raise ValueError(f"gap must be positive or inf, got {gap}")
    s_star = params.s0 + v * params.T_headway + v * (v - v_leader) / (
        2.0 * math.sqrt(params.a_max * params.b_comf)
    )
    return params.a_max * (free - (s_star / gap) ** 2)


def equilibrium_gap(v: float, params: IdmParams) -> float:
    """Net gap at which a follower matching its leader's speed holds zero
    acceleration: s0 + v*T scaled up by the free-road headroom.

    Only defined below the desired speed; at or above ``v0`` there is no
    finite equilibrium.
    """
    free = 1.0 - (v / params.v0) ** params.delta
    if free <= 0.0:
        raise ValueError(f"no finite equilibrium gap at v={v} >= v0={params.v0}")
    return (params.s0 + v * params.T_headway) / math.sqrt(free)
