"""Shared team reward: speed keeping, collision penalty, exit approach.

Evaluated on the post-step world together with the step's events:

* speed term: mean of v / v_max over CAVs still active (0 when none remain);
* collision term: minus the number of colliding pairs this step;
* intention term: for each active CAV on the rightmost lane within
  ``APPROACH_ZONE_M`` ahead of its own target ramp, ``1 - distance / zone``.
"""
from __future__ import annotations

from dataclasses import dataclass

from ramplab.config import RewardWeights, ScenarioConfig
from ramplab.simulation import StepEvents, WorldState, target_ramp_x

APPROACH_ZONE_M = 50.0


@dataclass(frozen=True)
class RewardBreakdown:
    speed: float
    collision: float
    intention: float
    total: float


def compute_reward(
    world: WorldState,
    events: StepEvents,
    weights: RewardWeights,
    config: ScenarioConfig,
) -> RewardBreakdown:
    """Weighted team reward for the step that produced ``events`` and left
    the world in state ``world``."""
    active_cavs = [world.vehicle(vid) for vid in world.active_cav_ids()]
    if active_cavs:
        r_speed = sum(veh.v / config.v_max for veh in active_cavs) / len(active_cavs)
    else:
        r_speed = 0.0

    r_collision = -float(len(events.collisions))

    r_intention = 0.0
    for veh in active_cavs:
        if veh.lane != config.n_lanes:
            continue
        ramp_x = target_ramp_x(veh.kind, config)
        distance = ramp_x - veh.x
        if 0.0 <= distance <= APPROACH_ZONE_M:
            r_intention += 1.0 - distance / APPROACH_ZONE_M

    total = weights.w1 * r_speed + weights.w2 * r_collision + weights.w3 * r_intention
    return RewardBreakdown(r_speed, r_collision, r_intention, total)
