"""State encoders: speed-coded occupancy grids and the interaction graph.

Two grid families share one value coding (0 for empty, otherwise
``0.2 + 0.8 * v / v_max`` so even a stopped vehicle is visible):

* agent-centric: per CAV, a lanes x 51 window covering +-50 m around the ego
  at 2 m per cell, ego in the centre column;
* scene-centric: one shared lanes x (road_length / 2 m + 1) grid in absolute
  coordinates, with CAV cells negated to mark them.

The interaction graph couples every pair of active CAVs, and each active CAV
to active HDVs within a perception radius.  Node features are normalised
position and speed, lane, an intention code, and per-lane leader/follower
distances with 1.0 standing in for "no neighbour".
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ramplab.config import ScenarioConfig
from ramplab.simulation import KIND_CODE, VehicleKind, WorldState

CELL_M = 2.0
GRID_RADIUS_M = 50.0
AGENT_GRID_COLS = 51
AGENT_GRID_CENTER = 25
OCCUPANCY_FLOOR = 0.2
PERCEPTION_RADIUS_M = 50.0


def occupancy_value(v: float, v_max: float) -> float:
    return OCCUPANCY_FLOOR + (1.0 - OCCUPANCY_FLOOR) * (v / v_max)


def _round_half_away(z: float) -> int:
    return int(math.copysign(math.floor(abs(z) + 0.5), z))


def feature_width(config: ScenarioConfig) -> int:
    # position, speed, lane, intention, plus leader and follower per lane
    return 4 + 2 * config.n_lanes


def scene_grid_cols(config: ScenarioConfig) -> int:
    return _round_half_away(config.road_length / CELL_M) + 1


def grid_width(config: ScenarioConfig, representation: str) -> int:
    """Flattened per-CAV grid length for the given representation."""
    if representation == "agent_centric":
        return config.n_lanes * AGENT_GRID_COLS
    if representation == "scene_centric":
        return config.n_lanes * scene_grid_cols(config)
    raise ValueError(f"unknown representation {representation!r}")


def build_local_grid(world: WorldState, cav_id: int, config: ScenarioConfig) -> np.ndarray:
    """Ego-centred lanes x 51 occupancy grid for one CAV.

    Cells hold the speed code of the occupant; when two vehicles round into
    the same cell the one nearer the ego wins (lower id on exact ties).  An
    inactive ego sees an all-zero grid.
    """
    grid = np.zeros((config.n_lanes, AGENT_GRID_COLS))
    ego = world.vehicle(cav_id)
    if not ego.kind.is_cav:
        raise ValueError(f"vehicle {cav_id} is not a CAV")
    if not ego.active:
        return grid
    entries = []
    for veh in world.active_vehicles():
        dx = veh.x - ego.x
        if abs(dx) <= GRID_RADIUS_M:
            entries.append((abs(dx), veh.id, veh))
    # paint far to near so the nearest occupant of a cell wins
    entries.sort(reverse=True)
    for _, _, veh in entries:
        col = AGENT_GRID_CENTER + _round_half_away((veh.x - ego.x) / CELL_M)
        grid[veh.lane - 1, col] = occupancy_value(veh.v, config.v_max)
    return grid


def build_scene_grid(world: WorldState, config: ScenarioConfig) -> np.ndarray:
    """Absolute-coordinate lanes x cols grid shared by all CAVs.

    CAV cells carry negated speed codes.  When two vehicles round into the
    same cell the stronger (faster) code wins, lower id on exact ties.
    """
    cols = scene_grid_cols(config)
    grid = np.zeros((config.n_lanes, cols))
    entries = [
        (occupancy_value(veh.v, config.v_max), -veh.id, veh)
        for veh in world.active_vehicles()
    ]
    entries.sort()
    for value, _, veh in entries:
        col = min(max(_round_half_away(veh.x / CELL_M), 0), cols - 1)
        grid[veh.lane - 1, col] = -value if veh.kind.is_cav else value
    return grid


def build_scene_representation(world: WorldState, config: ScenarioConfig) -> np.ndarray:
    """Stacked flattened agent-centric grids, one row per CAV in id order.
    Rows of inactive CAVs are zero."""
    cav_ids = world.cav_ids()
    out = np.zeros((len(cav_ids), config.n_lanes * AGENT_GRID_COLS))
    for row, vid in enumerate(cav_ids):
        out[row] = build_local_grid(world, vid, config).reshape(-1)
    return out


def build_scene_centric_representation(world: WorldState, config: ScenarioConfig) -> np.ndarray:
    """The shared scene grid flattened and repeated per CAV row (zeros for
    inactive CAVs, which no longer observe anything)."""
    cav_ids = world.cav_ids()
    flat = build_scene_grid(world, config).reshape(-1)
    out = np.zeros((len(cav_ids), flat.size))
    for row, vid in enumerate(cav_ids):
        if world.vehicle(vid).active:
            out[row] = flat
    return out


def _nearest_in_lane(
    world: WorldState, x: float, lane: int, exclude: int, ahead: bool
) -> float | None:
    """Center-to-center distance to the nearest active vehicle ahead/behind."""
    best = None
    for veh in world.vehicles:
        if not veh.active or veh.lane != lane or veh.id == exclude:
            continue
        dx = veh.x - x if ahead else x - veh.x
        if dx > 0 and (best is None or dx < best):
            best = dx
    return best


def build_feature_matrix(world: WorldState, config: ScenarioConfig) -> np.ndarray:
    """Per-vehicle node features, one row per vehicle id; inactive rows zero.

    Columns: x / road_length, v / v_max, lane, intention code, then the
    normalised distance to the nearest leader in each lane and to the nearest
    follower in each lane (1.0 when there is none).
    """
    n = len(world.vehicles)
    out = np.zeros((n, feature_width(config)))
    for veh in world.vehicles:
        if not veh.active:
            continue
        row = [
            veh.x / config.road_length,
            veh.v / config.v_max,
            float(veh.lane),
            KIND_CODE[veh.kind],
        ]
        for ahead in (True, False):
            for lane in range(1, config.n_lanes + 1):
                dist = _nearest_in_lane(world, veh.x, lane, veh.id, ahead)
                row.append(1.0 if dist is None else dist / config.road_length)
        out[veh.id] = row
    return out


def build_adjacency(
    world: WorldState,
    config: ScenarioConfig,
    perception_radius: float = PERCEPTION_RADIUS_M,
) -> np.ndarray:
    """Symmetric 0/1 interaction matrix with self-loops on every vehicle.

    Active CAVs are fully connected to each other; an active CAV links to an
    active HDV within the perception radius.  Inactive vehicles keep only
    their self-loop.
    """
    n = len(world.vehicles)
    adj = np.eye(n)
    cavs = world.active_cav_ids()
    for i_pos, i in enumerate(cavs):
        for j in cavs[i_pos + 1:]:
            adj[i, j] = adj[j, i] = 1.0
        for j in world.active_hdv_ids():
            if abs(world.vehicle(i).x - world.vehicle(j).x) <= perception_radius:
                adj[i, j] = adj[j, i] = 1.0
    return adj


def build_mask(world: WorldState) -> np.ndarray:
    """1.0 on CAV rows, 0.0 on HDV rows (by kind, independent of activity,
    so shapes and masks stay constant across an episode)."""
    return np.array([1.0 if veh.kind.is_cav else 0.0 for veh in world.vehicles])


@dataclass
class StateSnapshot:
    """Everything the networks may consume about one world state, in float32.

    ``sr`` rows follow ``cav_ids`` order, ``features``/``adjacency``/``mask``
    rows follow vehicle id order.  ``alive`` flags which CAVs were active when
    the snapshot was taken.  Models that ignore the graph leave ``features``
    and/or ``adjacency`` unbuilt (None).
    """

    sr: np.ndarray
    features: np.ndarray | None
    adjacency: np.ndarray | None
    mask: np.ndarray
    cav_ids: tuple[int, ...]
    alive: np.ndarray

    @property
    def n_cavs(self) -> int:
        return len(self.cav_ids)


def build_state(
    world: WorldState,
    config: ScenarioConfig,
    representation: str,
    *,
    with_features: bool = True,
    with_adjacency: bool = True,
) -> StateSnapshot:
    """Snapshot the world into network inputs under the given representation."""
    if representation == "agent_centric":
        sr = build_scene_representation(world, config)
    elif representation == "scene_centric":
        sr = build_scene_centric_representation(world, config)
    else:
        raise ValueError(f"unknown representation {representation!r}")
    cav_ids = tuple(world.cav_ids())
    features = build_feature_matrix(world, config).astype(np.float32) if with_features else None
    adjacency = build_adjacency(world, config).astype(np.float32) if with_adjacency else None
    return StateSnapshot(
        sr=sr.astype(np.float32),
        features=features,
        adjacency=adjacency,
        mask=build_mask(world).astype(np.float32),
        cav_ids=cav_ids,
        alive=np.array([world.vehicle(vid).active for vid in cav_ids], dtype=bool),
    )


def write_matrix_csv(path: str | Path, matrix: np.ndarray) -> None:
    """Debug dump of a 2-D matrix with 6 significant digits per cell."""
    matrix = np.atleast_2d(matrix)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([f"{x:.6g}" for x in row])
