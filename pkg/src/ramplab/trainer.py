"""Multi-agent DQN training on the highway world.

One :class:`Trainer` owns an environment configuration, the online and target
networks, an Adam optimizer, and a replay buffer.  Episodes alternate acting
and learning: uniformly random actions while warming up, per-CAV epsilon-greedy
afterwards, one gradient step per environment step once the warm-up budget is
spent, and a hard target-network copy on a fixed cadence of gradient steps.

All CAVs share one scalar reward; each CAV's TD target bootstraps from the max
of its own next-state Q row, dropping the bootstrap on terminal transitions
and for CAVs that did not survive the step.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass

import numpy as np

from ramplab.autodiff import Tensor, backward, gather, mean_all, mul, no_grad, sub
from ramplab.config import EpsilonConfig, ExperimentConfig
from ramplab.network import QNetwork, TrainingError, build_network
from ramplab.optim import Adam, clip_global_grad_norm
from ramplab.replay import ReplayBuffer, Transition
from ramplab.representation import StateSnapshot, build_state
from ramplab.rewards import RewardBreakdown, compute_reward
from ramplab.simulation import (
    FILLER_ACTION_INDEX,
    N_ACTIONS,
    ActionCommand,
    Outcome,
    WorldState,
    episode_done,
    reset,
    step,
)

log = logging.getLogger(__name__)

MAX_GRAD_NORM = 10.0


def snapshot_flags(variant: str) -> tuple[bool, bool]:
    """(with_features, with_adjacency) actually consumed by each variant."""
    return {
        "gitsr": (True, True),
        "madqn_transformer": (False, False),
        "madqn": (True, False),
    }[variant]


def epsilon(step_count: int, cfg: EpsilonConfig) -> float:
    """Linear decay from start to end over decay_steps, then flat."""
    if step_count >= cfg.decay_steps:
        return cfg.end
    return cfg.start + (cfg.end - cfg.start) * (step_count / cfg.decay_steps)


def select_actions(
    q: np.ndarray, eps: float, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Independent epsilon-greedy pick per Q row; greedy ties go to the lowest
    index.  ``rng`` may be omitted for the pure greedy case."""
    if not np.isfinite(q).all():
        raise TrainingError("non-finite Q values passed to action selection")
    out = np.empty(q.shape[0], dtype=np.int64)
    for i in range(q.shape[0]):
        if eps > 0.0 and rng.random() < eps:
            out[i] = int(rng.integers(N_ACTIONS))
        else:
            out[i] = int(np.argmax(q[i]))
    return out


def td_targets(batch: list[Transition], target_net: QNetwork, gamma: float) -> np.ndarray:
    """One target per (transition, CAV): r plus the discounted max of the
    target network's next-state row, unless the transition ended the episode
    or the CAV did not survive it."""
    n_cavs = batch[0].actions.size
    with no_grad():
        q_next = target_net.forward_batch([tr.s_next for tr in batch]).data
    y = np.empty((len(batch), n_cavs))
    for b, tr in enumerate(batch):
        for i in range(n_cavs):
            if tr.active_at_s[i] and not tr.done and tr.active_at_s_next[i]:
                y[b, i] = tr.reward + gamma * float(q_next[b * n_cavs + i].max())
            else:
                y[b, i] = tr.reward
    return y


def update_target(online: QNetwork, target: QNetwork) -> None:
    target.store.copy_from(online.store)


def train_on_batch(
    batch: list[Transition],
    net: QNetwork,
    target_net: QNetwork,
    optimizer: Adam,
    gamma: float,
) -> float:
    """One gradient step of MSE TD loss over the batch's active CAVs."""
    y = td_targets(batch, target_net, gamma)
    n_cavs = batch[0].actions.size
    rows, cols, targets = [], [], []
    for b, tr in enumerate(batch):
        for i in range(n_cavs):
            if tr.active_at_s[i]:
                rows.append(b * n_cavs + i)
                cols.append(int(tr.actions[i]))
                targets.append(y[b, i])
    assert rows, "batch contains no active CAVs"
    net.store.zero_grads()
    q_all = net.forward_batch([tr.s for tr in batch])
    pred = gather(q_all, np.array(rows), np.array(cols))
    diff = sub(pred, Tensor(np.array(targets, dtype=net.store.dtype)[:, None]))
    loss = mean_all(mul(diff, diff))
    if not math.isfinite(loss.item()):
        raise TrainingError("non-finite TD loss")
    backward(loss)
    net.store.check_finite_grads()
    clip_global_grad_norm(net.store, MAX_GRAD_NORM)
    optimizer.step()
    return loss.item()


def train_step(
    buffer: ReplayBuffer,
    net: QNetwork,
    target_net: QNetwork,
    optimizer: Adam,
    batch_size: int,
    gamma: float,
) -> float | None:
    """Sample and learn; a no-op (with a warning) while the buffer is short."""
    if len(buffer) < batch_size:
        log.warning("replay holds %d < batch %d transitions; skipping update",
                    len(buffer), batch_size)
        return None
    return train_on_batch(buffer.sample(batch_size), net, target_net, optimizer, gamma)


@dataclass
class EpisodeMetrics:
    episode: int
    seed: int
    variant: str
    return_total: float
    success_rate: float
    collisions: int
    mean_speed: float
    epsilon: float
    wall_ms: float


METRICS_COLUMNS = (
    "episode", "seed", "variant", "return", "success_rate",
    "collisions", "mean_speed", "epsilon", "wall_ms",
)


def metrics_csv_row(m: EpisodeMetrics) -> list[str]:
    return [
        str(m.episode), str(m.seed), m.variant, repr(m.return_total),
        repr(m.success_rate), str(m.collisions), repr(m.mean_speed),
        repr(m.epsilon), f"{m.wall_ms:.3f}",
    ]


def _episode_outcome_stats(world: WorldState) -> tuple[float, int]:
    cav_ids = world.cav_ids()
    if cav_ids:
        correct = sum(
            1 for vid in cav_ids
            if world.vehicle(vid).outcome is Outcome.EXITED_CORRECT_RAMP
        )
        success = correct / len(cav_ids)
    else:
        success = 0.0
    return success, world.collision_count


def greedy_actions(
    net: QNetwork, snap: StateSnapshot, world: WorldState
) -> tuple[dict[int, ActionCommand], np.ndarray]:
    """Argmax commands for the active CAVs plus the full per-row index array
    (filler for inactive rows)."""
    q = net.q_values(snap)
    idx = np.full(snap.n_cavs, FILLER_ACTION_INDEX, dtype=np.int64)
    commands: dict[int, ActionCommand] = {}
    for row, vid in enumerate(snap.cav_ids):
        if world.vehicle(vid).active:
            choice = int(np.argmax(q[row]))
            idx[row] = choice
            commands[vid] = ActionCommand.from_index(choice)
    return commands, idx


class Trainer:
    """Owns one seed's training run end to end."""

    def __init__(self, cfg: ExperimentConfig, seed: int, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.seed = seed
        root = np.random.SeedSequence(seed)
        net_ss, explore_ss, env_ss, buffer_ss = root.spawn(4)
        self.net = build_network(cfg, int(net_ss.generate_state(1)[0]), dtype)
        self.target = self.net.clone()
        self.optimizer = Adam(self.net.store, cfg.training.lr)
        self.buffer = ReplayBuffer(
            cfg.training.buffer_capacity, int(buffer_ss.generate_state(1)[0])
        )
        self.explore_rng = np.random.default_rng(explore_ss)
        self.env_seed_rng = np.random.default_rng(env_ss)
        self.env_steps = 0
        self.grad_steps = 0
        self.episodes_run = 0
        self._with_features, self._with_adjacency = snapshot_flags(cfg.model_variant)

    def _snapshot(self, world: WorldState) -> StateSnapshot:
        return build_state(
            world, self.cfg.scenario, self.cfg.representation,
            with_features=self._with_features, with_adjacency=self._with_adjacency,
        )

    def current_epsilon(self) -> float:
        t = self.cfg.training
        if self.env_steps < t.warmup_steps:
            return 1.0
        return epsilon(self.env_steps - t.warmup_steps, t.epsilon)

    def run_episode(self, train: bool = True, env_seed: int | None = None) -> EpisodeMetrics:
        """Play one episode; in training mode, also store transitions, learn,
        and advance the exploration schedule."""
        t0 = time.perf_counter()
        cfg = self.cfg
        training = cfg.training
        if env_seed is None:
            env_seed = int(self.env_seed_rng.integers(2 ** 63))
        world = reset(cfg.scenario, env_seed)
        snap = self._snapshot(world)
        eps_reported = self.current_epsilon() if train else 0.0

        return_total = 0.0
        speed_sum = 0.0
        speed_steps = 0
        while not episode_done(world, cfg.scenario):
            warming = train and self.env_steps < training.warmup_steps
            action_idx = np.full(snap.n_cavs, FILLER_ACTION_INDEX, dtype=np.int64)
            if warming:
                for row, vid in enumerate(snap.cav_ids):
                    if world.vehicle(vid).active:
                        action_idx[row] = int(self.explore_rng.integers(N_ACTIONS))
            else:
                eps = self.current_epsilon() if train else 0.0
                chosen = select_actions(self.net.q_values(snap), eps,
                                        self.explore_rng if train else None)
                for row, vid in enumerate(snap.cav_ids):
                    if world.vehicle(vid).active:
                        action_idx[row] = int(chosen[row])
            commands = {
                vid: ActionCommand.from_index(int(action_idx[row]))
                for row, vid in enumerate(snap.cav_ids)
                if world.vehicle(vid).active
            }

            events = step(world, commands, cfg.scenario)
            reward: RewardBreakdown = compute_reward(
                world, events, training.weights, cfg.scenario
            )
            snap_next = self._snapshot(world)
            done = episode_done(world, cfg.scenario)
            return_total += reward.total

            active_now = [world.vehicle(vid) for vid in world.active_cav_ids()]
            if active_now:
                speed_sum += sum(v.v for v in active_now) / len(active_now)
                speed_steps += 1

            if train:
                self.buffer.add(Transition(
                    s=snap, actions=action_idx, reward=reward.total, s_next=snap_next,
                    done=done, active_at_s=snap.alive.copy(),
                    active_at_s_next=snap_next.alive.copy(),
                ))
                self.env_steps += 1
                if self.env_steps >= training.warmup_steps and len(self.buffer) >= training.batch:
                    train_on_batch(
                        self.buffer.sample(training.batch),
                        self.net, self.target, self.optimizer, training.gamma,
                    )
                    self.grad_steps += 1
                    if self.grad_steps % training.target_update_interval == 0:
                        update_target(self.net, self.target)
            snap = snap_next

        success, collisions = _episode_outcome_stats(world)
        if train:
            self.episodes_run += 1
        return EpisodeMetrics(
            episode=self.episodes_run,
            seed=self.seed,
            variant=cfg.model_variant,
            return_total=return_total,
            success_rate=success,
            collisions=collisions,
            mean_speed=speed_sum / speed_steps if speed_steps else 0.0,
            epsilon=eps_reported,
            wall_ms=(time.perf_counter() - t0) * 1e3,
        )

    def train(self, on_episode=None, on_checkpoint=None) -> list[EpisodeMetrics]:
        """Run the configured number of episodes; optional callbacks receive
        each episode's metrics and periodic checkpoint requests."""
        out = []
        interval = self.cfg.training.checkpoint_interval
        for _ in range(self.cfg.training.episodes):
            metrics = self.run_episode(train=True)
            out.append(metrics)
            if on_episode is not None:
                on_episode(metrics)
            if on_checkpoint is not None and self.episodes_run % interval == 0:
                on_checkpoint(self.net, f"ep_{self.episodes_run:06d}")
        if on_checkpoint is not None:
            on_checkpoint(self.net, "final")
        return out


def evaluate_policy(
    net: QNetwork,
    cfg: ExperimentConfig,
    n_episodes: int,
    seed: int,
) -> list[EpisodeMetrics]:
    """Greedy rollouts of a fixed policy; episode seeds derive from ``seed``."""
    env_seed_rng = np.random.default_rng(np.random.SeedSequence(seed))
    flags = snapshot_flags(net.variant)
    out = []
    for ep in range(n_episodes):
        t0 = time.perf_counter()
        world = reset(cfg.scenario, int(env_seed_rng.integers(2 ** 63)))
        return_total = 0.0
        speed_sum = 0.0
        speed_steps = 0
        while not episode_done(world, cfg.scenario):
            snap = build_state(world, cfg.scenario, cfg.representation,
                               with_features=flags[0], with_adjacency=flags[1])
            commands, _ = greedy_actions(net, snap, world)
            events = step(world, commands, cfg.scenario)
            reward = compute_reward(world, events, cfg.training.weights, cfg.scenario)
            return_total += reward.total
            active_now = [world.vehicle(vid) for vid in world.active_cav_ids()]
            if active_now:
                speed_sum += sum(v.v for v in active_now) / len(active_now)
                speed_steps += 1
        success, collisions = _episode_outcome_stats(world)
        out.append(EpisodeMetrics(
            episode=ep, seed=seed, variant=net.variant, return_total=return_total,
            success_rate=success, collisions=collisions,
            mean_speed=speed_sum / speed_steps if speed_steps else 0.0,
            epsilon=0.0, wall_ms=(time.perf_counter() - t0) * 1e3,
        ))
    return out
