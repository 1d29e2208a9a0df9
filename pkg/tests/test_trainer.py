import dataclasses
import logging

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from _helpers import random_rollout, scenario, small_experiment, vehicle, world_of
from ramplab.autodiff import no_grad
from ramplab.config import EpsilonConfig
from ramplab.network import TrainingError, build_network
from ramplab.optim import Adam
from ramplab.replay import ReplayBuffer, Transition
from ramplab.representation import build_state
from ramplab.simulation import FILLER_ACTION_INDEX, Outcome, VehicleKind
from ramplab.trainer import (
    EpisodeMetrics,
    Trainer,
    _episode_outcome_stats,
    epsilon,
    evaluate_policy,
    greedy_actions,
    metrics_csv_row,
    select_actions,
    td_targets,
    train_on_batch,
    train_step,
    update_target,
)

EPS_CFG = EpsilonConfig()


# -- exploration schedule -------------------------------------------------


def test_epsilon_endpoints_and_midpoint():
    assert epsilon(0, EPS_CFG) == pytest.approx(0.99)
    assert epsilon(20_000, EPS_CFG) == pytest.approx(0.4955)
    assert epsilon(40_000, EPS_CFG) == pytest.approx(0.001)
    assert epsilon(1_000_000, EPS_CFG) == pytest.approx(0.001)


@settings(max_examples=50, deadline=None)
@given(a=st.integers(min_value=0, max_value=100_000),
       b=st.integers(min_value=0, max_value=100_000))
def test_epsilon_never_increases(a, b):
    lo, hi = sorted((a, b))
    assert epsilon(hi, EPS_CFG) <= epsilon(lo, EPS_CFG) <= EPS_CFG.start
    assert epsilon(hi, EPS_CFG) >= EPS_CFG.end


def test_select_actions_greedy_and_tie_break():
    q = np.array([[0.0, 5.0, 5.0, 0, 0, 0, 0, 0, 0],
                  [9.0, 0.0, 0, 0, 0, 0, 0, 0, 0]])
    picked = select_actions(q, eps=0.0)
    np.testing.assert_array_equal(picked, [1, 0])


def test_select_actions_rejects_non_finite():
    q = np.full((1, 9), np.nan)
    with pytest.raises(TrainingError):
        select_actions(q, eps=0.0)


def test_select_actions_full_exploration_is_uniform():
    rng = np.random.default_rng(123)
    q = np.zeros((100_000, 9))
    draws = select_actions(q, eps=1.0, rng=rng)
    counts = np.bincount(draws, minlength=9)
    expected = len(draws) / 9
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert chi2 < scipy.stats.chi2.isf(1e-3, df=8)


def test_select_actions_partial_exploration_mixes():
    rng = np.random.default_rng(5)
    q = np.zeros((10_000, 9))
    q[:, 3] = 1.0
    draws = select_actions(q, eps=0.5, rng=rng)
    frac_greedy = float(np.mean(draws == 3))
    # greedy picks plus the 1/9 of random picks that land on 3
    assert frac_greedy == pytest.approx(0.5 + 0.5 / 9, abs=0.03)


# -- TD targets -----------------------------------------------------------


class FakeTargetNet:
    """Duck-typed stand-in returning one fixed Q row per (scene, CAV)."""

    def __init__(self, q_rows):
        self.q_rows = np.asarray(q_rows, dtype=float)

    def forward_batch(self, snaps):
        out = lambda: None
        out.data = self.q_rows
        return out


def fake_transition(reward, done, at_s, at_next):
    return Transition(
        s=None, actions=np.array([0, 0]), reward=reward, s_next=None,
        done=done, active_at_s=np.array(at_s), active_at_s_next=np.array(at_next),
    )


def test_td_targets_bootstrap_and_cutoffs():
    batch = [
        fake_transition(1.0, False, [True, True], [True, False]),
        fake_transition(-2.0, True, [True, True], [True, True]),
    ]
    q_rows = np.array([
        [2.0, 1.0, 0.0], [5.0, 0.0, 0.0],      # scene 0, CAVs 0 and 1
        [7.0, 9.0, 8.0], [1.0, 1.0, 1.0],      # scene 1 (terminal: ignored)
    ])
    y = td_targets(batch, FakeTargetNet(q_rows), gamma=0.9)
    np.testing.assert_allclose(y, [[1.0 + 0.9 * 2.0, 1.0], [-2.0, -2.0]])


def test_td_targets_inactive_at_start_gets_raw_reward():
    batch = [fake_transition(3.0, False, [False, True], [True, True])]
    y = td_targets(batch, FakeTargetNet(np.full((2, 3), 10.0)), gamma=0.9)
    np.testing.assert_allclose(y, [[3.0, 3.0 + 9.0]])


# -- gradient steps -------------------------------------------------------


def solo_cfg(**kw):
    return small_experiment(
        scenario=scenario(n_cav=1, n_hdv=2, max_steps=20), **kw
    )


def rollout_snaps(cfg, n, seed0=0):
    return [
        build_state(random_rollout(cfg.scenario, seed=seed0 + i, n_steps=3),
                    cfg.scenario, cfg.representation)
        for i in range(n)
    ]


def test_fixed_point_has_zero_loss_and_frozen_params():
    cfg = solo_cfg(model_variant="gitsr")
    net = build_network(cfg, seed=0)
    target = net.clone()
    opt = Adam(net.store, lr=1e-3)
    snaps = rollout_snaps(cfg, 4)
    actions = [2, 5, 0, 7]
    with no_grad():
        q = net.forward_batch(snaps).data
    batch = [
        Transition(
            s=snaps[b], actions=np.array([actions[b]]),
            reward=float(q[b, actions[b]]), s_next=snaps[b], done=True,
            active_at_s=np.array([True]), active_at_s_next=np.array([False]),
        )
        for b in range(4)
    ]
    before = {name: p.data.tobytes() for name, p in net.store.items()}
    loss = train_on_batch(batch, net, target, opt, gamma=0.9)
    assert loss == 0.0
    after = {name: p.data.tobytes() for name, p in net.store.items()}
    assert before == after


def test_overfits_a_frozen_batch():
    cfg = small_experiment(model_variant="gitsr")
    net = build_network(cfg, seed=1)
    target = net.clone()
    opt = Adam(net.store, lr=1e-3)
    rng = np.random.default_rng(2)
    snaps = rollout_snaps(cfg, 16, seed0=100)
    batch = [
        Transition(
            s=snaps[i], actions=np.array([int(rng.integers(9)) for _ in range(2)]),
            reward=float(rng.normal()), s_next=snaps[i], done=True,
            active_at_s=np.array([True, True]), active_at_s_next=np.array([False, False]),
        )
        for i in range(16)
    ]
    first = train_on_batch(batch, net, target, opt, gamma=0.9)
    for _ in range(199):
        last = train_on_batch(batch, net, target, opt, gamma=0.9)
    assert last < first * 0.2


def test_train_step_short_buffer_warns_and_skips(caplog):
    cfg = solo_cfg()
    net = build_network(cfg, seed=3)
    buf = ReplayBuffer(capacity=10, seed=0)
    with caplog.at_level(logging.WARNING, logger="ramplab.trainer"):
        out = train_step(buf, net, net.clone(), Adam(net.store, 1e-4),
                         batch_size=4, gamma=0.9)
    assert out is None
    assert "skipping update" in caplog.text


def test_update_target_copies_then_goes_stale():
    cfg = small_experiment(model_variant="madqn")
    net = build_network(cfg, seed=4)
    target = build_network(cfg, seed=5)
    assert any(p.data.tobytes() != q.data.tobytes()
               for (_, p), (_, q) in zip(net.store.items(), target.store.items()))
    update_target(net, target)
    for (_, p), (_, q) in zip(net.store.items(), target.store.items()):
        assert p.data.tobytes() == q.data.tobytes()
    net.store.params["qhead.b2"].data += 0.5
    assert net.store.params["qhead.b2"].data.tobytes() != \
        target.store.params["qhead.b2"].data.tobytes()


# -- episode loop ---------------------------------------------------------


def test_trainer_warmup_reports_unit_epsilon_and_no_learning():
    cfg = small_experiment()
    cfg = dataclasses.replace(
        cfg, training=dataclasses.replace(cfg.training, warmup_steps=10_000)
    )
    trainer = Trainer(cfg, seed=0)
    before = {name: p.data.tobytes() for name, p in trainer.net.store.items()}
    metrics = trainer.run_episode(train=True)
    assert metrics.epsilon == 1.0
    assert trainer.grad_steps == 0
    assert len(trainer.buffer) == trainer.env_steps > 0
    after = {name: p.data.tobytes() for name, p in trainer.net.store.items()}
    assert before == after


def test_trainer_epsilon_counts_post_warmup_steps():
    cfg = small_experiment()
    trainer = Trainer(cfg, seed=0)
    warm = cfg.training.warmup_steps
    trainer.env_steps = warm - 1
    assert trainer.current_epsilon() == 1.0
    trainer.env_steps = warm
    assert trainer.current_epsilon() == pytest.approx(EPS_CFG.start)
    trainer.env_steps = warm + cfg.training.epsilon.decay_steps
    assert trainer.current_epsilon() == pytest.approx(EPS_CFG.end)


def test_trainer_learns_after_warmup_and_updates_target():
    trainer = Trainer(small_experiment(), seed=1)
    trainer.train()
    assert trainer.episodes_run == 2
    assert trainer.env_steps > trainer.cfg.training.warmup_steps
    assert trainer.grad_steps > trainer.cfg.training.target_update_interval


def test_trainer_checkpoint_cadence():
    tags = []
    trainer = Trainer(small_experiment(), seed=2)
    trainer.train(on_checkpoint=lambda net, tag: tags.append(tag))
    # every second episode plus the final copy
    assert tags == ["ep_000002", "final"]


def test_same_seed_trainers_are_identical():
    def run():
        trainer = Trainer(small_experiment(model_variant="madqn"), seed=7)
        metrics = trainer.train()
        rows = [metrics_csv_row(m)[:8] for m in metrics]   # drop wall_ms
        params = {name: p.data.tobytes() for name, p in trainer.net.store.items()}
        return rows, params

    (rows_a, params_a), (rows_b, params_b) = run(), run()
    assert rows_a == rows_b
    assert params_a == params_b


def test_different_seeds_diverge():
    def returns(seed):
        trainer = Trainer(small_experiment(model_variant="madqn"), seed=seed)
        return [m.return_total for m in trainer.train()]

    assert returns(1) != returns(2)


# -- bookkeeping ----------------------------------------------------------


def test_outcome_stats_counts_correct_exits():
    def cav(vid, outcome):
        return vehicle(vid, kind=VehicleKind.CAV_RAMP1, active=False, outcome=outcome)

    world = world_of(
        cav(0, Outcome.EXITED_CORRECT_RAMP),
        cav(1, Outcome.EXITED_CORRECT_RAMP),
        cav(2, Outcome.EXITED_CORRECT_RAMP),
        cav(3, Outcome.COLLIDED),
        vehicle(4),
    )
    world.collision_count = 1
    success, collisions = _episode_outcome_stats(world)
    assert success == 0.75 and collisions == 1
    all_home = world_of(cav(0, Outcome.EXITED_CORRECT_RAMP))
    assert _episode_outcome_stats(all_home) == (1.0, 0)


def test_greedy_actions_filler_for_inactive():
    cfg = small_experiment()
    net = build_network(cfg, seed=8)
    world = random_rollout(cfg.scenario, seed=9, n_steps=2)
    dead = world.vehicle(1)
    world.vehicles[1] = dataclasses.replace(dead, active=False, outcome=Outcome.COLLIDED)
    snap = build_state(world, cfg.scenario, cfg.representation)
    commands, idx = greedy_actions(net, snap, world)
    assert set(commands) == {0}
    assert idx[1] == FILLER_ACTION_INDEX
    assert idx[0] == int(np.argmax(net.q_values(snap)[0]))


def test_metrics_csv_row_formatting():
    row = metrics_csv_row(EpisodeMetrics(
        episode=3, seed=1, variant="gitsr", return_total=1.25, success_rate=0.5,
        collisions=2, mean_speed=10.0, epsilon=0.4955, wall_ms=12.3456,
    ))
    assert row == ["3", "1", "gitsr", "1.25", "0.5", "2", "10.0", "0.4955", "12.346"]


def test_evaluate_policy_is_greedy_and_deterministic():
    cfg = small_experiment()
    net = build_network(cfg, seed=10)
    a = evaluate_policy(net, cfg, n_episodes=3, seed=0)
    b = evaluate_policy(net, cfg, n_episodes=3, seed=0)
    c = evaluate_policy(net, cfg, n_episodes=3, seed=1)
    assert [m.return_total for m in a] == [m.return_total for m in b]
    assert [m.return_total for m in a] != [m.return_total for m in c]
    assert all(m.epsilon == 0.0 for m in a)
    assert [m.episode for m in a] == [0, 1, 2]
