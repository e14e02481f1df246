import numpy as np
import pytest
from scipy import stats

from mmlab.policies import N_ACTIONS
from mmlab.rl import (
    EpsSchedule,
    GreedyPolicy,
    LearnerConfig,
    QLearner,
    ReplayBuffer,
    blend,
    buffer_push,
    buffer_sample,
    dqn_train_step,
    morl_select_action,
    morl_train_step,
    rehearsal_sample,
    rehearsal_split,
    select_action,
)


def filled(n, capacity=100, arity=2, tag=0.0):
    buf = ReplayBuffer(arity, 1, capacity)
    for i in range(n):
        buffer_push(buf, (np.full(arity, i), i % N_ACTIONS, np.full(arity, i + 1), tag))
    return buf


def test_buffer_overwrites_oldest():
    buf = filled(7, capacity=5)
    assert len(buf) == 5
    assert sorted(buf.s[:5, 0].tolist()) == [2, 3, 4, 5, 6]


def test_buffer_grows_past_initial_allocation():
    buf = filled(5000, capacity=10_000)
    assert len(buf) == 5000 and buf.s[4999, 0] == 4999


def test_buffer_single_item():
    buf = ReplayBuffer(3)
    buf.push(np.array([1.0, 2, 3]), 4, np.zeros(3), 5.0)
    s, a, s2, r = buffer_sample(buf, 1, np.random.default_rng(0))
    assert s.tolist() == [[1, 2, 3]] and a.tolist() == [4] and r.tolist() == [[5.0]]
    with pytest.raises(ValueError):
        ReplayBuffer(3).sample(1, np.random.default_rng(0))


def test_buffer_sampling_uniform():
    buf = filled(10)
    rng = np.random.default_rng(1)
    counts = np.zeros(10)
    for _ in range(4000):
        s, *_ = buf.sample(3, rng)
        counts += np.bincount(s[:, 0].astype(int), minlength=10)
    assert stats.chisquare(counts).pvalue > 1e-3


@pytest.mark.parametrize("g,split", [(0.0, (0, 1024)), (0.5, (512, 512)), (1.0, (1024, 0))])
def test_rehearsal_split(g, split):
    assert rehearsal_split(g, 1024) == split


@pytest.mark.parametrize("g", [0.0, 0.5, 1.0])
def test_rehearsal_mix_is_exact(g):
    old, new = filled(2000, 5000, tag=1.0), filled(2000, 5000, tag=0.0)
    _, _, _, r = rehearsal_sample(old, new, g, 1024, np.random.default_rng(0))
    assert int(r.sum()) == rehearsal_split(g, 1024)[0]
    assert len(r) == 1024


def test_rehearsal_empty_old_falls_back():
    new = filled(50, tag=0.0)
    _, _, _, r = rehearsal_sample(None, new, 0.5, 20, np.random.default_rng(0))
    assert len(r) == 20 and r.sum() == 0


def test_eps_schedule():
    sch = EpsSchedule(0.99, 0.01, 30)
    vals = [sch.value(s) for s in range(60)]
    assert vals[0] == 0.99
    assert abs(vals[29] - 0.01) < 1e-12
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert all(0.01 <= v <= 0.99 for v in vals)


def test_select_action_rules():
    rng = np.random.default_rng(0)
    q = np.zeros(N_ACTIONS)
    q[3] = q[7] = 1.0
    assert select_action(q, 0.0, rng) == 3
    picks = [select_action(q, 1.0, rng) for _ in range(60_500)]
    counts = np.bincount(picks, minlength=N_ACTIONS)
    assert stats.chisquare(counts).pvalue > 1e-4


def test_morl_select_rules():
    rng = np.random.default_rng(0)
    q1, q2 = rng.normal(size=N_ACTIONS), rng.normal(size=N_ACTIONS)
    assert morl_select_action(q1, q2, 1.0, 0.0, rng) == np.argmax(q1)
    assert morl_select_action(q1, q2, 0.0, 0.0, rng) == np.argmax(q2)
    assert morl_select_action(q1, q2, 0.3, 0.0, rng) == morl_select_action(7 * q1, 7 * q2, 0.3, 0.0, rng)
    assert np.allclose(blend(q1, q2, 0.25), 0.25 * q1 + 0.75 * q2)


def _learner(n_heads=1, seed=0, **kw):
    # states are fed through observe() only, so the online scaler is switched off
    cfg = LearnerConfig(**{"train_every": 20, "batch_size": 64, "sgd_batch": 16, "hidden": (16,), "scale_states": False, **kw})
    return QLearner(4, cfg, np.random.default_rng(seed), n_heads=n_heads, n_sessions=10)


def _feed(learner, rewards, steps=400, seed=0):
    rng, reward_rng = np.random.default_rng(seed), np.random.default_rng(seed + 1000)
    for _ in range(steps):
        s, s2 = rng.normal(size=4), rng.normal(size=4)
        learner.observe(s, int(rng.integers(N_ACTIONS)), s2, rewards(reward_rng))


def test_zero_discount_is_supervised_regression():
    learner = _learner(gamma=0.0, reward_scale=1.0, loss="mse", lr=0.01)
    s = np.ones(4)
    for _ in range(3000):
        learner.observe(s, 5, s, (2.0,))
    assert abs(learner.q_values(s)[5] - 2.0) < 0.05


def test_target_is_reward_plus_discounted_max():
    learner = _learner(reward_scale=0.5)
    _feed(learner, lambda r: (r.normal(),), steps=19)
    seen = {}
    orig = learner._fit

    def spy(head, x, a, y):
        seen["x"], seen["a"], seen["y"] = x, a, y
        return orig(head, x, a, y)

    learner._fit = spy
    targets_before = [t.copy() for t in learner.targets]
    learner.stream = np.random.default_rng(9)
    ref_stream = np.random.default_rng(9)
    s, a, s2, r = learner.buffer.sample(64, ref_stream)
    learner.train_step()
    from mmlab.neural import forward

    x2 = s2
    expected = r[:, 0] * 0.5 + 0.6 * forward(learner.spec, targets_before[0], x2).max(axis=1)
    assert np.allclose(seen["y"], expected)
    assert np.array_equal(learner.targets[0], learner.heads[0].params)


def test_morl_heads_decouple_and_ignore_w():
    a = _learner(n_heads=2, seed=3)
    b = _learner(n_heads=2, seed=3)
    _feed(a, lambda r: (r.normal(), 0.0 * r.normal()), seed=1)
    _feed(b, lambda r: (r.normal(), 1000 * r.normal()), seed=1)
    assert np.array_equal(a.heads[0].params, b.heads[0].params)
    assert not np.array_equal(a.heads[1].params, b.heads[1].params)
    c, d = _learner(n_heads=2, seed=3), _learner(n_heads=2, seed=3)
    c.w, d.w = 0.1, 0.9
    _feed(c, lambda r: (r.normal(), r.normal()), seed=2)
    _feed(d, lambda r: (r.normal(), r.normal()), seed=2)
    for hc, hd in zip(c.heads, d.heads):
        assert np.array_equal(hc.params, hd.params)


def test_zero_second_reward_is_a_fixed_point():
    # zero input and zero biases make every initial Q exactly 0; with r2 = 0 the
    # second head's targets stay 0, so it never moves while the first head learns
    learner = _learner(n_heads=2)
    s = np.zeros(4)
    before = learner.heads[1].copy_params()
    for k in range(2000):
        learner.observe(s, k % N_ACTIONS, s, (1.0, 0.0))
    assert np.array_equal(learner.heads[1].params, before)
    assert not learner.heads[1](s).any()
    assert learner.heads[0](s).any()


def test_train_step_helpers():
    learner = _learner()
    _feed(learner, lambda r: (1.0,), steps=30)
    assert isinstance(dqn_train_step(learner), float)
    m = _learner(n_heads=2)
    _feed(m, lambda r: (1.0, -1.0), steps=30)
    assert len(morl_train_step(m)) == 2


def test_frozen_layers_survive_training():
    learner = _learner()
    learner.freeze_layers([0])
    before = learner.heads[0].copy_params()
    _feed(learner, lambda r: (r.normal(),))
    mask = learner.heads[0].freeze_mask
    assert np.array_equal(learner.heads[0].params[mask], before[mask])
    assert not np.array_equal(learner.heads[0].params[~mask], before[~mask])


def test_ewc_anchor_has_zero_penalty_at_anchor():
    from mmlab.neural import ewc_penalty_and_grad

    learner = _learner()
    _feed(learner, lambda r: (r.normal(),), steps=100)
    learner.anchor_ewc(1.0)
    anchor, fisher, lam = learner.heads[0].ewc
    pen, g = ewc_penalty_and_grad(learner.heads[0].params, anchor, fisher, lam)
    assert pen == 0 and not g.any()
    assert np.all(fisher >= 0)


def test_rehearsal_keeps_old_buffer():
    learner = _learner()
    _feed(learner, lambda r: (1.0,), steps=50)
    learner.start_rehearsal(0.5)
    assert len(learner.old_buffer) == 50 and len(learner.buffer) == 0


def test_greedy_snapshot_and_persistence(tmp_path):
    learner = _learner(n_heads=2)
    _feed(learner, lambda r: (r.normal(), r.normal()), steps=60)
    pol = learner.snapshot()
    s = np.random.default_rng(0).normal(size=4)
    learner.save(tmp_path / "p")
    loaded = GreedyPolicy.load(tmp_path / "p")
    assert np.array_equal(loaded.q_values(s), pol.q_values(s))
    # snapshots never change while the learner keeps training
    q_before = pol.q_values(s)
    _feed(learner, lambda r: (r.normal(), r.normal()), steps=60)
    assert np.array_equal(pol.q_values(s), q_before)
    from mmlab.neural import forward

    assert pol.with_weight(1.0).act(s) == int(np.argmax(forward(pol.spec, pol.heads[0], s)))


def test_exploration_override():
    learner = _learner()
    learner.eps_override = 1.0
    assert learner.eps == 1.0
    learner.eps_override = None
    assert learner.eps == learner.schedule.value(0)
