import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import (
    ORACLE_HORIZON,
    ORACLE_TRAINING,
    greedy_rollout,
    three_depth_field,
    value_iteration,
)
from mctpath.ocean import gp_fit, uniform_field
from mctpath.planner import (
    Planner,
    PlannerEnv,
    ReplayBuffer,
    TrainingConfig,
    epsilon,
    greedy_action,
    learning_rate,
    plan_path,
    reward,
    select_action,
    td_target,
    train,
)

CFG = TrainingConfig()


# --- reward / epsilon / action selection -------------------------------------


def test_reward_cases():
    assert reward(300, 200, 1) == 1
    assert reward(200, 200, 1) == 0
    assert reward(100, 200, 1) == 0
    assert reward(300, 200, 2.5) == 2.5


def test_epsilon_values():
    assert epsilon(0, CFG) == 1.0
    assert epsilon(10**6, CFG) == pytest.approx(0.01, abs=1e-15)
    assert epsilon(100, CFG) == pytest.approx(0.01 + 0.99 * math.exp(-1), rel=1e-15)
    # published 0.37418 differs from the formula in the fifth decimal
    assert epsilon(100, CFG) == pytest.approx(0.37418, abs=5e-5)
    with pytest.raises(ValueError):
        epsilon(-1, CFG)


@given(st.integers(0, 1500))
def test_epsilon_decreasing_and_bounded(n):
    a, b = epsilon(n, CFG), epsilon(n + 1, CFG)
    assert CFG.eps_min <= b < a <= CFG.eps_max


@pytest.mark.parametrize("kw", [{"gamma": 1.0}, {"gamma": -0.1}, {"eps_min": 0.0},
                                {"eps_min": 0.5, "eps_max": 0.4}, {"eps_max": 1.5}])
def test_training_config_invariants(kw):
    with pytest.raises(ValueError):
        TrainingConfig(**kw)


def test_learning_rate_anneal():
    fixed = TrainingConfig(learning_rate=1e-3)
    assert learning_rate(50, fixed) == 1e-3
    c = TrainingConfig(learning_rate=1e-2, lr_final=1e-3, episodes=11)
    assert learning_rate(0, c) == 1e-2
    assert learning_rate(10, c) == pytest.approx(1e-3)
    assert learning_rate(5, c) == pytest.approx(math.sqrt(1e-5))


def test_select_action_greedy_and_ties():
    assert select_action([0.1, 0.9, 0.3], 0.0, None) == 1
    assert select_action([0.5, 0.5], 0.0, None) == 0
    assert select_action([0.1, 0.9, 0.3], 0.0, None, mask=[True, False, True]) == 2
    with pytest.raises(ValueError):
        select_action([1, 2], 0.0, None, mask=[False, False])


def test_select_action_uniform_when_exploring():
    rng = np.random.default_rng(0)
    counts = np.bincount([select_action([0.0, 5.0, 1.0], 1.0, rng) for _ in range(100_000)],
                         minlength=3)
    assert np.all(np.abs(counts / 1e5 - 1 / 3) < 0.01)


def test_select_action_exploration_respects_mask():
    rng = np.random.default_rng(1)
    picks = {select_action([0, 0, 0], 1.0, rng, mask=[False, True, True]) for _ in range(500)}
    assert picks == {1, 2}


def test_td_target():
    assert td_target(1, [0.5, 2.0], 0.5) == 2.0
    assert td_target(1, [0.5, 2.0], 0.0) == 1.0
    assert td_target(1, [0.5, 2.0], 0.5, terminal=True) == 1.0


# --- replay buffer -------------------------------------------------------------


def _fill(buf, n, start=0):
    for i in range(start, start + n):
        buf.add(np.full(2, i), i % 3, float(i), np.full(2, i + 1), [True] * 3, False)


def test_buffer_fifo_eviction():
    buf = ReplayBuffer(10, 2, 3)
    _fill(buf, 13)
    assert len(buf) == 10
    stored = set(buf.r.tolist())
    assert stored == set(float(i) for i in range(3, 13))


@given(st.integers(1, 40), st.integers(1, 40), st.integers(0, 1000))
def test_buffer_distinct_samples(cap, n, seed):
    buf = ReplayBuffer(cap, 2, 3)
    _fill(buf, n)
    assert len(buf) == min(cap, n)
    m = min(len(buf), 8)
    idx = buf.sample_indices(m, np.random.default_rng(seed))
    assert len(set(idx.tolist())) == m and idx.max() < len(buf)


def test_buffer_oversample_rejected():
    buf = ReplayBuffer(10, 2, 3)
    _fill(buf, 3)
    with pytest.raises(ValueError):
        buf.sample(4, np.random.default_rng(0))


# --- environment -------------------------------------------------------------


def test_mask_at_band_edges():
    env = PlannerEnv(uniform_field(1.5, np.arange(20.0, 101.0, 5.0)), CFG)
    assert env.mask(30.0).tolist() == [False, True, True]
    assert env.mask(90.0).tolist() == [True, True, False]
    assert env.mask(60.0).all()
    with pytest.raises(ValueError):
        env.step(30.0, 0, 0)


def test_rewards_in_alpha_set_and_hold_rule():
    env = PlannerEnv(three_depth_field(), TrainingConfig(z_min=45, z_max=55))
    for z in (45.0, 50.0, 55.0):
        rs = [env.reward_for(z, 0, i) for i in range(3) if env.mask(z)[i]]
        assert set(rs) <= {0.0, 1.0}
    # below the best depth, the move earns alpha and holding does not
    assert env.reward_for(50.0, 0, 2) == 1.0 and env.reward_for(50.0, 0, 1) == 0.0
    # at the best depth, holding earns alpha
    assert env.reward_for(55.0, 0, 1) == 1.0 and env.reward_for(55.0, 0, 0) == 0.0


def test_uniform_field_hold_is_dp_optimal():
    cfg = TrainingConfig(horizon=6)
    env = PlannerEnv(uniform_field(1.5, np.arange(20.0, 101.0, 5.0)), cfg)
    Q = value_iteration(env, 6, cfg.gamma)
    for (z, k), q in Q.items():
        assert int(np.argmax(q)) == env.hold


def test_encoding_dimension():
    env = PlannerEnv(three_depth_field(), TrainingConfig(z_min=45, z_max=55))
    assert env.encode(env.state(50.0, 0)).shape == (env.state_dim,)


# --- training ----------------------------------------------------------------


SMALL = TrainingConfig(horizon=12, episodes=15, z_min=45, z_max=55, hidden=16, seed=3,
                       target_sync=20, batch_size=16)


def test_training_deterministic():
    a, la = train(lambda rng: three_depth_field(), SMALL)
    b, lb = train(lambda rng: three_depth_field(), SMALL)
    assert la.returns == lb.returns
    assert np.array_equal(la.losses, lb.losses, equal_nan=True)
    assert all(np.array_equal(p, q) for p, q in zip(a.net.params(), b.net.params()))


def test_training_log_shape():
    _, log = train(lambda rng: three_depth_field(), SMALL)
    assert len(log.returns) == len(log.losses) == len(log.epsilons) == SMALL.episodes
    assert log.epsilons[0] == 1.0


def test_target_sync_bit_identical(monkeypatch):
    import mctpath.planner as planner_mod

    seen = []
    orig = planner_mod.QNetwork.sync_from

    def spy(self, other):
        orig(self, other)
        seen.append(all(np.array_equal(p, q) for p, q in zip(self.params(), other.params())))

    monkeypatch.setattr(planner_mod.QNetwork, "sync_from", spy)
    train(lambda rng: three_depth_field(), SMALL)
    assert seen and all(seen)
    assert len(seen) == SMALL.episodes * SMALL.horizon // SMALL.target_sync


def test_empty_environment_rejected():
    with pytest.raises(ValueError, match="no field"):
        train(lambda rng: None, SMALL)


def test_myopic_policy_is_one_step_lookahead():
    cfg = TrainingConfig(horizon=12, episodes=300, gamma=0.0, z_min=45, z_max=55,
                         learning_rate=1e-2, target_sync=50, exploring_starts=True, seed=2)
    planner, _ = train(lambda rng: three_depth_field(), cfg)
    env = planner.env(three_depth_field())
    for z in (45.0, 50.0, 55.0):
        for k in range(cfg.horizon):
            best = max(env.reward_for(z, k, i) for i in range(3) if env.mask(z)[i])
            assert env.reward_for(z, k, greedy_action(planner, env, z, k)) == best


def test_dqn_matches_value_iteration(oracle_planner):
    planner, _ = oracle_planner
    field = three_depth_field()
    env = planner.env(field)
    Q = value_iteration(env, ORACLE_HORIZON, ORACLE_TRAINING.gamma)
    R = value_iteration(env, ORACLE_HORIZON, 1.0)  # undiscounted episode return
    worst = 0.0
    for z in (45.0, 50.0, 55.0):
        ret, path = greedy_rollout(planner, env, z, ORACLE_HORIZON)
        assert ret >= 0.95 * R[(z, 0)].max()
        first = path.index(55.0)
        assert all(p == 55.0 for p in path[first:])
        for k in range(ORACLE_HORIZON):
            q = planner.net(env.encode(env.state(z, k)))[0]
            a = greedy_action(planner, env, z, k)
            assert Q[(z, k)][a] == Q[(z, k)].max()
            worst = max(worst, abs(q[a] - Q[(z, k)].max()))
    assert worst < 0.05


# --- planning ------------------------------------------------------------------


def test_plan_path_contracts(oracle_planner):
    planner, _ = oracle_planner
    field = three_depth_field()
    wps = plan_path(planner, field, 45.0, 10)
    assert wps.shape == (10,)
    steps = np.diff(np.r_[45.0, wps])
    assert set(steps.tolist()) <= set(planner.cfg.actions)
    assert wps.min() >= 45.0 and wps.max() <= 55.0
    one = plan_path(planner, field, 45.0, 1)
    env = planner.env(field)
    assert one[0] == 45.0 + env.actions[greedy_action(planner, env, 45.0, 0)]
    with pytest.raises(ValueError):
        plan_path(planner, field, 45.0, 0)


def test_plan_path_scale_invariant(oracle_planner):
    planner, _ = oracle_planner
    scaled = Planner.from_dict(planner.to_dict())
    scaled.net.weights[-1] *= 3.7
    scaled.net.biases[-1] *= 3.7
    field = three_depth_field()
    assert np.array_equal(plan_path(planner, field, 50.0, 24), plan_path(scaled, field, 50.0, 24))


def test_plan_path_rejects_nan_network(oracle_planner):
    bad = Planner.from_dict(oracle_planner[0].to_dict())
    bad.net.weights[0][0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        plan_path(bad, three_depth_field(), 50.0, 3)


def test_plan_path_uses_gp_mean(oracle_planner):
    planner, _ = oracle_planner
    field = three_depth_field()
    obs = [(t, z, field.speed(z, t)) for z in (40.0, 45.0, 50.0, 55.0, 60.0)
           for t in (0.0, 43200.0, 86400.0)]
    from mctpath.ocean import GPHyperparameters

    gp = gp_fit(obs, GPHyperparameters(length_z=3.0, noise_var=1e-6, length_t=1e5))
    wps = plan_path(planner, gp, 45.0, 24)
    assert wps[-1] == 55.0


def test_uniform_field_constant_waypoints():
    field = uniform_field(1.5, np.arange(20.0, 101.0, 5.0))
    cfg = TrainingConfig(horizon=24, episodes=150, learning_rate=1e-2, target_sync=100, seed=0)
    planner, _ = train(lambda rng: field, cfg)
    for z0 in (40.0, 50.0, 75.0):
        assert np.all(plan_path(planner, field, z0, 24) == z0)


def test_planner_save_load(tmp_path, oracle_planner):
    planner, _ = oracle_planner
    p = tmp_path / "net.json"
    planner.save(p)
    back = Planner.load(p)
    assert back.cfg == planner.cfg
    field = three_depth_field()
    assert np.array_equal(plan_path(back, field, 45.0, 24), plan_path(planner, field, 45.0, 24))
