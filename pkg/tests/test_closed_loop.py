import json

import numpy as np
import pytest

from mctpath.closed_loop import (
    EnvironmentConfig,
    Metrics,
    SimulationConfig,
    SimulationError,
    build_environment,
    compare,
    energy_gain,
    plot_log,
    run_baseline,
    run_episode,
    training_sampler,
    waypoints_to_reference,
    write_metrics,
)
from mctpath.ocean import CurrentField, gp_fit, save_gp, synthesize_shear_profile, uniform_field
from mctpath.planner import TrainingConfig, greedy_action, train
from mctpath.power import PowerParams, generated_power

HOUR = 3600.0


def _metrics(E, duration=HOUR, seed=0):
    return Metrics(E, 0.1, 1.0, 0, duration, seed)


# --- reference conversion ----------------------------------------------------


def test_single_waypoint():
    assert np.array_equal(waypoints_to_reference([50], 2.0), np.full(150, 50.0))


def test_hold_semantics():
    r = waypoints_to_reference([50, 55], 2.0)
    assert np.array_equal(r, np.r_[np.full(150, 50.0), np.full(150, 55.0)])


@pytest.mark.parametrize("n", [1, 2, 7])
def test_reference_length(n):
    assert waypoints_to_reference(np.arange(n) + 40.0, 2.0, 300.0).size == n * 150


def test_reference_needs_waypoint():
    with pytest.raises(ValueError):
        waypoints_to_reference([], 2.0)


# --- configuration -----------------------------------------------------------


def test_config_invariants():
    with pytest.raises(ValueError, match="multiple of T_s"):
        SimulationConfig(T_s=7.0)
    with pytest.raises(ValueError, match="multiple of T_p"):
        SimulationConfig(duration=1000.0)
    cfg = SimulationConfig()
    assert (cfg.T_s, cfg.T_p, cfg.duration, cfg.z_eq, cfg.euler_bound_deg) == (2.0, 300.0, 86400.0, 50.0, 6.0)
    assert cfg.n_steps == 43200 and cfg.steps_per_plan == 150


def test_environment_config_validation():
    with pytest.raises(ValueError):
        EnvironmentConfig(source="radar")
    with pytest.raises(ValueError):
        EnvironmentConfig(source="csv")


# --- baseline ----------------------------------------------------------------


@pytest.fixture(scope="module")
def hour_cfg():
    return SimulationConfig(duration=HOUR, environment=EnvironmentConfig(kind="migrating", seed=4))


@pytest.fixture(scope="module")
def baseline(hour_cfg):
    return run_baseline(hour_cfg)


def test_baseline_inputs_stay_zero(baseline):
    log, m = baseline
    assert np.abs(log.inputs).max() < 1e-6
    assert np.all(log.reference == 50.0)
    assert m.violations == 0


def test_baseline_energy_exact(hour_cfg, baseline):
    log, m = baseline
    truth, _ = build_environment(hour_cfg.environment)
    expected = sum(hour_cfg.T_s * generated_power(truth.speed(50.0, t)) for t in log.time)
    assert np.all(log.P_HD == 0) and np.all(log.P_CD == 0)
    assert m.energy_J == pytest.approx(expected, rel=1e-12)


def test_log_shape_and_bookkeeping(hour_cfg, baseline):
    log, m = baseline
    assert len(log) == hour_cfg.n_steps
    assert np.all(np.diff(log.time) > 0)
    assert m.energy_J == float(np.sum(log.P_net * log.T_s))
    assert m.duration_s == HOUR


def test_paired_runs_share_environment(hour_cfg):
    a = build_environment(hour_cfg.environment)[0]
    b = build_environment(hour_cfg.environment)[0]
    assert a == b


# --- planned runs --------------------------------------------------------------


@pytest.fixture(scope="module")
def uniform_planner():
    field = uniform_field(1.5, np.arange(20.0, 101.0, 5.0))
    cfg = TrainingConfig(horizon=24, episodes=150, learning_rate=1e-2, target_sync=100, seed=0)
    return train(lambda rng: field, cfg)[0], field


def test_uniform_field_holds_and_energy(uniform_planner):
    planner, field = uniform_planner
    cfg = SimulationConfig(duration=2 * HOUR)
    log, m = run_episode(cfg, planner, fields=(field, field))
    assert np.abs(log.depth - 50.0).max() <= 0.5
    assert m.energy_J == pytest.approx(cfg.duration * generated_power(1.5), rel=0.01)
    assert m.violations == 0


def test_planned_run_contracts(oracle_planner):
    planner, _ = oracle_planner
    cfg = SimulationConfig(duration=2 * HOUR, environment=EnvironmentConfig(kind="migrating", seed=2))
    log, m = run_episode(cfg, planner)
    per = cfg.steps_per_plan
    changes = np.flatnonzero(np.diff(log.reference)) + 1
    assert changes.size > 0
    assert np.all(changes % per == 0)
    assert [d[2] for d in log.decisions] == log.reference[::per].tolist()
    truth, _ = build_environment(cfg.environment)
    env = planner.env(truth)
    for j, (t, z_real, wp) in enumerate(log.decisions):
        z = 5.0 * round(z_real / 5.0)
        z = min(max(z, planner.cfg.z_min), planner.cfg.z_max)
        assert wp == z + env.actions[greedy_action(planner, env, z, j)]
    assert m.max_euler_deg <= cfg.euler_bound_deg
    assert m.violations == 0
    assert m.energy_J == float(np.sum(log.P_net * cfg.T_s))


def test_planned_run_deterministic(oracle_planner):
    planner, _ = oracle_planner
    cfg = SimulationConfig(duration=HOUR, environment=EnvironmentConfig(seed=5))
    a, ma = run_episode(cfg, planner)
    b, mb = run_episode(cfg, planner)
    assert np.array_equal(a.states, b.states) and ma == mb


def test_episode_needs_planner():
    with pytest.raises(ValueError, match="planner"):
        run_episode(SimulationConfig(duration=HOUR))


def test_failure_reports_time():
    shallow = CurrentField([0.0, 40.0], [0.0, HOUR], np.ones((2, 2)))
    with pytest.raises(SimulationError, match=r"t=0 s"):
        run_baseline(SimulationConfig(duration=HOUR), fields=(shallow, shallow))


def test_gp_environment(tmp_path, oracle_planner):
    obs = synthesize_shear_profile("low", 7200, seed=0).observations()[::7]
    p = tmp_path / "gp.json"
    save_gp(gp_fit(obs), p)
    env = EnvironmentConfig(source="gp", gp=str(p), seed=3)
    truth, forecast = build_environment(env)
    assert truth == build_environment(env)[0]
    assert forecast is not truth and hasattr(forecast, "alpha")
    draw = training_sampler(env)
    assert draw(np.random.default_rng(0)).shape == truth.shape


def test_csv_environment(tmp_path):
    p = tmp_path / "f.csv"
    synthesize_shear_profile("low", HOUR, seed=1).to_csv(p)
    truth, forecast = build_environment(EnvironmentConfig(source="csv", csv=str(p)))
    assert truth is forecast and truth.shape[1] == 13


# --- comparison --------------------------------------------------------------


def test_gain_arithmetic():
    assert energy_gain(109.0, 100.0) == pytest.approx(9.0)
    assert compare(_metrics(109.0), _metrics(100.0)).gain_percent == pytest.approx(9.0)


def test_self_comparison_zero():
    assert compare(_metrics(123.0), _metrics(123.0)).gain_percent == 0.0


def test_mismatched_runs_rejected():
    with pytest.raises(ValueError, match="durations"):
        compare(_metrics(1.0, HOUR), _metrics(1.0, 2 * HOUR))
    with pytest.raises(ValueError, match="seeds"):
        compare(_metrics(1.0, seed=1), _metrics(1.0, seed=2))


def test_outputs_written(tmp_path, baseline):
    log, m = baseline
    log.to_csv(tmp_path / "log.csv")
    write_metrics(m, tmp_path / "metrics.json")
    paths = plot_log(log, tmp_path, baseline=log)
    assert {p.name for p in paths} == {"depth.svg", "euler.svg", "inputs.svg", "energy.svg"}
    header = (tmp_path / "log.csv").read_text().splitlines()[0].split(",")
    assert header[:3] == ["time_s", "z_m", "z_ref_m"] and "P_net" in header
    assert json.loads((tmp_path / "metrics.json").read_text())["violations"] == 0
    first = (tmp_path / "depth.svg").read_bytes()
    plot_log(log, tmp_path)
    assert (tmp_path / "depth.svg").read_bytes() == first


def test_power_params_feed_planning_step():
    cfg = SimulationConfig(power=PowerParams(T_p=600.0), duration=HOUR)
    assert cfg.steps_per_plan == 300
