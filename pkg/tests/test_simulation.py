"""Ground-truth cost model, oracle/regret accounting, and preset scenarios."""

import math

import numpy as np
import pytest

from elastic_offload.actions import ContextNorms, Pipeline, Stage
from elastic_offload.config import load_config
from elastic_offload.simulation import (
    ARMS,
    PRESETS,
    REFERENCE_BANDWIDTH,
    SLAM_PIPELINE,
    ConditionTrace,
    GroundTruth,
    SimEnvironment,
    TraceSegment,
    cumulative_regret,
    draw_noise,
    draw_noise_array,
    effective_alpha,
    loglog_slope,
    observe_cost,
    run_experiment,
)


def _steady_trace(bandwidth, horizon, cpu=1.0):
    return ConditionTrace(
        segments=(TraceSegment(0, bandwidth, cpu),), horizon=horizon
    )


def _slam_env(bandwidth, horizon, overhead=0.002):
    gt = GroundTruth(
        alpha_star=(
            SLAM_PIPELINE.input_bytes / REFERENCE_BANDWIDTH,
            SLAM_PIPELINE.total_cloud_units,
            overhead,
        ),
        noise_bound=0.0,
        reference_bandwidth=REFERENCE_BANDWIDTH,
    )
    norms = ContextNorms(
        byte_scale=float(SLAM_PIPELINE.input_bytes),
        compute_scale=SLAM_PIPELINE.total_cloud_units,
    )
    return SimEnvironment(SLAM_PIPELINE, _steady_trace(bandwidth, horizon), gt, norms)


# -- ground-truth cost model --------------------------------------------------


def test_observe_cost_known_value():
    gt = GroundTruth(alpha_star=(2.0, 1.0, 0.1), noise_bound=0.0)
    trace = _steady_trace(1.0, 10)
    got = observe_cost(gt, trace, np.array([0.5, 1.0, 1.0]), 3, np.random.default_rng(0))
    assert got == pytest.approx(2.1, rel=1e-12)


def test_observe_cost_zero_context_is_exact_zero():
    gt = GroundTruth(alpha_star=(2.0, 1.0, 0.1), noise_bound=0.5)
    trace = _steady_trace(1.0, 10)
    for t in (1, 5, 10):
        assert observe_cost(gt, trace, np.zeros(3), t, np.random.default_rng(1)) == 0.0


def test_observe_cost_frame_bounds():
    gt = GroundTruth(alpha_star=(1.0, 1.0, 0.0), noise_bound=0.0)
    trace = _steady_trace(1.0, 10)
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        observe_cost(gt, trace, np.ones(3), 0, rng)
    with pytest.raises(ValueError):
        observe_cost(gt, trace, np.ones(3), 11, rng)


def test_effective_alpha_rescales_by_link_and_cloud():
    gt = GroundTruth(alpha_star=(1.0, 2.0, 0.3), noise_bound=0.0, reference_bandwidth=10.0)
    np.testing.assert_allclose(
        effective_alpha(gt, bandwidth=5.0, cloud_scale=0.5),
        [2.0, 1.0, 0.3],
    )
    # at the reference link rate the transfer coefficient passes through
    np.testing.assert_allclose(effective_alpha(gt, 10.0), [1.0, 2.0, 0.3])


def test_noise_respects_bound_for_both_kinds():
    rng = np.random.default_rng(7)
    for kind in ("uniform", "gaussian"):
        gt = GroundTruth(alpha_star=(1.0, 1.0, 0.0), noise_bound=0.05, noise_kind=kind)
        batch = draw_noise_array(gt, rng, 10_000)
        assert np.max(np.abs(batch)) <= 0.05
        singles = [draw_noise(gt, rng) for _ in range(500)]
        assert max(abs(x) for x in singles) <= 0.05
    silent = GroundTruth(alpha_star=(1.0, 1.0, 0.0), noise_bound=0.0)
    assert draw_noise(silent, rng) == 0.0
    assert not draw_noise_array(silent, rng, 100).any()


def test_ground_truth_validation():
    with pytest.raises(ValueError):
        GroundTruth(alpha_star=(1.0, 2.0), noise_bound=0.0)
    with pytest.raises(ValueError):
        GroundTruth(alpha_star=(1.0, 2.0, 3.0), noise_bound=-0.1)
    with pytest.raises(ValueError):
        GroundTruth(alpha_star=(1.0, 2.0, 3.0), noise_bound=0.0, noise_kind="laplace")
    with pytest.raises(ValueError):
        GroundTruth(alpha_star=(1.0, 2.0, 3.0), noise_bound=0.0, reference_bandwidth=0.0)


# -- condition traces ---------------------------------------------------------


def test_trace_arrays_and_glitch_overlay():
    trace = ConditionTrace(
        segments=(TraceSegment(0, 4.0, 1.0), TraceSegment(5, 8.0, 0.5)),
        horizon=10,
        glitches=((7, 2.0),),
    )
    bw, cpu, cloud = trace.arrays()
    np.testing.assert_allclose(bw, [4, 4, 4, 4, 4, 8, 8, 2, 2, 2])
    np.testing.assert_allclose(cpu, [1, 1, 1, 1, 1, 0.5, 0.5, 0.5, 0.5, 0.5])
    np.testing.assert_allclose(cloud, np.ones(10))
    assert trace.change_frames() == [5, 7]


def test_trace_validation():
    seg = TraceSegment(0, 1.0, 1.0)
    with pytest.raises(ValueError):
        ConditionTrace(segments=(), horizon=10)
    with pytest.raises(ValueError):
        ConditionTrace(segments=(seg,), horizon=0)
    with pytest.raises(ValueError):
        ConditionTrace(segments=(TraceSegment(3, 1.0, 1.0),), horizon=10)
    with pytest.raises(ValueError):
        ConditionTrace(segments=(seg, TraceSegment(5, 1.0, 1.0), TraceSegment(5, 2.0, 1.0)), horizon=10)
    with pytest.raises(ValueError):
        ConditionTrace(segments=(seg, TraceSegment(12, 1.0, 1.0)), horizon=10)
    with pytest.raises(ValueError):
        ConditionTrace(segments=(TraceSegment(0, 0.0, 1.0),), horizon=10)
    with pytest.raises(ValueError):
        ConditionTrace(segments=(seg,), horizon=10, glitches=((12, 1.0),))
    with pytest.raises(ValueError):
        ConditionTrace(segments=(seg,), horizon=10, glitches=((5, 0.0),))


# -- environment tables -------------------------------------------------------


def test_env_total_latency_decomposition():
    pipe = Pipeline(
        stages=(Stage("a", 1.0, 0.25, 400), Stage("b", 2.0, 0.5, 50)),
        input_bytes=1000,
    )
    norms = ContextNorms(byte_scale=100.0, compute_scale=1.0)
    gt = GroundTruth(alpha_star=(100.0, 2.0, 0.25), noise_bound=0.0)
    env = SimEnvironment(pipe, _steady_trace(2.0, 4, cpu=0.5), gt, norms)
    # split 0: transmit 1000 at bw 2, all 0.75 cloud units at doubled rate
    # split 1: one local stage at half speed, transmit 400, 0.5 cloud units
    # split 2: pure local, three compute units at half speed, no elastic part
    np.testing.assert_allclose(env.total_true[0], [501.75, 203.25, 6.0], rtol=1e-12)
    assert env.local_time(2, 1) == pytest.approx(6.0)
    assert env.pure_local_index == 2
    assert (env.oracle_splits() == 2).all()


def test_oracle_extremes_on_link_rate():
    fat = _slam_env(1e15, 50)
    assert (fat.oracle_splits() == 0).all()  # free transfer: ship raw input
    thin = _slam_env(1e-3, 50)
    assert (thin.oracle_splits() == thin.pure_local_index).all()


# -- regret accounting --------------------------------------------------------


def test_static_local_regret_grows_linearly():
    env = _slam_env(20e6, 2000)
    always_local = np.full(env.horizon, env.pure_local_index)
    report = cumulative_regret(always_local, env)
    assert np.all(report.per_frame_regret > 0)  # local is strictly suboptimal here
    assert report.loglog_slope == pytest.approx(1.0, abs=1e-6)


def test_oracle_has_zero_regret_and_regret_is_nonnegative():
    env = _slam_env(1e6, 500)
    report = cumulative_regret(env.oracle_splits(), env)
    assert np.all(report.per_frame_regret == 0.0)
    rng = np.random.default_rng(3)
    wild = rng.integers(0, len(env.actions), size=env.horizon)
    report2 = cumulative_regret(wild, env)
    assert np.all(report2.per_frame_regret >= -1e-12)
    assert report2.cumulative[-1] >= 0
    assert report2.delta_max > 0
    with pytest.raises(ValueError):
        cumulative_regret(wild[:-1], env)


def test_loglog_slope_recovers_power_law():
    t = np.arange(1, 1001, dtype=float)
    assert loglog_slope(t**0.9) == pytest.approx(0.9, abs=1e-9)
    assert loglog_slope(3.7 * t) == pytest.approx(1.0, abs=1e-9)
    assert math.isnan(loglog_slope(np.zeros(10)))


# -- presets ------------------------------------------------------------------


def test_preset_shapes():
    slam = PRESETS["slam-sweep"]()
    assert [s.name for s in slam.sections] == ["bw_0.512", "bw_1", "bw_2", "bw_5", "bw_20"]
    assert all(s.glitch_frame is None for s in slam.sections)

    grasp = PRESETS["grasp-glitch"](horizon=400)
    assert [s.name for s in grasp.sections] == ["g_10to3", "g_5to1", "g_10to1"]
    assert all(s.glitch_frame == 200 for s in grasp.sections)
    assert all(s.trace.glitches[0][0] == 200 for s in grasp.sections)

    dialogue = PRESETS["dialogue-cpu"]()
    (section,) = dialogue.sections
    assert [label for _, label in section.labels] == ["cpu-full", "cpu-half", "cpu-restored"]
    cpu = section.trace.arrays()[1]
    assert cpu[0] == 1.0 and cpu[3000] == 0.5 and cpu[-1] == 1.0
    assert dialogue.believed_cpu_scale == 1.0


def test_preset_true_coefficients_within_believed_bound():
    for name, build in PRESETS.items():
        spec = build()
        alpha = np.array(
            [
                spec.pipeline.input_bytes / REFERENCE_BANDWIDTH,
                spec.cloud_rate * spec.pipeline.total_cloud_units,
                spec.overhead,
            ]
        )
        assert np.linalg.norm(alpha) <= spec.recommended["n_alpha"], name


# -- experiment runner --------------------------------------------------------


def test_run_experiment_deterministic_per_seed():
    cfg = load_config({"preset": "grasp-glitch", "horizon": 400, "seed": 7})
    first = run_experiment(cfg)
    second = run_experiment(cfg)
    assert [s.name for s in first.sections] == [s.name for s in second.sections]
    for s1, s2 in zip(first.sections, second.sections):
        assert s1.drift_fires == s2.drift_fires
        assert set(s1.arms) == set(ARMS)
        for arm in ARMS:
            f1, f2 = s1.arms[arm].frames, s2.arms[arm].frames
            np.testing.assert_array_equal(f1.split_index, f2.split_index)
            np.testing.assert_array_equal(f1.observed_e, f2.observed_e)
            np.testing.assert_array_equal(f1.latency, f2.latency)
            np.testing.assert_array_equal(f1.cumulative_regret, f2.cumulative_regret)

    other = run_experiment(load_config({"preset": "grasp-glitch", "horizon": 400, "seed": 8}))
    f_a = first.sections[0].arms["elastic"].frames
    f_b = other.sections[0].arms["elastic"].frames
    assert not np.array_equal(f_a.latency, f_b.latency)  # seed actually matters
