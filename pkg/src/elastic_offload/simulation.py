"""Desk-scale synthetic environment for elastic offloading experiments.

The simulator replaces robot hardware, a wireless link, and a cloud worker
with a small linear cost model:

    latency(frame) = prefix_compute / cpu_scale(t)            on-robot part
                   + transmit_bytes / bandwidth(t)             transfer part
                   + remaining_cloud_units * cloud_rate        cloud part
                   + fixed_overhead                            handshake etc.

plus bounded observation noise on everything that crosses the network.  These
definitions are the contract; nothing here claims wall-clock fidelity.  The
bandwidth/cpu schedule comes from a :class:`ConditionTrace`, so sudden link
glitches and compute-availability changes are first-class scenario inputs.

``run_experiment`` executes four arms over identical conditions: the learned
elastic policy, static full-offload, static pure-local, and the noise-free
oracle.  Per-frame series and regret accounting come back in plain arrays so
the harness can serialize them without re-deriving anything.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .actions import (
    ContextNorms,
    Pipeline,
    Stage,
    context_of,
    enumerate_actions,
    step_weight,
)
from .policy import ElasticPolicy, ForcedSchedule
from .predictor import BetaParams

logger = logging.getLogger(__name__)

ARM_ELASTIC = "elastic"
ARM_CLOUD = "static_cloud"
ARM_LOCAL = "static_local"
ARM_ORACLE = "oracle"
ARMS = (ARM_ELASTIC, ARM_CLOUD, ARM_LOCAL, ARM_ORACLE)

# Reference decay exponent for the known-horizon regret bound, printed with
# regret summaries; the empirical slope is what tests gate on.
REFERENCE_REGRET_EXPONENT = 0.75

# Nominal link rate the transfer coefficient is expressed against; per-frame
# coefficients rescale by reference/bandwidth(t).  Keeping the base vector at
# a fixed, fast reference keeps its norm small and bounded (inside n_alpha)
# no matter how slow the actual link is.
REFERENCE_BANDWIDTH = 20e6  # bytes per second


@dataclass(frozen=True)
class TraceSegment:
    start: int  # 0-based frame offset where this segment takes effect
    bandwidth: float  # bytes per second across the split
    cpu_scale: float  # robot compute availability factor
    cloud_scale: float = 1.0  # cloud service-rate factor


@dataclass(frozen=True)
class ConditionTrace:
    """Piecewise-constant environment conditions over a fixed horizon."""

    segments: tuple[TraceSegment, ...]
    horizon: int
    glitches: tuple[tuple[int, float], ...] = ()

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {self.horizon}")
        if not self.segments:
            raise ValueError("trace needs at least one segment")
        if self.segments[0].start != 0:
            raise ValueError("first segment must start at frame 0")
        starts = [s.start for s in self.segments]
        if sorted(set(starts)) != starts:
            raise ValueError("segment starts must be strictly increasing")
        for seg in self.segments:
            if not 0 <= seg.start < self.horizon:
                raise ValueError(f"segment start {seg.start} outside [0, {self.horizon})")
            if seg.bandwidth <= 0 or seg.cpu_scale <= 0 or seg.cloud_scale <= 0:
                raise ValueError("bandwidth, cpu_scale and cloud_scale must be > 0")
        for frame, bw in self.glitches:
            if not 0 <= frame < self.horizon:
                raise ValueError(f"glitch frame {frame} outside [0, {self.horizon})")
            if bw <= 0:
                raise ValueError(f"glitch bandwidth must be > 0, got {bw}")

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-frame (bandwidth, cpu_scale, cloud_scale), each of length horizon."""
        bw = np.empty(self.horizon)
        cpu = np.empty(self.horizon)
        cloud = np.empty(self.horizon)
        for seg in self.segments:
            bw[seg.start :] = seg.bandwidth
            cpu[seg.start :] = seg.cpu_scale
            cloud[seg.start :] = seg.cloud_scale
        for frame, new_bw in sorted(self.glitches):
            bw[frame:] = new_bw
        return bw, cpu, cloud

    def change_frames(self) -> list[int]:
        """Frames where any condition changes (segment starts past 0, glitches)."""
        frames = {s.start for s in self.segments if s.start > 0}
        frames.update(f for f, _ in self.glitches)
        return sorted(frames)


@dataclass(frozen=True)
class GroundTruth:
    """True elastic-cost coefficients and the observation-noise model.

    alpha_star = (transfer time per context unit at the reference bandwidth,
    cloud time per context unit, fixed overhead).  The effective coefficient
    vector at frame t rescales the first entry by reference/bandwidth(t) and
    the second by the trace's cloud availability factor.
    """

    alpha_star: tuple[float, float, float]
    noise_bound: float
    noise_kind: str = "uniform"
    reference_bandwidth: float = 1.0

    def __post_init__(self):
        if len(self.alpha_star) != 3:
            raise ValueError("alpha_star must have exactly 3 coefficients")
        if self.noise_bound < 0:
            raise ValueError(f"noise_bound must be >= 0, got {self.noise_bound}")
        if self.noise_kind not in ("uniform", "gaussian"):
            raise ValueError(f"noise_kind must be 'uniform' or 'gaussian', got {self.noise_kind!r}")
        if self.reference_bandwidth <= 0:
            raise ValueError("reference_bandwidth must be > 0")


def effective_alpha(gt: GroundTruth, bandwidth: float, cloud_scale: float = 1.0) -> np.ndarray:
    a0, a1, a2 = gt.alpha_star
    return np.array([a0 * gt.reference_bandwidth / bandwidth, a1 * cloud_scale, a2])


def draw_noise(gt: GroundTruth, rng: np.random.Generator) -> float:
    """One bounded noise sample; |x| <= noise_bound always."""
    b = gt.noise_bound
    if b == 0.0:
        return 0.0
    if gt.noise_kind == "uniform":
        return float(rng.uniform(-b, b))
    while True:  # truncated gaussian: resample outside the bound
        x = rng.normal(0.0, b / 2.0)
        if abs(x) <= b:
            return float(x)


def draw_noise_array(gt: GroundTruth, rng: np.random.Generator, size: int) -> np.ndarray:
    b = gt.noise_bound
    if b == 0.0:
        return np.zeros(size)
    if gt.noise_kind == "uniform":
        return rng.uniform(-b, b, size=size)
    out = rng.normal(0.0, b / 2.0, size=size)
    bad = np.abs(out) > b
    while bad.any():
        out[bad] = rng.normal(0.0, b / 2.0, size=int(bad.sum()))
        bad = np.abs(out) > b
    return out


def observe_cost(
    gt: GroundTruth,
    trace: ConditionTrace,
    v: np.ndarray,
    t: int,
    rng: np.random.Generator,
) -> float:
    """Noisy elastic cost of context v at frame t (1-based).

    The zero context never reaches the network, so it observes exactly 0.
    """
    v = np.asarray(v, dtype=float)
    if not 1 <= t <= trace.horizon:
        raise ValueError(f"frame {t} outside [1, {trace.horizon}]")
    if not v.any():
        return 0.0
    bw, _, cloud = trace.arrays()
    eff = effective_alpha(gt, bw[t - 1], cloud[t - 1])
    return float(eff @ v) + draw_noise(gt, rng)


# ---------------------------------------------------------------------------
# Environment: precomputed per-frame cost tables


class SimEnvironment:
    """Vectorized view of one section: true costs for every (frame, action)."""

    def __init__(
        self,
        pipeline: Pipeline,
        trace: ConditionTrace,
        gt: GroundTruth,
        norms: ContextNorms,
    ):
        self.pipeline = pipeline
        self.trace = trace
        self.gt = gt
        self.norms = norms
        self.actions = enumerate_actions(pipeline)
        self.contexts = np.stack([context_of(pipeline, a, norms) for a in self.actions])
        self.local_units = np.array(
            [sum(s.local_cost for s in pipeline.stages[: a.split_index]) for a in self.actions]
        )
        self.bw, self.cpu, self.cloud = trace.arrays()
        # true elastic cost per (frame, action), noise-free
        eff0 = gt.alpha_star[0] * gt.reference_bandwidth / self.bw  # (T,)
        eff1 = gt.alpha_star[1] * self.cloud
        eff2 = gt.alpha_star[2]
        nonzero = self.contexts.any(axis=1)  # pure-local rows stay exactly 0
        self.elastic_true = (
            np.outer(eff0, self.contexts[:, 0])
            + np.outer(eff1, self.contexts[:, 1])
            + eff2 * self.contexts[:, 2][None, :]
        ) * nonzero[None, :]
        # true total latency per (frame, action)
        self.total_true = self.local_units[None, :] / self.cpu[:, None] + self.elastic_true
        # tie-break order: ascending (transmit, split); argmin over this order
        self._order = sorted(
            range(len(self.actions)),
            key=lambda i: (self.actions[i].transmit_bytes, self.actions[i].split_index),
        )

    @property
    def horizon(self) -> int:
        return self.trace.horizon

    @property
    def pure_local_index(self) -> int:
        return len(self.actions) - 1

    def oracle_splits(self) -> np.ndarray:
        """Noise-free argmin split per frame, ties toward smaller transmit."""
        ordered = self.total_true[:, self._order]
        picks = np.argmin(ordered, axis=1)  # first minimum = smallest transmit
        return np.array([self.actions[self._order[p]].split_index for p in picks])

    def local_time(self, split: int, t: int) -> float:
        return float(self.local_units[split] / self.cpu[t - 1])


def oracle_action(
    gt: GroundTruth,
    trace: ConditionTrace,
    pipeline: Pipeline,
    norms: ContextNorms,
    t: int,
):
    """Single-frame oracle: the true-cost argmin action at frame t (1-based)."""
    env = SimEnvironment(pipeline, trace, gt, norms)
    split = int(env.oracle_splits()[t - 1])
    return env.actions[split]


@dataclass
class RegretReport:
    per_frame_regret: np.ndarray
    cumulative: np.ndarray
    loglog_slope: float
    delta_max: float
    oracle_actions: np.ndarray


def loglog_slope(cumulative: np.ndarray, lo_fraction: float = 0.1) -> float:
    """Least-squares slope of log cumulative regret vs log t over [T/10, T]."""
    horizon = len(cumulative)
    t = np.arange(1, horizon + 1)
    lo = max(int(math.ceil(horizon * lo_fraction)), 1)
    mask = (t >= lo) & (cumulative > 0)
    if mask.sum() < 2:
        return float("nan")
    coeffs = np.polyfit(np.log(t[mask]), np.log(cumulative[mask]), 1)
    return float(coeffs[0])


def cumulative_regret(splits: np.ndarray, env: SimEnvironment) -> RegretReport:
    """Noise-free regret of a split history against the per-frame oracle."""
    splits = np.asarray(splits, dtype=int)
    if splits.shape != (env.horizon,):
        raise ValueError(f"history length {splits.shape} != horizon {env.horizon}")
    frames = np.arange(env.horizon)
    oracle = env.oracle_splits()
    chosen_cost = env.total_true[frames, splits]
    oracle_cost = env.total_true[frames, oracle]
    per_frame = chosen_cost - oracle_cost
    cum = np.cumsum(per_frame)
    p = env.pure_local_index
    non_p = [i for i in range(len(env.actions)) if i != p]
    gap = np.abs(env.total_true[:, p] - env.total_true[:, non_p].min(axis=1))
    return RegretReport(
        per_frame_regret=per_frame,
        cumulative=cum,
        loglog_slope=loglog_slope(cum),
        delta_max=float(gap.max()),
        oracle_actions=oracle,
    )


# ---------------------------------------------------------------------------
# Scenario specifications and presets


@dataclass
class SectionSpec:
    name: str
    trace: ConditionTrace
    labels: tuple[tuple[int, str], ...]  # (frame, phase label) starts
    glitch_frame: int | None = None


@dataclass
class ScenarioSpec:
    name: str
    pipeline: Pipeline
    sections: list[SectionSpec]
    overhead: float
    cloud_rate: float = 1.0
    # hyperparameters the preset was calibrated with; explicit config keys win
    recommended: dict = field(default_factory=dict)
    believed_cpu_scale: float | None = None


def _steady(name: str, bandwidth: float, horizon: int, cpu: float = 1.0) -> SectionSpec:
    trace = ConditionTrace(
        segments=(TraceSegment(0, bandwidth, cpu),), horizon=horizon
    )
    return SectionSpec(name=name, trace=trace, labels=((0, "steady"),))


def _glitch(name: str, pre_bw: float, post_bw: float, horizon: int, at: int) -> SectionSpec:
    trace = ConditionTrace(
        segments=(TraceSegment(0, pre_bw, 1.0),),
        horizon=horizon,
        glitches=((at, post_bw),),
    )
    return SectionSpec(
        name=name,
        trace=trace,
        labels=((0, "before"), (at, "after")),
        glitch_frame=at,
    )


# Visual-SLAM-like feature pipeline: heavy raw input, sharply shrinking
# intermediates, almost all compute cheap in the cloud.  Calibrated so that
# pure-local costs 2.61 units and full offload at 1 MB/s costs 5.21 units;
# the best split sits mid-pipeline below 2 MB/s and at split 0 above it.
SLAM_PIPELINE = Pipeline(
    stages=(
        Stage("feature_extract", 0.50, 0.002, 3_640_000),
        Stage("keypoint_filter", 0.70, 0.002, 350_000),
        Stage("descriptor_match", 0.90, 0.002, 150_000),
        Stage("pose_refine", 0.51, 0.002, 20_000),
    ),
    input_bytes=5_200_000,
)

GRASP_PIPELINE = Pipeline(
    stages=(
        Stage("segment_scene", 0.55, 0.003, 3_400_000),
        Stage("candidate_boxes", 0.75, 0.003, 380_000),
        Stage("grasp_rank", 0.85, 0.003, 130_000),
        Stage("grip_refine", 0.46, 0.003, 25_000),
    ),
    input_bytes=5_000_000,
)

# Speech pipeline for the cpu-availability scenario.  Stage cloud costs are
# exactly proportional to local costs (one fixed speedup factor), so a stale
# local-cost belief produces an error that stays inside the span of the
# context features and the re-learned linear model absorbs it cleanly.
_DIALOGUE_SPEEDUP = 13.0
DIALOGUE_PIPELINE = Pipeline(
    stages=(
        Stage("denoise", 0.60, 0.60 / _DIALOGUE_SPEEDUP, 700_000),
        Stage("acoustic_model", 0.80, 0.80 / _DIALOGUE_SPEEDUP, 250_000),
        Stage("decoder", 0.72, 0.72 / _DIALOGUE_SPEEDUP, 60_000),
        Stage("intent_parse", 0.50, 0.50 / _DIALOGUE_SPEEDUP, 10_000),
    ),
    input_bytes=1_200_000,
)

_MB = 1_000_000.0


def preset_slam_sweep(horizon: int = 4000) -> ScenarioSpec:
    """Steady-state bandwidth sweep; one independent section per link rate."""
    bandwidths = (0.512, 1.0, 2.0, 5.0, 20.0)
    return ScenarioSpec(
        name="slam-sweep",
        pipeline=SLAM_PIPELINE,
        sections=[_steady(f"bw_{b:g}", b * _MB, horizon) for b in bandwidths],
        overhead=0.002,
        recommended={"n_alpha": 0.3, "n_x": 0.02, "noise_bound": 0.02},
    )


def preset_grasp_glitch(horizon: int = 4000) -> ScenarioSpec:
    """Mid-run link collapses; one section per (pre, post) bandwidth pair."""
    at = horizon // 2
    pairs = ((10.0, 3.0), (5.0, 1.0), (10.0, 1.0))
    return ScenarioSpec(
        name="grasp-glitch",
        pipeline=GRASP_PIPELINE,
        sections=[
            _glitch(f"g_{int(a)}to{int(b)}", a * _MB, b * _MB, horizon, at) for a, b in pairs
        ],
        overhead=0.003,
        recommended={"n_alpha": 0.3, "n_x": 0.02, "noise_bound": 0.02},
    )


def preset_dialogue_cpu(horizon: int = 6000) -> ScenarioSpec:
    """Robot compute availability halves mid-run, then recovers."""
    a, b = horizon // 3, 2 * horizon // 3
    bw = 0.5 * _MB
    trace = ConditionTrace(
        segments=(
            TraceSegment(0, bw, 1.0),
            TraceSegment(a, bw, 0.5),
            TraceSegment(b, bw, 1.0),
        ),
        horizon=horizon,
    )
    section = SectionSpec(
        name="cpu",
        trace=trace,
        labels=((0, "cpu-full"), (a, "cpu-half"), (b, "cpu-restored")),
    )
    return ScenarioSpec(
        name="dialogue-cpu",
        pipeline=DIALOGUE_PIPELINE,
        sections=[section],
        overhead=0.01,
        recommended={"n_alpha": 0.3, "n_x": 0.02, "noise_bound": 0.02},
        believed_cpu_scale=1.0,
    )


PRESETS = {
    "slam-sweep": preset_slam_sweep,
    "grasp-glitch": preset_grasp_glitch,
    "dialogue-cpu": preset_dialogue_cpu,
}


# ---------------------------------------------------------------------------
# Experiment runner


@dataclass
class FrameSeries:
    """Per-frame metric columns for one arm, parallel arrays of length T."""

    frame_id: np.ndarray
    t: np.ndarray
    split_index: np.ndarray
    forced: np.ndarray
    sigma: np.ndarray
    predicted_e: np.ndarray  # nan where no prediction exists
    observed_e: np.ndarray  # nan where nothing was observed
    latency: np.ndarray
    cpu_rel: np.ndarray
    power_rel: np.ndarray
    bandwidth: np.ndarray
    cumulative_regret: np.ndarray


@dataclass
class ArmResult:
    name: str
    frames: FrameSeries
    regret: RegretReport


@dataclass
class SectionResult:
    name: str
    horizon: int
    labels: tuple[tuple[int, str], ...]
    glitch_frame: int | None
    arms: dict[str, ArmResult]
    update_window: np.ndarray  # elastic arm, bool per frame
    drift_fires: list[int]  # 1-based frames where the detector fired
    checkpoint: dict


@dataclass
class ExperimentResult:
    scenario: str
    pipeline: Pipeline
    sections: list[SectionResult]


@dataclass(frozen=True)
class MetricModel:
    cpu_freq_factor: float = 0.96
    power_base: float = 255.0
    power_per_compute: float = 1670.0


def _series_template(env: SimEnvironment) -> dict:
    T = env.horizon
    return {
        "frame_id": np.arange(T, dtype=np.int64),
        "t": np.arange(1, T + 1, dtype=np.int64),
        "split_index": np.zeros(T, dtype=np.int64),
        "forced": np.zeros(T, dtype=bool),
        "sigma": np.zeros(T),
        "predicted_e": np.full(T, np.nan),
        "observed_e": np.full(T, np.nan),
        "latency": np.zeros(T),
        "cpu_rel": np.zeros(T),
        "power_rel": np.zeros(T),
        "bandwidth": env.bw.copy(),
        "cumulative_regret": np.zeros(T),
    }


def _finish_series(
    cols: dict, env: SimEnvironment, metric: MetricModel
) -> tuple[FrameSeries, RegretReport]:
    splits = cols["split_index"]
    local_time = cols.pop("_local_time")
    lat = cols["latency"]
    cols["cpu_rel"] = metric.cpu_freq_factor * local_time / np.maximum(lat, 1e-9)
    cols["power_rel"] = metric.power_base + metric.power_per_compute * local_time
    report = cumulative_regret(splits, env)
    cols["cumulative_regret"] = report.cumulative
    return FrameSeries(**cols), report


def _run_fixed_arm(
    env: SimEnvironment,
    split: np.ndarray,
    sigmas: np.ndarray,
    rng: np.random.Generator,
    metric: MetricModel,
) -> tuple[FrameSeries, RegretReport]:
    """Shared path for static and oracle arms: no learning, no windows."""
    T = env.horizon
    cols = _series_template(env)
    frames = np.arange(T)
    splits = np.broadcast_to(split, (T,)).astype(np.int64)
    noise = draw_noise_array(env.gt, rng, T)
    elastic = env.elastic_true[frames, splits]
    nonlocal_mask = splits != env.pure_local_index
    observed = np.where(nonlocal_mask, elastic + noise, np.nan)
    local_time = env.local_units[splits] / env.cpu
    cols["split_index"] = splits
    cols["sigma"] = sigmas
    cols["observed_e"] = observed
    cols["latency"] = local_time + np.where(nonlocal_mask, elastic + noise, 0.0)
    cols["_local_time"] = local_time
    return _finish_series(cols, env, metric)


def _run_elastic_arm(
    env: SimEnvironment,
    policy: ElasticPolicy,
    sigmas_norm: np.ndarray,
    rng: np.random.Generator,
    metric: MetricModel,
    sigma_nonkey: float,
    sigma_key: float,
    entropy_threshold: float,
    objective: str = "latency",
):
    T = env.horizon
    cols = _series_template(env)
    local_time = np.zeros(T)
    update_window = np.zeros(T, dtype=bool)
    drift_fires: list[int] = []
    p_idx = env.pure_local_index
    feedback = None
    for t in range(1, T + 1):
        i = t - 1
        weight = step_weight(sigmas_norm[i], entropy_threshold, sigma_nonkey, sigma_key)
        action, rec = policy.step(weight, feedback)
        split = action.split_index
        cols["split_index"][i] = split
        cols["forced"][i] = rec.forced
        cols["sigma"][i] = rec.sigma
        update_window[i] = rec.update_window
        if rec.drift_fired:
            drift_fires.append(t)

        if action.is_pure_local:
            feedback = None
            lat = env.total_true[i, p_idx]
            local_time[i] = env.local_time(p_idx, t)
        else:
            cols["predicted_e"][i] = rec.predicted_e
            noise = draw_noise(env.gt, rng)
            total = env.total_true[i, split] + noise
            if objective == "latency":
                # Observed elastic cost = measured total minus the believed
                # local share; equals the true elastic cost (+noise) when the
                # belief is current, and carries the belief error into the
                # model when not.
                reported = total - env.local_units[split] / policy.believed_cpu_scale
            else:
                # Offloaded work consumes no robot cpu or power, so only
                # measurement noise reaches the learner for the elastic share.
                reported = noise
            cols["observed_e"][i] = reported
            feedback = reported
            if rec.update_window:
                # Local path is authoritative while re-learning; the offload
                # still runs and reports, but the result served is local.
                lat = env.total_true[i, p_idx]
                local_time[i] = env.local_time(p_idx, t)
            else:
                lat = total
                local_time[i] = env.local_time(split, t)
        cols["latency"][i] = lat
    cols["_local_time"] = local_time
    series, report = _finish_series(cols, env, metric)
    return series, report, update_window, drift_fires


def build_policy(
    pipeline: Pipeline,
    norms: ContextNorms,
    horizon: int,
    params: dict,
) -> ElasticPolicy:
    """Assemble a policy from flat config-style parameters."""
    schedule = ForcedSchedule(
        i_param=params["forced_i"],
        horizon=horizon if params.get("horizon_known", True) else None,
        growth=params.get("growth_r", 2.0),
        base_segment=params.get("base_segment", 1000),
    )
    beta_params = BetaParams(
        n_alpha=params["n_alpha"],
        n_x=params["n_x"],
        n_v=params["n_v"],
        epsilon=params["epsilon"],
        sigma_key=params["sigma_key"],
    )
    # The learner only ever sees scalars; the objective picks which scalar.
    # Robot-side cost per unit compute time under each objective:
    cost_scale = {
        "latency": 1.0,
        "cpu": params.get("cpu_freq_factor", 0.96),
        "power": params.get("power_per_compute", 1670.0),
    }[params.get("objective", "latency")]
    return ElasticPolicy(
        pipeline,
        norms,
        schedule,
        beta_params,
        gamma=params["gamma"],
        drift_threshold=params["drift_theta"],
        drift_window=params["drift_window"],
        consecutive_needed=params["consecutive_needed"],
        direction_rule=params["direction_rule"],
        believed_cpu_scale=params["believed_cpu_scale"],
        cost_scale=cost_scale,
    )


def default_norms(pipeline: Pipeline, params: dict) -> ContextNorms:
    byte_scale = params.get("byte_scale") or float(pipeline.input_bytes)
    compute_scale = params.get("compute_scale") or max(pipeline.total_cloud_units, 1e-12)
    return ContextNorms(byte_scale=byte_scale, compute_scale=compute_scale)


def run_section(
    pipeline: Pipeline,
    section: SectionSpec,
    params: dict,
    seed_seq: np.random.SeedSequence,
    metric: MetricModel,
) -> SectionResult:
    norms = default_norms(pipeline, params)
    gt = GroundTruth(
        # transfer time stays bytes / bandwidth exactly: the first entry times
        # reference/bandwidth(t) collapses to byte_scale / bandwidth(t)
        alpha_star=(
            norms.byte_scale / REFERENCE_BANDWIDTH,
            params["cloud_rate"] * norms.compute_scale,
            params["overhead"],
        ),
        noise_bound=params["noise_bound"],
        noise_kind=params["noise_kind"],
        reference_bandwidth=REFERENCE_BANDWIDTH,
    )
    a_norm = float(np.linalg.norm(gt.alpha_star))
    if a_norm > params["n_alpha"]:
        logger.warning(
            "true coefficient norm %.4g exceeds n_alpha=%g; confidence radii "
            "will undercover and exploration may stop early",
            a_norm,
            params["n_alpha"],
        )
    env = SimEnvironment(pipeline, section.trace, gt, norms)
    sigma_child, *arm_children = seed_seq.spawn(1 + len(ARMS))
    sigmas_norm = np.random.default_rng(sigma_child).random(env.horizon)
    sigmas = np.array(
        [
            step_weight(
                s, params["entropy_threshold"], params["sigma_nonkey"], params["sigma_key"]
            ).sigma
            for s in sigmas_norm
        ]
    )

    policy = build_policy(pipeline, norms, env.horizon, params)
    e_series, e_report, window, fires = _run_elastic_arm(
        env,
        policy,
        sigmas_norm,
        np.random.default_rng(arm_children[0]),
        metric,
        params["sigma_nonkey"],
        params["sigma_key"],
        params["entropy_threshold"],
        params.get("objective", "latency"),
    )
    arms = {ARM_ELASTIC: ArmResult(ARM_ELASTIC, e_series, e_report)}

    oracle = env.oracle_splits()
    fixed = {
        ARM_CLOUD: np.zeros(env.horizon, dtype=np.int64),
        ARM_LOCAL: np.full(env.horizon, env.pure_local_index, dtype=np.int64),
        ARM_ORACLE: oracle,
    }
    for child, (name, splits) in zip(arm_children[1:], fixed.items()):
        series, report = _run_fixed_arm(
            env, splits, sigmas, np.random.default_rng(child), metric
        )
        arms[name] = ArmResult(name, series, report)

    return SectionResult(
        name=section.name,
        horizon=env.horizon,
        labels=section.labels,
        glitch_frame=section.glitch_frame,
        arms=arms,
        update_window=window,
        drift_fires=fires,
        checkpoint=policy.snapshot(),
    )


def resolve_scenario(config) -> ScenarioSpec:
    """Map a parsed config onto a scenario spec (preset or custom trace)."""
    if config.preset is not None:
        if config.preset not in PRESETS:
            raise ValueError(
                f"unknown scenario preset {config.preset!r}; known: {sorted(PRESETS)}"
            )
        build = PRESETS[config.preset]
        spec = build(config.horizon) if "horizon" in config.provided else build()
        if config.pipeline is not None:
            spec.pipeline = config.pipeline
        return spec
    if config.pipeline is None or config.trace_segments is None:
        raise ValueError("custom scenarios need both a pipeline and trace_segments")
    segments = tuple(
        TraceSegment(int(s[0]), float(s[1]), float(s[2]), float(s[3]) if len(s) > 3 else 1.0)
        for s in config.trace_segments
    )
    glitches = tuple((int(f), float(b)) for f, b in (config.glitches or ()))
    trace = ConditionTrace(segments=segments, horizon=config.horizon, glitches=glitches)
    labels = tuple((s.start, f"phase{i}") for i, s in enumerate(segments))
    section = SectionSpec(name="custom", trace=trace, labels=labels)
    return ScenarioSpec(
        name="custom",
        pipeline=config.pipeline,
        sections=[section],
        overhead=config.overhead,
        cloud_rate=config.cloud_rate,
    )


def run_experiment(config) -> ExperimentResult:
    """Execute every section of the configured scenario over all four arms."""
    spec = resolve_scenario(config)
    params = config.policy_params()
    # preset calibration fills gaps the user left; explicit keys always win
    for key, value in spec.recommended.items():
        if key not in config.provided:
            params[key] = value
    if "overhead" not in config.provided:
        params["overhead"] = spec.overhead
    if "cloud_rate" not in config.provided:
        params["cloud_rate"] = spec.cloud_rate
    if params["believed_cpu_scale"] is None:
        believed = spec.believed_cpu_scale
        if believed is None:
            believed = spec.sections[0].trace.segments[0].cpu_scale
        params["believed_cpu_scale"] = believed
    metric = MetricModel(
        cpu_freq_factor=params["cpu_freq_factor"],
        power_base=params["power_base"],
        power_per_compute=params["power_per_compute"],
    )
    sections = []
    for index, section in enumerate(spec.sections):
        seq = np.random.SeedSequence([config.seed, index])
        sections.append(run_section(spec.pipeline, section, params, seq, metric))
    return ExperimentResult(scenario=spec.name, pipeline=spec.pipeline, sections=sections)
