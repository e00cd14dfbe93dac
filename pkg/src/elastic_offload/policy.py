"""Online split selection: forced sampling, optimistic scoring, drift recovery.

Each frame the policy scores every split as (known on-robot cost) plus the
predictor's optimistic elastic-cost estimate, and takes the argmin.  Three
mechanisms shape the schedule beyond plain greed:

* Forced sampling.  A deterministic subsequence of frames must pick a
  non-local action, which keeps fresh off-robot observations flowing even when
  the pure-local action currently looks best.  With a known horizon T the
  subsequence is every round(i_param)-th frame; without one, the step widens
  geometrically segment by segment.

* Single-direction updates.  After each observed frame the candidate set is
  restricted toward the direction that last proved wrong: if the model
  over-predicted the cost, only actions transmitting less than the last one
  (plus the last action and pure-local) stay eligible; under-prediction
  mirrors this toward more data.  ``direction_rule="inverted"`` swaps the
  mapping for experimentation.

* Drift recovery.  When the relative prediction error stays above a threshold
  for enough consecutive observed frames, the fit is discarded, forced
  sampling restarts at full density, and an update window opens during which
  the runtime serves locally computed results while exploration re-learns the
  environment.  The window closes after the same number of consecutive
  accurate observations.  Only confident misses count toward firing: a miss on
  a context the model has barely sampled (optimism radius wider than the
  allowed error) is expected exploration, not evidence the world changed.

The decision sequence is fully deterministic given the hyperparameters, the
frame weights, and the feedback values.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .actions import (
    Action,
    ContextNorms,
    FrameWeight,
    Pipeline,
    context_of,
    enumerate_actions,
    on_robot_cost,
)
from .predictor import (
    BetaParams,
    PredictorState,
    compute_beta,
    estimate_coefficients,
    init_predictor,
    observe_update,
)


@dataclass(frozen=True)
class ForcedSchedule:
    """Deterministic forced-sampling schedule.

    horizon is the known frame budget T, or None for the geometric
    unknown-horizon mode driven by (base_segment, growth).
    """

    i_param: float
    horizon: int | None = None
    growth: float = 2.0
    base_segment: int = 1000

    def __post_init__(self):
        if self.i_param <= 1.0:
            raise ValueError(f"i_param must be > 1, got {self.i_param}")
        if self.horizon is not None:
            if self.horizon < 2:
                raise ValueError(f"horizon must be >= 2, got {self.horizon}")
            if self.i_param > math.sqrt(self.horizon) + 1e-12:
                raise ValueError(
                    f"need i_param <= sqrt(horizon); got {self.i_param} vs T={self.horizon}"
                )
        else:
            if self.growth <= 1.0:
                raise ValueError(f"growth must be > 1, got {self.growth}")
            if self.base_segment < 1:
                raise ValueError(f"base_segment must be >= 1, got {self.base_segment}")

    def step_at(self, t: int) -> int:
        """Forced-sampling stride in effect at (schedule-local) frame t."""
        if self.horizon is not None:
            return max(2, round(self.i_param))
        k = 0
        bound = self.base_segment
        while t > bound:
            k += 1
            bound = self.base_segment * self.growth**k
        return max(2, round(self.i_param * self.growth ** (k / 2.0)))

    def is_forced(self, t: int) -> bool:
        """True when schedule-local frame t must pick a non-local action."""
        if t < 1:
            raise ValueError(f"frame index must be >= 1, got {t}")
        if self.horizon is not None and t > self.horizon:
            return False
        return t % self.step_at(t) == 0


def forced_sequence(horizon: int, i_param: float) -> list[int]:
    """Explicit known-horizon forced set: multiples of the stride up to T."""
    sched = ForcedSchedule(i_param=i_param, horizon=horizon)
    step = sched.step_at(1)
    return list(range(step, horizon + 1, step))


def next_forced_unknown_horizon(state: ForcedSchedule, t: int) -> bool:
    """Forced test in the open-ended mode, where the stride widens by segment.

    Segment k covers frames in (base·growth^(k-1), base·growth^k]; inside it
    the stride is round(i_param·growth^(k/2)), so forced density thins as the
    run outgrows each segment.
    """
    if state.horizon is not None:
        raise ValueError("schedule has a known horizon; use is_forced directly")
    return state.is_forced(t)


@dataclass
class DirectionFilter:
    """Most recent observed (action, prediction, outcome) triple, if any."""

    last_action: Action | None = None
    last_predicted: float = 0.0
    last_actual: float = 0.0


def direction_filter(
    actions: tuple[Action, ...],
    filt: DirectionFilter,
    rule: str = "paper",
) -> list[Action]:
    """Apply the single-direction restriction to the action set.

    Never empties the set: the last observed action and the pure-local action
    always survive.  Unpopulated filters and exact prediction hits leave the
    set unchanged.
    """
    if rule not in ("paper", "inverted"):
        raise ValueError(f"direction_rule must be 'paper' or 'inverted', got {rule!r}")
    if filt.last_action is None or filt.last_predicted == filt.last_actual:
        return list(actions)
    toward_less = filt.last_predicted > filt.last_actual
    if rule == "inverted":
        toward_less = not toward_less
    pivot = filt.last_action.transmit_bytes
    kept = []
    for a in actions:
        directional = a.transmit_bytes < pivot if toward_less else a.transmit_bytes > pivot
        if directional or a.is_pure_local or a.split_index == filt.last_action.split_index:
            kept.append(a)
    return kept


class DriftDetector:
    """Streak counter over relative prediction errors of observed frames."""

    def __init__(
        self,
        threshold: float,
        window: int = 16,
        consecutive_needed: int = 3,
        floor: float = 1e-6,
    ):
        if threshold <= 0:
            raise ValueError(f"threshold must be > 0, got {threshold}")
        if window < 1 or consecutive_needed < 1:
            raise ValueError("window and consecutive_needed must be >= 1")
        self.threshold = threshold
        self.consecutive_needed = consecutive_needed
        self.floor = floor
        self.pairs: deque[tuple[float, float]] = deque(maxlen=window)
        self.bad_streak = 0
        self.good_streak = 0

    def relative_error(self, predicted: float, actual: float) -> float:
        return abs(predicted - actual) / max(abs(actual), self.floor)

    def update(self, predicted: float, actual: float) -> bool:
        """Record one observed frame; True when the bad streak reaches the bar."""
        self.pairs.append((predicted, actual))
        if self.relative_error(predicted, actual) > self.threshold:
            self.bad_streak += 1
            self.good_streak = 0
        else:
            self.good_streak += 1
            self.bad_streak = 0
        return self.bad_streak >= self.consecutive_needed

    def recovered(self) -> bool:
        return self.good_streak >= self.consecutive_needed

    def reset(self):
        self.pairs.clear()
        self.bad_streak = 0
        self.good_streak = 0


def detect_drift(detector: DriftDetector, predicted: float, actual: float) -> bool:
    return detector.update(predicted, actual)


@dataclass
class DecisionRecord:
    """Per-frame audit record of one selection."""

    t: int
    forced: bool
    sigma: float
    beta: float
    scores: np.ndarray  # one entry per split index; +inf for filtered-out splits
    chosen_split: int
    predicted_e: float  # point estimate for the chosen action (0 for pure-local)
    update_window: bool
    drift_fired: bool


def select_action(
    actions: tuple[Action, ...],
    contexts: np.ndarray,
    local_costs: np.ndarray,
    state: PredictorState,
    beta: float,
    sigma: float,
    forced: bool,
    filt: DirectionFilter,
    rule: str = "paper",
) -> tuple[int, np.ndarray]:
    """Argmin of optimistic total cost over the eligible splits.

    Forced frames drop the pure-local action; otherwise the direction filter
    applies.  Ties break toward the smaller transmit size, then the smaller
    split index.  Returns (index into ``actions``, per-action score vector);
    ineligible actions carry +inf scores.
    """
    alpha = estimate_coefficients(state)
    solved = np.linalg.solve(state.q, contexts.T)  # d x n
    widths = np.sqrt(np.maximum(np.einsum("nd,dn->n", contexts, solved), 0.0))
    scores = local_costs + contexts @ alpha - beta * math.sqrt(max(1.0 - sigma, 0.0)) * widths

    if forced:
        eligible = [i for i, a in enumerate(actions) if not a.is_pure_local]
    else:
        allowed = {a.split_index for a in direction_filter(actions, filt, rule)}
        eligible = [i for i, a in enumerate(actions) if a.split_index in allowed]

    masked = scores.copy()
    for i in range(len(actions)):
        if i not in eligible:
            masked[i] = np.inf
    best = min(
        eligible,
        key=lambda i: (scores[i], actions[i].transmit_bytes, actions[i].split_index),
    )
    return best, masked


class ElasticPolicy:
    """Sequential decision loop for one elastic node.

    Construct once per run; call :meth:`step` exactly once per frame with the
    frame's weight and the previous frame's feedback (None when the previous
    action was pure-local or its sample was discarded).
    """

    def __init__(
        self,
        pipeline: Pipeline,
        norms: ContextNorms,
        schedule: ForcedSchedule,
        beta_params: BetaParams,
        gamma: float = 1.0,
        drift_threshold: float = 0.5,
        drift_window: int = 16,
        consecutive_needed: int = 3,
        direction_rule: str = "paper",
        believed_cpu_scale: float = 1.0,
        cost_scale: float = 1.0,
    ):
        self.pipeline = pipeline
        self.norms = norms
        self.schedule = schedule
        self.beta_params = beta_params
        self.direction_rule = direction_rule
        self.believed_cpu_scale = believed_cpu_scale
        self.cost_scale = cost_scale

        self.actions = enumerate_actions(pipeline)
        self.contexts = np.stack([context_of(pipeline, a, norms) for a in self.actions])
        # cost_scale converts believed compute time into the optimized metric's
        # units so the known on-robot share and the learned elastic share add.
        self.local_costs = cost_scale * np.array(
            [on_robot_cost(pipeline, a, believed_cpu_scale) for a in self.actions]
        )

        self.state = init_predictor(gamma, self.contexts.shape[1])
        self.filter = DirectionFilter()
        self.detector = DriftDetector(drift_threshold, drift_window, consecutive_needed)
        self.t = 0
        self.epoch_start = 0  # forced-sampling density restarts from here
        self.update_window = False
        # (action idx, point prediction, model was confident about it)
        self._pending: tuple[int, float, bool] | None = None

    # -- feedback ---------------------------------------------------------

    def apply_feedback(self, actual: float) -> bool:
        """Fold in the observed elastic cost of the last non-local action.

        Returns True when this observation fired the drift detector.
        """
        if self._pending is None:
            raise RuntimeError("feedback arrived with no observable action outstanding")
        idx, predicted, confident = self._pending
        self._pending = None

        miss = self.detector.relative_error(predicted, actual) > self.detector.threshold
        if miss and not confident:
            fired = False  # expected exploration miss; neither drift nor recovery
        else:
            fired = self.detector.update(predicted, actual)
        if fired and not self.update_window:
            self._reset_for_drift()
            return True
        # Inside an update window the detector only counts toward recovery.
        if self.update_window and self.detector.recovered():
            self.update_window = False
        self.state = observe_update(self.state, self.contexts[idx], actual)
        self.filter = DirectionFilter(
            last_action=self.actions[idx], last_predicted=predicted, last_actual=actual
        )
        return False

    def _reset_for_drift(self):
        # Discard the fit and everything derived from it; keep density high
        # until predictions stabilize again.
        self.state = init_predictor(self.state.gamma, self.state.d)
        self.filter = DirectionFilter()
        self.detector.reset()
        self.epoch_start = self.t
        self.update_window = True

    # -- per-frame decision ------------------------------------------------

    def step(self, frame: FrameWeight, feedback: float | None = None) -> tuple[Action, DecisionRecord]:
        if feedback is not None:
            if self._pending is None:
                raise ValueError("feedback supplied for a pure-local (unobservable) frame")
            drift_fired = self.apply_feedback(feedback)
        else:
            drift_fired = False
            self._pending = None  # sample discarded or nothing to observe

        self.t += 1
        local_t = self.t - self.epoch_start
        forced = self.schedule.is_forced(local_t) if local_t >= 1 else False
        beta = compute_beta(self.beta_params, self.state.m, self.state.d)

        idx, scores = select_action(
            self.actions,
            self.contexts,
            self.local_costs,
            self.state,
            beta,
            frame.sigma,
            forced,
            self.filter,
            self.direction_rule,
        )
        action = self.actions[idx]
        if action.is_pure_local:
            predicted = 0.0
            self._pending = None
        else:
            v = self.contexts[idx]
            predicted = float(estimate_coefficients(self.state) @ v)
            width = math.sqrt(max(float(v @ np.linalg.solve(self.state.q, v)), 0.0))
            # confident = the model's own optimism radius already promises the
            # relative accuracy the drift detector demands
            confident = beta * width <= self.detector.threshold * abs(predicted)
            self._pending = (idx, predicted, confident)

        record = DecisionRecord(
            t=self.t,
            forced=forced,
            sigma=frame.sigma,
            beta=beta,
            scores=scores,
            chosen_split=action.split_index,
            predicted_e=predicted,
            update_window=self.update_window,
            drift_fired=drift_fired,
        )
        return action, record

    # -- introspection ------------------------------------------------------

    def snapshot(self) -> dict:
        """JSON-ready view of the learner, for checkpoints."""
        return {
            "gamma": self.state.gamma,
            "q": self.state.q.tolist(),
            "p": self.state.p.tolist(),
            "m": self.state.m,
            "t": self.t,
            "epoch_start": self.epoch_start,
            "update_window": self.update_window,
        }

    def restore(self, snap: dict):
        self.state = PredictorState(
            q=np.array(snap["q"], dtype=float),
            p=np.array(snap["p"], dtype=float),
            gamma=float(snap["gamma"]),
            m=int(snap["m"]),
        )
        self.t = int(snap["t"])
        self.epoch_start = int(snap["epoch_start"])
        self.update_window = bool(snap["update_window"])
        self._pending = None
