"""Online ridge regression with an optimism-adjusted cost prediction.

The elastic (off-robot) cost of an action is modelled as a linear function of
its context vector.  The model is fit one observation at a time: every
completed offload contributes a rank-one update to the regularized Gram matrix
``Q`` and the moment vector ``p``.  Predictions are optimistic: a confidence
width proportional to the model's uncertainty along the queried context is
subtracted from the point estimate, so actions the model knows little about
look cheap until they have actually been tried.

Every operation here is pure: state transitions return a fresh
:class:`PredictorState` and never mutate their argument.  A single decision
loop owns one state chain; concurrent writers are not supported.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BetaParams:
    """Declared environment bounds that size the exploration weight.

    n_alpha   -- bound on the norm of the true coefficient vector
    n_x       -- bound on the magnitude of observation noise
    n_v       -- bound on the norm of any context vector
    epsilon   -- confidence slack, in (0, 1)
    sigma_key -- step weight assigned to key frames, in [0, 1)
    """

    n_alpha: float
    n_x: float
    n_v: float
    epsilon: float
    sigma_key: float

    def __post_init__(self):
        if self.n_alpha <= 0:
            raise ValueError(f"n_alpha must be > 0, got {self.n_alpha}")
        if self.n_x < 0:
            raise ValueError(f"n_x must be >= 0, got {self.n_x}")
        if self.n_v <= 0:
            raise ValueError(f"n_v must be > 0, got {self.n_v}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if not 0.0 <= self.sigma_key < 1.0:
            raise ValueError(f"sigma_key must lie in [0, 1), got {self.sigma_key}")


@dataclass(frozen=True)
class PredictorState:
    """Sufficient statistics of the ridge fit.

    q is the regularized Gram matrix (gamma * I plus the sum of observed
    context outer products), p the response-weighted context sum, and m the
    number of observations folded in so far.
    """

    q: np.ndarray
    p: np.ndarray
    gamma: float
    m: int

    @property
    def d(self) -> int:
        return self.p.shape[0]


def init_predictor(gamma: float, d: int) -> PredictorState:
    """Fresh state: q = gamma * I, p = 0, no observations."""
    if gamma < 1.0:
        raise ValueError(f"gamma must be >= 1, got {gamma}")
    if d < 1:
        raise ValueError(f"context dimension must be >= 1, got {d}")
    return PredictorState(q=np.eye(d) * gamma, p=np.zeros(d), gamma=float(gamma), m=0)


def estimate_coefficients(state: PredictorState) -> np.ndarray:
    """Ridge solution alpha-hat = q^-1 p.

    q is symmetric positive definite by construction (gamma >= 1 plus PSD
    rank-one terms), so a direct solve is stable at the dimensions used here.
    """
    return np.linalg.solve(state.q, state.p)


def compute_beta(params: BetaParams, m: int, d: int) -> float:
    """Exploration weight for a model holding ``m`` observations.

    beta = (n_alpha + n_x * sqrt(d * ln((1 + m * n_v^2) / epsilon)))
           / (1 - sigma_key)

    Natural log.  The argument of the log is >= 1/epsilon > 1 for every
    m >= 0, so beta is well defined and non-decreasing in m, d, and each of
    the declared bounds.
    """
    if m < 0:
        raise ValueError(f"observation count must be >= 0, got {m}")
    if d < 1:
        raise ValueError(f"context dimension must be >= 1, got {d}")
    grown = (1.0 + m * params.n_v * params.n_v) / params.epsilon
    return (params.n_alpha + params.n_x * math.sqrt(d * math.log(grown))) / (
        1.0 - params.sigma_key
    )


def predict_elastic_cost(
    state: PredictorState,
    v: np.ndarray,
    sigma: float,
    beta: float,
    params: BetaParams | None = None,
) -> float:
    """Optimistic cost estimate: alpha-hat . v - beta * sqrt((1-sigma) v^T q^-1 v).

    sigma is the step weight of the current frame; heavier frames (sigma
    closer to 1) shrink the exploration bonus.  A zero context yields exactly
    0.0, so the pure-local action is never distorted by exploration.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (state.d,):
        raise ValueError(f"context has shape {v.shape}, expected ({state.d},)")
    if not 0.0 <= sigma <= 1.0:
        raise ValueError(f"sigma must lie in [0, 1], got {sigma}")
    if params is not None:
        norm = float(np.linalg.norm(v))
        if norm > params.n_v + 1e-12:
            # Soft contract: the bound only affects beta's validity, not the math.
            logger.warning("context norm %.6g exceeds declared n_v=%.6g", norm, params.n_v)
    point = float(estimate_coefficients(state) @ v)
    width_sq = float(v @ np.linalg.solve(state.q, v))
    width = math.sqrt(max(width_sq, 0.0))  # clamp fp residue on PD quadratic form
    return point - beta * math.sqrt(max(1.0 - sigma, 0.0)) * width


def observe_update(state: PredictorState, v: np.ndarray, observed_e: float) -> PredictorState:
    """Fold one completed observation (context, elastic cost) into the fit."""
    v = np.asarray(v, dtype=float)
    if v.shape != (state.d,):
        raise ValueError(f"context has shape {v.shape}, expected ({state.d},)")
    return PredictorState(
        q=state.q + np.outer(v, v),
        p=state.p + v * float(observed_e),
        gamma=state.gamma,
        m=state.m + 1,
    )


def hold_update(state: PredictorState) -> PredictorState:
    """No observation this step (pure-local action): the fit is unchanged."""
    return state
