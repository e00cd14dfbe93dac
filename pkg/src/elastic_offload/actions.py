"""Pipeline splits, action contexts, and frame weighting.

A computation pipeline is an ordered chain of stages.  An action is a split
point k: stages before k run on the robot, stages from k onward run in the
cloud, and the bytes crossing the split are what gets transmitted.  Split 0 is
full offload, split n (= stage count) is pure-local and transmits nothing.

Frames are weighted by normalized entropy: content-heavy (key) frames get a
larger step weight, which damps exploration on the frames where a bad action
is most expensive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CONTEXT_DIM = 3  # transmit share, remaining cloud share, intercept


@dataclass(frozen=True)
class Stage:
    """One pipeline stage: compute costs in abstract units, output size in bytes."""

    name: str
    local_cost: float
    cloud_cost: float
    output_bytes: int

    def __post_init__(self):
        if not self.name:
            raise ValueError("stage name must be non-empty")
        if self.local_cost < 0:
            raise ValueError(f"stage {self.name!r}: local_cost must be >= 0, got {self.local_cost}")
        if self.cloud_cost < 0:
            raise ValueError(f"stage {self.name!r}: cloud_cost must be >= 0, got {self.cloud_cost}")
        if self.output_bytes < 0:
            raise ValueError(f"stage {self.name!r}: output_bytes must be >= 0, got {self.output_bytes}")


@dataclass(frozen=True)
class Pipeline:
    stages: tuple[Stage, ...]
    input_bytes: int

    def __post_init__(self):
        if len(self.stages) < 1:
            raise ValueError("pipeline needs at least one stage")
        if self.input_bytes <= 0:
            raise ValueError(f"input_bytes must be > 0, got {self.input_bytes}")

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    @property
    def total_local_units(self) -> float:
        return float(sum(s.local_cost for s in self.stages))

    @property
    def total_cloud_units(self) -> float:
        return float(sum(s.cloud_cost for s in self.stages))


@dataclass(frozen=True)
class Action:
    """Split decision.  transmit_bytes is 0 iff the action is pure-local."""

    split_index: int
    transmit_bytes: int
    is_pure_local: bool


@dataclass(frozen=True)
class ContextNorms:
    """Scales that map raw bytes/compute-units onto O(1) context features."""

    byte_scale: float
    compute_scale: float

    def __post_init__(self):
        if self.byte_scale <= 0 or self.compute_scale <= 0:
            raise ValueError("context scales must be > 0")


@dataclass(frozen=True)
class FrameWeight:
    entropy_norm: float
    sigma: float


def enumerate_actions(pipeline: Pipeline) -> tuple[Action, ...]:
    """All n+1 split points, ascending; the last one is pure-local."""
    n = pipeline.n_stages
    out = []
    for k in range(n + 1):
        if k == n:
            out.append(Action(split_index=k, transmit_bytes=0, is_pure_local=True))
        else:
            tx = pipeline.input_bytes if k == 0 else pipeline.stages[k - 1].output_bytes
            out.append(Action(split_index=k, transmit_bytes=tx, is_pure_local=False))
    return tuple(out)


def context_of(pipeline: Pipeline, action: Action, norms: ContextNorms) -> np.ndarray:
    """Context vector [transmit share, remaining cloud share, intercept].

    Pure-local actions map to the zero vector so the learned model never has
    to explain on-robot cost; the intercept is 1 for every other action.
    """
    if action.is_pure_local:
        return np.zeros(CONTEXT_DIM)
    remaining_cloud = sum(s.cloud_cost for s in pipeline.stages[action.split_index :])
    return np.array(
        [
            action.transmit_bytes / norms.byte_scale,
            remaining_cloud / norms.compute_scale,
            1.0,
        ]
    )


def on_robot_cost(pipeline: Pipeline, action: Action, cpu_scale: float) -> float:
    """Time spent computing on the robot: prefix compute units / cpu_scale."""
    if cpu_scale <= 0:
        raise ValueError(f"cpu_scale must be > 0, got {cpu_scale}")
    units = sum(s.local_cost for s in pipeline.stages[: action.split_index])
    return units / cpu_scale


def frame_entropy(frame, max_entropy: float = 8.0, base: float = 2.0) -> float:
    """Normalized Shannon entropy of the frame's byte histogram, in [0, 1].

    ``frame`` may be bytes or any array of non-negative integer symbols.
    """
    if max_entropy <= 0:
        raise ValueError(f"max_entropy must be > 0, got {max_entropy}")
    if base <= 1:
        raise ValueError(f"base must be > 1, got {base}")
    symbols = np.frombuffer(frame, dtype=np.uint8) if isinstance(frame, (bytes, bytearray)) else np.asarray(frame)
    if symbols.size == 0:
        raise ValueError("cannot compute entropy of an empty frame")
    _, counts = np.unique(symbols, return_counts=True)
    pr = counts / symbols.size
    h = float(-(pr * (np.log(pr) / np.log(base))).sum())
    return min(max(h, 0.0) / max_entropy, 1.0)


def frame_entropy_pairs(frame, max_entropy: float = 16.0, base: float = 2.0) -> float:
    """Entropy over adjacent symbol pairs; captures short-range structure the
    marginal histogram misses.  Needs at least two symbols."""
    symbols = np.frombuffer(frame, dtype=np.uint8) if isinstance(frame, (bytes, bytearray)) else np.asarray(frame)
    if symbols.size < 2:
        raise ValueError("pair entropy needs at least two symbols")
    pairs = symbols[:-1].astype(np.int64) * 256 + symbols[1:].astype(np.int64)
    return frame_entropy(pairs, max_entropy=max_entropy, base=base)


def step_weight(
    entropy_norm: float,
    threshold: float,
    sigma_nonkey: float,
    sigma_key: float,
) -> FrameWeight:
    """Quantize a frame's entropy into the two-level step weight.

    Frames at or above the threshold count as key frames (ties go to key).
    """
    if not 0.0 <= entropy_norm <= 1.0:
        raise ValueError(f"entropy_norm must lie in [0, 1], got {entropy_norm}")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    if not 0.0 < sigma_nonkey < sigma_key < 1.0:
        raise ValueError(
            f"need 0 < sigma_nonkey < sigma_key < 1, got {sigma_nonkey}, {sigma_key}"
        )
    sigma = sigma_key if entropy_norm >= threshold else sigma_nonkey
    return FrameWeight(entropy_norm=entropy_norm, sigma=sigma)
