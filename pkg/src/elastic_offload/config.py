"""Experiment configuration: flat YAML keys, strict validation.

Unknown keys are rejected with a closest-match suggestion rather than
silently ignored, and every range violation names the key and the allowed
range.  All defaults live in one table below so the documentation cannot
drift from the code.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .actions import Pipeline, Stage


class ConfigError(Exception):
    """Base class; the CLI maps these to exit code 2."""


class ParseError(ConfigError):
    pass


class RangeError(ConfigError):
    pass


class UnknownKeyError(ConfigError):
    pass


# key -> (default, description)
DEFAULTS = {
    "mode": ("sim", "execution mode: sim | live"),
    "preset": (None, "scenario preset name, or null for a custom trace"),
    "seed": (0, "master RNG seed (non-negative integer)"),
    "out": ("results", "output directory for CSVs, summaries, figures"),
    "horizon": (20000, "frames per run for custom scenarios (presets carry their own)"),
    "figures": (True, "render PNG figures next to the CSV output"),
    "objective": ("latency", "metric the learner minimizes: latency | power | cpu"),
    # policy
    "gamma": (1.0, "ridge regularizer, >= 1"),
    "forced_i": (10.0, "forced-sampling parameter I, 1 < I < sqrt(horizon)"),
    "horizon_known": (True, "use the fixed-stride schedule (else geometric segments)"),
    "growth_r": (2.0, "segment growth factor r for the unknown-horizon schedule, > 1"),
    "base_segment": (1000, "first segment length for the unknown-horizon schedule"),
    "drift_theta": (0.5, "relative prediction-error threshold for drift, > 0"),
    "drift_window": (16, "ring-buffer length of recent (predicted, actual) pairs"),
    "consecutive_needed": (3, "consecutive bad/good observed frames to open/close a window"),
    "sigma_nonkey": (0.2, "step weight for low-entropy frames, in (0, 1)"),
    "sigma_key": (0.8, "step weight for key frames, in (0, 1), > sigma_nonkey"),
    "entropy_threshold": (0.5, "normalized entropy at/above which a frame is key"),
    "entropy_mode": ("marginal", "frame entropy estimator: marginal | pairs"),
    "n_alpha": (0.5, "declared bound on the coefficient norm, > 0"),
    "n_x": (0.02, "declared bound on observation noise, >= 0"),
    "n_v": (2.0, "declared bound on context norms, > 0"),
    "epsilon": (0.1, "confidence slack in (0, 1)"),
    "direction_rule": ("paper", "single-direction update mapping: paper | inverted"),
    "believed_cpu_scale": (None, "robot cpu factor the policy assumes (default: first segment)"),
    # environment
    "noise_kind": ("uniform", "observation noise: uniform | gaussian (truncated)"),
    "noise_bound": (0.02, "hard bound on observation noise, >= 0"),
    "cloud_rate": (1.0, "cloud seconds per compute unit, > 0"),
    "overhead": (0.01, "fixed per-offload overhead, >= 0"),
    "byte_scale": (None, "context byte normalizer (default: pipeline input size)"),
    "compute_scale": (None, "context cloud-unit normalizer (default: pipeline cloud total)"),
    "warmup_frames": (None, "frames dropped from summary means (default: 10% capped at 500)"),
    # metric model
    "cpu_freq_factor": (0.96, "relative-CPU factor applied to the local compute share"),
    "power_base": (255.0, "relative power at zero local compute"),
    "power_per_compute": (1670.0, "relative power per unit of local compute time"),
    # custom scenario
    "trace_segments": (None, "list of [start, bandwidth, cpu_scale(, cloud_scale)] rows"),
    "glitches": (None, "list of [frame, bandwidth] override events"),
    # live mode
    "endpoint": (None, "release node address host:port"),
    "listen": (None, "release node listen address (release subcommand)"),
    "frames": (2000, "frame count for live runs"),
    "frame_bytes": (65536, "synthetic frame size for live runs"),
    "spawn_release": (False, "run a loopback release server inside the harness"),
    "timeout_floor": (1.0, "minimum offload timeout in seconds"),
    "timeout_factor": (5.0, "timeout as a multiple of the rolling mean round trip"),
    "timeout_feedback": ("pessimistic", "on timeout: pessimistic (bound as actual) | discard"),
    "pipeline": (None, "pipeline table: {input_bytes, stages: [...]}"),
}

_STAGE_KEYS = ("name", "local_cost", "cloud_cost", "output_bytes")

_CHOICES = {
    "mode": ("sim", "live"),
    "objective": ("latency", "power", "cpu"),
    "entropy_mode": ("marginal", "pairs"),
    "direction_rule": ("paper", "inverted"),
    "noise_kind": ("uniform", "gaussian"),
    "timeout_feedback": ("pessimistic", "discard"),
}

# keys handed to the simulator/policy builders as one flat dict
_PARAM_KEYS = (
    "objective",
    "gamma",
    "forced_i",
    "horizon_known",
    "growth_r",
    "base_segment",
    "drift_theta",
    "drift_window",
    "consecutive_needed",
    "sigma_nonkey",
    "sigma_key",
    "entropy_threshold",
    "entropy_mode",
    "n_alpha",
    "n_x",
    "n_v",
    "epsilon",
    "direction_rule",
    "believed_cpu_scale",
    "noise_kind",
    "noise_bound",
    "cloud_rate",
    "overhead",
    "byte_scale",
    "compute_scale",
    "warmup_frames",
    "cpu_freq_factor",
    "power_base",
    "power_per_compute",
)


@dataclass
class ExperimentConfig:
    values: dict
    provided: frozenset = field(default_factory=frozenset)

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def policy_params(self) -> dict:
        return {k: self.values[k] for k in _PARAM_KEYS}

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        cleaned = {k: v for k, v in overrides.items() if v is not None}
        values = dict(self.values)
        values.update(cleaned)
        _validate(values)
        return ExperimentConfig(values=values, provided=self.provided | frozenset(cleaned))


def _suggest(key: str, known) -> str:
    close = difflib.get_close_matches(key, known, n=1)
    return f" (did you mean {close[0]!r}?)" if close else ""


def _require_number(key: str, value, lo=None, hi=None, *, integer=False,
                    lo_open=False, hi_open=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise RangeError(f"{key}: expected a number, got {value!r}")
    if integer and not isinstance(value, int):
        raise RangeError(f"{key}: expected an integer, got {value!r}")
    if lo is not None and (value <= lo if lo_open else value < lo):
        bound = f"> {lo}" if lo_open else f">= {lo}"
        raise RangeError(f"{key}: must be {bound}, got {value}")
    if hi is not None and (value >= hi if hi_open else value > hi):
        bound = f"< {hi}" if hi_open else f"<= {hi}"
        raise RangeError(f"{key}: must be {bound}, got {value}")
    return value


def _parse_pipeline(raw) -> Pipeline:
    if not isinstance(raw, dict):
        raise ParseError("pipeline: expected a mapping with input_bytes and stages")
    unknown = set(raw) - {"input_bytes", "stages"}
    for key in sorted(unknown):
        raise UnknownKeyError(
            f"pipeline.{key}: unknown key{_suggest(key, ('input_bytes', 'stages'))}"
        )
    if "input_bytes" not in raw or "stages" not in raw:
        raise ParseError("pipeline: both input_bytes and stages are required")
    _require_number("pipeline.input_bytes", raw["input_bytes"], lo=0, lo_open=True, integer=True)
    stages_raw = raw["stages"]
    if not isinstance(stages_raw, list) or not stages_raw:
        raise ParseError("pipeline.stages: expected a non-empty list of stage mappings")
    stages = []
    for i, item in enumerate(stages_raw):
        if not isinstance(item, dict):
            raise ParseError(f"pipeline.stages[{i}]: expected a mapping")
        for key in sorted(set(item) - set(_STAGE_KEYS)):
            raise UnknownKeyError(
                f"pipeline.stages[{i}].{key}: unknown key{_suggest(key, _STAGE_KEYS)}"
            )
        missing = [k for k in _STAGE_KEYS if k not in item]
        if missing:
            raise ParseError(f"pipeline.stages[{i}]: missing keys {missing}")
        if not isinstance(item["name"], str) or not item["name"]:
            raise ParseError(f"pipeline.stages[{i}].name: expected a non-empty string")
        _require_number(f"pipeline.stages[{i}].local_cost", item["local_cost"], lo=0)
        _require_number(f"pipeline.stages[{i}].cloud_cost", item["cloud_cost"], lo=0)
        _require_number(
            f"pipeline.stages[{i}].output_bytes", item["output_bytes"], lo=0, integer=True
        )
        stages.append(
            Stage(
                name=item["name"],
                local_cost=float(item["local_cost"]),
                cloud_cost=float(item["cloud_cost"]),
                output_bytes=int(item["output_bytes"]),
            )
        )
    return Pipeline(stages=tuple(stages), input_bytes=int(raw["input_bytes"]))


def _parse_trace_segments(raw):
    if not isinstance(raw, list) or not raw:
        raise ParseError("trace_segments: expected a non-empty list of rows")
    rows = []
    for i, row in enumerate(raw):
        if not isinstance(row, list) or len(row) not in (3, 4):
            raise ParseError(
                f"trace_segments[{i}]: expected [start, bandwidth, cpu_scale(, cloud_scale)]"
            )
        _require_number(f"trace_segments[{i}].start", row[0], lo=0, integer=True)
        _require_number(f"trace_segments[{i}].bandwidth", row[1], lo=0, lo_open=True)
        _require_number(f"trace_segments[{i}].cpu_scale", row[2], lo=0, lo_open=True)
        if len(row) == 4:
            _require_number(f"trace_segments[{i}].cloud_scale", row[3], lo=0, lo_open=True)
        rows.append([int(row[0])] + [float(x) for x in row[1:]])
    return rows


def _parse_glitches(raw):
    if not isinstance(raw, list):
        raise ParseError("glitches: expected a list of [frame, bandwidth] rows")
    rows = []
    for i, row in enumerate(raw):
        if not isinstance(row, list) or len(row) != 2:
            raise ParseError(f"glitches[{i}]: expected [frame, bandwidth]")
        _require_number(f"glitches[{i}].frame", row[0], lo=0, integer=True)
        _require_number(f"glitches[{i}].bandwidth", row[1], lo=0, lo_open=True)
        rows.append([int(row[0]), float(row[1])])
    return rows


def _validate(values: dict):
    v = values
    for key, choices in _CHOICES.items():
        if v[key] not in choices:
            raise RangeError(f"{key}: must be one of {choices}, got {v[key]!r}")
    _require_number("seed", v["seed"], lo=0, integer=True)
    _require_number("horizon", v["horizon"], lo=2, integer=True)
    _require_number("gamma", v["gamma"], lo=1)
    _require_number("forced_i", v["forced_i"], lo=1, lo_open=True)
    _require_number("growth_r", v["growth_r"], lo=1, lo_open=True)
    _require_number("base_segment", v["base_segment"], lo=1, integer=True)
    _require_number("drift_theta", v["drift_theta"], lo=0, lo_open=True)
    _require_number("drift_window", v["drift_window"], lo=1, integer=True)
    _require_number("consecutive_needed", v["consecutive_needed"], lo=1, integer=True)
    _require_number("sigma_nonkey", v["sigma_nonkey"], lo=0, hi=1, lo_open=True, hi_open=True)
    _require_number("sigma_key", v["sigma_key"], lo=0, hi=1, lo_open=True, hi_open=True)
    if not v["sigma_nonkey"] < v["sigma_key"]:
        raise RangeError(
            f"sigma_nonkey must be < sigma_key, got {v['sigma_nonkey']} vs {v['sigma_key']}"
        )
    _require_number("entropy_threshold", v["entropy_threshold"], lo=0, hi=1)
    _require_number("n_alpha", v["n_alpha"], lo=0, lo_open=True)
    _require_number("n_x", v["n_x"], lo=0)
    _require_number("n_v", v["n_v"], lo=0, lo_open=True)
    _require_number("epsilon", v["epsilon"], lo=0, hi=1, lo_open=True, hi_open=True)
    _require_number("noise_bound", v["noise_bound"], lo=0)
    _require_number("cloud_rate", v["cloud_rate"], lo=0, lo_open=True)
    _require_number("overhead", v["overhead"], lo=0)
    _require_number("frames", v["frames"], lo=1, integer=True)
    _require_number("frame_bytes", v["frame_bytes"], lo=1, integer=True)
    _require_number("timeout_floor", v["timeout_floor"], lo=0, lo_open=True)
    _require_number("timeout_factor", v["timeout_factor"], lo=1)
    for key in ("believed_cpu_scale", "byte_scale", "compute_scale"):
        if v[key] is not None:
            _require_number(key, v[key], lo=0, lo_open=True)
    if v["warmup_frames"] is not None:
        _require_number("warmup_frames", v["warmup_frames"], lo=0, integer=True)
    for key in ("figures", "horizon_known", "spawn_release"):
        if not isinstance(v[key], bool):
            raise RangeError(f"{key}: expected true or false, got {v[key]!r}")
    for key in ("preset", "endpoint", "listen"):
        if v[key] is not None and not isinstance(v[key], str):
            raise RangeError(f"{key}: expected a string, got {v[key]!r}")
    if v["mode"] == "sim" and v["preset"] is None:
        if v["pipeline"] is None or v["trace_segments"] is None:
            raise RangeError(
                "sim mode without a preset needs both pipeline and trace_segments"
            )
    if v["mode"] == "live":
        if v["pipeline"] is None:
            raise RangeError("live mode needs an explicit pipeline")
        if v["endpoint"] is None and not v["spawn_release"]:
            raise RangeError("live mode needs endpoint (or spawn_release: true)")


def _read_mapping(source) -> dict:
    if isinstance(source, dict):
        return dict(source)
    path = Path(source)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"invalid config syntax in {path}: {exc}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ParseError(f"config root must be a mapping, got {type(raw).__name__}")
    return raw


def load_pipeline(source) -> tuple[Pipeline, str | None]:
    """Pipeline (plus optional listen address) for the release subcommand.

    Accepts either a full experiment config carrying a ``pipeline`` key or a
    bare ``{input_bytes, stages}`` table; only the pipeline and listen keys
    are consumed, but unknown keys are still rejected.
    """
    raw = _read_mapping(source)
    if "pipeline" in raw:
        for key in sorted(set(raw) - set(DEFAULTS)):
            raise UnknownKeyError(f"unknown key {key!r}{_suggest(key, DEFAULTS)}")
        pipeline = raw["pipeline"]
        if not isinstance(pipeline, Pipeline):
            pipeline = _parse_pipeline(pipeline)
        listen = raw.get("listen")
        if listen is not None and not isinstance(listen, str):
            raise RangeError(f"listen: expected a string, got {listen!r}")
        return pipeline, listen
    return _parse_pipeline(raw), None


def load_config(source, overrides: dict | None = None) -> ExperimentConfig:
    """Parse and validate a config from a file path or an already-loaded mapping.

    ``overrides`` (e.g. command-line flags) merge on top of the source mapping
    before validation and count as explicitly provided keys.
    """
    raw = _read_mapping(source)

    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})

    for key in sorted(set(raw) - set(DEFAULTS)):
        raise UnknownKeyError(f"unknown key {key!r}{_suggest(key, DEFAULTS)}")

    values = {k: default for k, (default, _) in DEFAULTS.items()}
    values.update(raw)
    if values["pipeline"] is not None and not isinstance(values["pipeline"], Pipeline):
        values["pipeline"] = _parse_pipeline(values["pipeline"])
    if values["trace_segments"] is not None:
        values["trace_segments"] = _parse_trace_segments(values["trace_segments"])
    if values["glitches"] is not None:
        values["glitches"] = _parse_glitches(values["glitches"])
    provided = frozenset(raw)
    _validate(values)
    return ExperimentConfig(values=values, provided=provided)
