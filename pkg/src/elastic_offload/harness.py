"""Run orchestration and delimited metrics output.

One metrics file per (section, arm), schema ``elastic-metrics v1``:

    frame_id, t, split_index, forced, sigma, predicted_e, observed_e,
    latency, cpu_rel, power_rel, bandwidth, cumulative_regret

Floats are written with %.10g and NaN as the empty field, which makes the
files byte-identical across runs with the same seed; tests diff them raw.
``run`` drives a whole experiment (sim or live), writes the CSVs, a JSON and a
plain-text summary, per-section policy checkpoints, and (unless disabled)
rendered figures.  ``summarize`` re-reads metrics files and prints phase-aware
aggregate tables without re-running anything.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .actions import frame_entropy, frame_entropy_pairs, step_weight
from .policy import ElasticPolicy
from .runtime import (
    PressClient,
    ProtocolError,
    ReleaseServer,
    execute_stages,
    local_fallback_window,
    press_execute,
)
from .simulation import (
    ARM_ELASTIC,
    ARMS,
    FrameSeries,
    MetricModel,
    SectionResult,
    build_policy,
    default_norms,
    loglog_slope,
    run_experiment,
)

SCHEMA_NAME = "elastic-metrics"
SCHEMA_VERSION = 1
SCHEMA_LINE = f"# {SCHEMA_NAME} v{SCHEMA_VERSION}"

METRICS_COLUMNS = [
    "frame_id",
    "t",
    "split_index",
    "forced",
    "sigma",
    "predicted_e",
    "observed_e",
    "latency",
    "cpu_rel",
    "power_rel",
    "bandwidth",
    "cumulative_regret",
]

_INT_COLUMNS = {"frame_id", "t", "split_index"}
_BOOL_COLUMNS = {"forced"}


class SchemaError(Exception):
    pass


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    x = float(value)
    if math.isnan(x):
        return ""
    return f"{x:.10g}"


def write_metrics_csv(path, series) -> Path:
    """Serialize one arm's frame series; byte-deterministic for equal inputs."""
    cols = series.__dict__ if isinstance(series, FrameSeries) else dict(series)
    missing = [c for c in METRICS_COLUMNS if c not in cols]
    if missing:
        raise ValueError(f"series lacks columns {missing}")
    length = len(cols[METRICS_COLUMNS[0]])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(SCHEMA_LINE + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)
        for i in range(length):
            writer.writerow([_fmt(cols[c][i]) for c in METRICS_COLUMNS])
    return path


def read_metrics_csv(path) -> dict[str, np.ndarray]:
    """Load a metrics file back into typed column arrays; checks the schema."""
    path = Path(path)
    with path.open(newline="") as fh:
        first = fh.readline().rstrip("\n")
        if not first.startswith(f"# {SCHEMA_NAME} v"):
            raise SchemaError(f"{path}: missing schema line, got {first!r}")
        if first != SCHEMA_LINE:
            raise SchemaError(f"{path}: unsupported schema {first!r}, expected {SCHEMA_LINE!r}")
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METRICS_COLUMNS:
            raise SchemaError(f"{path}: bad header {header}")
        rows = list(reader)
    out: dict[str, np.ndarray] = {}
    for j, name in enumerate(METRICS_COLUMNS):
        raw = [row[j] for row in rows]
        if name in _INT_COLUMNS:
            out[name] = np.array([int(x) for x in raw], dtype=np.int64)
        elif name in _BOOL_COLUMNS:
            out[name] = np.array([x == "1" for x in raw], dtype=bool)
        else:
            out[name] = np.array([float(x) if x else np.nan for x in raw])
    return out


# ---------------------------------------------------------------------------
# Aggregation


def default_warmup(horizon: int) -> int:
    return min(500, horizon // 10)


def _mask_spans(mask: np.ndarray) -> list[tuple[int, int]]:
    """Contiguous True runs of a boolean mask as half-open (start, end) pairs."""
    spans = []
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return spans
    start = prev = int(idx[0])
    for i in idx[1:]:
        i = int(i)
        if i != prev + 1:
            spans.append((start, prev + 1))
            start = i
        prev = i
    spans.append((start, prev + 1))
    return spans


def _phase_spans(labels, horizon: int) -> list[tuple[int, int, str]]:
    ordered = sorted((int(f), str(name)) for f, name in labels)
    spans = []
    for k, (start, name) in enumerate(ordered):
        end = ordered[k + 1][0] if k + 1 < len(ordered) else horizon
        if end > start:
            spans.append((start, end, name))
    return spans


def _glitch_spans(
    glitch: int, horizon: int, update_window: np.ndarray
) -> list[tuple[int, int, str]]:
    """before / on / after segmentation around a link glitch.

    "on" runs from the glitch until the first update window touching it has
    closed, i.e. until the policy has re-learned; with no window it collapses
    to the single glitch frame.
    """
    on_end = min(glitch + 1, horizon)
    for start, end in _mask_spans(update_window):
        if end > glitch:
            on_end = max(on_end, end)
            break
    spans = [(0, glitch, "before"), (glitch, on_end, "on"), (on_end, horizon, "after")]
    return [s for s in spans if s[1] > s[0]]


def _nanmean(x: np.ndarray) -> float:
    x = x[~np.isnan(x)]
    return float(x.mean()) if x.size else float("nan")


def arm_summary(cols: dict, warmup: int) -> dict:
    """Headline numbers for one arm over one section."""
    lat = cols["latency"][warmup:]
    splits = cols["split_index"]
    unique, counts = np.unique(splits, return_counts=True)
    cum = cols["cumulative_regret"]
    final = float(cum[-1]) if len(cum) and not math.isnan(cum[-1]) else float("nan")
    return {
        "mean_latency": _nanmean(lat),
        "p95_latency": float(np.nanpercentile(lat, 95)) if lat.size else float("nan"),
        "mean_cpu_rel": _nanmean(cols["cpu_rel"][warmup:]),
        "mean_power_rel": _nanmean(cols["power_rel"][warmup:]),
        "final_regret": final,
        "split_histogram": {int(u): int(c) for u, c in zip(unique, counts)},
        "forced_frames": int(np.asarray(cols["forced"]).sum()),
    }


def phase_table(
    arm_cols: dict[str, dict],
    spans: list[tuple[int, int, str]],
    warmup: int,
    update_window: np.ndarray | None = None,
) -> list[dict]:
    """Per-phase mean latency / cpu_rel / power_rel for every arm.

    The elastic latency also gets a settled variant that drops frames inside
    update windows, where the served result is the local fallback by design.
    """
    rows = []
    for start, end, name in spans:
        lo = max(start, warmup) if start == 0 else start
        arms = {}
        for arm, cols in arm_cols.items():
            arms[arm] = {
                "mean_latency": _nanmean(cols["latency"][lo:end]),
                "mean_cpu_rel": _nanmean(cols["cpu_rel"][lo:end]),
                "mean_power_rel": _nanmean(cols["power_rel"][lo:end]),
            }
        row = {"phase": name, "frames": [lo, end], "arms": arms}
        if update_window is not None and ARM_ELASTIC in arm_cols:
            window = update_window[lo:end]
            settled = arm_cols[ARM_ELASTIC]["latency"][lo:end][~window]
            row["elastic_settled"] = _nanmean(settled) if settled.size else float("nan")
            row["window_frames"] = int(window.sum())
        rows.append(row)
    return rows


def _section_summary(section: SectionResult, warmup: int) -> dict:
    arm_cols = {name: arm.frames.__dict__ for name, arm in section.arms.items()}
    if section.glitch_frame is not None:
        spans = _glitch_spans(section.glitch_frame, section.horizon, section.update_window)
    else:
        spans = _phase_spans(section.labels, section.horizon)
    arms = {}
    for name, arm in section.arms.items():
        stats = arm_summary(arm_cols[name], warmup)
        stats["regret_slope"] = float(arm.regret.loglog_slope)
        stats["delta_max"] = float(arm.regret.delta_max)
        arms[name] = stats
    return {
        "section": section.name,
        "horizon": section.horizon,
        "warmup": warmup,
        "arms": arms,
        "phases": phase_table(arm_cols, spans, warmup, section.update_window),
        "drift_fires": list(section.drift_fires),
        "update_window_spans": _mask_spans(section.update_window),
        "glitch_frame": section.glitch_frame,
    }


def _render_summary_text(run_summary: dict) -> str:
    lines = []
    head = run_summary.get("scenario", "run")
    lines.append(f"scenario: {head}   seed: {run_summary.get('seed')}")
    for sec in run_summary["sections"]:
        lines.append("")
        lines.append(
            f"section {sec['section']}  (horizon {sec['horizon']}, warmup {sec['warmup']})"
        )
        for arm, st in sec["arms"].items():
            slope = st.get("regret_slope", float("nan"))
            slope_s = f"{slope:.3f}" if not math.isnan(slope) else "n/a"
            regret = st.get("final_regret", float("nan"))
            regret_s = f"{regret:.4g}" if not math.isnan(regret) else "n/a"
            lines.append(
                f"  {arm:<13} mean latency {st['mean_latency']:.4f}"
                f"   final regret {regret_s}   slope {slope_s}"
            )
        elastic = sec["arms"].get(ARM_ELASTIC)
        if elastic:
            hist = ", ".join(f"{k}:{v}" for k, v in sorted(elastic["split_histogram"].items()))
            lines.append(f"  elastic splits  {{{hist}}}   forced {elastic['forced_frames']}")
        if sec.get("drift_fires"):
            spans = sec.get("update_window_spans", [])
            lines.append(f"  drift fires at {sec['drift_fires']}, update windows {spans}")
        for row in sec.get("phases", []):
            lo, end = row["frames"]
            lines.append(f"  [{row['phase']}] frames {lo}..{end}")
            lines.append(f"    {'policy':<13} {'latency':>9} {'cpu_rel':>9} {'power_rel':>10}")
            table = row.get("arms", {})
            ordered = [a for a in ARMS if a in table]
            ordered += sorted(set(table) - set(ordered))
            for arm in ordered:
                m = table[arm]
                lines.append(
                    f"    {arm:<13} {m['mean_latency']:>9.4f}"
                    f" {m['mean_cpu_rel']:>9.4f} {m['mean_power_rel']:>10.4f}"
                )
            if "elastic_settled" in row and not math.isnan(row["elastic_settled"]):
                lines.append(
                    f"    settled elastic latency {row['elastic_settled']:.4f}"
                    f" ({row['window_frames']} update-window frames)"
                )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Full run orchestration


@dataclass
class RunOutput:
    out_dir: Path
    summary: dict
    csv_paths: dict[str, dict[str, Path]]  # section -> arm -> path
    figure_paths: list[Path]
    result: object  # ExperimentResult for sim runs, live loop stats otherwise


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        x = float(obj)
        return None if math.isnan(x) else x
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, float) and math.isnan(obj):
        return None
    return obj


def _config_snapshot(config) -> dict:
    """Resolved config values in YAML-serializable form."""
    snap = {}
    for key, value in config.values.items():
        if key == "pipeline" and value is not None and not isinstance(value, dict):
            snap[key] = {
                "input_bytes": value.input_bytes,
                "stages": [
                    {
                        "name": s.name,
                        "local_cost": s.local_cost,
                        "cloud_cost": s.cloud_cost,
                        "output_bytes": s.output_bytes,
                    }
                    for s in value.stages
                ],
            }
        else:
            snap[key] = value
    return snap


def run(config) -> RunOutput:
    """Execute the configured experiment and write every artifact under out/."""
    if config.mode == "live":
        return run_live(config)
    result = run_experiment(config)
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(
        yaml.safe_dump(_config_snapshot(config), sort_keys=True)
    )

    csv_paths: dict[str, dict[str, Path]] = {}
    section_summaries = []
    for section in result.sections:
        sec_dir = out_dir / section.name
        warmup = (
            config.warmup_frames
            if config.warmup_frames is not None
            else default_warmup(section.horizon)
        )
        csv_paths[section.name] = {
            name: write_metrics_csv(sec_dir / f"{name}.csv", arm.frames)
            for name, arm in section.arms.items()
        }
        (sec_dir / "checkpoint.json").write_text(
            json.dumps(_jsonable(section.checkpoint), indent=2) + "\n"
        )
        sec_summary = _section_summary(section, warmup)
        (sec_dir / "meta.json").write_text(
            json.dumps(_jsonable(sec_summary), indent=2) + "\n"
        )
        section_summaries.append(sec_summary)

    summary = {
        "scenario": result.scenario,
        "seed": config.seed,
        "mode": "sim",
        "sections": section_summaries,
    }
    (out_dir / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2) + "\n")
    (out_dir / "summary.txt").write_text(_render_summary_text(summary))

    figure_paths: list[Path] = []
    if config.figures:
        from . import report

        figure_paths = report.render_experiment_figures(result, out_dir)
    return RunOutput(
        out_dir=out_dir,
        summary=summary,
        csv_paths=csv_paths,
        figure_paths=figure_paths,
        result=result,
    )


# ---------------------------------------------------------------------------
# Live mode: real sockets, synthetic frames


def _synthetic_frame(rng: np.random.Generator, index: int, size: int) -> bytes:
    # every third frame is a tiled low-entropy pattern; the rest are noise
    if index % 3 == 0:
        pattern = rng.integers(0, 256, size=8, dtype=np.uint8)
        reps = -(-size // pattern.size)
        return np.tile(pattern, reps)[:size].tobytes()
    return rng.integers(0, 256, size=size, dtype=np.uint8).tobytes()


def _live_feedback(config, action, pres) -> float | None:
    if action.is_pure_local:
        return None
    if pres.elastic_latency is None:
        return None  # dead link: nothing measured, nothing to learn from
    if pres.timed_out and config.timeout_feedback == "discard":
        return None
    return pres.elastic_latency


def run_live(config) -> RunOutput:
    """Drive a real press/release pair over TCP with synthetic frames."""
    pipeline = config.pipeline
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    server = None
    endpoint = config.endpoint
    if config.spawn_release:
        server = ReleaseServer("127.0.0.1:0", pipeline).start()
        endpoint = server.endpoint
    client = PressClient(
        endpoint, timeout_floor=config.timeout_floor, timeout_factor=config.timeout_factor
    )
    try:
        client.ping()  # fail fast instead of burning frames on a dead link
    except (OSError, ProtocolError) as exc:
        client.close()
        if server is not None:
            server.stop()
        raise OSError(f"release endpoint {endpoint} unreachable: {exc}") from exc
    params = config.policy_params()
    if params["believed_cpu_scale"] is None:
        params["believed_cpu_scale"] = 1.0
    norms = default_norms(pipeline, params)
    T = config.frames
    policy: ElasticPolicy = build_policy(pipeline, norms, T, params)
    metric = MetricModel(
        cpu_freq_factor=params["cpu_freq_factor"],
        power_base=params["power_base"],
        power_per_compute=params["power_per_compute"],
    )
    entropy_fn = frame_entropy_pairs if config.entropy_mode == "pairs" else frame_entropy
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))

    cols = {name: [] for name in METRICS_COLUMNS}
    fell_back = timed_out = 0
    feedback = None
    try:
        with ThreadPoolExecutor(max_workers=1) as pool:
            for t in range(1, T + 1):
                frame = _synthetic_frame(rng, t - 1, config.frame_bytes)
                weight = step_weight(
                    entropy_fn(frame),
                    config.entropy_threshold,
                    config.sigma_nonkey,
                    config.sigma_key,
                )
                action, rec = policy.step(weight, feedback)
                if local_fallback_window(policy) and not action.is_pure_local:
                    # local result is authoritative while re-learning; run the
                    # offload alongside purely for its measurement
                    future = pool.submit(
                        press_execute, frame, action, pipeline, client, t - 1
                    )
                    local_start = time.perf_counter()
                    execute_stages(pipeline, frame, 0, pipeline.n_stages)
                    local_latency = time.perf_counter() - local_start
                    pres = future.result()
                    latency = local_latency
                    local_time = local_latency
                else:
                    pres = press_execute(frame, action, pipeline, client, t - 1)
                    latency = pres.total_latency
                    local_time = pres.local_time
                fell_back += pres.fell_back
                timed_out += pres.timed_out
                feedback = _live_feedback(config, action, pres)

                measured = pres.elastic_latency
                bw = (
                    action.transmit_bytes / measured
                    if measured and not action.is_pure_local
                    else float("nan")
                )
                cols["frame_id"].append(t - 1)
                cols["t"].append(t)
                cols["split_index"].append(action.split_index)
                cols["forced"].append(rec.forced)
                cols["sigma"].append(rec.sigma)
                cols["predicted_e"].append(
                    rec.predicted_e if not action.is_pure_local else float("nan")
                )
                cols["observed_e"].append(
                    measured if measured is not None and not action.is_pure_local else float("nan")
                )
                cols["latency"].append(latency)
                cols["cpu_rel"].append(
                    metric.cpu_freq_factor * local_time / max(latency, 1e-9)
                )
                cols["power_rel"].append(
                    metric.power_base + metric.power_per_compute * local_time
                )
                cols["bandwidth"].append(bw)
                cols["cumulative_regret"].append(float("nan"))
    finally:
        client.close()
        if server is not None:
            server.stop()

    sec_dir = out_dir / "live"
    arrays = {k: np.asarray(v) for k, v in cols.items()}
    csv_path = write_metrics_csv(sec_dir / "elastic.csv", arrays)
    (sec_dir / "checkpoint.json").write_text(
        json.dumps(_jsonable(policy.snapshot()), indent=2) + "\n"
    )
    warmup = (
        config.warmup_frames if config.warmup_frames is not None else default_warmup(T)
    )
    stats = arm_summary(arrays, warmup)
    stats["fell_back"] = fell_back
    stats["timed_out"] = timed_out
    sec_summary = {
        "section": "live",
        "horizon": T,
        "warmup": warmup,
        "arms": {ARM_ELASTIC: stats},
        "phases": [],
        "drift_fires": [],
        "update_window_spans": [],
        "glitch_frame": None,
    }
    summary = {
        "scenario": "live",
        "seed": config.seed,
        "mode": "live",
        "endpoint": endpoint,
        "sections": [sec_summary],
    }
    (sec_dir / "meta.json").write_text(json.dumps(_jsonable(sec_summary), indent=2) + "\n")
    (out_dir / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2) + "\n")
    (out_dir / "summary.txt").write_text(_render_summary_text(summary))
    return RunOutput(
        out_dir=out_dir,
        summary=summary,
        csv_paths={"live": {ARM_ELASTIC: csv_path}},
        figure_paths=[],
        result=summary,
    )


# ---------------------------------------------------------------------------
# Offline summarize


def summarize_files(
    paths,
    boundaries: list[int] | None = None,
    warmup: int | None = None,
) -> tuple[str, dict]:
    """Aggregate bare metrics files; phases come from explicit boundaries.

    Returns (aligned text, table dict); the dict is the JSON-ready form of
    the same numbers.
    """
    paths = [Path(p) for p in paths]
    arm_cols = {}
    horizon = None
    for p in paths:
        cols = read_metrics_csv(p)
        if horizon is None:
            horizon = len(cols["t"])
        elif len(cols["t"]) != horizon:
            raise SchemaError(f"{p}: length {len(cols['t'])} differs from {horizon}")
        arm_cols[p.stem] = cols
    if horizon is None:
        raise ValueError("no metrics files given")
    warm = default_warmup(horizon) if warmup is None else warmup
    starts = sorted(set([0] + [int(b) for b in (boundaries or [])]))
    labels = tuple((s, f"phase{i}") for i, s in enumerate(starts))
    spans = _phase_spans(labels, horizon)
    arms = {name: arm_summary(cols, warm) for name, cols in arm_cols.items()}
    for name, cols in arm_cols.items():
        arms[name]["regret_slope"] = float("nan")
        cum = cols["cumulative_regret"]
        good = ~np.isnan(cum)
        if good.any():
            arms[name]["regret_slope"] = loglog_slope(np.where(good, cum, 0.0))
    summary = {
        "scenario": str(paths[0].parent),
        "seed": None,
        "sections": [
            {
                "section": paths[0].parent.name or ".",
                "horizon": horizon,
                "warmup": warm,
                "arms": arms,
                "phases": phase_table(arm_cols, spans, warm),
                "drift_fires": [],
                "update_window_spans": [],
                "glitch_frame": None,
            }
        ],
    }
    return _render_summary_text(summary), _jsonable(summary)


def _nan_restore(obj):
    # summary.json stores NaN as null; bring the numbers back for rendering
    if isinstance(obj, dict):
        return {k: _nan_restore(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_nan_restore(v) for v in obj]
    return float("nan") if obj is None else obj


def summarize_run(run_dir) -> tuple[str, dict]:
    """Summarize a completed run directory via its summary.json."""
    run_dir = Path(run_dir)
    summary_path = run_dir / "summary.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
        rendered = dict(summary)
        rendered["sections"] = [
            {**sec, "arms": _nan_restore(sec.get("arms", {})),
             "phases": _nan_restore(sec.get("phases", []))}
            for sec in summary.get("sections", [])
        ]
        return _render_summary_text(rendered), summary
    csvs = sorted(run_dir.glob("*.csv"))
    if not csvs:
        raise FileNotFoundError(f"{run_dir}: no summary.json and no metrics files")
    return summarize_files(csvs)


def summarize(source, segmentation=None, warmup: int | None = None) -> tuple[str, dict]:
    """Phase-aware aggregate tables for finished runs or bare metrics files.

    source may be a run directory, one metrics CSV, or a list of them;
    segmentation lists phase boundary frames and applies to bare files (run
    directories carry their own phases).
    """
    if isinstance(source, (str, Path)) and Path(source).is_dir():
        return summarize_run(source)
    paths = [source] if isinstance(source, (str, Path)) else list(source)
    return summarize_files(paths, boundaries=segmentation, warmup=warmup)
