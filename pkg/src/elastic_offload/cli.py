"""Command-line entry points.

    elastic-offload run        execute a sim or live experiment, write artifacts
    elastic-offload summarize  aggregate existing metrics files or a run dir
    elastic-offload release    serve the cloud side of the wire protocol

Exit codes: 0 success, 2 configuration problems, 3 runtime/network failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from . import harness
from .config import ConfigError, load_config, load_pipeline
from .runtime import ProtocolError, serve_release
from .simulation import PRESETS

logger = logging.getLogger(__name__)

ENV_LISTEN = "ELASTIC_RELEASE_LISTEN"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elastic-offload",
        description="Learned compute-offload splitting for staged robot pipelines.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute an experiment and write artifacts")
    run_p.add_argument("--config", type=Path, help="YAML config file")
    run_p.add_argument(
        "--preset", choices=sorted(PRESETS), help="scenario preset (overrides config)"
    )
    run_p.add_argument("--seed", type=int, help="master RNG seed")
    run_p.add_argument("--out", help="output directory")
    run_p.add_argument("--horizon", type=int, help="frames per section")
    run_p.add_argument(
        "--figures",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="render PNG figures (default: from config)",
    )
    run_p.set_defaults(func=_cmd_run)

    sum_p = sub.add_parser("summarize", help="aggregate metrics without re-running")
    sum_p.add_argument(
        "paths", nargs="+", type=Path, help="metrics CSV files, or one run directory"
    )
    sum_p.add_argument(
        "--boundaries",
        default="",
        help="comma-separated phase start frames for bare CSV input",
    )
    sum_p.add_argument("--warmup", type=int, default=None, help="frames excluded from means")
    sum_p.add_argument(
        "--json",
        type=Path,
        default=None,
        help="machine-readable table path (default: summary_tables.json beside the input)",
    )
    sum_p.set_defaults(func=_cmd_summarize)

    rel_p = sub.add_parser("release", help="run the cloud-side stage executor")
    rel_p.add_argument(
        "--pipeline",
        type=Path,
        help="pipeline config: bare {input_bytes, stages} table or a full run config",
    )
    rel_p.add_argument("--config", type=Path, help="YAML config file (pipeline, listen)")
    rel_p.add_argument(
        "--preset", choices=sorted(PRESETS), help="serve a preset scenario's pipeline"
    )
    rel_p.add_argument(
        "--listen",
        help=f"listen address host:port (flag > config > ${ENV_LISTEN})",
    )
    rel_p.set_defaults(func=_cmd_release)
    return parser


def _cmd_run(args) -> int:
    overrides = {
        "preset": args.preset,
        "seed": args.seed,
        "out": args.out,
        "horizon": args.horizon,
        "figures": args.figures,
    }
    config = load_config(args.config if args.config else {}, overrides)
    out = harness.run(config)
    print(f"wrote {out.out_dir}/summary.txt")
    for section, arms in out.csv_paths.items():
        listed = ", ".join(sorted(p.name for p in arms.values()))
        print(f"  {section}: {listed}")
    for fig in out.figure_paths:
        print(f"  figure {fig.relative_to(out.out_dir)}")
    text, _ = harness.summarize_run(out.out_dir)
    sys.stdout.write("\n" + text)
    return 0


def _cmd_summarize(args) -> int:
    if len(args.paths) == 1 and args.paths[0].is_dir():
        text, table = harness.summarize_run(args.paths[0])
        json_path = args.json or args.paths[0] / "summary_tables.json"
    else:
        boundaries = [int(b) for b in args.boundaries.split(",") if b.strip()]
        text, table = harness.summarize_files(args.paths, boundaries, args.warmup)
        json_path = args.json or args.paths[0].parent / "summary_tables.json"
    json_path.parent.mkdir(parents=True, exist_ok=True)
    json_path.write_text(json.dumps(table, indent=2) + "\n")
    sys.stdout.write(text)
    print(f"wrote {json_path}")
    return 0


def _cmd_release(args) -> int:
    pipeline = None
    listen = args.listen
    if args.config:
        config = load_config(args.config)
        pipeline = config.pipeline
        listen = listen or config.listen
    if args.preset:
        pipeline = PRESETS[args.preset]().pipeline
    if args.pipeline:
        pipeline, cfg_listen = load_pipeline(args.pipeline)
        listen = listen or cfg_listen
    listen = listen or os.environ.get(ENV_LISTEN)
    if pipeline is None:
        raise ConfigError("release needs a pipeline (--pipeline, --preset, or --config)")
    if listen is None:
        raise ConfigError(f"release needs a listen address (--listen, config, or ${ENV_LISTEN})")
    server = serve_release(listen, pipeline)
    print(f"release node serving {pipeline.n_stages} stages on {server.endpoint}", flush=True)
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
        print(f"served {server.frames_served} frames, sent {server.errors_sent} errors")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ProtocolError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
