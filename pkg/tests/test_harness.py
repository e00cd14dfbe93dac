"""Metrics serialization, aggregation, end-to-end runs, and the CLI."""

import json
import socket

import numpy as np
import pytest

from elastic_offload import cli, harness
from elastic_offload.config import load_config
from elastic_offload.harness import (
    METRICS_COLUMNS,
    SCHEMA_LINE,
    SchemaError,
    _fmt,
    _glitch_spans,
    _mask_spans,
    arm_summary,
    default_warmup,
    phase_table,
    read_metrics_csv,
    summarize,
    summarize_files,
    summarize_run,
    write_metrics_csv,
)

PIPE_TABLE = {
    "input_bytes": 200_000,
    "stages": [
        {"name": "front", "local_cost": 0.4, "cloud_cost": 0.02, "output_bytes": 60_000},
        {"name": "back", "local_cost": 0.6, "cloud_cost": 0.02, "output_bytes": 8_000},
    ],
}

LIVE_PIPE = {
    "input_bytes": 2048,
    "stages": [
        {"name": "s0", "local_cost": 0.1, "cloud_cost": 0.01, "output_bytes": 1024},
        {"name": "s1", "local_cost": 0.1, "cloud_cost": 0.01, "output_bytes": 256},
    ],
}

SIM_CONFIG = {
    "pipeline": PIPE_TABLE,
    "trace_segments": [[0, 2e5, 1.0]],
    "horizon": 120,
    "forced_i": 8.0,
    "seed": 1,
    "figures": False,
}


def _toy_cols(T=20, seed=5):
    rng = np.random.default_rng(seed)
    return {
        "frame_id": np.arange(T, dtype=np.int64),
        "t": np.arange(1, T + 1, dtype=np.int64),
        "split_index": rng.integers(0, 3, T),
        "forced": rng.integers(0, 2, T).astype(bool),
        "sigma": rng.uniform(0, 1, T),
        "predicted_e": np.where(rng.uniform(size=T) < 0.3, np.nan, rng.uniform(0, 2, T)),
        "observed_e": np.where(rng.uniform(size=T) < 0.3, np.nan, rng.uniform(0, 2, T)),
        "latency": rng.uniform(0.1, 3.0, T),
        "cpu_rel": rng.uniform(0, 1, T),
        "power_rel": rng.uniform(255, 400, T),
        "bandwidth": rng.uniform(1e5, 1e7, T),
        "cumulative_regret": np.cumsum(rng.uniform(0, 0.1, T)),
    }


# -- metrics files ---------------------------------------------------------


def test_csv_roundtrip_preserves_types_and_nan(tmp_path):
    cols = _toy_cols()
    path = write_metrics_csv(tmp_path / "arm.csv", cols)
    back = read_metrics_csv(path)
    assert list(back) == METRICS_COLUMNS
    for name in ("frame_id", "t", "split_index"):
        assert back[name].dtype == np.int64
        np.testing.assert_array_equal(back[name], cols[name])
    assert back["forced"].dtype == bool
    np.testing.assert_array_equal(back["forced"], cols["forced"])
    for name in ("sigma", "predicted_e", "observed_e", "latency", "cumulative_regret"):
        np.testing.assert_allclose(back[name], cols[name], rtol=1e-9)


def test_csv_writes_are_byte_deterministic(tmp_path):
    cols = _toy_cols(seed=9)
    a = write_metrics_csv(tmp_path / "a.csv", cols)
    b = write_metrics_csv(tmp_path / "b.csv", cols)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0] == SCHEMA_LINE


def test_csv_schema_rejections(tmp_path):
    good = write_metrics_csv(tmp_path / "good.csv", _toy_cols())
    body = good.read_text().splitlines()

    headerless = tmp_path / "headerless.csv"
    headerless.write_text("\n".join(body[1:]) + "\n")
    with pytest.raises(SchemaError, match="missing schema line"):
        read_metrics_csv(headerless)

    futuristic = tmp_path / "future.csv"
    futuristic.write_text("\n".join([SCHEMA_LINE.replace("v1", "v2")] + body[1:]) + "\n")
    with pytest.raises(SchemaError, match="unsupported schema"):
        read_metrics_csv(futuristic)

    mangled = tmp_path / "mangled.csv"
    mangled.write_text("\n".join([body[0], "a,b,c"] + body[2:]) + "\n")
    with pytest.raises(SchemaError, match="bad header"):
        read_metrics_csv(mangled)

    with pytest.raises(ValueError, match="lacks columns"):
        write_metrics_csv(tmp_path / "short.csv", {"frame_id": np.arange(3)})


def test_fmt_rules():
    assert _fmt(True) == "1" and _fmt(False) == "0"
    assert _fmt(7) == "7"
    assert _fmt(float("nan")) == ""
    assert _fmt(0.1) == "0.1"
    assert _fmt(1234567.8912345678) == "1234567.891"  # ten significant digits


# -- aggregation helpers -----------------------------------------------------


def test_default_warmup_caps_at_tenth():
    assert default_warmup(10000) == 500
    assert default_warmup(100) == 10
    assert default_warmup(4) == 0


def test_mask_spans():
    assert _mask_spans(np.array([0, 1, 1, 0, 1], dtype=bool)) == [(1, 3), (4, 5)]
    assert _mask_spans(np.zeros(5, dtype=bool)) == []
    assert _mask_spans(np.ones(3, dtype=bool)) == [(0, 3)]


def test_glitch_spans_follow_update_window():
    window = np.zeros(10, dtype=bool)
    window[5:8] = True
    spans = _glitch_spans(4, 10, window)
    assert spans == [(0, 4, "before"), (4, 8, "on"), (8, 10, "after")]
    # without any window the "on" phase is just the glitch frame
    spans = _glitch_spans(4, 10, np.zeros(10, dtype=bool))
    assert spans == [(0, 4, "before"), (4, 5, "on"), (5, 10, "after")]
    # glitch at the first frame: no "before"
    spans = _glitch_spans(0, 10, np.zeros(10, dtype=bool))
    assert spans[0][2] == "on"


def test_phase_table_settled_excludes_window_frames():
    latency = np.arange(20, dtype=float)
    base = {
        "latency": latency,
        "cpu_rel": np.full(20, 0.5),
        "power_rel": np.full(20, 300.0),
    }
    arm_cols = {"elastic": base, "static_local": dict(base, latency=latency + 1)}
    window = np.zeros(20, dtype=bool)
    window[5:8] = True
    rows = phase_table(
        arm_cols,
        [(0, 10, "x"), (10, 20, "y")],
        warmup=5,
        update_window=window,
    )
    assert rows[0]["frames"] == [5, 10]  # warmup eats into the opening phase
    assert rows[0]["arms"]["elastic"]["mean_latency"] == pytest.approx(7.0)
    assert rows[0]["arms"]["static_local"]["mean_latency"] == pytest.approx(8.0)
    assert rows[0]["window_frames"] == 3
    assert rows[0]["elastic_settled"] == pytest.approx(8.5)  # frames 8, 9
    assert rows[1]["frames"] == [10, 20]
    assert rows[1]["arms"]["elastic"]["mean_latency"] == pytest.approx(14.5)
    assert rows[1]["window_frames"] == 0


def test_arm_summary_headline_numbers():
    cols = _toy_cols(T=50, seed=2)
    stats = arm_summary(cols, warmup=10)
    assert stats["mean_latency"] == pytest.approx(float(np.mean(cols["latency"][10:])))
    assert stats["forced_frames"] == int(cols["forced"].sum())
    assert sum(stats["split_histogram"].values()) == 50
    assert stats["final_regret"] == pytest.approx(float(cols["cumulative_regret"][-1]))


# -- summarize entry points ---------------------------------------------------


def test_summarize_files_builds_phase_tables(tmp_path):
    write_metrics_csv(tmp_path / "elastic.csv", _toy_cols(T=30, seed=3))
    write_metrics_csv(tmp_path / "static_local.csv", _toy_cols(T=30, seed=4))
    text, table = summarize_files(
        [tmp_path / "elastic.csv", tmp_path / "static_local.csv"], boundaries=[10]
    )
    section = table["sections"][0]
    assert set(section["arms"]) == {"elastic", "static_local"}
    assert [p["phase"] for p in section["phases"]] == ["phase0", "phase1"]
    assert "elastic" in text and "static_local" in text
    json.dumps(table)  # JSON-ready: NaN already mapped to null

    write_metrics_csv(tmp_path / "short.csv", _toy_cols(T=10, seed=5))
    with pytest.raises(SchemaError, match="differs"):
        summarize_files([tmp_path / "elastic.csv", tmp_path / "short.csv"])


def test_summarize_dispatches_on_source_kind(tmp_path):
    out = harness.run(load_config({**SIM_CONFIG, "out": str(tmp_path / "run")}))
    text_dir, table_dir = summarize(out.out_dir)
    text_run, table_run = summarize_run(out.out_dir)
    assert text_dir == text_run and table_dir == table_run

    one_csv = out.csv_paths["custom"]["elastic"]
    text_csv, table_csv = summarize(one_csv)
    assert table_csv["sections"][0]["horizon"] == 120


# -- end-to-end runs ------------------------------------------------------------


def test_run_writes_complete_artifact_tree(tmp_path):
    out = harness.run(load_config({**SIM_CONFIG, "out": str(tmp_path / "run")}))
    sec = out.out_dir / "custom"
    for arm in ("elastic", "static_cloud", "static_local", "oracle"):
        cols = read_metrics_csv(sec / f"{arm}.csv")
        assert cols["t"].size == 120
    assert (out.out_dir / "config.yaml").exists()
    assert (out.out_dir / "summary.json").exists()
    assert (sec / "checkpoint.json").exists()
    meta = json.loads((sec / "meta.json").read_text())
    assert {"section", "horizon", "arms", "phases"} <= set(meta)
    assert meta["horizon"] == 120
    text = (out.out_dir / "summary.txt").read_text()
    assert "custom" in text and "elastic" in text
    assert out.figure_paths == []


def test_run_twice_same_seed_byte_identical(tmp_path):
    out1 = harness.run(load_config({**SIM_CONFIG, "out": str(tmp_path / "r1")}))
    out2 = harness.run(load_config({**SIM_CONFIG, "out": str(tmp_path / "r2")}))
    for arm in ("elastic", "static_cloud", "static_local", "oracle"):
        a = (out1.out_dir / "custom" / f"{arm}.csv").read_bytes()
        b = (out2.out_dir / "custom" / f"{arm}.csv").read_bytes()
        assert a == b, arm


def test_run_renders_figures_on_request(tmp_path):
    out = harness.run(
        load_config({**SIM_CONFIG, "figures": True, "out": str(tmp_path / "run")})
    )
    names = sorted(p.name for p in out.figure_paths)
    assert names == ["latency.png", "regret.png"]  # one section: no sweep panel
    for p in out.figure_paths:
        assert p.exists() and p.stat().st_size > 0


def test_run_live_loopback_roundtrip(tmp_path):
    cfg = load_config(
        {
            "mode": "live",
            "pipeline": LIVE_PIPE,
            "spawn_release": True,
            "frames": 40,
            "frame_bytes": 2048,
            "forced_i": 5.0,
            "seed": 2,
            "out": str(tmp_path / "live-run"),
        }
    )
    out = harness.run(cfg)
    cols = read_metrics_csv(out.out_dir / "live" / "elastic.csv")
    assert cols["t"].size == 40
    assert np.isnan(cols["cumulative_regret"]).all()  # no oracle over real sockets
    stats = out.summary["sections"][0]["arms"]["elastic"]
    assert stats["fell_back"] == 0 and stats["timed_out"] == 0
    assert out.summary["mode"] == "live" and out.summary["endpoint"]
    assert (out.out_dir / "live" / "checkpoint.json").exists()


def _dead_port() -> int:
    probe = socket.socket()
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()
    return port


def test_run_live_unreachable_endpoint_fails_fast(tmp_path):
    cfg = load_config(
        {
            "mode": "live",
            "pipeline": LIVE_PIPE,
            "endpoint": f"127.0.0.1:{_dead_port()}",
            "frames": 10,
            "forced_i": 3.0,
            "timeout_floor": 0.2,
            "out": str(tmp_path / "live-run"),
        }
    )
    with pytest.raises(OSError, match="unreachable"):
        harness.run(cfg)


# -- command line -----------------------------------------------------------------


def test_cli_run_and_summarize(tmp_path, capsys):
    cfg_file = tmp_path / "run.yaml"
    cfg_file.write_text(
        "pipeline:\n"
        "  input_bytes: 200000\n"
        "  stages:\n"
        "    - {name: front, local_cost: 0.4, cloud_cost: 0.02, output_bytes: 60000}\n"
        "    - {name: back, local_cost: 0.6, cloud_cost: 0.02, output_bytes: 8000}\n"
        "trace_segments:\n"
        "  - [0, 200000.0, 1.0]\n"
        "horizon: 120\n"
        "forced_i: 8.0\n"
        "figures: false\n"
    )
    out_dir = tmp_path / "out"
    rc = cli.main(["run", "--config", str(cfg_file), "--out", str(out_dir), "--seed", "3"])
    captured = capsys.readouterr()
    assert rc == 0
    assert "summary.txt" in captured.out and "elastic.csv" in captured.out

    rc = cli.main(["summarize", str(out_dir)])
    captured = capsys.readouterr()
    assert rc == 0
    tables = out_dir / "summary_tables.json"
    assert tables.exists()
    assert str(tables) in captured.out
    assert json.loads(tables.read_text())["sections"][0]["horizon"] == 120

    explicit = tmp_path / "tables.json"
    rc = cli.main(
        [
            "summarize",
            str(out_dir / "custom" / "elastic.csv"),
            "--boundaries",
            "40",
            "--json",
            str(explicit),
        ]
    )
    capsys.readouterr()
    assert rc == 0 and explicit.exists()


def test_cli_run_rejects_bad_config(tmp_path, capsys):
    cfg_file = tmp_path / "bad.yaml"
    cfg_file.write_text("preset: slam-sweep\ngamm: 1.0\n")
    rc = cli.main(["run", "--config", str(cfg_file)])
    captured = capsys.readouterr()
    assert rc == 2
    assert "did you mean 'gamma'" in captured.err


class _FakeServer:
    def __init__(self):
        self.endpoint = "127.0.0.1:4242"
        self.frames_served = 0
        self.errors_sent = 0
        self.stopped = False

    def stop(self):
        self.stopped = True


def _patch_release(monkeypatch):
    seen = {}
    fake = _FakeServer()

    def fake_serve(listen, pipeline, **kwargs):
        seen["listen"] = listen
        seen["n_stages"] = pipeline.n_stages
        return fake

    monkeypatch.setattr(cli, "serve_release", fake_serve)
    monkeypatch.setattr(cli.time, "sleep", _raise_interrupt)
    return seen, fake


def _raise_interrupt(_):
    raise KeyboardInterrupt


def test_cli_release_listen_precedence(tmp_path, monkeypatch, capsys):
    pipe_file = tmp_path / "pipe.yaml"
    pipe_file.write_text(
        "pipeline:\n"
        "  input_bytes: 2048\n"
        "  stages:\n"
        "    - {name: s0, local_cost: 0.1, cloud_cost: 0.01, output_bytes: 256}\n"
        "listen: 127.0.0.1:7100\n"
    )

    seen, fake = _patch_release(monkeypatch)
    rc = cli.main(["release", "--pipeline", str(pipe_file), "--listen", "127.0.0.1:7200"])
    capsys.readouterr()
    assert rc == 0 and fake.stopped
    assert seen["listen"] == "127.0.0.1:7200"  # explicit flag wins

    seen, fake = _patch_release(monkeypatch)
    rc = cli.main(["release", "--pipeline", str(pipe_file)])
    capsys.readouterr()
    assert rc == 0
    assert seen["listen"] == "127.0.0.1:7100"  # falls back to the file

    seen, fake = _patch_release(monkeypatch)
    monkeypatch.setenv(cli.ENV_LISTEN, "127.0.0.1:7300")
    rc = cli.main(["release", "--preset", "slam-sweep"])
    capsys.readouterr()
    assert rc == 0
    assert seen["listen"] == "127.0.0.1:7300"  # environment as a last resort
    assert seen["n_stages"] == 4


def test_cli_release_requires_pipeline_and_listen(monkeypatch, capsys):
    monkeypatch.delenv(cli.ENV_LISTEN, raising=False)
    rc = cli.main(["release", "--listen", "127.0.0.1:7000"])
    captured = capsys.readouterr()
    assert rc == 2 and "needs a pipeline" in captured.err

    rc = cli.main(["release", "--preset", "slam-sweep"])
    captured = capsys.readouterr()
    assert rc == 2 and "listen address" in captured.err


def test_cli_maps_network_failures_to_exit_3(tmp_path, capsys):
    cfg_file = tmp_path / "live.yaml"
    cfg_file.write_text(
        "mode: live\n"
        "pipeline:\n"
        "  input_bytes: 2048\n"
        "  stages:\n"
        "    - {name: s0, local_cost: 0.1, cloud_cost: 0.01, output_bytes: 256}\n"
        f"endpoint: 127.0.0.1:{_dead_port()}\n"
        "frames: 5\n"
        "forced_i: 2.0\n"
        "timeout_floor: 0.2\n"
        f"out: {tmp_path / 'live-out'}\n"
    )
    rc = cli.main(["run", "--config", str(cfg_file)])
    captured = capsys.readouterr()
    assert rc == 3
    assert "unreachable" in captured.err
