"""Config parsing, validation messages, and override semantics."""

import pytest

from elastic_offload.actions import Pipeline
from elastic_offload.config import (
    ConfigError,
    ParseError,
    RangeError,
    UnknownKeyError,
    load_config,
    load_pipeline,
)

PIPE_TABLE = {
    "input_bytes": 4096,
    "stages": [
        {"name": "a", "local_cost": 0.5, "cloud_cost": 0.05, "output_bytes": 2048},
        {"name": "b", "local_cost": 0.7, "cloud_cost": 0.05, "output_bytes": 512},
    ],
}


def test_defaults_fill_unprovided_keys():
    cfg = load_config({"preset": "slam-sweep"})
    assert cfg.mode == "sim"
    assert cfg.gamma == 1.0
    assert cfg.forced_i == 10.0
    assert cfg.drift_theta == 0.5
    assert cfg.sigma_nonkey == 0.2 and cfg.sigma_key == 0.8
    assert cfg.epsilon == 0.1
    assert cfg.objective == "latency"
    assert cfg.horizon == 20000
    assert cfg.provided == frozenset({"preset"})
    with pytest.raises(AttributeError):
        cfg.not_a_key


def test_policy_params_view():
    params = load_config({"preset": "slam-sweep"}).policy_params()
    assert params["gamma"] == 1.0
    assert params["objective"] == "latency"
    assert "out" not in params  # run bookkeeping stays out of the policy view


def test_range_errors_name_the_key_and_bound():
    with pytest.raises(RangeError, match="gamma.*>= 1"):
        load_config({"preset": "slam-sweep", "gamma": 0.5})
    with pytest.raises(RangeError, match="horizon"):
        load_config({"preset": "slam-sweep", "horizon": 1})
    with pytest.raises(RangeError, match="sigma_nonkey must be < sigma_key"):
        load_config({"preset": "slam-sweep", "sigma_nonkey": 0.9})
    with pytest.raises(RangeError, match="figures"):
        load_config({"preset": "slam-sweep", "figures": "yes"})


def test_unknown_key_suggests_nearest():
    with pytest.raises(UnknownKeyError, match="did you mean 'gamma'"):
        load_config({"preset": "slam-sweep", "gamm": 1.0})
    with pytest.raises(UnknownKeyError):
        load_config({"preset": "slam-sweep", "definitely_not_a_key": 1})


def test_choice_keys_reject_strangers():
    with pytest.raises(RangeError, match="objective"):
        load_config({"preset": "slam-sweep", "objective": "energy"})
    with pytest.raises(RangeError, match="mode"):
        load_config({"preset": "slam-sweep", "mode": "dry-run"})
    for objective in ("latency", "power", "cpu"):
        assert load_config({"preset": "slam-sweep", "objective": objective}).objective == objective


def test_sim_without_preset_needs_explicit_scenario():
    with pytest.raises(RangeError, match="pipeline and trace_segments"):
        load_config({})
    cfg = load_config(
        {"pipeline": PIPE_TABLE, "trace_segments": [[0, 2e6, 1.0]], "horizon": 100}
    )
    assert isinstance(cfg.pipeline, Pipeline)
    assert cfg.pipeline.n_stages == 2
    assert cfg.trace_segments == [[0, 2e6, 1.0]]


def test_live_mode_requirements():
    with pytest.raises(RangeError, match="live mode needs an explicit pipeline"):
        load_config({"mode": "live"})
    with pytest.raises(RangeError, match="endpoint"):
        load_config({"mode": "live", "pipeline": PIPE_TABLE})
    cfg = load_config({"mode": "live", "pipeline": PIPE_TABLE, "spawn_release": True})
    assert cfg.spawn_release
    cfg = load_config({"mode": "live", "pipeline": PIPE_TABLE, "endpoint": "10.0.0.2:7070"})
    assert cfg.endpoint == "10.0.0.2:7070"


def test_pipeline_table_validation():
    with pytest.raises(ParseError, match="both input_bytes and stages"):
        load_config({"pipeline": {"input_bytes": 10}, "trace_segments": [[0, 1.0, 1.0]]})
    bad_stage = {
        "input_bytes": 10,
        "stages": [{"name": "a", "local_cost": 1.0, "cloud_cost": 0.1}],
    }
    with pytest.raises(ParseError, match=r"stages\[0\]: missing keys"):
        load_config({"pipeline": bad_stage, "trace_segments": [[0, 1.0, 1.0]]})
    typo_stage = {
        "input_bytes": 10,
        "stages": [
            {"name": "a", "local_cost": 1.0, "cloud_cost": 0.1, "output_byte": 5}
        ],
    }
    with pytest.raises(UnknownKeyError, match="output_byte"):
        load_config({"pipeline": typo_stage, "trace_segments": [[0, 1.0, 1.0]]})
    with pytest.raises(UnknownKeyError, match="pipeline.extra"):
        load_config(
            {"pipeline": {**PIPE_TABLE, "extra": 1}, "trace_segments": [[0, 1.0, 1.0]]}
        )


def test_trace_and_glitch_row_validation():
    base = {"pipeline": PIPE_TABLE, "horizon": 50}
    with pytest.raises(ParseError, match="trace_segments"):
        load_config({**base, "trace_segments": [[0, 2e6]]})
    with pytest.raises(RangeError, match=r"trace_segments\[0\].start"):
        load_config({**base, "trace_segments": [["x", 2e6, 1.0]]})
    with pytest.raises(ParseError, match=r"glitches\[0\]"):
        load_config({**base, "trace_segments": [[0, 2e6, 1.0]], "glitches": [[5]]})
    with pytest.raises(RangeError, match=r"glitches\[0\].bandwidth"):
        load_config({**base, "trace_segments": [[0, 2e6, 1.0]], "glitches": [[5, 0.0]]})
    cfg = load_config(
        {**base, "trace_segments": [[0, 2e6, 1.0], [20, 1e6, 0.5, 0.9]], "glitches": [[25, 5e5]]}
    )
    assert cfg.trace_segments[1] == [20, 1e6, 0.5, 0.9]
    assert cfg.glitches == [[25, 5e5]]


def test_overrides_merge_and_count_as_provided():
    cfg = load_config({"preset": "slam-sweep"}, overrides={"seed": 3, "horizon": None})
    assert cfg.seed == 3
    assert cfg.horizon == 20000  # None overrides are skipped, not applied
    assert "seed" in cfg.provided and "horizon" not in cfg.provided
    with pytest.raises(UnknownKeyError):
        load_config({"preset": "slam-sweep"}, overrides={"sede": 3})


def test_with_overrides_produces_new_config():
    cfg = load_config({"preset": "slam-sweep"})
    bumped = cfg.with_overrides(seed=9)
    assert bumped.seed == 9 and "seed" in bumped.provided
    assert cfg.seed == 0  # original untouched


def test_load_config_from_yaml_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("preset: grasp-glitch\nseed: 5\nhorizon: 300\n")
    cfg = load_config(path)
    assert (cfg.preset, cfg.seed, cfg.horizon) == ("grasp-glitch", 5, 300)
    broken = tmp_path / "broken.yaml"
    broken.write_text("preset: [oops\n")
    with pytest.raises(ParseError, match="invalid config syntax"):
        load_config(broken)
    with pytest.raises(ParseError, match="cannot read config"):
        load_config(tmp_path / "missing.yaml")
    listy = tmp_path / "list.yaml"
    listy.write_text("- 1\n- 2\n")
    with pytest.raises(ParseError, match="root must be a mapping"):
        load_config(listy)


def test_load_pipeline_accepts_both_shapes(tmp_path):
    pipe, listen = load_pipeline(PIPE_TABLE)
    assert isinstance(pipe, Pipeline) and listen is None

    pipe, listen = load_pipeline(
        {"pipeline": PIPE_TABLE, "listen": "0.0.0.0:7070", "preset": "slam-sweep"}
    )
    assert pipe.input_bytes == 4096
    assert listen == "0.0.0.0:7070"

    with pytest.raises(UnknownKeyError):
        load_pipeline({"pipeline": PIPE_TABLE, "bogus": 1})
    with pytest.raises(RangeError, match="listen"):
        load_pipeline({"pipeline": PIPE_TABLE, "listen": 7070})

    path = tmp_path / "pipe.yaml"
    path.write_text(
        "input_bytes: 128\n"
        "stages:\n"
        "  - {name: only, local_cost: 1.0, cloud_cost: 0.1, output_bytes: 16}\n"
    )
    pipe, listen = load_pipeline(path)
    assert pipe.input_bytes == 128 and listen is None


def test_errors_share_a_catchable_base():
    for exc in (ParseError, RangeError, UnknownKeyError):
        assert issubclass(exc, ConfigError)
