import json
from dataclasses import replace

import pytest

from reedsbench.logstore import StreamKind, StreamSpec, SyntheticConfig, write_log
from reedsbench.presets import get_preset, parse_presets
from reedsbench.scheduler import (PluginSpec, RunConfig, RunError, compare_modes, run,
                                  strip_timing)
from reedsbench.schemas import validate


def config(log, plugins, presets="0", **kw):
    kw.setdefault("max_frames", 12)
    kw.setdefault("result_timeout_s", 10.0)
    return RunConfig(log=log, plugins=[PluginSpec.parse(p) for p in plugins],
                     presets=parse_presets(presets), **kw)


def test_plugin_spec_parsing():
    assert PluginSpec.parse("echo:4") == PluginSpec("echo", (), 4)
    spec = PluginSpec.parse("jitter --mean 20ms --std 5ms")
    assert spec.args == ("--mean", "20ms", "--std", "5ms")
    assert [n for n, _ in PluginSpec.parse("echo:2").instances()] == ["echo#0", "echo#1"]
    assert PluginSpec.parse("cmd:/opt/x/det --fast").instances()[0][0] == "det"
    with pytest.raises(RunError, match="unknown plugin kind"):
        PluginSpec.parse("telepathy")
    with pytest.raises(RunError):
        PluginSpec.parse("echo:x")


def test_config_validation(full_log):
    with pytest.raises(RunError, match="no plugins"):
        run(config(full_log, []))
    with pytest.raises(RunError, match="no plugins"):
        run(config(full_log, ["echo:0"]))
    with pytest.raises(RunError, match="unknown mode"):
        run(config(full_log, ["echo"], mode="sideways"))
    cfg = config(full_log, ["echo"])
    cfg.presets = [get_preset(3), get_preset(1)]
    cfg.validate()
    assert [p.preset_id for p in cfg.presets] == [1, 3]


def test_parallel_counters_and_delivery(full_log):
    report = run(config(full_log, ["echo:3"], presets="0,4"))
    c = report.counters
    assert report.complete and c.failures == []
    assert c.frames_read == c.decode_count == 12
    assert c.bytes_decoded == 12 * 3208 * 2200 * 2
    frames_at_30 = report.entry("echo#0", 4)["frames_expected"]
    assert 0 < frames_at_30 < 12
    assert c.publishes == 12 + frames_at_30
    assert c.results == 3 * c.publishes
    for e in report.entries:
        assert e["status"] == "ok" and e["duplicate_deliveries"] == 0
        assert e["frames_delivered"] == e["frames_expected"]
        assert e["timing"]["source"] == "harness"
    validate(report.to_dict(), "run_report")


def test_naive_counts(full_log):
    report = run(config(full_log, ["echo:2"], presets="0,4", mode="naive"))
    c = report.counters
    assert c.decode_count == 12 * 2 * 2
    assert c.records_fetched == c.decode_count
    assert all(e["status"] == "ok" for e in report.entries)


def test_compare_reports_ratio(full_log):
    cmp = compare_modes(config(full_log, ["echo:2"], presets="0,4,8", max_frames=6))
    assert cmp["decode_ratio"] == 6
    assert cmp["parallel_decode_fraction"] == "1/6"
    assert cmp["model_agrees"] and not cmp["partial"]
    assert (cmp["n"], cmp["m"], cmp["p"]) == (6, 2, 3)


def test_oracle_is_perfect_and_echo_is_not(full_log):
    report = run(config(full_log, ["oracle", "echo"], presets="0,2"))
    for pid in (0, 2):
        assert report.entry("oracle", pid)["accuracy"]["f1"] == 1.0
        echo = report.entry("echo", pid)["accuracy"]
        assert echo["f1"] == 0.0 and echo["fn"] > 0


def test_determinism(full_log, tmp_path):
    cfg = config(full_log, ["echo:2", "oracle"], presets="0,2", max_frames=8)
    a, b = run(cfg), run(replace(cfg))
    assert a.run_id == b.run_id
    assert strip_timing(a.to_dict()) == strip_timing(b.to_dict())
    path = a.write(tmp_path)
    assert path.name == f"{a.run_id}.parallel.json"
    assert json.loads(path.read_text())["run_id"] == a.run_id
    assert (tmp_path / f"{a.run_id}.parallel.counters.csv").exists()


def test_crashing_plugin_is_isolated(full_log):
    report = run(config(full_log, ["crash --after 3", "echo"]))
    crashed = report.entry("crash --after 3", 0)
    assert crashed["status"] == "failed"
    assert "exited with code 17" in crashed["failure"]
    assert report.entry("echo", 0)["status"] == "ok"
    assert report.entry("echo", 0)["frames_delivered"] == 12
    assert any("crash" in f for f in report.counters.failures)


def test_rogue_plugin_is_rejected(full_log):
    report = run(config(full_log, ["rogue", "echo"]))
    assert "RELEASE before RESULT" in report.entry("rogue", 0)["failure"]
    assert report.entry("echo", 0)["status"] == "ok"


def test_straggler_times_out(full_log):
    report = run(config(full_log, ["sleeper --ms 3000", "echo"], max_frames=3,
                        result_timeout_s=0.5))
    assert report.entry("sleeper --ms 3000", 0)["failure"].startswith("straggler")
    assert report.entry("echo", 0)["frames_delivered"] == 3


def test_unsupported_task_fails_handshake(full_log):
    report = run(config(full_log, ["echo --task tracking", "echo"], max_frames=2))
    bad = report.entry("echo --task tracking", 0)
    assert bad["status"] == "failed" and bad["failure"].startswith("handshake failed")
    assert "unsupported task kind" in bad["failure"]
    assert report.entry("echo", 0)["status"] == "ok"


def test_upscale_refused(tmp_path):
    small = tmp_path / "small.rlog"
    write_log(SyntheticConfig(seed=1, duration_s=0.2,
                              streams=[StreamSpec(StreamKind.CAMERA_MONO, 640, 480)]), small)
    with pytest.raises(RunError, match="upscale refused"):
        run(config(str(small), ["echo"], presets="3"))


def test_invalid_log_is_rejected(tmp_path):
    bad = tmp_path / "bad.rlog"
    bad.write_bytes(b"junk" * 10)
    with pytest.raises(RunError, match="log failed validation"):
        run(config(str(bad), ["echo"]))


def test_small_ring_keeps_order(full_log):
    report = run(config(full_log, ["echo:2"], presets="0,2,4", slot_count=1,
                        slice_length_ns=50_000_000))
    assert report.complete and report.counters.failures == []
    assert all(e["frames_delivered"] == e["frames_expected"] for e in report.entries)
