"""Artifact format round-trip tests."""

import dataclasses
import json

import numpy as np
import pytest

from ttslab.config import ExperimentConfig, ModelSpec, RewardConfig, SamplerConfig
from ttslab.core import SeedCtx
from ttslab.outputs import (
    TrajectoryTracer,
    dump_trajectory,
    format_cell,
    read_jsonl,
    read_latent_csv,
    read_manifest,
    read_pgm,
    write_csv,
    write_jsonl,
    write_latent_csv,
    write_manifest,
    write_pgm,
)
from ttslab.reward import make_reward
from ttslab.sampler import make_mode_plan, run_trajectory
from ttslab.toymodel import build_model, condition_vector

from .test_search import make_pair


def test_pgm_round_trip_within_quantization(tmp_path):
    rng = np.random.default_rng(0)
    latent = rng.standard_normal((8, 8)) * 3.0
    path = tmp_path / "x.pgm"
    write_pgm(path, latent)
    back = read_pgm(path)
    span = latent.max() - latent.min()
    assert np.max(np.abs(back - latent)) <= span / 65535


def test_pgm_bytes_and_endianness(tmp_path):
    path = tmp_path / "x.pgm"
    write_pgm(path, np.array([[0.0, 1.0]]))
    blob = path.read_bytes()
    assert blob == b"P5\n2 1\n65535\n" + b"\x00\x00\xff\xff"


def test_pgm_constant_grid(tmp_path):
    path = tmp_path / "c.pgm"
    write_pgm(path, np.full((4, 4), 2.5))
    back = read_pgm(path)
    assert np.array_equal(back, np.full((4, 4), 2.5))
    bounds = json.loads((tmp_path / "c.pgm.minmax.json").read_text())
    assert bounds["min"] == bounds["max"] == 2.5


def test_pgm_rejects_non_2d(tmp_path):
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "bad.pgm", np.zeros((2, 2, 2)))


def test_jsonl_round_trip_and_determinism(tmp_path):
    records = [{"b": 1, "a": [1.5, "x"]}, {"z": None, "ok": True}]
    p1 = tmp_path / "a.jsonl"
    p2 = tmp_path / "b.jsonl"
    write_jsonl(p1, records)
    write_jsonl(p2, records)
    assert read_jsonl(p1) == records
    assert p1.read_bytes() == p2.read_bytes()


def test_jsonl_corrupt_line_reports_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"ok": 1}\n{broken\n{"ok": 2}\n')
    with pytest.raises(ValueError, match="line 2"):
        read_jsonl(path)


def test_csv_cells_and_bytes(tmp_path):
    path = tmp_path / "t.csv"
    write_csv(path, ["variable", "arm", "mean"], [[0.5, "a", 1], [True, "b", 2.25]])
    assert path.read_text() == (
        "variable,arm,mean\n0.5,a,1\ntrue,b,2.25\n"
    )
    assert format_cell(np.float64(0.1)) == repr(0.1)
    assert format_cell(np.int32(7)) == "7"
    assert format_cell(False) == "false"


def test_latent_csv_exact_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    latent = rng.standard_normal((6, 5))
    path = tmp_path / "l.csv"
    write_latent_csv(path, latent)
    assert np.array_equal(read_latent_csv(path), latent)


def traced_run():
    cfg = dataclasses.replace(
        ExperimentConfig(),
        model=ModelSpec(height=8, width=8),
        sampler=SamplerConfig(n_steps=16, max_level=0.9, mode="sde"),
    )
    model = build_model(cfg.model, cfg.prompt.embed_dim, seed=0)
    pair = make_pair()
    reward_fn = make_reward(
        RewardConfig(kind="loglik"), model, condition_vector(pair.cond)
    )
    modes = make_mode_plan(16, switch_step=6)
    tracer = TrajectoryTracer(reward_fn, modes)
    result = run_trajectory(
        model, cfg, pair, SeedCtx(4, (0,)), mode_plan=modes, record=tracer
    )
    return tracer, result


def test_tracer_collects_per_step_records():
    tracer, result = traced_run()
    assert len(tracer.records) == 16
    for step, record in enumerate(tracer.records):
        assert record["step"] == step
        assert record["mode"] == ("sde" if step < 6 else "ode")
        assert np.isfinite(record["reward"])
        assert np.isfinite(record["x0_reward"])
    assert result.rewards == tuple(
        (r["step"], r["reward"]) for r in tracer.records
    )


def test_dump_trajectory_writes_artifact_set(tmp_path):
    tracer, result = traced_run()
    files = dump_trajectory(tmp_path, "run0", tracer.records, result.latent)
    assert sorted(files) == [
        "latent_csv", "latent_minmax", "latent_pgm", "trajectory_jsonl",
    ]
    assert read_jsonl(tmp_path / files["trajectory_jsonl"]) == tracer.records
    assert np.array_equal(
        read_latent_csv(tmp_path / files["latent_csv"]), result.latent
    )
    back = read_pgm(tmp_path / files["latent_pgm"])
    span = result.latent.max() - result.latent.min()
    assert np.max(np.abs(back - result.latent)) <= span / 65535


def test_manifest_round_trip(tmp_path):
    path = write_manifest(
        tmp_path,
        config_hash="abc123def456",
        root_seed=9,
        files={"latent_pgm": "run0.pgm"},
        timings={"search": 1.25},
    )
    payload = read_manifest(path)
    assert payload["config_hash"] == "abc123def456"
    assert payload["root_seed"] == 9
    assert payload["files"] == {"latent_pgm": "run0.pgm"}
    assert payload["timings"] == {"search": 1.25}
    assert payload["out_dir"] == tmp_path.name
