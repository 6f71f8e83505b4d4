"""End-to-end CLI tests: exit codes, artifacts, reproducibility, reporting."""

import argparse
import csv
import io

import pytest

from ttslab.cli import (
    EXIT_OK,
    EXIT_RUNTIME,
    EXIT_USAGE,
    UsageError,
    cmd_run,
    main,
    parse_seeds,
)
from ttslab.config import config_hash, load_config
from ttslab.outputs import read_jsonl

SMALL_CONFIG = """\
[model]
height = 8
width = 8

[prompt]
n_prompts = 2

[sampler]
n_steps = 8
max_level = 0.9

[search]
n_candidates = 4
"""


@pytest.fixture
def cfg_path(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL_CONFIG)
    return path


RUN_FILES = (
    "config.txt",
    "trajectory.jsonl",
    "latent.pgm",
    "latent.pgm.minmax.json",
    "latent.csv",
    "result.jsonl",
    "manifest.json",
)


def read_csv_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- seed parsing ------------------------------------------------------------


def test_parse_seeds_forms():
    assert parse_seeds("") == []
    assert parse_seeds("0:5") == [0, 1, 2, 3, 4]
    assert parse_seeds("3,5,9") == [3, 5, 9]
    with pytest.raises(UsageError):
        parse_seeds("three")


# -- run ---------------------------------------------------------------------


def test_run_writes_artifacts_and_reruns_identically(tmp_path, cfg_path, capsys):
    out = tmp_path / "run_a"
    argv = ["run", "--config", str(cfg_path), "--out", str(out), "--seed", "3"]
    assert main(argv) == EXIT_OK
    for name in RUN_FILES:
        assert (out / name).exists(), name
    stable = [n for n in RUN_FILES if n != "manifest.json"]
    first = {n: (out / n).read_bytes() for n in stable}

    assert main(argv) == EXIT_OK
    for n in stable:
        assert (out / n).read_bytes() == first[n], n

    record = read_jsonl(out / "result.jsonl")[0]
    cfg = load_config(cfg_path)
    assert record["config_hash"] == config_hash(cfg)
    assert record["root_seed"] == 3
    assert record["tep"] is True
    assert record["ndfe"] == 4 * 8
    out_text = capsys.readouterr().out
    assert "best reward" in out_text


def test_run_resolved_config_rehashes(tmp_path, cfg_path):
    out = tmp_path / "run_b"
    assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == EXIT_OK
    import json

    manifest = json.loads((out / "manifest.json").read_text())
    # the stored resolved config reproduces the manifest's hash
    reloaded = load_config(out / "config.txt")
    assert config_hash(reloaded) == manifest["config_hash"]


def test_run_override_can_zero_perturbation(tmp_path, cfg_path):
    out = tmp_path / "run_c"
    argv = [
        "run",
        "--config",
        str(cfg_path),
        "--out",
        str(out),
        "--set",
        "tep.w1.end_value=0",
        "--set",
        "tep.w2.end_value=0",
    ]
    assert main(argv) == EXIT_OK
    record = read_jsonl(out / "result.jsonl")[0]
    assert record["tep"] is False


def test_run_missing_config_is_usage_error(tmp_path, capsys):
    rc = main(["run", "--config", str(tmp_path / "absent.toml")])
    assert rc == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


def test_run_invalid_config_value_is_usage_error(tmp_path, cfg_path, capsys):
    rc = main(
        [
            "run",
            "--config",
            str(cfg_path),
            "--out",
            str(tmp_path / "x"),
            "--set",
            "search.n_candidates=0",
        ]
    )
    assert rc == EXIT_USAGE
    assert "search.n_candidates" in capsys.readouterr().err


def test_run_failure_removes_partial_outputs(tmp_path, cfg_path, monkeypatch):
    out = tmp_path / "broken"

    def boom(path, latent):
        raise RuntimeError("disk full")

    monkeypatch.setattr("ttslab.cli.write_latent_csv", boom)
    args = argparse.Namespace(
        config=str(cfg_path), set=[], out=str(out), seed=None, workers=1
    )
    with pytest.raises(RuntimeError, match="disk full"):
        cmd_run(args)
    assert not out.exists()


def test_missing_command_is_usage_error(capsys):
    assert main([]) == EXIT_USAGE
    assert "usage error" in capsys.readouterr().err


# -- analyze -----------------------------------------------------------------


def test_analyze_unknown_experiment_lists_valid_names(tmp_path, cfg_path, capsys):
    rc = main(
        [
            "analyze",
            "--config",
            str(cfg_path),
            "--experiment",
            "warp",
            "--out",
            str(tmp_path / "a"),
        ]
    )
    assert rc == EXIT_USAGE
    err = capsys.readouterr().err
    for name in (
        "sde_to_ode",
        "band_attenuation",
        "influence",
        "tolerance",
        "diversity_cfg",
        "scaling",
    ):
        assert name in err


def test_analyze_empty_seed_list_is_usage_error(tmp_path, cfg_path, capsys):
    rc = main(
        [
            "analyze",
            "--config",
            str(cfg_path),
            "--experiment",
            "sde_to_ode",
            "--seeds",
            "",
            "--out",
            str(tmp_path / "a"),
        ]
    )
    assert rc == EXIT_USAGE
    assert "empty seed list" in capsys.readouterr().err


def test_analyze_influence_bands_sum_to_total(tmp_path, cfg_path):
    out = tmp_path / "inf"
    rc = main(
        [
            "analyze",
            "--config",
            str(cfg_path),
            "--experiment",
            "influence",
            "--seeds",
            "0:2",
            "--out",
            str(out),
        ]
    )
    assert rc == EXIT_OK
    cfg = load_config(cfg_path)
    path = out / f"influence_{config_hash(cfg)}.csv"
    rows = read_csv_rows(path)
    assert len(rows) == 8 * 3 * 3
    by_key = {(r["variable"], r["arm"]): float(r["mean"]) for r in rows}
    for step in range(8):
        for src in ("spatial", "embedding", "both"):
            total = by_key[(str(step), f"{src}:total")]
            low = by_key[(str(step), f"{src}:low")]
            high = by_key[(str(step), f"{src}:high")]
            assert abs(low + high - total) <= 1e-10 * max(1.0, total)


def test_analyze_scaling_writes_budget_indexed_csv(tmp_path, cfg_path):
    out = tmp_path / "scale"
    rc = main(
        [
            "analyze",
            "--config",
            str(cfg_path),
            "--experiment",
            "scaling",
            "--axis",
            "nrfe",
            "--seeds",
            "0:2",
            "--out",
            str(out),
        ]
    )
    assert rc == EXIT_OK
    cfg = load_config(cfg_path)
    rows = read_csv_rows(out / f"scaling_nrfe_{config_hash(cfg)}.csv")
    assert [r["variable"] for r in rows] == [
        str(b) for b in (1, 2, 4, 8, 16) for _ in range(2)
    ]
    assert {r["arm"] for r in rows} == {"tep", "no_tep"}


def test_analyze_worker_count_does_not_change_output(tmp_path, cfg_path):
    outs = []
    for workers, label in ((1, "w1"), (3, "w3")):
        out = tmp_path / label
        rc = main(
            [
                "analyze",
                "--config",
                str(cfg_path),
                "--experiment",
                "sde_to_ode",
                "--seeds",
                "0:3",
                "--workers",
                str(workers),
                "--out",
                str(out),
            ]
        )
        assert rc == EXIT_OK
        cfg = load_config(cfg_path)
        outs.append((out / f"sde_to_ode_{config_hash(cfg)}.csv").read_bytes())
    assert outs[0] == outs[1]


# -- report ------------------------------------------------------------------


def run_once(cfg_path, out, seed, *extra):
    argv = [
        "run",
        "--config",
        str(cfg_path),
        "--out",
        str(out),
        "--seed",
        str(seed),
        *extra,
    ]
    assert main(argv) == EXIT_OK


def test_report_single_run_echoes_numbers(tmp_path, cfg_path, capsys):
    run_dir = tmp_path / "r0"
    run_once(cfg_path, run_dir, 5)
    record = read_jsonl(run_dir / "result.jsonl")[0]
    out = tmp_path / "rep"
    assert main(["report", str(run_dir), "--out", str(out)]) == EXIT_OK
    rows = read_csv_rows(out / f"report_{record['comparable_hash']}.csv")
    assert len(rows) == 1
    assert rows[0]["variable"] == "best_of_n"
    assert rows[0]["arm"] == "tep"
    assert float(rows[0]["mean"]) == record["best_reward"]
    assert rows[0]["stderr"] == ""
    assert rows[0]["n"] == "1"


def test_report_two_arms_get_paired_difference(tmp_path, cfg_path, capsys):
    dirs = []
    for seed in (1, 2):
        d = tmp_path / f"tep{seed}"
        run_once(cfg_path, d, seed)
        dirs.append(str(d))
    for seed in (1, 2):
        d = tmp_path / f"base{seed}"
        run_once(
            cfg_path,
            d,
            seed,
            "--set",
            "tep.w1.end_value=0",
            "--set",
            "tep.w2.end_value=0",
        )
        dirs.append(str(d))
    out = tmp_path / "rep"
    assert main(["report", *dirs, "--out", str(out)]) == EXIT_OK
    table = capsys.readouterr().out
    assert "paired_diff" in table
    record = read_jsonl(tmp_path / "tep1" / "result.jsonl")[0]
    rows = read_csv_rows(out / f"report_{record['comparable_hash']}.csv")
    assert len(rows) == 3
    diff_row = rows[-1]
    assert diff_row["variable"] == "paired_diff"
    assert diff_row["n"] == "2"
    by_arm = {r["arm"]: float(r["mean"]) for r in rows[:2]}
    want = by_arm["no_tep"] - by_arm["tep"]
    assert abs(float(diff_row["mean"]) - want) < 1e-9 * max(1.0, abs(want))


def test_report_mixed_configs_name_the_hashes(tmp_path, cfg_path, capsys):
    a = tmp_path / "a"
    run_once(cfg_path, a, 1)
    b = tmp_path / "b"
    run_once(cfg_path, b, 1, "--set", "sampler.n_steps=16")
    rc = main(["report", str(a), str(b), "--out", str(tmp_path / "rep")])
    assert rc == EXIT_USAGE
    err = capsys.readouterr().err
    ha = read_jsonl(a / "result.jsonl")[0]["comparable_hash"]
    hb = read_jsonl(b / "result.jsonl")[0]["comparable_hash"]
    assert ha in err and hb in err


def test_report_corrupt_result_line_is_runtime_error(tmp_path, cfg_path, capsys):
    d = tmp_path / "r"
    run_once(cfg_path, d, 1)
    with open(d / "result.jsonl", "a") as fh:
        fh.write("{not json\n")
    rc = main(["report", str(d), "--out", str(tmp_path / "rep")])
    assert rc == EXIT_RUNTIME
    assert "line 2" in capsys.readouterr().err
