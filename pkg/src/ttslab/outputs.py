"""File formats for run artifacts: PGM latents, JSONL logs, CSV tables.

Every writer here is byte-deterministic for a given payload: floats are
serialized with shortest round-trip repr, dict keys are sorted, newlines are
always "\\n". That is what makes re-running a manifest reproduce identical
CSV/JSONL bytes.
"""

from __future__ import annotations

import json
import pathlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

PGM_MAXVAL = 65535


def write_pgm(path, latent) -> pathlib.Path:
    """Write a latent grid as binary 16-bit PGM (P5), min-max scaled.

    The scaling bounds go to a JSON sidecar next to the image so the float
    values are recoverable up to quantization. A constant grid writes all
    zeros with min == max in the sidecar.
    """
    path = pathlib.Path(path)
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim != 2:
        raise ValueError("PGM output needs a single 2D grid")
    lo = float(latent.min())
    hi = float(latent.max())
    if hi > lo:
        scaled = (latent - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(latent)
    pixels = np.round(scaled * PGM_MAXVAL).astype(">u2")
    height, width = latent.shape
    header = f"P5\n{width} {height}\n{PGM_MAXVAL}\n".encode("ascii")
    path.write_bytes(header + pixels.tobytes())
    sidecar = path.with_suffix(path.suffix + ".minmax.json")
    sidecar.write_text(
        json.dumps({"max": hi, "min": lo}, sort_keys=True) + "\n"
    )
    return sidecar


def read_pgm(path) -> np.ndarray:
    """Read a PGM written by write_pgm back to floats via its sidecar."""
    path = pathlib.Path(path)
    blob = path.read_bytes()
    parts = blob.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise ValueError(f"{path} is not a binary PGM")
    width, height = (int(v) for v in parts[1].split())
    maxval = int(parts[2])
    pixels = np.frombuffer(parts[3], dtype=">u2").reshape((height, width))
    sidecar = path.with_suffix(path.suffix + ".minmax.json")
    bounds = json.loads(sidecar.read_text())
    lo, hi = bounds["min"], bounds["max"]
    if hi <= lo:
        return np.full((height, width), lo)
    return lo + (pixels.astype(np.float64) / maxval) * (hi - lo)


def json_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def write_jsonl(path, records: Iterable[dict]) -> None:
    path = pathlib.Path(path)
    with path.open("w") as f:
        for record in records:
            f.write(json_line(record) + "\n")


def read_jsonl(path) -> list:
    path = pathlib.Path(path)
    records = []
    with path.open() as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(
                    f"{path}: corrupt JSONL at line {lineno}: {exc}"
                ) from exc
    return records


def format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = pathlib.Path(path)
    with path.open("w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(format_cell(v) for v in row) + "\n")


def write_latent_csv(path, latent) -> None:
    """Raw float values of one grid, one row per line."""
    latent = np.asarray(latent, dtype=np.float64)
    if latent.ndim != 2:
        raise ValueError("latent CSV needs a single 2D grid")
    path = pathlib.Path(path)
    with path.open("w") as f:
        for row in latent:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def read_latent_csv(path) -> np.ndarray:
    rows = []
    for line in pathlib.Path(path).read_text().splitlines():
        if line:
            rows.append([float(v) for v in line.split(",")])
    return np.array(rows)


class TrajectoryTracer:
    """Record hook for run_trajectory that builds per-step dump records.

    Captures step, mode, reward of the evolving latent, and reward of the
    step's x0 prediction. Purely observational: it adds no denoiser calls.
    """

    def __init__(self, reward_fn: Callable, modes: Sequence[str]):
        self.reward_fn = reward_fn
        self.modes = modes
        self.records: list = []

    def __call__(self, step: int, latent, x0) -> Optional[float]:
        reward = float(np.asarray(self.reward_fn(latent[None])).reshape(-1)[0])
        x0_reward = float(np.asarray(self.reward_fn(x0[None])).reshape(-1)[0])
        self.records.append(
            {
                "step": int(step),
                "mode": self.modes[step],
                "reward": reward,
                "x0_reward": x0_reward,
            }
        )
        return reward


def dump_trajectory(out_dir, name: str, records: Sequence[dict], latent) -> dict:
    """Write one trajectory's JSONL record, PGM image, and raw CSV.

    Returns a mapping of artifact kind to file name for the manifest.
    """
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jsonl = out_dir / f"{name}.jsonl"
    pgm = out_dir / f"{name}.pgm"
    csv = out_dir / f"{name}.csv"
    write_jsonl(jsonl, records)
    sidecar = write_pgm(pgm, latent)
    write_latent_csv(csv, latent)
    return {
        "trajectory_jsonl": jsonl.name,
        "latent_pgm": pgm.name,
        "latent_minmax": sidecar.name,
        "latent_csv": csv.name,
    }


def write_manifest(
    out_dir,
    *,
    config_hash: str,
    root_seed: int,
    files: dict,
    timings: dict,
) -> pathlib.Path:
    """Run manifest: what was produced, from what config, how long it took."""
    out_dir = pathlib.Path(out_dir)
    payload = {
        "config_hash": config_hash,
        "files": dict(sorted(files.items())),
        "out_dir": out_dir.name,
        "root_seed": int(root_seed),
        "timings": {k: float(v) for k, v in sorted(timings.items())},
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    return json.loads(pathlib.Path(path).read_text())
