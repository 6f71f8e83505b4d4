"""Shared primitives: latent grids, prompt embeddings, schedules, RNG streams.

Latent states are plain float64 numpy arrays whose trailing two axes are
(height, width); any leading axes are batch axes. Randomness is organised as
named streams derived from a root seed plus a label path, so that consuming
one stream can never advance another. That isolation is what makes
reduction-to-baseline comparisons byte-identical: a feature that draws nothing
from its own stream leaves every other stream untouched.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

Label = Union[int, str]

SCHEDULE_KINDS = ("constant", "linear", "cosine", "annealed")

BRANCH_CONDITIONAL = "conditional"
BRANCH_UNCONDITIONAL = "unconditional"


def _encode_labels(root_seed: int, labels: Sequence[Label]) -> bytes:
    parts = [b"ttslab.stream.v1", struct.pack("<q", int(root_seed))]
    for label in labels:
        if isinstance(label, str):
            raw = label.encode("utf-8")
            parts.append(b"s" + struct.pack("<I", len(raw)) + raw)
        elif isinstance(label, (int, np.integer)) and not isinstance(label, bool):
            parts.append(b"i" + struct.pack("<q", int(label)))
        else:
            raise TypeError(f"stream labels must be int or str, got {label!r}")
    return b"\x00".join(parts)


def derive_stream(root_seed: int, labels: Sequence[Label]) -> np.random.Generator:
    """Return a fresh generator for the stream keyed by (root_seed, labels).

    The same key always yields the same value sequence, and distinct keys give
    statistically independent streams (the key is hashed with SHA-256 into the
    generator's seed material). Each call returns a generator rewound to the
    start of its stream.
    """
    digest = hashlib.sha256(_encode_labels(root_seed, labels)).digest()
    entropy = int.from_bytes(digest, "big")
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass(frozen=True)
class RngStream:
    """Identity of a derived random stream: a root seed plus a label path."""

    root_seed: int
    labels: tuple[Label, ...] = ()

    def generator(self) -> np.random.Generator:
        return derive_stream(self.root_seed, self.labels)

    def child(self, *labels: Label) -> "RngStream":
        return RngStream(self.root_seed, self.labels + tuple(labels))


@dataclass(frozen=True)
class SeedCtx:
    """Seed context threaded through samplers and search strategies.

    ``particle`` is the identity suffix appended to every stream label drawn
    under this context, so per-candidate streams are disjoint by construction.
    """

    root_seed: int
    particle: tuple[Label, ...] = ()

    def child(self, *labels: Label) -> "SeedCtx":
        return SeedCtx(self.root_seed, self.particle + tuple(labels))

    def stream(self, name: str, *qualifiers: Label) -> np.random.Generator:
        return derive_stream(self.root_seed, [name, *qualifiers, *self.particle])


@dataclass(frozen=True)
class PromptEmbedding:
    """Token-embedding matrix for one guidance branch.

    tokens has shape (..., n_tokens, embed_dim); leading axes are batch axes.
    Rows before ``eos_index`` are the semantic tokens, rows at and after it are
    padding.
    """

    tokens: np.ndarray
    eos_index: int
    branch: str

    def __post_init__(self):
        tokens = np.asarray(self.tokens, dtype=np.float64)
        object.__setattr__(self, "tokens", tokens)
        if tokens.ndim < 2:
            raise ValueError("tokens must have shape (..., n_tokens, embed_dim)")
        if not (0 <= self.eos_index < tokens.shape[-2]):
            raise ValueError(
                f"eos_index {self.eos_index} out of range for {tokens.shape[-2]} tokens"
            )
        if self.branch not in (BRANCH_CONDITIONAL, BRANCH_UNCONDITIONAL):
            raise ValueError(f"unknown branch {self.branch!r}")
        if not np.all(np.isfinite(tokens)):
            raise ValueError("tokens must be finite")

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[-2]

    @property
    def embed_dim(self) -> int:
        return self.tokens.shape[-1]

    def with_tokens(self, tokens: np.ndarray) -> "PromptEmbedding":
        return PromptEmbedding(tokens, self.eos_index, self.branch)


@dataclass(frozen=True)
class ConditionPair:
    """The two guidance branches of one prompt: conditional and unconditional."""

    cond: PromptEmbedding
    uncond: PromptEmbedding

    def __post_init__(self):
        if self.cond.branch != BRANCH_CONDITIONAL:
            raise ValueError("cond embedding must carry the conditional branch tag")
        if self.uncond.branch != BRANCH_UNCONDITIONAL:
            raise ValueError("uncond embedding must carry the unconditional branch tag")
        if self.cond.tokens.shape != self.uncond.tokens.shape:
            raise ValueError("branch embeddings must share (n_tokens, embed_dim)")


@dataclass(frozen=True)
class ScheduleSpec:
    """Scalar schedule over denoising steps.

    kinds: constant; linear ramp start->end; cosine (half-cosine ease between
    the same endpoints); annealed (the linear ramp reversed, so it runs
    end->start and is non-increasing whenever start <= end).
    """

    kind: str
    start_value: float = 0.0
    end_value: float = 0.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        for name in ("start_value", "end_value"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise ValueError(f"{name} must be a finite number, got {v!r}")


def constant(value: float) -> ScheduleSpec:
    return ScheduleSpec("constant", value, value)


def schedule_eval(spec: ScheduleSpec, step: int, total_steps: int) -> float:
    """Evaluate a schedule at an integer step in [0, total_steps).

    A single-step schedule (total_steps == 1) evaluates to start_value for
    every kind.
    """
    if total_steps < 1:
        raise ValueError("total_steps must be >= 1")
    if not (0 <= step < total_steps):
        raise ValueError(f"step {step} outside [0, {total_steps})")
    if total_steps == 1:
        return float(spec.start_value)
    frac = step / (total_steps - 1)
    if spec.kind == "constant":
        return float(spec.start_value)
    if spec.kind == "linear":
        return spec.start_value + (spec.end_value - spec.start_value) * frac
    if spec.kind == "cosine":
        eased = (1.0 - math.cos(math.pi * frac)) / 2.0
        return spec.start_value + (spec.end_value - spec.start_value) * eased
    # annealed: the linear ramp traversed in reverse step order
    rev = (total_steps - 1 - step) / (total_steps - 1)
    return spec.start_value + (spec.end_value - spec.start_value) * rev


def validate_grid(grid: np.ndarray, *, name: str = "grid") -> np.ndarray:
    """Check an array is a finite float grid (..., height, width) and return it."""
    arr = np.asarray(grid, dtype=np.float64)
    if arr.ndim < 2:
        raise ValueError(f"{name} must have at least 2 dimensions")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr
