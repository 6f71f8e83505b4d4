"""Prompt-embedding perturbation engine.

Perturbations are discriminative along four axes at once: branch (the
unconditional branch takes magnitude w1, the conditional w2, with w1
dominating), token role (semantic rows are protected, padding rows take the
full hit), layer depth (shallow layers get a larger relative scale than deep
ones), and step (magnitudes follow schedules that intensify late). Direction
draws and magnitude evaluation are separate concerns: a redraw policy decides
when fresh Gaussian directions are drawn, while the applied magnitude always
tracks the current step's schedule value.

Magnitudes are expressed in units of the conditional embedding's empirical
entry std, so the same config transfers across embedding scales.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .config import PerturbConfig
from .core import (
    BRANCH_UNCONDITIONAL,
    ConditionPair,
    PromptEmbedding,
    schedule_eval,
)

EVENT_TRAJECTORY_START = "trajectory_start"
EVENT_SDE_STEP = "sde_step"
EVENT_RESAMPLE = "resample"

_STRATEGY_DEFAULT_POLICY = {
    "best_of_n": "once_at_start",
    "zero_order": "once_at_start",
    "particle": "per_sde_step",
    "search_over_paths": "per_resample",
}


@dataclass(frozen=True)
class PerturbationDraw:
    """One pair of standard-normal direction tensors, tagged by draw step."""

    eps1: np.ndarray  # shaped like the unconditional tokens
    eps2: np.ndarray  # shaped like the conditional tokens
    draw_step: int


@dataclass(frozen=True)
class TepState:
    """Per-trajectory perturbation state threaded through the sampler.

    ``draw`` None means no directions exist yet and embeddings pass through
    untouched. ``step`` is the index magnitudes are evaluated at; it advances
    every step regardless of whether directions were redrawn.
    """

    config: PerturbConfig
    policy: str
    total_steps: int
    emb_std: float
    uncond_shape: tuple
    cond_shape: tuple
    step: int = 0
    draw: Optional[PerturbationDraw] = None

    def at_step(self, step: int) -> "TepState":
        return replace(self, step=step)


def resolve_redraw_policy(config: PerturbConfig, strategy: str) -> str:
    """Concrete redraw policy: the configured one, or the strategy's default."""
    if config.redraw_policy is not None:
        return config.redraw_policy
    try:
        return _STRATEGY_DEFAULT_POLICY[strategy]
    except KeyError:
        raise ValueError(f"unknown strategy {strategy!r}") from None


def embedding_std(pair: ConditionPair) -> float:
    """Empirical std of the conditional embedding entries (population form)."""
    return float(np.std(pair.cond.tokens))


def initial_state(
    config: PerturbConfig, policy: str, total_steps: int, pair: ConditionPair
) -> TepState:
    return TepState(
        config=config,
        policy=policy,
        total_steps=total_steps,
        emb_std=embedding_std(pair),
        uncond_shape=tuple(pair.uncond.tokens.shape),
        cond_shape=tuple(pair.cond.tokens.shape),
    )


def layer_scale(layer: int, config: PerturbConfig, n_layers: int) -> float:
    """Relative per-layer coefficient: shallow below the threshold, deep at/above."""
    if not 0 <= layer < n_layers:
        raise ValueError(f"layer {layer} outside [0, {n_layers})")
    return config.shallow_scale if layer < config.layer_threshold else config.deep_scale


def token_scales(eos_index: int, n_tokens: int, config: PerturbConfig) -> np.ndarray:
    """Per-token scale vector for the conditional branch.

    Semantic rows (before eos) get semantic_token_scale, the rest
    padding_token_scale. The unconditional branch never consults this; its
    rows are scaled uniformly at 1.
    """
    if eos_index >= n_tokens:
        raise ValueError("eos_index must be < n_tokens")
    out = np.full(n_tokens, config.padding_token_scale)
    out[:eos_index] = config.semantic_token_scale
    return out


def draw_perturbation(
    uncond_shape: tuple, cond_shape: tuple, step: int, rng: np.random.Generator
) -> PerturbationDraw:
    """Fresh standard-normal direction tensors; eps1 is drawn before eps2."""
    eps1 = rng.standard_normal(uncond_shape)
    eps2 = rng.standard_normal(cond_shape)
    return PerturbationDraw(eps1=eps1, eps2=eps2, draw_step=step)


def _policy_redraws(policy: str, event: str) -> bool:
    if policy == "once_at_start":
        return event == EVENT_TRAJECTORY_START
    if policy == "per_sde_step":
        return event == EVENT_SDE_STEP
    if policy == "per_resample":
        return event in (EVENT_TRAJECTORY_START, EVENT_RESAMPLE)
    raise ValueError(f"unknown redraw policy {policy!r}")


def prepare_step_state(
    state: TepState, step: int, event: str, rng: Optional[np.random.Generator]
) -> TepState:
    """Advance the state to ``step``, redrawing directions iff the event matches.

    Events that the policy ignores (a resample under once_at_start, say) are
    quiet no-ops apart from the step advance.
    """
    if event not in (EVENT_TRAJECTORY_START, EVENT_SDE_STEP, EVENT_RESAMPLE):
        raise ValueError(f"unknown strategy event {event!r}")
    if not _policy_redraws(state.policy, event):
        return state.at_step(step)
    if rng is None:
        raise ValueError(f"event {event} requires an rng under policy {state.policy}")
    draw = draw_perturbation(state.uncond_shape, state.cond_shape, step, rng)
    return replace(state, step=step, draw=draw)


def _check_draw_shape(eps: np.ndarray, e: PromptEmbedding) -> np.ndarray:
    # a batched draw (B, n, d) may meet a shared (n, d) embedding; trailing
    # token dims must agree either way
    if eps.shape[-2:] != e.tokens.shape[-2:] or eps.ndim < e.tokens.ndim:
        raise ValueError(
            f"draw shape {eps.shape} does not match embedding {e.tokens.shape}"
        )
    return eps


def apply_perturbation(
    e: PromptEmbedding, state: Optional[TepState], layer: int, n_layers: int
) -> PromptEmbedding:
    """Perturb one branch embedding for one layer at the state's current step.

    Returns the input object itself whenever the effective magnitude is zero
    or no directions have been drawn, so disabled perturbation is bit-exact.
    """
    if state is None or state.draw is None:
        return e
    cfg = state.config
    scale = layer_scale(layer, cfg, n_layers)
    if e.branch == BRANCH_UNCONDITIONAL:
        w = schedule_eval(cfg.w1, state.step, state.total_steps)
        magnitude = scale * w * state.emb_std
        if magnitude == 0.0:
            return e
        eps = _check_draw_shape(state.draw.eps1, e)
        return e.with_tokens(e.tokens + magnitude * eps)
    w = schedule_eval(cfg.w2, state.step, state.total_steps)
    magnitude = scale * w * state.emb_std
    if magnitude == 0.0:
        return e
    eps = _check_draw_shape(state.draw.eps2, e)
    scales = token_scales(e.eos_index, e.n_tokens, cfg)
    return e.with_tokens(e.tokens + magnitude * (scales[:, None] * eps))
