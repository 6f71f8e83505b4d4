"""Test-time search strategies over the trajectory runner.

All four strategies share the same accounting: NDFE counts guided denoiser
evaluations (one per candidate per step, plus one per candidate at each
interior scoring checkpoint), NRFE counts scalar reward evaluations. Stream
labels carry candidate identity, so batched execution, sequential execution,
and any parallel schedule produce identical bytes.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .config import ExperimentConfig
from .core import ConditionPair, RngStream, SeedCtx
from .sampler import (
    Runner,
    forward_noise,
    make_mode_plan,
    predict_x0,
    vp_schedule,
)
from .tep import EVENT_RESAMPLE, prepare_step_state
from .toymodel import ToyModel

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchResult:
    """Outcome of one search run.

    For best_of_n and particle, ``rewards`` lists final candidates in id
    order (so best-over-first-n prefixes are computable); zero_order lists
    every evaluation in evaluation order, search_over_paths the surviving
    pool. ``events`` is a JSONL-ready log of the search decisions.
    """

    best_latent: np.ndarray
    best_reward: float
    best_index: int
    rewards: tuple
    ndfe: int
    nrfe: int
    wall_time: float
    events: tuple


class _Budget:
    def __init__(self):
        self.ndfe = 0
        self.nrfe = 0


def _score(reward_fn: Callable, latents: np.ndarray, budget: _Budget) -> np.ndarray:
    values = np.asarray(reward_fn(latents), dtype=np.float64).reshape(-1)
    if values.shape[0] != latents.shape[0]:
        raise ValueError("reward_fn must return one value per candidate")
    budget.nrfe += latents.shape[0]
    return values


def systematic_resample(weights, n: int, rng) -> np.ndarray:
    """Systematic (stratified, single-offset) resampling of n indices.

    Counts per index stay within floor/ceil of n * weight, the low-variance
    guarantee the importance policy relies on.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.ndim != 1 or weights.shape[0] == 0:
        raise ValueError("weights must be a non-empty vector")
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("weights must sum to 1 within 1e-9")
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    indices = np.searchsorted(cumulative, positions, side="right")
    return np.clip(indices, 0, weights.shape[0] - 1)


def run_search(
    model: ToyModel,
    config: ExperimentConfig,
    pair: ConditionPair,
    reward_fn: Callable,
    root_seed: int,
) -> SearchResult:
    """Dispatch on config.search.strategy."""
    strategy = config.search.strategy
    if strategy == "best_of_n":
        return best_of_n(model, config, pair, reward_fn, root_seed)
    if strategy == "zero_order":
        return zero_order(model, config, pair, reward_fn, root_seed)
    if strategy == "particle":
        return particle_search(model, config, pair, reward_fn, root_seed)
    if strategy == "search_over_paths":
        return search_over_paths(model, config, pair, reward_fn, root_seed)
    raise ValueError(f"unknown search strategy {strategy!r}")


# -- best-of-N ---------------------------------------------------------------


def best_of_n(
    model: ToyModel,
    config: ExperimentConfig,
    pair: ConditionPair,
    reward_fn: Callable,
    root_seed: int,
) -> SearchResult:
    start = time.perf_counter()
    budget = _Budget()
    n = config.search.n_candidates
    runner = Runner(model, config, pair, strategy="best_of_n")
    modes = make_mode_plan(runner.n_steps, config.sampler.mode)
    ctxs = [SeedCtx(root_seed, (i,)) for i in range(n)]
    latents = runner.initial_latents(ctxs)
    states = runner.start_states(ctxs)
    latents, _ = runner.run(latents, ctxs, states, modes=modes)
    budget.ndfe += n * runner.n_steps
    rewards = _score(reward_fn, latents, budget)
    best = int(np.argmax(rewards))
    events = (
        {
            "event": "selection",
            "step": runner.n_steps,
            "particles": list(range(n)),
            "rewards": [float(r) for r in rewards],
            "kept": [best],
        },
    )
    return SearchResult(
        best_latent=latents[best],
        best_reward=float(rewards[best]),
        best_index=best,
        rewards=tuple(float(r) for r in rewards),
        ndfe=budget.ndfe,
        nrfe=budget.nrfe,
        wall_time=time.perf_counter() - start,
        events=events,
    )


# -- zero-order pivot search -------------------------------------------------


def zero_order(
    model: ToyModel,
    config: ExperimentConfig,
    pair: ConditionPair,
    reward_fn: Callable,
    root_seed: int,
) -> SearchResult:
    start = time.perf_counter()
    budget = _Budget()
    n = config.search.n_candidates
    rounds = config.search.zo_rounds
    radius = config.search.zo_radius
    mix_pivot = np.sqrt(max(1.0 - radius * radius, 0.0))
    runner = Runner(model, config, pair, strategy="zero_order")
    modes = make_mode_plan(runner.n_steps, "ode")

    pivot_ctx = SeedCtx(root_seed, (0, 0))
    pivot_init = runner.initial_latents([pivot_ctx])
    states = runner.start_states([pivot_ctx])
    final, _ = runner.run(pivot_init.copy(), [pivot_ctx], states, modes=modes)
    budget.ndfe += runner.n_steps
    pivot_reward = float(_score(reward_fn, final, budget)[0])
    best_latent = final[0]
    all_rewards = [pivot_reward]
    events = []

    for r in range(1, rounds + 1):
        ctxs = [SeedCtx(root_seed, (r, j)) for j in range(n)]
        fresh = np.stack(
            [ctx.stream("zo").standard_normal(pivot_init.shape[-2:]) for ctx in ctxs]
        )
        inits = mix_pivot * pivot_init[0] + radius * fresh
        states = runner.start_states(ctxs)
        finals, _ = runner.run(inits, ctxs, states, modes=modes)
        budget.ndfe += n * runner.n_steps
        rewards = _score(reward_fn, finals, budget)
        all_rewards.extend(float(v) for v in rewards)
        champ = int(np.argmax(rewards))
        adopted = bool(rewards[champ] > pivot_reward)
        events.append(
            {
                "event": "selection",
                "step": runner.n_steps,
                "round": r,
                "particles": [(r, j) for j in range(n)],
                "rewards": [float(v) for v in rewards],
                "kept": [champ],
                "adopted": adopted,
            }
        )
        if adopted:
            pivot_reward = float(rewards[champ])
            pivot_init = inits[champ][None]
            best_latent = finals[champ]

    return SearchResult(
        best_latent=best_latent,
        best_reward=pivot_reward,
        best_index=int(np.argmax(all_rewards)),
        rewards=tuple(all_rewards),
        ndfe=budget.ndfe,
        nrfe=budget.nrfe,
        wall_time=time.perf_counter() - start,
        events=tuple(events),
    )


# -- particle search ---------------------------------------------------------


def _selection_scores(
    runner: Runner, latents, ctxs, states, step: int, budget: _Budget,
    reward_fn: Callable,
) -> np.ndarray:
    """Reward of each candidate's x0 prediction at an interior checkpoint."""
    from .guidance import guided_epsilon
    from .sampler import _stack_states

    t = float(runner.levels[step])
    advanced = None
    if states is not None and states[0] is not None:
        advanced = _stack_states([s.at_step(step) for s in states])
    alpha, sigma = vp_schedule(t)
    eps_hat = guided_epsilon(
        runner.model, latents, alpha, sigma, runner.pair, advanced,
        runner.config.cfg_scale,
    )
    budget.ndfe += latents.shape[0]
    x0 = predict_x0(latents, eps_hat, t)
    return _score(reward_fn, x0, budget)


def particle_search(
    model: ToyModel,
    config: ExperimentConfig,
    pair: ConditionPair,
    reward_fn: Callable,
    root_seed: int,
) -> SearchResult:
    start = time.perf_counter()
    budget = _Budget()
    p = config.search.n_particles
    m = config.search.n_children
    block = config.search.block_steps
    selection = config.search.selection
    runner = Runner(model, config, pair, strategy="particle")
    t_steps = runner.n_steps
    modes = make_mode_plan(t_steps, "sde")
    events = []

    # slot latents; expansion at each block start widens to p*m children
    slot_ctxs = [SeedCtx(root_seed, (i,)) for i in range(p)]
    slot_latents = runner.initial_latents(slot_ctxs)
    slot_states = runner.start_states(slot_ctxs)

    block_starts = list(range(0, t_steps, block))
    child_latents = child_states = child_ctxs = None
    child_pids = []
    for b_idx, b_start in enumerate(block_starts):
        b_end = min(b_start + block, t_steps)
        child_pids = [slot * m + j for slot in range(p) for j in range(m)]
        child_ctxs = [SeedCtx(root_seed, (pid,)) for pid in child_pids]
        child_latents = np.repeat(slot_latents, m, axis=0)
        child_states = [
            slot_states[pid // m] for pid in range(p * m)
        ] if slot_states[0] is not None else [None] * (p * m)
        events.append(
            {
                "event": "expansion",
                "step": b_start,
                "particles": child_pids,
                "parents": [pid // m for pid in child_pids],
            }
        )
        child_latents, child_states = runner.run(
            child_latents, child_ctxs, child_states, modes=modes,
            start_step=b_start, end_step=b_end,
        )
        budget.ndfe += (b_end - b_start) * p * m

        if b_end >= t_steps:
            break

        scores = _selection_scores(
            runner, child_latents, child_ctxs, child_states, b_end, budget,
            reward_fn,
        )
        if selection == "greedy_topk":
            order = np.argsort(-scores, kind="stable")
            keep = np.sort(order[:p])
            events.append(
                {
                    "event": "selection",
                    "step": b_end,
                    "particles": child_pids,
                    "rewards": [float(v) for v in scores],
                    "kept": [int(k) for k in keep],
                }
            )
        else:
            if not np.all(np.isfinite(scores)):
                bad = [child_pids[i] for i in np.where(~np.isfinite(scores))[0]]
                raise ValueError(
                    f"non-finite importance weights for particles {bad}"
                )
            lam = config.search.temperature
            if lam is None:
                span = float(scores.max() - scores.min())
                lam = 0.1 * span if span > 0 else None
            if lam is None:
                weights = np.full(scores.shape[0], 1.0 / scores.shape[0])
            else:
                shifted = (scores - scores.max()) / lam
                weights = np.exp(shifted)
                weights = weights / weights.sum()
            if not np.all(np.isfinite(weights)):
                bad = [child_pids[i] for i in np.where(~np.isfinite(weights))[0]]
                raise ValueError(
                    f"non-finite importance weights for particles {bad}"
                )
            rng = RngStream(root_seed, ("resample", b_end)).generator()
            keep = systematic_resample(weights, p, rng)
            events.append(
                {
                    "event": "resample",
                    "step": b_end,
                    "particles": child_pids,
                    "rewards": [float(v) for v in scores],
                    "weights": [float(w) for w in weights],
                    "kept": [int(k) for k in keep],
                }
            )
        slot_latents = child_latents[keep]
        slot_states = [child_states[int(k)] for k in keep]

    final_rewards = _score(reward_fn, child_latents, budget)
    best = int(np.argmax(final_rewards))
    events.append(
        {
            "event": "selection",
            "step": t_steps,
            "particles": child_pids,
            "rewards": [float(v) for v in final_rewards],
            "kept": [best],
        }
    )
    return SearchResult(
        best_latent=child_latents[best],
        best_reward=float(final_rewards[best]),
        best_index=best,
        rewards=tuple(float(v) for v in final_rewards),
        ndfe=budget.ndfe,
        nrfe=budget.nrfe,
        wall_time=time.perf_counter() - start,
        events=tuple(events),
    )


# -- search over paths -------------------------------------------------------


def search_over_paths(
    model: ToyModel,
    config: ExperimentConfig,
    pair: ConditionPair,
    reward_fn: Callable,
    root_seed: int,
) -> SearchResult:
    start = time.perf_counter()
    budget = _Budget()
    n = config.search.n_candidates
    rounds = config.search.sop_rounds
    t_steps = config.sampler.n_steps
    depth = config.search.sop_depth or max(1, t_steps // 4)
    topk = config.search.sop_topk or max(1, n // 4)
    if depth > t_steps:
        logger.warning(
            "re-noise depth %d exceeds trajectory depth %d; clipping", depth, t_steps
        )
        depth = t_steps
    runner = Runner(model, config, pair, strategy="search_over_paths")
    modes = make_mode_plan(t_steps, "ode")

    ctxs = [SeedCtx(root_seed, (i,)) for i in range(n)]
    latents = runner.initial_latents(ctxs)
    states = runner.start_states(ctxs)
    latents, states = runner.run(latents, ctxs, states, modes=modes)
    budget.ndfe += n * t_steps
    rewards = _score(reward_fn, latents, budget)

    # candidate pool: (id, latent, reward, state); ids grow monotonically
    pool = [
        (i, latents[i], float(rewards[i]), states[i]) for i in range(n)
    ]
    next_id = n
    events = []
    re_entry = t_steps - depth

    for r in range(1, rounds + 1):
        ranked = sorted(pool, key=lambda rec: (-rec[2], rec[0]))
        chosen = ranked[: min(topk, len(ranked))]
        child_ctxs = []
        child_states = []
        renoised = []
        child_ids = []
        for cid, latent, _, state in chosen:
            ctx = SeedCtx(root_seed, (next_id,))
            z = ctx.stream("renoise").standard_normal(latent.shape)
            renoised.append(
                forward_noise(
                    latent, float(runner.levels[t_steps]),
                    float(runner.levels[re_entry]), z,
                )
            )
            if state is not None:
                state = prepare_step_state(
                    state, re_entry, EVENT_RESAMPLE, ctx.stream("tep", re_entry)
                )
            child_ctxs.append(ctx)
            child_states.append(state)
            child_ids.append(next_id)
            next_id += 1
        events.append(
            {
                "event": "resample",
                "step": re_entry,
                "round": r,
                "particles": [rec[0] for rec in chosen],
                "children": child_ids,
                "rewards": [rec[2] for rec in chosen],
            }
        )
        child_latents = np.stack(renoised)
        child_latents, child_states = runner.run(
            child_latents, child_ctxs, child_states, modes=modes,
            start_step=re_entry,
        )
        budget.ndfe += len(chosen) * depth
        child_rewards = _score(reward_fn, child_latents, budget)
        for idx, cid in enumerate(child_ids):
            pool.append(
                (cid, child_latents[idx], float(child_rewards[idx]),
                 child_states[idx])
            )
        pool = sorted(pool, key=lambda rec: (-rec[2], rec[0]))[:n]
        events.append(
            {
                "event": "selection",
                "step": t_steps,
                "round": r,
                "particles": [rec[0] for rec in pool],
                "rewards": [rec[2] for rec in pool],
                "kept": [rec[0] for rec in pool],
            }
        )

    pool_sorted = sorted(pool, key=lambda rec: (-rec[2], rec[0]))
    best_rec = pool_sorted[0]
    return SearchResult(
        best_latent=best_rec[1],
        best_reward=best_rec[2],
        best_index=best_rec[0],
        rewards=tuple(rec[2] for rec in pool),
        ndfe=budget.ndfe,
        nrfe=budget.nrfe,
        wall_time=time.perf_counter() - start,
        events=tuple(events),
    )
