"""Seed-paired experiment harness over the sampling laboratory.

Every sweep here follows the same discipline: a fixed list of root seeds is
reused across all arms of the comparison (common random numbers), each arm
reports a per-seed statistic, and the result is a long-format table of
(variable, arm, mean, stderr, n) rows ready for CSV emission. Sweeps are
pure functions of (model, config, grid, seeds); running one twice yields
identical tables.

Best-of-N rewards are computed by flat-batching every seed's candidate set
through one Runner call. The sampler's batch is bitwise stable, so this is
exactly the per-seed search result, just cheaper.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .config import ExperimentConfig, PromptSpec, config_hash
from .core import (
    BRANCH_CONDITIONAL,
    BRANCH_UNCONDITIONAL,
    ConditionPair,
    PromptEmbedding,
    RngStream,
    SeedCtx,
    constant,
    schedule_eval,
)
from .noiseshape import lowpass, renormalize, shape_noise
from .outputs import write_csv
from .reward import build_projector, diversity, make_reward
from .sampler import MODE_ODE, MODE_SDE, Runner, make_mode_plan
from .search import run_search
from .tep import (
    EVENT_SDE_STEP,
    EVENT_TRAJECTORY_START,
    initial_state,
    prepare_step_state,
)
from .toymodel import ToyModel, build_model, condition_vector

SWEEP_COLUMNS = ("variable", "arm", "mean", "stderr", "n")


# -- experiment assembly -----------------------------------------------------


def make_prompt_set(spec: PromptSpec, seed: int) -> tuple[ConditionPair, ...]:
    """Deterministic prompt set: one Gaussian token matrix per prompt id.

    The unconditional branch is the all-zeros embedding shared by every pair.
    Prompts derive from the experiment seed, not the per-run root seeds, so
    seed sweeps answer "same task, new randomness".
    """
    uncond = PromptEmbedding(
        np.zeros((spec.n_tokens, spec.embed_dim)),
        spec.eos_index,
        BRANCH_UNCONDITIONAL,
    )
    pairs = []
    for pid in range(spec.n_prompts):
        rng = RngStream(seed, ("prompt", pid)).generator()
        tokens = rng.standard_normal((spec.n_tokens, spec.embed_dim))
        pairs.append(
            ConditionPair(
                PromptEmbedding(tokens, spec.eos_index, BRANCH_CONDITIONAL),
                uncond,
            )
        )
    return tuple(pairs)


def build_model_from(config: ExperimentConfig) -> ToyModel:
    return build_model(config.model, config.prompt.embed_dim, config.seed)


def reward_for(
    config: ExperimentConfig, model: ToyModel, pair: ConditionPair
) -> Callable:
    """Reward bound to the pair's clean conditional vector."""
    return make_reward(config.reward, model, condition_vector(pair.cond))


# -- sweep tables ------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    variable: object
    arm: str
    mean: float
    stderr: float
    n: int


@dataclass(frozen=True)
class SweepResult:
    """Long-format sweep table; ``variable`` names the swept quantity."""

    variable: str
    rows: tuple[SweepRow, ...]

    def to_csv(self, path) -> None:
        write_csv(
            path,
            SWEEP_COLUMNS,
            [(r.variable, r.arm, r.mean, r.stderr, r.n) for r in self.rows],
        )


def _summary(values) -> tuple[float, float, int]:
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    if n < 2:
        raise ValueError(
            f"need at least 2 values for a standard error, got {n}"
        )
    return (
        float(values.mean()),
        float(values.std(ddof=1) / np.sqrt(n)),
        int(n),
    )


def _check_seeds(seeds) -> list[int]:
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ValueError(f"need at least 2 seeds, got {len(seeds)}")
    return seeds


def _check_grid(grid, name: str) -> list:
    grid = list(grid)
    if not grid:
        raise ValueError(f"empty {name} grid")
    return grid


def _bon_best_rewards(
    model: ToyModel,
    config: ExperimentConfig,
    pair: ConditionPair,
    reward_fn: Callable,
    seeds: Sequence[int],
    *,
    mode_plan=None,
    noise_fn=None,
    state_plan=None,
    enable_tep: bool = True,
) -> np.ndarray:
    """Per-seed best-of-N reward, all seeds flat-batched into one run.

    Candidate ctx identities match the search module's best_of_n, and the
    batched sampler is bitwise stable, so entry i equals
    best_of_n(..., seeds[i]).best_reward whenever no hooks are supplied.
    """
    n = config.search.n_candidates
    runner = Runner(
        model,
        config,
        pair,
        strategy="best_of_n",
        enable_tep=enable_tep,
        noise_fn=noise_fn,
        state_plan=state_plan,
    )
    if mode_plan is None:
        mode_plan = make_mode_plan(runner.n_steps, config.sampler.mode)
    ctxs = [SeedCtx(s, (i,)) for s in seeds for i in range(n)]
    latents = runner.initial_latents(ctxs)
    states = runner.start_states(ctxs)
    latents, _ = runner.run(latents, ctxs, states, modes=mode_plan)
    rewards = np.asarray(reward_fn(latents), dtype=np.float64)
    return rewards.reshape(len(seeds), n).max(axis=1)


# -- stochastic-window sweep -------------------------------------------------


def sde_to_ode_sweep(
    model: ToyModel,
    config: ExperimentConfig,
    pair: ConditionPair,
    switch_steps: Sequence[int],
    seeds: Sequence[int],
) -> SweepResult:
    """Best-of-N reward as a function of the SDE-to-ODE handoff step.

    Switch step s runs stochastic steps on [0, s) and deterministic ones from
    s onward, so s=0 is the pure-ODE column and s=n_steps pure SDE. Columns
    share per-seed candidate streams, so the sweep isolates where in the
    trajectory stochasticity earns or costs reward.
    """
    seeds = _check_seeds(seeds)
    switch_steps = _check_grid(switch_steps, "switch_steps")
    reward_fn = reward_for(config, model, pair)
    rows = []
    for s in switch_steps:
        plan = make_mode_plan(config.sampler.n_steps, switch_step=int(s))
        best = _bon_best_rewards(
            model, config, pair, reward_fn, seeds, mode_plan=plan
        )
        rows.append(SweepRow(int(s), "best_of_n", *_summary(best)))
    return SweepResult("switch_step", tuple(rows))


# -- band attenuation --------------------------------------------------------


def _steps_label(steps: Sequence[int]) -> str:
    steps = sorted(steps)
    if not steps:
        return "none"
    lo, hi = steps[0], steps[-1]
    if steps == list(range(lo, hi + 1)):
        return f"{lo}-{hi}"
    return "+".join(str(s) for s in steps)


def band_attenuation_sweep(
    model: ToyModel,
    config: ExperimentConfig,
    pair: ConditionPair,
    band: str,
    steps: Sequence[int],
    seeds: Sequence[int],
) -> SweepResult:
    """Best-of-N reward with one band of the SDE noise removed at chosen steps.

    band="low" strips frequencies at or below the model band cutoff from the
    injected noise at each listed step, keeping the high side; band="high"
    strips the complement. The survivor is renormalized to unit variance
    before injection, and a fully attenuated draw surfaces the degenerate
    renormalization error rather than injecting zeros. Steps outside the set
    get the config's regular shaping, and an empty set is exactly the plain
    SDE baseline.
    """
    if band not in ("low", "high"):
        raise ValueError(f"band must be 'low' or 'high', got {band!r}")
    seeds = _check_seeds(seeds)
    step_set = frozenset(int(s) for s in steps)
    cutoff = config.model.band_cutoff
    n_steps = config.sampler.n_steps

    def attenuate(raw, step):
        if step not in step_set:
            c = schedule_eval(config.noiseshape.cutoff_schedule, step, n_steps)
            return shape_noise(raw, c, enabled=config.noiseshape.enabled)
        kept_low = lowpass(raw, cutoff)
        kept = raw - kept_low if band == "low" else kept_low
        return renormalize(kept)

    reward_fn = reward_for(config, model, pair)
    best = _bon_best_rewards(
        model,
        config,
        pair,
        reward_fn,
        seeds,
        mode_plan=make_mode_plan(n_steps, MODE_SDE),
        noise_fn=attenuate,
    )
    row = SweepRow(_steps_label(step_set), band, *_summary(best))
    return SweepResult("attenuated_steps", (row,))


def band_attenuation_experiment(
    model: ToyModel,
    config: ExperimentConfig,
    pair: ConditionPair,
    seeds: Sequence[int],
    n_windows: int = 4,
) -> SweepResult:
    """Both bands attenuated over each contiguous step window, one row each."""
    n_steps = config.sampler.n_steps
    rows = []
    for band in ("low", "high"):
        for k in range(n_windows):
            lo = k * n_steps // n_windows
            hi = (k + 1) * n_steps // n_windows
            part = band_attenuation_sweep(
                model, config, pair, band, range(lo, hi), seeds
            )
            rows.extend(part.rows)
    return SweepResult("attenuated_steps", tuple(rows))


# -- single-step influence probe ---------------------------------------------


@dataclass(frozen=True)
class InfluenceRecord:
    """Final-image displacement caused by randomness at exactly one step."""

    step: int
    source: str
    total_mse: float
    low_mse: float
    high_mse: float
    total_stderr: float
    low_stderr: float
    high_stderr: float
    n: int


def band_mse(diff: np.ndarray, cutoff: float) -> tuple[float, float, float]:
    """(total, low, high) mean squared value of a grid, split at ``cutoff``.

    The split is a sharp spectral mask, so low + high recovers the total up
    to floating point by Parseval.
    """
    diff = np.asarray(diff, dtype=np.float64)
    low = lowpass(diff, cutoff)
    high = diff - low
    return (
        float(np.mean(diff * diff)),
        float(np.mean(low * low)),
        float(np.mean(high * high)),
    )


def influence_probe(
    model: ToyModel,
    config: ExperimentConfig,
    pair: ConditionPair,
    step: int,
    source: str,
    seeds: Sequence[int],
) -> InfluenceRecord:
    """MSE between a deterministic trajectory and one perturbed at one step.

    The reference trajectory is pure ODE with no embedding perturbation. The
    probe trajectory shares its init stream and differs only at ``step``:
    "spatial" churns that step with the config's eta and noise shaping,
    "embedding" applies a text perturbation to that step's denoiser call, and
    "both" does the two together on the same pairs. Embedding probes use the
    config schedules' end values as a flat magnitude so the probe injects the
    same perturbation strength at every step it is asked about.

    A probe whose magnitude is zero (eta 0, or zero-ended schedules) leaves
    the trajectory bit-identical, so every MSE is exactly 0.0.
    """
    n_steps = config.sampler.n_steps
    if not 0 <= step < n_steps:
        raise ValueError(f"probe step {step} outside [0, {n_steps})")
    if source not in ("spatial", "embedding", "both"):
        raise ValueError(
            f"source must be 'spatial', 'embedding', or 'both', got {source!r}"
        )
    seeds = _check_seeds(seeds)
    ctxs = [SeedCtx(s, (0,)) for s in seeds]

    base_runner = Runner(
        model, config, pair, strategy="best_of_n", enable_tep=False
    )
    ode_plan = make_mode_plan(n_steps, MODE_ODE)
    base = base_runner.initial_latents(ctxs)
    base, _ = base_runner.run(base, ctxs, [None] * len(ctxs), modes=ode_plan)

    spatial = source in ("spatial", "both")
    embedding = source in ("embedding", "both")
    probe_plan = tuple(
        MODE_SDE if (spatial and tau == step) else MODE_ODE
        for tau in range(n_steps)
    )
    state_plan = None
    if embedding:
        flat_tep = replace(
            config.tep,
            w1=constant(config.tep.w1.end_value),
            w2=constant(config.tep.w2.end_value),
        )
        seed_state = initial_state(flat_tep, "per_sde_step", n_steps, pair)

        def state_plan(s, cs):
            if s != step:
                return None
            return [
                prepare_step_state(
                    seed_state, s, EVENT_SDE_STEP, c.stream("tep", s)
                )
                for c in cs
            ]

    probe_runner = Runner(
        model,
        config,
        pair,
        strategy="best_of_n",
        enable_tep=embedding,
        state_plan=state_plan,
    )
    probe = probe_runner.initial_latents(ctxs)
    probe, _ = probe_runner.run(
        probe, ctxs, probe_runner.start_states(ctxs), modes=probe_plan
    )

    cutoff = config.model.band_cutoff
    parts = np.array(
        [band_mse(p - b, cutoff) for p, b in zip(probe, base)]
    )
    (total_m, total_e, n) = _summary(parts[:, 0])
    (low_m, low_e, _) = _summary(parts[:, 1])
    (high_m, high_e, _) = _summary(parts[:, 2])
    return InfluenceRecord(
        step=int(step),
        source=source,
        total_mse=total_m,
        low_mse=low_m,
        high_mse=high_m,
        total_stderr=total_e,
        low_stderr=low_e,
        high_stderr=high_e,
        n=n,
    )


def influence_experiment(
    model: ToyModel,
    config: ExperimentConfig,
    pair: ConditionPair,
    steps: Sequence[int],
    sources: Sequence[str],
    seeds: Sequence[int],
) -> list[InfluenceRecord]:
    steps = _check_grid(steps, "probe step")
    sources = _check_grid(sources, "source")
    return [
        influence_probe(model, config, pair, int(s), src, seeds)
        for src in sources
        for s in steps
    ]


def influence_result(records: Sequence[InfluenceRecord]) -> SweepResult:
    """Flatten probe records to the long-format sweep table."""
    rows = []
    for r in records:
        rows.append(SweepRow(r.step, f"{r.source}:total", r.total_mse, r.total_stderr, r.n))
        rows.append(SweepRow(r.step, f"{r.source}:low", r.low_mse, r.low_stderr, r.n))
        rows.append(SweepRow(r.step, f"{r.source}:high", r.high_mse, r.high_stderr, r.n))
    return SweepResult("probe_step", tuple(rows))


# -- perturbation tolerance --------------------------------------------------

TOLERANCE_SLICES = {
    "timestep_window": ("early", "late"),
    "branch": ("uncond", "cond"),
    "layer": ("shallow", "deep"),
}


def _tolerance_setup(config, dimension, slice_name, magnitude):
    """(probe tep config, active step set) for one tolerance arm.

    Magnitudes are flat per-step values in the same units as the config's
    schedules (multiples of the embedding std once applied). Branch slices
    push one branch alone; the other two dimensions push both branches with
    the config's conditional-to-unconditional ratio preserved.
    """
    n_steps = config.sampler.n_steps
    w1_end = config.tep.w1.end_value
    ratio = config.tep.w2.end_value / w1_end if w1_end else 0.0
    every = frozenset(range(n_steps))
    if dimension == "branch":
        if slice_name == "uncond":
            w1, w2 = magnitude, 0.0
        else:
            w1, w2 = 0.0, magnitude
        tep = replace(config.tep, w1=constant(w1), w2=constant(w2))
        return tep, every
    w1, w2 = magnitude, magnitude * ratio
    tep = replace(config.tep, w1=constant(w1), w2=constant(w2))
    if dimension == "timestep_window":
        half = n_steps // 2
        active = (
            frozenset(range(half))
            if slice_name == "early"
            else frozenset(range(half, n_steps))
        )
        return tep, active
    # layer: route all magnitude to one side of the depth threshold
    if slice_name == "shallow":
        tep = replace(tep, shallow_scale=1.0, deep_scale=0.0)
    else:
        tep = replace(tep, shallow_scale=0.0, deep_scale=1.0)
    return tep, every


def tolerance_sweep(
    model: ToyModel,
    config: ExperimentConfig,
    pair: ConditionPair,
    dimension: str,
    magnitudes: Sequence[float],
    seeds: Sequence[int],
) -> SweepResult:
    """Best-of-N reward as perturbation strength rises along one dimension.

    dimension picks the pair of slices compared: "timestep_window" perturbs
    only the early or only the late half of the trajectory, "branch" perturbs
    only the unconditional or only the conditional embedding, and "layer"
    routes the perturbation to layers below or at-and-above the config's
    layer threshold. Each slice gets the full magnitude grid; magnitude 0
    applies no perturbation at all, so those rows are the common baseline.

    Directions are drawn once per trajectory and held fixed across the active
    window, matching the once-at-start redraw convention of plain best-of-N.
    """
    if dimension not in TOLERANCE_SLICES:
        raise ValueError(
            f"unknown dimension {dimension!r}; expected one of "
            f"{sorted(TOLERANCE_SLICES)}"
        )
    seeds = _check_seeds(seeds)
    magnitudes = _check_grid(magnitudes, "magnitude")
    for m in magnitudes:
        if not (float(m) >= 0.0):
            raise ValueError(f"magnitudes must be nonnegative, got {m}")
    n_steps = config.sampler.n_steps
    reward_fn = reward_for(config, model, pair)
    rows = []
    for slice_name in TOLERANCE_SLICES[dimension]:
        for m in magnitudes:
            m = float(m)
            if m == 0.0:
                best = _bon_best_rewards(
                    model, config, pair, reward_fn, seeds, enable_tep=False
                )
                rows.append(SweepRow(m, slice_name, *_summary(best)))
                continue
            probe_tep, active = _tolerance_setup(config, dimension, slice_name, m)
            seed_state = initial_state(probe_tep, "once_at_start", n_steps, pair)

            def plan(s, cs, _active=active, _state=seed_state):
                if s not in _active:
                    return None
                # same ("tep", 0) stream every call, so directions stay fixed
                # across the window while the magnitude tracks the step
                return [
                    prepare_step_state(
                        _state, s, EVENT_TRAJECTORY_START, c.stream("tep", 0)
                    )
                    for c in cs
                ]

            best = _bon_best_rewards(
                model, config, pair, reward_fn, seeds, state_plan=plan
            )
            rows.append(SweepRow(m, slice_name, *_summary(best)))
    return SweepResult("magnitude", tuple(rows))


# -- diversity vs guidance scale ---------------------------------------------

DIVERSITY_VARIANTS = ("ode", "sde", "sde_tep")


def diversity_vs_cfg(
    model: ToyModel,
    config: ExperimentConfig,
    prompts: Sequence[ConditionPair],
    w_values: Sequence[float],
    variants: Sequence[str],
    seeds: Sequence[int],
) -> SweepResult:
    """Sample-set diversity against guidance scale, per sampler variant.

    Each (prompt, seed) yields one plain trajectory (no search); the samples
    of one prompt form one condition set, diversity is the projected pairwise
    dissimilarity within the set, and rows aggregate over prompts. The same
    (prompt, seed) context is reused across variants and guidance scales, so
    the three curves differ only in sampler mechanics: "ode" is deterministic,
    "sde" churns with the config eta, "sde_tep" adds the config's embedding
    perturbation on top.
    """
    w_values = _check_grid(w_values, "guidance scale")
    variants = _check_grid(variants, "variant")
    for v in variants:
        if v not in DIVERSITY_VARIANTS:
            raise ValueError(
                f"unknown variant {v!r}; expected subset of {DIVERSITY_VARIANTS}"
            )
    seeds = [int(s) for s in seeds]
    if len(seeds) < 2:
        raise ValueError(
            "diversity needs at least 2 samples per condition; "
            f"got {len(seeds)} seed(s)"
        )
    if not prompts:
        raise ValueError("need at least one prompt")
    n_steps = config.sampler.n_steps
    projector = build_projector(model.height, model.width, seed=config.seed)
    rows = []
    for w in w_values:
        for variant in variants:
            vcfg = replace(config, cfg_scale=float(w))
            mode = MODE_ODE if variant == "ode" else MODE_SDE
            plan = make_mode_plan(n_steps, mode)
            per_prompt = []
            for pid, pair in enumerate(prompts):
                runner = Runner(
                    model,
                    vcfg,
                    pair,
                    strategy="best_of_n",
                    enable_tep=variant == "sde_tep",
                )
                ctxs = [SeedCtx(s, (pid,)) for s in seeds]
                latents = runner.initial_latents(ctxs)
                states = runner.start_states(ctxs)
                latents, _ = runner.run(latents, ctxs, states, modes=plan)
                per_prompt.append(diversity(list(latents), projector))
            rows.append(SweepRow(float(w), variant, *_summary(per_prompt)))
    return SweepResult("cfg_scale", tuple(rows))


# -- compute-scaling curves --------------------------------------------------


def _budget_line(config: ExperimentConfig, axis: str):
    """Linear budget model (offset, unit, apply) for the configured strategy.

    Budgets are affine in one free count k >= 1: budget = offset + unit * k.
    k is n_candidates for best_of_n (unit T or 1), neighbors per round for
    zero_order (offset covers the pivot), children per slot for particle
    (unit folds particles, blocks, and interior checkpoints), and initial
    paths for search_over_paths (offset covers the fixed expansion work).
    """
    if axis not in ("ndfe", "nrfe"):
        raise ValueError(f"axis must be 'ndfe' or 'nrfe', got {axis!r}")
    s = config.search
    n_steps = config.sampler.n_steps
    ndfe = axis == "ndfe"
    if s.strategy == "best_of_n":
        unit = n_steps if ndfe else 1
        return 0, unit, lambda k: replace(s, n_candidates=k)
    if s.strategy == "zero_order":
        rounds = s.zo_rounds
        offset = n_steps if ndfe else 1
        unit = rounds * n_steps if ndfe else rounds
        return offset, unit, lambda k: replace(s, n_candidates=k)
    if s.strategy == "particle":
        blocks = len(range(0, n_steps, s.block_steps))
        per_child = s.n_particles * (
            n_steps + blocks - 1 if ndfe else blocks
        )
        return 0, per_child, lambda k: replace(s, n_children=k)
    if s.strategy == "search_over_paths":
        depth = min(s.sop_depth or max(1, n_steps // 4), n_steps)
        topk = s.sop_topk or max(1, s.n_candidates // 4)
        offset = s.sop_rounds * topk * (depth if ndfe else 1)
        unit = n_steps if ndfe else 1
        return (
            offset,
            unit,
            lambda k: replace(s, n_candidates=k, sop_depth=depth, sop_topk=topk),
        )
    raise ValueError(f"unknown search strategy {s.strategy!r}")


def default_budgets(
    config: ExperimentConfig, axis: str, ks: Sequence[int] = (1, 2, 4, 8, 16)
) -> list[int]:
    """Achievable budget ladder for the configured strategy, one per count k."""
    offset, unit, _ = _budget_line(config, axis)
    return [offset + unit * int(k) for k in ks]


def map_budget(
    config: ExperimentConfig, axis: str, budget: int
) -> ExperimentConfig:
    """Resolve a compute budget to a concrete search config.

    axis="ndfe" counts guided denoiser evaluations, axis="nrfe" reward
    evaluations; both follow the strategies' closed-form accounting. A budget
    that no integer count k >= 1 reaches exactly raises with the two nearest
    achievable budgets named.
    """
    budget = int(budget)
    offset, unit, build = _budget_line(config, axis)
    k, rem = divmod(budget - offset, unit)
    if rem != 0 or k < 1:
        k_near = max(1, k)
        lo = offset + unit * k_near
        hi = offset + unit * (k_near + 1)
        raise ValueError(
            f"budget {budget} not achievable for "
            f"{config.search.strategy}/{axis}; nearest achievable budgets "
            f"are {lo} and {hi}"
        )
    return replace(config, search=build(int(k)))


def scaling_curves(
    model: ToyModel,
    config: ExperimentConfig,
    pair: ConditionPair,
    axis: str,
    budgets: Sequence[int],
    seeds: Sequence[int],
) -> SweepResult:
    """Best reward against compute budget, with and without perturbation.

    Each budget is resolved through map_budget to a search config for the
    configured strategy, then run per seed for two arms: "tep" keeps the
    config's embedding perturbation, "no_tep" zeroes both schedules. Arms and
    budgets share the seed list, so curve gaps are paired differences.
    """
    seeds = _check_seeds(seeds)
    budgets = _check_grid(budgets, "budget")
    no_tep = replace(
        config, tep=replace(config.tep, w1=constant(0.0), w2=constant(0.0))
    )
    reward_fn = reward_for(config, model, pair)
    rows = []
    for budget in budgets:
        for arm, arm_cfg in (("tep", config), ("no_tep", no_tep)):
            mapped = map_budget(arm_cfg, axis, budget)
            if mapped.search.strategy == "best_of_n":
                best = _bon_best_rewards(model, mapped, pair, reward_fn, seeds)
            else:
                best = [
                    run_search(model, mapped, pair, reward_fn, s).best_reward
                    for s in seeds
                ]
            rows.append(SweepRow(int(budget), arm, *_summary(best)))
    return SweepResult(axis, tuple(rows))


# -- CSV emission ------------------------------------------------------------


def sweep_csv_path(
    out_dir, experiment: str, config: ExperimentConfig
) -> Path:
    return Path(out_dir) / f"{experiment}_{config_hash(config)[:12]}.csv"


def write_sweep_csv(
    out_dir, experiment: str, config: ExperimentConfig, result: SweepResult
) -> Path:
    path = sweep_csv_path(out_dir, experiment, config)
    result.to_csv(path)
    return path
