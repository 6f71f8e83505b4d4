"""VP diffusion coefficients, reverse steps, and trajectory execution.

Noise levels follow the trigonometric variance-preserving schedule
alpha = cos(pi t/2), sigma = sin(pi t/2). A run discretizes t from
``max_level`` down to 0 over T explicit Euler steps; max_level stays below 1
because the reverse drift diverges at t=1. The SDE step is Euler-Maruyama
with churn parameter eta: eta=0 is delegated to the ODE step outright, so
the reduction is bit-exact and consumes no randomness.

Everything runs batched over a leading candidate axis, and every operation
is elementwise or a per-sample trailing reduction, so a batch of B
trajectories is bit-identical to B sequential single runs. That property is
what the degenerate-configuration equivalences in the search module rest on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .config import ExperimentConfig
from .core import ConditionPair, SeedCtx, schedule_eval
from .guidance import guided_epsilon
from .noiseshape import shape_noise
from .tep import (
    EVENT_SDE_STEP,
    EVENT_TRAJECTORY_START,
    TepState,
    initial_state,
    prepare_step_state,
    resolve_redraw_policy,
)
from .toymodel import ToyModel

MODE_ODE = "ode"
MODE_SDE = "sde"


def vp_schedule(t: float) -> tuple[float, float]:
    """(alpha, sigma) at noise level t in [0, 1]; alpha^2 + sigma^2 = 1."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"noise level {t} outside [0, 1]")
    return math.cos(math.pi * t / 2.0), math.sin(math.pi * t / 2.0)


def level_grid(n_steps: int, max_level: float) -> np.ndarray:
    """T+1 noise levels from max_level down to exactly 0."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    tau = np.arange(n_steps + 1)
    return max_level * (n_steps - tau) / n_steps


def predict_x0(x, eps_hat, t: float) -> np.ndarray:
    """Posterior-mean proxy (x - sigma * eps) / alpha; undefined at t=1."""
    if t >= 1.0:
        raise ValueError("predict_x0 undefined at t=1 (alpha=0)")
    alpha, sigma = vp_schedule(t)
    return (np.asarray(x) - sigma * np.asarray(eps_hat)) / alpha


def _drift_terms(t: float):
    # f = d log(alpha)/dt; g^2 = -2f for the variance-preserving family
    f = -(math.pi / 2.0) * math.tan(math.pi * t / 2.0)
    g = math.sqrt(-2.0 * f)
    return f, g


def ode_step(x, eps_hat, t: float, dt: float) -> np.ndarray:
    """Explicit Euler step of the probability-flow ODE from level t to t-dt."""
    _, sigma = vp_schedule(t)
    if sigma <= 0.0:
        raise ValueError("ode_step needs sigma > 0 at the current level")
    f, _ = _drift_terms(t)
    drift = f * (x - eps_hat / sigma)
    return x - dt * drift


def sde_step(x, eps_hat, t: float, dt: float, eta: float, noise) -> np.ndarray:
    """Euler-Maruyama step of the eta-churned reverse SDE.

    eta=0 is handed to ode_step unevaluated (bit-identical, ``noise`` may be
    None). Otherwise ``noise`` must already be the shaped injection.
    """
    if not 0.0 <= eta <= 1.0:
        raise ValueError("eta must lie in [0, 1]")
    if eta == 0.0:
        return ode_step(x, eps_hat, t, dt)
    _, sigma = vp_schedule(t)
    if sigma <= 0.0:
        raise ValueError("sde_step needs sigma > 0 at the current level")
    f, g = _drift_terms(t)
    drift = f * (x - (1.0 + eta * eta) * eps_hat / sigma)
    return x - dt * drift + eta * g * math.sqrt(dt) * np.asarray(noise)


def forward_noise(x, from_level: float, to_level: float, z) -> np.ndarray:
    """Re-noise x from one level to a noisier one, marginal-consistently.

    x' = (a_to/a_from) x + sqrt(s_to^2 - (a_to/a_from)^2 s_from^2) z.
    Equal levels give the identity with a zero noise coefficient.
    """
    if to_level < from_level:
        raise ValueError("forward_noise must move toward higher noise levels")
    a_from, s_from = vp_schedule(from_level)
    a_to, s_to = vp_schedule(to_level)
    if a_from <= 0.0:
        raise ValueError("cannot re-noise from t=1")
    ratio = a_to / a_from
    variance = s_to * s_to - ratio * ratio * s_from * s_from
    if variance < -1e-12:
        raise AssertionError("negative re-noising variance; VP monotonicity broken")
    coeff = math.sqrt(max(variance, 0.0))
    return ratio * np.asarray(x) + coeff * np.asarray(z)


def make_mode_plan(
    n_steps: int, mode: str = MODE_ODE, switch_step: Optional[int] = None
) -> tuple[str, ...]:
    """Per-step mode tuple; ``switch_step`` s runs SDE before s, ODE from s on."""
    if switch_step is not None:
        if not 0 <= switch_step <= n_steps:
            raise ValueError("switch_step outside [0, n_steps]")
        return tuple(
            MODE_SDE if tau < switch_step else MODE_ODE for tau in range(n_steps)
        )
    if mode not in (MODE_ODE, MODE_SDE):
        raise ValueError(f"unknown mode {mode!r}")
    return (mode,) * n_steps


@dataclass(frozen=True)
class TrajectoryResult:
    """Final state of one denoising trajectory."""

    latent: np.ndarray
    step: int
    modes: tuple[str, ...]
    tep_state: Optional[TepState]
    rewards: tuple[tuple[int, float], ...] = ()


def _stack_states(states: Sequence[Optional[TepState]]) -> Optional[TepState]:
    """Merge per-candidate states into one batched state for application.

    All states share config/step/policy; draws stack along a new leading
    axis. Candidates without draws force the no-draw path for everyone, which
    only happens when no candidate has drawn yet.
    """
    if not states or states[0] is None:
        return None
    first = states[0]
    if any(s.draw is None for s in states):
        return replace(first, draw=None)
    from .tep import PerturbationDraw

    eps1 = np.stack([s.draw.eps1 for s in states])
    eps2 = np.stack([s.draw.eps2 for s in states])
    return replace(
        first, draw=PerturbationDraw(eps1, eps2, first.draw.draw_step)
    )


class Runner:
    """Batched trajectory executor with the perturbation engine wired in.

    One Runner instance holds the model, config, condition pair, and resolved
    redraw policy. Latents are (B, H, W); per-candidate randomness comes from
    each candidate's SeedCtx, so results do not depend on batch composition.
    """

    def __init__(
        self,
        model: ToyModel,
        config: ExperimentConfig,
        pair: ConditionPair,
        *,
        strategy: str = "best_of_n",
        enable_tep: bool = True,
        noise_fn: Optional[Callable] = None,
        state_plan: Optional[Callable] = None,
    ):
        self.model = model
        self.config = config
        self.pair = pair
        self.levels = level_grid(config.sampler.n_steps, config.sampler.max_level)
        self.n_steps = config.sampler.n_steps
        self.eta = config.sampler.churn_eta
        self.policy = resolve_redraw_policy(config.tep, strategy)
        self.enable_tep = enable_tep
        self.noise_fn = noise_fn
        self.state_plan = state_plan
        from .config import tep_active

        self._tep_live = enable_tep and (state_plan is not None or tep_active(config))

    # -- candidate plumbing -------------------------------------------------

    def initial_latents(self, ctxs: Sequence[SeedCtx]) -> np.ndarray:
        h, w = self.model.height, self.model.width
        return np.stack(
            [ctx.stream("init").standard_normal((h, w)) for ctx in ctxs]
        )

    def start_states(self, ctxs: Sequence[SeedCtx]) -> list[Optional[TepState]]:
        """Per-candidate states after the trajectory_start event."""
        if not self._tep_live or self.state_plan is not None:
            return [None] * len(ctxs)
        out = []
        for ctx in ctxs:
            state = initial_state(
                self.config.tep, self.policy, self.n_steps, self.pair
            )
            out.append(
                prepare_step_state(
                    state, 0, EVENT_TRAJECTORY_START, ctx.stream("tep", 0)
                )
            )
        return out

    def _shaped_noise(self, raw: np.ndarray, step: int) -> np.ndarray:
        if self.noise_fn is not None:
            return self.noise_fn(raw, step)
        cutoff = schedule_eval(
            self.config.noiseshape.cutoff_schedule, step, self.n_steps
        )
        return shape_noise(raw, cutoff, enabled=self.config.noiseshape.enabled)

    # -- stepping -----------------------------------------------------------

    def step(self, latents, ctxs, states, step: int, mode: str):
        """Advance one step; returns (latents, states, x0_prediction).

        The x0 prediction reuses the step's denoiser evaluation, so recording
        it is free of additional model calls.
        """
        t = float(self.levels[step])
        dt = float(self.levels[step] - self.levels[step + 1])
        effective_sde = mode == MODE_SDE and self.eta > 0.0

        if self.state_plan is not None:
            states = self.state_plan(step, ctxs)
        elif self._tep_live:
            advanced = []
            for ctx, state in zip(ctxs, states):
                if effective_sde:
                    advanced.append(
                        prepare_step_state(
                            state, step, EVENT_SDE_STEP, ctx.stream("tep", step)
                        )
                    )
                else:
                    advanced.append(state.at_step(step))
            states = advanced

        batched_state = _stack_states(states) if states is not None else None
        alpha, sigma = vp_schedule(t)
        eps_hat = guided_epsilon(
            self.model, latents, alpha, sigma, self.pair, batched_state,
            self.config.cfg_scale,
        )
        x0 = predict_x0(latents, eps_hat, t)
        if effective_sde:
            raw = np.stack(
                [ctx.stream("sde", step).standard_normal(latents.shape[-2:])
                 for ctx in ctxs]
            )
            noise = self._shaped_noise(raw, step)
            latents = sde_step(latents, eps_hat, t, dt, self.eta, noise)
        else:
            latents = ode_step(latents, eps_hat, t, dt)
        return latents, states, x0

    def run(
        self,
        latents,
        ctxs,
        states,
        *,
        modes: Sequence[str],
        start_step: int = 0,
        end_step: Optional[int] = None,
        record: Optional[Callable] = None,
    ):
        """Run steps [start_step, end_step) of the given mode plan."""
        if len(modes) != self.n_steps:
            raise ValueError(f"mode plan must cover all {self.n_steps} steps")
        end = self.n_steps if end_step is None else end_step
        for step in range(start_step, end):
            latents, states, x0 = self.step(
                latents, ctxs, states, step, modes[step]
            )
            if record is not None:
                record(step, latents, x0)
        return latents, states


def run_trajectory(
    model: ToyModel,
    config: ExperimentConfig,
    pair: ConditionPair,
    ctx: SeedCtx,
    *,
    mode_plan: Optional[Sequence[str]] = None,
    strategy: str = "best_of_n",
    enable_tep: bool = True,
    noise_fn: Optional[Callable] = None,
    record: Optional[Callable] = None,
) -> TrajectoryResult:
    """Run a single full trajectory under one seed context.

    Thin wrapper over the batched Runner with batch size 1, so a single run
    and a batch member are the same code path by construction.
    """
    runner = Runner(
        model, config, pair, strategy=strategy, enable_tep=enable_tep,
        noise_fn=noise_fn,
    )
    modes = tuple(mode_plan) if mode_plan is not None else make_mode_plan(
        runner.n_steps, config.sampler.mode
    )
    ctxs = [ctx]
    latents = runner.initial_latents(ctxs)
    states = runner.start_states(ctxs)
    rewards: list[tuple[int, float]] = []

    wrapped = None
    if record is not None:
        def wrapped(step, batch, x0):
            value = record(step, batch[0], x0[0])
            if value is not None:
                rewards.append((step, float(value)))

    latents, states = runner.run(latents, ctxs, states, modes=modes, record=wrapped)
    return TrajectoryResult(
        latent=latents[0],
        step=runner.n_steps,
        modes=modes,
        tep_state=states[0] if states else None,
        rewards=tuple(rewards),
    )
