"""Schedule, step, and trajectory tests for the sampler module."""

import json
import math
import pathlib

import numpy as np
import pytest

from ttslab.config import (
    ExperimentConfig,
    ModelSpec,
    NoiseShapeConfig,
    PerturbConfig,
    SamplerConfig,
)
from ttslab.core import (
    BRANCH_CONDITIONAL,
    BRANCH_UNCONDITIONAL,
    ConditionPair,
    PromptEmbedding,
    RngStream,
    SeedCtx,
    constant,
)
from ttslab.sampler import (
    Runner,
    forward_noise,
    level_grid,
    make_mode_plan,
    ode_step,
    predict_x0,
    run_trajectory,
    sde_step,
    vp_schedule,
)
from ttslab.toymodel import build_model, component_means, condition_vector

from .reference import em_step_reference, point_flow_reference

DATA_DIR = pathlib.Path(__file__).parent / "data"


def make_pair(seed: int = 7, n_tokens: int = 8, embed_dim: int = 8) -> ConditionPair:
    tokens = RngStream(seed, ("testpair",)).generator().standard_normal(
        (n_tokens, embed_dim)
    )
    cond = PromptEmbedding(tokens, eos_index=6, branch=BRANCH_CONDITIONAL)
    uncond = PromptEmbedding(
        np.zeros((n_tokens, embed_dim)), eos_index=1, branch=BRANCH_UNCONDITIONAL
    )
    return ConditionPair(cond, uncond)


def small_config(**sampler_kw) -> ExperimentConfig:
    base = ExperimentConfig()
    sampler = SamplerConfig(
        n_steps=sampler_kw.pop("n_steps", 16),
        churn_eta=sampler_kw.pop("churn_eta", 1.0),
        max_level=sampler_kw.pop("max_level", 0.9),
        mode=sampler_kw.pop("mode", "ode"),
    )
    assert not sampler_kw
    import dataclasses

    return dataclasses.replace(
        base, model=ModelSpec(height=8, width=8), sampler=sampler
    )


def zero_tep() -> PerturbConfig:
    zero = constant(0.0)
    return PerturbConfig(w1=zero, w2=zero)


# -- coefficients and grids --------------------------------------------------


def test_vp_schedule_endpoints():
    a0, s0 = vp_schedule(0.0)
    assert a0 == 1.0 and s0 == 0.0
    a1, s1 = vp_schedule(1.0)
    assert abs(a1) < 1e-15 and s1 == 1.0


def test_vp_schedule_midpoint_frozen():
    a, s = vp_schedule(0.5)
    assert abs(a - 0.7071067811865476) < 1e-15
    assert abs(s - 0.7071067811865476) < 1e-15


def test_vp_schedule_unit_norm():
    for t in np.linspace(0.0, 1.0, 33):
        a, s = vp_schedule(float(t))
        assert abs(a * a + s * s - 1.0) < 1e-14


def test_vp_schedule_rejects_out_of_range():
    with pytest.raises(ValueError):
        vp_schedule(-0.01)
    with pytest.raises(ValueError):
        vp_schedule(1.01)


def test_level_grid_shape_and_endpoints():
    levels = level_grid(16, 0.9)
    assert levels.shape == (17,)
    assert levels[0] == 0.9
    assert levels[-1] == 0.0
    assert np.all(np.diff(levels) < 0)


def test_level_grid_rejects_zero_steps():
    with pytest.raises(ValueError):
        level_grid(0, 0.9)


# -- single steps ------------------------------------------------------------


def test_predict_x0_inverts_forward_map():
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal((4, 4))
    eps = rng.standard_normal((4, 4))
    for t in (0.1, 0.45, 0.9):
        a, s = vp_schedule(t)
        x_t = a * x0 + s * eps
        rec = predict_x0(x_t, eps, t)
        assert np.max(np.abs(rec - x0)) < 1e-12


def test_predict_x0_rejects_pure_noise_level():
    with pytest.raises(ValueError):
        predict_x0(np.zeros((2, 2)), np.zeros((2, 2)), 1.0)


def test_ode_step_frozen_values():
    # hand-checked at t=0.5 where tan(pi/4)=1: f=-pi/2, sigma=sqrt(2)/2
    x = np.array([[0.5, -0.2], [1.0, 0.3]])
    eps = np.array([[0.1, -0.4], [0.2, 0.0]])
    out = ode_step(x, eps, 0.5, 0.05)
    expected = np.array(
        [
            [0.5281627008244765, -0.17127913388636531],
            [1.056325401648953, 0.3235619449019234],
        ]
    )
    assert np.max(np.abs(out - expected)) < 1e-15


def test_sde_step_frozen_values():
    x = np.array([[0.5, -0.2], [1.0, 0.3]])
    eps = np.array([[0.1, -0.4], [0.2, 0.0]])
    z = np.array([[1.0, -1.0], [0.5, 2.0]])
    out = sde_step(x, eps, 0.5, 0.05, 1.0, z)
    expected = np.array(
        [
            [0.9133882232396816, -0.5231830342653827],
            [1.2322773518384615, 1.1162274044231255],
        ]
    )
    assert np.max(np.abs(out - expected)) < 1e-15


def test_sde_step_matches_reference_update():
    rng = np.random.default_rng(11)
    for t in (0.15, 0.5, 0.85):
        x = rng.standard_normal((3, 5, 5))
        eps = rng.standard_normal((3, 5, 5))
        z = rng.standard_normal((3, 5, 5))
        for eta in (0.3, 1.0):
            got = sde_step(x, eps, t, 0.02, eta, z)
            want = em_step_reference(x, eps, t, 0.02, eta, z)
            assert np.max(np.abs(got - want)) < 1e-14


def test_sde_step_eta_zero_is_ode_bitwise():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((4, 4))
    eps = rng.standard_normal((4, 4))
    got = sde_step(x, eps, 0.4, 0.03, 0.0, None)
    assert np.array_equal(got, ode_step(x, eps, 0.4, 0.03))


def test_step_guards():
    x = np.zeros((2, 2))
    with pytest.raises(ValueError):
        sde_step(x, x, 0.5, 0.05, 1.5, x)
    with pytest.raises(ValueError):
        ode_step(x, x, 0.0, 0.05)


# -- forward re-noising ------------------------------------------------------


def test_forward_noise_frozen_value():
    out = forward_noise(np.array(0.8), 0.3, 0.7, np.array(-1.2))
    assert abs(float(out) - -0.6249263441894239) < 1e-15


def test_forward_noise_equal_levels_identity():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((6, 6))
    z = rng.standard_normal((6, 6))
    assert np.array_equal(forward_noise(x, 0.4, 0.4, z), x)


def test_forward_noise_rejects_denoising_direction():
    with pytest.raises(ValueError):
        forward_noise(np.zeros(3), 0.7, 0.3, np.zeros(3))


def test_forward_noise_marginal_statistics():
    # x drawn at the source level from fixed x0 must re-noise to the target
    # marginal: mean a_t x0, variance s_t^2
    rng = np.random.default_rng(21)
    n = 60000
    x0 = 1.3
    a_f, s_f = vp_schedule(0.35)
    a_t, s_t = vp_schedule(0.75)
    x = a_f * x0 + s_f * rng.standard_normal(n)
    out = forward_noise(x, 0.35, 0.75, rng.standard_normal(n))
    assert abs(out.mean() - a_t * x0) < 4.0 * s_t / math.sqrt(n)
    assert abs(out.var() - s_t * s_t) < 0.02


# -- mode plans --------------------------------------------------------------


def test_make_mode_plan_variants():
    assert make_mode_plan(4) == ("ode",) * 4
    assert make_mode_plan(4, mode="sde") == ("sde",) * 4
    assert make_mode_plan(4, switch_step=2) == ("sde", "sde", "ode", "ode")
    assert make_mode_plan(4, switch_step=0) == ("ode",) * 4
    assert make_mode_plan(4, switch_step=4) == ("sde",) * 4


def test_make_mode_plan_rejects_bad_args():
    with pytest.raises(ValueError):
        make_mode_plan(4, mode="mixed")
    with pytest.raises(ValueError):
        make_mode_plan(4, switch_step=5)


# -- trajectories ------------------------------------------------------------


def test_trajectory_deterministic_in_seed():
    cfg = small_config()
    model = build_model(cfg.model, cfg.prompt.embed_dim, seed=0)
    pair = make_pair()
    a = run_trajectory(model, cfg, pair, SeedCtx(42, (0,)))
    b = run_trajectory(model, cfg, pair, SeedCtx(42, (0,)))
    c = run_trajectory(model, cfg, pair, SeedCtx(43, (0,)))
    assert np.array_equal(a.latent, b.latent)
    assert not np.array_equal(a.latent, c.latent)
    assert a.step == cfg.sampler.n_steps


def test_ode_endpoint_hits_point_mass_mean():
    # single component, zero within-component spread: the flow must land on
    # the component mean to within 1e-2 relative at T=256
    import dataclasses

    cfg = small_config(n_steps=256, max_level=0.98, churn_eta=0.0)
    cfg = dataclasses.replace(
        cfg,
        model=ModelSpec(height=8, width=8, n_components=1, within_std=0.0),
        tep=zero_tep(),
        cfg_scale=1.0,
    )
    model = build_model(cfg.model, cfg.prompt.embed_dim, seed=1)
    pair = make_pair()
    mu = component_means(model, condition_vector(pair.cond))[0]
    result = run_trajectory(model, cfg, pair, SeedCtx(5, (0,)))
    err = np.linalg.norm(result.latent - mu) / np.linalg.norm(mu)
    assert err < 1e-2


def test_ode_error_shrinks_with_step_count():
    import dataclasses

    errors = {}
    for n_steps in (64, 256):
        cfg = small_config(n_steps=n_steps, max_level=0.98, churn_eta=0.0)
        cfg = dataclasses.replace(
            cfg,
            model=ModelSpec(height=8, width=8, n_components=1, within_std=0.0),
            tep=zero_tep(),
            cfg_scale=1.0,
        )
        model = build_model(cfg.model, cfg.prompt.embed_dim, seed=1)
        pair = make_pair()
        mu = component_means(model, condition_vector(pair.cond))[0]
        runner = Runner(model, cfg, pair)
        ctxs = [SeedCtx(5, (0,))]
        latents = runner.initial_latents(ctxs)
        exact = point_flow_reference(latents[0], mu, runner.levels)
        states = runner.start_states(ctxs)
        latents, _ = runner.run(
            latents, ctxs, states, modes=make_mode_plan(n_steps)
        )
        errors[n_steps] = np.linalg.norm(latents[0] - exact[-1])
    # explicit Euler is first order: quadrupling T should shrink the error
    # by clearly more than half
    assert errors[256] < 0.5 * errors[64]


def test_all_ode_zero_perturbation_touches_only_init_stream():
    requested = []

    class RecordingCtx(SeedCtx):
        def stream(self, name, *qualifiers):
            requested.append((name, *qualifiers))
            return super().stream(name, *qualifiers)

    import dataclasses

    cfg = dataclasses.replace(small_config(churn_eta=0.0), tep=zero_tep())
    model = build_model(cfg.model, cfg.prompt.embed_dim, seed=0)
    run_trajectory(model, cfg, make_pair(), RecordingCtx(3, (0,)))
    assert requested == [("init",)]


def test_eta_zero_sde_plan_equals_ode_plan_bitwise():
    cfg = small_config(churn_eta=0.0)
    model = build_model(cfg.model, cfg.prompt.embed_dim, seed=0)
    pair = make_pair()
    a = run_trajectory(
        model, cfg, pair, SeedCtx(8, (0,)),
        mode_plan=make_mode_plan(16, mode="sde"),
    )
    b = run_trajectory(
        model, cfg, pair, SeedCtx(8, (0,)),
        mode_plan=make_mode_plan(16, mode="ode"),
    )
    assert np.array_equal(a.latent, b.latent)


def test_sde_differs_from_ode_when_churned():
    cfg = small_config()
    model = build_model(cfg.model, cfg.prompt.embed_dim, seed=0)
    pair = make_pair()
    a = run_trajectory(
        model, cfg, pair, SeedCtx(8, (0,)),
        mode_plan=make_mode_plan(16, mode="sde"),
    )
    b = run_trajectory(
        model, cfg, pair, SeedCtx(8, (0,)),
        mode_plan=make_mode_plan(16, mode="ode"),
    )
    assert not np.array_equal(a.latent, b.latent)


def test_batched_run_matches_singles_bitwise():
    cfg = small_config(mode="sde")
    model = build_model(cfg.model, cfg.prompt.embed_dim, seed=0)
    pair = make_pair()
    ctxs = [SeedCtx(17, (i,)) for i in range(3)]
    modes = make_mode_plan(16, mode="sde")

    runner = Runner(model, cfg, pair)
    latents = runner.initial_latents(ctxs)
    states = runner.start_states(ctxs)
    batched, _ = runner.run(latents, ctxs, states, modes=modes)

    for i, ctx in enumerate(ctxs):
        single = run_trajectory(model, cfg, pair, ctx, mode_plan=modes)
        assert np.array_equal(batched[i], single.latent)


def test_run_split_resume_is_bitwise_continuous():
    cfg = small_config(mode="sde")
    model = build_model(cfg.model, cfg.prompt.embed_dim, seed=0)
    pair = make_pair()
    ctxs = [SeedCtx(29, (0,))]
    modes = make_mode_plan(16, switch_step=9)

    runner = Runner(model, cfg, pair)
    latents = runner.initial_latents(ctxs)
    states = runner.start_states(ctxs)
    full, _ = runner.run(latents.copy(), ctxs, states, modes=modes)

    latents2 = runner.initial_latents(ctxs)
    states2 = runner.start_states(ctxs)
    latents2, states2 = runner.run(
        latents2, ctxs, states2, modes=modes, end_step=9
    )
    latents2, _ = runner.run(
        latents2, ctxs, states2, modes=modes, start_step=9
    )
    assert np.array_equal(full, latents2)


def test_record_hook_sees_every_step():
    cfg = small_config()
    model = build_model(cfg.model, cfg.prompt.embed_dim, seed=0)
    pair = make_pair()
    seen = []

    def record(step, latent, x0):
        assert x0.shape == latent.shape
        seen.append(step)
        return float(np.mean(latent))

    result = run_trajectory(model, cfg, pair, SeedCtx(1, (0,)), record=record)
    assert seen == list(range(16))
    assert len(result.rewards) == 16
    assert result.rewards[-1][0] == 15
    assert result.rewards[-1][1] == float(np.mean(result.latent))


def test_noise_fn_override_changes_sde_and_not_ode():
    cfg = small_config(mode="sde")
    model = build_model(cfg.model, cfg.prompt.embed_dim, seed=0)
    pair = make_pair()

    def doubled(raw, step):
        return 2.0 * raw

    base = run_trajectory(model, cfg, pair, SeedCtx(2, (0,)))
    hooked = run_trajectory(model, cfg, pair, SeedCtx(2, (0,)), noise_fn=doubled)
    assert not np.array_equal(base.latent, hooked.latent)

    ode_cfg = small_config(mode="ode")
    base_ode = run_trajectory(model, ode_cfg, pair, SeedCtx(2, (0,)))
    hooked_ode = run_trajectory(
        model, ode_cfg, pair, SeedCtx(2, (0,)), noise_fn=doubled
    )
    assert np.array_equal(base_ode.latent, hooked_ode.latent)


def test_disabled_shaping_equals_raw_passthrough_fn():
    import dataclasses

    cfg = dataclasses.replace(
        small_config(mode="sde"),
        noiseshape=NoiseShapeConfig(enabled=False),
    )
    model = build_model(cfg.model, cfg.prompt.embed_dim, seed=0)
    pair = make_pair()
    a = run_trajectory(model, cfg, pair, SeedCtx(6, (0,)))
    b = run_trajectory(
        model, cfg, pair, SeedCtx(6, (0,)), noise_fn=lambda raw, step: raw
    )
    assert np.array_equal(a.latent, b.latent)


def test_wrong_mode_plan_length_rejected():
    cfg = small_config()
    model = build_model(cfg.model, cfg.prompt.embed_dim, seed=0)
    with pytest.raises(ValueError):
        run_trajectory(
            model, cfg, make_pair(), SeedCtx(0, (0,)), mode_plan=("ode",) * 5
        )


def test_golden_ode_trajectory_pinned():
    path = DATA_DIR / "golden_ode.json"
    payload = json.loads(path.read_text())
    cfg = small_config(churn_eta=0.0)
    import dataclasses

    cfg = dataclasses.replace(cfg, tep=zero_tep())
    model = build_model(cfg.model, cfg.prompt.embed_dim, seed=0)
    result = run_trajectory(model, cfg, make_pair(), SeedCtx(1234, (0,)))
    assert np.array_equal(result.latent, np.array(payload["latent"]))
