"""Configuration schema, validation, and the TOML config-file interface.

Every knob of the laboratory is a field on one of the dataclasses below, and
every field is addressable in a config file (or a ``--set`` override) by its
dotted path, e.g. ``tep.w1.end_value`` or ``search.n_candidates``. Unknown
keys are hard errors; validation accumulates all violations instead of
stopping at the first.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from typing import Optional, Union, get_args, get_origin, get_type_hints

try:
    import tomllib as _toml
except ModuleNotFoundError:  # Python 3.10
    import tomli as _toml

from .core import ScheduleSpec, schedule_eval

REDRAW_POLICIES = ("once_at_start", "per_sde_step", "per_resample")
STRATEGIES = ("best_of_n", "zero_order", "particle", "search_over_paths")
SELECTIONS = ("greedy_topk", "importance")
REWARD_KINDS = ("loglik", "band_match", "composite")
SAMPLER_MODES = ("ode", "sde")


class ConfigError(ValueError):
    """Raised for malformed config files, unknown keys, or failed validation."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("\n".join(self.violations))


@dataclass(frozen=True)
class ModelSpec:
    """Construction parameters of the synthetic conditional mixture model."""

    height: int = 16
    width: int = 16
    n_components: int = 3
    n_detail: int = 4
    n_layers: int = 4
    layer_split: int = 2
    within_std: float = 0.1
    mixture_weights: Optional[tuple[float, ...]] = None  # None -> uniform
    logit_gain: float = 2.0
    detail_gain: float = 0.5
    band_cutoff: float = 0.5


@dataclass(frozen=True)
class PromptSpec:
    """Shape of the synthetic prompt embeddings and the evaluation prompt set."""

    n_tokens: int = 8
    embed_dim: int = 8
    eos_index: int = 6
    n_prompts: int = 4


@dataclass(frozen=True)
class PerturbConfig:
    """Knobs of the prompt-embedding perturbation engine.

    w1 drives the unconditional branch, w2 the conditional branch; both are in
    units of the per-run empirical std of the conditional embedding entries.
    Layers below ``layer_threshold`` count as shallow and use ``shallow_scale``;
    the rest use ``deep_scale``. Conditional rows are additionally scaled per
    token role (semantic before the EOS index, padding at and after it).
    ``redraw_policy`` None means each search strategy applies its own default
    injection timing.
    """

    w1: ScheduleSpec = field(default_factory=lambda: ScheduleSpec("linear", 0.0, 0.8))
    w2: ScheduleSpec = field(default_factory=lambda: ScheduleSpec("linear", 0.0, 0.15))
    layer_threshold: int = 2
    shallow_scale: float = 1.5
    deep_scale: float = 0.5
    semantic_token_scale: float = 0.25
    padding_token_scale: float = 1.0
    redraw_policy: Optional[str] = None


@dataclass(frozen=True)
class NoiseShapeConfig:
    """Spectral shaping of SDE-injected noise.

    The cutoff schedule gives the kept fraction of the radial frequency band
    at each step; filtered noise is renormalized to zero mean and unit std.
    """

    enabled: bool = True
    cutoff_schedule: ScheduleSpec = field(
        default_factory=lambda: ScheduleSpec("linear", 1.0, 0.6)
    )


@dataclass(frozen=True)
class SamplerConfig:
    """Discretization of the denoising process.

    Noise levels run from ``max_level`` down to 0 over ``n_steps`` Euler steps.
    ``max_level`` stays strictly below 1 because the drift of the trigonometric
    schedule diverges at t=1; validation rejects step counts too coarse for the
    chosen ``max_level``.
    """

    n_steps: int = 64
    churn_eta: float = 1.0
    max_level: float = 0.98
    mode: str = "ode"


@dataclass(frozen=True)
class SearchConfig:
    """Search-strategy selection and its per-strategy knobs."""

    strategy: str = "best_of_n"
    n_candidates: int = 8
    n_particles: int = 4
    n_children: int = 2
    block_steps: int = 16
    selection: str = "greedy_topk"
    temperature: Optional[float] = None  # None -> 0.1 x observed reward range
    zo_radius: float = 0.5
    zo_rounds: int = 4
    sop_rounds: int = 3
    sop_depth: Optional[int] = None  # None -> n_steps // 4
    sop_topk: Optional[int] = None  # None -> max(1, n_candidates // 4)


@dataclass(frozen=True)
class RewardConfig:
    """Reward / verifier selection."""

    kind: str = "loglik"
    composite_weights: tuple[float, ...] = (0.5, 0.5)  # (loglik, band_match)
    n_bands: int = 4
    band_profile: Optional[tuple[float, ...]] = None  # None -> uniform fractions


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    cfg_scale: float = 5.0
    model: ModelSpec = field(default_factory=ModelSpec)
    prompt: PromptSpec = field(default_factory=PromptSpec)
    tep: PerturbConfig = field(default_factory=PerturbConfig)
    noiseshape: NoiseShapeConfig = field(default_factory=NoiseShapeConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)


# ---------------------------------------------------------------------------
# validation


def _check_schedule_nonnegative(spec, total_steps, path, out):
    for step in range(total_steps):
        if schedule_eval(spec, step, total_steps) < 0:
            out.append(f"{path}: negative value at step {step}")
            return


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """Return all violations as ``dotted.path: message`` strings (empty if valid)."""
    v: list[str] = []
    m, p, t, ns, sa, se, rw = (
        cfg.model,
        cfg.prompt,
        cfg.tep,
        cfg.noiseshape,
        cfg.sampler,
        cfg.search,
        cfg.reward,
    )

    if m.height < 4 or m.width < 4:
        v.append("model.height/model.width: grid must be at least 4x4 for the spectral split")
    if m.n_components < 1:
        v.append("model.n_components: must be >= 1")
    if m.n_detail < 1:
        v.append("model.n_detail: must be >= 1")
    if m.n_layers < 1:
        v.append("model.n_layers: must be >= 1")
    if not (0 <= m.layer_split <= m.n_layers):
        v.append("model.layer_split: must lie in [0, n_layers]")
    if m.within_std < 0:
        v.append("model.within_std: must be >= 0")
    if not (0 < m.band_cutoff <= 1):
        v.append("model.band_cutoff: must lie in (0, 1]")
    if m.mixture_weights is not None:
        w = m.mixture_weights
        if len(w) != m.n_components:
            v.append("model.mixture_weights: length must equal n_components")
        elif any(x <= 0 for x in w):
            v.append("model.mixture_weights: all weights must be positive")
        elif abs(sum(w) - 1.0) > 1e-9:
            v.append("model.mixture_weights: must sum to 1")

    if p.n_tokens < 1:
        v.append("prompt.n_tokens: must be >= 1")
    if p.embed_dim < 1:
        v.append("prompt.embed_dim: must be >= 1")
    if not (1 <= p.eos_index < p.n_tokens):
        v.append("prompt.eos_index: must lie in [1, n_tokens) so semantic tokens exist")
    if p.n_prompts < 1:
        v.append("prompt.n_prompts: must be >= 1")

    T = sa.n_steps
    if T < 1:
        v.append("sampler.n_steps: must be >= 1")
    if not (0.0 <= sa.churn_eta <= 1.0):
        v.append("sampler.churn_eta: must lie in [0, 1]")
    if not (0.0 < sa.max_level < 1.0):
        v.append("sampler.max_level: must lie in (0, 1)")
    if sa.mode not in SAMPLER_MODES:
        v.append(f"sampler.mode: must be one of {SAMPLER_MODES}")
    if T >= 1 and 0.0 < sa.max_level < 1.0:
        # explicit Euler stability bound for the stiffest (first) step
        stiffness = (sa.max_level / T) * (math.pi / 2) * math.tan(math.pi * sa.max_level / 2)
        if stiffness > 2.0:
            v.append(
                "sampler.n_steps: too few steps for max_level "
                f"(first-step stiffness {stiffness:.2f} > 2; raise n_steps or lower max_level)"
            )

    for scale_name in ("semantic_token_scale", "padding_token_scale"):
        val = getattr(t, scale_name)
        if not (0.0 <= val <= 1.0):
            v.append(f"tep.{scale_name}: must lie in [0, 1]")
    if t.semantic_token_scale > t.padding_token_scale:
        v.append("tep.semantic_token_scale: must not exceed padding_token_scale")
    if not t.shallow_scale > t.deep_scale:
        v.append("tep.shallow_scale: must strictly exceed deep_scale")
    if not (0 <= t.layer_threshold <= m.n_layers):
        v.append("tep.layer_threshold: exceeds number of denoiser layers")
    if t.redraw_policy is not None and t.redraw_policy not in REDRAW_POLICIES:
        v.append(f"tep.redraw_policy: must be one of {REDRAW_POLICIES}")
    if T >= 1:
        _check_schedule_nonnegative(t.w1, T, "tep.w1", v)
        _check_schedule_nonnegative(t.w2, T, "tep.w2", v)
        for step in range(T):
            w1 = schedule_eval(t.w1, step, T)
            w2 = schedule_eval(t.w2, step, T)
            if w2 > w1 or w2 * t.padding_token_scale > w1:
                v.append(f"tep.w2: w1 must dominate w2 (violated at step {step})")
                break

    if T >= 1:
        prev = None
        for step in range(T):
            cut = schedule_eval(ns.cutoff_schedule, step, T)
            if not (0.0 < cut <= 1.0):
                v.append(f"noiseshape.cutoff_schedule: value at step {step} outside (0, 1]")
                break
            if prev is not None and cut > prev + 1e-12:
                v.append("noiseshape.cutoff_schedule: must be non-increasing over steps")
                break
            prev = cut

    if se.strategy not in STRATEGIES:
        v.append(f"search.strategy: must be one of {STRATEGIES}")
    for name in ("n_candidates", "n_particles", "n_children", "block_steps"):
        if getattr(se, name) < 1:
            v.append(f"search.{name}: must be >= 1")
    for name in ("zo_rounds", "sop_rounds"):
        if getattr(se, name) < 0:
            v.append(f"search.{name}: must be >= 0")
    if se.selection not in SELECTIONS:
        v.append(f"search.selection: must be one of {SELECTIONS}")
    if se.temperature is not None and not se.temperature > 0:
        v.append("search.temperature: must be > 0")
    if not (0.0 < se.zo_radius <= 1.0):
        v.append("search.zo_radius: must lie in (0, 1]")
    if se.sop_depth is not None and se.sop_depth < 1:
        v.append("search.sop_depth: must be >= 1")
    if se.sop_topk is not None and se.sop_topk < 1:
        v.append("search.sop_topk: must be >= 1")

    if rw.kind not in REWARD_KINDS:
        v.append(f"reward.kind: must be one of {REWARD_KINDS}")
    if len(rw.composite_weights) != 2:
        v.append("reward.composite_weights: expects exactly (loglik, band_match) weights")
    elif any(x < 0 for x in rw.composite_weights):
        v.append("reward.composite_weights: must be non-negative")
    elif abs(sum(rw.composite_weights) - 1.0) > 1e-9:
        v.append("reward.composite_weights: must sum to 1")
    if rw.n_bands < 1:
        v.append("reward.n_bands: must be >= 1")
    if rw.band_profile is not None:
        bp = rw.band_profile
        if len(bp) != rw.n_bands:
            v.append("reward.band_profile: length must equal n_bands")
        elif any(x < 0 for x in bp):
            v.append("reward.band_profile: fractions must be non-negative")
        elif abs(sum(bp) - 1.0) > 1e-9:
            v.append("reward.band_profile: must sum to 1")

    if not math.isfinite(cfg.cfg_scale):
        v.append("cfg_scale: must be finite")

    return v


# ---------------------------------------------------------------------------
# construction from nested dicts (config files, overrides)


def _coerce(value, annotation, path, errors):
    origin = get_origin(annotation)
    if origin is Union:  # Optional[X]
        args = [a for a in get_args(annotation) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], path, errors)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            errors.append(f"{path}: expected an array")
            return None
        return tuple(float(x) for x in value)
    if annotation is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{path}: expected a number")
            return None
        return float(value)
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            errors.append(f"{path}: expected an integer")
            return None
        return int(value)
    if annotation is bool:
        if not isinstance(value, bool):
            errors.append(f"{path}: expected a boolean")
            return None
        return value
    if annotation is str:
        if not isinstance(value, str):
            errors.append(f"{path}: expected a string")
            return None
        return value
    errors.append(f"{path}: unsupported value {value!r}")
    return None


def _merge_dataclass(base, data, path, errors):
    """Overlay a nested dict onto a dataclass instance, field by field.

    Tables merge recursively (a partial schedule table keeps the default's
    other entries); scalars replace. Unknown keys accumulate errors.
    """
    cls = type(base)
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    for key in sorted(set(data) - names):
        errors.append(f"{path}.{key}: unknown key" if path else f"{key}: unknown key")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        sub_path = f"{path}.{f.name}" if path else f.name
        annotation = hints[f.name]
        target = annotation
        if get_origin(annotation) is Union:
            non_none = [a for a in get_args(annotation) if a is not type(None)]
            target = non_none[0]
        if dataclasses.is_dataclass(target):
            raw = data[f.name]
            if not isinstance(raw, dict):
                errors.append(f"{sub_path}: expected a table")
                continue
            current = getattr(base, f.name)
            if current is None:
                current = target()
            kwargs[f.name] = _merge_dataclass(current, raw, sub_path, errors)
        else:
            coerced = _coerce(data[f.name], annotation, sub_path, errors)
            if coerced is not None or data[f.name] is None:
                kwargs[f.name] = coerced
    try:
        return dataclasses.replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        errors.append(f"{path or cls.__name__}: {exc}")
        return base


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a nested dict; unknown keys are errors."""
    errors: list[str] = []
    cfg = _merge_dataclass(ExperimentConfig(), data, "", errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def parse_override(text: str) -> tuple[list[str], object]:
    """Parse one ``dotted.path=value`` override; values use TOML literal syntax."""
    if "=" not in text:
        raise ConfigError([f"override {text!r}: expected dotted.path=value"])
    key, raw = text.split("=", 1)
    path = [part.strip() for part in key.strip().split(".")]
    if not all(path):
        raise ConfigError([f"override {text!r}: empty path component"])
    raw = raw.strip()
    try:
        value = _toml.loads(f"v = {raw}")["v"]
    except _toml.TOMLDecodeError:
        value = raw  # bare strings allowed for convenience
    return path, value


def apply_overrides(data: dict, overrides) -> dict:
    for text in overrides:
        path, value = parse_override(text)
        node = data
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError([f"override {text!r}: {part} is not a table"])
        node[path[-1]] = value
    return data


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Load a config file, apply overrides, validate, and return the config.

    ``path`` None starts from pure defaults. Raises ConfigError carrying the
    full accumulated violation list on any problem.
    """
    data: dict = {}
    if path is not None:
        with open(path, "rb") as fh:
            try:
                data = _toml.load(fh)
            except _toml.TOMLDecodeError as exc:
                raise ConfigError([f"{path}: {exc}"]) from exc
    data = apply_overrides(data, overrides)
    cfg = config_from_dict(data)
    violations = validate_config(cfg)
    if violations:
        raise ConfigError(violations)
    return cfg


# ---------------------------------------------------------------------------
# canonical emission (resolved-config echo) and hashing


def _emit_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_emit_value(x) for x in value) + "]"
    raise TypeError(f"cannot emit {value!r}")


def _emit_table(name: str, obj, lines: list[str]):
    sub_tables = []
    lines.append(f"[{name}]")
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        if value is None:
            continue
        if isinstance(value, ScheduleSpec) or dataclasses.is_dataclass(value):
            sub_tables.append((f"{name}.{f.name}", value))
            continue
        lines.append(f"{f.name} = {_emit_value(value)}")
    lines.append("")
    for sub_name, sub_obj in sub_tables:
        _emit_table(sub_name, sub_obj, lines)


def config_to_text(cfg: ExperimentConfig) -> str:
    """Serialize the resolved config to canonical TOML (reloads to an equal config)."""
    lines: list[str] = []
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if not dataclasses.is_dataclass(value):
            lines.append(f"{f.name} = {_emit_value(value)}")
    lines.append("")
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            _emit_table(f.name, value, lines)
    return "\n".join(lines).rstrip() + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    """Short stable hash of the resolved config, used in artifact filenames."""
    return hashlib.sha256(config_to_text(cfg).encode("utf-8")).hexdigest()[:12]


def comparable_hash(cfg: ExperimentConfig) -> str:
    """Hash with seed, perturbation, shaping, and search knobs normalized out.

    Two runs are comparable in a report when they differ only in seed or in
    the axes reports aggregate over (perturbation on/off, noise shaping,
    search strategy); everything else is the task identity.
    """
    neutral = dataclasses.replace(
        cfg,
        seed=0,
        tep=PerturbConfig(),
        noiseshape=NoiseShapeConfig(),
        search=SearchConfig(),
    )
    return hashlib.sha256(config_to_text(neutral).encode("utf-8")).hexdigest()[:12]


def tep_active(cfg: ExperimentConfig) -> bool:
    """True when the config's perturbation magnitudes are not identically zero."""
    T = cfg.sampler.n_steps
    for step in range(T):
        if schedule_eval(cfg.tep.w1, step, T) != 0.0:
            return True
        if schedule_eval(cfg.tep.w2, step, T) != 0.0:
            return True
    return False
