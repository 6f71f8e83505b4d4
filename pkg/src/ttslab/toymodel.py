"""Analytic conditional diffusion target.

The ground truth is a Gaussian mixture over latent grids whose structure is
split by frequency: each component owns a low-frequency base pattern (the
"composition"), and a shared high-frequency detail basis is modulated by the
prompt. Two fixed seeded matrices read the mean semantic-token vector of an
embedding: the selector turns it into component logits, the projector into
detail coefficients. Because the mixture is tractable, the ideal denoiser,
prior sampler, and data log-density are all closed-form; no training anywhere.

A layered variant splits the embedding read across depth: layers at and above
the split contribute (renormalized by layer weight) to the selector input,
layers below it to the projector input. That makes depth-selective embedding
perturbation do something measurably different per depth, which is the whole
reason this variant exists.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .config import ModelSpec
from .core import PromptEmbedding, derive_stream, validate_grid
from .noiseshape import lowpass, radius_grid, renormalize


@dataclass(frozen=True)
class ToyModel:
    height: int
    width: int
    base_patterns: np.ndarray  # (J, H, W) low-frequency component identities
    detail_basis: np.ndarray  # (M, H, W) shared high-frequency basis
    log_prior: np.ndarray  # (J,)
    selector: np.ndarray  # (J, embed_dim), gain folded in
    projector: np.ndarray  # (M, embed_dim), gain folded in
    within_std: float
    layer_weights: np.ndarray  # (L,), positive, sums to 1
    layer_split: int  # layers >= split feed the selector, < split the projector
    band_cutoff: float

    @property
    def n_components(self) -> int:
        return self.base_patterns.shape[0]

    @property
    def n_detail(self) -> int:
        return self.detail_basis.shape[0]

    @property
    def n_layers(self) -> int:
        return self.layer_weights.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.selector.shape[1]


def build_model(spec: ModelSpec, embed_dim: int, seed: int) -> ToyModel:
    """Construct the mixture target deterministically from (spec, seed).

    Patterns are synthesized through the spectral split directly: base
    patterns are renormalized low-passed noise (all energy at or below the
    band cutoff), detail basis grids are the renormalized high-pass residual.
    """
    height, width = spec.height, spec.width
    radius = radius_grid(height, width)
    if not np.any((radius > 0) & (radius <= spec.band_cutoff)):
        raise ValueError(
            f"grid {height}x{width} too small for a spectral split at cutoff {spec.band_cutoff}"
        )
    if not np.any(radius > spec.band_cutoff):
        raise ValueError(
            f"band_cutoff {spec.band_cutoff} leaves no high-frequency bins on {height}x{width}"
        )

    base = np.stack(
        [
            renormalize(
                lowpass(
                    derive_stream(seed, ["model", "base", j]).standard_normal((height, width)),
                    spec.band_cutoff,
                )
            )
            for j in range(spec.n_components)
        ]
    )
    details = []
    for m in range(spec.n_detail):
        raw = derive_stream(seed, ["model", "detail", m]).standard_normal((height, width))
        details.append(renormalize(raw - lowpass(raw, spec.band_cutoff)))
    detail = np.stack(details)

    sel_raw = derive_stream(seed, ["model", "selector"]).standard_normal(
        (spec.n_components, embed_dim)
    )
    proj_raw = derive_stream(seed, ["model", "projector"]).standard_normal(
        (spec.n_detail, embed_dim)
    )
    selector = spec.logit_gain * sel_raw / math.sqrt(embed_dim)
    projector = spec.detail_gain * proj_raw / math.sqrt(embed_dim)

    lw_raw = derive_stream(seed, ["model", "layer_weights"]).random(spec.n_layers)
    layer_weights = 0.5 + lw_raw
    layer_weights = layer_weights / layer_weights.sum()

    if spec.mixture_weights is None:
        prior = np.full(spec.n_components, 1.0 / spec.n_components)
    else:
        prior = np.asarray(spec.mixture_weights, dtype=np.float64)

    return ToyModel(
        height=height,
        width=width,
        base_patterns=base,
        detail_basis=detail,
        log_prior=np.log(prior),
        selector=selector,
        projector=projector,
        within_std=spec.within_std,
        layer_weights=layer_weights,
        layer_split=spec.layer_split,
        band_cutoff=spec.band_cutoff,
    )


# ---------------------------------------------------------------------------
# embedding -> condition vector -> mixture parameters


def condition_vector(embedding: PromptEmbedding) -> np.ndarray:
    """Mean of the semantic token rows (indices below eos_index).

    Padding rows contribute nothing, so padding-only perturbations leave the
    result untouched. Shape (..., embed_dim).
    """
    if embedding.eos_index == 0:
        raise ValueError("embedding has no semantic tokens (eos_index is 0)")
    semantic = embedding.tokens[..., : embedding.eos_index, :]
    return semantic.mean(axis=-2)


def _apply_matrix(matrix: np.ndarray, v: np.ndarray) -> np.ndarray:
    # elementwise multiply + trailing-axis sum; a matmul here would break
    # bitwise batch-size stability
    if v.shape[-1] != matrix.shape[1]:
        raise ValueError(
            f"condition vector dim {v.shape[-1]} does not match model embed_dim {matrix.shape[1]}"
        )
    return np.sum(matrix * v[..., None, :], axis=-1)


def component_logits(model: ToyModel, v: np.ndarray) -> np.ndarray:
    """Unnormalized component log-weights, shape (..., J)."""
    v = np.asarray(v, dtype=np.float64)
    return model.log_prior + _apply_matrix(model.selector, v)


def detail_coefficients(model: ToyModel, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return _apply_matrix(model.projector, v)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def component_weights(model: ToyModel, v: np.ndarray) -> np.ndarray:
    """Prompt-dependent mixture weights softmax(log prior + selector @ v)."""
    return np.exp(_log_softmax(component_logits(model, v)))


def _means_from_coeffs(model: ToyModel, coeffs: np.ndarray) -> np.ndarray:
    # (..., J, H, W); every component shares the same detail term
    base = model.base_patterns
    out = np.broadcast_to(
        base, coeffs.shape[:-1] + base.shape
    ).copy()
    for m in range(model.n_detail):
        out += coeffs[..., m, None, None, None] * model.detail_basis[m]
    return out


def component_means(model: ToyModel, v: np.ndarray) -> np.ndarray:
    """Mixture means for condition vector v, shape (..., J, H, W)."""
    return _means_from_coeffs(model, detail_coefficients(model, v))


# ---------------------------------------------------------------------------
# closed-form denoiser and densities


def _epsilon_from_parts(model, x, alpha, sigma, logits, coeffs):
    x = validate_grid(x, name="x")
    if sigma <= 0:
        raise ValueError("sigma must be > 0 for the exact denoiser")
    means = _means_from_coeffs(model, coeffs)
    c = alpha * alpha * model.within_std * model.within_std + sigma * sigma
    diff = x[..., None, :, :] - alpha * means
    ssq = np.sum(diff * diff, axis=(-2, -1))
    log_resp = _log_softmax(_log_softmax(logits) - ssq / (2.0 * c))
    resp = np.exp(log_resp)
    eps = np.zeros_like(x)
    for j in range(model.n_components):
        eps = eps + resp[..., j, None, None] * diff[..., j, :, :]
    return (sigma / c) * eps


def exact_epsilon(model: ToyModel, x, alpha: float, sigma: float, v) -> np.ndarray:
    """Ideal noise prediction at VP coefficients (alpha, sigma).

    Posterior-weighted mixture formula; equals -sigma times the gradient of
    the log marginal density of x at this noise level.
    """
    v = np.asarray(v, dtype=np.float64)
    return _epsilon_from_parts(
        model, x, alpha, sigma, component_logits(model, v), detail_coefficients(model, v)
    )


def layered_condition_vectors(model: ToyModel, embeddings: Sequence[PromptEmbedding]):
    """Composite (selector input, projector input) from per-layer embeddings.

    Layer weights are renormalized within each role group; an empty group
    contributes the zero vector.
    """
    if len(embeddings) != model.n_layers:
        raise ValueError(
            f"expected {model.n_layers} per-layer embeddings, got {len(embeddings)}"
        )
    vectors = [condition_vector(e) for e in embeddings]
    split = model.layer_split

    def group_mix(indices):
        if not indices:
            return np.zeros_like(vectors[0])
        total = sum(model.layer_weights[i] for i in indices)
        out = np.zeros_like(vectors[0])
        for i in indices:
            out = out + (model.layer_weights[i] / total) * vectors[i]
        return out

    deep = [i for i in range(model.n_layers) if i >= split]
    shallow = [i for i in range(model.n_layers) if i < split]
    return group_mix(deep), group_mix(shallow)


def layered_epsilon(
    model: ToyModel, x, alpha: float, sigma: float, embeddings: Sequence[PromptEmbedding]
) -> np.ndarray:
    """Denoiser variant reading one embedding per layer.

    Deep layers (>= layer_split) steer the component logits, shallow layers
    the detail coefficients. Identical embeddings across all layers reduce to
    exact_epsilon bit-for-bit.
    """
    if len(embeddings) != model.n_layers:
        raise ValueError(
            f"expected {model.n_layers} per-layer embeddings, got {len(embeddings)}"
        )
    first = embeddings[0]
    if all(np.array_equal(e.tokens, first.tokens) for e in embeddings[1:]):
        return exact_epsilon(model, x, alpha, sigma, condition_vector(first))
    v_deep, v_shallow = layered_condition_vectors(model, embeddings)
    return _epsilon_from_parts(
        model,
        x,
        alpha,
        sigma,
        component_logits(model, v_deep),
        detail_coefficients(model, v_shallow),
    )


def _log_mixture(x, means, variance, log_weights):
    x = validate_grid(x, name="x")
    dim = x.shape[-1] * x.shape[-2]
    diff = x[..., None, :, :] - means
    ssq = np.sum(diff * diff, axis=(-2, -1))
    logits = log_weights - ssq / (2.0 * variance)
    peak = logits.max(axis=-1)
    lse = peak + np.log(np.sum(np.exp(logits - peak[..., None]), axis=-1))
    return lse - 0.5 * dim * math.log(2.0 * math.pi * variance)


def log_density(model: ToyModel, x0, v) -> np.ndarray:
    """Exact data log-density of a clean grid under the conditional mixture."""
    if model.within_std <= 0:
        raise ValueError("log_density requires within_std > 0")
    v = np.asarray(v, dtype=np.float64)
    log_w = _log_softmax(component_logits(model, v))
    return _log_mixture(x0, component_means(model, v), model.within_std**2, log_w)


def log_marginal_density(model: ToyModel, x, alpha: float, sigma: float, v) -> np.ndarray:
    """Log-density of the noised marginal at VP coefficients (alpha, sigma)."""
    v = np.asarray(v, dtype=np.float64)
    c = alpha * alpha * model.within_std * model.within_std + sigma * sigma
    if c <= 0:
        raise ValueError("degenerate noise level: alpha^2 s^2 + sigma^2 must be > 0")
    log_w = _log_softmax(component_logits(model, v))
    return _log_mixture(x, alpha * component_means(model, v), c, log_w)


def sample_prior(
    model: ToyModel, v, rng: np.random.Generator, n: Optional[int] = None
) -> np.ndarray:
    """Draw from the conditional mixture: component by weight, then Gaussian.

    n None returns one (H, W) grid; otherwise (n, H, W).
    """
    v = np.asarray(v, dtype=np.float64)
    weights = component_weights(model, v)
    means = component_means(model, v)
    cum = np.cumsum(weights)
    count = 1 if n is None else int(n)
    picks = np.searchsorted(cum, rng.random(count), side="right")
    picks = np.minimum(picks, model.n_components - 1)
    noise = rng.standard_normal((count, model.height, model.width))
    out = means[picks] + model.within_std * noise
    return out[0] if n is None else out


# ---------------------------------------------------------------------------
# text dump


def _csv_block(name: str, arr: np.ndarray, out: io.StringIO):
    out.write(f"# {name} shape={'x'.join(map(str, arr.shape))}\n")
    flat = arr.reshape((-1, arr.shape[-1])) if arr.ndim > 1 else arr.reshape((1, -1))
    for row in flat:
        out.write(",".join(repr(x) for x in row) + "\n")


def model_dump_text(model: ToyModel) -> str:
    """Binary-free inspection dump: scalars up top, grids as CSV blocks."""
    out = io.StringIO()
    out.write("toy mixture model dump v1\n")
    out.write(f"height={model.height} width={model.width}\n")
    out.write(
        f"n_components={model.n_components} n_detail={model.n_detail} "
        f"n_layers={model.n_layers} layer_split={model.layer_split}\n"
    )
    out.write(f"within_std={model.within_std!r} band_cutoff={model.band_cutoff!r}\n")
    _csv_block("log_prior", model.log_prior, out)
    _csv_block("layer_weights", model.layer_weights, out)
    _csv_block("selector", model.selector, out)
    _csv_block("projector", model.projector, out)
    _csv_block("base_patterns", model.base_patterns, out)
    _csv_block("detail_basis", model.detail_basis, out)
    return out.getvalue()
