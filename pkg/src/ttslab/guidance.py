"""Classifier-free guidance combination, perturbed and plain.

Both branches share the same per-layer relative coefficient; the branch
distinction enters only through the w1/w2 magnitudes inside the perturbation
state. The scale endpoints are special-cased so w=0 and w=1 return the
respective branch prediction exactly, not merely up to rounding.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .core import ConditionPair
from .tep import TepState, apply_perturbation
from .toymodel import ToyModel, layered_epsilon


def cfg_combine(eps_uncond: np.ndarray, eps_cond: np.ndarray, w: float) -> np.ndarray:
    """eps_uncond + w * (eps_cond - eps_uncond), exact at the endpoints."""
    eps_uncond = np.asarray(eps_uncond, dtype=np.float64)
    eps_cond = np.asarray(eps_cond, dtype=np.float64)
    if eps_uncond.shape != eps_cond.shape:
        raise ValueError(
            f"branch shapes differ: {eps_uncond.shape} vs {eps_cond.shape}"
        )
    if w == 1.0:
        return eps_cond
    if w == 0.0:
        return eps_uncond
    return eps_uncond + w * (eps_cond - eps_uncond)


def perturbed_pair(
    pair: ConditionPair, tep_state: Optional[TepState], n_layers: int
):
    """Per-layer embedding lists for both branches under the current state."""
    uncond = [apply_perturbation(pair.uncond, tep_state, i, n_layers) for i in range(n_layers)]
    cond = [apply_perturbation(pair.cond, tep_state, i, n_layers) for i in range(n_layers)]
    return uncond, cond


def guided_epsilon(
    model: ToyModel,
    x,
    alpha: float,
    sigma: float,
    pair: ConditionPair,
    tep_state: Optional[TepState],
    cfg_scale: float,
) -> np.ndarray:
    """Perturb both branches, evaluate the layered denoiser on each, combine.

    A None or direction-less state reduces bit-for-bit to plain CFG on the
    unperturbed embeddings.
    """
    uncond_layers, cond_layers = perturbed_pair(pair, tep_state, model.n_layers)
    eps_u = layered_epsilon(model, x, alpha, sigma, uncond_layers)
    eps_c = layered_epsilon(model, x, alpha, sigma, cond_layers)
    return cfg_combine(eps_u, eps_c, cfg_scale)
