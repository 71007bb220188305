"""Generic blocked random-walk Metropolis machinery.

This is the algorithm in its plainest form: sweep over blocks of
coordinates, propose a Gaussian step per block, accept by the Metropolis
rule against an arbitrary log-density. The production engine specializes
the same update pattern to the hierarchical model with per-patient
caching; this module is the slow, obviously-correct variant used to
validate the algorithm on analytic targets.
"""

from __future__ import annotations

import math
import warnings
from typing import Callable, Sequence

import numpy as np

__all__ = ["adapt_scales", "metropolis_sweep", "sample_target"]

_SCALE_MIN = 1e-8
_SCALE_MAX = 1e8


def adapt_scales(
    acceptance_rates,
    scales,
    batch: int,
    target_accept: float = 0.44,
    *,
    frozen: bool = False,
) -> np.ndarray:
    """Robbins-Monro proposal-scale update toward a target acceptance rate.

    Each scale is multiplied by exp(+/- delta) with
    ``delta = min(0.05, 1/sqrt(batch))``, pushing acceptance toward
    ``target_accept``. Must only be applied during burn-in; calling with
    ``frozen=True`` (the post-burn-in state) warns and returns the scales
    unchanged, since adapting a chain after burn-in invalidates it.
    """
    scales = np.asarray(scales, dtype=float)
    if frozen:
        warnings.warn(
            "adapt_scales called after burn-in: adaptation is frozen, "
            "scales left unchanged",
            RuntimeWarning,
            stacklevel=2,
        )
        return scales.copy()
    if batch < 1:
        raise ValueError(f"batch must be >= 1, got {batch}")
    rates = np.asarray(acceptance_rates, dtype=float)
    delta = min(0.05, 1.0 / math.sqrt(batch))
    step = np.where(rates > target_accept, delta, np.where(rates < target_accept, -delta, 0.0))
    adapted = np.clip(scales * np.exp(step), _SCALE_MIN, _SCALE_MAX)
    # an exactly-zero scale means the coordinate is deliberately pinned
    return np.where(scales == 0.0, 0.0, adapted)


def _default_blocks(dim: int) -> list[np.ndarray]:
    return [np.array([k]) for k in range(dim)]


def metropolis_sweep(
    logp: Callable[[np.ndarray], float],
    x: np.ndarray,
    scales,
    rng: np.random.Generator,
    blocks: Sequence[Sequence[int]] | None = None,
    logp_x: float | None = None,
) -> tuple[np.ndarray, float, np.ndarray]:
    """One full sweep of blocked random-walk Metropolis updates.

    ``blocks`` lists the coordinate groups proposed jointly (default: one
    block per coordinate); ``scales`` gives one proposal sd per block.
    Returns the new state, its log-density and a per-block accept flag.
    """
    x = np.asarray(x, dtype=float).copy()
    blocks = _default_blocks(x.size) if blocks is None else [np.asarray(b) for b in blocks]
    scales = np.asarray(scales, dtype=float)
    if scales.shape != (len(blocks),):
        raise ValueError(f"need one scale per block, got {scales.shape}")
    if logp_x is None:
        logp_x = float(logp(x))
    if not math.isfinite(logp_x):
        raise ValueError("current state has non-finite log-density")
    accepted = np.zeros(len(blocks), dtype=bool)
    for bi, idx in enumerate(blocks):
        prop = x.copy()
        prop[idx] = x[idx] + scales[bi] * rng.standard_normal(idx.size)
        lp_prop = float(logp(prop))
        if math.log(rng.random()) < lp_prop - logp_x:
            x = prop
            logp_x = lp_prop
            accepted[bi] = True
    return x, logp_x, accepted


def sample_target(
    logp: Callable[[np.ndarray], float],
    x0,
    n_sweeps: int,
    rng: np.random.Generator,
    *,
    blocks: Sequence[Sequence[int]] | None = None,
    scales=None,
    burn_in: int = 0,
    thin: int = 1,
    adapt_window: int = 50,
    target_accept: float = 0.44,
) -> tuple[np.ndarray, np.ndarray]:
    """Run an adaptive-then-frozen chain on an arbitrary log-density.

    Adapts block scales every ``adapt_window`` sweeps during burn-in,
    freezes them, and stores every ``thin``-th post-burn-in state.
    Returns (samples of shape (n_sweeps // thin, dim), final acceptance
    rates per block over the frozen phase).
    """
    x = np.asarray(x0, dtype=float).copy()
    blocks = _default_blocks(x.size) if blocks is None else [np.asarray(b) for b in blocks]
    scales = (
        np.ones(len(blocks)) if scales is None else np.asarray(scales, dtype=float).copy()
    )
    lp = float(logp(x))

    batch = 0
    done = 0
    while done < burn_in:
        width = min(adapt_window, burn_in - done)
        acc = np.zeros(len(blocks))
        for _ in range(width):
            x, lp, accepted = metropolis_sweep(logp, x, scales, rng, blocks, lp)
            acc += accepted
        batch += 1
        scales = adapt_scales(acc / width, scales, batch, target_accept)
        done += width

    n_store = n_sweeps // thin
    out = np.empty((n_store, x.size))
    acc_total = np.zeros(len(blocks))
    for t in range(n_sweeps):
        x, lp, accepted = metropolis_sweep(logp, x, scales, rng, blocks, lp)
        acc_total += accepted
        if (t + 1) % thin == 0:
            out[(t + 1) // thin - 1] = x
    return out, acc_total / max(n_sweeps, 1)
