"""Adaptive Metropolis-within-Gibbs sampling over (theta, u).

The sampler runs independent chains, each with an adaptive burn-in
(proposal scales tuned every ``adapt_window`` sweeps, then frozen) and a
thinned sampling phase. Chains may execute concurrently -- results are
identical to sequential execution because every chain owns a private
counter-based random stream derived from (seed, chain index). The
``GROWTHMC_THREADS`` environment variable caps chain-level parallelism.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Mapping

import numpy as np

from ..data import Standardization
from ..errors import GrowthMcError
from ..model import (
    N_THETA,
    PRIOR_UNIFORM,
    THETA_NAMES,
    FixedEffects,
    PriorSpec,
)
from . import engine
from .core import adapt_scales, metropolis_sweep, sample_target
from .engine import PackedData

if TYPE_CHECKING:
    from ..data import Dataset

__all__ = [
    "McmcConfig",
    "McmcState",
    "Chain",
    "Draws",
    "adapt_scales",
    "metropolis_sweep",
    "sample_target",
    "init_state",
    "mwg_step",
    "run",
    "PackedData",
]

THREADS_ENV_VAR = "GROWTHMC_THREADS"


@dataclass(frozen=True)
class McmcConfig:
    """Sampler settings.

    Defaults are the desk-scale profile (20k iterations, thin 10); the
    long-run profile is 3 chains x 1,000,000 iterations with an equal
    burn-in and thinning of 1,000. ``burn_in`` defaults to ``iterations``.
    ``fixed`` pins named theta coordinates at constant values, which is
    how nested model variants are fit for DIC comparison.
    """

    n_chains: int = 3
    iterations: int = 20000
    burn_in: int | None = None
    thin: int = 10
    seed: int = 0
    adapt_window: int = 50
    target_accept: float = 0.44
    fixed: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.iterations)
        object.__setattr__(self, "fixed", dict(self.fixed))
        if self.n_chains < 1:
            raise GrowthMcError("n_chains must be >= 1")
        if self.iterations < 1:
            raise GrowthMcError("iterations must be >= 1")
        if self.burn_in < 0:
            raise GrowthMcError("burn_in must be >= 0")
        if self.thin < 1:
            raise GrowthMcError("thin must be >= 1")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise GrowthMcError("seed must be a non-negative integer")
        if self.adapt_window < 1:
            raise GrowthMcError("adapt_window must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise GrowthMcError("target_accept must be in (0, 1)")
        for name in self.fixed:
            if name not in THETA_NAMES:
                raise GrowthMcError(f"cannot fix unknown parameter {name!r}")

    @property
    def n_stored(self) -> int:
        return self.iterations // self.thin

    def to_dict(self) -> dict:
        return {
            "n_chains": self.n_chains,
            "iterations": self.iterations,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "seed": self.seed,
            "adapt_window": self.adapt_window,
            "target_accept": self.target_accept,
            "fixed": dict(self.fixed),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> McmcConfig:
        return cls(
            n_chains=int(d["n_chains"]),
            iterations=int(d["iterations"]),
            burn_in=int(d["burn_in"]),
            thin=int(d["thin"]),
            seed=int(d["seed"]),
            adapt_window=int(d["adapt_window"]),
            target_accept=float(d["target_accept"]),
            fixed={k: float(v) for k, v in d.get("fixed", {}).items()},
        )


@dataclass
class McmcState:
    """Current chain position with per-coordinate acceptance counters."""

    theta: np.ndarray  # (11,)
    u: np.ndarray  # (n, 2), rows in dataset patient order
    accept_theta: np.ndarray  # cumulative accept counts
    accept_u: np.ndarray
    sweeps: int = 0

    @classmethod
    def new(cls, theta: np.ndarray, u: np.ndarray) -> McmcState:
        return cls(
            theta=np.asarray(theta, dtype=float).copy(),
            u=np.asarray(u, dtype=float).copy(),
            accept_theta=np.zeros(N_THETA, dtype=np.int64),
            accept_u=np.zeros(u.shape[0], dtype=np.int64),
        )


@dataclass
class ProposalScales:
    theta: np.ndarray  # (11,)
    u: np.ndarray  # (n,) one scale per random-effect pair
    shear: np.ndarray | None = None  # (6,) translation moves; default 0.5

    def __post_init__(self) -> None:
        if self.shear is None:
            self.shear = np.full(engine.N_SHEAR, 0.5)


@dataclass
class Chain:
    """Stored draws of one chain (post burn-in, thinned)."""

    theta: np.ndarray  # (S, 11)
    u: np.ndarray  # (S, n, 2)
    accept_theta: np.ndarray  # (11,) acceptance rates, sampling phase
    accept_u: np.ndarray  # (n,)
    accept_shear: np.ndarray  # (6,) translation-move rates
    chain_index: int

    @property
    def n_draws(self) -> int:
        return self.theta.shape[0]


@dataclass
class Draws:
    """Multi-chain posterior sample store, self-contained for pushforwards.

    Carries the patient covariates and standardization constants so every
    derived quantity is reproducible from this object alone.
    """

    chains: list[Chain]
    config: McmcConfig
    patient_ids: tuple[str, ...]
    patient_gender: tuple[str, ...]  # "M" / "W" tokens
    patient_age: tuple[float, ...]
    standardization: Standardization
    dataset_fingerprint: str

    def __post_init__(self) -> None:
        lengths = {c.n_draws for c in self.chains}
        if len(lengths) > 1:
            raise GrowthMcError(f"chains have unequal draw counts: {sorted(lengths)}")

    @property
    def n_patients(self) -> int:
        return len(self.patient_ids)

    @property
    def n_draws_per_chain(self) -> int:
        return self.chains[0].n_draws if self.chains else 0

    def pooled_theta(self) -> np.ndarray:
        return np.concatenate([c.theta for c in self.chains], axis=0)

    def pooled_u(self) -> np.ndarray:
        return np.concatenate([c.u for c in self.chains], axis=0)

    def theta_series(self, name: str) -> list[np.ndarray]:
        k = THETA_NAMES.index(name)
        return [c.theta[:, k] for c in self.chains]

    def u_series(self, patient_index: int, component: int) -> list[np.ndarray]:
        return [c.u[:, patient_index, component] for c in self.chains]

    def is_fixed(self, name: str) -> bool:
        return name in self.config.fixed

    def patient_index(self, patient_id: str) -> int:
        try:
            return self.patient_ids.index(patient_id)
        except ValueError:
            raise GrowthMcError(f"unknown patient id {patient_id!r}") from None


def _validate_fixed_support(prior: PriorSpec, fixed: Mapping[str, float]) -> None:
    kinds, p1, p2 = prior.coordinate_arrays()
    for name, value in fixed.items():
        k = THETA_NAMES.index(name)
        if kinds[k] == PRIOR_UNIFORM and not (p1[k] < value < p2[k]):
            raise GrowthMcError(
                f"fixed value {name}={value} lies outside its prior support "
                f"({p1[k]}, {p2[k]})"
            )


def init_state(
    dataset: "Dataset", prior: PriorSpec, rng: np.random.Generator
) -> tuple[FixedEffects, dict[str, tuple[float, float]]]:
    """Overdispersed starting point with guaranteed finite posterior.

    Theta is drawn from the mid-range of each prior (distinct across rng
    streams, as multi-chain convergence checks require); random effects
    start at zero. Resamples until the density is finite.
    """
    packed = PackedData.from_dataset(dataset)
    kinds, p1, p2 = prior.coordinate_arrays()
    no_fixed = np.zeros(N_THETA, dtype=np.bool_)
    theta, ua, ub = engine.init_arrays(
        packed, kinds, p1, p2, no_fixed, np.zeros(N_THETA), rng
    )
    u = {pid: (float(ua[i]), float(ub[i])) for i, pid in enumerate(packed.ids)}
    return FixedEffects.from_array(theta), u


def mwg_step(
    state: McmcState,
    dataset: "Dataset",
    prior: PriorSpec,
    scales: ProposalScales,
    rng: np.random.Generator,
) -> McmcState:
    """One full Metropolis-within-Gibbs sweep.

    Updates each theta coordinate by scalar random-walk Metropolis on its
    conditional, then each patient's (u_a, u_b) pair jointly in 2-d, then
    the likelihood-invariant translation moves that pair each a/b location
    coefficient with the compensating random-effect shift. Rejections are
    normal operation; acceptance counters accumulate on the returned state.
    """
    packed = PackedData.from_dataset(dataset)
    kinds, p1, p2 = prior.coordinate_arrays()
    new = McmcState(
        theta=state.theta.copy(),
        u=state.u.copy(),
        accept_theta=state.accept_theta.copy(),
        accept_u=state.accept_u.copy(),
        sweeps=state.sweeps + 1,
    )
    es = engine.EngineState.empty(new.theta, new.u[:, 0].copy(), new.u[:, 1].copy())
    if not np.isfinite(es.refresh(packed)):
        raise GrowthMcError("mwg_step requires a finite current log-density")
    normals, unifs = engine.sweep_randoms(rng, 1, packed.n_patients)
    engine._run_sweeps(
        es.theta,
        es.ua,
        es.ub,
        es.a,
        es.b,
        es.c,
        es.ss,
        es.ss_tmp,
        packed.iw,
        packed.age_z,
        packed.x,
        packed.y,
        packed.off,
        kinds,
        p1,
        p2,
        np.ones(N_THETA, dtype=np.bool_),
        np.asarray(scales.theta, dtype=float),
        np.asarray(scales.u, dtype=float),
        np.asarray(scales.shear, dtype=float),
        normals,
        unifs,
        new.accept_theta,
        new.accept_u,
        np.zeros(engine.N_SHEAR, dtype=np.int64),
        np.empty((0, N_THETA)),
        np.empty((0, 2 * packed.n_patients)),
        0,
        1,
        False,
    )
    new.u[:, 0] = es.ua
    new.u[:, 1] = es.ub
    return new


def _max_workers(n_chains: int) -> int:
    raw = os.environ.get(THREADS_ENV_VAR)
    if raw is None:
        return n_chains
    try:
        cap = int(raw)
    except ValueError:
        raise GrowthMcError(f"{THREADS_ENV_VAR} must be an integer, got {raw!r}") from None
    return max(1, min(n_chains, cap))


def run(
    dataset: "Dataset",
    prior: PriorSpec,
    config: McmcConfig,
    *,
    debug: bool = False,
) -> Draws:
    """Fit the model: independent adaptive chains, thinned storage.

    Fully reproducible from ``config.seed``: the same seed gives
    bitwise-identical Draws regardless of how many chains run in
    parallel. ``debug=True`` runs the per-block full-recompute
    consistency check on the engine caches.
    """
    packed = PackedData.from_dataset(dataset)
    kinds, p1, p2 = prior.coordinate_arrays()
    _validate_fixed_support(prior, config.fixed)
    fixed_mask, fixed_values = engine.resolve_fixed(dict(config.fixed))

    def one_chain(chain_index: int) -> engine.ChainResult:
        return engine.run_chain(
            packed,
            kinds,
            p1,
            p2,
            fixed_mask,
            fixed_values,
            seed=config.seed,
            chain_index=chain_index,
            iterations=config.iterations,
            burn_in=config.burn_in,
            thin=config.thin,
            adapt_window=config.adapt_window,
            target_accept=config.target_accept,
            debug=debug,
        )

    workers = _max_workers(config.n_chains)
    if workers == 1:
        results = [one_chain(k) for k in range(config.n_chains)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_chain, range(config.n_chains)))

    chains = [
        Chain(
            theta=r.theta,
            u=r.u,
            accept_theta=r.accept_theta,
            accept_u=r.accept_u,
            accept_shear=r.accept_shear,
            chain_index=k,
        )
        for k, r in enumerate(results)
    ]
    return Draws(
        chains=chains,
        config=config,
        patient_ids=packed.ids,
        patient_gender=tuple(p.gender.value for p in dataset.patients),
        patient_age=tuple(p.age_years for p in dataset.patients),
        standardization=dataset.standardization,
        dataset_fingerprint=dataset.fingerprint(),
    )
