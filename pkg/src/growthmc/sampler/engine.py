"""Specialized Metropolis-within-Gibbs engine for the hierarchical model.

The sweep kernel exploits the model's conditional structure:

* a regression-coefficient update shifts exactly one of the per-patient
  predictor vectors (a, b or c), so only the residual sums of squares
  need recomputing;
* a random-effect update touches a single patient's observations;
* the three sd updates touch no observations at all, only the cached
  residual and random-effect sums of squares.

Caches are refreshed from scratch at every kernel entry and the
random-effect sums every sweep, bounding float drift; `consistency_gap`
measures the residual drift against a full recompute and is asserted
small in debug runs.

Randomness comes from one counter-based Philox stream per chain, keyed by
SeedSequence([seed, chain_index]). Proposal normals and acceptance
uniforms are drawn in a fixed per-sweep layout (11 theta coordinates,
then one 2-d block per patient), which makes runs bit-reproducible
regardless of how chains are scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from numba import njit

from ..data import standardize_age, standardize_pressure
from ..errors import GrowthMcError, InitializationError
from ..model import N_THETA, PRIOR_UNIFORM, THETA_NAMES
from .core import adapt_scales

if TYPE_CHECKING:
    from ..data import Dataset

# Theta coordinate indices; order mirrors model.THETA_NAMES.
B0A, BWA, BAA, SA, B0B, BWB, BAB, SB, B0C, BWC, SIG = range(N_THETA)

# Translation moves: each location coefficient of the a- and b-predictors is
# also proposed jointly with the compensating shift of the random effects
# (theta_k += d, u_i -= d * w_i), which leaves every curve - and therefore the
# likelihood - unchanged. Single-site updates alone crawl along these flat
# directions; the joint move is what lets the intercepts mix.
N_SHEAR = 6
SHEAR_COEF = np.array([B0A, BWA, BAA, B0B, BWB, BAB], dtype=np.int64)

_INIT_MAX_ATTEMPTS = 1000
_SAMPLING_BLOCK = 32768
_DEBUG_BLOCK = 1000
_DRIFT_TOL = 1e-6


@dataclass(frozen=True)
class PackedData:
    """Flat observation arrays in dataset order, ready for the kernel."""

    ids: tuple[str, ...]
    iw: np.ndarray  # (n,) woman indicator
    age_z: np.ndarray  # (n,) standardized age
    x: np.ndarray  # (m,) standardized pressures, grouped by patient
    y: np.ndarray  # (m,) volumes
    off: np.ndarray  # (n+1,) observation offsets per patient

    @property
    def n_patients(self) -> int:
        return len(self.ids)

    @property
    def n_observations(self) -> int:
        return int(self.off[-1])

    @classmethod
    def from_dataset(cls, dataset: "Dataset") -> PackedData:
        std = dataset.standardization
        ids = tuple(p.id for p in dataset.patients)
        iw = np.array([p.gender.indicator_woman for p in dataset.patients])
        age_z = np.array(
            [standardize_age(p.age_years, std) for p in dataset.patients]
        )
        pressures = []
        volumes = []
        off = np.zeros(len(ids) + 1, dtype=np.int64)
        for i, p in enumerate(dataset.patients):
            pressures.extend(o.pressure_mmhg for o in p.observations)
            volumes.extend(o.volume_l for o in p.observations)
            off[i + 1] = off[i] + p.n_observations
        x = standardize_pressure(np.array(pressures, dtype=float), std)
        return cls(
            ids=ids,
            iw=iw,
            age_z=age_z,
            x=x,
            y=np.array(volumes, dtype=float),
            off=off,
        )


@njit(cache=True, nogil=True, inline="always")
def _mu(a, eta):
    if eta >= 0.0:
        return a / (1.0 + np.exp(-eta))
    z = np.exp(eta)
    return a * z / (1.0 + z)


@njit(cache=True, nogil=True, inline="always")
def _patient_ss(a_i, b_i, c_i, x, y, j0, j1):
    s = 0.0
    for j in range(j0, j1):
        d = y[j] - _mu(a_i, b_i + c_i * x[j])
        s += d * d
    return s


@njit(cache=True, nogil=True)
def _refresh(theta, ua, ub, iw, age, x, y, off, a, b, c, ss):
    """Rebuild predictor and residual caches; inf signals an invalid state."""
    n = a.shape[0]
    for i in range(n):
        a[i] = theta[B0A] + ua[i] + theta[BWA] * iw[i] + theta[BAA] * age[i]
        b[i] = theta[B0B] + ub[i] + theta[BWB] * iw[i] + theta[BAB] * age[i]
        c[i] = theta[B0C] + theta[BWC] * iw[i]
        if a[i] <= 0.0:
            return np.inf
    total = 0.0
    for i in range(n):
        ss[i] = _patient_ss(a[i], b[i], c[i], x, y, off[i], off[i + 1])
        total += ss[i]
    return total


@njit(cache=True, nogil=True)
def _run_sweeps(
    theta,
    ua,
    ub,
    a,
    b,
    c,
    ss,
    ss_tmp,
    iw,
    age,
    x,
    y,
    off,
    kinds,
    p1,
    p2,
    update_mask,
    scales_th,
    scales_u,
    scales_sh,
    normals,
    unifs,
    acc_th,
    acc_u,
    acc_sh,
    store_theta,
    store_u,
    t0,
    thin,
    store_enabled,
):
    n = ua.shape[0]
    m = x.shape[0]
    n_sweeps = normals.shape[0]
    sst = 0.0
    for i in range(n):
        sst += ss[i]

    for t in range(n_sweeps):
        ssua = 0.0
        ssub = 0.0
        for i in range(n):
            ssua += ua[i] * ua[i]
            ssub += ub[i] * ub[i]
        sigma = theta[SIG]
        sig_a = theta[SA]
        sig_b = theta[SB]

        for k in range(N_THETA):
            if not update_mask[k]:
                continue
            cur = theta[k]
            prop = cur + scales_th[k] * normals[t, k]
            lu = np.log(unifs[t, k])
            if kinds[k] == 0:  # uniform prior: reject outside support
                if prop <= p1[k] or prop >= p2[k]:
                    continue
                dprior = 0.0
            else:  # zero-mean normal prior
                sd = p1[k]
                dprior = -0.5 * (prop * prop - cur * cur) / (sd * sd)

            if k == SA:
                delta = (
                    dprior
                    + n * (np.log(cur) - np.log(prop))
                    + 0.5 * ssua * (1.0 / (cur * cur) - 1.0 / (prop * prop))
                )
                if lu < delta:
                    theta[SA] = prop
                    sig_a = prop
                    acc_th[k] += 1
            elif k == SB:
                delta = (
                    dprior
                    + n * (np.log(cur) - np.log(prop))
                    + 0.5 * ssub * (1.0 / (cur * cur) - 1.0 / (prop * prop))
                )
                if lu < delta:
                    theta[SB] = prop
                    sig_b = prop
                    acc_th[k] += 1
            elif k == SIG:
                delta = (
                    dprior
                    + m * (np.log(cur) - np.log(prop))
                    + 0.5 * sst * (1.0 / (cur * cur) - 1.0 / (prop * prop))
                )
                if lu < delta:
                    theta[SIG] = prop
                    sigma = prop
                    acc_th[k] += 1
            else:
                # Regression coefficient: shifts one predictor vector by d*w_i
                # with w_i in {1, iw_i, age_i}; recompute affected residuals.
                d = prop - cur
                sst_new = 0.0
                ok = True
                for i in range(n):
                    if k == B0A or k == B0B or k == B0C:
                        w = 1.0
                    elif k == BWA or k == BWB or k == BWC:
                        w = iw[i]
                    else:
                        w = age[i]
                    dw = d * w
                    if dw == 0.0:
                        ss_tmp[i] = ss[i]
                        sst_new += ss[i]
                        continue
                    if k == B0A or k == BWA or k == BAA:
                        ai = a[i] + dw
                        if ai <= 0.0:
                            ok = False
                            break
                        s = _patient_ss(ai, b[i], c[i], x, y, off[i], off[i + 1])
                    elif k == B0B or k == BWB or k == BAB:
                        s = _patient_ss(a[i], b[i] + dw, c[i], x, y, off[i], off[i + 1])
                    else:
                        s = _patient_ss(a[i], b[i], c[i] + dw, x, y, off[i], off[i + 1])
                    ss_tmp[i] = s
                    sst_new += s
                if not ok:
                    continue
                delta = dprior - (sst_new - sst) / (2.0 * sigma * sigma)
                if lu < delta:
                    theta[k] = prop
                    for i in range(n):
                        if k == B0A or k == B0B or k == B0C:
                            w = 1.0
                        elif k == BWA or k == BWB or k == BWC:
                            w = iw[i]
                        else:
                            w = age[i]
                        dw = d * w
                        if k == B0A or k == BWA or k == BAA:
                            a[i] += dw
                        elif k == B0B or k == BWB or k == BAB:
                            b[i] += dw
                        else:
                            c[i] += dw
                        ss[i] = ss_tmp[i]
                    sst = sst_new
                    acc_th[k] += 1

        # Random-effect pairs: each conditional touches one patient's data.
        inv_2sig2 = 1.0 / (2.0 * sigma * sigma)
        inv_2siga2 = 1.0 / (2.0 * sig_a * sig_a)
        inv_2sigb2 = 1.0 / (2.0 * sig_b * sig_b)
        for i in range(n):
            dua = scales_u[i] * normals[t, N_THETA + 2 * i]
            dub = scales_u[i] * normals[t, N_THETA + 2 * i + 1]
            lu = np.log(unifs[t, N_THETA + i])
            a_new = a[i] + dua
            if a_new <= 0.0:
                continue
            b_new = b[i] + dub
            ss_new = _patient_ss(a_new, b_new, c[i], x, y, off[i], off[i + 1])
            ua_new = ua[i] + dua
            ub_new = ub[i] + dub
            delta = (
                -(ss_new - ss[i]) * inv_2sig2
                - (ua_new * ua_new - ua[i] * ua[i]) * inv_2siga2
                - (ub_new * ub_new - ub[i] * ub[i]) * inv_2sigb2
            )
            if lu < delta:
                sst += ss_new - ss[i]
                ss[i] = ss_new
                a[i] = a_new
                b[i] = b_new
                ua[i] = ua_new
                ub[i] = ub_new
                acc_u[i] += 1

        # Likelihood-invariant translation moves along the flat directions
        # (see SHEAR_COEF): only the coefficient prior and the random-effect
        # prior change, so each move costs O(n) with no observation pass.
        for j in range(N_SHEAR):
            k = SHEAR_COEF[j]
            if not update_mask[k]:
                continue
            d = scales_sh[j] * normals[t, N_THETA + 2 * n + j]
            lu = np.log(unifs[t, N_THETA + n + j])
            cur = theta[k]
            prop = cur + d
            if kinds[k] == 0:
                if prop <= p1[k] or prop >= p2[k]:
                    continue
                dprior = 0.0
            else:
                sd = p1[k]
                dprior = -0.5 * (prop * prop - cur * cur) / (sd * sd)
            swu = 0.0
            sww = 0.0
            for i in range(n):
                if j == 0 or j == 3:
                    w = 1.0
                elif j == 1 or j == 4:
                    w = iw[i]
                else:
                    w = age[i]
                swu += w * (ua[i] if j < 3 else ub[i])
                sww += w * w
            sig_u = sig_a if j < 3 else sig_b
            delta = dprior + (2.0 * d * swu - d * d * sww) / (2.0 * sig_u * sig_u)
            if lu < delta:
                theta[k] = prop
                for i in range(n):
                    if j == 0 or j == 3:
                        w = 1.0
                    elif j == 1 or j == 4:
                        w = iw[i]
                    else:
                        w = age[i]
                    if j < 3:
                        ua[i] -= d * w
                    else:
                        ub[i] -= d * w
                acc_sh[j] += 1

        if store_enabled:
            g = t0 + t + 1
            if g % thin == 0:
                row = g // thin - 1
                for k in range(N_THETA):
                    store_theta[row, k] = theta[k]
                for i in range(n):
                    store_u[row, 2 * i] = ua[i]
                    store_u[row, 2 * i + 1] = ub[i]
    return sst


@dataclass
class EngineState:
    """Mutable chain state plus the caches the kernel maintains."""

    theta: np.ndarray  # (11,)
    ua: np.ndarray  # (n,)
    ub: np.ndarray  # (n,)
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    ss: np.ndarray
    ss_tmp: np.ndarray

    @classmethod
    def empty(cls, theta: np.ndarray, ua: np.ndarray, ub: np.ndarray) -> EngineState:
        n = ua.size
        return cls(
            theta=theta,
            ua=ua,
            ub=ub,
            a=np.empty(n),
            b=np.empty(n),
            c=np.empty(n),
            ss=np.empty(n),
            ss_tmp=np.empty(n),
        )

    def refresh(self, packed: PackedData) -> float:
        return _refresh(
            self.theta,
            self.ua,
            self.ub,
            packed.iw,
            packed.age_z,
            packed.x,
            packed.y,
            packed.off,
            self.a,
            self.b,
            self.c,
            self.ss,
        )


def chain_rng(seed: int, chain_index: int) -> np.random.Generator:
    """Counter-based Philox stream for one chain, keyed by (seed, chain)."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence([seed, chain_index]))
    )


def sweep_randoms(
    rng: np.random.Generator, n_sweeps: int, n_patients: int
) -> tuple[np.ndarray, np.ndarray]:
    """Proposal normals and acceptance uniforms in the fixed sweep layout:
    11 theta coordinates, one 2-d block per patient, then the translation
    moves."""
    normals = rng.standard_normal((n_sweeps, N_THETA + 2 * n_patients + N_SHEAR))
    unifs = rng.random((n_sweeps, N_THETA + n_patients + N_SHEAR))
    return normals, unifs


def draw_initial_theta(
    kinds: np.ndarray, p1: np.ndarray, p2: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Overdispersed start: mid-half of each uniform support, scaled-down
    normal draws for the unbounded coordinates."""
    theta = np.empty(N_THETA)
    for k in range(N_THETA):
        if kinds[k] == PRIOR_UNIFORM:
            width = p2[k] - p1[k]
            theta[k] = p1[k] + width * (0.25 + 0.5 * rng.random())
        else:
            theta[k] = rng.normal(0.0, p1[k] / 5.0)
    return theta


def init_arrays(
    packed: PackedData,
    kinds: np.ndarray,
    p1: np.ndarray,
    p2: np.ndarray,
    fixed_mask: np.ndarray,
    fixed_values: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Starting state with guaranteed finite posterior density (u = 0)."""
    n = packed.n_patients
    scratch = EngineState.empty(np.empty(N_THETA), np.zeros(n), np.zeros(n))
    for _ in range(_INIT_MAX_ATTEMPTS):
        theta = draw_initial_theta(kinds, p1, p2, rng)
        theta[fixed_mask] = fixed_values[fixed_mask]
        scratch.theta = theta
        if np.isfinite(scratch.refresh(packed)):
            return theta, np.zeros(n), np.zeros(n)
    raise InitializationError(
        f"no finite-density starting state in {_INIT_MAX_ATTEMPTS} attempts"
    )


def default_scales(
    kinds: np.ndarray, p1: np.ndarray, p2: np.ndarray, n_patients: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    scales_th = np.empty(N_THETA)
    for k in range(N_THETA):
        scales_th[k] = 0.05 * (p2[k] - p1[k]) if kinds[k] == PRIOR_UNIFORM else 0.1 * p1[k]
    return scales_th, np.full(n_patients, 0.5), np.full(N_SHEAR, 0.5)


@dataclass
class ChainResult:
    theta: np.ndarray  # (S, 11)
    u: np.ndarray  # (S, n, 2)
    accept_theta: np.ndarray  # (11,) rates over the sampling phase
    accept_u: np.ndarray  # (n,)
    accept_shear: np.ndarray  # (N_SHEAR,)
    scales_theta: np.ndarray
    scales_u: np.ndarray
    consistency_gap: float


def run_chain(
    packed: PackedData,
    kinds: np.ndarray,
    p1: np.ndarray,
    p2: np.ndarray,
    fixed_mask: np.ndarray,
    fixed_values: np.ndarray,
    *,
    seed: int,
    chain_index: int,
    iterations: int,
    burn_in: int,
    thin: int,
    adapt_window: int,
    target_accept: float,
    debug: bool = False,
) -> ChainResult:
    """One complete chain: init, adaptive burn-in, frozen sampling phase."""
    n = packed.n_patients
    rng = chain_rng(seed, chain_index)
    theta, ua, ub = init_arrays(packed, kinds, p1, p2, fixed_mask, fixed_values, rng)
    state = EngineState.empty(theta, ua, ub)
    if not np.isfinite(state.refresh(packed)):
        raise InitializationError("initial state lost finiteness on refresh")

    update_mask = ~fixed_mask
    scales_th, scales_u, scales_sh = default_scales(kinds, p1, p2, n)
    acc_th = np.zeros(N_THETA, dtype=np.int64)
    acc_u = np.zeros(n, dtype=np.int64)
    acc_sh = np.zeros(N_SHEAR, dtype=np.int64)
    no_store_theta = np.empty((0, N_THETA))
    no_store_u = np.empty((0, 2 * n))

    def kernel(normals, unifs, store_theta, store_u, t0, thin_k, store_enabled):
        return _run_sweeps(
            state.theta,
            state.ua,
            state.ub,
            state.a,
            state.b,
            state.c,
            state.ss,
            state.ss_tmp,
            packed.iw,
            packed.age_z,
            packed.x,
            packed.y,
            packed.off,
            kinds,
            p1,
            p2,
            update_mask,
            scales_th,
            scales_u,
            scales_sh,
            normals,
            unifs,
            acc_th,
            acc_u,
            acc_sh,
            store_theta,
            store_u,
            t0,
            thin_k,
            store_enabled,
        )

    # Adaptive burn-in: adapt every window, discard all states.
    batch = 0
    done = 0
    while done < burn_in:
        width = min(adapt_window, burn_in - done)
        normals, unifs = sweep_randoms(rng, width, n)
        acc_th[:] = 0
        acc_u[:] = 0
        acc_sh[:] = 0
        kernel(normals, unifs, no_store_theta, no_store_u, 0, 1, False)
        batch += 1
        scales_th = adapt_scales(acc_th / width, scales_th, batch, target_accept)
        scales_u = adapt_scales(acc_u / width, scales_u, batch, target_accept)
        scales_sh = adapt_scales(acc_sh / width, scales_sh, batch, target_accept)
        done += width

    # Frozen sampling phase with thinned storage.
    n_store = iterations // thin
    store_theta = np.empty((n_store, N_THETA))
    store_u = np.empty((n_store, 2 * n))
    acc_th[:] = 0
    acc_u[:] = 0
    acc_sh[:] = 0
    gap = 0.0
    block = _DEBUG_BLOCK if debug else _SAMPLING_BLOCK
    t0 = 0
    while t0 < iterations:
        width = min(block, iterations - t0)
        normals, unifs = sweep_randoms(rng, width, n)
        sst = kernel(normals, unifs, store_theta, store_u, t0, thin, True)
        t0 += width
        if debug:
            check = EngineState.empty(
                state.theta.copy(), state.ua.copy(), state.ub.copy()
            )
            sst_full = check.refresh(packed)
            gap = max(gap, abs(sst - sst_full) / max(1.0, abs(sst_full)))
            if gap > _DRIFT_TOL:
                raise GrowthMcError(
                    f"cache drift {gap:.3e} exceeds {_DRIFT_TOL} "
                    f"(chain {chain_index}, sweep {t0})"
                )
    if not np.isfinite(sst):
        raise GrowthMcError("internal invariant violation: non-finite density")
    if n_store and not np.isfinite(store_theta).all():
        raise GrowthMcError("internal invariant violation: non-finite stored draw")

    return ChainResult(
        theta=store_theta,
        u=store_u.reshape(n_store, n, 2),
        accept_theta=acc_th / max(iterations, 1),
        accept_u=acc_u / max(iterations, 1),
        accept_shear=acc_sh / max(iterations, 1),
        scales_theta=scales_th,
        scales_u=scales_u,
        consistency_gap=gap,
    )


def resolve_fixed(fixed: dict[str, float]) -> tuple[np.ndarray, np.ndarray]:
    """Translate {name: value} pins into kernel mask/value arrays."""
    mask = np.zeros(N_THETA, dtype=np.bool_)
    values = np.zeros(N_THETA)
    for name, value in fixed.items():
        if name not in THETA_NAMES:
            raise GrowthMcError(f"cannot fix unknown parameter {name!r}")
        k = THETA_NAMES.index(name)
        mask[k] = True
        values[k] = float(value)
    return mask, values
