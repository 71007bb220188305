"""Shared test utilities: independent oracles and small builders.

The oracles here deliberately avoid the library's closed-form paths:
critical points come from bisection on the analytic derivatives, and the
likelihood oracle is a naive per-observation sum.
"""

from __future__ import annotations

import math

import numpy as np

from growthmc.data import (
    Dataset,
    Gender,
    Observation,
    Patient,
    Standardization,
    standardize_age,
    standardize_pressure,
)
from growthmc.growth_math import GrowthParams, derivatives, logistic_mean
from growthmc.model import THETA_NAMES, FixedEffects
from growthmc.sampler import Chain, Draws, McmcConfig


def bisect(f, lo: float, hi: float, tol: float = 1e-12, max_iter: int = 200) -> float:
    """Plain bisection on a sign change; the root-finding oracle."""
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    assert flo * fhi < 0.0, f"no sign change on [{lo}, {hi}]"
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if fmid == 0.0 or hi - lo < tol:
            return mid
        if flo * fmid < 0.0:
            hi = mid
        else:
            lo, flo = mid, fmid
    return 0.5 * (lo + hi)


def critical_pressures_by_bisection(p: GrowthParams) -> dict[str, float]:
    """IP from the second derivative's root, MAP/MDP from the third
    derivative's roots on either side of IP, ADP from the volume level
    a(3+sqrt(6))/6. Independent of the library's level formulas.

    The bracket spans |b + c*x| <= 25: far enough out that every critical
    point is inside, close enough that the sigmoid has not saturated in
    float and the derivative signs are still resolvable."""
    span = 25.0
    x_lo = (-span - p.b) / p.c
    x_hi = (span - p.b) / p.c

    def d2(x):
        return derivatives(p, x)[1]

    def d3(x):
        return derivatives(p, x)[2]

    ip = bisect(d2, x_lo, x_hi)
    map_x = bisect(d3, x_lo, ip)
    mdp_x = bisect(d3, ip, x_hi)
    adp_level = p.a * (3.0 + math.sqrt(6.0)) / 6.0

    def adp_gap(x):
        return float(logistic_mean(p, x)) - adp_level

    adp_x = bisect(adp_gap, ip, x_hi)
    return {"IP": ip, "MAP": map_x, "MDP": mdp_x, "ADP": adp_x}


def brute_force_loglik(theta: FixedEffects, u: dict, dataset: Dataset) -> float:
    """Observation-by-observation normal log-pdf sum; no vectorization."""
    std = dataset.standardization
    total = 0.0
    for patient in dataset.patients:
        ua, ub = u[patient.id]
        iw = patient.gender.indicator_woman
        age_z = standardize_age(patient.age_years, std)
        a = theta.beta0_a + ua + theta.betaW_a * iw + theta.betaA_a * age_z
        b = theta.beta0_b + ub + theta.betaW_b * iw + theta.betaA_b * age_z
        c = theta.beta0_c + theta.betaW_c * iw
        if a <= 0.0:
            return float("-inf")
        for obs in patient.observations:
            x = standardize_pressure(obs.pressure_mmhg, std)
            mu = a / (1.0 + math.exp(-(b + c * x)))
            z = (obs.volume_l - mu) / theta.sigma
            total += -0.5 * math.log(2.0 * math.pi) - math.log(theta.sigma) - 0.5 * z * z
    return total


def make_patient(pid, gender, age, pv_pairs):
    return Patient(
        id=pid,
        gender=gender,
        age_years=age,
        observations=tuple(Observation(p, v) for p, v in pv_pairs),
    )


def tiny_dataset() -> Dataset:
    """Three patients, unbalanced, both genders; fixed small numbers."""
    patients = (
        make_patient("A", Gender.MAN, 55.0, [(8.0, 2.1), (10.0, 3.4), (12.0, 4.4), (14.0, 5.0)]),
        make_patient("B", Gender.WOMAN, 70.0, [(9.0, 2.2), (11.0, 3.1), (13.0, 4.0)]),
        make_patient("C", Gender.MAN, 42.0, [(8.5, 2.6), (12.5, 4.8)]),
    )
    from growthmc.data import standardize_fit

    return Dataset(patients=patients, standardization=standardize_fit(patients))


def degenerate_draws(
    theta: FixedEffects,
    dataset: Dataset,
    n_draws: int = 1,
    u: np.ndarray | None = None,
) -> Draws:
    """Draws whose every stored state is the same (theta, u) point."""
    n = dataset.n_patients
    theta_arr = np.tile(theta.to_array(), (n_draws, 1))
    u_arr = np.zeros((n_draws, n, 2)) if u is None else np.tile(u, (n_draws, 1, 1))
    chain = Chain(
        theta=theta_arr,
        u=u_arr,
        accept_theta=np.zeros(len(THETA_NAMES)),
        accept_u=np.zeros(n),
        accept_shear=np.zeros(6),
        chain_index=0,
    )
    return Draws(
        chains=[chain],
        config=McmcConfig(n_chains=1, iterations=max(n_draws, 1), thin=1, seed=0),
        patient_ids=tuple(p.id for p in dataset.patients),
        patient_gender=tuple(p.gender.value for p in dataset.patients),
        patient_age=tuple(p.age_years for p in dataset.patients),
        standardization=dataset.standardization,
        dataset_fingerprint=dataset.fingerprint(),
    )
