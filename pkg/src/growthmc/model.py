"""Joint probability model: hierarchical predictors, priors, log-posterior.

Each patient i has curve parameters built from population-level effects
theta and patient-level random effects (u_a, u_b):

    a_i = beta0_a + u_a + betaW_a * I_W + betaA_a * age_z
    b_i = beta0_b + u_b + betaW_b * I_W + betaA_b * age_z
    c_i = beta0_c + betaW_c * I_W

with men as the reference group (I_W = 1 for women) and age_z the
standardized age. The slope c_i carries no random effect and no age term.
Volumes are conditionally normal around the logistic curve with sd sigma;
random effects are independent normals with sds sigma_a and sigma_b.

Priors: uniform U(0,10) on all sd terms, U(0,20) on beta0_a, U(0,10) on
beta0_c, N(0,10^2) on beta0_b. The remaining regression coefficients
(betaW_*, betaA_*) default to N(0,10^2) as well, overridable through
PriorSpec.

All densities here are reference implementations: clear, direct sums used
as the ground truth for the optimized sampler engine and for DIC.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import TYPE_CHECKING, Mapping

import numpy as np

from .data import Gender, standardize_age, standardize_pressure
from .errors import GrowthMcError, StructuralError
from .growth_math import GrowthParams, logistic_mean

if TYPE_CHECKING:
    from .data import Dataset

THETA_NAMES = (
    "beta0_a",
    "betaW_a",
    "betaA_a",
    "sigma_a",
    "beta0_b",
    "betaW_b",
    "betaA_b",
    "sigma_b",
    "beta0_c",
    "betaW_c",
    "sigma",
)

N_THETA = len(THETA_NAMES)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FixedEffects:
    """The 11 population-level parameters, in reporting order."""

    beta0_a: float
    betaW_a: float
    betaA_a: float
    sigma_a: float
    beta0_b: float
    betaW_b: float
    betaA_b: float
    sigma_b: float
    beta0_c: float
    betaW_c: float
    sigma: float

    def to_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in THETA_NAMES], dtype=float)

    @classmethod
    def from_array(cls, arr) -> FixedEffects:
        arr = np.asarray(arr, dtype=float)
        if arr.shape != (N_THETA,):
            raise GrowthMcError(f"expected {N_THETA} parameters, got shape {arr.shape}")
        return cls(**{n: float(v) for n, v in zip(THETA_NAMES, arr)})

    def to_dict(self) -> dict[str, float]:
        return {n: getattr(self, n) for n in THETA_NAMES}

    @classmethod
    def from_dict(cls, d: Mapping[str, float]) -> FixedEffects:
        missing = [n for n in THETA_NAMES if n not in d]
        if missing:
            raise GrowthMcError(f"missing fixed-effect values for {missing}")
        return cls(**{n: float(d[n]) for n in THETA_NAMES})


#: Default population values for synthetic data generation (asymptote in
#: litres around 5.6 for the reference group, slope ~2.2 per standardized
#: pressure unit, observation noise sd 0.361).
REFERENCE_ESTIMATES = FixedEffects(
    beta0_a=5.597,
    betaW_a=-0.344,
    betaA_a=0.110,
    sigma_a=1.743,
    beta0_b=0.922,
    betaW_b=-0.246,
    betaA_b=0.120,
    sigma_b=0.733,
    beta0_c=2.184,
    betaW_c=-0.245,
    sigma=0.361,
)

# Prior kinds used in the packed per-coordinate encoding.
PRIOR_UNIFORM = 0
PRIOR_NORMAL = 1


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters, overridable per fit.

    Uniform bounds apply to the three sd terms and the two bounded
    intercepts; the remaining coefficients get zero-mean normals.
    """

    sd_lower: float = 0.0
    sd_upper: float = 10.0
    beta0_a_lower: float = 0.0
    beta0_a_upper: float = 20.0
    beta0_c_lower: float = 0.0
    beta0_c_upper: float = 10.0
    beta0_b_sd: float = 10.0
    coef_sd: float = 10.0

    def __post_init__(self) -> None:
        for lo, hi, what in (
            (self.sd_lower, self.sd_upper, "sd"),
            (self.beta0_a_lower, self.beta0_a_upper, "beta0_a"),
            (self.beta0_c_lower, self.beta0_c_upper, "beta0_c"),
        ):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise GrowthMcError(f"{what} prior bounds must be finite with lo < hi")
        if self.sd_lower < 0.0:
            raise GrowthMcError("sd prior support cannot include negatives")
        if not (self.beta0_b_sd > 0.0 and self.coef_sd > 0.0):
            raise GrowthMcError("normal prior sds must be positive")

    def to_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: Mapping[str, float]) -> PriorSpec:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise GrowthMcError(f"unknown prior keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def coordinate_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-theta-coordinate prior encoding: (kind, p1, p2).

        Uniform: p1=lower, p2=upper. Normal (zero mean): p1=sd, p2=0.
        """
        kinds = np.empty(N_THETA, dtype=np.int64)
        p1 = np.empty(N_THETA, dtype=float)
        p2 = np.zeros(N_THETA, dtype=float)
        spec = {
            "beta0_a": (PRIOR_UNIFORM, self.beta0_a_lower, self.beta0_a_upper),
            "betaW_a": (PRIOR_NORMAL, self.coef_sd, 0.0),
            "betaA_a": (PRIOR_NORMAL, self.coef_sd, 0.0),
            "sigma_a": (PRIOR_UNIFORM, self.sd_lower, self.sd_upper),
            "beta0_b": (PRIOR_NORMAL, self.beta0_b_sd, 0.0),
            "betaW_b": (PRIOR_NORMAL, self.coef_sd, 0.0),
            "betaA_b": (PRIOR_NORMAL, self.coef_sd, 0.0),
            "sigma_b": (PRIOR_UNIFORM, self.sd_lower, self.sd_upper),
            "beta0_c": (PRIOR_UNIFORM, self.beta0_c_lower, self.beta0_c_upper),
            "betaW_c": (PRIOR_NORMAL, self.coef_sd, 0.0),
            "sigma": (PRIOR_UNIFORM, self.sd_lower, self.sd_upper),
        }
        for k, name in enumerate(THETA_NAMES):
            kinds[k], p1[k], p2[k] = spec[name]
        return kinds, p1, p2


def predictors(
    theta: FixedEffects,
    u_i: tuple[float, float],
    gender: Gender,
    std_age: float,
) -> GrowthParams:
    """Curve parameters for one patient from effects and covariates."""
    iw = gender.indicator_woman
    u_a, u_b = u_i
    return GrowthParams(
        a=theta.beta0_a + u_a + theta.betaW_a * iw + theta.betaA_a * std_age,
        b=theta.beta0_b + u_b + theta.betaW_b * iw + theta.betaA_b * std_age,
        c=theta.beta0_c + theta.betaW_c * iw,
    )


def _normal_logpdf_sum(y: np.ndarray, mu: np.ndarray, sigma: float) -> float:
    resid = y - mu
    return float(
        -0.5 * y.size * (_LOG_2PI + 2.0 * math.log(sigma))
        - float(resid @ resid) / (2.0 * sigma * sigma)
    )


def log_likelihood(
    theta: FixedEffects,
    u: Mapping[str, tuple[float, float]],
    dataset: "Dataset",
) -> float:
    """Sum of conditional normal log-densities over all observations.

    Soft-rejects invalid states: any patient with non-positive asymptote
    gives -inf rather than raising, so the sampler stays total.
    """
    if not theta.sigma > 0.0:
        raise GrowthMcError(f"log_likelihood needs sigma > 0, got {theta.sigma!r}")
    std = dataset.standardization
    total = 0.0
    for patient in dataset.patients:
        if patient.id not in u:
            raise StructuralError(f"no random effects for patient {patient.id!r}")
        params = predictors(
            theta,
            u[patient.id],
            patient.gender,
            standardize_age(patient.age_years, std),
        )
        if params.a <= 0.0:
            return float("-inf")
        x = standardize_pressure(
            np.array([o.pressure_mmhg for o in patient.observations]), std
        )
        y = np.array([o.volume_l for o in patient.observations])
        total += _normal_logpdf_sum(y, logistic_mean(params, x), theta.sigma)
    return total


def _coordinate_log_prior(value: float, kind: int, p1: float, p2: float) -> float:
    if kind == PRIOR_UNIFORM:
        lo, hi = p1, p2
        if not (lo < value < hi):
            return float("-inf")
        return -math.log(hi - lo)
    sd = p1
    return -0.5 * (_LOG_2PI + 2.0 * math.log(sd)) - value * value / (2.0 * sd * sd)


def log_prior(
    theta: FixedEffects,
    u: Mapping[str, tuple[float, float]],
    prior: PriorSpec,
) -> float:
    """Joint log prior of theta and the random effects.

    Out-of-support values are encoded as -inf, never an exception.
    """
    kinds, p1, p2 = prior.coordinate_arrays()
    arr = theta.to_array()
    total = 0.0
    for k in range(N_THETA):
        lp = _coordinate_log_prior(float(arr[k]), int(kinds[k]), p1[k], p2[k])
        if lp == float("-inf"):
            return float("-inf")
        total += lp
    if u:
        ua = np.array([pair[0] for pair in u.values()], dtype=float)
        ub = np.array([pair[1] for pair in u.values()], dtype=float)
        total += _normal_logpdf_sum(ua, np.zeros_like(ua), theta.sigma_a)
        total += _normal_logpdf_sum(ub, np.zeros_like(ub), theta.sigma_b)
    return total


def log_posterior(
    theta: FixedEffects,
    u: Mapping[str, tuple[float, float]],
    dataset: "Dataset",
    prior: PriorSpec,
) -> float:
    """Unnormalized log posterior; -inf propagates from either factor."""
    lp = log_prior(theta, u, prior)
    if lp == float("-inf"):
        return lp
    return lp + log_likelihood(theta, u, dataset)
