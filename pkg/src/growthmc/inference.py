"""Post-MCMC science: summaries, critical-point posteriors, prediction,
population outcomes and DIC.

Every derived quantity is a pushforward of the stored draws: no hidden
state beyond an explicit RNG for the Monte Carlo integrals. Draws with a
non-positive asymptote or slope cannot be mapped through the curve
geometry; they are excluded and counted, and a warning escalates when
they exceed 1% of the total.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import TYPE_CHECKING, Mapping

import numpy as np

from .data import Gender, destandardize_pressure, standardize_age, standardize_pressure
from .errors import GrowthMcError
from .growth_math import (
    LEVEL_ADP,
    LEVEL_IP,
    LEVEL_MAP,
    LEVEL_MDP,
)
from .model import THETA_NAMES, FixedEffects, PriorSpec, log_likelihood

if TYPE_CHECKING:
    from .data import Dataset
    from .sampler import Draws

_IDX = {name: k for k, name in enumerate(THETA_NAMES)}

# Sigmoid level and its logit, per named critical point.
_POINT_LEVELS: dict[str, float] = {
    "IP": LEVEL_IP,
    "ADP": LEVEL_ADP,
    "MAP": LEVEL_MAP,
    "MDP": LEVEL_MDP,
}

INVALID_WARN_FRACTION = 0.01
AGE_EXTRAPOLATION_SDS = 3.0


@dataclass(frozen=True)
class SummaryRow:
    name: str
    mean: float
    sd: float
    ci_lower: float
    ci_upper: float


@dataclass
class SummaryTable:
    """Posterior mean, sd and central 95% interval per population parameter."""

    rows: list[SummaryRow]

    def row(self, name: str) -> SummaryRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise GrowthMcError(f"no summary row for {name!r}")

    def format_table(self) -> str:
        lines = [f"{'parameter':<10} {'mean':>10} {'sd':>10} {'2.5%':>10} {'97.5%':>10}"]
        for r in self.rows:
            lines.append(
                f"{r.name:<10} {r.mean:>10.4f} {r.sd:>10.4f} "
                f"{r.ci_lower:>10.4f} {r.ci_upper:>10.4f}"
            )
        return "\n".join(lines)

    def to_csv(self) -> str:
        out = ["parameter,mean,sd,ci_lower,ci_upper"]
        for r in self.rows:
            out.append(
                f"{r.name},{r.mean:.8g},{r.sd:.8g},{r.ci_lower:.8g},{r.ci_upper:.8g}"
            )
        return "\n".join(out) + "\n"


def summarize(draws: "Draws") -> SummaryTable:
    """Empirical posterior summaries over chains pooled post burn-in."""
    theta = draws.pooled_theta()
    if theta.shape[0] == 0:
        raise GrowthMcError("no stored draws to summarize")
    rows = []
    for k, name in enumerate(THETA_NAMES):
        col = theta[:, k]
        lo, hi = np.quantile(col, [0.025, 0.975])
        rows.append(
            SummaryRow(
                name=name,
                mean=float(col.mean()),
                sd=float(col.std(ddof=1)) if col.size > 1 else 0.0,
                ci_lower=float(lo),
                ci_upper=float(hi),
            )
        )
    return SummaryTable(rows=rows)


def _curve_params_for_patient(
    draws: "Draws", patient_index: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    theta = draws.pooled_theta()
    u = draws.pooled_u()
    iw = Gender(draws.patient_gender[patient_index]).indicator_woman
    age_z = standardize_age(
        draws.patient_age[patient_index], draws.standardization
    )
    a = theta[:, _IDX["beta0_a"]] + u[:, patient_index, 0]
    a = a + theta[:, _IDX["betaW_a"]] * iw + theta[:, _IDX["betaA_a"]] * age_z
    b = theta[:, _IDX["beta0_b"]] + u[:, patient_index, 1]
    b = b + theta[:, _IDX["betaW_b"]] * iw + theta[:, _IDX["betaA_b"]] * age_z
    c = theta[:, _IDX["beta0_c"]] + theta[:, _IDX["betaW_c"]] * iw
    return a, b, c


def _point_pushforward(
    a: np.ndarray, b: np.ndarray, c: np.ndarray, which: str, std
) -> tuple[np.ndarray, int]:
    """Map curve-parameter draws to (pressure mmHg, volume) samples."""
    level = _POINT_LEVELS[which]
    eta = math.log(level / (1.0 - level))
    valid = (a > 0.0) & (c > 0.0)
    n_invalid = int((~valid).sum())
    pressure = destandardize_pressure((eta - b[valid]) / c[valid], std)
    volume = a[valid] * level
    return np.column_stack([pressure, volume]), n_invalid


def _warn_invalid(context: str, n_invalid: int, n_total: int) -> None:
    if n_invalid == 0:
        return
    frac = n_invalid / n_total
    msg = (
        f"{context}: {n_invalid}/{n_total} draws had non-positive asymptote "
        f"or slope and were excluded"
    )
    if frac >= INVALID_WARN_FRACTION:
        warnings.warn(msg + f" ({frac:.1%}, above the {INVALID_WARN_FRACTION:.0%} "
                      "reporting threshold)", RuntimeWarning, stacklevel=3)


@dataclass
class CriticalPointSamples:
    which: str
    samples: np.ndarray  # (S_valid, 2): pressure mmHg, volume L
    n_invalid: int
    n_total: int
    patient_id: str | None = None

    @property
    def pressures(self) -> np.ndarray:
        return self.samples[:, 0]

    @property
    def volumes(self) -> np.ndarray:
        return self.samples[:, 1]


def individual_critical_posterior(
    draws: "Draws", patient_id: str, which: str
) -> CriticalPointSamples:
    """Posterior samples of one patient's critical point, in raw mmHg.

    Pushes every stored (theta, u_i) draw through that patient's curve
    parameters and the oracle-validated point formulas.
    """
    if which not in _POINT_LEVELS:
        raise GrowthMcError(f"unknown critical point {which!r}, expected "
                            f"{sorted(_POINT_LEVELS)}")
    i = draws.patient_index(patient_id)
    a, b, c = _curve_params_for_patient(draws, i)
    samples, n_invalid = _point_pushforward(
        a, b, c, which, draws.standardization
    )
    _warn_invalid(f"{which} posterior for patient {patient_id}", n_invalid, a.size)
    return CriticalPointSamples(
        which=which,
        samples=samples,
        n_invalid=n_invalid,
        n_total=int(a.size),
        patient_id=patient_id,
    )


def _new_individual_params(
    draws: "Draws",
    gender: Gender | str,
    age_years: float,
    rng: np.random.Generator,
    reps: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Curve parameters for a new individual: each theta draw replicated
    ``reps`` times with fresh random effects. Returns (a, b, c, sigma)."""
    if reps < 1:
        raise GrowthMcError("reps must be >= 1")
    gender = Gender(gender)
    std = draws.standardization
    age_z = standardize_age(age_years, std)
    if abs(age_z) > AGE_EXTRAPOLATION_SDS:
        warnings.warn(
            f"age {age_years} is {abs(age_z):.1f} sd from the training mean; "
            "prediction extrapolates beyond the fitted ages",
            RuntimeWarning,
            stacklevel=3,
        )
    theta = np.repeat(draws.pooled_theta(), reps, axis=0)
    iw = gender.indicator_woman
    u_a = rng.normal(0.0, theta[:, _IDX["sigma_a"]])
    u_b = rng.normal(0.0, theta[:, _IDX["sigma_b"]])
    a = theta[:, _IDX["beta0_a"]] + u_a + theta[:, _IDX["betaW_a"]] * iw
    a = a + theta[:, _IDX["betaA_a"]] * age_z
    b = theta[:, _IDX["beta0_b"]] + u_b + theta[:, _IDX["betaW_b"]] * iw
    b = b + theta[:, _IDX["betaA_b"]] * age_z
    c = theta[:, _IDX["beta0_c"]] + theta[:, _IDX["betaW_c"]] * iw
    return a, b, c, theta[:, _IDX["sigma"]]


@dataclass
class PredictiveBand:
    """Pointwise posterior predictive mean and central 95% interval."""

    pressure_mmhg: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def to_csv(self) -> str:
        out = ["pressure,mean,lo,hi"]
        for p, m, lo, hi in zip(self.pressure_mmhg, self.mean, self.lower, self.upper):
            out.append(f"{p:.8g},{m:.8g},{lo:.8g},{hi:.8g}")
        return "\n".join(out) + "\n"


def predict_new(
    draws: "Draws",
    gender: Gender | str,
    age_years: float,
    pressure_grid_mmhg,
    rng: np.random.Generator,
    reps: int = 1,
) -> PredictiveBand:
    """Posterior predictive volume band for a new individual.

    For each stored theta draw (times ``reps``), samples fresh random
    effects and observation noise on every grid point, then summarizes
    the predictive sample pointwise.
    """
    grid = np.asarray(pressure_grid_mmhg, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0.0):
        raise GrowthMcError("pressure grid must be 1-d and strictly increasing")
    a, b, c, sigma = _new_individual_params(draws, gender, age_years, rng, reps)
    x = standardize_pressure(grid, draws.standardization)
    eta = b[:, None] + c[:, None] * x[None, :]
    z = np.exp(-np.abs(eta))
    s = np.where(eta >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))
    y = a[:, None] * s + sigma[:, None] * rng.standard_normal(eta.shape)
    lo, hi = np.quantile(y, [0.025, 0.975], axis=0)
    return PredictiveBand(
        pressure_mmhg=grid,
        mean=y.mean(axis=0),
        lower=lo,
        upper=hi,
    )


@dataclass
class PopulationOutcome:
    """Samples of a marginal-model functional for one covariate profile."""

    functional: str
    samples: np.ndarray  # (K,) for asymptote, (K, 2) for point functionals
    n_invalid: int
    n_total: int
    meta: dict

    def to_csv(self) -> str:
        if self.samples.ndim == 1:
            out = ["asymptote_l"]
            out.extend(f"{v:.8g}" for v in self.samples)
        else:
            out = ["pressure_mmhg,volume_l"]
            out.extend(f"{p:.8g},{v:.8g}" for p, v in self.samples)
        return "\n".join(out) + "\n"


def population_outcome(
    draws: "Draws",
    gender: Gender | str,
    age_years: float,
    functional: str,
    rng: np.random.Generator,
    reps: int = 1,
) -> PopulationOutcome:
    """Monte Carlo integration of a curve functional over the random
    effects, for a covariate profile rather than a sampled patient.

    Each theta draw contributes ``reps`` random-effect draws; the sample
    therefore mixes posterior and population-level variability. The
    recipe (reps per draw) is recorded in ``meta``.
    """
    valid_functionals = {"asymptote", *(_POINT_LEVELS)}
    if functional not in valid_functionals:
        raise GrowthMcError(
            f"unknown functional {functional!r}, expected {sorted(valid_functionals)}"
        )
    a, b, c, _ = _new_individual_params(draws, gender, age_years, rng, reps)
    if functional == "asymptote":
        valid = a > 0.0
        samples = a[valid]
        n_invalid = int((~valid).sum())
    else:
        samples, n_invalid = _point_pushforward(
            a, b, c, functional, draws.standardization
        )
    _warn_invalid(f"population {functional}", n_invalid, a.size)
    return PopulationOutcome(
        functional=functional,
        samples=samples,
        n_invalid=n_invalid,
        n_total=int(a.size),
        meta={
            "gender": Gender(gender).value,
            "age_years": age_years,
            "reps_per_draw": reps,
            "n_theta_draws": draws.pooled_theta().shape[0],
        },
    )


@dataclass(frozen=True)
class DicResult:
    dic: float
    dbar: float
    pd: float


def dic(draws: "Draws", dataset: "Dataset", prior: PriorSpec) -> DicResult:
    """Deviance information criterion with conditional focus on (theta, u).

    Deviance is -2 log-likelihood; Dbar averages it over the stored
    draws and the effective parameter count plugs in the posterior means
    of theta and u. The prior enters only through the fitted draws.
    """
    if dataset.fingerprint() != draws.dataset_fingerprint:
        raise GrowthMcError(
            "dataset does not match the one these draws were fitted on"
        )
    theta = draws.pooled_theta()
    u = draws.pooled_u()
    if theta.shape[0] == 0:
        raise GrowthMcError("no stored draws")
    ids = draws.patient_ids

    def deviance(theta_row: np.ndarray, u_rows: np.ndarray) -> float:
        fx = FixedEffects.from_array(theta_row)
        u_map: Mapping[str, tuple[float, float]] = {
            pid: (float(u_rows[i, 0]), float(u_rows[i, 1]))
            for i, pid in enumerate(ids)
        }
        return -2.0 * log_likelihood(fx, u_map, dataset)

    devs = np.array([deviance(theta[s], u[s]) for s in range(theta.shape[0])])
    dbar = float(devs.mean())
    d_at_means = deviance(theta.mean(axis=0), u.mean(axis=0))
    if not (math.isfinite(dbar) and math.isfinite(d_at_means)):
        raise GrowthMcError(
            f"non-finite deviance (dbar={dbar}, at posterior means={d_at_means}); "
            "the posterior mean state may be invalid"
        )
    pd = dbar - d_at_means
    return DicResult(dic=dbar + pd, dbar=dbar, pd=pd)
