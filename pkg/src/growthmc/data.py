"""Ingest, validate, standardize and synthesize pressure-volume datasets.

The on-disk format is a CSV with header ``patient_id,gender,age,iap_mmhg,iav_l``
(gender tokens ``M``/``W``, decimal point ``.``, UTF-8, LF or CRLF). Rows are
grouped by patient id in order of first appearance; observations keep row
order. A patient with any missing or unparseable age, pressure or volume is
dropped entirely rather than imputed.

Pressures and ages are standardized to z-scores fitted from the sample itself:
pressure mean/sd are pooled over all observations, age mean/sd are taken over
patients (one age each). The constants live on the Dataset and travel with
every fit so downstream results can be reported in raw mmHg. Cross-dataset
prediction therefore needs the constants from the fitted (training) dataset,
not freshly fitted ones.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import (
    DataFormatError,
    DegenerateStandardizationError,
    EmptyDatasetError,
    GrowthMcError,
)

if TYPE_CHECKING:
    from .model import FixedEffects

CSV_HEADER = ("patient_id", "gender", "age", "iap_mmhg", "iav_l")

# Hard physical plausibility limits; values outside mark the record invalid.
PRESSURE_RANGE_MMHG = (0.0, 50.0)
AGE_RANGE_YEARS = (0.0, 120.0)


class Gender(str, Enum):
    MAN = "M"
    WOMAN = "W"

    @property
    def indicator_woman(self) -> float:
        """Covariate coding: men are the reference group."""
        return 1.0 if self is Gender.WOMAN else 0.0


@dataclass(frozen=True)
class Observation:
    """One (pressure, volume) measurement: pressure in raw mmHg, volume in L."""

    pressure_mmhg: float
    volume_l: float


@dataclass(frozen=True)
class Patient:
    id: str
    gender: Gender
    age_years: float
    observations: tuple[Observation, ...]

    @property
    def n_observations(self) -> int:
        return len(self.observations)


@dataclass(frozen=True)
class Standardization:
    """Z-score constants for pressure (pooled) and age (per patient).

    Standard deviations use the n-1 denominator and must be strictly
    positive. ``destandardize(standardize(v))`` round-trips to machine
    precision.
    """

    pressure_mean: float
    pressure_sd: float
    age_mean: float
    age_sd: float

    def __post_init__(self) -> None:
        if not (self.pressure_sd > 0.0 and self.age_sd > 0.0):
            raise DegenerateStandardizationError(
                "standard deviations must be strictly positive, got "
                f"pressure_sd={self.pressure_sd!r}, age_sd={self.age_sd!r}"
            )

    @classmethod
    def identity(cls) -> Standardization:
        return cls(pressure_mean=0.0, pressure_sd=1.0, age_mean=0.0, age_sd=1.0)

    def to_dict(self) -> dict[str, float]:
        return {
            "pressure_mean": self.pressure_mean,
            "pressure_sd": self.pressure_sd,
            "age_mean": self.age_mean,
            "age_sd": self.age_sd,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Standardization:
        return cls(**{k: float(d[k]) for k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class Dataset:
    patients: tuple[Patient, ...]
    standardization: Standardization

    @property
    def n_patients(self) -> int:
        return len(self.patients)

    @property
    def n_observations(self) -> int:
        return sum(p.n_observations for p in self.patients)

    def patient_by_id(self, patient_id: str) -> Patient:
        for p in self.patients:
            if p.id == patient_id:
                return p
        raise GrowthMcError(f"unknown patient id {patient_id!r}")

    def fingerprint(self) -> str:
        """Content hash tying fits to the exact data they were run on."""
        h = hashlib.sha256()
        for p in self.patients:
            h.update(f"{p.id}|{p.gender.value}|{p.age_years:.17g}\n".encode())
            for o in p.observations:
                h.update(f"{o.pressure_mmhg:.17g},{o.volume_l:.17g}\n".encode())
        return h.hexdigest()


def standardize_pressure(p, s: Standardization):
    return (p - s.pressure_mean) / s.pressure_sd


def destandardize_pressure(z, s: Standardization):
    return s.pressure_mean + z * s.pressure_sd


def standardize_age(a, s: Standardization):
    return (a - s.age_mean) / s.age_sd


def destandardize_age(z, s: Standardization):
    return s.age_mean + z * s.age_sd


def standardize_fit(dataset: Dataset | Sequence[Patient]) -> Standardization:
    """Fit z-score constants from a dataset (or a patient list).

    Pressure constants pool all observations; age constants use one age
    per patient so that patients with many visits do not dominate. Zero
    variance in either raises DegenerateStandardizationError.
    """
    patients = dataset.patients if isinstance(dataset, Dataset) else tuple(dataset)
    if not patients:
        raise EmptyDatasetError("cannot standardize an empty dataset")
    pressures = np.array(
        [o.pressure_mmhg for p in patients for o in p.observations], dtype=float
    )
    ages = np.array([p.age_years for p in patients], dtype=float)
    if pressures.size < 2 or ages.size < 2:
        raise DegenerateStandardizationError(
            "need at least two observations and two patients to standardize"
        )
    p_sd = float(np.std(pressures, ddof=1))
    a_sd = float(np.std(ages, ddof=1))
    if p_sd <= 0.0 or a_sd <= 0.0:
        raise DegenerateStandardizationError(
            f"zero variance (pressure sd {p_sd}, age sd {a_sd})"
        )
    return Standardization(
        pressure_mean=float(np.mean(pressures)),
        pressure_sd=p_sd,
        age_mean=float(np.mean(ages)),
        age_sd=a_sd,
    )


def _parse_float(token: str) -> float | None:
    """Parse a numeric field; None signals a missing/invalid value."""
    token = token.strip()
    if not token:
        return None
    try:
        value = float(token)
    except ValueError:
        return None
    if not math.isfinite(value):
        return None
    return value


def load_csv(path: str | os.PathLike) -> Dataset:
    """Load a pressure-volume CSV into a validated Dataset.

    Grouping preserves input order. The exclusion rule is all-or-nothing:
    a single missing/unparseable/out-of-range age, pressure or volume
    drops the whole patient. A gender token outside {M, W} or a patient
    whose gender/age changes between rows is a fatal format error.
    """
    with open(path, "r", encoding="utf-8-sig", newline="") as fh:
        return _parse_csv(fh, str(path))


def _parse_csv(fh, source: str) -> Dataset:
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        raise DataFormatError(f"{source}: empty file, expected header row") from None
    if tuple(t.strip() for t in header) != CSV_HEADER:
        raise DataFormatError(
            f"{source}: malformed header {header!r}, expected {','.join(CSV_HEADER)}"
        )

    order: list[str] = []
    gender: dict[str, Gender] = {}
    age: dict[str, float] = {}
    rows: dict[str, list[Observation]] = {}
    invalid: set[str] = set()

    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != len(CSV_HEADER):
            raise DataFormatError(
                f"{source}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}"
            )
        pid = row[0].strip()
        if not pid:
            raise DataFormatError(f"{source}:{lineno}: empty patient_id")
        gender_tok = row[1].strip()
        try:
            g = Gender(gender_tok)
        except ValueError:
            raise DataFormatError(
                f"{source}:{lineno}: gender token {gender_tok!r} not in {{M,W}}"
            ) from None

        if pid not in order:
            order.append(pid)
            gender[pid] = g
            rows[pid] = []
        elif gender[pid] is not g:
            raise DataFormatError(
                f"{source}:{lineno}: patient {pid!r} changes gender token"
            )

        a = _parse_float(row[2])
        p = _parse_float(row[3])
        v = _parse_float(row[4])
        if a is not None and not (AGE_RANGE_YEARS[0] < a <= AGE_RANGE_YEARS[1]):
            a = None
        if p is not None and not (
            PRESSURE_RANGE_MMHG[0] <= p <= PRESSURE_RANGE_MMHG[1]
        ):
            p = None
        if a is None or p is None or v is None:
            invalid.add(pid)
            continue
        if pid in age and age[pid] != a:
            raise DataFormatError(
                f"{source}:{lineno}: patient {pid!r} changes age between rows"
            )
        age[pid] = a
        rows[pid].append(Observation(pressure_mmhg=p, volume_l=v))

    patients = tuple(
        Patient(
            id=pid,
            gender=gender[pid],
            age_years=age[pid],
            observations=tuple(rows[pid]),
        )
        for pid in order
        if pid not in invalid and rows[pid]
    )
    if not patients:
        raise EmptyDatasetError(f"{source}: no valid patients after exclusion")
    return Dataset(patients=patients, standardization=standardize_fit(patients))


def write_csv(dataset: Dataset, path: str | os.PathLike) -> None:
    """Write a Dataset in the canonical CSV schema (full float precision)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for p in dataset.patients:
            for o in p.observations:
                fh.write(
                    f"{p.id},{p.gender.value},{p.age_years:.17g},"
                    f"{o.pressure_mmhg:.17g},{o.volume_l:.17g}\n"
                )


def dumps_csv(dataset: Dataset) -> str:
    buf = io.StringIO()
    buf.write(",".join(CSV_HEADER) + "\n")
    for p in dataset.patients:
        for o in p.observations:
            buf.write(
                f"{p.id},{p.gender.value},{p.age_years:.17g},"
                f"{o.pressure_mmhg:.17g},{o.volume_l:.17g}\n"
            )
    return buf.getvalue()


@dataclass(frozen=True)
class SimDesign:
    """Design of a synthetic repeated-measures dataset.

    ``obs_per_patient`` is either a fixed count or an inclusive
    (min, max) range sampled uniformly per patient; grids are evenly
    spaced over ``pressure_range``. Ages are normal draws clipped to
    ``age_clip``.
    """

    n_patients: int
    women_fraction: float = 0.4
    age_mean: float = 64.65
    age_sd: float = 10.0
    age_clip: tuple[float, float] = (23.0, 92.0)
    pressure_range: tuple[float, float] = (8.0, 15.0)
    obs_per_patient: int | tuple[int, int] = 20

    def __post_init__(self) -> None:
        if self.n_patients < 1:
            raise GrowthMcError("SimDesign needs n_patients >= 1")
        if not 0.0 <= self.women_fraction <= 1.0:
            raise GrowthMcError("women_fraction must be in [0, 1]")
        j = self.obs_per_patient
        if isinstance(j, tuple):
            if not (1 <= j[0] <= j[1]):
                raise GrowthMcError("obs_per_patient range must satisfy 1 <= lo <= hi")
        elif j < 1:
            raise GrowthMcError("obs_per_patient must be >= 1")


@dataclass(frozen=True)
class SimTruth:
    """Generating parameter values kept alongside a synthetic dataset."""

    theta: "FixedEffects"
    u: dict[str, tuple[float, float]]

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.to_dict(),
            "u": {pid: [ua, ub] for pid, (ua, ub) in self.u.items()},
        }


_MAX_ASYMPTOTE_RESAMPLES = 100


def simulate_dataset(
    theta_true: "FixedEffects", design: SimDesign, seed: int
) -> tuple[Dataset, SimTruth]:
    """Generate a synthetic dataset from known parameter values.

    Random effects are drawn per patient, volumes get observation noise
    with sd ``theta_true.sigma``. Standardization constants are fitted
    from the generated covariates before volumes are produced, exactly
    as they would be on ingest. Patients whose asymptote draw comes out
    non-positive are resampled (up to 100 times, then fatal): the curve
    requires a positive asymptote.

    Returns the dataset together with the generating truth for recovery
    tests. Reproducible: the same seed gives bitwise-identical output.
    """
    from .growth_math import logistic_mean
    from .model import predictors

    rng = np.random.default_rng(seed)
    n = design.n_patients
    width = len(str(n))
    ids = [f"P{i + 1:0{width}d}" for i in range(n)]
    genders = [
        Gender.WOMAN if rng.random() < design.women_fraction else Gender.MAN
        for _ in range(n)
    ]
    ages = np.clip(
        rng.normal(design.age_mean, design.age_sd, size=n), *design.age_clip
    )

    j = design.obs_per_patient
    if isinstance(j, tuple):
        counts = rng.integers(j[0], j[1] + 1, size=n)
    else:
        counts = np.full(n, j, dtype=int)
    lo, hi = design.pressure_range
    grids = [
        np.linspace(lo, hi, int(counts[i])) if counts[i] > 1 else np.array([lo])
        for i in range(n)
    ]

    skeleton = [
        Patient(
            id=ids[i],
            gender=genders[i],
            age_years=float(ages[i]),
            observations=tuple(
                Observation(pressure_mmhg=float(p), volume_l=1.0) for p in grids[i]
            ),
        )
        for i in range(n)
    ]
    std = standardize_fit(skeleton)

    patients = []
    u_truth: dict[str, tuple[float, float]] = {}
    for i in range(n):
        age_z = standardize_age(float(ages[i]), std)
        for attempt in range(_MAX_ASYMPTOTE_RESAMPLES + 1):
            u_a = float(rng.normal(0.0, theta_true.sigma_a))
            u_b = float(rng.normal(0.0, theta_true.sigma_b))
            params = predictors(theta_true, (u_a, u_b), genders[i], age_z)
            if params.a > 0.0:
                break
        else:
            raise GrowthMcError(
                f"patient {ids[i]}: no positive asymptote in "
                f"{_MAX_ASYMPTOTE_RESAMPLES} resamples; check theta_true"
            )
        x = standardize_pressure(grids[i], std)
        mu = logistic_mean(params, x)
        y = mu + rng.normal(0.0, theta_true.sigma, size=mu.shape)
        patients.append(
            Patient(
                id=ids[i],
                gender=genders[i],
                age_years=float(ages[i]),
                observations=tuple(
                    Observation(pressure_mmhg=float(p), volume_l=float(v))
                    for p, v in zip(grids[i], y)
                ),
            )
        )
        u_truth[ids[i]] = (u_a, u_b)

    dataset = Dataset(patients=tuple(patients), standardization=std)
    return dataset, SimTruth(theta=theta_true, u=u_truth)
