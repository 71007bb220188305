"""Convergence and mixing assessment for stored draws.

Effective sample size uses the multi-chain combined autocorrelation with
Geyer's initial monotone positive sequence truncation (plain version, no
rank normalization). The potential scale reduction factor is the split
variant: each chain is halved before comparing between- and within-half
variance. Both are invariant under affine transformation of the series.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import GrowthMcError, ZeroVarianceError
from .model import THETA_NAMES

if TYPE_CHECKING:
    from .sampler import Draws

DEFAULT_ESS_THRESHOLD = 100.0
DEFAULT_RHAT_THRESHOLD = 1.05
ACF_REPORT_LAGS = 50

_MIN_DRAWS = 10


@dataclass(frozen=True)
class ParamSeries:
    """Post-burn-in, post-thin draw sequences of one parameter, per chain."""

    name: str
    chains: tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        lengths = {c.size for c in self.chains}
        if len(lengths) != 1:
            raise GrowthMcError(f"{self.name}: unequal chain lengths {sorted(lengths)}")
        if min(lengths) < _MIN_DRAWS:
            raise GrowthMcError(
                f"{self.name}: need >= {_MIN_DRAWS} draws per chain for diagnostics"
            )


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """Autocorrelation function up to ``max_lag``.

    Biased estimator (autocovariances normalized by n and by the lag-0
    autocovariance), so rho[0] == 1 exactly. Raises ZeroVarianceError on
    a constant series.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1:
        raise GrowthMcError("autocorrelation expects a 1-d series")
    n = x.size
    if max_lag < 0 or max_lag >= n:
        raise GrowthMcError(f"need 0 <= max_lag < len(series), got {max_lag} vs {n}")
    d = x - x.mean()
    c0 = float(d @ d)
    if c0 <= 0.0:
        raise ZeroVarianceError("constant series has no autocorrelation")
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[: max_lag + 1]
    rho = acov / c0
    rho[0] = 1.0  # exact by definition; the FFT round-trip is 1 ulp off
    return rho


def _as_chain_matrix(chains) -> np.ndarray:
    if isinstance(chains, np.ndarray) and chains.ndim == 2:
        mat = np.asarray(chains, dtype=float)
    else:
        seqs = [np.asarray(c, dtype=float) for c in chains]
        if not seqs:
            raise GrowthMcError("need at least one chain")
        if len({s.size for s in seqs}) != 1:
            raise GrowthMcError("chains must have equal lengths")
        mat = np.stack(seqs)
    if mat.shape[1] < 4:
        raise GrowthMcError("need at least 4 draws per chain")
    return mat


def effective_sample_size(chains: Sequence[np.ndarray] | np.ndarray) -> float:
    """Multi-chain effective sample size.

    Combines within-chain autocorrelations with the between-chain variance
    and truncates the summed correlations with the initial monotone
    positive sequence rule.
    """
    mat = _as_chain_matrix(chains)
    m, n = mat.shape
    chain_vars = mat.var(axis=1, ddof=1)
    w = float(chain_vars.mean())
    if w <= 0.0:
        raise ZeroVarianceError("all chains constant; ESS undefined")
    b_over_n = float(mat.mean(axis=1).var(ddof=1)) if m > 1 else 0.0
    var_plus = (n - 1) / n * w + b_over_n

    acfs = np.stack([autocorrelation(mat[j], n - 1) for j in range(m)])
    mean_rho = (chain_vars[:, None] * acfs).mean(axis=0)
    rho = 1.0 - (w - mean_rho) / var_plus
    rho[0] = 1.0

    tau = 0.0
    prev = math.inf
    for k in range(n // 2):
        gamma = rho[2 * k] + rho[2 * k + 1]
        if gamma <= 0.0:
            break
        gamma = min(gamma, prev)
        tau += gamma
        prev = gamma
    tau = max(2.0 * tau - 1.0, 1e-6)
    return m * n / tau


def gelman_rubin(chains: Sequence[np.ndarray] | np.ndarray) -> float:
    """Split potential scale reduction factor.

    Each chain is halved (middle element dropped when odd), then the
    standard between/within variance ratio is computed over the halves.
    A single chain is compared against itself via its two halves.
    """
    mat = _as_chain_matrix(chains)
    half = mat.shape[1] // 2
    if half < 2:
        raise GrowthMcError("need at least 4 draws per chain for split R-hat")
    halves = np.concatenate([mat[:, :half], mat[:, -half:]], axis=0)
    w = float(halves.var(axis=1, ddof=1).mean())
    if w <= 0.0:
        raise ZeroVarianceError("zero within-chain variance; R-hat undefined")
    b_over_n = float(halves.mean(axis=1).var(ddof=1))
    var_plus = (half - 1) / half * w + b_over_n
    return math.sqrt(var_plus / w)


@dataclass
class ParamDiagnostics:
    name: str
    ess: float
    rhat: float
    acf: np.ndarray
    zero_variance: bool = False

    def ok(self, ess_threshold: float, rhat_threshold: float) -> bool:
        return (
            not self.zero_variance
            and self.ess > ess_threshold
            and self.rhat < rhat_threshold
        )


@dataclass
class DiagnosticsReport:
    """Per-parameter ESS / R-hat / autocorrelations plus a global verdict."""

    params: list[ParamDiagnostics]
    ess_threshold: float
    rhat_threshold: float
    passed: bool
    failures: list[str] = field(default_factory=list)

    def param(self, name: str) -> ParamDiagnostics:
        for p in self.params:
            if p.name == name:
                return p
        raise GrowthMcError(f"no diagnostics for parameter {name!r}")

    def to_dict(self) -> dict:
        return {
            "ess_threshold": self.ess_threshold,
            "rhat_threshold": self.rhat_threshold,
            "passed": self.passed,
            "failures": self.failures,
            "params": [
                {
                    "name": p.name,
                    "ess": p.ess,
                    "rhat": p.rhat,
                    "zero_variance": p.zero_variance,
                    "acf": p.acf.tolist(),
                }
                for p in self.params
            ],
        }

    def format_table(self) -> str:
        lines = [f"{'parameter':<16} {'ess':>10} {'rhat':>8}  status"]
        for p in self.params:
            if p.zero_variance:
                status = "ZERO-VARIANCE"
                ess, rhat = "-", "-"
            else:
                status = "ok" if p.ok(self.ess_threshold, self.rhat_threshold) else "FAIL"
                ess, rhat = f"{p.ess:.1f}", f"{p.rhat:.4f}"
            lines.append(f"{p.name:<16} {ess:>10} {rhat:>8}  {status}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _diagnose_series(series: ParamSeries) -> ParamDiagnostics:
    try:
        ess = effective_sample_size(series.chains)
        rhat = gelman_rubin(series.chains)
    except ZeroVarianceError:
        return ParamDiagnostics(
            name=series.name,
            ess=float("nan"),
            rhat=float("nan"),
            acf=np.array([1.0]),
            zero_variance=True,
        )
    n = series.chains[0].size
    lags = min(ACF_REPORT_LAGS, n - 1)
    acf = np.mean([autocorrelation(c, lags) for c in series.chains], axis=0)
    total = sum(c.size for c in series.chains)
    return ParamDiagnostics(name=series.name, ess=min(ess, total), rhat=rhat, acf=acf)


def draws_param_series(draws: "Draws") -> list[ParamSeries]:
    """One ParamSeries per sampled quantity: free theta coordinates first,
    then every random effect. Pinned coordinates are not sampled and are
    skipped."""
    out = []
    for name in THETA_NAMES:
        if draws.is_fixed(name):
            continue
        out.append(ParamSeries(name=name, chains=tuple(draws.theta_series(name))))
    for i, pid in enumerate(draws.patient_ids):
        out.append(
            ParamSeries(name=f"u_a[{pid}]", chains=tuple(draws.u_series(i, 0)))
        )
        out.append(
            ParamSeries(name=f"u_b[{pid}]", chains=tuple(draws.u_series(i, 1)))
        )
    return out


def check_convergence(
    draws: "Draws",
    threshold_ess: float = DEFAULT_ESS_THRESHOLD,
    threshold_rhat: float = DEFAULT_RHAT_THRESHOLD,
) -> DiagnosticsReport:
    """Evaluate every sampled parameter; pass requires all ESS above and
    all R-hat below their thresholds. Degenerate (constant) series are
    reported as structured failures, never exceptions."""
    params = [_diagnose_series(s) for s in draws_param_series(draws)]
    failures = []
    for p in params:
        if p.zero_variance:
            failures.append(f"{p.name}: zero variance")
        else:
            if not p.ess > threshold_ess:
                failures.append(f"{p.name}: ess {p.ess:.1f} <= {threshold_ess:g}")
            if not p.rhat < threshold_rhat:
                failures.append(f"{p.name}: rhat {p.rhat:.4f} >= {threshold_rhat:g}")
    return DiagnosticsReport(
        params=params,
        ess_threshold=threshold_ess,
        rhat_threshold=threshold_rhat,
        passed=not failures,
        failures=failures,
    )
