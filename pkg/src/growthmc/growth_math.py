"""Deterministic geometry of the increasing logistic growth curve.

The curve is ``v(x) = a / (1 + exp(-(b + c*x)))`` with asymptote ``a``,
intercept ``b`` and slope ``c`` on the standardized pressure axis. This
module evaluates the curve and its derivatives and locates the named
critical points:

* IP  -- inflection point, where the curvature changes sign.
* MAP -- point of maximum acceleration (first extremum of the second
  derivative).
* MDP -- point of maximum deceleration (second extremum of the second
  derivative).
* ADP -- asymptotic deceleration point, beyond which further gains in
  volume are negligible (outer extremum of the third derivative).

Each critical point is characterised by the value the sigmoid attains
there, independent of (a, b, c):

* IP  at sigmoid level 1/2,
* MAP at (3 - sqrt(3))/6, MDP at (3 + sqrt(3))/6  (roots of the third
  derivative),
* ADP at (3 + sqrt(6))/6  (outer root of the fourth derivative).

Pressures are recovered through the sigmoid's inverse: if ``s`` is the
level, the point sits at ``x = (logit(s) - b) / c``. These level-based
formulas are the implementation of record; the test suite cross-checks
them against numeric root-finding on the analytic derivatives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Standardization, destandardize_pressure
from .errors import InvalidParamsError

# Sigmoid levels of the named critical points (see module docstring).
LEVEL_IP = 0.5
LEVEL_MAP = (3.0 - math.sqrt(3.0)) / 6.0
LEVEL_MDP = (3.0 + math.sqrt(3.0)) / 6.0
LEVEL_ADP = (3.0 + math.sqrt(6.0)) / 6.0

_ETA_IP = 0.0
_ETA_MAP = math.log(LEVEL_MAP / (1.0 - LEVEL_MAP))
_ETA_MDP = math.log(LEVEL_MDP / (1.0 - LEVEL_MDP))
_ETA_ADP = math.log(LEVEL_ADP / (1.0 - LEVEL_ADP))


@dataclass(frozen=True)
class GrowthParams:
    """Parameters of one logistic growth curve.

    ``a`` is the asymptotic volume in litres, ``b`` the dimensionless
    intercept and ``c`` the slope per standardized pressure unit.
    """

    a: float
    b: float
    c: float


@dataclass(frozen=True)
class CriticalPoint:
    pressure: float
    volume: float


@dataclass(frozen=True)
class CriticalPoints:
    """The four named points plus the asymptote of one curve.

    For an increasing curve (c > 0) the pressures are ordered
    ``map < ip < mdp < adp`` and the volumes increase in the same order,
    all below ``asymptote``.
    """

    ip: CriticalPoint
    adp: CriticalPoint
    map: CriticalPoint
    mdp: CriticalPoint
    asymptote: float


def stable_sigmoid(eta):
    """1 / (1 + exp(-eta)) without overflow for any finite eta."""
    eta = np.asarray(eta, dtype=float)
    z = np.exp(-np.abs(eta))
    out = np.where(eta >= 0.0, 1.0 / (1.0 + z), z / (1.0 + z))
    return out if out.ndim else float(out)


def logistic_mean(p: GrowthParams, x):
    """Curve volume at standardized pressure ``x`` (scalar or array).

    Saturates cleanly to 0 or ``a`` for extreme arguments; never NaN for
    finite inputs.
    """
    return p.a * stable_sigmoid(p.b + p.c * np.asarray(x, dtype=float))


def derivatives(p: GrowthParams, x):
    """First, second and third derivative of the curve with respect to x."""
    s = stable_sigmoid(p.b + p.c * np.asarray(x, dtype=float))
    w = s * (1.0 - s)
    d1 = p.a * p.c * w
    d2 = p.a * p.c**2 * w * (1.0 - 2.0 * s)
    d3 = p.a * p.c**3 * w * (6.0 * s * s - 6.0 * s + 1.0)
    return d1, d2, d3


def critical_points(p: GrowthParams) -> CriticalPoints:
    """Critical points on the standardized pressure scale.

    Requires a > 0 and c > 0 (an increasing curve with positive
    asymptote); anything else raises InvalidParamsError.
    """
    if not (p.a > 0.0 and p.c > 0.0):
        raise InvalidParamsError(
            f"critical points need a > 0 and c > 0, got a={p.a!r}, c={p.c!r}"
        )

    def point(eta: float, level: float) -> CriticalPoint:
        return CriticalPoint(pressure=(eta - p.b) / p.c, volume=p.a * level)

    return CriticalPoints(
        ip=point(_ETA_IP, LEVEL_IP),
        adp=point(_ETA_ADP, LEVEL_ADP),
        map=point(_ETA_MAP, LEVEL_MAP),
        mdp=point(_ETA_MDP, LEVEL_MDP),
        asymptote=p.a,
    )


def critical_points_mmhg(p: GrowthParams, s: Standardization) -> CriticalPoints:
    """Critical points with pressures back-transformed to raw mmHg."""
    cp = critical_points(p)

    def raw(point: CriticalPoint) -> CriticalPoint:
        return CriticalPoint(
            pressure=destandardize_pressure(point.pressure, s), volume=point.volume
        )

    return CriticalPoints(
        ip=raw(cp.ip),
        adp=raw(cp.adp),
        map=raw(cp.map),
        mdp=raw(cp.mdp),
        asymptote=cp.asymptote,
    )
