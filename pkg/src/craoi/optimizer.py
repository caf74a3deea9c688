"""Transmit-power choice that maximises energy efficiency under an AoI ceiling.

Maximising D / E_sum over the transmit power is the same as minimising the
per-cycle energy E_sum over the transmission time tP, because power and time
are in strictly decreasing one-to-one correspondence.  Average AoI is
strictly increasing in tP, so the ceiling turns into an upper bound
``t_max``, and the power budget gives the lower bound ``t_min``.  E_sum
falls and then rises in tP, and it is strictly increasing beyond
``sqrt(D ln2 / (B u))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import analytic
from .params import ChannelActivity, ParameterError, RadioConfig, SdTraffic, power_to_time, time_to_power

AOI_RTOL = 1e-9
TIME_RTOL = 1e-10
MAX_BISECTION = 200
_MAX_DOUBLING = 2000


@dataclass(frozen=True)
class AoiConstraint:
    delta_max: float

    def __post_init__(self) -> None:
        if not (self.delta_max > 0):
            raise ParameterError(f"delta_max must be positive, got {self.delta_max!r}")


@dataclass(frozen=True)
class TpoaResult:
    feasible: bool
    tP_star: float | None
    Pt_star: float | None
    ee_star: float | None
    aoi_at_star: float | None
    t_min: float
    t_max: float | None
    search_steps: int
    minimize_steps: int

    @property
    def iterations(self) -> int:
        return self.search_steps + self.minimize_steps


@dataclass(frozen=True)
class BoundarySearch:
    t_max: float
    doublings: int
    bisections: int
    residual: float  # |avg_aoi(t_max) - delta_max| / delta_max


def t_min(cfg: RadioConfig, traffic: SdTraffic) -> float:
    """Shortest transmission time the power budget allows."""
    return power_to_time(cfg.Pmax, cfg, traffic)


def search_t_max(
    chan: ChannelActivity,
    traffic: SdTraffic,
    constraint: AoiConstraint,
    t_lo: float,
    cfg: RadioConfig | None = None,
) -> BoundarySearch:
    """Locate tP where the average AoI reaches ``delta_max``.

    Doubles a trial point until the AoI exceeds the ceiling, then bisects.
    The first trial point is ``2 t_lo``, raised to ``sqrt(D ln2/(B u))`` when
    ``cfg`` is supplied.
    """
    dmax = constraint.delta_max
    if math.isinf(dmax):
        return BoundarySearch(math.inf, 0, 0, 0.0)

    def aoi(t):
        return analytic.avg_aoi(chan, traffic, t)

    if aoi(t_lo) > dmax * (1 + AOI_RTOL):
        raise ParameterError("avg AoI at the lower end already exceeds delta_max")
    hi = 2.0 * t_lo
    if cfg is not None:
        hi = max(hi, analytic.energy_stationary_point(chan, traffic, cfg))
    lo = t_lo
    doublings = 0
    while aoi(hi) <= dmax:
        lo = hi
        hi *= 2.0
        doublings += 1
        if doublings > _MAX_DOUBLING:
            raise RuntimeError("could not bracket the AoI ceiling")

    # invariant: aoi(lo) <= dmax < aoi(hi); lo is returned, so t_max stays feasible
    steps = 0
    res = (dmax - aoi(lo)) / dmax
    while res > AOI_RTOL and steps < MAX_BISECTION:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        steps += 1
        a = aoi(mid)
        if a <= dmax:
            lo, res = mid, (dmax - a) / dmax
        else:
            hi = mid
    return BoundarySearch(lo, doublings, steps, res)


def find_t_max(
    chan: ChannelActivity,
    traffic: SdTraffic,
    constraint: AoiConstraint,
    t_lo: float,
    cfg: RadioConfig | None = None,
) -> float:
    return search_t_max(chan, traffic, constraint, t_lo, cfg).t_max


def _minimize(chan, traffic, cfg, lo, hi) -> tuple[float, int]:
    """Bisect on the sign of dE_sum/dtP; E_sum is unimodal on [lo, hi]."""

    def slope(t):
        return analytic.esum_derivative(chan, traffic, cfg, t)

    if slope(lo) >= 0:
        return lo, 0
    if slope(hi) <= 0:
        return hi, 0
    tol = TIME_RTOL * hi
    steps = 0
    while hi - lo > tol and steps < MAX_BISECTION:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        steps += 1
        if slope(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi), steps


def _minimize_esum(chan, traffic, cfg, interval) -> tuple[float, int]:
    a, b = interval
    if not (0 < a <= b):
        raise ParameterError("need 0 < t_min <= t_max")
    knee = analytic.energy_stationary_point(chan, traffic, cfg)
    if a >= knee:
        return a, 0
    right = min(knee, b)
    t_star, steps = _minimize(chan, traffic, cfg, a, right)
    # the interior candidate must beat both ends of the feasible interval
    candidates = [t_star, a, right]
    if math.isfinite(b):
        candidates.append(b)
    energy = [analytic.energy_sum(chan, traffic, t, cfg) for t in candidates]
    best = min(range(len(candidates)), key=lambda i: (energy[i], i))
    return candidates[best], steps


def minimize_esum(chan: ChannelActivity, traffic: SdTraffic, cfg: RadioConfig, interval) -> float:
    """Global minimiser of E_sum over ``interval = (t_lo, t_hi)``."""
    return _minimize_esum(chan, traffic, cfg, interval)[0]


def tpoa(chan: ChannelActivity, traffic: SdTraffic, cfg: RadioConfig, constraint: AoiConstraint) -> TpoaResult:
    """Energy-efficiency-optimal operating point subject to the AoI ceiling."""
    lo = t_min(cfg, traffic)
    if analytic.avg_aoi(chan, traffic, lo) > constraint.delta_max:
        return TpoaResult(False, None, None, None, None, lo, None, 0, 0)
    search = search_t_max(chan, traffic, constraint, lo, cfg)
    hi = max(search.t_max, lo)
    t_star, steps = _minimize_esum(chan, traffic, cfg, (lo, hi))
    Pt_star = cfg.Pmax if t_star == lo else time_to_power(t_star, cfg, traffic)
    m = analytic.energy_metrics(chan, traffic, t_star, cfg)
    return TpoaResult(
        feasible=True,
        tP_star=t_star,
        Pt_star=Pt_star,
        ee_star=m.ee,
        aoi_at_star=m.avg_aoi,
        t_min=lo,
        t_max=search.t_max,
        search_steps=search.doublings + search.bisections,
        minimize_steps=steps,
    )
