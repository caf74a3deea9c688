"""Closed-form cycle moments, average AoI, energy efficiency and their slopes.

A *cycle* runs between two successful deliveries: ``Y = W + K`` where ``W``
is the wait for the first fresh update after a delivery and ``K`` runs from
that generation to the next delivery.  ``S`` is the system time of the
delivered update.  Average AoI is ``E[S] + E[Y^2] / (2 E[Y])``.

Every function accepts a scalar or a NumPy array for ``tP`` and returns the
same shape.  Expressions are written around ``expm1(u*tP)`` so that small
``u*tP`` does not cancel, and switch to forms divided through by
``exp(u*tP)`` when the exponent is large.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import (
    LN2,
    ChannelActivity,
    ParameterError,
    RadioConfig,
    SdTraffic,
    effective_noise,
    power_to_time,
    time_to_power,
)

# Beyond this exponent the AoI is reported as +inf and EE as 0.
ASYMPTOTIC_EXPONENT = 700.0
# Above this exponent quadratic terms in exp(u*tP) are evaluated divided through.
_FACTORED_EXPONENT = 300.0


class InfeasiblePower(ParameterError):
    """The requested transmission time needs more than the power budget."""


def _arr(tP) -> np.ndarray:
    a = np.asarray(tP, dtype=float)
    if np.any(~(a > 0)):
        raise ParameterError("tP must be positive")
    return a


def _ret(a: np.ndarray):
    return float(a) if np.ndim(a) == 0 else a


def _expm1_minus_x(x: np.ndarray) -> np.ndarray:
    """exp(x) - 1 - x without cancellation for small x."""
    series = x * x * (0.5 + x * (1 / 6 + x * (1 / 24 + x * (1 / 120 + x / 720))))
    with np.errstate(over="ignore", invalid="ignore"):
        direct = np.expm1(x) - x
    return np.where(x < 1e-3, series, direct)


# ---------------------------------------------------------------------------
# Data carriers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HelperConstants:
    h: float
    g: float
    q: float
    l: float


@dataclass(frozen=True)
class CycleMoments:
    EW: float
    EW2: float
    EK: float
    EK2: float
    EWK: float
    EY: float
    EY2: float
    ES: float

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class ConditionalMoments:
    """Moments split by the channel state at the start of K or at generation.

    ``EW_I``/``EW_B`` are E[W | channel IDLE/BUSY when the first update of a
    cycle appears]; ``PrPhi_*``, ``PrIS``/``PrBS`` and ``ES_I``/``ES_B`` belong
    to the stationary-prior service-time model (see
    :func:`expected_s_stationary_prior`).
    """

    EK_I: float
    EK_B: float
    EK2_I: float
    EK2_B: float
    EW_I: float
    EW_B: float
    PrIK: float
    PrBK: float
    PrPhi_I: float
    PrPhi_B: float
    PrIS: float
    PrBS: float
    ES_I: float
    ES_B: float


@dataclass(frozen=True)
class Metrics:
    avg_aoi: float
    ee: float
    E_T: float
    E_S: float
    E_C: float
    T_T: float
    T_S: float
    T_C: float
    E_sum: float
    Pt: float
    tP: float
    asymptotic: bool = False

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


def helper_constants(chan: ChannelActivity, traffic: SdTraffic) -> HelperConstants:
    u, v, lam = chan.u, chan.v, traffic.lam
    s = u + v + lam
    h = 1.0 / u + 1.0 / v
    g = 1.0 / lam + u / (v * s) - h
    q = 1.0 / (u * v) - (v + lam) / (v * s * s)
    l = v / u + (u + v) / s
    return HelperConstants(h=h, g=g, q=q, l=l)


# ---------------------------------------------------------------------------
# Channel and start-of-K probabilities
# ---------------------------------------------------------------------------


def transition_probs(chan: ChannelActivity, t):
    """(P_II(t), P_IB(t)) for a chain that is IDLE at time 0."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ParameterError("t must be non-negative")
    u, v = chan.u, chan.v
    # P_IB written with expm1 so that tiny t keeps full relative precision
    p_ib = -u / (u + v) * np.expm1(-(u + v) * t_arr)
    return _ret(1.0 - p_ib), _ret(p_ib)


def k_start_probs(chan: ChannelActivity, traffic: SdTraffic) -> tuple[float, float]:
    """Probability that the first update of a cycle finds the channel IDLE / BUSY."""
    u, v, lam = chan.u, chan.v, traffic.lam
    s = u + v + lam
    return (v + lam) / s, u / s


def conditional_w(chan: ChannelActivity, traffic: SdTraffic) -> tuple[float, float]:
    """E[W | IDLE at generation], E[W | BUSY at generation]."""
    u, v, lam = chan.u, chan.v, traffic.lam
    s = u + v + lam
    ew_i = (lam * lam + 2 * lam * v + u * v + v * v) / (lam * (v + lam) * s)
    ew_b = (2 * lam + u + v) / (lam * s)
    return ew_i, ew_b


# ---------------------------------------------------------------------------
# K, Y and transmit time
# ---------------------------------------------------------------------------


def conditional_k(chan: ChannelActivity, tP):
    """(E[K | IDLE start], E[K | BUSY start]).

    From IDLE the SD succeeds once an IDLE period outlasts tP; every
    interruption costs the partial attempt plus a full Exp(v) BUSY period.
    """
    t = _arr(tP)
    u, v = chan.u, chan.v
    h = 1 / u + 1 / v
    with np.errstate(over="ignore"):
        ek_i = h * np.expm1(u * t)
    return _ret(ek_i), _ret(ek_i + 1 / v)


def expected_k(chan: ChannelActivity, traffic: SdTraffic, tP):
    t = _arr(tP)
    u, v, lam = chan.u, chan.v, traffic.lam
    h = 1 / u + 1 / v
    with np.errstate(over="ignore"):
        ek = h * np.expm1(u * t) + u / (v * (u + v + lam))
    return _ret(ek)


def expected_y(chan: ChannelActivity, traffic: SdTraffic, tP):
    return _ret(np.asarray(expected_k(chan, traffic, tP)) + 1 / traffic.lam)


def interruption_stats(chan: ChannelActivity, tP):
    """(p_I, t_I): per-attempt interruption probability and mean partial attempt."""
    t = _arr(tP)
    u = chan.u
    x = u * t
    p_i = -np.expm1(-x)
    with np.errstate(over="ignore", invalid="ignore"):
        t_i = np.where(x > _FACTORED_EXPONENT, 1 / u - t * np.exp(-x), _expm1_minus_x(x) / (u * np.expm1(x)))
    return _ret(p_i), _ret(t_i)


def expected_transmit_time(chan: ChannelActivity, tP):
    """Mean time spent transmitting per cycle, counting aborted attempts."""
    t = _arr(tP)
    with np.errstate(over="ignore"):
        return _ret(np.expm1(chan.u * t) / chan.u)


def conditional_k2(chan: ChannelActivity, tP):
    """(E[K^2 | IDLE start], E[K^2 | BUSY start])."""
    t = _arr(tP)
    u, v = chan.u, chan.v
    h = 1 / u + 1 / v
    x = u * t
    with np.errstate(over="ignore", invalid="ignore"):
        m = np.expm1(x)
        m2 = _expm1_minus_x(x)
        # second moment of the IDLE-start recursion, all terms non-negative
        k2_i = 2 * h * m * (m2 / u + m / v) + 2 * h * m2 / u + 2 * m / (v * v)
        ek_i = h * m
        k2_b = 2 / (v * v) + 2 * ek_i / v + k2_i
    return _ret(k2_i), _ret(k2_b)


def expected_k2(chan: ChannelActivity, traffic: SdTraffic, tP):
    t = _arr(tP)
    u, v, lam = chan.u, chan.v, traffic.lam
    s = u + v + lam
    h = 1 / u + 1 / v
    c1 = u / (v * s)
    x = u * t
    with np.errstate(over="ignore", invalid="ignore"):
        m = np.expm1(x)
        m2 = _expm1_minus_x(x)
        ek2 = 2 * h * m * (m2 / u + m / v) + 2 * h * m2 / u + 2 * m * (1 / (v * v) + h * c1) + 2 * c1 / v
    return _ret(ek2)


def expected_wk(chan: ChannelActivity, traffic: SdTraffic, tP):
    u, v, lam = chan.u, chan.v, traffic.lam
    s = u + v + lam
    ek = np.asarray(expected_k(chan, traffic, tP))
    return _ret(ek / lam + u / (v * s * s))


def expected_y2(chan: ChannelActivity, traffic: SdTraffic, tP):
    lam = traffic.lam
    ewk = np.asarray(expected_wk(chan, traffic, tP))
    ek2 = np.asarray(expected_k2(chan, traffic, tP))
    return _ret(2 / (lam * lam) + 2 * ewk + ek2)


# ---------------------------------------------------------------------------
# Service time
# ---------------------------------------------------------------------------


def _service_mean(u, v, lam, t, a_const):
    """[(a + lam*t) e - a + u/(u+v+lam)] / (lam e + v) with e = exp(u t)."""
    s = u + v + lam
    x = u * t
    with np.errstate(over="ignore", invalid="ignore"):
        m = np.expm1(x)
        small = (a_const * m + lam * t * (1 + m) + u / s) / (lam * (1 + m) + v)
        ie = np.exp(-np.minimum(x, 745.0))
        large = (a_const + lam * t + (u / s - a_const) * ie) / (lam + v * ie)
    return np.where(x > _FACTORED_EXPONENT, large, small)


def _service_slope(u, v, lam, t, a_const):
    s = u + v + lam
    x = u * t
    rest = v * (lam + lam * u * t + u * a_const) + lam * u * a_const - lam * u * u / s
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.exp(np.minimum(x, _FACTORED_EXPONENT))
        small = e * (lam * lam * e + rest) / (lam * e + v) ** 2
        ie = np.exp(-np.minimum(x, 745.0))
        large = (lam * lam + rest * ie) / (lam + v * ie) ** 2
    return np.where(x > _FACTORED_EXPONENT, large, small)


def expected_s(chan: ChannelActivity, traffic: SdTraffic, tP):
    """Mean system time of a delivered update.

    Tracks the age of the held update at the start of each transmission
    attempt.  A cycle's first update is fresh when the channel is IDLE and
    has age min(Exp(lam), Exp(v)) when it waited out a BUSY period.  After an
    interruption the age grows by the partial attempt and the BUSY period
    unless a newer update arrives during it, in which case the age restarts
    at the backward recurrence time of that arrival.  Summing over the
    geometric number of attempts gives a closed form whose constant term is
    ``1 + v/u``.
    """
    t = _arr(tP)
    u, v, lam = chan.u, chan.v, traffic.lam
    return _ret(_service_mean(u, v, lam, t, 1.0 + v / u))


def expected_s_stationary_prior(chan: ChannelActivity, traffic: SdTraffic, tP):
    """Service-time mean that weights generation epochs by the stationary channel law.

    Every generated update is assumed to find the channel IDLE with
    probability v/(u+v), and its survival is judged by the replacement
    recursion alone.  The first update of a cycle actually sees the channel
    through P_II(W) and updates generated mid-transmission never compete,
    so this form sits below the simulated mean.  Kept for comparison only.
    """
    t = _arr(tP)
    u, v, lam = chan.u, chan.v, traffic.lam
    l = v / u + (u + v) / (u + v + lam)
    return _ret(_service_mean(u, v, lam, t, l))


def success_probs(chan: ChannelActivity, traffic: SdTraffic, tP):
    """(Pr{Phi|I_G}, Pr{Phi|B_G}, Pr{I_S}, Pr{B_S}) of the stationary-prior model."""
    t = _arr(tP)
    u, v, lam = chan.u, chan.v, traffic.lam
    with np.errstate(over="ignore"):
        e = np.exp(u * t)
    phi_i = (v + lam) / (lam * e + v)
    phi_b = v / (lam * e + v)
    w_i = v / (u + v) * phi_i
    w_b = u / (u + v) * phi_b
    pr_is = w_i / (w_i + w_b)
    return _ret(phi_i), _ret(phi_b), _ret(pr_is), _ret(1 - pr_is)


def conditional_s(chan: ChannelActivity, traffic: SdTraffic, tP):
    """(E[S|I_S], E[S|B_S]) of the stationary-prior model."""
    t = _arr(tP)
    u, v, lam = chan.u, chan.v, traffic.lam
    with np.errstate(over="ignore", invalid="ignore"):
        m = np.expm1(u * t)
        es_i = t + v / (lam * (1 + m) + v) * (m / u - t + m / (v + lam))
    return _ret(es_i), _ret(es_i + 1 / (v + lam))


# ---------------------------------------------------------------------------
# Aggregates
# ---------------------------------------------------------------------------


def cycle_moments(chan: ChannelActivity, traffic: SdTraffic, tP: float) -> CycleMoments:
    lam = traffic.lam
    ek = expected_k(chan, traffic, tP)
    return CycleMoments(
        EW=1 / lam,
        EW2=2 / (lam * lam),
        EK=ek,
        EK2=expected_k2(chan, traffic, tP),
        EWK=expected_wk(chan, traffic, tP),
        EY=ek + 1 / lam,
        EY2=expected_y2(chan, traffic, tP),
        ES=expected_s(chan, traffic, tP),
    )


def conditional_moments(chan: ChannelActivity, traffic: SdTraffic, tP: float) -> ConditionalMoments:
    ek_i, ek_b = conditional_k(chan, tP)
    ek2_i, ek2_b = conditional_k2(chan, tP)
    ew_i, ew_b = conditional_w(chan, traffic)
    pr_ik, pr_bk = k_start_probs(chan, traffic)
    phi_i, phi_b, pr_is, pr_bs = success_probs(chan, traffic, tP)
    es_i, es_b = conditional_s(chan, traffic, tP)
    return ConditionalMoments(
        EK_I=ek_i, EK_B=ek_b, EK2_I=ek2_i, EK2_B=ek2_b, EW_I=ew_i, EW_B=ew_b,
        PrIK=pr_ik, PrBK=pr_bk, PrPhi_I=phi_i, PrPhi_B=phi_b, PrIS=pr_is, PrBS=pr_bs,
        ES_I=es_i, ES_B=es_b,
    )


def aoi_ratio(chan: ChannelActivity, traffic: SdTraffic, tP):
    """E[Y^2] / (2 E[Y])."""
    t = _arr(tP)
    u, v, lam = chan.u, chan.v, traffic.lam
    hc = helper_constants(chan, traffic)
    h, g, q = hc.h, hc.g, hc.q
    x = u * t
    with np.errstate(over="ignore", invalid="ignore"):
        direct = np.asarray(expected_y2(chan, traffic, np.minimum(t, _FACTORED_EXPONENT / u))) / (
            2 * np.asarray(expected_y(chan, traffic, np.minimum(t, _FACTORED_EXPONENT / u)))
        )
        e = np.exp(np.minimum(x, 745.0))
        ie = 1 / e
        factored = (h * h * e + (h * (g - t) - 1 / (u * v)) + (g / lam + q) * ie) / (h + g * ie)
    return _ret(np.where(x > _FACTORED_EXPONENT, factored, direct))


def avg_aoi(chan: ChannelActivity, traffic: SdTraffic, tP):
    """Long-run average AoI; +inf once u*tP exceeds ASYMPTOTIC_EXPONENT."""
    t = _arr(tP)
    val = np.asarray(expected_s(chan, traffic, t)) + np.asarray(aoi_ratio(chan, traffic, t))
    return _ret(np.where(chan.u * t > ASYMPTOTIC_EXPONENT, np.inf, val))


def is_asymptotic(chan: ChannelActivity, tP) -> bool:
    return bool(np.any(chan.u * np.asarray(tP, dtype=float) > ASYMPTOTIC_EXPONENT))


def energy_components(chan: ChannelActivity, traffic: SdTraffic, tP, cfg: RadioConfig):
    """(E_T, E_S, E_C) per cycle in Joules, vectorised over tP."""
    t = _arr(tP)
    Pt = np.asarray(time_to_power(t, cfg, traffic))
    with np.errstate(over="ignore", invalid="ignore"):
        e_t = Pt * np.asarray(expected_transmit_time(chan, t))
        ek = np.asarray(expected_k(chan, traffic, t))
        e_s = cfg.Ps * ek
        e_c = cfg.Pc * (ek + 1 / traffic.lam)
    return _ret(e_t), _ret(e_s), _ret(e_c)


def energy_sum(chan: ChannelActivity, traffic: SdTraffic, tP, cfg: RadioConfig):
    e_t, e_s, e_c = (np.asarray(a) for a in energy_components(chan, traffic, tP, cfg))
    return _ret(e_t + e_s + e_c)


def transmit_energy_product(chan: ChannelActivity, traffic: SdTraffic, tP, cfg: RadioConfig):
    """E_T as (N0 B / u) * (exp(b/tP) - 1) * (exp(u tP) - 1) with b = D ln2 / B."""
    t = _arr(tP)
    b = traffic.D * LN2 / cfg.B
    n0b = effective_noise(cfg) * cfg.B
    with np.errstate(over="ignore", invalid="ignore"):
        return _ret(n0b / chan.u * np.expm1(b / t) * np.expm1(chan.u * t))


def energy_efficiency(chan: ChannelActivity, traffic: SdTraffic, tP, cfg: RadioConfig):
    t = _arr(tP)
    with np.errstate(over="ignore", divide="ignore"):
        ee = traffic.D / np.asarray(energy_sum(chan, traffic, t, cfg))
    return _ret(np.where(chan.u * t > ASYMPTOTIC_EXPONENT, 0.0, ee))


def energy_metrics(
    chan: ChannelActivity,
    traffic: SdTraffic,
    tP: float,
    cfg: RadioConfig,
    allow_extrapolation: bool = False,
) -> Metrics:
    """Full per-cycle energy ledger plus AoI at one operating point.

    Raises :class:`InfeasiblePower` when ``tP`` is shorter than the time at
    ``Pmax`` unless ``allow_extrapolation`` is set.
    """
    tP = float(tP)
    if tP <= 0:
        raise ParameterError("tP must be positive")
    t_floor = power_to_time(cfg.Pmax, cfg, traffic)
    if not allow_extrapolation and tP < t_floor * (1 - 1e-12):
        raise InfeasiblePower(f"tP={tP!r} s needs more than Pmax={cfg.Pmax} W (t_min={t_floor!r} s)")
    Pt = time_to_power(tP, cfg, traffic)
    asym = chan.u * tP > ASYMPTOTIC_EXPONENT
    with np.errstate(over="ignore", invalid="ignore"):
        T_T = float(expected_transmit_time(chan, tP))
        T_S = float(expected_k(chan, traffic, tP))
        T_C = T_S + 1 / traffic.lam
    E_T, E_S, E_C = Pt * T_T, cfg.Ps * T_S, cfg.Pc * T_C
    E_sum = E_T + E_S + E_C
    return Metrics(
        avg_aoi=math.inf if asym else float(avg_aoi(chan, traffic, tP)),
        ee=0.0 if asym else traffic.D / E_sum,
        E_T=E_T, E_S=E_S, E_C=E_C, T_T=T_T, T_S=T_S, T_C=T_C, E_sum=E_sum,
        Pt=Pt, tP=tP, asymptotic=asym,
    )


# ---------------------------------------------------------------------------
# Slopes in tP
# ---------------------------------------------------------------------------


def service_slope(chan: ChannelActivity, traffic: SdTraffic, tP):
    """d E[S] / d tP (strictly positive)."""
    t = _arr(tP)
    u, v, lam = chan.u, chan.v, traffic.lam
    return _ret(_service_slope(u, v, lam, t, 1.0 + v / u))


def ratio_slope_factor_at_zero(chan: ChannelActivity, traffic: SdTraffic) -> float:
    u, v, lam = chan.u, chan.v, traffic.lam
    s = u + v + lam
    return u * (u + v) ** 2 * (2 * v + lam) / (lam * v**3 * s * s)


def ratio_slope_factor(chan: ChannelActivity, traffic: SdTraffic, tP):
    """r(tP) in d/dtP [E[Y^2]/(2E[Y])] = exp(u tP) r(tP) / (h exp(u tP) + g)^2.

    r(0) = u (u+v)^2 (2v+lam) / (lam v^3 (u+v+lam)^2) and
    r' = u h (h e + g)(2 u h e - 1) > 0, so r stays positive.
    """
    t = _arr(tP)
    u = chan.u
    hc = helper_constants(chan, traffic)
    h, g = hc.h, hc.g
    r0 = ratio_slope_factor_at_zero(chan, traffic)
    x = u * t
    with np.errstate(over="ignore", invalid="ignore"):
        r = r0 + u * h**3 * np.expm1(2 * x) + (2 * u * g - 1) * h * h * np.expm1(x) - u * h * g * t
    return _ret(r)


def ratio_slope(chan: ChannelActivity, traffic: SdTraffic, tP):
    t = _arr(tP)
    u = chan.u
    hc = helper_constants(chan, traffic)
    h, g = hc.h, hc.g
    x = u * t
    r = np.asarray(ratio_slope_factor(chan, traffic, np.minimum(t, _FACTORED_EXPONENT / u)))
    r0 = ratio_slope_factor_at_zero(chan, traffic)
    with np.errstate(over="ignore", invalid="ignore"):
        e = np.exp(np.minimum(x, _FACTORED_EXPONENT))
        den = h * e + g
        small = e * (r / den) / den
        E = np.exp(np.minimum(x, 745.0))
        ie = 1 / E
        r_over_e = r0 * ie + u * h**3 * (E - ie) + (2 * u * g - 1) * h * h * (1 - ie) - u * h * g * t * ie
        large = r_over_e / (h + g * ie) ** 2
    return _ret(np.where(x > _FACTORED_EXPONENT, large, small))


def aoi_derivative(chan: ChannelActivity, traffic: SdTraffic, tP):
    """d(avg AoI)/d tP."""
    return _ret(np.asarray(service_slope(chan, traffic, tP)) + np.asarray(ratio_slope(chan, traffic, tP)))


def energy_stationary_point(chan: ChannelActivity, traffic: SdTraffic, cfg: RadioConfig) -> float:
    """sqrt(D ln2 / (B u)): E_T decreases before it and increases after it."""
    return math.sqrt(traffic.D * LN2 / (cfg.B * chan.u))


def transmit_energy_derivative(chan: ChannelActivity, traffic: SdTraffic, tP, cfg: RadioConfig):
    """d E_T / d tP.

    With a = u, b = D ln2 / B and f(x) = (e^{ax}-1)(e^{b/x}-1),
    E_T = (N0 B / u) f(tP) and f'(x) = a e^{ax}(e^{b/x}-1) - (b/x^2) e^{b/x}(e^{ax}-1).
    """
    x = _arr(tP)
    a = chan.u
    b = traffic.D * LN2 / cfg.B
    n0b = effective_noise(cfg) * cfg.B
    with np.errstate(over="ignore", invalid="ignore"):
        fprime = a * np.exp(a * x) * np.expm1(b / x) - (b / (x * x)) * np.exp(b / x) * np.expm1(a * x)
    return _ret(n0b / a * fprime)


def esum_derivative(chan: ChannelActivity, traffic: SdTraffic, cfg: RadioConfig, tP):
    """d E_sum / d tP = dE_T/dtP + (Ps + Pc) u h exp(u tP)."""
    t = _arr(tP)
    h = 1 / chan.u + 1 / chan.v
    with np.errstate(over="ignore"):
        rest = (cfg.Ps + cfg.Pc) * chan.u * h * np.exp(chan.u * t)
    return _ret(np.asarray(transmit_energy_derivative(chan, traffic, t, cfg)) + rest)
