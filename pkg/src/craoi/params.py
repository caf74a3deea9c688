"""Physical parameters and the transmit-power <-> transmission-time map.

All quantities are SI: seconds, Watts, bits, Hz.  Rates are per second.
"""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass

import numpy as np

LN2 = math.log(2.0)


class ParameterError(ValueError):
    """Raised when a parameter set violates its physical constraints."""


def _positive(name: str, value: float) -> None:
    if not (isinstance(value, numbers.Real) and math.isfinite(value) and value > 0):
        raise ParameterError(f"{name} must be a positive finite number, got {value!r}")


def _nonnegative(name: str, value: float) -> None:
    if not (isinstance(value, numbers.Real) and math.isfinite(value) and value >= 0):
        raise ParameterError(f"{name} must be a non-negative finite number, got {value!r}")


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class ChannelActivity:
    """Licensed-channel occupancy as a two-state CTMC.

    ``u`` is the IDLE->BUSY rate and ``v`` the BUSY->IDLE rate, so IDLE
    periods last Exp(u) and BUSY periods Exp(v).
    """

    u: float
    v: float

    def __post_init__(self) -> None:
        _positive("u", self.u)
        _positive("v", self.v)

    @property
    def k(self) -> float:
        """IDLE/BUSY ratio v/u."""
        return self.v / self.u

    @classmethod
    def from_ratio(cls, u: float, k: float) -> "ChannelActivity":
        _positive("k", k)
        return cls(u=u, v=k * u)


@dataclass(frozen=True)
class SdTraffic:
    """Status-update source: Poisson generation at rate ``lam``, ``D`` bits each."""

    lam: float
    D: float

    def __post_init__(self) -> None:
        _positive("lambda", self.lam)
        _positive("D", self.D)


@dataclass(frozen=True)
class RadioConfig:
    L: float
    B: float = 180e3
    N0_rx_dbm: float = -110.0
    theta: float = 3.0
    Ps: float = 1e-3
    Pc: float = 1e-4
    Pmax: float = 0.1

    def __post_init__(self) -> None:
        _positive("L", self.L)
        _positive("B", self.B)
        _positive("theta", self.theta)
        _positive("Pmax", self.Pmax)
        _nonnegative("Ps", self.Ps)
        _nonnegative("Pc", self.Pc)
        if not math.isfinite(self.N0_rx_dbm):
            raise ParameterError(f"N0_rx_dbm must be finite, got {self.N0_rx_dbm!r}")
        try:
            n0 = effective_noise(self)
        except (OverflowError, ZeroDivisionError):
            n0 = math.inf
        if not (math.isfinite(n0) and n0 > 0):
            raise ParameterError(f"effective noise density is not positive and finite: {n0!r}")


def effective_noise(cfg: RadioConfig) -> float:
    """Receiver noise density inflated by the path loss L**-theta (W/Hz)."""
    path_loss = cfg.L ** (-cfg.theta)
    return dbm_to_watt(cfg.N0_rx_dbm) / path_loss


def shannon_rate(Pt, cfg: RadioConfig):
    """Rate in bits/s at transmit power ``Pt`` (scalar or array)."""
    n0b = effective_noise(cfg) * cfg.B
    return cfg.B * np.log1p(np.asarray(Pt, dtype=float) / n0b) / LN2


def power_to_time(Pt, cfg: RadioConfig, traffic: SdTraffic):
    """Time to push one packet at the Shannon rate for power ``Pt``."""
    Pt_arr = np.asarray(Pt, dtype=float)
    if np.any(~(Pt_arr > 0)):
        raise ParameterError("transmit power must be positive")
    n0b = effective_noise(cfg) * cfg.B
    tP = traffic.D * LN2 / (cfg.B * np.log1p(Pt_arr / n0b))
    return float(tP) if tP.ndim == 0 else tP


def time_to_power(tP, cfg: RadioConfig, traffic: SdTraffic):
    """Inverse of :func:`power_to_time`: N0*B*(2**(D/(B*tP)) - 1)."""
    tP_arr = np.asarray(tP, dtype=float)
    if np.any(~(tP_arr > 0)):
        raise ParameterError("transmission time must be positive")
    n0b = effective_noise(cfg) * cfg.B
    with np.errstate(over="ignore"):
        Pt = n0b * np.expm1(traffic.D * LN2 / (cfg.B * tP_arr))
    return float(Pt) if Pt.ndim == 0 else Pt


@dataclass(frozen=True)
class OperatingPoint:
    Pt: float
    tP: float
    C: float

    @classmethod
    def from_power(cls, Pt: float, cfg: RadioConfig, traffic: SdTraffic) -> "OperatingPoint":
        tP = power_to_time(Pt, cfg, traffic)
        return cls(Pt=float(Pt), tP=tP, C=traffic.D / tP)

    @classmethod
    def from_time(cls, tP: float, cfg: RadioConfig, traffic: SdTraffic) -> "OperatingPoint":
        Pt = time_to_power(tP, cfg, traffic)
        return cls(Pt=Pt, tP=float(tP), C=traffic.D / tP)
