"""Independent numeric evaluation of the cycle moments.

Nothing here reuses the closed forms in :mod:`craoi.analytic`.  Channel
transition probabilities come from the matrix exponential of the generator,
every one-dimensional expectation is an adaptive quadrature, and the
recursive conditional moments are obtained by eliminating small linear
systems.  Meant as a test oracle, so it favours transparency over speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.linalg import expm

from .analytic import CycleMoments
from .params import ChannelActivity, SdTraffic


class OracleError(RuntimeError):
    """A quadrature failed to reach the requested accuracy."""


_EPSREL = 1e-13


def _quad(f, a, b, scales=()) -> float:
    """Adaptive quadrature; ``scales`` are decay lengths used to split [a, inf)."""
    kw = dict(epsabs=0.0, epsrel=_EPSREL, limit=400)
    edges = [a]
    if not math.isfinite(b):
        cuts = sorted({c * m for c in (1.0, *scales) for m in (1.0, 40.0)})
        edges += [c for c in cuts if c > a]
    edges.append(b)
    val, err = 0.0, 0.0
    for lo, hi in zip(edges, edges[1:]):
        piece, piece_err = quad(f, lo, hi, **kw)
        val += piece
        err += piece_err
    if not math.isfinite(val) or err > 1e-10 * max(abs(val), 1e-300):
        raise OracleError(f"quadrature did not converge: value={val!r}, error={err!r}")
    return val


def _p_idle_idle(chan: ChannelActivity, t: float) -> float:
    gen = np.array([[-chan.u, chan.u], [chan.v, -chan.v]])
    return float(expm(gen * t)[0, 0])


def _p_idle_busy(chan: ChannelActivity, t: float) -> float:
    gen = np.array([[-chan.u, chan.u], [chan.v, -chan.v]])
    return float(expm(gen * t)[0, 1])


@dataclass(frozen=True)
class OracleParts:
    """Intermediate quantities, exposed for isolated checks."""

    PrIK: float
    PrBK: float
    EW_mass_I: float  # E[W; channel IDLE at generation]
    EW_mass_B: float
    EK_I: float
    EK_B: float
    EK2_I: float
    EK2_B: float
    p_success: float  # one attempt completes
    p_fail: float
    t_fail_mass: float  # E[T; attempt interrupted]
    no_arrival_in_busy: float
    age_after_busy: float  # E[age of held update when the BUSY period ends]
    ES: float
    PrPhi_I: float
    PrPhi_B: float
    ES_I_stationary: float
    ES_B_stationary: float
    ES_stationary: float


def recursion_parts(chan: ChannelActivity, traffic: SdTraffic, tP: float) -> OracleParts:
    u, v, lam = chan.u, chan.v, traffic.lam
    tP = float(tP)

    # channel state at the first generation after a departure (W ~ Exp(lam))
    w_scale = (lam / (u + v),)
    pr_ik = _quad(lambda s: _p_idle_idle(chan, s / lam) * math.exp(-s), 0, math.inf, w_scale)
    pr_bk = _quad(lambda s: _p_idle_busy(chan, s / lam) * math.exp(-s), 0, math.inf, w_scale)
    w_i = _quad(lambda s: s / lam * _p_idle_idle(chan, s / lam) * math.exp(-s), 0, math.inf, w_scale)
    w_b = _quad(lambda s: s / lam * _p_idle_busy(chan, s / lam) * math.exp(-s), 0, math.inf, w_scale)

    # one transmission attempt against an Exp(u) IDLE period
    x = u * tP
    p_ok = math.exp(-x)
    p_fail = _quad(lambda s: math.exp(-s), 0, x)
    t1 = _quad(lambda s: s / u * math.exp(-s), 0, x)
    t2 = _quad(lambda s: (s / u) ** 2 * math.exp(-s), 0, x)

    # a BUSY period
    b1 = _quad(lambda s: s / v * math.exp(-s), 0, math.inf)
    b2 = _quad(lambda s: (s / v) ** 2 * math.exp(-s), 0, math.inf)

    # K from IDLE:  K_I = tP w.p. p_ok, else T + K_B;   K_B = B + K_I.
    # Eliminating K_B leaves p_ok * K_I on the left.
    ek_i = (p_ok * tP + t1 + p_fail * b1) / p_ok
    ek_b = b1 + ek_i
    ek2_i = (p_ok * tP * tP + t2 + 2 * ek_b * t1 + p_fail * (b2 + 2 * b1 * ek_i)) / p_ok
    ek2_b = b2 + 2 * b1 * ek_i + ek2_i

    # BUSY period seen by a held update: survival without replacement and
    # the age of whichever update is held when the channel frees up
    b_scale = (v / lam, v / (v + lam))
    no_arr = _quad(lambda s: math.exp(-s) * math.exp(-lam * s / v), 0, math.inf, b_scale)
    arr = _quad(lambda s: math.exp(-s) * -math.expm1(-lam * s / v), 0, math.inf, b_scale)
    b_no_arr = _quad(lambda s: s / v * math.exp(-s) * math.exp(-lam * s / v), 0, math.inf, b_scale)

    def _backward_age(b: float) -> float:
        # E[(b - last arrival) ; at least one arrival in [0, b]]
        return -math.expm1(-lam * b) / lam - b * math.exp(-lam * b)

    b_arr = _quad(lambda s: _backward_age(s / v) * math.exp(-s), 0, math.inf, b_scale)
    age_end = b_no_arr + b_arr

    # Age A of the held update at each attempt start.  f(a) = E[A at the
    # successful attempt | current age a] is affine, f(a) = alpha a + beta:
    #   f(a) = p_ok a + E[1{fail} f(A')],
    #   E[1{fail} A'] = no_arr (p_fail a + t1) + p_fail age_end.
    alpha = p_ok / (p_ok + p_fail * arr)
    beta = alpha * (no_arr * t1 + p_fail * age_end) / p_ok
    first_age = pr_bk * age_end
    es = tP + alpha * first_age + beta

    # stationary-prior model: generation epochs see IDLE w.p. v/(u+v)
    #   Phi_I = p_ok + p_fail Phi_B,  Phi_B = no_arr Phi_I
    phi_i = p_ok / (p_ok + p_fail * arr)
    phi_b = no_arr * phi_i
    #   Phi_I S_I = p_ok tP + Phi_B (t1 + p_fail S_B)
    #   Phi_B S_B = Phi_I (b_no_arr + no_arr S_I)
    # Substituting S_B: Phi_I S_I (1 - p_fail no_arr) = p_ok tP + Phi_B t1 + p_fail Phi_I b_no_arr
    es_i = (p_ok * tP + phi_b * t1 + p_fail * phi_i * b_no_arr) / (phi_i * (p_ok + p_fail * arr))
    es_b = phi_i * (b_no_arr + no_arr * es_i) / phi_b
    g_i = v / (u + v) * phi_i
    g_b = u / (u + v) * phi_b
    es_stat = (g_i * es_i + g_b * es_b) / (g_i + g_b)

    return OracleParts(
        PrIK=pr_ik, PrBK=pr_bk, EW_mass_I=w_i, EW_mass_B=w_b,
        EK_I=ek_i, EK_B=ek_b, EK2_I=ek2_i, EK2_B=ek2_b,
        p_success=p_ok, p_fail=p_fail, t_fail_mass=t1,
        no_arrival_in_busy=no_arr, age_after_busy=age_end, ES=es,
        PrPhi_I=phi_i, PrPhi_B=phi_b,
        ES_I_stationary=es_i, ES_B_stationary=es_b, ES_stationary=es_stat,
    )


def recursion_oracle(chan: ChannelActivity, traffic: SdTraffic, tP: float) -> CycleMoments:
    """Cycle moments assembled from the conditional recursions."""
    lam = traffic.lam
    pr = recursion_parts(chan, traffic, tP)
    ew = _quad(lambda s: s / lam * math.exp(-s), 0, math.inf)
    ew2 = _quad(lambda s: (s / lam) ** 2 * math.exp(-s), 0, math.inf)
    ek = pr.PrIK * pr.EK_I + pr.PrBK * pr.EK_B
    ek2 = pr.PrIK * pr.EK2_I + pr.PrBK * pr.EK2_B
    # W and K are independent given the channel state at generation
    ewk = pr.EW_mass_I * pr.EK_I + pr.EW_mass_B * pr.EK_B
    return CycleMoments(
        EW=ew, EW2=ew2, EK=ek, EK2=ek2, EWK=ewk,
        EY=ew + ek, EY2=ew2 + 2 * ewk + ek2, ES=pr.ES,
    )
