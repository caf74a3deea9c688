"""Monte Carlo simulation of the secondary device on the on/off licensed channel.

Two engines produce the same per-cycle records:

``event``
    Plain next-event simulation.  Every packet arrival, channel transition,
    transmission start, interruption and delivery is an event.

``fast``
    Same stochastic process, sampled exactly but in aggregate inside a
    cycle.  The channel is tracked explicitly while the device waits for its
    first update.  After that the run of interrupted attempts is drawn as a
    geometric count, and the BUSY periods between attempts are drawn as
    gamma sums split at the last BUSY period that saw a replacement, which
    is all the service time depends on.  Arrival counts in those periods are
    Poisson.  Each aborted attempt is still drawn individually.  This keeps
    long interruption runs (u*tP around 10) affordable.

Both engines are compiled with numba and take two independent NumPy
generators: one drives the channel, the other the update arrivals.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .params import ChannelActivity, ParameterError, RadioConfig, SdTraffic, power_to_time, time_to_power

Z95 = 1.959963984540054
MOMENT_NAMES = ("EW", "EW2", "EK", "EK2", "EWK", "EY", "EY2", "ES")
TRACE_HEADER = ("cycle", "W", "K", "Y", "S", "Q", "interruptions", "replacements")

_MASK64 = (1 << 64) - 1


class SimulationError(RuntimeError):
    """The run could not produce the requested number of deliveries."""


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    target_cycles: int = 1_000_000
    warmup_cycles: int = 1_000
    batches: int = 32
    engine: str = "fast"
    max_events: int = 10**11

    def __post_init__(self) -> None:
        if not (0 <= int(self.seed) <= _MASK64):
            raise ParameterError("seed must fit in 64 bits")
        if self.batches < 2 or self.target_cycles < self.batches:
            raise ParameterError("need target_cycles >= batches >= 2")
        if self.warmup_cycles < 0:
            raise ParameterError("warmup_cycles must be >= 0")
        if self.engine not in ("fast", "event"):
            raise ParameterError(f"unknown engine {self.engine!r}")
        if self.max_events < 1:
            raise ParameterError("max_events must be positive")


@dataclass(frozen=True)
class Estimate:
    mean: float
    half_width: float


@dataclass(frozen=True)
class SimCounts:
    generated: int
    discarded: int
    replaced: int
    interrupted: int
    delivered: int


@dataclass(frozen=True)
class SimResult:
    aoi_mean: float
    aoi_hw: float
    ee: float
    ee_hw: float
    moments: dict[str, Estimate]
    counts: SimCounts
    corr_S_Y: float
    aoi_sawtooth: float
    transmit_time: Estimate
    idle_fraction: Estimate
    idle_at_generation: Estimate
    span: float
    sum_K: float
    sum_transmit: float
    energy_total: float
    Pt: float
    tP: float
    n_batches: int
    seeds: tuple[int, ...]
    per_replication: tuple["SimResult", ...] = field(default=(), repr=False)


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (new_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


def replication_seeds(base_seed: int, n: int) -> list[int]:
    """seed_0 = base_seed; seed_i is the i-th SplitMix64 output started at base_seed."""
    seeds = [int(base_seed) & _MASK64]
    state = seeds[0]
    for _ in range(n - 1):
        state, out = splitmix64(state)
        seeds.append(out)
    return seeds


def _generators(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    ch, ar = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.Generator(np.random.PCG64(ch)), np.random.Generator(np.random.PCG64(ar))


# ---------------------------------------------------------------------------
# Engines
# ---------------------------------------------------------------------------


@numba.njit(cache=True)
def _alloc(n):
    return (
        np.empty(n), np.empty(n), np.empty(n), np.empty(n), np.empty(n), np.empty(n), np.empty(n),
        np.empty(n, np.int64), np.empty(n, np.int64), np.empty(n, np.int64), np.empty(n, np.uint8),
    )


@numba.njit(cache=True, nogil=True)
def _backward_age(rng_ar, lam, length):
    """Age of the last arrival before the end of a BUSY period of given length.

    Returns (age, arrivals); age == length when nothing arrived.
    """
    x = rng_ar.standard_exponential() / lam
    if x >= length:
        return length, 0
    return x, 1 + rng_ar.poisson(lam * (length - x))


@numba.njit(cache=True, nogil=True)
def _fast_engine(rng_ch, rng_ar, u, v, lam, tP, n_total, max_events):
    W, K, S, D, G, TT, BZ, NI, NR, ND, IG = _alloc(n_total)
    p_ok = math.exp(-u * tP)
    p_fail = -math.expm1(-u * tP)
    p_arr_busy = lam / (v + lam)
    t = 0.0
    idle = True
    chan_end = rng_ch.standard_exponential() / u
    events = 0
    for c in range(n_total):
        start = t
        # waiting for the first update of the cycle; channel tracked explicitly
        tg = t + rng_ar.standard_exponential() / lam
        busy = 0.0
        cur = t
        while chan_end <= tg:
            if not idle:
                busy += chan_end - cur
            cur = chan_end
            idle = not idle
            chan_end = cur + rng_ch.standard_exponential() / (u if idle else v)
            events += 1
        if not idle:
            busy += tg - cur
        IG[c] = 1 if idle else 0

        k_time = 0.0
        age0 = 0.0
        repl = 0
        fails = 0
        t_first = 0.0
        carried_success = False
        if idle:
            r = chan_end - tg
            if r >= tP:
                carried_success = True
            else:
                fails = 1
                t_first = r
                fails += rng_ch.geometric(p_ok) - 1
        else:
            r0 = chan_end - tg
            busy += r0
            k_time += r0
            age0, nr = _backward_age(rng_ar, lam, r0)
            repl += nr
            fails = rng_ch.geometric(p_ok) - 1
        events += fails + 1
        if events > max_events:
            return c, W, K, S, D, G, TT, BZ, NI, NR, ND, IG

        # aborted attempts; the last `tail` of them follow the last replacement
        age = age0
        t_sum = 0.0
        b_sum = 0.0
        if fails > 0:
            tail = rng_ar.geometric(p_arr_busy) - 1
            if tail > fails:
                tail = fails
            t_tail = 0.0
            for j in range(fails):
                if j == 0 and idle:
                    tj = t_first
                elif p_fail > 0.5:
                    # Exp(u) conditioned on falling short of tP, by rejection
                    tj = rng_ch.standard_exponential() / u
                    while tj >= tP:
                        tj = rng_ch.standard_exponential() / u
                else:
                    tj = -math.log1p(-rng_ch.random() * p_fail) / u
                t_sum += tj
                if j >= fails - tail:
                    t_tail += tj
            b_tail = 0.0
            if tail > 0:
                b_tail = rng_ch.standard_gamma(float(tail)) / (v + lam)
            if tail < fails:
                head = fails - tail - 1
                b_head = 0.0
                if head > 0:
                    b_head = rng_ch.standard_gamma(float(head)) / v
                    repl += rng_ar.poisson(lam * b_head)
                e1 = rng_ch.standard_exponential() / (v + lam)
                rest = rng_ch.standard_exponential() / v
                age_la, nr = _backward_age(rng_ar, lam, rest)
                repl += 1 + nr
                b_sum = b_head + e1 + rest + b_tail
                age = age_la + t_tail + b_tail
            else:
                b_sum = b_tail
                age = age0 + t_sum + b_sum
        busy += b_sum
        k_time += t_sum + b_sum + tP
        tx = t_sum + tP

        t = tg + k_time
        if not carried_success:
            idle = True
            chan_end = t + rng_ch.standard_exponential() / u

        W[c] = tg - start
        K[c] = k_time
        S[c] = age + tP
        D[c] = t
        G[c] = t - (age + tP)
        TT[c] = tx
        BZ[c] = busy
        NI[c] = fails
        NR[c] = repl
        ND[c] = rng_ar.poisson(lam * tx)
    return n_total, W, K, S, D, G, TT, BZ, NI, NR, ND, IG


@numba.njit(cache=True, nogil=True)
def _event_engine(rng_ch, rng_ar, u, v, lam, tP, n_total, max_events):
    W, K, S, D, G, TT, BZ, NI, NR, ND, IG = _alloc(n_total)
    NO_PACKET, WAITING, TRANSMITTING = 0, 1, 2
    idle = True
    chan_end = rng_ch.standard_exponential() / u
    arr_next = rng_ar.standard_exponential() / lam
    mode = NO_PACKET
    last_dep = 0.0
    first_gen = 0.0
    gen = 0.0
    tx_start = 0.0
    tx_end = 0.0
    busy_start = 0.0
    tt = 0.0
    busy = 0.0
    n_i = 0
    n_r = 0
    n_d = 0
    c = 0
    events = 0
    while c < n_total:
        events += 1
        if events > max_events:
            break
        if mode == TRANSMITTING and tx_end <= chan_end and tx_end <= arr_next:
            t = tx_end
            tt += tP
            W[c] = first_gen - last_dep
            K[c] = t - first_gen
            S[c] = t - gen
            D[c] = t
            G[c] = gen
            TT[c] = tt
            BZ[c] = busy
            NI[c] = n_i
            NR[c] = n_r
            ND[c] = n_d
            c += 1
            last_dep = t
            mode = NO_PACKET
            tt = 0.0
            busy = 0.0
            n_i = 0
            n_r = 0
            n_d = 0
        elif chan_end <= arr_next:
            t = chan_end
            if idle:
                idle = False
                busy_start = t
                chan_end = t + rng_ch.standard_exponential() / v
                if mode == TRANSMITTING:
                    n_i += 1
                    tt += t - tx_start
                    mode = WAITING
            else:
                idle = True
                busy += t - busy_start
                chan_end = t + rng_ch.standard_exponential() / u
                if mode == WAITING:
                    mode = TRANSMITTING
                    tx_start = t
                    tx_end = t + tP
        else:
            t = arr_next
            arr_next = t + rng_ar.standard_exponential() / lam
            if mode == NO_PACKET:
                first_gen = t
                gen = t
                IG[c] = 1 if idle else 0
                if idle:
                    mode = TRANSMITTING
                    tx_start = t
                    tx_end = t + tP
                else:
                    mode = WAITING
            elif mode == WAITING:
                gen = t
                n_r += 1
            else:
                n_d += 1
    return c, W, K, S, D, G, TT, BZ, NI, NR, ND, IG


# ---------------------------------------------------------------------------
# Reduction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Run:
    """Measured-cycle records of one replication, reduced to batch sums."""

    batch: dict[str, np.ndarray]
    co: tuple[float, float, float, float, float, float]  # n, mean_s, mean_y, M2s, M2y, Csy
    saw_area: float
    saw_span: float
    counts: SimCounts
    span: float
    sum_K: float
    sum_tx: float
    energy: float


def _simulate_records(chan, traffic, tP, sim: SimConfig, seed: int):
    n_total = sim.warmup_cycles + sim.target_cycles
    attempts = n_total * math.exp(min(chan.u * tP, 700.0))
    if sim.engine == "event":
        # every arrival during an attempt is an event of its own
        attempts *= 1.0 + traffic.lam * tP
    if attempts > sim.max_events:
        raise SimulationError(
            f"expected ~{attempts:.3g} events exceed the event cap {sim.max_events:.3g} "
            f"(u={chan.u}, v={chan.v}, lambda={traffic.lam}, tP={tP})"
        )
    rng_ch, rng_ar = _generators(seed)
    engine = _fast_engine if sim.engine == "fast" else _event_engine
    done, *rec = engine(rng_ch, rng_ar, chan.u, chan.v, traffic.lam, tP, n_total, sim.max_events)
    if done < n_total:
        what = "no deliveries" if done == 0 else f"only {done} of {n_total} deliveries"
        raise SimulationError(
            f"{what} within the event cap {sim.max_events} "
            f"(u={chan.u}, v={chan.v}, lambda={traffic.lam}, tP={tP})"
        )
    return rec


def _reduce(rec, traffic, tP, Pt, cfg: RadioConfig, sim: SimConfig) -> tuple[_Run, dict[str, np.ndarray]]:
    W, K, S, D, G, TT, BZ, NI, NR, ND, IG = rec
    w0 = sim.warmup_cycles
    if w0 > 0:
        d_prev, s_prev, g_prev = D[w0 - 1], S[w0 - 1], G[w0 - 1]
    else:
        d_prev, s_prev, g_prev = 0.0, 0.0, 0.0
    sl = slice(w0, None)
    W, K, S, D, G, TT, BZ = (a[sl] for a in (W, K, S, D, G, TT, BZ))
    NI, NR, ND, IG = (a[sl] for a in (NI, NR, ND, IG))
    Y = W + K
    S_lag = np.concatenate(([s_prev], S[:-1]))
    Q = 0.5 * Y * Y + S_lag * Y
    E = Pt * TT + cfg.Ps * K + cfg.Pc * Y

    # sawtooth integrated from absolute delivery/generation epochs
    d_all = np.concatenate(([d_prev], D))
    g_all = np.concatenate(([g_prev], G))
    dt = np.diff(d_all)
    a_start = d_all[:-1] - g_all[:-1]
    a_end = d_all[1:] - g_all[:-1]
    saw_area = float(np.sum(0.5 * (a_start + a_end) * dt))
    saw_span = float(d_all[-1] - d_all[0])

    per_cycle = {
        "n": np.ones_like(Y), "W": W, "W2": W * W, "K": K, "K2": K * K, "WK": W * K,
        "Y": Y, "Y2": Y * Y, "S": S, "Q": Q, "E": E, "TT": TT, "busy": BZ, "idle_gen": IG.astype(float),
    }
    groups = np.array_split(np.arange(Y.size), sim.batches)
    bounds = np.array([g[0] for g in groups])
    batch = {k: np.add.reduceat(a, bounds) for k, a in per_cycle.items()}

    ms, my = float(S_lag.mean()), float(Y.mean())
    ds, dy = S_lag - ms, Y - my
    co = (float(Y.size), ms, my, float(ds @ ds), float(dy @ dy), float(ds @ dy))

    counts = SimCounts(
        generated=int(Y.size + NR.sum() + ND.sum()),
        discarded=int(ND.sum()),
        replaced=int(NR.sum()),
        interrupted=int(NI.sum()),
        delivered=int(Y.size),
    )
    run = _Run(
        batch=batch, co=co, saw_area=saw_area, saw_span=saw_span, counts=counts,
        span=float(Y.sum()), sum_K=float(K.sum()), sum_tx=float(TT.sum()), energy=float(E.sum()),
    )
    trace = {"W": W, "K": K, "Y": Y, "S": S, "Q": Q, "interruptions": NI, "replacements": NR}
    return run, trace


def _merge_co(parts):
    n, ms, my, m2s, m2y, csy = parts[0]
    for nb, msb, myb, m2sb, m2yb, csyb in parts[1:]:
        tot = n + nb
        ds, dy = msb - ms, myb - my
        m2s += m2sb + ds * ds * n * nb / tot
        m2y += m2yb + dy * dy * n * nb / tot
        csy += csyb + ds * dy * n * nb / tot
        ms += ds * nb / tot
        my += dy * nb / tot
        n = tot
    return csy / math.sqrt(m2s * m2y) if m2s > 0 and m2y > 0 else 0.0


def _hw(values: np.ndarray) -> float:
    return float(Z95 * np.std(values, ddof=1) / math.sqrt(values.size))


def _assemble(runs: list[_Run], traffic, tP, Pt, seeds, per_rep=()) -> SimResult:
    b = {k: np.concatenate([r.batch[k] for r in runs]) for k in runs[0].batch}
    tot = {k: float(v.sum()) for k, v in b.items()}
    n = b["n"]

    def est(key, denom="n"):
        return Estimate(tot[key] / tot[denom], _hw(b[key] / b[denom]))

    moments = {
        "EW": est("W"), "EW2": est("W2"), "EK": est("K"), "EK2": est("K2"), "EWK": est("WK"),
        "EY": est("Y"), "EY2": est("Y2"), "ES": est("S"),
    }
    aoi = est("Q", "Y")
    ee_batches = traffic.D * n / b["E"]
    idle_frac = Estimate(1 - tot["busy"] / tot["Y"], _hw(1 - b["busy"] / b["Y"]))
    counts = SimCounts(*(sum(getattr(r.counts, f) for r in runs) for f in SimCounts.__dataclass_fields__))
    return SimResult(
        aoi_mean=aoi.mean, aoi_hw=aoi.half_width,
        ee=traffic.D * tot["n"] / tot["E"], ee_hw=_hw(ee_batches),
        moments=moments, counts=counts, corr_S_Y=_merge_co([r.co for r in runs]),
        aoi_sawtooth=sum(r.saw_area for r in runs) / sum(r.saw_span for r in runs),
        transmit_time=est("TT"), idle_fraction=idle_frac, idle_at_generation=est("idle_gen"),
        span=sum(r.span for r in runs), sum_K=sum(r.sum_K for r in runs),
        sum_transmit=sum(r.sum_tx for r in runs), energy_total=sum(r.energy for r in runs),
        Pt=Pt, tP=tP, n_batches=int(n.size), seeds=tuple(seeds), per_replication=tuple(per_rep),
    )


def _resolve_operating(traffic, cfg, tP, Pt) -> tuple[float, float]:
    if (tP is None) == (Pt is None):
        raise ParameterError("give exactly one of tP or Pt")
    if tP is None:
        tP = power_to_time(Pt, cfg, traffic)
    else:
        Pt = time_to_power(tP, cfg, traffic)
    return float(tP), float(Pt)


def _one_run(chan, traffic, cfg, sim, tP, Pt, seed):
    rec = _simulate_records(chan, traffic, tP, sim, seed)
    return _reduce(rec, traffic, tP, Pt, cfg, sim)


def write_trace(path, trace: dict[str, np.ndarray]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_HEADER)
        cols = [trace[k] for k in TRACE_HEADER[1:]]
        for i, row in enumerate(zip(*cols)):
            w.writerow([i, *(repr(float(x)) for x in row[:5]), *(int(x) for x in row[5:])])


def run_simulation(
    chan: ChannelActivity,
    traffic: SdTraffic,
    cfg: RadioConfig,
    sim: SimConfig = SimConfig(),
    *,
    tP: float | None = None,
    Pt: float | None = None,
    trace_path=None,
) -> SimResult:
    """Simulate ``sim.target_cycles`` measured delivery cycles.

    Exactly one of ``tP`` and ``Pt`` selects the operating point.  Means
    carry 95% batch-means half-widths; AoI and EE use per-batch ratio
    estimators.
    """
    tP, Pt = _resolve_operating(traffic, cfg, tP, Pt)
    run, trace = _one_run(chan, traffic, cfg, sim, tP, Pt, sim.seed)
    if trace_path is not None:
        write_trace(trace_path, trace)
    return _assemble([run], traffic, tP, Pt, [int(sim.seed)])


def replications(
    n: int,
    base_seed: int,
    chan: ChannelActivity,
    traffic: SdTraffic,
    cfg: RadioConfig,
    sim: SimConfig = SimConfig(),
    *,
    tP: float | None = None,
    Pt: float | None = None,
    workers: int | None = None,
) -> SimResult:
    """Pool ``n`` independent runs seeded from :func:`replication_seeds`.

    The pooled result uses every batch of every run; ``per_replication``
    holds the individual results in seed order.  Runs execute on a thread
    pool (the engines release the GIL) and are reduced in seed order, so the
    output does not depend on scheduling.
    """
    if n < 1:
        raise ParameterError("need at least one replication")
    tP, Pt = _resolve_operating(traffic, cfg, tP, Pt)
    seeds = replication_seeds(base_seed, n)

    def job(i_seed):
        i, seed = i_seed
        try:
            run, _ = _one_run(chan, traffic, cfg, sim, tP, Pt, seed)
        except SimulationError as exc:
            raise SimulationError(f"replication {i} (seed {seed}): {exc}") from exc
        return run

    with ThreadPoolExecutor(max_workers=workers) as pool:
        runs = list(pool.map(job, enumerate(seeds)))
    singles = [_assemble([r], traffic, tP, Pt, [s]) for r, s in zip(runs, seeds)]
    return _assemble(runs, traffic, tP, Pt, seeds, singles)
