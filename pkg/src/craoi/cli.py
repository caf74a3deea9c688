"""Command-line front end: ``craoi {analytic,simulate,optimize,sweep}``.

A config is one JSON document.  Scenario keys follow the model symbols:
``u``, ``v`` (or ``k`` = v/u), ``lambda``, ``D``, ``B``, ``theta``, ``L``,
``Ps``, ``Pc``, ``Pmax``, ``N0_rx_dbm``, exactly one of ``Pt``/``tP``, and
optionally ``delta_max`` and a ``sim`` block.  A sweep document adds
``axis``, ``values`` and optionally ``curves`` (a list of labelled
overrides), ``point`` (the default axis value for single-point commands),
``outputs`` and ``with_simulation``.

Output is CSV with ``#`` metadata lines first.  Data rows are deterministic
for a fixed config and seed; the metadata carries a timestamp.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from . import __version__, analytic
from .optimizer import AoiConstraint, TpoaResult, t_min, tpoa
from .params import ChannelActivity, ParameterError, RadioConfig, SdTraffic, power_to_time, time_to_power
from .simulator import MOMENT_NAMES, SimConfig, SimResult, SimulationError, Z95, replications, run_simulation

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_INFEASIBLE = 4
EXIT_ASYMPTOTIC = 5

AXES = ("u_fixed_k", "Pt", "tP", "lambda", "D")
_RADIO_KEYS = ("L", "B", "N0_rx_dbm", "theta", "Ps", "Pc", "Pmax")
_SCENARIO_KEYS = {"u", "v", "k", "lambda", "D", "Pt", "tP", "delta_max", "sim", "label", *_RADIO_KEYS}
_SIM_KEYS = {"seed", "cycles", "warmup", "batches", "engine", "replications", "max_events"}
_SWEEP_KEYS = {"axis", "values", "fixed", "curves", "point", "outputs", "with_simulation", "description"}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Scenario:
    label: str
    chan: ChannelActivity
    traffic: SdTraffic
    radio: RadioConfig
    tP: float
    Pt: float
    constraint: AoiConstraint | None
    sim: SimConfig
    replications: int = 1

    @property
    def power_ok(self) -> bool:
        return self.Pt <= self.radio.Pmax * (1 + 1e-12)


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple[float, ...]
    base: dict
    curves: tuple[dict, ...]
    outputs: tuple[str, ...]
    with_simulation: bool


def _num(d: dict, key: str) -> float:
    val = d[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{key!r} must be a number, got {val!r}")
    return float(val)


def _sim_config(block: dict | None, overrides: dict) -> tuple[SimConfig, int]:
    block = dict(block or {})
    unknown = set(block) - _SIM_KEYS
    if unknown:
        raise ConfigError(f"unknown sim keys: {sorted(unknown)}")
    block.update({k: v for k, v in overrides.items() if v is not None})
    sim = SimConfig(
        seed=int(block.get("seed", 0)),
        target_cycles=int(block.get("cycles", 1_000_000)),
        warmup_cycles=int(block.get("warmup", 1_000)),
        batches=int(block.get("batches", 32)),
        engine=str(block.get("engine", "fast")),
        max_events=int(block.get("max_events", 10**11)),
    )
    reps = int(block.get("replications", 1))
    if reps < 1:
        raise ConfigError("replications must be >= 1")
    return sim, reps


def build_scenario(d: dict, sim_overrides: dict | None = None) -> Scenario:
    """Validate a flat scenario dict and build the model objects."""
    unknown = set(d) - _SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"unknown scenario keys: {sorted(unknown)}")
    for key in ("u", "lambda", "D", "L"):
        if key not in d:
            raise ConfigError(f"missing required key {key!r}")
    if ("v" in d) == ("k" in d):
        raise ConfigError("give exactly one of 'v' and 'k'")
    if ("Pt" in d) == ("tP" in d):
        raise ConfigError("give exactly one of 'Pt' and 'tP'")
    u = _num(d, "u")
    chan = ChannelActivity(u, _num(d, "v")) if "v" in d else ChannelActivity.from_ratio(u, _num(d, "k"))
    traffic = SdTraffic(_num(d, "lambda"), _num(d, "D"))
    radio = RadioConfig(**{k: _num(d, k) for k in _RADIO_KEYS if k in d})
    if "Pt" in d:
        Pt = _num(d, "Pt")
        tP = power_to_time(Pt, radio, traffic)
    else:
        tP = _num(d, "tP")
        Pt = time_to_power(tP, radio, traffic)
    constraint = None
    if "delta_max" in d:
        dm = d["delta_max"]
        if isinstance(dm, dict):
            if set(dm) != {"lower_bound_multiple"}:
                raise ConfigError("delta_max object must be {'lower_bound_multiple': m}")
            dm = float(dm["lower_bound_multiple"]) * (1 / traffic.lam + t_min(radio, traffic))
        elif dm == "inf":
            dm = math.inf
        constraint = AoiConstraint(float(dm))
    sim, reps = _sim_config(d.get("sim"), sim_overrides or {})
    return Scenario(str(d.get("label", "")), chan, traffic, radio, float(tP), float(Pt), constraint, sim, reps)


def _axis_values(spec) -> tuple[float, ...]:
    if isinstance(spec, list):
        vals = [float(x) for x in spec]
    elif isinstance(spec, dict) and len(spec) == 1 and next(iter(spec)) in ("log", "linear"):
        kind, (lo, hi, n) = next(iter(spec.items()))
        n = int(n)
        vals = list(np.geomspace(lo, hi, n) if kind == "log" else np.linspace(lo, hi, n))
        vals = [float(x) for x in vals]
    else:
        raise ConfigError("values must be a list or {'log'|'linear': [lo, hi, n]}")
    if not vals:
        raise ConfigError("values must be non-empty")
    if any(not (x > 0) for x in vals):
        raise ConfigError("swept values must be positive")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ConfigError("swept values must be strictly increasing")
    return tuple(vals)


def apply_axis(d: dict, axis: str, value: float) -> dict:
    d = dict(d)
    if axis == "u_fixed_k":
        if "k" not in d:
            if "v" in d and "u" in d:
                d["k"] = float(d["v"]) / float(d["u"])
            else:
                raise ConfigError("u_fixed_k sweep needs 'k' (or 'u' and 'v') in the fixed scenario")
        d.pop("v", None)
        d["u"] = value
    elif axis in ("Pt", "tP"):
        d.pop("Pt", None)
        d.pop("tP", None)
        d[axis] = value
    else:
        d[axis] = value
    return d


def load_document(path: str | None, preset: str | None) -> dict:
    if (path is None) == (preset is None):
        raise ConfigError("give exactly one of --config and --preset")
    try:
        if preset is not None:
            text = resources.files("craoi").joinpath("presets", f"{preset}.json").read_text()
        else:
            with open(path) as fh:
                text = fh.read()
        doc = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


def _is_sweep(doc: dict) -> bool:
    return "axis" in doc


def scenario_dicts(doc: dict, sets: dict) -> list[dict]:
    """Flat scenario dicts for single-point commands, one per curve."""
    if not _is_sweep(doc):
        return [{**doc, **sets}]
    unknown = set(doc) - _SWEEP_KEYS
    if unknown:
        raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
    out = []
    for curve in doc.get("curves") or [{}]:
        d = {**doc.get("fixed", {}), **curve, **doc.get("point", {}), **sets}
        out.append(d)
    return out


def sweep_spec(doc: dict, sets: dict) -> SweepSpec:
    if not _is_sweep(doc):
        raise ConfigError("sweep needs 'axis' and 'values'")
    unknown = set(doc) - _SWEEP_KEYS
    if unknown:
        raise ConfigError(f"unknown sweep keys: {sorted(unknown)}")
    axis = doc["axis"]
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {AXES}")
    outputs = tuple(doc.get("outputs", ()))
    known = set(analytic.Metrics.__dataclass_fields__) | set(analytic.CycleMoments.__dataclass_fields__)
    bad = [o for o in outputs if o not in known]
    if bad:
        raise ConfigError(f"unknown outputs: {bad}")
    return SweepSpec(
        axis=axis,
        values=_axis_values(doc.get("values")),
        base={**doc.get("fixed", {}), **sets},
        curves=tuple(doc.get("curves") or [{}]),
        outputs=outputs,
        with_simulation=bool(doc.get("with_simulation", False)),
    )


# ---------------------------------------------------------------------------
# Row builders
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _z(sim: float, hw: float, ref: float) -> float:
    se = hw / Z95
    return (sim - ref) / se if se > 0 else math.nan


def _scenario_cols(sc: Scenario) -> dict:
    return {
        "label": sc.label, "u": sc.chan.u, "v": sc.chan.v, "lambda": sc.traffic.lam, "D": sc.traffic.D,
        "Pt": sc.Pt, "tP": sc.tP,
    }


def analytic_row(sc: Scenario) -> dict:
    m = analytic.energy_metrics(sc.chan, sc.traffic, sc.tP, sc.radio, allow_extrapolation=True)
    cm = analytic.cycle_moments(sc.chan, sc.traffic, sc.tP)
    row = _scenario_cols(sc)
    row.update({k: v for k, v in m.as_dict().items() if k not in ("Pt", "tP")})
    row.update(cm.as_dict())
    row["power_ok"] = sc.power_ok
    return row


def _sim_cols(res: SimResult, m: analytic.Metrics, cm: analytic.CycleMoments) -> dict:
    row = {
        "aoi_sim": res.aoi_mean, "aoi_hw": res.aoi_hw, "aoi_analytic": m.avg_aoi,
        "aoi_z": _z(res.aoi_mean, res.aoi_hw, m.avg_aoi),
        "ee_sim": res.ee, "ee_hw": res.ee_hw, "ee_analytic": m.ee, "ee_z": _z(res.ee, res.ee_hw, m.ee),
    }
    for name in MOMENT_NAMES:
        est = res.moments[name]
        ref = getattr(cm, name)
        row.update({
            f"{name}_sim": est.mean, f"{name}_hw": est.half_width, f"{name}_analytic": ref,
            f"{name}_z": _z(est.mean, est.half_width, ref),
        })
    row.update(res.counts.__dict__)
    row.update({
        "corr_S_Y": res.corr_S_Y, "idle_fraction": res.idle_fraction.mean,
        "transmit_time": res.transmit_time.mean, "aoi_sawtooth": res.aoi_sawtooth,
    })
    return row


def _simulate(sc: Scenario) -> SimResult:
    if sc.replications == 1:
        return run_simulation(sc.chan, sc.traffic, sc.radio, sc.sim, tP=sc.tP)
    return replications(sc.replications, sc.sim.seed, sc.chan, sc.traffic, sc.radio, sc.sim, tP=sc.tP)


def simulate_rows(sc: Scenario, res: SimResult) -> list[dict]:
    m = analytic.energy_metrics(sc.chan, sc.traffic, sc.tP, sc.radio, allow_extrapolation=True)
    cm = analytic.cycle_moments(sc.chan, sc.traffic, sc.tP)
    base = _scenario_cols(sc)
    rows = [{**base, "replication": "pooled", "seed": sc.sim.seed, "cycles": res.counts.delivered, **_sim_cols(res, m, cm)}]
    for i, (single, seed) in enumerate(zip(res.per_replication, res.seeds)):
        rows.append({**base, "replication": i, "seed": seed, "cycles": single.counts.delivered, **_sim_cols(single, m, cm)})
    return rows


def optimize_row(sc: Scenario, r: TpoaResult) -> dict:
    row = {"label": sc.label, "u": sc.chan.u, "v": sc.chan.v, "lambda": sc.traffic.lam, "D": sc.traffic.D,
           "delta_max": sc.constraint.delta_max}
    row.update({
        "feasible": r.feasible, "tP_star": r.tP_star, "Pt_star": r.Pt_star, "ee_star": r.ee_star,
        "aoi_at_star": r.aoi_at_star, "t_min": r.t_min, "t_max": r.t_max,
        "search_steps": r.search_steps, "minimize_steps": r.minimize_steps, "iterations": r.iterations,
    })
    return row


_SWEEP_SIM_COLS = ("ee_sim", "ee_ci", "aoi_sim", "aoi_ci", "ee_z", "aoi_z")


def sweep_columns(spec: SweepSpec) -> list[str]:
    cols = ["curve", spec.axis, "u", "v", "lambda", "D", "Pt", "tP", "power_ok", "ee_analytic", "aoi_analytic",
            "aoi_lower_bound", "asymptotic", *spec.outputs]
    if spec.with_simulation:
        cols += list(_SWEEP_SIM_COLS)
    return cols + ["error"]


def sweep_point(spec: SweepSpec, curve: dict, value: float, sim_overrides: dict) -> dict:
    label = str(curve.get("label", ""))
    row: dict = {"curve": label, spec.axis: value}
    try:
        sc = build_scenario(apply_axis({**spec.base, **curve}, spec.axis, value), sim_overrides)
        m = analytic.energy_metrics(sc.chan, sc.traffic, sc.tP, sc.radio, allow_extrapolation=True)
        row.update({
            "u": sc.chan.u, "v": sc.chan.v, "lambda": sc.traffic.lam, "D": sc.traffic.D, "Pt": sc.Pt, "tP": sc.tP,
            "power_ok": sc.power_ok, "ee_analytic": m.ee, "aoi_analytic": m.avg_aoi,
            "aoi_lower_bound": 1 / sc.traffic.lam + sc.tP, "asymptotic": m.asymptotic,
        })
        if spec.outputs:
            cm = analytic.cycle_moments(sc.chan, sc.traffic, sc.tP).as_dict()
            md = m.as_dict()
            row.update({o: md[o] if o in md else cm[o] for o in spec.outputs})
        if spec.with_simulation:
            res = _simulate(sc)
            row.update({
                "ee_sim": res.ee, "ee_ci": res.ee_hw, "aoi_sim": res.aoi_mean, "aoi_ci": res.aoi_hw,
                "ee_z": _z(res.ee, res.ee_hw, m.ee), "aoi_z": _z(res.aoi_mean, res.aoi_hw, m.avg_aoi),
            })
    except (ParameterError, ConfigError, SimulationError) as exc:
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def run_sweep(spec: SweepSpec, sim_overrides: dict | None = None, workers: int | None = None) -> list[dict]:
    """Evaluate every (curve, value) point; rows come back in input order."""
    jobs = [(c, v) for c in spec.curves for v in spec.values]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda cv: sweep_point(spec, cv[0], cv[1], sim_overrides or {}), jobs))


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------


def render_csv(rows: list[dict], columns: list[str] | None = None, meta: dict | None = None) -> str:
    if columns is None:
        columns = []
        for r in rows:
            columns += [k for k in r if k not in columns]
    buf = io.StringIO()
    buf.write(f"# craoi {__version__}\n")
    for k, v in (meta or {}).items():
        buf.write(f"# {k}: {v}\n")
    buf.write(f"# generated: {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def read_csv_rows(text: str) -> list[dict]:
    """Parse CSV produced by :func:`render_csv`, skipping metadata lines."""
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _parse_sets(items: list[str]) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k] = json.loads(v)
        except json.JSONDecodeError:
            out[k] = v
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="craoi", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"craoi {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("analytic", "closed-form metrics and cycle moments"),
        ("simulate", "Monte Carlo run with analytic values side by side"),
        ("optimize", "energy-efficiency-optimal power under the AoI ceiling"),
        ("sweep", "evaluate a sweep over one parameter"),
    ):
        sp = sub.add_parser(name, help=help_)
        src = sp.add_mutually_exclusive_group()
        src.add_argument("--config", help="JSON scenario or sweep document")
        src.add_argument("--preset", choices=("fig2", "fig3"), help="bundled sweep document")
        sp.add_argument("--output", help="write CSV here instead of stdout")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a scenario key (JSON value)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--cycles", type=int)
        sp.add_argument("--replications", type=int)
        if name == "simulate":
            sp.add_argument("--trace", help="per-cycle CSV trace (single replication only)")
        if name == "optimize":
            sp.add_argument("--require-feasible", action="store_true", help="exit 4 if any scenario is infeasible")
        if name == "sweep":
            sp.add_argument("--simulate", action="store_true", help="add Monte Carlo columns")
    return p


def _emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    sim_over = {"seed": args.seed, "cycles": args.cycles, "replications": args.replications}
    meta = {"command": args.command}
    if args.seed is not None:
        meta["seed"] = args.seed
    try:
        doc = load_document(args.config, args.preset)
        sets = _parse_sets(args.set)
        meta["config"] = args.preset or args.config
        if args.command == "sweep":
            spec = sweep_spec(doc, sets)
            if args.simulate:
                spec = replace(spec, with_simulation=True)
            rows = run_sweep(spec, sim_over)
            _emit(render_csv(rows, sweep_columns(spec), meta), args.output)
            return EXIT_OK
        scenarios = [build_scenario(d, sim_over) for d in scenario_dicts(doc, sets)]
    except (ConfigError, ParameterError, TypeError, KeyError, ValueError) as exc:
        print(f"craoi: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "analytic":
        rows = [analytic_row(sc) for sc in scenarios]
        _emit(render_csv(rows, meta=meta), args.output)
        return EXIT_ASYMPTOTIC if any(r["asymptotic"] for r in rows) else EXIT_OK

    if args.command == "simulate":
        rows = []
        if args.trace and (len(scenarios) > 1 or scenarios[0].replications > 1):
            print("craoi: configuration error: --trace needs a single scenario and one replication", file=sys.stderr)
            return EXIT_CONFIG
        for sc in scenarios:
            try:
                if args.trace:
                    res = run_simulation(sc.chan, sc.traffic, sc.radio, sc.sim, tP=sc.tP, trace_path=args.trace)
                else:
                    res = _simulate(sc)
            except SimulationError as exc:
                print(f"craoi: simulation failed: {exc}", file=sys.stderr)
                return EXIT_SIMULATION
            rows += simulate_rows(sc, res)
        meta["seed"] = scenarios[0].sim.seed
        _emit(render_csv(rows, meta=meta), args.output)
        return EXIT_OK

    # optimize
    if any(sc.constraint is None for sc in scenarios):
        print("craoi: configuration error: optimize needs 'delta_max'", file=sys.stderr)
        return EXIT_CONFIG
    results = [tpoa(sc.chan, sc.traffic, sc.radio, sc.constraint) for sc in scenarios]
    rows = [optimize_row(sc, r) for sc, r in zip(scenarios, results)]
    _emit(render_csv(rows, meta=meta), args.output)
    if args.require_feasible and not all(r.feasible for r in results):
        return EXIT_INFEASIBLE
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
