"""
Command-line scenario runner.

    qmonitor simulate config.json [--scenario S] [--model M] [--seed N] [--ntraj N]
                                  [--t0 T] [--t1 T] [--dt T] [--out PREFIX]
                                  [--param key=value ...]
    qmonitor registry
    qmonitor selfcheck

``simulate`` writes ``PREFIX.csv`` and ``PREFIX.json``.  Exit status: 0 ok,
2 configuration error, 3 numerical guard tripped, 4 self-check failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .causality import bias_report, collapse_time_scan, retro_energy_profile
from .errors import ConfigError, NumericalGuardError, QMonitorError
from .evolution import GeneratorVariant, LindbladModel, MonitoringModel, TimeGrid, integrate
from .models import (
    CvOutcomeGrid,
    amplitude_damping_monitor,
    bloch_vector,
    coherent_ket,
    cv_monitor,
    damped_cavity,
    decaying_atom,
    fock,
    photodetector_mode,
    two_level_monitor,
)
from .operators import DensityOperator, PovmElement, PreparationEnsemble, dagger
from .trajectories import (
    derive_seed,
    ensemble_average,
    simulate_trajectory,
    weak_limit_sweep,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SELFCHECK = 0, 2, 3, 4


@dataclass(frozen=True)
class ModelSpec:
    kind: str  # "monitoring" or "lindblad"
    params: dict
    build: Callable[[dict], Any]
    initial: str
    doc: str


def _cv(p):
    grid = CvOutcomeGrid(float(p["alpha_max"]), float(p["spacing"]), int(p["D"]))
    return cv_monitor(grid, float(p["eps"]), float(p["rate"]), float(p["omega"]))


MODELS: dict[str, ModelSpec] = {
    "amplitude_damping": ModelSpec(
        "monitoring", {"p": 0.36, "rate": 1.0, "omega": 0.0},
        lambda p: amplitude_damping_monitor(float(p["p"]), float(p["rate"]), float(p["omega"])),
        "excited", "two-level atom monitored by the amplitude-damping effect pair"),
    "cv_monitor": ModelSpec(
        "monitoring",
        {"alpha_max": 4.0, "spacing": 0.5, "D": 16, "eps": 0.2, "rate": 25.0, "omega": 1.0},
        _cv, "coherent:1.0", "oscillator under weak joint (x, p) monitoring on a coherent-amplitude grid"),
    "damped_cavity": ModelSpec(
        "lindblad", {"D": 12, "gamma": 1.0, "omega": 1.0},
        lambda p: damped_cavity(int(p["D"]), float(p["gamma"]), float(p["omega"])),
        "fock:0", "field mode losing photons through b = a (Lindblad)"),
    "decaying_atom": ModelSpec(
        "lindblad", {"omega": 0.0, "gamma": 1.0},
        lambda p: decaying_atom(float(p["omega"]), float(p["gamma"])),
        "excited", "two-level atom with spontaneous emission b = sigma_- (Lindblad)"),
    "photodetector_mode": ModelSpec(
        "monitoring", {"D": 4, "rate": 1.0, "omega": 0.0},
        lambda p: photodetector_mode(int(p["D"]), float(p["rate"]), float(p["omega"])),
        "fock:1", "field mode watched by a perfect single-photon absorbing detector"),
    "two_level_monitor": ModelSpec(
        "monitoring", {"omega": 1.0, "eps": 0.3, "rate": 20.0},
        lambda p: two_level_monitor(float(p["omega"]), float(p["eps"]), float(p["rate"])),
        "excited", "Rabi-driven atom (H = omega sigma_x / 2) under weak sigma_z monitoring"),
}

SCENARIOS: dict[str, tuple[str, dict]] = {
    "bias-report": ("forward / reversed completeness defects of a monitoring model's effects",
                    {"drop": None}),
    "collapse-scan": ("P(j|i) over collapse times between grid.t0 and grid.t1",
                      {"variant": "retrodictive-adjoint", "n_c": 11}),
    "ensemble": ("trajectory ensemble mean and stderr against the master equation",
                 {"initial": None, "me_dt": 1e-3}),
    "retro-energy": ("photon number of a backward-evolved measurement operator",
                     {"measured": 0}),
    "trajectory": ("one quantum-jump trajectory", {"initial": None}),
    "weak-limit": ("strength sweep at fixed rate * eps^2 / 2 (two_level_monitor only)",
                   {"eps_values": [0.2, 0.1, 0.05, 0.025], "gamma_eff": 0.5}),
    "zeno": ("survival of |e> under Rabi drive and monitoring (two_level_monitor only)", {}),
}

DEFAULT_CONFIG = {
    "scenario": "trajectory",
    "model": {"name": "two_level_monitor", "params": {}},
    "grid": {"t0": 0.0, "t1": 5.0, "dt": 0.1},
    "n_traj": 100,
    "master_seed": 0,
    "options": {},
    "output": {"path": "out", "format": "csv+json"},
}


def list_registry() -> str:
    """Sorted, human-readable listing of scenarios and models."""
    lines = ["scenarios:"]
    for name in sorted(SCENARIOS):
        doc, opts = SCENARIOS[name]
        lines.append(f"  {name}: {doc}")
        for k in sorted(opts):
            lines.append(f"    option {k} = {json.dumps(opts[k])}")
    lines.append("models:")
    for name in sorted(MODELS):
        spec = MODELS[name]
        lines.append(f"  {name} [{spec.kind}]: {spec.doc}")
        for k in sorted(spec.params):
            lines.append(f"    param {k} = {json.dumps(spec.params[k])}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- config

def _finite(x, what):
    if isinstance(x, bool) or not isinstance(x, (int, float)) or not math.isfinite(x):
        raise ConfigError(f"{what} must be a finite number, got {x!r}")
    return x


def resolve_config(raw: dict) -> dict:
    """Fill defaults and validate; returns the effective config."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - set(DEFAULT_CONFIG)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    for k, v in raw.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k] = {**cfg[k], **v}
        else:
            cfg[k] = v
    if cfg["scenario"] not in SCENARIOS:
        raise ConfigError(f"unknown scenario {cfg['scenario']!r}; see `registry`")
    name = cfg["model"].get("name")
    if name not in MODELS:
        raise ConfigError(f"unknown model {name!r}; see `registry`")
    spec = MODELS[name]
    params = cfg["model"].get("params") or {}
    bad = set(params) - set(spec.params)
    if bad:
        raise ConfigError(f"model {name} has no parameters {sorted(bad)}")
    params = {**spec.params, **params}
    for k, v in params.items():
        _finite(v, f"model parameter {k}")
    cfg["model"] = {"name": name, "params": params}
    for k in ("t0", "t1", "dt"):
        cfg["grid"][k] = float(_finite(cfg["grid"].get(k), f"grid.{k}"))
    for k in ("n_traj", "master_seed"):
        v = cfg[k]
        if isinstance(v, bool) or not isinstance(v, int) or v < (1 if k == "n_traj" else 0):
            raise ConfigError(f"{k} must be a {'positive' if k == 'n_traj' else 'non-negative'} integer, got {v!r}")
    opts = dict(SCENARIOS[cfg["scenario"]][1])
    extra = set(cfg["options"] or {}) - set(opts)
    if extra:
        raise ConfigError(f"scenario {cfg['scenario']} has no options {sorted(extra)}")
    opts.update(cfg["options"] or {})
    cfg["options"] = opts
    if not isinstance(cfg["output"].get("path"), str):
        raise ConfigError("output.path must be a string")
    if cfg["output"].get("format") != "csv+json":
        raise ConfigError("output.format must be 'csv+json'")
    return cfg


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, args: argparse.Namespace) -> dict:
    cfg = copy.deepcopy(raw)
    if args.scenario is not None:
        cfg["scenario"] = args.scenario
    if args.model is not None:
        if cfg.get("model", {}).get("name") != args.model:
            cfg["model"] = {"name": args.model, "params": {}}
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    if args.ntraj is not None:
        cfg["n_traj"] = args.ntraj
    for k in ("t0", "t1", "dt"):
        v = getattr(args, k)
        if v is not None:
            cfg.setdefault("grid", {})[k] = v
    if args.out is not None:
        cfg.setdefault("output", {})["path"] = args.out
    for item in args.param or []:
        if "=" not in item:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg.setdefault("model", {}).setdefault("params", {})[k.strip()] = _parse_value(v)
    return cfg


# ---------------------------------------------------------------- scenarios

def _grid(cfg) -> TimeGrid:
    g = cfg["grid"]
    try:
        return TimeGrid(g["t0"], g["t1"], g["dt"])
    except QMonitorError as exc:
        raise ConfigError(str(exc)) from exc


def _initial_state(text: str, d: int) -> np.ndarray:
    if text == "excited":
        return fock(d, 1)
    if text == "ground":
        return fock(d, 0)
    if text == "plus":
        psi = np.zeros(d, dtype=complex)
        psi[:2] = 1 / math.sqrt(2)
        return np.outer(psi, psi.conj())
    if text == "mixed":
        return np.eye(d, dtype=complex) / d
    kind, _, arg = text.partition(":")
    try:
        if kind == "fock":
            return fock(d, int(arg))
        if kind == "coherent":
            psi = coherent_ket(d, complex(arg))
            return np.outer(psi, psi.conj())
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"bad initial state {text!r}: {exc}") from exc
    raise ConfigError(f"unknown initial state {text!r}")


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def _pop_columns(states: np.ndarray) -> tuple[list, list]:
    d = states.shape[-1]
    head = [f"pop_{i}" for i in range(d)]
    cols = [states[:, i, i].real for i in range(d)]
    if d == 2:
        b = bloch_vector(states)
        head += ["bloch_x", "bloch_y", "bloch_z"]
        cols += [b[:, 0], b[:, 1], b[:, 2]]
    return head, cols


def _need(model, kind, scenario):
    cls = MonitoringModel if kind == "monitoring" else LindbladModel
    if not isinstance(model, cls):
        raise ConfigError(f"scenario {scenario} needs a {kind} model")


def _run_trajectory(cfg, model, grid):
    _need(model, "monitoring", "trajectory")
    init = cfg["options"]["initial"] or MODELS[cfg["model"]["name"]].initial
    seed = derive_seed(cfg["master_seed"], 0)
    traj = simulate_trajectory(_initial_state(init, model.dim), model, grid, seed)
    head, cols = _pop_columns(traj.states)
    sizes = [e.jump_size for e in traj.events]
    metrics = {
        "n_events": len(traj.events),
        "max_jump": max(sizes, default=0.0),
        "mean_jump": float(np.mean(sizes)) if sizes else 0.0,
        "events": [{"time": e.time, "outcome": e.outcome, "multiplicity": e.multiplicity,
                    "jump_size": e.jump_size} for e in traj.events],
    }
    return ["time"] + head, [grid.times()] + cols, metrics, {"trajectory_seed": seed}


def _run_ensemble(cfg, model, grid):
    _need(model, "monitoring", "ensemble")
    init = cfg["options"]["initial"] or MODELS[cfg["model"]["name"]].initial
    rho0 = _initial_state(init, model.dim)
    res = ensemble_average(rho0, model, grid, cfg["n_traj"], cfg["master_seed"])
    me_dt = float(cfg["options"]["me_dt"])
    stride = grid.dt / me_dt
    if abs(stride - round(stride)) > 1e-9:
        raise ConfigError("options.me_dt must divide grid.dt")
    stride = int(round(stride))
    me = integrate(rho0, model, GeneratorVariant.PREDICTIVE,
                   TimeGrid(grid.t0, grid.t1, grid.dt / stride), stride=stride)
    head, cols = _pop_columns(res.mean)
    d = model.dim
    head += [f"pop_{i}_stderr" for i in range(d)] + [f"me_pop_{i}" for i in range(d)]
    cols += [res.stderr[:, i, i] for i in range(d)] + [me[:, i, i].real for i in range(d)]
    diff = res.mean - me
    td = 0.5 * np.sum(np.abs(np.linalg.eigvalsh(0.5 * (diff + dagger(diff)))), axis=1)
    tol = np.maximum(3 * res.aggregate_stderr(), 5e-2)
    head += ["trace_distance_to_me", "tolerance"]
    cols += [td, tol]
    metrics = {"n": res.n, "n_events": res.n_events, "mean_jump": res.mean_jump,
               "max_jump": res.max_jump, "max_trace_distance": float(td.max()),
               "within_tolerance": bool(np.all(td <= tol))}
    seeds = {"trajectory_seed_rule": "SeedSequence(master_seed, spawn_key=(i,))",
             "first_trajectory_seed": derive_seed(cfg["master_seed"], 0)}
    return ["time"] + head, [grid.times()] + cols, metrics, seeds


def _run_collapse_scan(cfg, model, grid):
    opts = cfg["options"]
    d = model.dim
    prep = PreparationEnsemble(tuple(DensityOperator(fock(d, i)) for i in range(d)))
    povm = [PovmElement(j, fock(d, j)) for j in range(d)]
    try:
        variant = GeneratorVariant(opts["variant"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    n_c = int(opts["n_c"])
    try:
        res = collapse_time_scan(prep, povm, model, variant, grid.t0, grid.t1, n_c, grid.dt)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, QMonitorError):
            raise
        raise ConfigError(str(exc)) from exc
    head, cols = [], []
    for i in range(d):
        for j in range(d):
            head.append(f"P_{i}_{j}")
            cols.append(res.probabilities[:, i, j])
    for i in range(d):
        for j in range(d):
            head.append(f"N_{i}_{j}")
            cols.append(res.normalized[:, i, j])
    metrics = {"variant": variant.value, "spread": res.spread,
               "normalized_spread": res.normalized_spread}
    if isinstance(model, LindbladModel):
        # both retrodictive orderings are always reported for Lindblad models
        diag = {}
        for v in (GeneratorVariant.RETRO_ADJOINT, GeneratorVariant.RETRO_REVERSED_ORDER):
            r = collapse_time_scan(prep, povm, model, v, grid.t0, grid.t1, n_c, grid.dt)
            diag[v.value] = {"spread": r.spread, "normalized_spread": r.normalized_spread}
        metrics["variant_diagnostics"] = diag
    return ["time"] + head, [res.t_c_values] + cols, metrics, {}


def _run_weak_limit(cfg, model, grid):
    if cfg["model"]["name"] != "two_level_monitor":
        raise ConfigError("weak-limit runs on two_level_monitor")
    if grid.t0 != 0.0:
        raise ConfigError("weak-limit needs grid.t0 = 0")
    opts = cfg["options"]
    eps_values = [float(e) for e in opts["eps_values"]]
    if len(eps_values) < 2 or any(not 0 < e <= 1 for e in eps_values):
        raise ConfigError("options.eps_values needs at least two strengths in (0, 1]")
    sweep = weak_limit_sweep(eps_values, float(opts["gamma_eff"]), grid.t1, grid.dt,
                             cfg["n_traj"], cfg["master_seed"],
                             omega=float(cfg["model"]["params"]["omega"]))
    head, cols = ["lindblad_coherence"], [sweep.reference]
    for p in sweep.points:
        head += [f"coherence_eps_{p.eps!r}", f"stderr_eps_{p.eps!r}"]
        cols += [p.coherence, p.coherence_stderr]
    metrics = {"slope": sweep.slope, "gamma_eff": sweep.gamma_eff,
               "points": [{"eps": p.eps, "rate": p.rate, "mean_jump": p.mean_jump,
                           "max_jump": p.max_jump, "n_events": p.n_events,
                           "max_deviation_sigma": p.max_deviation_sigma}
                          for p in sweep.points]}
    seeds = {"per_strength_master_seeds": [derive_seed(cfg["master_seed"], j)
                                           for j in range(len(eps_values))]}
    return ["time"] + head, [sweep.times] + cols, metrics, seeds


def _run_zeno(cfg, model, grid):
    if cfg["model"]["name"] != "two_level_monitor":
        raise ConfigError("zeno runs on two_level_monitor")
    res = ensemble_average(fock(2, 1), model, grid, cfg["n_traj"], cfg["master_seed"])
    surv = res.mean[:, 1, 1].real
    se = res.stderr[:, 1, 1]
    omega = float(cfg["model"]["params"]["omega"])
    rabi = np.cos(0.5 * omega * (grid.times() - grid.t0)) ** 2
    metrics = {"survival": float(surv[-1]), "stderr": float(se[-1]),
               "unmonitored": float(rabi[-1]), "duration": grid.t1 - grid.t0}
    return (["time", "survival", "stderr", "unmonitored"], [grid.times(), surv, se, rabi],
            metrics, {"first_trajectory_seed": derive_seed(cfg["master_seed"], 0)})


def _run_bias_report(cfg, model, grid):
    _need(model, "monitoring", "bias-report")
    effects = model.effects
    drop = cfg["options"]["drop"]
    if drop is not None:
        try:
            outcome, mult = drop
            outcome = next(e.outcome for e in effects if str(e.outcome) == str(outcome))
            effects = effects.without(outcome, int(mult))
        except (StopIteration, KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"options.drop {drop!r} does not name an effect") from exc
    rep = bias_report(effects)
    a = effects.stack
    fwd = np.linalg.eigvalsh(np.einsum("kji,kjl->il", a.conj(), a))
    rev = np.linalg.eigvalsh(np.einsum("kij,klj->il", a, a.conj()))
    idx = np.arange(fwd.size)
    metrics = {"forward_defect": rep.forward_defect, "reversed_defect": rep.reversed_defect,
               "verdict": rep.verdict.value}
    return (["time", "index", "forward_eig", "reversed_eig"],
            [np.full(idx.size, grid.t0), idx, fwd, rev], metrics, {})


def _run_retro_energy(cfg, model, grid):
    _need(model, "lindblad", "retro-energy")
    k = int(cfg["options"]["measured"])
    if not 0 <= k < model.dim:
        raise ConfigError(f"options.measured must be a Fock index below {model.dim}")
    prof = retro_energy_profile(model, fock(model.dim, k), grid)
    times = grid.times()[::-1]
    inc = np.diff(prof)
    metrics = {"measured_fock": k, "initial_mean_n": float(prof[0]), "earliest_mean_n": float(prof[-1]),
               "min_backward_increment": float(inc.min()) if inc.size else 0.0}
    return ["time", "mean_photon_number"], [times, prof], metrics, {}


RUNNERS = {
    "bias-report": _run_bias_report,
    "collapse-scan": _run_collapse_scan,
    "ensemble": _run_ensemble,
    "retro-energy": _run_retro_energy,
    "trajectory": _run_trajectory,
    "weak-limit": _run_weak_limit,
    "zeno": _run_zeno,
}


def _to_json(x):
    if isinstance(x, dict):
        return {str(k): _to_json(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_to_json(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def render(cfg: dict) -> tuple[str, str]:
    """Run the scenario and return ``(csv_text, json_text)``."""
    spec = MODELS[cfg["model"]["name"]]
    try:
        model = spec.build(cfg["model"]["params"])
    except NumericalGuardError:
        raise
    except (QMonitorError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot build model: {exc}") from exc
    grid = _grid(cfg)
    head, cols, metrics, seeds = RUNNERS[cfg["scenario"]](cfg, model, grid)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(head)
    for row in zip(*cols):
        w.writerow([_fmt(v) for v in row])
    summary = {"config": cfg, "metrics": metrics,
               "seeds": {"master_seed": cfg["master_seed"], **seeds}, "version": __version__}
    text = json.dumps(_to_json(summary), sort_keys=True, indent=2) + "\n"
    return buf.getvalue(), text


def run(config: dict) -> int:
    """Resolve, execute and write one scenario; returns the exit status."""
    try:
        cfg = resolve_config(config)
        csv_text, json_text = render(cfg)
    except NumericalGuardError as exc:
        print(f"numerical guard: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except QMonitorError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    prefix = Path(cfg["output"]["path"])
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.csv").write_text(csv_text, encoding="utf-8")
    Path(f"{prefix}.json").write_text(json_text, encoding="utf-8")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qmonitor", description=__doc__.split("\n\n")[0].strip())
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", help="run a scenario from a JSON config")
    s.add_argument("config", help="path to a JSON config ('-' for defaults only)")
    s.add_argument("--scenario")
    s.add_argument("--model")
    s.add_argument("--seed", type=int)
    s.add_argument("--ntraj", type=int)
    s.add_argument("--t0", type=float)
    s.add_argument("--t1", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--out")
    s.add_argument("--param", action="append", metavar="KEY=VALUE")
    sub.add_parser("registry", help="list scenarios and models")
    sc = sub.add_parser("selfcheck", help="run the acceptance checks")
    sc.add_argument("--only", type=int, action="append", metavar="N",
                    help="run only criterion N (repeatable)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "registry":
        sys.stdout.write(list_registry())
        return EXIT_OK
    if args.command == "selfcheck":
        from .acceptance import run_all

        results = run_all(args.only)
        for r in results:
            print(r.line())
        return EXIT_OK if all(r.passed for r in results) else EXIT_SELFCHECK
    try:
        raw = {} if args.config == "-" else json.loads(Path(args.config).read_text(encoding="utf-8"))
        raw = apply_overrides(raw, args)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(raw)


if __name__ == "__main__":
    sys.exit(main())
