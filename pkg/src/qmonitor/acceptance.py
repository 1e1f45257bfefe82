"""
Acceptance checks, one function per criterion.

Each check returns a :class:`CriterionResult`; ``selfcheck`` prints one line
per criterion and the pytest module asserts on them.  Scenario sizes, seeds
and tolerances are fixed here.
"""

from __future__ import annotations

import json
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .causality import attenuated, bias_report, collapse_time_scan, retro_energy_profile, signaling_test
from .evolution import GeneratorVariant, TimeGrid, integrate
from .models import (
    EXCITED,
    GROUND,
    CvOutcomeGrid,
    amplitude_damping_effects,
    bloch_vector,
    cv_monitor,
    cv_povm,
    damped_cavity,
    fock,
    photodetector_mode,
    sigma_z_povm,
    two_level_monitor,
)
from .operators import (
    DensityOperator,
    PreparationEnsemble,
    apply_effect,
    born_probability,
    completeness_defect,
    dagger,
    weak_effect_family,
)
from .trajectories import ensemble_average, weak_limit_sweep, zeno_survival

SEED = 20240611


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        info = " ".join(f"{k}={_short(v)}" for k, v in self.detail.items())
        return f"[{status}] {self.number:2d} {self.name}: {info}"


def _short(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def criterion_1() -> CriterionResult:
    """Every bundled effect set resolves the identity."""
    sets = {}
    for eps in (0.0, 0.1, 0.3, 0.5, 1.0):
        sets[f"two_level eps={eps}"] = two_level_monitor(1.0, eps, 1.0).effects
    for d in (2, 4, 8, 16):
        sets[f"photodetector D={d}"] = photodetector_mode(d, 1.0).effects
    for p in (0.0, 0.25, 0.36, 0.5, 0.75, 1.0):
        sets[f"amplitude_damping p={p}"] = amplitude_damping_effects(p)
    sets["cv_monitor"] = cv_monitor(CvOutcomeGrid(4.0, 0.5, 16), 0.2, 25.0).effects
    worst_model = max(completeness_defect(s) for s in sets.values())
    cv = cv_povm(CvOutcomeGrid(4.0, 0.5, 16))
    weak = max(completeness_defect(weak_effect_family(povm, eps))
               for eps in (0.0, 0.1, 0.5, 1.0) for povm in (sigma_z_povm(), cv))
    ok = worst_model <= 1e-10 and weak <= 1e-12
    return CriterionResult(1, "unbiasedness", ok,
                           {"max_model_defect": worst_model, "max_weak_defect": weak})


def criterion_2() -> CriterionResult:
    """Single-photon detection: certain click, vacuum afterwards, no second click."""
    worst_state = worst_p = worst_second = 0.0
    for d in range(2, 17):
        eff = {e.outcome: e.matrix for e in photodetector_mode(d, 1.0).effects}
        post, p = apply_effect(fock(d, 1), eff["click"])
        worst_state = max(worst_state, float(np.max(np.abs(post.matrix - fock(d, 0)))))
        worst_p = max(worst_p, abs(p - 1.0))
        click_povm = dagger(eff["click"]) @ eff["click"]
        worst_second = max(worst_second, abs(born_probability(post, click_povm)))
    ok = worst_state <= 1e-12 and worst_p <= 1e-12 and worst_second <= 1e-12
    return CriterionResult(2, "photodetection example", ok,
                           {"state_err": worst_state, "click_prob_err": worst_p,
                            "second_click_prob": worst_second})


def criterion_3() -> CriterionResult:
    """Trajectory ensemble reproduces the monitoring master equation."""
    model = two_level_monitor(1.0, 0.3, 20.0)
    grid = TimeGrid(0.0, 5.0, 0.1)
    start = time.perf_counter()
    res = ensemble_average(EXCITED, model, grid, 5000, SEED)
    elapsed = time.perf_counter() - start
    me = integrate(EXCITED, model, GeneratorVariant.PREDICTIVE, TimeGrid(0.0, 5.0, 1e-3), stride=100)
    td = 0.5 * np.linalg.norm(bloch_vector(res.mean) - bloch_vector(me), axis=1)
    tol = np.maximum(3.0 * res.aggregate_stderr(), 5e-2)
    ok = len(td) == 51 and bool(np.all(td <= tol)) and elapsed <= 60.0
    return CriterionResult(3, "trajectory / master-equation consistency", ok,
                           {"grid_points": len(td), "max_trace_distance": float(td.max()),
                            "runtime_ok": elapsed <= 60.0})


def _scan_spread(dt: float) -> float:
    model = two_level_monitor(1.0, 0.5, 8.0)  # rate * eps^2 / 2 = 1 over a unit interval
    plus = np.full((2, 2), 0.5, dtype=complex)
    prep = PreparationEnsemble((DensityOperator(EXCITED), DensityOperator(GROUND), DensityOperator(plus)))
    return collapse_time_scan(prep, sigma_z_povm(), model, GeneratorVariant.RETRO_ADJOINT,
                              0.0, 1.0, 11, dt).spread


def criterion_4() -> CriterionResult:
    """Collapse-time invariance for the forward/backward monitoring pair."""
    coarse = _scan_spread(1e-3)
    fine = _scan_spread(5e-4)
    ratio = coarse / fine if fine > 0 else math.inf
    ok = coarse <= 1e-8 and ratio >= 8.0
    return CriterionResult(4, "collapse-time invariance", ok,
                           {"spread_dt_1e-3": coarse, "spread_dt_5e-4": fine,
                            "halving_ratio": ratio})


def criterion_5() -> CriterionResult:
    """Amplitude damping is unbiased forward but not under reversed operator order."""
    rep = bias_report(amplitude_damping_effects(0.36))
    ok = (rep.forward_defect <= 1e-10 and abs(rep.reversed_defect - 0.36) <= 1e-12
          and rep.verdict.value == "unbiased-forward-only")
    return CriterionResult(5, "irreversibility witness", ok,
                           {"forward_defect": rep.forward_defect,
                            "reversed_defect": rep.reversed_defect, "verdict": rep.verdict.value})


def criterion_6() -> CriterionResult:
    """Weak rapid limit: jumps shrink linearly, averaged dynamics stay fixed."""
    sweep = weak_limit_sweep([0.2, 0.1, 0.05, 0.025], 0.5, 4.0, 0.1, 1000, SEED)
    worst = max(p.max_deviation_sigma for p in sweep.points)
    ok = abs(sweep.slope - 1.0) <= 0.1 and worst <= 3.0
    return CriterionResult(6, "weak rapid measurement limit", ok,
                           {"slope": sweep.slope, "max_coherence_deviation_sigma": worst})


def criterion_7() -> CriterionResult:
    """Zeno freezing and monotone survival in the measurement strength."""
    strong, _ = zeno_survival(1.0, 1.0, 100.0, math.pi, 2000, SEED)
    curve = [zeno_survival(1.0, eps, 20.0, math.pi, 2000, SEED + 1 + i)
             for i, eps in enumerate((0.0, 0.25, 0.5, 0.75, 1.0))]
    monotone = all(b[0] >= a[0] - 3.0 * math.hypot(a[1], b[1]) - 1e-12
                   for a, b in zip(curve, curve[1:]))
    ok = strong >= 0.9 and monotone
    return CriterionResult(7, "Zeno regime", ok,
                           {"strong_survival": strong, "monotone": monotone,
                            "curve": "[" + ", ".join(f"{s:.4f}" for s, _ in curve) + "]"})


def criterion_8() -> CriterionResult:
    """Later events do not change earlier statistics unless the set is biased."""
    model = two_level_monitor(1.0, 0.8, 5.0)
    rho0 = np.eye(2, dtype=complex) / 2
    fair = signaling_test(rho0, model.effects, model.hamiltonian, model.rate, 1, 3, 10_000, SEED)
    biased_set = attenuated(model.effects, "-", 0.5)
    biased = signaling_test(rho0, biased_set, model.hamiltonian, model.rate, 1, 3, 10_000, SEED)
    ok = fair.max_z <= 3.0 and biased.max_z > 5.0
    return CriterionResult(8, "no retro-signaling", ok,
                           {"unbiased_max_z": fair.max_z, "biased_max_z": biased.max_z})


def criterion_9() -> CriterionResult:
    """Backward-evolved vacuum detection gains energy and is truncation-stable."""
    grid = TimeGrid(0.0, 0.25, 1e-3)
    profiles = [retro_energy_profile(damped_cavity(d, 1.0, 1.0), fock(d, 0), grid) for d in (12, 16)]
    worst_drop = float(-np.min(np.diff(profiles[0])))
    change = float(np.max(np.abs(profiles[0] - profiles[1])))
    ok = worst_drop <= 1e-9 and change <= 1e-6
    return CriterionResult(9, "retrodictive energy gain", ok,
                           {"largest_backward_decrease": max(worst_drop, 0.0),
                            "truncation_change": change, "earliest_mean_n": float(profiles[0][-1])})


DETERMINISM_CONFIGS = [
    {"scenario": "trajectory", "model": {"name": "two_level_monitor"}, "grid": {"t1": 2.0, "dt": 0.1}},
    {"scenario": "ensemble", "model": {"name": "two_level_monitor"}, "n_traj": 200,
     "grid": {"t1": 2.0, "dt": 0.1}},
    {"scenario": "collapse-scan", "model": {"name": "decaying_atom"},
     "grid": {"t0": 0.0, "t1": 1.0, "dt": 1e-3}},
    {"scenario": "weak-limit", "model": {"name": "two_level_monitor", "params": {"omega": 0.0}},
     "n_traj": 50, "grid": {"t1": 1.0, "dt": 0.1}, "options": {"eps_values": [0.4, 0.2]}},
    {"scenario": "zeno", "model": {"name": "two_level_monitor", "params": {"eps": 1.0, "rate": 100.0}},
     "n_traj": 200, "grid": {"t1": 3.0, "dt": 0.1}},
    {"scenario": "bias-report", "model": {"name": "amplitude_damping"}},
    {"scenario": "retro-energy", "model": {"name": "damped_cavity"},
     "grid": {"t0": 0.0, "t1": 0.25, "dt": 1e-3}},
]


def criterion_10() -> CriterionResult:
    """Every scenario writes byte-identical files when rerun with the same seed."""
    from .cli import run

    mismatched = []
    with tempfile.TemporaryDirectory() as tmp:
        for k, base in enumerate(DETERMINISM_CONFIGS):
            outputs = []
            prefix = Path(tmp) / f"scenario{k}"
            files = [Path(f"{prefix}{ext}") for ext in (".csv", ".json")]
            for _ in range(2):
                cfg = json.loads(json.dumps(base))
                cfg["master_seed"] = SEED
                cfg["output"] = {"path": str(prefix)}
                status = run(cfg)
                if status != 0:
                    mismatched.append(f"{base['scenario']}(exit {status})")
                    break
                outputs.append(tuple(f.read_bytes() for f in files))
                for f in files:
                    f.unlink()
            if len(outputs) == 2 and outputs[0] != outputs[1]:
                mismatched.append(base["scenario"])
    return CriterionResult(10, "determinism", not mismatched,
                           {"scenarios": len(DETERMINISM_CONFIGS),
                            "mismatched": ",".join(mismatched) or "none"})


CRITERIA = {i: globals()[f"criterion_{i}"] for i in range(1, 11)}


def run_all(only=None) -> list[CriterionResult]:
    numbers = sorted(set(only)) if only else sorted(CRITERIA)
    return [CRITERIA[i]() for i in numbers]
