"""
Causality diagnostics built on the operator and evolution layers.

* :func:`collapse_time_scan` evolves prepared states forward and measured
  probability operators backward to a common collapse time and checks that
  ``Tr(rho_i pi_j)`` does not depend on where they meet.
* :func:`bias_report` classifies an effect set by its forward and
  reversed-order completeness defects.
* :func:`retro_energy_profile` follows the photon number of a backward
  propagated probability operator in a damped cavity.
* :func:`signaling_test` compares the statistics of an early measurement
  event with and without later events being performed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BiasedEffectSet, ImpossibleOutcome, InvalidOperator
from .evolution import GeneratorVariant, LindbladModel, Model, TimeGrid, integrate
from .models import number
from .operators import (
    COMPLETENESS_TOL,
    EffectOperator,
    EffectSet,
    PovmElement,
    PreparationEnsemble,
    as_operator,
    completeness_defect,
    dagger,
    povm_defect,
    reversed_completeness_defect,
    select_index,
)

VERDICT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class CollapseScanResult:
    t_p: float
    t_m: float
    t_c_values: np.ndarray
    probabilities: np.ndarray  # (n_c, n_prep, n_povm), unnormalised
    normalized: np.ndarray     # rows renormalised over the POVM index
    spread: float
    normalized_spread: float
    variant: GeneratorVariant


def _spread(table: np.ndarray) -> float:
    return float(np.max(table.max(axis=0) - table.min(axis=0)))


def collapse_time_scan(prep: PreparationEnsemble, povm: Sequence[PovmElement], model: Model,
                       variant: GeneratorVariant = GeneratorVariant.RETRO_ADJOINT,
                       t_p: float = 0.0, t_m: float = 1.0, n_c: int = 11,
                       dt: float = 1e-3) -> CollapseScanResult:
    """Tabulate ``P(j|i)`` for collapse times on a uniform grid over ``[t_p, t_m]``.

    Each state is integrated forward from ``t_p`` and each POVM element backward
    from ``t_m`` with step ``dt``; the collapse-time spacing must be a multiple
    of ``dt``.  ``spread`` is the largest range of any unnormalised ``P(j|i)``
    over the collapse-time grid.
    """
    variant = GeneratorVariant(variant)
    if not variant.retrodictive:
        raise ValueError("the backward half of the scan needs a retrodictive variant")
    if not t_p < t_m:
        raise ValueError(f"need t_p < t_m, got {t_p}, {t_m}")
    if n_c < 2:
        raise ValueError(f"need at least 2 collapse times, got {n_c}")
    povm = list(povm)
    defect = povm_defect(povm)
    if defect > COMPLETENESS_TOL:
        raise BiasedEffectSet(f"POVM does not sum to the identity (defect {defect:.3e})")
    grid = TimeGrid(t_p, t_m, dt)
    stride, rem = divmod(grid.n_steps, n_c - 1)
    if rem:
        raise ValueError(f"{grid.n_steps} steps cannot be split into {n_c - 1} equal intervals")
    fwd = np.stack([integrate(s.matrix, model, GeneratorVariant.PREDICTIVE, grid, stride=stride)
                    for s in prep.states])                       # (I, n_c, d, d), t_p first
    bwd = np.stack([integrate(p.matrix, model, variant, grid, stride=stride)[::-1]
                    for p in povm])                              # (J, n_c, d, d), t_p first
    table = np.einsum("itab,jtba->tij", fwd, bwd).real
    norm = table / table.sum(axis=2, keepdims=True)
    t_c = t_p + (t_m - t_p) * np.arange(n_c) / (n_c - 1)
    t_c[-1] = t_m
    return CollapseScanResult(t_p, t_m, t_c, table, norm, _spread(table), _spread(norm), variant)


class Verdict(str, enum.Enum):
    REVERSIBLE = "unbiased-and-reversible"
    FORWARD_ONLY = "unbiased-forward-only"
    BIASED = "biased"


@dataclass(frozen=True)
class BiasReport:
    forward_defect: float
    reversed_defect: float
    verdict: Verdict


def bias_report(effects: EffectSet) -> BiasReport:
    """Forward and reversed-order completeness defects, classified at ``1e-9``."""
    fwd = completeness_defect(effects)
    rev = reversed_completeness_defect(effects)
    if fwd > VERDICT_TOL:
        verdict = Verdict.BIASED
    elif rev > VERDICT_TOL:
        verdict = Verdict.FORWARD_ONLY
    else:
        verdict = Verdict.REVERSIBLE
    return BiasReport(fwd, rev, verdict)


def retro_energy_profile(cavity: LindbladModel, pi_m, grid: TimeGrid) -> np.ndarray:
    """Mean photon number ``Tr(n pi)/Tr(pi)`` of the backward-evolved probability operator.

    ``pi_m`` is the measured operator at ``grid.t1``; the adjoint generator
    carries it back to ``grid.t0``.  Entry 0 is the measurement time, the last
    entry the earliest time.
    """
    d = cavity.dim
    if d < 8:
        raise InvalidOperator(f"Fock truncation must be at least 8, got {d}")
    pi = pi_m.matrix if isinstance(pi_m, PovmElement) else PovmElement("m", pi_m).matrix
    stack = integrate(pi, cavity, GeneratorVariant.RETRO_ADJOINT, grid)
    tr = np.trace(stack, axis1=1, axis2=2).real
    if np.any(tr < 1e-12):
        raise ImpossibleOutcome("backward-evolved operator has vanishing trace")
    n_op = number(d)
    return np.einsum("tab,ba->t", stack, n_op).real / tr


def attenuated(effects: EffectSet, outcome, efficiency: float) -> EffectSet:
    """Detector that registers ``outcome`` only with probability ``efficiency``.

    The missed fraction is simply dropped, so the result is a biased set
    whenever ``efficiency < 1``.
    """
    if not 0.0 <= efficiency <= 1.0:
        raise InvalidOperator(f"efficiency must lie in [0, 1], got {efficiency}")
    s = np.sqrt(efficiency)
    return EffectSet(tuple(
        EffectOperator(e.outcome, e.multiplicity, s * e.matrix if e.outcome == outcome else e.matrix)
        for e in effects))


@dataclass(frozen=True)
class SignalingReport:
    outcomes: tuple
    truncated: np.ndarray
    continued: np.ndarray
    n_truncated: int
    n_continued: int
    z_scores: np.ndarray

    @property
    def max_z(self) -> float:
        return float(np.max(self.z_scores))


def event_chain(rho0, effects: EffectSet, hamiltonian, rate: float, n_events: int, n: int,
                rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Run ``n`` systems through ``n_events`` measurement events.

    Events are separated by exponential waiting times of rate ``rate`` with
    unitary drift under ``hamiltonian``.  If the effects do not sum to the
    identity, an event can fail to produce any result; such runs are dropped
    (``kept`` is False), which is what conditioning on the detector firing
    amounts to.  Returns ``(effect_index, kept)`` with ``effect_index`` of
    shape ``(n, n_events)``.
    """
    a = effects.stack
    d = effects.dim
    h = as_operator(hamiltonian, d)
    energies, v = np.linalg.eigh(0.5 * (h + dagger(h)))
    gaps = energies[:, None] - energies[None, :]
    vh = dagger(v)
    a = vh[None] @ a @ v[None]
    povm_t = np.swapaxes(dagger(a) @ a, -1, -2)
    rho = np.broadcast_to(vh @ as_operator(rho0, d) @ v, (n, d, d)).copy()
    unbiased = completeness_defect(effects) <= VERDICT_TOL
    kept = np.ones(n, dtype=bool)
    chosen = np.full((n, n_events), -1, dtype=np.int64)
    for m in range(n_events):
        tau = rng.exponential(1.0 / rate, n) if rate > 0 else np.zeros(n)
        u = rng.random(n)
        rho = rho * np.exp(-1j * gaps * tau[:, None, None])
        probs = np.sum(rho[:, None] * povm_t[None], axis=(-2, -1)).real
        cdf = np.cumsum(probs, axis=1)
        if unbiased:
            k = select_index(cdf, u)
        else:
            k = np.sum(cdf <= u[:, None], axis=1)
        fired = k < probs.shape[1]
        kept &= fired
        k = np.minimum(k, probs.shape[1] - 1)
        p = np.where(fired, probs[np.arange(n), k], 1.0)
        p = np.where(p > 1e-300, p, 1.0)
        post = a[k] @ rho @ dagger(a[k]) / p[:, None, None]
        rho = np.where(fired[:, None, None], 0.5 * (post + dagger(post)), rho)
        chosen[:, m] = np.where(fired, k, -1)
    return chosen, kept


def signaling_test(rho0, effects: EffectSet, hamiltonian, rate: float, event_index: int,
                   n_later: int, n: int, master_seed: int) -> SignalingReport:
    """Does performing later events change the statistics of event ``event_index``?

    Two independent ensembles of ``n`` runs are drawn: one stops right after
    event ``event_index`` (0-based), the other performs ``n_later`` further
    events.  Outcome frequencies at ``event_index`` over the retained runs are
    compared with a two-sample binomial z-score per outcome label.
    """
    labels = effects.outcomes
    label_of = np.array([labels.index(e.outcome) for e in effects])
    freqs, kept_counts = [], []
    for branch, depth in enumerate((event_index + 1, event_index + 1 + n_later)):
        rng = np.random.default_rng(np.random.SeedSequence(int(master_seed), spawn_key=(branch,)))
        chosen, kept = event_chain(rho0, effects, hamiltonian, rate, depth, n, rng)
        at_m = label_of[chosen[kept, event_index]]
        count = int(kept.sum())
        hist = np.bincount(at_m, minlength=len(labels)).astype(float)
        freqs.append(hist / count if count else hist)
        kept_counts.append(count)
    p1, p2 = freqs
    n1, n2 = kept_counts
    pooled = (p1 * n1 + p2 * n2) / (n1 + n2)
    se = np.sqrt(pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2))
    diff = np.abs(p1 - p2)
    z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(diff > 0, np.inf, 0.0))
    return SignalingReport(tuple(labels), p1, p2, n1, n2, z)
