"""
Quantum-jump trajectories of a monitored system.

Measurement events arrive as a Poisson process of rate ``R``.  Between
events the state evolves unitarily under ``H``; the propagation is exact,
done in the Hamiltonian eigenbasis where it reduces to multiplying
``rho_ab`` by ``exp(-i (E_a - E_b) tau)``.  At an event one effect is drawn
with probability ``Tr(rho A^dag A)`` and the state is conditioned on it.

Trajectories are simulated in batches, vectorised across the batch and
stepped event-by-event.  Every batch operation is elementwise per trajectory
(matrix products are written as explicit sums), so a trajectory's result
does not depend on which batch it lands in.  Each trajectory owns a random
stream seeded by :func:`derive_seed` from ``(master_seed, index)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BiasedEffectSet, InvalidOperator
from .evolution import GeneratorVariant, MonitoringModel, TimeGrid, integrate
from .models import EXCITED, dephasing_atom, two_level_monitor
from .operators import DensityOperator, completeness_defect, dagger

CHUNK = 256
SE_FLOOR = 1e-12


@dataclass(frozen=True)
class JumpEvent:
    time: float
    outcome: object
    multiplicity: int
    jump_size: float


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One realisation.  ``states[i]`` is the density matrix at ``grid.times()[i]``."""

    grid: TimeGrid
    states: np.ndarray
    events: tuple
    seed: int

    def state(self, i: int) -> DensityOperator:
        return DensityOperator(self.states[i])


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Ensemble mean and per-entry standard error of the state at every grid point.

    ``stderr`` holds ``sqrt(var(Re) + var(Im)) / sqrt(n)`` for each matrix
    entry (sample variance, zero when ``n == 1``).  Jump statistics are pooled
    over all events of all trajectories.
    """

    grid: TimeGrid
    mean: np.ndarray
    stderr: np.ndarray
    n: int
    master_seed: int
    n_events: int = 0
    mean_jump: float = 0.0
    max_jump: float = 0.0

    def aggregate_stderr(self) -> np.ndarray:
        """Frobenius norm of the stderr matrix at each grid point."""
        return np.sqrt(np.sum(self.stderr ** 2, axis=(-2, -1)))

    def expectation(self, observable) -> tuple[np.ndarray, np.ndarray]:
        """Mean of ``Tr(rho O)`` per grid point, with a conservative stderr.

        The error bar is ``sqrt(sum_ab |O_ba|^2 se_ab^2)``, exact when the
        entries of ``rho`` are uncorrelated and an overestimate otherwise only
        through the neglected covariances.
        """
        o = np.asarray(observable, dtype=complex)
        val = np.real(np.einsum("tab,ba->t", self.mean, o))
        err = np.sqrt(np.einsum("tab,ba->t", self.stderr ** 2, np.abs(o) ** 2).real)
        return val, err


def derive_seed(master_seed: int, index: int) -> int:
    """Seed of trajectory ``index`` in an ensemble with ``master_seed``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def _event_draws(seed: int, rate: float, t0: float, t1: float):
    """Poisson event times in ``(t0, t1]`` and one uniform per event."""
    rng = np.random.default_rng(seed)
    if rate <= 0.0 or t1 <= t0:
        return np.empty(0), np.empty(0)
    lam = rate * (t1 - t0)
    block = int(lam + 4.0 * math.sqrt(lam)) + 8
    scale = 1.0 / rate
    pieces = []
    t = t0
    while True:
        gaps = rng.exponential(scale, block)
        times = t + np.cumsum(gaps)
        pieces.append(times)
        t = times[-1]
        if t > t1:
            break
    times = np.concatenate(pieces)
    times = times[times <= t1]
    return times, rng.random(times.size)


def _mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched matrix product as an explicit sum over the inner index."""
    out = a[..., :, 0, None] * b[..., None, 0, :]
    for j in range(1, a.shape[-1]):
        out = out + a[..., :, j, None] * b[..., None, j, :]
    return out


def _trace_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a - b
    diff = 0.5 * (diff + dagger(diff))
    if diff.shape[-1] == 2:
        # traceless 2x2 Hermitian: eigenvalues +-sqrt(((d00-d11)/2)^2 + |d01|^2)
        half = 0.5 * (diff[..., 0, 0].real - diff[..., 1, 1].real)
        return np.sqrt(half * half + np.abs(diff[..., 0, 1]) ** 2)
    return 0.5 * np.sum(np.abs(np.linalg.eigvalsh(diff)), axis=-1)


class _Propagator:
    """Model data rotated into the Hamiltonian eigenbasis, shared read-only by batches."""

    def __init__(self, model: MonitoringModel):
        defect = completeness_defect(model.effects)
        if defect > 1e-9:
            raise BiasedEffectSet(f"completeness defect {defect:.3e} exceeds 1e-9")
        energies, v = model.eig
        self.v = v
        self.vh = dagger(v)
        self.gaps = energies[:, None] - energies[None, :]
        a = _mm(self.vh[None], _mm(model.effects.stack, v[None]))
        self.a = a
        self.ad = dagger(a)
        self.povm_t = np.swapaxes(_mm(self.ad, a), -1, -2)
        self.keys = model.effects.keys
        self.rate = model.rate

    def to_eigen(self, rho):
        return _mm(self.vh, _mm(rho, self.v))

    def from_eigen(self, rho):
        return _mm(self.v, _mm(rho, self.vh))

    def drift(self, rho, tau):
        return rho * np.exp(-1j * self.gaps * tau[:, None, None])


def _run_batch(prop: _Propagator, rho0: np.ndarray, grid: TimeGrid, seeds: Sequence[int],
               record_events: bool = False):
    """Simulate ``len(seeds)`` trajectories; returns snapshots and event data."""
    times = grid.times()
    n, g, d = len(seeds), times.size, rho0.shape[0]
    draws = [_event_draws(s, prop.rate, grid.t0, grid.t1) for s in seeds]
    m_max = max((t.size for t, _ in draws), default=0)
    ev_t = np.full((n, m_max + 1), np.inf)
    ev_u = np.zeros((n, m_max + 1))
    for i, (t, u) in enumerate(draws):
        ev_t[i, :t.size] = t
        ev_u[i, :u.size] = u

    rho = np.broadcast_to(prop.to_eigen(rho0[None]), (n, d, d)).copy()
    snaps = np.empty((n, g, d, d), dtype=complex)
    t_prev = np.full(n, grid.t0)
    rows = np.arange(n)
    choice_log = np.full((n, m_max), -1, dtype=np.int64) if record_events else None
    jump_log = np.zeros((n, m_max))
    jump_count = 0
    jump_sum = 0.0
    jump_max = 0.0

    for m in range(m_max + 1):
        t_next = ev_t[:, m]
        # snapshots on [t_prev, t_next): events tie-break before coinciding grid points
        lo = np.searchsorted(times, t_prev, side="left")
        hi = np.searchsorted(times, t_next, side="left")
        counts = hi - lo
        total = int(counts.sum())
        if total:
            owner = np.repeat(rows, counts)
            offset = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
            gi = lo[owner] + offset
            snaps[owner, gi] = prop.drift(rho[owner], times[gi] - t_prev[owner])
        active = np.isfinite(t_next)
        t_prev = np.where(active, t_prev, np.inf)
        if m == m_max or not active.any():
            break
        idx = np.nonzero(active)[0]
        r = prop.drift(rho[idx], t_next[idx] - t_prev[idx])
        probs = np.sum(r[:, None, :, :] * prop.povm_t[None], axis=(-2, -1)).real
        k = np.sum(np.cumsum(probs, axis=1) < (ev_u[idx, m] * probs.sum(axis=1))[:, None], axis=1)
        k = np.minimum(k, probs.shape[1] - 1)
        p = probs[np.arange(idx.size), k]
        post = _mm(prop.a[k], _mm(r, prop.ad[k])) / p[:, None, None]
        post = 0.5 * (post + dagger(post))
        jumps = _trace_distance(r, post)
        jump_count += idx.size
        jump_sum += float(jumps.sum())
        jump_max = max(jump_max, float(jumps.max()))
        if record_events:
            choice_log[idx, m] = k
            jump_log[idx, m] = jumps
        rho[idx] = post
        t_prev[idx] = t_next[idx]

    states = prop.from_eigen(snaps)
    events = None
    if record_events:
        events = [
            tuple(JumpEvent(float(ev_t[i, m]), prop.keys[choice_log[i, m]][0],
                            prop.keys[choice_log[i, m]][1], float(jump_log[i, m]))
                  for m in range(m_max) if choice_log[i, m] >= 0)
            for i in range(n)
        ]
    return states, events, (jump_count, jump_sum, jump_max)


def _initial(rho0, model: MonitoringModel) -> np.ndarray:
    r = rho0 if isinstance(rho0, DensityOperator) else DensityOperator(rho0)
    if r.dim != model.dim:
        raise InvalidOperator(f"state dimension {r.dim} does not match model dimension {model.dim}")
    return np.array(r.matrix)


def simulate_trajectory(rho0, model: MonitoringModel, grid: TimeGrid, seed: int) -> Trajectory:
    """Simulate one trajectory; identical inputs and seed give identical output."""
    prop = _Propagator(model)
    states, events, _ = _run_batch(prop, _initial(rho0, model), grid, [seed], record_events=True)
    return Trajectory(grid, states[0], events[0], int(seed))


def _chunk_stats(prop, rho0, grid, seeds):
    states, _, jumps = _run_batch(prop, rho0, grid, seeds)
    mean = states.mean(axis=0)
    dev = states - mean
    m2 = np.sum(dev.real ** 2 + dev.imag ** 2, axis=0)
    return len(seeds), mean, m2, jumps


def ensemble_average(rho0, model: MonitoringModel, grid: TimeGrid, n: int, master_seed: int,
                     workers: int | None = None) -> EnsembleResult:
    """Mean and standard error over ``n`` trajectories.

    Trajectory ``i`` uses ``derive_seed(master_seed, i)``.  Trajectories are
    processed in fixed chunks of ``CHUNK`` and the chunk statistics are
    merged in chunk order (pairwise mean/variance update), so the result is
    the same for any ``workers`` count.
    """
    if n < 1:
        raise ValueError(f"need at least one trajectory, got {n}")
    prop = _Propagator(model)
    r0 = _initial(rho0, model)
    seeds = [derive_seed(master_seed, i) for i in range(n)]
    chunks = [seeds[i:i + CHUNK] for i in range(0, n, CHUNK)]
    if workers and workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda s: _chunk_stats(prop, r0, grid, s), chunks))
    else:
        parts = [_chunk_stats(prop, r0, grid, s) for s in chunks]

    count, mean, m2, _ = parts[0]
    for nb, mb, m2b, _ in parts[1:]:
        tot = count + nb
        delta = mb - mean
        mean = mean + delta * (nb / tot)
        m2 = m2 + m2b + (np.abs(delta) ** 2) * (count * nb / tot)
        count = tot
    var = m2 / (n - 1) if n > 1 else np.zeros_like(m2)
    stderr = np.sqrt(var / n)
    jc = sum(p[3][0] for p in parts)
    js = sum(p[3][1] for p in parts)
    jm = max(p[3][2] for p in parts)
    return EnsembleResult(grid, mean, stderr, n, int(master_seed), jc,
                          js / jc if jc else 0.0, jm)


def jump_size_stats(traj: Trajectory) -> tuple[float, float]:
    """``(max, mean)`` trace distance over the events of ``traj``; ``(0, 0)`` without events."""
    if not traj.events:
        return 0.0, 0.0
    sizes = np.array([e.jump_size for e in traj.events])
    return float(sizes.max()), float(sizes.mean())


def zeno_survival(omega: float, eps: float, rate: float, duration: float, n: int,
                  master_seed: int) -> tuple[float, float]:
    """Monte Carlo estimate of the excited-state population after ``duration``.

    The atom starts in ``|e>`` and is driven at Rabi frequency ``omega`` while
    monitored with strength ``eps`` at rate ``rate``.  Returns
    ``(survival, stderr)``.
    """
    model = two_level_monitor(omega, eps, rate)
    grid = TimeGrid(0.0, duration, duration) if duration > 0 else TimeGrid(0.0, 0.0, 1.0)
    res = ensemble_average(EXCITED, model, grid, n, master_seed)
    return float(res.mean[-1, 1, 1].real), float(res.stderr[-1, 1, 1])


@dataclass(frozen=True)
class WeakLimitPoint:
    eps: float
    rate: float
    mean_jump: float
    max_jump: float
    n_events: int
    coherence: np.ndarray
    coherence_stderr: np.ndarray
    max_deviation_sigma: float


@dataclass(frozen=True)
class WeakLimitSweep:
    gamma_eff: float
    times: np.ndarray
    reference: np.ndarray
    points: tuple
    slope: float


def weak_limit_sweep(eps_values: Sequence[float], gamma_eff: float, duration: float,
                     dt: float, n: int, master_seed: int, omega: float = 0.0) -> WeakLimitSweep:
    """Shrink the measurement strength at fixed ``R eps^2 / 2 = gamma_eff``.

    For each strength, runs ``n`` trajectories from ``|+x>`` and records the
    mean per-event jump size and the ensemble coherence ``Re rho_ge``.  The
    coherence is compared with a Lindblad dephasing model of rate
    ``gamma_eff`` (integrated at step ``1e-3``), and the log-log slope of mean
    jump size against strength is fitted by least squares.
    """
    grid = TimeGrid(0.0, duration, dt)
    plus = np.full((2, 2), 0.5, dtype=complex)
    ref_step = 1e-3
    stride = int(round(dt / ref_step))
    ref_grid = TimeGrid(0.0, duration, dt / stride)
    ref = integrate(plus, dephasing_atom(omega, gamma_eff), GeneratorVariant.PREDICTIVE,
                    ref_grid, stride=stride)
    ref_coh = ref[:, 0, 1].real
    points = []
    for j, eps in enumerate(eps_values):
        rate = 2.0 * gamma_eff / eps ** 2
        res = ensemble_average(plus, two_level_monitor(omega, eps, rate), grid, n,
                               derive_seed(master_seed, j))
        coh = res.mean[:, 0, 1].real
        se = res.stderr[:, 0, 1]
        # floor keeps round-off at zero-variance points (t = 0) from diverging
        z = np.abs(coh - ref_coh) / np.maximum(se, SE_FLOOR)
        points.append(WeakLimitPoint(float(eps), rate, res.mean_jump, res.max_jump,
                                     res.n_events, coh, se, float(z.max())))
    slope = float(np.polyfit(np.log([p.eps for p in points]),
                             np.log([p.mean_jump for p in points]), 1)[0]) if len(points) > 1 else float("nan")
    return WeakLimitSweep(gamma_eff, grid.times(), ref_coh, tuple(points), slope)
