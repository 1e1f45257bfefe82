"""
Master-equation generators and a fixed-step RK4 integrator.

Three generator families are provided:

* the Lindblad equation for a model with Hamiltonian ``H``, jump operators
  ``b_k`` and rate ``gamma``;
* the monitoring equation ``-i[H, rho] + R (sum A rho A^dag - rho)`` for a
  model measured at average rate ``R`` with effect operators ``A_kl``;
* their retrodictive counterparts, acting on probability operators that are
  propagated backwards in time.

For Lindblad models two retrodictive orderings exist.  ``RETRO_ADJOINT`` is the
Heisenberg adjoint of the forward generator (anticommutator with
``b^dag b``); it preserves the identity and keeps ``Tr(rho pi)`` independent of
the collapse time.  ``RETRO_REVERSED_ORDER`` uses ``b b^dag`` in the
anticommutator instead.  It does not preserve the identity for non-normal
channels and is kept so that its deviation can be measured.

All generators are linear, so :func:`integrate` works on the row-major
vectorisation ``vec(X)`` with a dense ``(d*d, d*d)`` generator matrix.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np

from .errors import DimensionMismatch, InvalidOperator, NumericalGuardError
from .operators import (
    EffectSet,
    as_operator,
    completeness_defect,
    dagger,
    hermitian_deviation,
    operator_norm,
)

STEP_GUARD = 0.1
TRACE_DRIFT_TOL = 1e-7


class GeneratorVariant(str, enum.Enum):
    PREDICTIVE = "predictive"
    RETRO_ADJOINT = "retrodictive-adjoint"
    RETRO_REVERSED_ORDER = "retrodictive-reversed-order"

    @property
    def retrodictive(self) -> bool:
        return self is not GeneratorVariant.PREDICTIVE


def _hamiltonian(h) -> np.ndarray:
    h = as_operator(h)
    dev = hermitian_deviation(h)
    if dev > 1e-10:
        raise InvalidOperator(f"Hamiltonian is not Hermitian (deviation {dev:.3e})")
    h = 0.5 * (h + dagger(h))
    h.setflags(write=False)
    return h


class _EigenCache:
    @cached_property
    def eig(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues and eigenvectors of the Hamiltonian, ``H = V diag(E) V^dag``."""
        return np.linalg.eigh(self.hamiltonian)


@dataclass(frozen=True, eq=False)
class LindbladModel(_EigenCache):
    hamiltonian: np.ndarray
    channels: tuple
    rate: float

    def __post_init__(self):
        h = _hamiltonian(self.hamiltonian)
        chans = tuple(as_operator(b, h.shape[0]) for b in self.channels)
        for b in chans:
            b.setflags(write=False)
        if not self.rate >= 0.0 or not math.isfinite(self.rate):
            raise InvalidOperator(f"rate must be finite and >= 0, got {self.rate}")
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "channels", chans)
        object.__setattr__(self, "rate", float(self.rate))

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    def stiffness(self) -> float:
        return operator_norm(self.hamiltonian) + self.rate * sum(
            operator_norm(b) ** 2 for b in self.channels)


@dataclass(frozen=True, eq=False)
class MonitoringModel(_EigenCache):
    hamiltonian: np.ndarray
    effects: EffectSet
    rate: float

    def __post_init__(self):
        h = _hamiltonian(self.hamiltonian)
        if self.effects.dim != h.shape[0]:
            raise DimensionMismatch(
                f"effects act on dimension {self.effects.dim}, Hamiltonian on {h.shape[0]}")
        defect = completeness_defect(self.effects)
        if defect > 1e-9:
            raise InvalidOperator(f"monitoring effects are biased (defect {defect:.3e})")
        if not self.rate >= 0.0 or not math.isfinite(self.rate):
            raise InvalidOperator(f"rate must be finite and >= 0, got {self.rate}")
        object.__setattr__(self, "hamiltonian", h)
        object.__setattr__(self, "rate", float(self.rate))

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    def stiffness(self) -> float:
        return operator_norm(self.hamiltonian) + self.rate


Model = Union[LindbladModel, MonitoringModel]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0, t0 + dt, ..., t1``."""

    t0: float
    t1: float
    dt: float

    def __post_init__(self):
        if not (math.isfinite(self.t0) and math.isfinite(self.t1) and math.isfinite(self.dt)):
            raise InvalidOperator("time grid values must be finite")
        if self.dt <= 0.0:
            raise InvalidOperator(f"dt must be positive, got {self.dt}")
        if self.t1 < self.t0:
            raise InvalidOperator(f"t1 = {self.t1} precedes t0 = {self.t0}")
        ratio = (self.t1 - self.t0) / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise InvalidOperator(f"(t1 - t0)/dt = {ratio!r} is not an integer")

    @property
    def n_steps(self) -> int:
        return int(round((self.t1 - self.t0) / self.dt))

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def __len__(self) -> int:
        return self.n_steps + 1


def _check_dim(x: np.ndarray, model: Model) -> np.ndarray:
    x = np.asarray(x, dtype=complex)
    if x.shape != (model.dim, model.dim):
        raise DimensionMismatch(f"operator has shape {x.shape}, model dimension is {model.dim}")
    return x


def _commutator(h, x):
    return h @ x - x @ h


def lindblad_rhs(rho, model: LindbladModel) -> np.ndarray:
    """``-i[H, rho] + gamma sum_k (b rho b^dag - {b^dag b, rho}/2)``."""
    rho = _check_dim(rho, model)
    out = -1j * _commutator(model.hamiltonian, rho)
    for b in model.channels:
        bd = dagger(b)
        bdb = bd @ b
        out = out + model.rate * (b @ rho @ bd - 0.5 * (bdb @ rho + rho @ bdb))
    return out


def monitoring_rhs(rho, model: MonitoringModel) -> np.ndarray:
    """``-i[H, rho] + R (sum_kl A rho A^dag - rho)``."""
    rho = _check_dim(rho, model)
    a = model.effects.stack
    jump = np.einsum("kij,jl,kml->im", a, rho, a.conj())
    return -1j * _commutator(model.hamiltonian, rho) + model.rate * (jump - rho)


def retro_rhs(pi, model: Model, variant: GeneratorVariant) -> np.ndarray:
    """Rate of change of a probability operator with respect to *backward* time.

    Monitoring models use ``+i[H, pi] + R (sum A^dag pi A - pi)`` for either
    retrodictive tag.  Lindblad models use the Heisenberg adjoint for
    ``RETRO_ADJOINT`` and the ``b b^dag`` anticommutator for
    ``RETRO_REVERSED_ORDER``.
    """
    variant = GeneratorVariant(variant)
    if not variant.retrodictive:
        raise ValueError("retro_rhs needs a retrodictive variant")
    pi = _check_dim(pi, model)
    out = 1j * _commutator(model.hamiltonian, pi)
    if isinstance(model, MonitoringModel):
        a = model.effects.stack
        back = np.einsum("kji,jl,klm->im", a.conj(), pi, a)
        return out + model.rate * (back - pi)
    for b in model.channels:
        bd = dagger(b)
        anti = bd @ b if variant is GeneratorVariant.RETRO_ADJOINT else b @ bd
        out = out + model.rate * (bd @ pi @ b - 0.5 * (anti @ pi + pi @ anti))
    return out


def rhs(op, model: Model, variant: GeneratorVariant = GeneratorVariant.PREDICTIVE) -> np.ndarray:
    variant = GeneratorVariant(variant)
    if variant.retrodictive:
        return retro_rhs(op, model, variant)
    if isinstance(model, MonitoringModel):
        return monitoring_rhs(op, model)
    return lindblad_rhs(op, model)


def _left(a):
    # vec(a X) for row-major vec
    return np.kron(a, np.eye(a.shape[0]))


def _right(b):
    # vec(X b) for row-major vec
    return np.kron(np.eye(b.shape[0]), b.T)


def generator_matrix(model: Model, variant: GeneratorVariant = GeneratorVariant.PREDICTIVE) -> np.ndarray:
    """Dense superoperator ``L`` with ``vec(rhs(X)) = L @ vec(X)`` (row-major ``vec``)."""
    variant = GeneratorVariant(variant)
    d = model.dim
    h = model.hamiltonian
    sign = 1.0 if variant.retrodictive else -1.0
    gen = sign * 1j * (_left(h) - _right(h))
    if isinstance(model, MonitoringModel):
        a = model.effects.stack
        if variant.retrodictive:
            jump = sum(np.kron(dagger(x), x.T) for x in a)
        else:
            jump = sum(np.kron(x, x.conj()) for x in a)
        return gen + model.rate * (jump - np.eye(d * d))
    for b in model.channels:
        bd = dagger(b)
        if variant.retrodictive:
            sandwich = np.kron(bd, b.T)
            anti = bd @ b if variant is GeneratorVariant.RETRO_ADJOINT else b @ bd
        else:
            sandwich = np.kron(b, b.conj())
            anti = bd @ b
        gen = gen + model.rate * (sandwich - 0.5 * (_left(anti) + _right(anti)))
    return gen


def check_step(model: Model, dt: float) -> None:
    """Raise :class:`NumericalGuardError` unless ``dt * stiffness <= 0.1``."""
    load = abs(dt) * model.stiffness()
    if load > STEP_GUARD:
        raise NumericalGuardError(
            f"step too large: dt * (|H| + rate terms) = {load:.4g} > {STEP_GUARD}")


def integrate(op0, model: Model, variant: GeneratorVariant = GeneratorVariant.PREDICTIVE,
              grid: TimeGrid | None = None, *, stride: int = 1, reverse: bool = False,
              generator: np.ndarray | None = None) -> np.ndarray:
    """Integrate a master equation with the classical fixed-step RK4 scheme.

    Parameters
    ----------
    op0 : array_like
        Initial operator (density operator for predictive runs, probability
        operator for retrodictive runs).
    model : LindbladModel or MonitoringModel
    variant : GeneratorVariant
        ``PREDICTIVE`` integrates forward from ``grid.t0`` to ``grid.t1``.
        Retrodictive variants start at ``grid.t1`` and integrate backwards to
        ``grid.t0``.
    grid : TimeGrid
    stride : int
        Keep every ``stride``-th snapshot; must divide the number of steps.
    reverse : bool
        Predictive only: run the forward equation backwards in time, from
        ``grid.t1`` to ``grid.t0``.
    generator : ndarray, optional
        Pre-built :func:`generator_matrix` for ``(model, variant)``.

    Returns
    -------
    ndarray of shape ``(n_steps // stride + 1, d, d)``
        Snapshots in the order they were produced.  Runs that go backwards in
        time (retrodictive, or ``reverse=True``) list the latest time first.

    Raises
    ------
    NumericalGuardError
        Step-size guard violated, non-finite entries, or predictive trace
        drift beyond ``1e-7``.  No renormalisation is ever applied.
    """
    variant = GeneratorVariant(variant)
    if grid is None:
        raise ValueError("a TimeGrid is required")
    if reverse and variant.retrodictive:
        raise ValueError("reverse applies to predictive runs only")
    n = grid.n_steps
    if stride < 1 or n % stride:
        raise ValueError(f"stride {stride} does not divide {n} steps")
    check_step(model, grid.dt)
    x0 = _check_dim(op0, model)
    gen = generator_matrix(model, variant) if generator is None else generator
    d = model.dim
    h = -grid.dt if reverse else grid.dt
    half = 0.5 * h
    v = x0.reshape(d * d).copy()
    out = np.empty((n // stride + 1, d, d), dtype=complex)
    out[0] = x0
    tr0 = np.trace(x0).real
    check_trace = not variant.retrodictive
    diag = np.arange(d) * (d + 1)
    for step in range(1, n + 1):
        k1 = gen @ v
        k2 = gen @ (v + half * k1)
        k3 = gen @ (v + half * k2)
        k4 = gen @ (v + h * k3)
        v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if step % stride == 0:
            if not np.all(np.isfinite(v)):
                raise NumericalGuardError(f"non-finite entries after step {step}")
            if check_trace:
                drift = abs(v[diag].sum().real - tr0)
                if drift > TRACE_DRIFT_TOL:
                    raise NumericalGuardError(f"trace drifted by {drift:.3e} at step {step}")
            out[step // stride] = v.reshape(d, d)
    return out
