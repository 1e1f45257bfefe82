"""
Finite-dimensional operator algebra and the effect-operator measurement formalism.

Operators are plain ``numpy`` complex arrays of shape ``(d, d)``.  The typed
wrappers below (:class:`DensityOperator`, :class:`EffectOperator`,
:class:`EffectSet`, :class:`PovmElement`, :class:`PreparationEnsemble`) validate
their invariants once, on construction, and store read-only copies so that
values can be shared freely between threads.

Basis convention used throughout the package: index 0 is the ground state
``|g>`` (or the vacuum ``|0>``), index 1 the excited state ``|e>``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Iterator, Sequence

import numpy as np

from .errors import BiasedEffectSet, DimensionMismatch, ImpossibleOutcome, InvalidOperator

HERMITIAN_TOL = 1e-10
TRACE_TOL = 1e-9
EIG_FLOOR = -1e-9
COMPLETENESS_TOL = 1e-10
SAMPLING_TOL = 1e-9
PROBABILITY_FLOOR = 1e-14
IMAG_TOL = 1e-10


def as_operator(op, dim: int | None = None) -> np.ndarray:
    """Coerce ``op`` to a square complex matrix, optionally of dimension ``dim``."""
    a = np.array(op, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidOperator(f"operator must be a square matrix, got shape {a.shape}")
    if dim is not None and a.shape[0] != dim:
        raise DimensionMismatch(f"expected dimension {dim}, got {a.shape[0]}")
    return a


def dagger(op: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(op, -1, -2))


def hermitian_deviation(op: np.ndarray) -> float:
    """Largest entrywise deviation of ``op`` from its adjoint."""
    return float(np.max(np.abs(op - dagger(op)), initial=0.0))


def is_hermitian(op: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return hermitian_deviation(op) <= tol


def operator_norm(op: np.ndarray) -> float:
    """Spectral norm (largest singular value)."""
    if op.size == 0:
        return 0.0
    return float(np.linalg.norm(op, ord=2))


def psd_sqrt(op: np.ndarray) -> np.ndarray:
    """Principal square root of a Hermitian positive semidefinite matrix.

    Computed through the Hermitian eigendecomposition; eigenvalues that are
    negative by round-off are clipped to zero.
    """
    h = 0.5 * (op + dagger(op))
    w, v = np.linalg.eigh(h)
    root = np.sqrt(np.clip(w, 0.0, None))
    return (v * root) @ dagger(v)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex, copy=True)
    a.setflags(write=False)
    return a


def _min_eig(op: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (op + dagger(op)))[0])


@dataclass(frozen=True, eq=False)
class DensityOperator:
    """Unit-trace, positive, Hermitian operator."""

    matrix: np.ndarray

    def __post_init__(self):
        m = as_operator(self.matrix)
        dev = hermitian_deviation(m)
        if dev > HERMITIAN_TOL:
            raise InvalidOperator(f"density operator not Hermitian (deviation {dev:.3e})")
        tr = np.trace(m).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise InvalidOperator(f"density operator trace {tr!r} differs from 1")
        lo = _min_eig(m)
        if lo < EIG_FLOOR:
            raise InvalidOperator(f"density operator has negative eigenvalue {lo:.3e}")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def pure(cls, ket) -> "DensityOperator":
        psi = np.asarray(ket, dtype=complex).ravel()
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()))

    @classmethod
    def basis(cls, d: int, index: int) -> "DensityOperator":
        m = np.zeros((d, d), dtype=complex)
        m[index, index] = 1.0
        return cls(m)

    def expectation(self, observable) -> float:
        return float(np.real(np.trace(self.matrix @ as_operator(observable, self.dim))))


@dataclass(frozen=True, eq=False)
class EffectOperator:
    """Effect (Kraus) operator for outcome ``outcome`` with multiplicity index ``multiplicity``."""

    outcome: Hashable
    multiplicity: int
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", _frozen(as_operator(self.matrix)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def key(self) -> tuple:
        return (self.outcome, self.multiplicity)


@dataclass(frozen=True, eq=False)
class EffectSet:
    """Labelled collection of effect operators sharing one Hilbert space.

    Completeness is *not* enforced here; biased sets are legitimate values
    (the causality audits construct them on purpose).  Use
    :func:`completeness_defect` to certify a set.
    """

    effects: tuple

    def __post_init__(self):
        effects = tuple(self.effects)
        if not effects:
            raise InvalidOperator("an effect set needs at least one effect")
        dims = {e.dim for e in effects}
        if len(dims) != 1:
            raise DimensionMismatch(f"effects have mixed dimensions {sorted(dims)}")
        keys = [e.key for e in effects]
        if len(set(keys)) != len(keys):
            raise InvalidOperator("duplicate (outcome, multiplicity) pair in effect set")
        object.__setattr__(self, "effects", effects)
        stack = np.stack([e.matrix for e in effects])
        stack.setflags(write=False)
        object.__setattr__(self, "_stack", stack)

    @classmethod
    def from_operators(cls, ops: Iterable[tuple]) -> "EffectSet":
        """Build from ``(outcome, matrix)`` or ``(outcome, multiplicity, matrix)`` tuples."""
        effects = []
        counters: dict = {}
        for item in ops:
            if len(item) == 2:
                k, m = item
                l = counters.get(k, 0)
            else:
                k, l, m = item
            counters[k] = max(counters.get(k, 0), l + 1)
            effects.append(EffectOperator(k, l, m))
        return cls(tuple(effects))

    def __iter__(self) -> Iterator[EffectOperator]:
        return iter(self.effects)

    def __len__(self) -> int:
        return len(self.effects)

    @property
    def dim(self) -> int:
        return self.effects[0].dim

    @property
    def stack(self) -> np.ndarray:
        """Read-only array of shape ``(K, d, d)`` in effect order."""
        return self._stack

    @property
    def keys(self) -> list:
        return [e.key for e in self.effects]

    @property
    def outcomes(self) -> list:
        """Distinct outcome labels, in order of first appearance."""
        seen: dict = {}
        for e in self.effects:
            seen.setdefault(e.outcome, None)
        return list(seen)

    def without(self, outcome, multiplicity: int = 0) -> "EffectSet":
        """Copy of the set with one effect deleted (no renormalisation)."""
        kept = tuple(e for e in self.effects if e.key != (outcome, multiplicity))
        if len(kept) == len(self.effects):
            raise KeyError((outcome, multiplicity))
        return EffectSet(kept)


@dataclass(frozen=True, eq=False)
class PovmElement:
    """Probability operator for one measurement outcome."""

    outcome: Hashable
    matrix: np.ndarray

    def __post_init__(self):
        m = as_operator(self.matrix)
        dev = hermitian_deviation(m)
        if dev > HERMITIAN_TOL:
            raise InvalidOperator(f"POVM element not Hermitian (deviation {dev:.3e})")
        lo = _min_eig(m)
        if lo < EIG_FLOOR:
            raise InvalidOperator(f"POVM element has negative eigenvalue {lo:.3e}")
        object.__setattr__(self, "matrix", _frozen(m))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True, eq=False)
class PreparationEnsemble:
    """States ``rho_i`` prepared with prior probabilities ``P_i``."""

    states: tuple
    priors: tuple = field(default=None)

    def __post_init__(self):
        states = tuple(s if isinstance(s, DensityOperator) else DensityOperator(s)
                       for s in self.states)
        if not states:
            raise InvalidOperator("empty preparation ensemble")
        if len({s.dim for s in states}) != 1:
            raise DimensionMismatch("prepared states have mixed dimensions")
        priors = self.priors
        if priors is None:
            priors = tuple([1.0 / len(states)] * len(states))
        priors = tuple(float(p) for p in priors)
        if len(priors) != len(states):
            raise InvalidOperator("one prior per prepared state is required")
        if any(p < 0.0 or p > 1.0 for p in priors) or abs(sum(priors) - 1.0) > 1e-12:
            raise InvalidOperator(f"priors must be probabilities summing to 1, got {priors}")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "priors", priors)

    @property
    def dim(self) -> int:
        return self.states[0].dim


def _matrix(x) -> np.ndarray:
    return x.matrix if hasattr(x, "matrix") else as_operator(x)


def maximally_mixed(d: int) -> DensityOperator:
    """The state of complete ignorance, ``identity / d``."""
    if d < 1:
        raise InvalidOperator(f"dimension must be positive, got {d}")
    return DensityOperator(np.eye(d, dtype=complex) / d)


def born_probability(rho, pi) -> float:
    """Probability ``Tr(rho pi)`` of the outcome described by ``pi``.

    Raises
    ------
    DimensionMismatch
        If ``rho`` and ``pi`` act on different spaces.
    InvalidOperator
        If the trace has an imaginary part above ``1e-10`` (corrupted input).
    """
    r, p = _matrix(rho), _matrix(pi)
    if r.shape != p.shape:
        raise DimensionMismatch(f"state is {r.shape}, POVM element is {p.shape}")
    val = np.sum(r * p.T)
    if abs(val.imag) > IMAG_TOL:
        raise InvalidOperator(f"Born probability has imaginary residue {val.imag:.3e}")
    return float(val.real)


def apply_effect(rho, effect) -> tuple[DensityOperator, float]:
    """Condition ``rho`` on the outcome of ``effect``.

    Returns the post-measurement state ``A rho A^dag / Tr(rho A^dag A)``
    together with the outcome probability.
    """
    r, a = _matrix(rho), _matrix(effect)
    if r.shape != a.shape:
        raise DimensionMismatch(f"state is {r.shape}, effect is {a.shape}")
    prob = float(np.real(np.trace(r @ dagger(a) @ a)))
    if prob <= PROBABILITY_FLOOR:
        raise ImpossibleOutcome(f"outcome probability {prob:.3e} is below the floor")
    post = a @ r @ dagger(a) / prob
    post = 0.5 * (post + dagger(post))
    return DensityOperator(post), prob


def povm_from_effects(effects: EffectSet) -> list[PovmElement]:
    """One probability operator per outcome: ``pi_k = sum_l A_kl^dag A_kl``."""
    sums: dict = {}
    for e in effects:
        term = dagger(e.matrix) @ e.matrix
        sums[e.outcome] = sums[e.outcome] + term if e.outcome in sums else term
    out = []
    for k, m in sums.items():
        out.append(PovmElement(k, 0.5 * (m + dagger(m))))
    return out


def completeness_defect(effects: EffectSet) -> float:
    """``|| sum A^dag A - 1 ||``; zero certifies an unbiased measurement."""
    s = np.einsum("kji,kjl->il", effects.stack.conj(), effects.stack)
    return operator_norm(s - np.eye(effects.dim))


def reversed_completeness_defect(effects: EffectSet) -> float:
    """``|| sum A A^dag - 1 ||``.

    A strictly positive value means the set, read with the operator order
    reversed, is not an unbiased measurement.
    """
    s = np.einsum("kij,klj->il", effects.stack, effects.stack.conj())
    return operator_norm(s - np.eye(effects.dim))


def povm_defect(povm: Sequence[PovmElement]) -> float:
    total = sum(p.matrix for p in povm)
    return operator_norm(total - np.eye(povm[0].dim))


def select_index(cumulative: np.ndarray, u) -> np.ndarray:
    """Inverse-CDF selection: number of cumulative weights strictly below ``u * total``.

    Works on a single cumulative vector or row-wise on a 2-D array; the last
    index is returned for ``u`` that lands beyond the final bin by round-off.
    """
    cumulative = np.asarray(cumulative)
    u = np.asarray(u, dtype=float)
    total = cumulative[..., -1]
    idx = np.sum(cumulative < (u * total)[..., None], axis=-1)
    return np.minimum(idx, cumulative.shape[-1] - 1)


def sample_outcome(rho, effects: EffectSet, rng: np.random.Generator):
    """Draw one measurement outcome and return ``(outcome, multiplicity, post_state)``.

    Only unbiased sets are sampled: a set whose completeness defect exceeds
    ``1e-9`` raises :class:`BiasedEffectSet`.
    """
    defect = completeness_defect(effects)
    if defect > SAMPLING_TOL:
        raise BiasedEffectSet(f"completeness defect {defect:.3e} exceeds {SAMPLING_TOL}")
    r = _matrix(rho)
    if r.shape[0] != effects.dim:
        raise DimensionMismatch(f"state is {r.shape}, effects act on dimension {effects.dim}")
    probs = np.array([born_probability(r, dagger(e.matrix) @ e.matrix) for e in effects])
    if abs(probs.sum() - 1.0) > SAMPLING_TOL:
        raise BiasedEffectSet(f"outcome probabilities sum to {probs.sum()!r}")
    i = int(select_index(np.cumsum(probs), rng.random()))
    chosen = effects.effects[i]
    post, _ = apply_effect(r, chosen.matrix)
    return chosen.outcome, chosen.multiplicity, post


def weak_effect_family(povm: Sequence[PovmElement], eps: float) -> EffectSet:
    """Hermitian effects of tunable strength built from a complete POVM.

    ``A_m = sqrt((1 - eps)/M * 1 + eps * pi_m)`` with ``M`` outcomes.  The set
    is exactly complete for every ``eps``; ``eps = 0`` gives ``1/sqrt(M)``
    multiples of the identity, ``eps = 1`` returns ``sqrt(pi_m)`` (the
    projectors themselves for a projective input).
    """
    if not 0.0 <= eps <= 1.0:
        raise InvalidOperator(f"strength must lie in [0, 1], got {eps}")
    povm = list(povm)
    if not povm:
        raise InvalidOperator("empty POVM")
    defect = povm_defect(povm)
    if defect > COMPLETENESS_TOL:
        raise BiasedEffectSet(f"input POVM is incomplete (defect {defect:.3e})")
    m = len(povm)
    eye = np.eye(povm[0].dim, dtype=complex)
    return EffectSet(tuple(
        EffectOperator(p.outcome, 0, psd_sqrt((1.0 - eps) / m * eye + eps * p.matrix))
        for p in povm
    ))
