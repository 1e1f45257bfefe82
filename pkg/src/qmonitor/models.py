"""
Bundled systems: a monitored two-level atom, a photodetected field mode, the
amplitude-damping effect pair, and a discretised joint (x, p) monitor of a
truncated oscillator.  A damped cavity Lindblad model is included for the
retrodictive energy diagnostics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidOperator
from .evolution import LindbladModel, MonitoringModel
from .operators import (
    EffectOperator,
    EffectSet,
    PovmElement,
    dagger,
    operator_norm,
    psd_sqrt,
    weak_effect_family,
)

# basis (|g>, |e>)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, 1j], [-1j, 0]], dtype=complex)
SIGMA_Z = np.array([[-1, 0], [0, 1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 1], [0, 0]], dtype=complex)
GROUND = np.diag([1.0, 0.0]).astype(complex)
EXCITED = np.diag([0.0, 1.0]).astype(complex)

for _a in (SIGMA_X, SIGMA_Y, SIGMA_Z, SIGMA_MINUS, GROUND, EXCITED):
    _a.setflags(write=False)


def bloch_vector(rho: np.ndarray) -> np.ndarray:
    """``(<sx>, <sy>, <sz>)`` of one or many two-level density matrices."""
    rho = np.asarray(rho)
    x = 2.0 * rho[..., 0, 1].real
    y = 2.0 * rho[..., 0, 1].imag
    z = (rho[..., 1, 1] - rho[..., 0, 0]).real
    return np.stack([x, y, z], axis=-1)


def sigma_z_povm() -> list[PovmElement]:
    return [PovmElement("+", EXCITED), PovmElement("-", GROUND)]


def destroy(dim: int) -> np.ndarray:
    """Annihilation operator on the Fock space truncated to ``dim`` levels."""
    return np.diag(np.sqrt(np.arange(1, dim)), k=1).astype(complex)


def number(dim: int) -> np.ndarray:
    return np.diag(np.arange(dim)).astype(complex)


def fock(dim: int, n: int) -> np.ndarray:
    """Projector ``|n><n|``."""
    m = np.zeros((dim, dim), dtype=complex)
    m[n, n] = 1.0
    return m


def coherent_ket(dim: int, alpha: complex) -> np.ndarray:
    """Coherent state on the truncated space, renormalised after truncation."""
    n = np.arange(dim)
    logfact = np.array([math.lgamma(k + 1) for k in n])
    if alpha == 0:
        psi = np.zeros(dim, dtype=complex)
        psi[0] = 1.0
        return psi
    psi = np.exp(n * np.log(complex(alpha)) - 0.5 * logfact)
    return psi / np.linalg.norm(psi)


def two_level_monitor(omega: float, eps: float, rate: float) -> MonitoringModel:
    """Rabi-driven atom, ``H = omega sigma_x / 2``, under weak sigma_z monitoring."""
    if not 0.0 <= eps <= 1.0:
        raise InvalidOperator(f"strength must lie in [0, 1], got {eps}")
    if rate < 0:
        raise InvalidOperator(f"rate must be >= 0, got {rate}")
    effects = weak_effect_family(sigma_z_povm(), eps)
    return MonitoringModel(0.5 * omega * SIGMA_X, effects, rate)


def decaying_atom(omega: float, gamma: float) -> LindbladModel:
    """Spontaneous emission, ``b = sigma_-``, with an optional Rabi drive."""
    return LindbladModel(0.5 * omega * SIGMA_X, (SIGMA_MINUS,), gamma)


def dephasing_atom(omega: float, gamma_eff: float) -> LindbladModel:
    """Lindblad dephasing with coherence decay rate ``gamma_eff``.

    ``b = sigma_z`` at rate ``gamma_eff / 2`` damps ``rho_ge`` as
    ``exp(-gamma_eff t)``.
    """
    return LindbladModel(0.5 * omega * SIGMA_X, (SIGMA_Z,), 0.5 * gamma_eff)


def photodetector_effects(dim: int) -> EffectSet:
    if dim < 2:
        raise InvalidOperator(f"photodetector needs at least 2 Fock levels, got {dim}")
    click = np.zeros((dim, dim), dtype=complex)
    click[0, 1] = 1.0
    noclick = psd_sqrt(np.eye(dim) - dagger(click) @ click)
    return EffectSet((EffectOperator("click", 0, click), EffectOperator("no-click", 0, noclick)))


def photodetector_mode(dim: int, rate: float, omega: float = 0.0) -> MonitoringModel:
    """Perfect absorbing detector of the single-photon sector.

    ``A_click = |0><1|`` (zero on every other Fock state) and
    ``A_no-click = sqrt(1 - A_click^dag A_click)``.  ``omega`` sets an optional
    free Hamiltonian ``omega * n``.
    """
    effects = photodetector_effects(dim)
    return MonitoringModel(omega * number(dim), effects, rate)


def amplitude_damping_effects(p: float) -> EffectSet:
    """``A_0 = |g><g| + sqrt(1-p)|e><e|``, ``A_1 = sqrt(p)|g><e|``."""
    if not 0.0 <= p <= 1.0:
        raise InvalidOperator(f"damping probability must lie in [0, 1], got {p}")
    a0 = np.diag([1.0, math.sqrt(1.0 - p)]).astype(complex)
    a1 = math.sqrt(p) * SIGMA_MINUS
    return EffectSet((EffectOperator(0, 0, a0), EffectOperator(1, 0, a1)))


def amplitude_damping_monitor(p: float, rate: float, omega: float = 0.0) -> MonitoringModel:
    return MonitoringModel(0.5 * omega * SIGMA_X, amplitude_damping_effects(p), rate)


def damped_cavity(dim: int, gamma: float, omega: float = 1.0) -> LindbladModel:
    """Field mode ``H = omega a^dag a`` leaking photons through ``b = a`` at rate ``gamma``."""
    return LindbladModel(omega * number(dim), (destroy(dim),), gamma)


@dataclass(frozen=True)
class CvOutcomeGrid:
    """Square grid of coherent amplitudes for a joint (x, p) measurement.

    Nodes are ``alpha = a + i b`` with ``a, b`` in ``[-alpha_max, alpha_max]``
    spaced by ``spacing``.  ``multiplicity`` copies each outcome into that many
    identical effects (each scaled by ``1/sqrt(multiplicity)``).
    """

    alpha_max: float
    spacing: float
    truncation: int
    multiplicity: int = 1

    def __post_init__(self):
        if self.spacing <= 0 or self.alpha_max <= 0:
            raise InvalidOperator("alpha_max and spacing must be positive")
        ratio = 2 * self.alpha_max / self.spacing
        if abs(ratio - round(ratio)) > 1e-9:
            raise InvalidOperator(f"2*alpha_max/spacing = {ratio!r} is not an integer")
        if self.truncation < 4:
            raise InvalidOperator(f"Fock truncation must be >= 4, got {self.truncation}")
        if self.alpha_max ** 2 > self.truncation:
            raise InvalidOperator(
                f"alpha_max^2 = {self.alpha_max ** 2} exceeds the truncation {self.truncation}")
        if self.multiplicity < 1:
            raise InvalidOperator("multiplicity must be >= 1")

    def nodes(self) -> np.ndarray:
        n = int(round(2 * self.alpha_max / self.spacing)) + 1
        axis = -self.alpha_max + self.spacing * np.arange(n)
        re, im = np.meshgrid(axis, axis, indexing="ij")
        return (re + 1j * im).ravel()


def cv_frame(grid: CvOutcomeGrid) -> tuple[np.ndarray, np.ndarray]:
    """Weighted coherent projectors and their sum, before renormalisation.

    Returns ``(projectors, total)`` with ``projectors[m] = delta^2/pi |a_m><a_m|``.
    """
    d = grid.truncation
    kets = np.stack([coherent_ket(d, a) for a in grid.nodes()])
    w = grid.spacing ** 2 / math.pi
    proj = w * np.einsum("mi,mj->mij", kets, kets.conj())
    return proj, proj.sum(axis=0)


def cv_raw_defect(grid: CvOutcomeGrid) -> float:
    """``|| sum_m delta^2/pi |a_m><a_m| - 1 ||`` for the unrenormalised frame."""
    _, total = cv_frame(grid)
    return operator_norm(total - np.eye(grid.truncation))


def cv_povm(grid: CvOutcomeGrid) -> list[PovmElement]:
    """Coherent-state POVM on the grid, renormalised so it sums to the identity exactly."""
    proj, total = cv_frame(grid)
    w, v = np.linalg.eigh(0.5 * (total + dagger(total)))
    if w[0] <= 0:
        raise InvalidOperator("coherent-state frame is singular on the truncated space")
    inv_root = (v / np.sqrt(w)) @ dagger(v)
    correction = operator_norm(inv_root - np.eye(grid.truncation))
    if correction > 0.5:
        raise InvalidOperator(
            f"grid too coarse: renormalisation correction {correction:.3f} exceeds 0.5")
    elems = inv_root @ proj @ inv_root
    return [PovmElement(m, 0.5 * (e + dagger(e))) for m, e in enumerate(elems)]


def cv_monitor(grid: CvOutcomeGrid, eps: float, rate: float, omega: float = 1.0) -> MonitoringModel:
    """Weak joint monitoring of a coherent amplitude on a truncated oscillator.

    Outcome labels are the grid indices ``m`` (node ``grid.nodes()[m]``); the
    Hamiltonian is ``omega * a^dag a``.
    """
    base = weak_effect_family(cv_povm(grid), eps)
    if grid.multiplicity > 1:
        s = 1.0 / math.sqrt(grid.multiplicity)
        base = EffectSet(tuple(EffectOperator(e.outcome, l, s * e.matrix)
                               for e in base for l in range(grid.multiplicity)))
    return MonitoringModel(omega * number(grid.truncation), base, rate)
