"""Minimal-coupling Hamiltonians H = (p - A)^2/2m + V and their quantization.

The quantum generator is (1/2m)(-i*hbar*d/dq - A)^2 + V with the cross term
written as i*hbar*(A d + d A), which fixes the operator ordering uniquely and
keeps the discrete matrix Hermitian by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, check_finite

HERMITICITY_TOL = 1e-12


class DiscretizationError(RuntimeError):
    """A built operator violated a structural property it must have."""


@dataclass(frozen=True)
class ClassicalHamiltonianSpec:
    grid: Grid
    mass: float
    vector_potential: np.ndarray
    scalar_potential: np.ndarray

    def __post_init__(self):
        if not (np.isfinite(self.mass) and self.mass > 0):
            raise ValueError(f"mass must be positive, got {self.mass}")
        for name in ("vector_potential", "scalar_potential"):
            arr = np.array(self.grid.validate(getattr(self, name), name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @classmethod
    def from_functions(cls, grid: Grid, mass: float, A=None, V=None) -> "ClassicalHamiltonianSpec":
        """Build from callables (or None for zero) evaluated on the grid."""
        q = grid.q
        a = np.zeros_like(q) if A is None else np.broadcast_to(np.asarray(A(q), dtype=float), q.shape)
        v = np.zeros_like(q) if V is None else np.broadcast_to(np.asarray(V(q), dtype=float), q.shape)
        return cls(grid, mass, a, v)

    def hamiltonian(self, q, p):
        a = self.grid.sample_at(self.vector_potential, q)
        v = self.grid.sample_at(self.scalar_potential, q)
        return (np.asarray(p) - a) ** 2 / (2 * self.mass) + v


def classical_velocity(spec: ClassicalHamiltonianSpec, q, p, method: str = "cubic"):
    """dH/dp = (p - A(q))/m."""
    p = np.asarray(p, dtype=float)
    check_finite(np.atleast_1d(p), "momentum")
    a = spec.grid.sample_at(spec.vector_potential, q, method=method)
    return (p - a) / spec.mass


def hermiticity_defect(matrix: np.ndarray) -> float:
    return float(np.max(np.abs(matrix - matrix.conj().T)))


@dataclass(frozen=True)
class DiscreteOperator:
    matrix: np.ndarray
    hbar_eff: float
    grid: Grid = field(repr=False)

    @property
    def hermiticity_defect(self) -> float:
        return hermiticity_defect(self.matrix)

    def apply(self, psi: np.ndarray) -> np.ndarray:
        return self.matrix @ psi

    def expectation(self, psi: np.ndarray) -> float:
        return float(np.real(np.vdot(psi, self.matrix @ psi)) * self.grid.dq)

    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvalsh(self.matrix))))

    def eigh(self):
        """Eigenpairs with eigenvectors normalised to unit L2 norm on the grid."""
        w, v = np.linalg.eigh(self.matrix)
        return w, v / np.sqrt(self.grid.dq)


def _blocks(spec: ClassicalHamiltonianSpec):
    g = spec.grid
    return g.derivative_matrix(1), g.derivative_matrix(2), spec.vector_potential, spec.scalar_potential


def build_operator(spec: ClassicalHamiltonianSpec, hbar_eff: float) -> DiscreteOperator:
    if not (np.isfinite(hbar_eff) and hbar_eff > 0):
        raise ValueError(f"hbar_eff must be positive, got {hbar_eff}")
    d1, d2, a, v = _blocks(spec)
    cross = a[:, None] * d1 + d1 * a[None, :]
    h = (-(hbar_eff**2) * d2 + 1j * hbar_eff * cross + np.diag(a**2)) / (2 * spec.mass)
    h = h + np.diag(v)
    defect = hermiticity_defect(h)
    if defect >= HERMITICITY_TOL * np.max(np.abs(h)):
        raise DiscretizationError(f"operator not Hermitian: defect {defect:.3e}")
    return DiscreteOperator(h, float(hbar_eff), spec.grid)


def build_naive_operator(spec: ClassicalHamiltonianSpec, hbar_eff: float) -> np.ndarray:
    """The ordering (1/2m)[-hbar^2 d^2 + 2 i hbar A d + A^2] + V, for comparison only."""
    d1, d2, a, v = _blocks(spec)
    h = (-(hbar_eff**2) * d2 + 2j * hbar_eff * a[:, None] * d1 + np.diag(a**2)) / (2 * spec.mass)
    return h + np.diag(v)


@dataclass
class OrderingReport:
    symmetric_defect: float
    naive_defect: float
    operator_scale: float
    spectral_distance: float
    max_entry_difference: float

    @property
    def defect_ratio(self) -> float:
        return self.naive_defect / max(self.symmetric_defect, np.finfo(float).tiny)


def ordering_comparison(spec: ClassicalHamiltonianSpec, hbar_eff: float) -> OrderingReport:
    """Compare the symmetric ordering against the naive A*d ordering.

    ``spectral_distance`` is the largest difference between sorted eigenvalues of
    the two Hermitian parts.
    """
    sym = build_operator(spec, hbar_eff).matrix
    naive = build_naive_operator(spec, hbar_eff)
    herm_naive = 0.5 * (naive + naive.conj().T)
    ev_sym = np.linalg.eigvalsh(sym)
    ev_naive = np.linalg.eigvalsh(herm_naive)
    return OrderingReport(
        symmetric_defect=hermiticity_defect(sym),
        naive_defect=hermiticity_defect(naive),
        operator_scale=float(np.max(np.abs(sym))),
        spectral_distance=float(np.max(np.abs(ev_sym - ev_naive))),
        max_entry_difference=float(np.max(np.abs(sym - naive))),
    )
