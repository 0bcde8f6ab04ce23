"""Hydrodynamic decomposition of a wave field.

Everything that needs the phase S is taken from psi itself (current form
hbar*Im(psi* psi')/|psi|^2), so no phase unwrapping is ever required. The
curvature ratio R''/R is likewise evaluated as Re(psi''/psi) + Im(psi'/psi)^2
and S'' as hbar*Im(psi''/psi - (psi'/psi)^2); both stay smooth where R = |psi|
has kinks (nodes), and neither differentiates a node-filled field.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .quantizer import ClassicalHamiltonianSpec
from .schrodinger import WaveField

DEFAULT_FLOOR = 1e-8


def fill_nearest(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace masked entries by the nearest unmasked value (periodic)."""
    if not mask.any():
        return values
    n = len(values)
    good = np.flatnonzero(~mask)
    if good.size == 0:
        raise ValueError("every point is masked")
    pos = np.flatnonzero(mask)
    ext = np.concatenate([good - n, good, good + n])
    i = np.searchsorted(ext, pos)
    left, right = ext[i - 1], ext[i]
    nearest = np.where(pos - left <= right - pos, left, right) % n
    out = values.copy()
    out[pos] = values[nearest]
    return out


def _ratio(num, den, mask):
    out = np.zeros(np.broadcast(num, den).shape, dtype=np.result_type(num, den))
    np.divide(num, den, out=out, where=~mask)
    return out


@dataclass(frozen=True)
class MadelungFields:
    grid: Grid
    psi: np.ndarray
    hbar_eff: float
    scheme: str
    omega: np.ndarray
    R: np.ndarray
    grad_log_omega: np.ndarray
    phase_gradient: np.ndarray
    phase_curvature: np.ndarray
    curvature_ratio: np.ndarray
    node_mask: np.ndarray
    v_eff: np.ndarray | None = None
    quantum_potential: np.ndarray | None = None

    @property
    def masked_fraction(self) -> float:
        return float(self.node_mask.mean())

    def interior_mask(self) -> np.ndarray:
        """Points that are neither masked nor adjacent to a masked point."""
        m = self.node_mask
        return ~(m | np.roll(m, 1) | np.roll(m, -1))


def decompose(state: WaveField, epsilon: float = DEFAULT_FLOOR, spec: ClassicalHamiltonianSpec | None = None,
              scheme: str = "spectral") -> MadelungFields:
    """Split psi into density, amplitude and gradient fields.

    Points with omega < epsilon*max(omega) are masked; derived ratios there are
    filled from the nearest unmasked neighbour. With ``spec`` the effective
    velocity and the quantum potential for |lambda| = hbar_eff/2 are attached.
    """
    g = state.grid
    psi = state.psi
    omega = np.abs(psi) ** 2
    peak = omega.max()
    if peak == 0:
        raise ValueError("cannot decompose an all-zero wave field")
    mask = omega < epsilon * peak
    # a real field has no phase; differentiate it as real so the flow is exactly zero
    src = psi.real if not psi.imag.any() else psi
    dpsi = g.diff1(src, scheme)
    d2psi = g.diff2(src, scheme)
    domega = g.diff1(omega, scheme)
    log_deriv = _ratio(dpsi, src, mask)
    second = _ratio(d2psi, src, mask)
    fields = MadelungFields(
        grid=g,
        psi=psi,
        hbar_eff=state.hbar_eff,
        scheme=scheme,
        omega=omega,
        R=np.abs(psi),
        grad_log_omega=fill_nearest(_ratio(domega, omega, mask), mask),
        phase_gradient=fill_nearest(state.hbar_eff * log_deriv.imag, mask),
        phase_curvature=fill_nearest(state.hbar_eff * (second - log_deriv**2).imag, mask),
        curvature_ratio=fill_nearest(second.real + log_deriv.imag**2, mask),
        node_mask=mask,
    )
    if spec is None:
        return fields
    lam = state.hbar_eff / 2
    return MadelungFields(**{
        **fields.__dict__,
        "v_eff": (fields.phase_gradient - spec.vector_potential) / spec.mass,
        "quantum_potential": quantum_potential(fields, lam, spec.mass),
    })


def effective_velocity(state: WaveField | MadelungFields, spec: ClassicalHamiltonianSpec,
                       epsilon: float = DEFAULT_FLOOR) -> np.ndarray:
    """(dS/dq - A)/m with dS/dq = hbar*Im(psi* psi')/|psi|^2."""
    fields = state if isinstance(state, MadelungFields) else decompose(state, epsilon)
    return (fields.phase_gradient - spec.vector_potential) / spec.mass


def osmotic_term(fields: MadelungFields, lam: float, mass: float) -> np.ndarray:
    """(lambda/m) * omega'/omega."""
    return (lam / mass) * fields.grad_log_omega


def actual_velocity(state: WaveField | MadelungFields, spec: ClassicalHamiltonianSpec, lam: float,
                    epsilon: float = DEFAULT_FLOOR) -> np.ndarray:
    """Velocity of a particle carrying multiplier ``lam``: effective + osmotic."""
    fields = state if isinstance(state, MadelungFields) else decompose(state, epsilon)
    v = effective_velocity(fields, spec)
    osm = osmotic_term(fields, lam, spec.mass)
    plus, minus = v + osm, v - osm
    scale = max(np.max(np.abs(plus)), np.max(np.abs(minus)), 1.0)
    # the +/- lambda mean reproduces the effective velocity up to rounding
    assert np.max(np.abs(0.5 * (plus + minus) - v)) <= 8 * np.finfo(float).eps * scale
    return plus


def quantum_potential(fields: MadelungFields, lam: float, mass: float) -> np.ndarray:
    """-(2 lambda^2/m) R''/R."""
    return -(2 * lam**2 / mass) * fields.curvature_ratio


@dataclass
class IdentityResidual:
    residual: np.ndarray
    max_residual: float
    l2_residual: float
    masked_fraction: float


def identity_check(fields: MadelungFields) -> IdentityResidual:
    """Residual of (1/4)(omega'/omega)^2 = (1/2) omega''/omega - R''/R.

    Reported on interior unmasked points; the L2 norm is taken in the
    probability measure, sqrt(sum r^2 omega dq).
    """
    g = fields.grid
    omega, mask = fields.omega, fields.node_mask
    lhs = 0.25 * fields.grad_log_omega**2
    rhs = 0.5 * _ratio(g.diff2(omega, fields.scheme), omega, mask) - fields.curvature_ratio
    r = np.where(mask, 0.0, lhs - rhs)
    sel = fields.interior_mask()
    return IdentityResidual(
        residual=r,
        max_residual=float(np.max(np.abs(r[sel]))),
        l2_residual=float(np.sqrt(np.sum(r[sel] ** 2 * omega[sel]) * g.dq)),
        masked_fraction=fields.masked_fraction,
    )


FIELDS_HEADER = "t [time],q [length],omega [1/length],v_eff [length/time],quantum_potential [energy],mask [bool]"


def write_fields_csv(path, series) -> None:
    """CSV dump of (t, MadelungFields) pairs; fields need v_eff (decompose with a spec)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FIELDS_HEADER + "\n")
        for t, fields in series:
            if fields.v_eff is None:
                raise ValueError("fields were decomposed without a Hamiltonian spec")
            for q, w, v, qp, m in zip(fields.grid.q, fields.omega, fields.v_eff, fields.quantum_potential,
                                      fields.node_mask):
                fh.write(f"{t:.17g},{q:.17g},{w:.17g},{v:.17g},{qp:.17g},{int(m)}\n")
