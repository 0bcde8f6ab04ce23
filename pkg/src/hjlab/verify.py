"""Residual checks of the hydrodynamic identities on evolved snapshot series.

All time derivatives are second-order centred differences of adjacent
snapshots, so a residual evaluated at snapshot k needs k-1 and k+1 as well.
Residuals are measured on interior unmasked points only. Flux-type residuals
(continuity, transport) use the plain L2 norm sqrt(sum r^2 dq); residuals that
are ratios by the density (Hamilton-Jacobi forms) use the L2 norm in the
probability measure sqrt(sum r^2 omega dq), which keeps far-tail round-off
from dominating.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .madelung import DEFAULT_FLOOR, MadelungFields, decompose
from .quantizer import ClassicalHamiltonianSpec
from .schrodinger import WaveField


@dataclass
class ResidualReport:
    name: str
    l2_residual: float
    max_residual: float
    masked_fraction: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        assert self.l2_residual >= 0 and self.max_residual >= 0
        assert 0.0 <= self.masked_fraction <= 1.0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _spacing(snapshots: Sequence[WaveField]) -> float:
    if len(snapshots) < 3:
        raise ValueError("need at least 3 consecutive snapshots")
    dts = np.diff([s.t for s in snapshots])
    if not np.allclose(dts, dts[0], rtol=1e-9, atol=0):
        raise ValueError("snapshots must be equally spaced in time")
    return float(dts[0])


class _Accumulator:
    def __init__(self, name, weighted, grid, dt, n_snap, **extra):
        self.name, self.weighted, self.grid = name, weighted, grid
        self.sq, self.mx, self.masked, self.count = 0.0, 0.0, 0.0, 0
        self.meta = {"n_points": grid.n_points, "dq": grid.dq, "dt": dt, "n_snapshots": n_snap,
                     "norm": "density-weighted" if weighted else "plain", **extra}

    def add(self, r: np.ndarray, fields: MadelungFields):
        sel = fields.interior_mask()
        w = fields.omega[sel] if self.weighted else 1.0
        self.sq += float(np.sum(r[sel] ** 2 * w) * self.grid.dq)
        self.mx = max(self.mx, float(np.max(np.abs(r[sel]))) if sel.any() else 0.0)
        self.masked += 1.0 - sel.mean()
        self.count += 1

    def report(self) -> ResidualReport:
        c = max(self.count, 1)
        return ResidualReport(self.name, float(np.sqrt(self.sq / c)), self.mx, self.masked / c, self.meta)


def _windows(snapshots, epsilon, spec, scheme):
    """Yield (prev, fields_k, next, dt) for every interior snapshot."""
    dt = _spacing(snapshots)
    for k in range(1, len(snapshots) - 1):
        yield snapshots[k - 1], decompose(snapshots[k], epsilon, spec, scheme), snapshots[k + 1], dt


def probability_current(fields: MadelungFields, spec: ClassicalHamiltonianSpec) -> np.ndarray:
    """v_eff * omega = (hbar*Im(psi* psi') - A*omega)/m, evaluated without division."""
    g = fields.grid
    j = fields.hbar_eff * np.imag(np.conj(fields.psi) * g.diff1(fields.psi, fields.scheme))
    return (j - spec.vector_potential * fields.omega) / spec.mass


def constraint_residual(snapshots: Sequence[WaveField], spec: ClassicalHamiltonianSpec,
                        epsilon: float = DEFAULT_FLOOR, scheme: str = "spectral") -> ResidualReport:
    """d_t omega + d_q(v_eff omega)."""
    acc = None
    for prev, f, nxt, dt in _windows(snapshots, epsilon, spec, scheme):
        acc = acc or _Accumulator("constraint", False, f.grid, dt, len(snapshots))
        dt_omega = (nxt.density - prev.density) / (2 * dt)
        acc.add(dt_omega + f.grid.diff1(probability_current(f, spec), scheme), f)
    return acc.report()


def _dt_phase(prev, f, nxt, dt):
    """d_t S = hbar*Im(d_t psi / psi) on unmasked points."""
    dpsi = (nxt.psi - prev.psi) / (2 * dt)
    out = np.zeros(len(dpsi))
    ok = ~f.node_mask
    out[ok] = f.hbar_eff * np.imag(dpsi[ok] / f.psi[ok])
    return out


def _hj_terms(f: MadelungFields, spec, lam):
    kinetic = (f.phase_gradient - spec.vector_potential) ** 2 / (2 * spec.mass)
    return kinetic + spec.scalar_potential - (2 * lam**2 / spec.mass) * f.curvature_ratio


def hj_residual(snapshots: Sequence[WaveField], spec: ClassicalHamiltonianSpec, lam: float | None = None,
                epsilon: float = DEFAULT_FLOOR, scheme: str = "spectral") -> ResidualReport:
    """d_t S + (d_q S - A)^2/2m + V - (2 lam^2/m) R''/R, checked for +lam and -lam.

    lam defaults to hbar_eff/2.
    """
    acc = None
    for prev, f, nxt, dt in _windows(snapshots, epsilon, spec, scheme):
        lam_k = f.hbar_eff / 2 if lam is None else lam
        acc = acc or _Accumulator("hamilton_jacobi", True, f.grid, dt, len(snapshots), lam=lam_k)
        dts = _dt_phase(prev, f, nxt, dt)
        plus = dts + _hj_terms(f, spec, lam_k)
        minus = dts + _hj_terms(f, spec, -lam_k)
        if not np.array_equal(plus, minus):
            raise AssertionError("Hamilton-Jacobi residual depends on the sign of lambda")
        acc.add(plus, f)
    return acc.report()


def stationary_hj_residual(state: WaveField, spec: ClassicalHamiltonianSpec, energy: float,
                           lam: float | None = None, epsilon: float = DEFAULT_FLOOR) -> tuple[ResidualReport, ResidualReport]:
    """V + Q - E (+ kinetic) for an eigenstate, with d_t S = -E; reports for +lam and -lam."""
    f = decompose(state, epsilon, spec)
    lam = state.hbar_eff / 2 if lam is None else lam
    out = []
    for sign in (1, -1):
        acc = _Accumulator("stationary_hj", False, f.grid, 0.0, 1, lam=sign * lam, energy=energy)
        acc.add(_hj_terms(f, spec, sign * lam) - energy, f)
        out.append(acc.report())
    return out[0], out[1]


def symmetrization_consistency(snapshots: Sequence[WaveField], spec: ClassicalHamiltonianSpec,
                               epsilon: float = DEFAULT_FLOOR, plus_scale: float = 1.0,
                               scheme: str = "spectral") -> ResidualReport:
    """0.5*[d(qdot(+lam) omega) + d(qdot(-lam) omega)] - d(v_eff omega), snapshot by snapshot.

    ``plus_scale`` multiplies qdot(+lam) for fault injection.
    """
    acc = None
    for st in snapshots:
        f = decompose(st, epsilon, spec, scheme)
        g = f.grid
        acc = acc or _Accumulator("symmetrization", False, g, np.nan, len(snapshots))
        lam = st.hbar_eff / 2
        osm = (lam / spec.mass) * f.grad_log_omega
        plus = plus_scale * (f.v_eff + osm)
        minus = f.v_eff - osm
        r = 0.5 * (g.diff1(plus * f.omega, scheme) + g.diff1(minus * f.omega, scheme)) - g.diff1(f.v_eff * f.omega, scheme)
        acc.add(r, f)
    return acc.report()


def velocity_averaging_defect(state: WaveField, spec: ClassicalHamiltonianSpec,
                              epsilon: float = DEFAULT_FLOOR) -> float:
    """max |(v(+lam) + v(-lam))/2 - v_eff| over unmasked points."""
    from .madelung import actual_velocity, effective_velocity

    f = decompose(state, epsilon)
    lam = state.hbar_eff / 2
    v = effective_velocity(f, spec)
    d = 0.5 * (actual_velocity(f, spec, lam) + actual_velocity(f, spec, -lam)) - v
    return float(np.max(np.abs(d[~f.node_mask])))


@dataclass
class SubstitutionReport:
    classical_hj: dict
    classical_hj_closure: ResidualReport
    classical_hj_corrected: dict
    classical_continuity: dict
    classical_continuity_averaged: ResidualReport

    def reports(self) -> list[ResidualReport]:
        return [*self.classical_hj.values(), self.classical_hj_closure, *self.classical_hj_corrected.values(),
                *self.classical_continuity.values(), self.classical_continuity_averaged]


def substitution_rules_check(snapshots: Sequence[WaveField], spec: ClassicalHamiltonianSpec,
                             lam: float | None = None, epsilon: float = DEFAULT_FLOOR,
                             scheme: str = "spectral") -> SubstitutionReport:
    """Rebuild the classical-form action gradients and test the classical equations.

    With p = d_q S + lam*omega'/omega and
    d_t S_cl = d_t S + lam*d_t omega/omega + lam*d_q v_eff, this evaluates
    d_t S_cl + H(q, p) and d_t omega + d_q(omega dH/dp) per sign of lam.
    On solutions of the wave equation the first of these equals
    (lam^2/m) omega''/omega (the ``closure`` term) rather than zero, because
    the fixed-sign transport carries an extra (lam/m) omega'' that the
    symmetric constraint does not; ``classical_hj_corrected`` subtracts it.
    The sign-averaged continuity residual coincides with the constraint residual.
    """
    m = spec.mass
    accs = {}

    def acc(name, weighted, f, dt, **extra):
        if name not in accs:
            accs[name] = _Accumulator(name, weighted, f.grid, dt, len(snapshots), **extra)
        return accs[name]

    for prev, f, nxt, dt in _windows(snapshots, epsilon, spec, scheme):
        g = f.grid
        lam0 = f.hbar_eff / 2 if lam is None else lam
        omega = f.omega
        ok = ~f.node_mask
        dt_omega = (nxt.density - prev.density) / (2 * dt)
        dt_log_omega = np.zeros_like(omega)
        dt_log_omega[ok] = dt_omega[ok] / omega[ok]
        dts = _dt_phase(prev, f, nxt, dt)
        div_v = (f.phase_curvature - g.diff1(spec.vector_potential, scheme)) / m
        d2_omega = g.diff2(omega, scheme)
        closure = np.zeros_like(omega)
        closure[ok] = (lam0**2 / m) * d2_omega[ok] / omega[ok]
        acc("classical_hj_closure", True, f, dt, lam=lam0).add(closure, f)
        cont = {}
        for sign, label in ((1, "plus"), (-1, "minus")):
            la = sign * lam0
            p = f.phase_gradient + la * f.grad_log_omega
            dts_cl = dts + la * dt_log_omega + la * div_v
            hj = dts_cl + (p - spec.vector_potential) ** 2 / (2 * m) + spec.scalar_potential
            acc(f"classical_hj_{label}", True, f, dt, lam=la).add(hj, f)
            acc(f"classical_hj_corrected_{label}", True, f, dt, lam=la).add(hj - closure, f)
            flux = omega * (p - spec.vector_potential) / m
            cont[label] = dt_omega + g.diff1(flux, scheme)
            acc(f"classical_continuity_{label}", False, f, dt, lam=la).add(cont[label], f)
        acc("classical_continuity_averaged", False, f, dt, lam=lam0).add(0.5 * (cont["plus"] + cont["minus"]), f)

    rep = {k: a.report() for k, a in accs.items()}
    return SubstitutionReport(
        classical_hj={s: rep[f"classical_hj_{s}"] for s in ("plus", "minus")},
        classical_hj_closure=rep["classical_hj_closure"],
        classical_hj_corrected={s: rep[f"classical_hj_corrected_{s}"] for s in ("plus", "minus")},
        classical_continuity={s: rep[f"classical_continuity_{s}"] for s in ("plus", "minus")},
        classical_continuity_averaged=rep["classical_continuity_averaged"],
    )


def convergence_order(steps: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(step)."""
    slope, _ = np.polyfit(np.log(steps), np.log(errors), 1)
    return float(slope)
