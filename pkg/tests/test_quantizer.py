import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hjlab.grid import Grid
from hjlab.quantizer import (ClassicalHamiltonianSpec, DiscretizationError, build_naive_operator, build_operator,
                             classical_velocity, hermiticity_defect, ordering_comparison)


def sine_spec(n=64, a=0.7, mass=1.0):
    g = Grid(n, 0.0, 2 * np.pi)
    return ClassicalHamiltonianSpec.from_functions(g, mass, A=lambda q: a * np.sin(q), V=np.cos)


def test_symmetric_ordering_is_hermitian_and_naive_is_not():
    spec = sine_spec()
    op = build_operator(spec, 1.0)
    scale = np.max(np.abs(op.matrix))
    assert op.hermiticity_defect < 1e-12 * scale
    naive = hermiticity_defect(build_naive_operator(spec, 1.0))
    assert naive > 1e6 * 1e-12 * scale


def test_ordering_report():
    rep = ordering_comparison(sine_spec(), 1.0)
    assert rep.symmetric_defect == 0.0
    assert rep.defect_ratio > 1e6
    # the Hermitian part of the naive matrix is exactly the symmetric one
    assert rep.spectral_distance < 1e-10 * rep.operator_scale
    assert rep.max_entry_difference > 0.1


def test_free_spectrum_is_kinetic():
    g = Grid(32, 0.0, 4.0)
    spec = ClassicalHamiltonianSpec.from_functions(g, 2.0)
    w = np.linalg.eigvalsh(build_operator(spec, 0.5).matrix)
    k = g.k
    np.testing.assert_allclose(w, np.sort(0.25 * k**2 / 4.0), atol=1e-10)


def test_harmonic_levels():
    g = Grid(256, -12.0, 12.0)
    spec = ClassicalHamiltonianSpec.from_functions(g, 1.0, V=lambda q: 0.5 * 4.0 * q**2)
    w, v = build_operator(spec, 1.0).eigh()
    np.testing.assert_allclose(w[:6], 2.0 * (np.arange(6) + 0.5), rtol=1e-9)
    assert np.sum(np.abs(v[:, 0]) ** 2) * g.dq == pytest.approx(1.0)


@pytest.mark.parametrize("n_shift", [1, -2])
def test_gauge_shift_keeps_low_spectrum(n_shift):
    hbar = 0.8
    g = Grid(64, 0.0, 2 * np.pi)
    base = ClassicalHamiltonianSpec.from_functions(g, 1.0, A=lambda q: 0.5 * np.sin(q), V=lambda q: np.cos(2 * q))
    c = 2 * np.pi * hbar * n_shift / g.length
    shifted = ClassicalHamiltonianSpec(g, 1.0, base.vector_potential + c, base.scalar_potential)
    h0 = build_operator(base, hbar).matrix
    u = np.exp(1j * c * g.q / hbar)
    h1 = (u[:, None] * build_operator(shifted, hbar).matrix) * u.conj()[None, :]
    e0 = np.linalg.eigvalsh(h0)[:5]
    e1 = np.linalg.eigvalsh(h1)[:5]
    np.testing.assert_allclose(e1, e0, rtol=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.floats(-50, 50), st.floats(0.1, 10), st.floats(-3, 3))
def test_classical_velocity_linear_in_p(p, m, q):
    spec = sine_spec(mass=m)
    v0 = classical_velocity(spec, q, 0.0)
    assert classical_velocity(spec, q, p) - v0 == pytest.approx(p / m, rel=1e-12, abs=1e-12)


def test_classical_velocity_is_dh_dp():
    spec = sine_spec(mass=1.7)
    q, p, h = 0.9, 1.3, 1e-5
    fd = (spec.hamiltonian(q, p + h) - spec.hamiltonian(q, p - h)) / (2 * h)
    assert classical_velocity(spec, q, p) == pytest.approx(fd, rel=1e-8)


def test_spec_validation():
    g = Grid(16, 0.0, 1.0)
    with pytest.raises(ValueError):
        ClassicalHamiltonianSpec.from_functions(g, 0.0)
    with pytest.raises(ValueError):
        ClassicalHamiltonianSpec.from_functions(g, 1.0, V=lambda q: 1 / (q - q[3]))
    spec = ClassicalHamiltonianSpec.from_functions(g, 1.0)
    with pytest.raises(ValueError):
        spec.scalar_potential[0] = 1.0
    with pytest.raises(ValueError):
        build_operator(spec, -1.0)


def test_discretization_error_on_broken_blocks(monkeypatch):
    spec = sine_spec(16)
    import hjlab.quantizer as qz

    def skewed(s):
        d1 = s.grid.derivative_matrix(1)
        d1[0, 1] += 1e-3
        return d1, s.grid.derivative_matrix(2), s.vector_potential, s.scalar_potential

    monkeypatch.setattr(qz, "_blocks", skewed)
    with pytest.raises(DiscretizationError):
        build_operator(spec, 1.0)


def test_operator_helpers():
    spec = sine_spec(32)
    op = build_operator(spec, 1.0)
    psi = np.exp(1j * spec.grid.q) / np.sqrt(spec.grid.length)
    assert op.expectation(psi) == pytest.approx(np.real(np.vdot(psi, op.apply(psi))) * spec.grid.dq)
    assert op.spectral_radius() == pytest.approx(np.max(np.abs(np.linalg.eigvalsh(op.matrix))))
