import numpy as np
import pytest
import scipy.integrate
import scipy.stats

from hjlab.ensemble import (Ensemble, EnsembleConfig, bin_average, born_distance, estimate_density, flip_probability,
                            flip_signs, run, sample_initial, step_trajectories, uniforms, velocity_pair,
                            write_density_csv)
from hjlab.grid import Grid
from hjlab.madelung import decompose
from hjlab.quantizer import ClassicalHamiltonianSpec, build_operator
from hjlab.schrodinger import WaveField, init_gaussian, stream

G = Grid(256, -16.0, 16.0)
FREE = ClassicalHamiltonianSpec.from_functions(G, 1.0)


def gaussian_density(q0=0.0, s=1.0):
    return init_gaussian(G, q0, s).density


def test_counter_streams_are_prefix_stable():
    assert np.array_equal(uniforms(7, 1, 3, 10)[:4], uniforms(7, 1, 3, 4))
    assert not np.array_equal(uniforms(7, 1, 3, 4), uniforms(7, 2, 3, 4))
    assert not np.array_equal(uniforms(7, 1, 3, 4), uniforms(7, 1, 4, 4))
    assert not np.array_equal(uniforms(7, 1, 3, 4), uniforms(8, 1, 3, 4))


def test_config_validation():
    for bad in ({"n_particles": 0}, {"gamma": -1.0}, {"integrator": "leapfrog"}, {"interpolation": "spline"}):
        with pytest.raises(ValueError):
            EnsembleConfig(**bad)


def test_initial_signs_and_moments():
    n = 100_000
    ens = sample_initial(gaussian_density(0.7, 1.3), G, EnsembleConfig(n_particles=n, master_seed=11))
    assert set(np.unique(ens.s)) == {-1, 1}
    assert abs(ens.s.mean()) < 3 / np.sqrt(n)
    # the linear interpolant of the sampled density has variance s^2 + dq^2/6 to leading order
    var = 1.3**2 + G.dq**2 / 6
    assert abs(ens.q.mean() - 0.7) < 4 * np.sqrt(var / n)
    assert abs(ens.q.var() - var) < 4 * var * np.sqrt(2 / n)


def test_narrow_density_stays_in_its_cells():
    omega = np.zeros(G.n_points)
    omega[100] = 1 / G.dq
    ens = sample_initial(omega, G, EnsembleConfig(n_particles=1000))
    assert np.all((ens.q > G.q[99]) & (ens.q < G.q[101]))


def test_initial_density_must_be_normalised():
    with pytest.raises(ValueError, match="normalised"):
        sample_initial(2 * gaussian_density(), G, EnsembleConfig(n_particles=100))
    with pytest.raises(ValueError):
        sample_initial(gaussian_density() - 0.01, G, EnsembleConfig(n_particles=100))


def test_no_flips_without_rate():
    ens = sample_initial(gaussian_density(), G, EnsembleConfig(n_particles=1000))
    s0 = ens.s.copy()
    for _ in range(50):
        flip_signs(ens, 0.0, 0.01)
    assert np.array_equal(ens.s, s0)
    assert ens.flip_round == 50


def test_flip_guard():
    ens = sample_initial(gaussian_density(), G, EnsembleConfig(n_particles=100))
    flip_signs(ens, 200.0, 0.0005)
    with pytest.raises(ValueError):
        flip_signs(ens, 200.0, 0.001)


def test_lag_one_autocorrelation():
    n = 50_000
    gamma, dt = 5.0, 0.01
    ens = sample_initial(gaussian_density(), G, EnsembleConfig(n_particles=n, master_seed=3))
    corr = []
    for _ in range(5):
        before = ens.s.astype(float)
        flip_signs(ens, gamma, dt)
        corr.append(np.mean(before * ens.s))
    assert abs(np.mean(corr) - np.exp(-2 * gamma * dt)) < 4 / np.sqrt(5 * n)
    assert flip_probability(gamma, dt) == pytest.approx(0.5 * (1 - np.exp(-0.1)))


def test_sign_marginal_is_stationary():
    ens = sample_initial(gaussian_density(), G, EnsembleConfig(n_particles=2000, master_seed=5))
    ens.s[:] = 1
    for k in range(1, 10_001):
        flip_signs(ens, 10.0, 0.01)
        if k % 2500 == 0:
            plus = int(np.sum(ens.s > 0))
            assert scipy.stats.chisquare([plus, ens.n - plus]).pvalue > 0.001


def test_plane_wave_moves_rigidly():
    k = 2 * np.pi * 4 / G.length
    state = WaveField(G, np.exp(1j * k * G.q), 0.0, 0.8).normalized()
    spec = ClassicalHamiltonianSpec.from_functions(G, 2.0, A=lambda q: np.full_like(q, 0.3))
    ens = sample_initial(state.density, G, EnsembleConfig(n_particles=500))
    q0 = ens.q.copy()
    step_trajectories(ens, [velocity_pair(state, spec)], 0.01, EnsembleConfig())
    shift = (ens.q - q0 + G.length / 2) % G.length - G.length / 2
    np.testing.assert_allclose(shift, (0.8 * k - 0.3) / 2.0 * 0.01, atol=1e-12)


def test_osmotic_flow_matches_reference_ode():
    s0, hbar, m = 1.0, 1.0, 1.0
    state = init_gaussian(G, 0.0, s0, hbar_eff=hbar)
    field = velocity_pair(state, FREE)
    ens = Ensemble(G, np.linspace(-2.0, 2.0, 21), np.array([1, -1] * 10 + [1], dtype=np.int8))
    start, signs = ens.q.copy(), ens.s.astype(float)
    cfg = EnsembleConfig(gamma=0.0)
    for _ in range(100):
        step_trajectories(ens, [field], 0.01, cfg)

    def rhs(t, q):
        return -signs * hbar * q / (2 * m * s0**2)

    ref = scipy.integrate.solve_ivp(rhs, (0.0, 1.0), start, method="DOP853", rtol=1e-12, atol=1e-12).y[:, -1]
    np.testing.assert_allclose(ens.q, ref, atol=1e-6)
    # s=+1 contracts toward the maximum, s=-1 spreads away from it
    assert np.all(np.abs(ens.q[signs > 0]) <= np.abs(start[signs > 0]) + 1e-12)
    assert np.all(np.abs(ens.q[signs < 0]) >= np.abs(start[signs < 0]))


def test_rk4_is_fourth_order():
    field = np.stack([np.sin(G.q / 2) + 0.5, np.cos(G.q / 3)])
    start = np.linspace(-5.0, 5.0, 41)
    signs = np.where(np.arange(41) % 2, 1, -1).astype(np.int8)

    def endpoint(dt):
        ens = Ensemble(G, start.copy(), signs.copy())
        for _ in range(int(round(2.0 / dt))):
            step_trajectories(ens, [field], dt, EnsembleConfig())
        return ens.q

    ref = endpoint(0.2 / 64)
    errs = [np.max(np.abs(endpoint(dt) - ref)) for dt in (0.2, 0.1, 0.05)]
    ratios = np.array(errs[:-1]) / np.array(errs[1:])
    assert np.all((ratios > 13) & (ratios < 19))


def test_nan_velocity_freezes_particles():
    field = np.ones((2, G.n_points))
    field[:, 100:110] = np.nan
    ens = Ensemble(G, np.array([G.q[104], G.q[50]]), np.array([1, -1], dtype=np.int8))
    frozen = step_trajectories(ens, [field], 0.01, EnsembleConfig())
    assert frozen == 1 and ens.frozen_total == 1
    assert ens.q[0] == G.q[104]
    assert ens.q[1] == pytest.approx(G.q[50] + 0.01)
    frozen = step_trajectories(ens, [field], 0.01, EnsembleConfig(integrator="euler", interpolation="linear"))
    assert frozen == 1 and ens.frozen_total == 2


def _mixture_errors(dt):
    state = init_gaussian(G, -1.0, 1.0, p0=1.5)
    f = decompose(state, spec=FREE)
    field = velocity_pair(state, FREE)
    w = f.omega * G.dq
    test = np.cos(0.7 * G.q) + 0.3 * np.sin(1.9 * G.q)
    dtest = -0.7 * np.sin(0.7 * G.q) + 0.57 * np.cos(1.9 * G.q)
    predicted = np.sum(w * test) + dt * np.sum(w * dtest * f.v_eff)
    moved = {}
    for sign in (1, -1):
        ens = Ensemble(G, G.q.copy(), np.full(G.n_points, sign, dtype=np.int8))
        step_trajectories(ens, [field], dt, EnsembleConfig(integrator="euler"))
        moved[sign] = np.sum(w * (np.cos(0.7 * ens.q) + 0.3 * np.sin(1.9 * ens.q)))
    return abs(0.5 * (moved[1] + moved[-1]) - predicted), abs(moved[1] - predicted)


def test_equal_mixture_transports_with_effective_velocity():
    mix, single = zip(*[_mixture_errors(dt) for dt in (0.02, 0.01, 0.005)])
    mix_ratio = np.array(mix[:-1]) / np.array(mix[1:])
    single_ratio = np.array(single[:-1]) / np.array(single[1:])
    assert np.all(np.abs(mix_ratio - 4) < 0.5)
    assert np.all(np.abs(single_ratio - 2) < 0.3)


def test_density_estimate_and_distances():
    edges = np.linspace(-6.0, 6.0, 65)
    omega = gaussian_density(0.0, 1.0)
    exact = bin_average(omega, G, edges)
    est = estimate_density(np.array([0.0, 0.1, 1.0]), edges)
    assert np.sum(est.heights * est.widths) == pytest.approx(1.0)
    fake = estimate_density(np.array([]), edges)
    fake.heights = exact
    assert born_distance(fake, omega, G) == 0.0
    far = np.zeros(G.n_points)
    far[(G.q > -5.0) & (G.q < -4.0)] = 1.0
    far /= G.integrate(far)
    assert born_distance(estimate_density(np.array([1.0]), edges), far, G) == pytest.approx(1.0)


def test_bin_average_of_linear_interpolant():
    omega = gaussian_density(0.0, 1.5)
    full = np.linspace(G.q_min, G.q_max, 9)
    assert np.sum(bin_average(omega, G, full) * np.diff(full)) == pytest.approx(G.integrate(omega), rel=1e-13)
    # a single cell: mean of the two node values
    j = 120
    cell = np.array([G.q[j], G.q[j] + G.dq])
    assert bin_average(omega, G, cell)[0] == pytest.approx(0.5 * (omega[j] + omega[j + 1]), rel=1e-13)
    with pytest.raises(ValueError):
        bin_average(omega, G, np.array([-20.0, 0.0]))


def test_sampling_noise_matches_multinomial_oracle():
    edges = np.linspace(-4.0, 4.0, 65)
    omega = gaussian_density()
    n = 100_000
    p = bin_average(omega, G, edges) * np.diff(edges)
    oracle = 0.5 * np.sum(np.sqrt(2 * p * (1 - p) / (np.pi * n)))
    tvs = [born_distance(estimate_density(sample_initial(omega, G, EnsembleConfig(n_particles=n, master_seed=s)).q,
                                          edges), omega, G) for s in range(4)]
    assert 0.005 <= oracle <= 0.02
    assert abs(np.mean(tvs) / oracle - 1) < 0.2


def test_four_times_the_particles_halves_the_distance():
    edges = np.linspace(-4.0, 4.0, 65)
    omega = gaussian_density()

    def mean_tv(n):
        return np.mean([born_distance(estimate_density(
            sample_initial(omega, G, EnsembleConfig(n_particles=n, master_seed=s)).q, edges), omega, G)
            for s in range(8)])

    ratio = mean_tv(10_000) / mean_tv(40_000)
    assert 1.7 < ratio < 2.3


def harmonic_setup():
    spec = ClassicalHamiltonianSpec.from_functions(G, 1.0, V=lambda q: 0.5 * q**2)
    op = build_operator(spec, 1.0)
    _, v = op.eigh()
    return spec, op, WaveField(G, v[:, 0], 0.0, 1.0)


def test_run_is_deterministic_and_tracks_ground_state(tmp_path):
    spec, op, ground = harmonic_setup()
    dt, n = 0.001, 400
    edges = np.linspace(-4.0, 4.0, 33)
    cfg = EnsembleConfig(n_particles=20_000, gamma=100.0, master_seed=9)

    def go():
        ens = sample_initial(ground.density, G, cfg)
        return run(ens, stream(ground, op, dt / 2, 2 * n), spec, dt, n, cfg, edges, density_stride=100,
                   record_stride=100, record_every_particle=1000)

    a, b = go(), go()
    assert np.array_equal(a.ensemble.q, b.ensemble.q) and np.array_equal(a.ensemble.s, b.ensemble.s)
    assert len(a.densities) == 5
    assert max(born_distance(d, om, G) for d, om in zip(a.densities, a.exact)) < 0.03
    pa, pb = tmp_path / "a.csv", tmp_path / "b.csv"
    a.trajectories.write_csv(pa)
    b.trajectories.write_csv(pb)
    assert pa.read_bytes() == pb.read_bytes()
    rows = pa.read_text().splitlines()
    assert rows[0] == "t [time],particle_id [index],q [length],s [sign]"
    assert len(rows) == 1 + 5 * 20
    dens = tmp_path / "d.csv"
    write_density_csv(dens, a.densities, a.exact, G)
    data = np.loadtxt(dens, delimiter=",", skiprows=1)
    assert data.shape == (5 * 32, 4)


def test_signs_split_without_flips():
    spec, op, ground = harmonic_setup()
    dt, n = 0.002, 500
    edges = np.linspace(-6.0, 6.0, 65)
    cfg = EnsembleConfig(n_particles=20_000, gamma=0.0, master_seed=2)
    ens = sample_initial(ground.density, G, cfg)
    res = run(ens, stream(ground, op, dt / 2, 2 * n), spec, dt, n, cfg, edges, density_stride=n)

    def split(pair):
        plus, minus = pair
        return 0.5 * np.sum(np.abs(plus.heights - minus.heights) * plus.widths)

    assert split(res.densities_by_sign[0]) < 0.05
    assert split(res.densities_by_sign[-1]) > 0.3


def test_run_checks_snapshot_times():
    spec, op, ground = harmonic_setup()
    cfg = EnsembleConfig(n_particles=100)
    ens = sample_initial(ground.density, G, cfg)
    with pytest.raises(ValueError, match="snapshot time"):
        run(ens, stream(ground, op, 0.001, 10), spec, 0.001, 5, cfg, np.linspace(-4, 4, 9))
    with pytest.raises(ValueError, match="ended early"):
        run(ens, stream(ground, op, 0.0005, 3), spec, 0.001, 5, cfg, np.linspace(-4, 4, 9))
