"""Monte-Carlo particle ensembles carrying a binary multiplier sign.

Each particle has a position and a sign s = +/-1 (lambda = s*hbar_eff/2). It
moves with the sign-resolved velocity effective + s*(hbar_eff/2m)*omega'/omega,
and its sign flips as a symmetric two-state Markov process with rate gamma.

Random numbers are counter based: the draw for particle i at flip round k is
a pure function of (master_seed, purpose, k, i), so trajectories do not depend
on how the particle loop is scheduled.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numba
import numpy as np

from .grid import Grid
from .madelung import DEFAULT_FLOOR, decompose
from .quantizer import ClassicalHamiltonianSpec
from .schrodinger import WaveField

# the bundled TBB may be too old; prefer layers that never warn
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

# RNG purposes, used as a counter word
_POSITION, _SIGN, _FLIP = 1, 2, 3

MAX_FLIP_PROBABILITY_ARG = 0.1


def uniforms(master_seed: int, purpose: int, round_index: int, n: int) -> np.ndarray:
    """n uniforms in [0, 1); element i belongs to particle stream i."""
    bitgen = np.random.Philox(key=int(master_seed) % 2**128, counter=[0, int(round_index), int(purpose), 0])
    return np.random.Generator(bitgen).random(n)


@dataclass(frozen=True)
class EnsembleConfig:
    n_particles: int = 10_000
    gamma: float = 0.0
    integrator: str = "rk4"
    interpolation: str = "cubic"
    master_seed: int = 0

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be positive")
        if not self.gamma >= 0:
            raise ValueError("gamma must be >= 0")
        if self.integrator not in ("rk4", "euler"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.interpolation not in ("linear", "cubic"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")


@dataclass
class Ensemble:
    grid: Grid = field(repr=False)
    q: np.ndarray
    s: np.ndarray
    master_seed: int = 0
    flip_round: int = 0
    frozen_total: int = 0

    @property
    def n(self) -> int:
        return len(self.q)

    @property
    def ids(self) -> np.ndarray:
        return np.arange(self.n)

    def copy(self) -> "Ensemble":
        return replace(self, q=self.q.copy(), s=self.s.copy())


def _linear_cdf(omega: np.ndarray, grid: Grid) -> np.ndarray:
    """CDF of the periodic piecewise-linear interpolant of omega at the n+1 nodes q_min..q_max."""
    cell = 0.5 * (omega + np.roll(omega, -1)) * grid.dq
    return np.concatenate([[0.0], np.cumsum(cell)])


def _inverse_linear_cdf(omega: np.ndarray, grid: Grid, u: np.ndarray) -> np.ndarray:
    cdf = _linear_cdf(omega, grid)
    target = u * cdf[-1]
    j = np.clip(np.searchsorted(cdf, target, side="right") - 1, 0, grid.n_points - 1)
    a, b = omega[j], np.roll(omega, -1)[j]
    rem = (target - cdf[j]) / grid.dq  # solve a*x + (b-a)*x^2/2 = rem for x in [0, 1]
    slope = b - a
    with np.errstate(divide="ignore", invalid="ignore"):
        disc = np.sqrt(np.maximum(a * a + 2 * slope * rem, 0.0))
        x = np.where(np.abs(slope) > 1e-14 * np.maximum(a, 1e-300), (disc - a) / slope,
                     np.where(a > 0, rem / a, 0.5))
    # with a == b == 0 the cell carries no mass; x is irrelevant
    x = np.clip(np.nan_to_num(x, nan=0.5), 0.0, 1.0)
    return grid.wrap(grid.q_min + (j + x) * grid.dq)


def sample_initial(omega0: np.ndarray, grid: Grid, config: EnsembleConfig, norm_tol: float = 1e-6) -> Ensemble:
    """Positions by inverse CDF from omega0, signs uniform on {+1, -1}."""
    omega0 = np.asarray(grid.validate(omega0, "omega0"), dtype=float)
    if (omega0 < 0).any():
        raise ValueError("omega0 must be non-negative")
    total = grid.integrate(omega0)
    if abs(total - 1) > norm_tol:
        raise ValueError(f"omega0 is not normalised: integral {total!r}")
    n = config.n_particles
    q = _inverse_linear_cdf(omega0, grid, uniforms(config.master_seed, _POSITION, 0, n))
    s = np.where(uniforms(config.master_seed, _SIGN, 0, n) < 0.5, 1, -1).astype(np.int8)
    return Ensemble(grid, q, s, master_seed=config.master_seed)


def flip_probability(gamma: float, dt: float) -> float:
    return 0.5 * (1 - np.exp(-2 * gamma * dt))


def flip_signs(ensemble: Ensemble, gamma: float, dt: float) -> Ensemble:
    """Flip each sign independently with probability (1 - exp(-2 gamma dt))/2 (in place)."""
    if gamma * dt > MAX_FLIP_PROBABILITY_ARG * (1 + 1e-12):
        raise ValueError(f"gamma*dt = {gamma * dt:.3g} exceeds {MAX_FLIP_PROBABILITY_ARG}")
    if gamma > 0:
        u = uniforms(ensemble.master_seed, _FLIP, ensemble.flip_round, ensemble.n)
        ensemble.s[u < flip_probability(gamma, dt)] *= -1
    ensemble.flip_round += 1
    return ensemble


# -- trajectory kernels ----------------------------------------------------

@numba.njit(cache=True, inline="always")
def _interp(field, off, q, q_min, dq, n, cubic):
    # field is flat (2*n,); off selects the sign block
    x = (q - q_min) / dq
    if x < 0.0 or x >= n:
        x -= n * np.floor(x / n)
    j = int(x)
    t = x - j
    if j >= n:
        j -= n
    j1 = j + 1 if j + 1 < n else 0
    if not cubic:
        return (1 - t) * field[off + j] + t * field[off + j1]
    jm = j - 1 if j > 0 else n - 1
    j2 = j1 + 1 if j1 + 1 < n else 0
    tm, tp, t2 = t - 1.0, t + 1.0, t - 2.0
    return (-t * tm * t2 * field[off + jm] + 3.0 * tp * tm * t2 * field[off + j]
            - 3.0 * tp * t * t2 * field[off + j1] + tp * t * tm * field[off + j2]) / 6.0


@numba.njit(cache=True, inline="always")
def _wrap(q, q_min, length):
    if q_min <= q < q_min + length:
        return q
    w = q - length * np.floor((q - q_min) / length)
    if w >= q_min + length:
        w = q_min
    return w


@numba.njit(cache=True, parallel=True)
def _rk4_kernel(q, s, v0, v1, v2, dt, q_min, dq, n, cubic, frozen):
    # particles are independent, so the result does not depend on thread count
    length = n * dq
    count = 0
    for i in numba.prange(q.shape[0]):
        off = 0 if s[i] > 0 else n
        x = q[i]
        a = _interp(v0, off, x, q_min, dq, n, cubic)
        b = _interp(v1, off, x + 0.5 * dt * a, q_min, dq, n, cubic)
        c = _interp(v1, off, x + 0.5 * dt * b, q_min, dq, n, cubic)
        d = _interp(v2, off, x + dt * c, q_min, dq, n, cubic)
        inc = dt * (a + 2 * b + 2 * c + d) / 6
        if np.isfinite(inc):
            q[i] = _wrap(x + inc, q_min, length)
            frozen[i] = False
        else:
            frozen[i] = True
            count += 1
    return count


@numba.njit(cache=True, parallel=True)
def _euler_kernel(q, s, v0, dt, q_min, dq, n, cubic, frozen):
    length = n * dq
    count = 0
    for i in numba.prange(q.shape[0]):
        off = 0 if s[i] > 0 else n
        inc = dt * _interp(v0, off, q[i], q_min, dq, n, cubic)
        if np.isfinite(inc):
            q[i] = _wrap(q[i] + inc, q_min, length)
            frozen[i] = False
        else:
            frozen[i] = True
            count += 1
    return count


def velocity_pair(state: WaveField, spec: ClassicalHamiltonianSpec, epsilon: float = DEFAULT_FLOOR) -> np.ndarray:
    """Stacked (2, n) array: velocity for s=+1 and s=-1, NaN on node-masked points."""
    f = decompose(state, epsilon)
    v = (f.phase_gradient - spec.vector_potential) / spec.mass
    osm = (state.hbar_eff / 2 / spec.mass) * f.grad_log_omega
    pair = np.stack([v + osm, v - osm])
    pair[:, f.node_mask] = np.nan
    return pair


def step_trajectories(ensemble: Ensemble, velocity_fields: Sequence[np.ndarray], dt: float,
                      config: EnsembleConfig) -> int:
    """Advance positions in place; returns the number of particles frozen this step.

    ``velocity_fields`` holds stacked (2, n) sign-resolved velocity arrays at
    times t, t+dt/2, t+dt for rk4 (a single entry is reused for steady fields),
    or at time t only for euler.
    """
    g = ensemble.grid
    cubic = config.interpolation == "cubic"
    frozen = np.zeros(ensemble.n, dtype=np.bool_)
    fields = [np.ascontiguousarray(v, dtype=float).reshape(-1) for v in velocity_fields]
    if config.integrator == "rk4":
        if len(fields) == 1:
            fields = fields * 3
        count = _rk4_kernel(ensemble.q, ensemble.s, fields[0], fields[1], fields[2], dt,
                            g.q_min, g.dq, g.n_points, cubic, frozen)
    else:
        count = _euler_kernel(ensemble.q, ensemble.s, fields[0], dt, g.q_min, g.dq, g.n_points, cubic, frozen)
    ensemble.frozen_total += int(count)
    return int(count)


# -- densities ---------------------------------------------------------------

@dataclass
class DensityEstimate:
    t: float
    edges: np.ndarray
    counts: np.ndarray
    heights: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)


def estimate_density(q: np.ndarray, edges: np.ndarray, t: float = 0.0) -> DensityEstimate:
    counts, _ = np.histogram(q, bins=edges)
    total = counts.sum()
    heights = counts / (total * np.diff(edges)) if total else np.zeros(len(counts))
    return DensityEstimate(t, np.asarray(edges, dtype=float), counts, heights)


def bin_average(omega: np.ndarray, grid: Grid, edges: np.ndarray) -> np.ndarray:
    """Exact bin averages of the piecewise-linear interpolant of omega (edges inside the domain)."""
    edges = np.asarray(edges, dtype=float)
    cdf_nodes = _linear_cdf(omega, grid)
    x = (edges - grid.q_min) / grid.dq
    if x.min() < 0 or x.max() > grid.n_points:
        raise ValueError("bin edges must lie inside the grid domain")
    j = np.minimum(np.floor(x).astype(int), grid.n_points - 1)
    t = x - j
    a, b = omega[j], np.roll(omega, -1)[j]
    cdf = cdf_nodes[j] + grid.dq * (a * t + 0.5 * (b - a) * t**2)
    return np.diff(cdf) / np.diff(edges)


def born_distance(estimate: DensityEstimate, omega: np.ndarray, grid: Grid) -> float:
    """Total-variation distance 0.5*sum |hist - bin-averaged omega| * width."""
    exact = bin_average(omega, grid, estimate.edges)
    return float(0.5 * np.sum(np.abs(estimate.heights - exact) * estimate.widths))


# -- driver --------------------------------------------------------------------

@dataclass
class TrajectoryRecord:
    t: list = field(default_factory=list)
    ids: np.ndarray | None = None
    q: list = field(default_factory=list)
    s: list = field(default_factory=list)

    def add(self, t, ens: Ensemble):
        self.t.append(t)
        self.q.append(ens.q[self.ids].copy())
        self.s.append(ens.s[self.ids].copy())

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t [time],particle_id [index],q [length],s [sign]\n")
            for t, q, s in zip(self.t, self.q, self.s):
                for i, qi, si in zip(self.ids, q, s):
                    fh.write(f"{t:.17g},{i},{qi:.17g},{si}\n")


@dataclass
class RunResult:
    ensemble: Ensemble
    trajectories: TrajectoryRecord
    densities: list  # DensityEstimate for the whole ensemble
    densities_by_sign: list  # (plus, minus) DensityEstimate pairs
    exact: list  # omega arrays at the density times
    frozen_total: int
    n_steps: int


def run(ensemble: Ensemble, snapshots: Iterable[WaveField], spec: ClassicalHamiltonianSpec, dt: float,
        n_steps: int, config: EnsembleConfig, edges: np.ndarray, density_stride: int = 1,
        record_stride: int = 0, record_every_particle: int = 100, epsilon: float = DEFAULT_FLOOR) -> RunResult:
    """Flip signs and move particles against a stream of wave snapshots.

    For rk4 ``snapshots`` must yield states at t0, t0+dt/2, t0+dt, ... (2*n_steps+1
    entries); for euler at t0, t0+dt, ... (n_steps+1 entries).
    """
    sub = 2 if config.integrator == "rk4" else 1
    it = iter(snapshots)
    record = TrajectoryRecord(ids=np.arange(0, ensemble.n, max(record_every_particle, 1)))
    densities, by_sign, exact = [], [], []

    def expect(k):
        try:
            st = next(it)
        except StopIteration:
            raise ValueError("snapshot stream ended early") from None
        want = t0 + k * dt / sub
        if abs(st.t - want) > 1e-9 * max(1.0, abs(want)):
            raise ValueError(f"snapshot time {st.t} does not match expected {want}")
        return st

    def emit(st):
        densities.append(estimate_density(ensemble.q, edges, st.t))
        by_sign.append((estimate_density(ensemble.q[ensemble.s > 0], edges, st.t),
                        estimate_density(ensemble.q[ensemble.s < 0], edges, st.t)))
        exact.append(st.density)

    first = next(it)
    t0 = first.t
    current = velocity_pair(first, spec, epsilon)
    emit(first)
    if record_stride:
        record.add(t0, ensemble)
    for n in range(1, n_steps + 1):
        flip_signs(ensemble, config.gamma, dt)
        if sub == 2:
            mid = velocity_pair(expect(2 * n - 1), spec, epsilon)
            end_state = expect(2 * n)
            end = velocity_pair(end_state, spec, epsilon)
            step_trajectories(ensemble, (current, mid, end), dt, config)
        else:
            end_state = expect(n)
            end = velocity_pair(end_state, spec, epsilon)
            step_trajectories(ensemble, (current,), dt, config)
        current = end
        if density_stride and n % density_stride == 0:
            emit(end_state)
        if record_stride and n % record_stride == 0:
            record.add(end_state.t, ensemble)
    return RunResult(ensemble, record, densities, by_sign, exact, ensemble.frozen_total, n_steps)


def write_density_csv(path, densities: Sequence[DensityEstimate], exact: Sequence[np.ndarray], grid: Grid) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("t [time],bin_center [length],height [1/length],exact_density [1/length]\n")
        for est, om in zip(densities, exact):
            ex = bin_average(om, grid, est.edges)
            for c, h, e in zip(est.centers, est.heights, ex):
                fh.write(f"{est.t:.17g},{c:.17g},{h:.17g},{e:.17g}\n")
