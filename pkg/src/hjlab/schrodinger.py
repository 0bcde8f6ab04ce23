"""Wave fields and Cayley (Crank-Nicolson) time propagation."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .grid import Grid
from .quantizer import DiscreteOperator

SOLVE_TOL = 1e-12
DT_GUARD = 0.5


class PropagationError(RuntimeError):
    pass


@dataclass(frozen=True)
class WaveField:
    grid: Grid = field(repr=False)
    psi: np.ndarray
    t: float
    hbar_eff: float

    def __post_init__(self):
        psi = np.array(self.grid.validate(self.psi, "psi"), dtype=complex)
        psi.flags.writeable = False
        object.__setattr__(self, "psi", psi)
        if not self.hbar_eff > 0:
            raise ValueError("hbar_eff must be positive")

    @property
    def density(self) -> np.ndarray:
        return np.abs(self.psi) ** 2

    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.density) * self.grid.dq))

    def normalized(self) -> "WaveField":
        n = self.norm()
        if n == 0:
            raise ValueError("cannot normalise an all-zero wave field")
        return replace(self, psi=self.psi / n)

    def inner(self, other: "WaveField") -> complex:
        return complex(np.vdot(self.psi, other.psi) * self.grid.dq)

    def mean_position(self) -> float:
        return float(np.sum(self.grid.q * self.density) * self.grid.dq)

    def position_variance(self) -> float:
        mu = self.mean_position()
        return float(np.sum((self.grid.q - mu) ** 2 * self.density) * self.grid.dq)

    def mean_momentum(self) -> float:
        """<-i hbar d/dq>."""
        dpsi = self.grid.diff1(self.psi)
        return float(np.real(np.vdot(self.psi, -1j * self.hbar_eff * dpsi)) * self.grid.dq)


def infidelity(a: WaveField, b: WaveField) -> float:
    return 1.0 - abs(a.inner(b)) ** 2 / (a.norm() ** 2 * b.norm() ** 2)


def init_gaussian(grid: Grid, q0: float, sigma0: float, p0: float = 0.0, hbar_eff: float = 1.0,
                  t: float = 0.0, tail_tol: float = 1e-12) -> WaveField:
    """Normalised packet exp(-(q-q0)^2/(4 sigma0^2) + i p0 (q-q0)/hbar_eff).

    sigma0 is the standard deviation of |psi|^2 and p0 the mean momentum.
    """
    if not sigma0 > 3 * grid.dq:
        raise ValueError(f"width sigma0={sigma0} is not resolved (needs > 3*dq = {3 * grid.dq})")
    x = grid.q - q0
    amp = np.exp(-(x**2) / (4 * sigma0**2))
    edge = max(amp[0], np.exp(-((grid.q_max - q0) ** 2) / (4 * sigma0**2)))
    if edge > tail_tol:
        raise ValueError(f"packet amplitude {edge:.2e} at the boundary exceeds {tail_tol:.0e}")
    psi = amp * np.exp(1j * p0 * x / hbar_eff)
    return WaveField(grid, psi, t, hbar_eff).normalized()


def superpose(a: WaveField, b: WaveField, weights: Sequence[complex] = (1.0, 1.0)) -> WaveField:
    if a.grid != b.grid:
        raise ValueError("wave fields live on different grids")
    if a.hbar_eff != b.hbar_eff:
        raise ValueError("wave fields have different hbar_eff")
    w1, w2 = weights
    return WaveField(a.grid, w1 * a.psi + w2 * b.psi, a.t, a.hbar_eff).normalized()


class CayleyPropagator:
    """(1 + K)^-1 (1 - K) with K = i dt H / (2 hbar_eff).

    1 + K is normal with condition number sqrt(1 + (dt E_max / 2 hbar)^2), so the
    map is formed once by a direct solve and then applied as a matrix product.
    Every application is checked against the defining linear system.
    """

    def __init__(self, operator: DiscreteOperator, dt: float):
        if dt == 0 or not np.isfinite(dt):
            raise ValueError(f"dt must be finite and non-zero, got {dt}")
        self.operator = operator
        self.dt = float(dt)
        n = operator.matrix.shape[0]
        self._k = 0.5j * self.dt / operator.hbar_eff * operator.matrix
        self._u = scipy.linalg.solve(np.eye(n) + self._k, np.eye(n) - self._k)

    def residual(self, psi: np.ndarray, out: np.ndarray) -> float:
        """Relative residual of (1 + K) out = (1 - K) psi."""
        r = (out - psi) + self._k @ (out + psi)
        return float(np.linalg.norm(r) / max(np.linalg.norm(psi), np.finfo(float).tiny))

    def __call__(self, psi: np.ndarray) -> np.ndarray:
        x = self._u @ psi
        res = self.residual(psi, x)
        if not res < SOLVE_TOL:
            raise PropagationError(f"Cayley solve did not converge: relative residual {res:.3e}")
        return x


def check_dt_guard(operator: DiscreteOperator, dt: float, limit: float = DT_GUARD) -> float:
    """Return dt*E_max/hbar_eff, raising if it is not below ``limit``."""
    value = abs(dt) * operator.spectral_radius() / operator.hbar_eff
    if not value < limit:
        raise ValueError(f"dt guard violated: dt*E_max/hbar_eff = {value:.3g} >= {limit}")
    return value


_cache: dict = {}


def _propagator(operator: DiscreteOperator, dt: float) -> CayleyPropagator:
    key = (id(operator), float(dt))
    prop = _cache.get(key)
    if prop is None or prop.operator is not operator:
        if len(_cache) > 8:
            _cache.clear()
        prop = _cache[key] = CayleyPropagator(operator, dt)
    return prop


def step(state: WaveField, operator: DiscreteOperator, dt: float) -> WaveField:
    if operator.hbar_eff != state.hbar_eff:
        raise ValueError("operator and state disagree on hbar_eff")
    psi = _propagator(operator, dt)(state.psi)
    return WaveField(state.grid, psi, state.t + dt, state.hbar_eff)


@dataclass
class Snapshot:
    t: float
    psi: np.ndarray


def evolve(state: WaveField, operator: DiscreteOperator, dt: float, n_steps: int,
           stride: int = 0, observers: Sequence[Callable[[WaveField, int], None]] = ()):
    """Apply ``step`` n_steps times.

    Every ``stride`` steps (and at step 0) a snapshot is recorded and each
    observer is called with (state, step_index). stride=0 disables both.
    Returns (final_state, snapshots).
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    if operator.hbar_eff != state.hbar_eff:
        raise ValueError("operator and state disagree on hbar_eff")
    snaps: list[Snapshot] = []

    def observe(s, i):
        snaps.append(Snapshot(s.t, s.psi))
        for obs in observers:
            obs(s, i)

    if stride:
        observe(state, 0)
    if n_steps == 0:
        return state, snaps
    prop = _propagator(operator, dt)
    psi = state.psi
    for i in range(1, n_steps + 1):
        psi = prop(psi)
        if stride and i % stride == 0:
            observe(WaveField(state.grid, psi, state.t + i * dt, state.hbar_eff), i)
    return WaveField(state.grid, psi, state.t + n_steps * dt, state.hbar_eff), snaps


SNAPSHOT_HEADER = "t [time],j [index],q [length],re_psi [length^-1/2],im_psi [length^-1/2]"


def write_snapshots_csv(path, snapshots: Sequence[Snapshot], grid: Grid) -> None:
    """CSV with columns t, j, q, re_psi, im_psi (17 significant digits, so round trips are exact)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(SNAPSHOT_HEADER + "\n")
        for s in snapshots:
            for j, (q, z) in enumerate(zip(grid.q, s.psi)):
                fh.write(f"{s.t:.17g},{j},{q:.17g},{z.real:.17g},{z.imag:.17g}\n")


def read_snapshots_csv(path, grid: Grid) -> list[Snapshot]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    out = []
    for start in range(0, len(data), grid.n_points):
        block = data[start:start + grid.n_points]
        out.append(Snapshot(float(block[0, 0]), block[:, 3] + 1j * block[:, 4]))
    return out


def stream(state: WaveField, operator: DiscreteOperator, dt: float, n_steps: int):
    """Yield the state at t0, t0+dt, ..., t0+n_steps*dt without storing them."""
    prop = _propagator(operator, dt)
    psi = state.psi
    yield state
    for i in range(1, n_steps + 1):
        psi = prop(psi)
        yield WaveField(state.grid, psi, state.t + i * dt, state.hbar_eff)
