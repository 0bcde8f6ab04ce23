"""Uniform periodic 1-D grid with differentiation, interpolation and quadrature.

Fields are plain numpy arrays of length ``n_points``; the grid validates them
on the way in.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

SCHEMES = ("spectral", "central4")
INTERPOLATIONS = ("linear", "cubic")


def check_finite(values: np.ndarray, name: str = "field") -> None:
    bad = ~np.isfinite(values)
    if bad.any():
        idx = int(np.flatnonzero(bad)[0])
        raise ValueError(f"{name} has a non-finite value at index {idx}: {values[idx]!r}")


@dataclass(frozen=True)
class Grid:
    """Periodic lattice q_j = q_min + j*dq, j = 0..n_points-1 (q_max == q_min)."""

    n_points: int
    q_min: float
    q_max: float

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 16 or self.n_points % 2:
            raise ValueError(f"n_points must be an even integer >= 16, got {self.n_points}")
        if not (np.isfinite(self.q_min) and np.isfinite(self.q_max)) or self.q_max <= self.q_min:
            raise ValueError(f"need finite q_min < q_max, got [{self.q_min}, {self.q_max})")

    @property
    def length(self) -> float:
        return self.q_max - self.q_min

    @property
    def dq(self) -> float:
        return self.length / self.n_points

    @cached_property
    def q(self) -> np.ndarray:
        q = self.q_min + self.dq * np.arange(self.n_points)
        q.flags.writeable = False
        return q

    @cached_property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order."""
        k = 2 * np.pi * np.fft.fftfreq(self.n_points, d=self.dq)
        k.flags.writeable = False
        return k

    @cached_property
    def _ik(self) -> np.ndarray:
        # Nyquist mode dropped so that diff1 maps real to real and is antisymmetric
        ik = 1j * self.k
        ik[self.n_points // 2] = 0.0
        return ik

    @cached_property
    def _k2(self) -> np.ndarray:
        # the Nyquist mode keeps -k^2 here; zeroing it would give the sawtooth zero kinetic energy
        return -(self.k**2)

    def validate(self, f, name: str = "field") -> np.ndarray:
        f = np.asarray(f)
        if f.shape != (self.n_points,):
            raise ValueError(f"{name} must have shape ({self.n_points},), got {f.shape}")
        check_finite(f, name)
        return f

    def wrap(self, q):
        """Map positions into [q_min, q_max)."""
        w = self.q_min + np.mod(np.asarray(q, dtype=float) - self.q_min, self.length)
        # mod can round up to exactly length
        return np.where(w >= self.q_max, self.q_min, w)

    # -- differentiation -------------------------------------------------

    def diff1(self, f, scheme: str = "spectral") -> np.ndarray:
        f = self.validate(f)
        if scheme == "spectral":
            out = np.fft.ifft(self._ik * np.fft.fft(f))
        elif scheme == "central4":
            out = (8 * (np.roll(f, -1) - np.roll(f, 1)) - (np.roll(f, -2) - np.roll(f, 2))) / (12 * self.dq)
        else:
            raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
        return out if np.iscomplexobj(f) else out.real

    def diff2(self, f, scheme: str = "spectral") -> np.ndarray:
        f = self.validate(f)
        if scheme == "spectral":
            out = np.fft.ifft(self._k2 * np.fft.fft(f))
        elif scheme == "central4":
            out = (
                -(np.roll(f, -2) + np.roll(f, 2)) + 16 * (np.roll(f, -1) + np.roll(f, 1)) - 30 * f
            ) / (12 * self.dq**2)
        else:
            raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
        return out if np.iscomplexobj(f) else out.real

    def derivative_matrix(self, order: int = 1) -> np.ndarray:
        """Dense spectral differentiation matrix (real circulant).

        The first-derivative matrix is exactly antisymmetric and the second
        exactly symmetric, so operators assembled from them inherit their
        Hermiticity without round-off.
        """
        if order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        n = self.n_points
        col = np.fft.ifft(self._ik if order == 1 else self._k2).real
        rev = np.roll(col[::-1], 1)  # rev[j] = col[-j mod n]
        col = 0.5 * (col - rev) if order == 1 else 0.5 * (col + rev)
        idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
        return col[idx]

    # -- quadrature and interpolation -----------------------------------

    def integrate(self, f) -> float:
        f = self.validate(f)
        if np.iscomplexobj(f):
            raise ValueError("integrate expects a real field")
        return float(np.sum(f) * self.dq)

    def sample_at(self, f, q, method: str = "cubic"):
        """Interpolate a periodic field at off-grid position(s) ``q``.

        ``cubic`` is the 4-point Lagrange stencil (error O(dq^4) for smooth f);
        ``linear`` is exact for linear data between neighbouring nodes.
        """
        f = np.asarray(f)
        q_arr = np.asarray(q, dtype=float)
        if np.isnan(q_arr).any():
            raise ValueError("cannot sample at a NaN position")
        s = (self.wrap(q_arr) - self.q_min) / self.dq
        j = np.floor(s).astype(np.int64)
        t = s - j
        n = self.n_points
        j %= n
        if method == "linear":
            out = (1 - t) * f[j] + t * f[(j + 1) % n]
        elif method == "cubic":
            wm = -t * (t - 1) * (t - 2) / 6
            w0 = (t + 1) * (t - 1) * (t - 2) / 2
            w1 = -(t + 1) * t * (t - 2) / 2
            w2 = (t + 1) * t * (t - 1) / 6
            out = wm * f[(j - 1) % n] + w0 * f[j] + w1 * f[(j + 1) % n] + w2 * f[(j + 2) % n]
        else:
            raise ValueError(f"unknown interpolation {method!r}; expected one of {INTERPOLATIONS}")
        return out[()] if out.ndim == 0 else out
