"""Discrete torus (Z/LZ)^d with the periodic representative and distance
conventions used by every other module.

Coordinates are signed integers in the canonical box (-L/2, L/2]^d.  The
linear (site) index is row-major over shifted coordinates, i.e. axis value
``coord + (L-1)//2`` runs over ``0..L-1`` with the last axis fastest.  All
kernels indexed "by displacement" are stored in FFT layout, where axis
index ``i`` stands for the displacement ``i mod L``; :meth:`TorusLattice.
diff_flat` converts a pair of site indices to that layout.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import InvalidCoordinateError, ParameterError

__all__ = [
    "TorusLattice",
    "representative",
    "torus_distance",
    "bracket_distance",
]


@dataclass(frozen=True)
class TorusLattice:
    """The index set (Z/LZ)^d with N = L^d sites."""

    d: int
    L: int

    def __post_init__(self):
        if self.d < 1 or self.L < 1:
            raise ParameterError(f"need d >= 1 and L >= 1, got d={self.d}, L={self.L}")

    @property
    def N(self) -> int:
        return self.L**self.d

    @property
    def shift(self) -> int:
        # canonical coordinate c maps to axis index c + shift
        return (self.L - 1) // 2

    @cached_property
    def coords(self) -> np.ndarray:
        """(N, d) array: coordinates of every site in linear-index order."""
        axes = np.indices((self.L,) * self.d).reshape(self.d, -1).T
        return np.ascontiguousarray(axes - self.shift, dtype=np.int64)

    def check_coords(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        if x.shape[-1:] != (self.d,):
            x = np.atleast_1d(x)
            if x.shape[-1] != self.d:
                raise InvalidCoordinateError(
                    f"coordinate has {x.shape[-1]} components, lattice has d={self.d}"
                )
        lo, hi = -(self.L / 2), self.L / 2
        if np.any(x <= lo) or np.any(x > hi):
            raise InvalidCoordinateError(
                f"coordinates must lie in ({lo}, {hi}], got {x}"
            )
        return x

    def index_of(self, coord) -> np.ndarray:
        """Linear site index of canonical coordinate(s); inverse of coord_of."""
        c = self.check_coords(coord)
        return np.ravel_multi_index(tuple((c + self.shift).T), (self.L,) * self.d)

    def coord_of(self, index) -> np.ndarray:
        idx = np.asarray(index)
        if np.any(idx < 0) or np.any(idx >= self.N):
            raise InvalidCoordinateError(f"site index out of range [0, {self.N})")
        unr = np.stack(np.unravel_index(idx, (self.L,) * self.d), axis=-1)
        return unr - self.shift

    def diff_flat(self, i, j) -> np.ndarray:
        """FFT-layout flat index of the displacement between site indices.

        ``kernel_fft.ravel()[lat.diff_flat(i, j)]`` looks up a translation
        invariant kernel at x_i - x_j.  Vectorized over i, j.
        """
        ci = self.coords[np.asarray(i)]
        cj = self.coords[np.asarray(j)]
        delta = np.mod(ci - cj, self.L)
        return np.ravel_multi_index(tuple(np.moveaxis(delta, -1, 0)), (self.L,) * self.d)

    @cached_property
    def distance_fft(self) -> np.ndarray:
        """d-dim array, FFT layout: periodic l-infinity distance from 0."""
        ax = np.minimum(np.arange(self.L), self.L - np.arange(self.L))
        grids = np.meshgrid(*([ax] * self.d), indexing="ij")
        return np.maximum.reduce(grids)

    def distance_row(self, i) -> np.ndarray:
        """Periodic distances from site(s) i to every site, shape (..., N)."""
        all_idx = np.arange(self.N)
        flat = self.diff_flat(np.asarray(i)[..., None], all_idx)
        return self.distance_fft.ravel()[flat]


def representative(x, y, lat: TorusLattice) -> np.ndarray:
    """The unique element of (x - y) + L*Z^d lying in (-L/2, L/2]^d."""
    cx = lat.check_coords(x)
    cy = lat.check_coords(y)
    s = lat.shift
    return np.mod(cx - cy + s, lat.L) - s


def torus_distance(x, y, lat: TorusLattice) -> int:
    """Periodic l-infinity distance between coordinates x and y."""
    return int(np.max(np.abs(representative(x, y, lat))))


def bracket_distance(x, y, lat: TorusLattice, W) -> float:
    """Regularized distance: torus_distance(x, y) + W, for W >= 1."""
    if W < 1:
        raise ParameterError(f"band width W must be >= 1, got {W}")
    return torus_distance(x, y, lat) + W
