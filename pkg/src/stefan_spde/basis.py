"""Dirichlet-Laplacian eigenbasis on the unit box (d = 1 or 2).

Eigenfunctions are ``sqrt(2) sin(k pi x)`` per axis, tensorised in 2D, with
eigenvalues ``pi^2 |k|^2``.  Grid fields live on the interior collocation grid
``x_i = i / (M + 1)``, ``i = 1..M``, where the DST-I pair is an exact discrete
orthogonal transform; grid quadrature uses the weight ``h^d`` with
``h = 1 / (M + 1)``.

Coefficient vectors are indexed by the flat eigen-ordering (eigenvalue
ascending, ties broken lexicographically on the multi-index).  All transforms
act on the trailing ``d`` axes and broadcast over leading batch axes.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft


@dataclass(frozen=True)
class BasisSpec:
    dim: int = 2
    modes_per_axis: int = 16
    grid_points_per_axis: int | None = None  # default 2 * modes_per_axis

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.modes_per_axis < 1:
            raise ValueError("modes_per_axis must be >= 1")
        if self.grid_points_per_axis is None:
            object.__setattr__(self, "grid_points_per_axis", 2 * self.modes_per_axis)
        if self.grid_points_per_axis < 2 * self.modes_per_axis:
            raise ValueError("grid_points_per_axis must be >= 2 * modes_per_axis")

    @property
    def n(self) -> int:
        return self.modes_per_axis ** self.dim


def _sine_synth(c, M, axis):
    """Values of sum_k c_k sqrt2 sin(k pi x_i) on the interior grid (c has <= M modes)."""
    c = np.moveaxis(c, axis, -1)
    pad = np.zeros(c.shape[:-1] + (M,))
    pad[..., : c.shape[-1]] = c
    return np.moveaxis(sfft.dst(pad, type=1, axis=-1) * (math.sqrt(2) / 2), -1, axis)


def _sine_analyse(f, m, axis):
    """Grid quadrature h * sum_i f_i sqrt2 sin(k pi x_i) for k = 1..m."""
    M = f.shape[axis]
    out = sfft.dst(f, type=1, axis=axis) * (math.sqrt(2) / (2 * (M + 1)))
    return np.take(out, np.arange(m), axis=axis)


def _cos_synth(c, M, axis):
    """Values of sum_k c_k sqrt2 cos(k pi x_i) (k >= 1) on the interior grid."""
    c = np.moveaxis(c, axis, -1)
    pad = np.zeros(c.shape[:-1] + (M + 2,))
    pad[..., 1 : 1 + c.shape[-1]] = c
    y = sfft.dct(pad, type=1, axis=-1)[..., 1 : M + 1] * (math.sqrt(2) / 2)
    return np.moveaxis(y, -1, axis)


def _cos_analyse(f, m, axis):
    """Grid quadrature h * sum_i f_i sqrt2 cos(k pi x_i) for k = 1..m."""
    f = np.moveaxis(f, axis, -1)
    M = f.shape[-1]
    pad = np.zeros(f.shape[:-1] + (M + 2,))
    pad[..., 1 : M + 1] = f
    y = sfft.dct(pad, type=1, axis=-1)[..., 1 : m + 1] * (math.sqrt(2) / (2 * (M + 1)))
    return np.moveaxis(y, -1, axis)


class SpectralBasis:
    """Eigenbasis, collocation grid and transforms for one :class:`BasisSpec`."""

    def __init__(self, spec: BasisSpec):
        self.spec = spec
        self.dim = spec.dim
        self.m = spec.modes_per_axis
        self.M = spec.grid_points_per_axis
        self.n = spec.n
        self.h = 1.0 / (self.M + 1)
        self.x = np.arange(1, self.M + 1) * self.h
        k = np.arange(1, self.m + 1)
        if self.dim == 1:
            self.modes = k[:, None]
        else:
            a, b = np.meshgrid(k, k, indexing="ij")
            a, b = a.ravel(), b.ravel()
            lam = a * a + b * b
            order = np.lexsort((b, a, lam))
            self.modes = np.stack([a[order], b[order]], axis=1)
        self.lam = math.pi ** 2 * np.sum(self.modes.astype(float) ** 2, axis=1)
        # flat index -> position in the (m,)*d modal array
        self._idx = tuple(self.modes[:, i] - 1 for i in range(self.dim))
        self.grid_shape = (self.M,) * self.dim
        self.weight = self.h ** self.dim

    # -- indexing ---------------------------------------------------------
    @property
    def lam_max(self) -> float:
        return float(self.lam[-1])

    def index_of(self, multi: tuple[int, ...]) -> int:
        hits = np.nonzero(np.all(self.modes == np.asarray(multi), axis=1))[0]
        if hits.size == 0:
            raise IndexError(f"mode {multi} not retained")
        return int(hits[0])

    def to_modal(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[-1] != self.n:
            raise ValueError(f"expected {self.n} coefficients, got {coeffs.shape[-1]}")
        out = np.zeros(coeffs.shape[:-1] + (self.m,) * self.dim)
        out[(Ellipsis,) + self._idx] = coeffs
        return out

    def from_modal(self, modal):
        return modal[(Ellipsis,) + self._idx]

    def _check(self, j):
        if not 0 <= j < self.n:
            raise IndexError(f"mode index {j} out of range [0, {self.n})")

    # -- closed forms -------------------------------------------------------
    def eigenvalue(self, j: int) -> float:
        self._check(j)
        return float(self.lam[j])

    def _axis_funcs(self, k, x):
        s = math.sqrt(2) * np.sin(k * math.pi * x)
        c = math.sqrt(2) * k * math.pi * np.cos(k * math.pi * x)
        return s, c

    def eigenfunction(self, j: int, *pts):
        """Closed-form e_j evaluated at coordinate arrays ``pts`` (one per axis)."""
        self._check(j)
        val = 1.0
        for k, x in zip(self.modes[j], pts):
            val = val * math.sqrt(2) * np.sin(k * math.pi * np.asarray(x))
        return val

    def eigenfunction_on_grid(self, j: int):
        self._check(j)
        mesh = np.meshgrid(*([self.x] * self.dim), indexing="ij")
        return self.eigenfunction(j, *mesh)

    def eigenfunction_gradient(self, j: int, *pts):
        """Closed-form gradient of e_j at coordinate arrays ``pts``, shape ``(d,) + broadcast shape``."""
        self._check(j)
        pts = [np.asarray(x, dtype=float) for x in pts]
        s, c = zip(*(self._axis_funcs(k, x) for k, x in zip(self.modes[j], pts)))
        if self.dim == 1:
            return np.stack([c[0]])
        return np.stack(np.broadcast_arrays(c[0] * s[1], s[0] * c[1]))

    def basis_gradient_on_grid(self, j: int):
        """Closed-form gradient of e_j on the grid, shape ``(d,) + grid_shape``."""
        mesh = np.meshgrid(*([self.x] * self.dim), indexing="ij")
        return self.eigenfunction_gradient(j, *mesh)

    # -- transforms ---------------------------------------------------------
    def synthesize(self, coeffs):
        """Coefficients (..., n) -> grid values (..., M[, M])."""
        f = self.to_modal(coeffs)
        for ax in range(self.dim):
            f = _sine_synth(f, self.M, axis=f.ndim - self.dim + ax)
        return f

    def project(self, grid):
        """Grid values -> coefficients of the discrete orthogonal projection onto H_n."""
        grid = np.asarray(grid, dtype=float)
        if grid.shape[grid.ndim - self.dim :] != self.grid_shape:
            raise ValueError(f"grid shape {grid.shape} does not match {self.grid_shape}")
        f = grid
        for ax in range(self.dim):
            f = _sine_analyse(f, self.m, axis=f.ndim - self.dim + ax)
        return self.from_modal(f)

    def gradient(self, coeffs):
        """Exact gradient of the band-limited field on the grid, shape (..., d, M[, M])."""
        return self._modal_gradient(self.to_modal(coeffs))

    def interpolant_gradient(self, grid):
        """Gradient of the full M-mode sine interpolant of a grid field, shape (..., d, M[, M])."""
        f = np.asarray(grid, dtype=float)
        for ax in range(self.dim):
            f = _sine_analyse(f, self.M, axis=f.ndim - self.dim + ax)
        return self._modal_gradient(f)

    def _modal_gradient(self, f):
        nd = f.ndim
        m = f.shape[-1]
        k = np.arange(1, m + 1) * math.pi
        comps = []
        for c in range(self.dim):
            g = f
            for ax in range(self.dim):
                axis = nd - self.dim + ax
                if ax == c:
                    shape = [1] * nd
                    shape[axis] = m
                    g = _cos_synth(g * k.reshape(shape), self.M, axis)
                else:
                    g = _sine_synth(g, self.M, axis)
            comps.append(g)
        return np.stack(comps, axis=-self.dim - 1)

    def test_against(self, field, deriv: tuple[int, ...]):
        """Grid quadrature ``(field, D e_j)_M`` for all j, with D a mixed partial.

        ``deriv`` gives the derivative order (0 or 1) per axis, e.g. ``(1, 0)``
        tests against d e_j / d xi_1.
        """
        field = np.asarray(field, dtype=float)
        f = field
        nd = f.ndim
        k = np.arange(1, self.m + 1) * math.pi
        for ax, order in enumerate(deriv):
            axis = nd - self.dim + ax
            if order == 0:
                f = _sine_analyse(f, self.m, axis)
            else:
                shape = [1] * nd
                shape[axis] = self.m
                f = _cos_analyse(f, self.m, axis) * k.reshape(shape)
        return self.from_modal(f)

    def apply_laplacian(self, coeffs):
        return -self.lam * np.asarray(coeffs, dtype=float)

    # -- norms ------------------------------------------------------------------
    def norm_l2(self, coeffs):
        return np.sqrt(np.sum(np.asarray(coeffs) ** 2, axis=-1))

    def norm_h1(self, coeffs):
        return np.sqrt(np.sum(self.lam * np.asarray(coeffs) ** 2, axis=-1))

    def norm_h_minus(self, coeffs, beta: float = 1.0):
        if beta < 1:
            raise ValueError("beta must be >= 1")
        return np.sqrt(np.sum(np.asarray(coeffs) ** 2 / self.lam ** beta, axis=-1))

    def quad(self, grid):
        """Grid quadrature of a scalar field over the box (trailing d axes)."""
        axes = tuple(range(-self.dim, 0))
        return np.sum(grid, axis=axes) * self.weight

    def sup_norm_constant(self) -> float:
        """Smallest C with max_grid |e_j| <= C lambda_j over all retained j."""
        vals = np.abs(self.synthesize(np.eye(self.n)))
        sup = vals.reshape(self.n, -1).max(axis=1)
        return float(np.max(sup / self.lam))

    # -- refinement ---------------------------------------------------------------
    def refined(self, grid_points_per_axis: int) -> "SpectralBasis":
        """Same modes on a finer collocation grid."""
        return SpectralBasis(BasisSpec(self.dim, self.m, grid_points_per_axis))

    def embed(self, coeffs, other: "SpectralBasis"):
        """Zero-pad / truncate coefficients of this basis into ``other``'s ordering."""
        out = np.zeros(np.shape(coeffs)[:-1] + (other.n,))
        modal = self.to_modal(coeffs)
        mm = min(self.m, other.m)
        big = np.zeros(np.shape(coeffs)[:-1] + (other.m,) * self.dim)
        sl = (Ellipsis,) + (slice(0, mm),) * self.dim
        big[sl] = modal[sl]
        out[...] = other.from_modal(big)
        return out


def write_grid_csv(path, basis: SpectralBasis, grid) -> None:
    """Row-major grid field with a header recording M and d."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# M={basis.M} d={basis.dim}\n")
        w = csv.writer(fh)
        g = np.atleast_2d(np.asarray(grid))
        for row in g:
            w.writerow([repr(float(v)) for v in row])


def read_grid_csv(path) -> tuple[int, int, np.ndarray]:
    with open(path) as fh:
        head = fh.readline().strip("# \n").split()
        meta = dict(kv.split("=") for kv in head)
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    M, d = int(meta["M"]), int(meta["d"])
    return M, d, data.reshape((M,) * d)


def write_coeff_csv(path, basis: SpectralBasis, coeffs) -> None:
    cols = [f"mode_index_{i + 1}" for i in range(basis.dim)] + ["coefficient"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for mi, c in zip(basis.modes, np.asarray(coeffs)):
            w.writerow([*map(int, mi), repr(float(c))])


def read_coeff_csv(path, basis: SpectralBasis):
    out = np.zeros(basis.n)
    with open(path) as fh:
        r = csv.DictReader(fh)
        for row in r:
            multi = tuple(int(row[f"mode_index_{i + 1}"]) for i in range(basis.dim))
            out[basis.index_of(multi)] = float(row["coefficient"])
    return out
