"""Transport-noise ingredients: divergence-free fields, the Q matrix field, B.

The fields follow the stream-function construction ``mu_k = (d2 e_k, -d1 e_k)``
and ``sigma_k = mu_k e_k``, which in closed form is

    sigma_k = ( b pi (1 - cos 2a pi x) sin 2b pi y,
               -a pi sin 2a pi x (1 - cos 2b pi y) )

for the mode ``k = (a, b)``.  Everything here is evaluated from closed forms
on whatever collocation grid is asked for; nothing is differentiated
numerically.
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .basis import SpectralBasis
from .enthalpy import EnthalpyModel


class NoiseUnavailable(ValueError):
    """Transport noise cannot be built for this basis (1D)."""


class AssumptionRejected(ValueError):
    def __init__(self, assumption: str, detail: str = ""):
        self.assumption = assumption
        super().__init__(f"noise assumption {assumption} rejected" + (f": {detail}" if detail else ""))


@dataclass(frozen=True)
class NoiseSpec:
    K: int = 32
    alpha0: float = 0.5
    decay: float = 2.0

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be >= 0")
        if self.alpha0 < 0:
            raise ValueError("alpha0 must be >= 0")
        if self.decay <= 0:
            raise ValueError("decay exponent p must be > 0")

    def alpha(self, lam):
        return self.alpha0 * (1.0 + np.asarray(lam, dtype=float)) ** (-self.decay)


def global_modes(count: int) -> np.ndarray:
    """First ``count`` 2D multi-indices of the infinite eigen-ordering."""
    r = int(math.isqrt(4 * count)) + 4
    while True:
        k = np.arange(1, r + 1)
        a, b = np.meshgrid(k, k, indexing="ij")
        a, b = a.ravel(), b.ravel()
        lam = a * a + b * b
        order = np.lexsort((b, a, lam))
        a, b, lam = a[order], b[order], lam[order]
        # every mode with |k|^2 <= r^2 is present, so the prefix below that is exact
        if np.count_nonzero(lam <= r * r) >= count:
            return np.stack([a[:count], b[:count]], axis=1)
        r *= 2


def mu_sup(modes: np.ndarray) -> np.ndarray:
    """|mu_k|_inf = 2 pi max(a, b): the bilinear form in (sin^2 x, sin^2 y) peaks at a corner."""
    return 2.0 * math.pi * np.max(modes, axis=1).astype(float)


def _trig(k, x):
    return np.sin(k * math.pi * x), np.cos(k * math.pi * x)


def sigma_fields(modes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """sigma_k on the tensor grid ``x`` x ``x``; shape (K, 2, Mx, Mx)."""
    out = np.empty((len(modes), 2, len(x), len(x)))
    for i, (a, b) in enumerate(modes):
        s2a, c2a = np.sin(2 * a * math.pi * x), np.cos(2 * a * math.pi * x)
        s2b, c2b = np.sin(2 * b * math.pi * x), np.cos(2 * b * math.pi * x)
        out[i, 0] = b * math.pi * np.outer(1.0 - c2a, s2b)
        out[i, 1] = -a * math.pi * np.outer(s2a, 1.0 - c2b)
    return out


def sigma_jacobian(modes: np.ndarray, x: np.ndarray) -> np.ndarray:
    """d sigma_k,c / d xi_i as array (K, c, i, Mx, Mx)."""
    out = np.empty((len(modes), 2, 2, len(x), len(x)))
    p2 = 2.0 * math.pi ** 2
    for n, (a, b) in enumerate(modes):
        s2a, c2a = np.sin(2 * a * math.pi * x), np.cos(2 * a * math.pi * x)
        s2b, c2b = np.sin(2 * b * math.pi * x), np.cos(2 * b * math.pi * x)
        out[n, 0, 0] = p2 * a * b * np.outer(s2a, s2b)
        out[n, 0, 1] = p2 * b * b * np.outer(1.0 - c2a, c2b)
        out[n, 1, 0] = -p2 * a * a * np.outer(c2a, 1.0 - c2b)
        out[n, 1, 1] = -p2 * a * b * np.outer(s2a, s2b)
    return out


def psd_min_eigenvalue(q11, q12, q22):
    half_tr = 0.5 * (q11 + q22)
    rad = np.sqrt((0.5 * (q11 - q22)) ** 2 + q12 ** 2)
    return half_tr - rad


@dataclass
class NoiseReport:
    assumption: str
    passed: bool
    values: dict = field(default_factory=dict)

    def to_dict(self):
        return dataclasses.asdict(self)


class NoiseModel:
    """Assembled noise on the collocation grid of ``basis``.

    Attributes: ``alpha`` (K,), ``sigma`` (K, 2, M, M), ``Q`` (2, 2, M, M),
    ``dQ`` with ``dQ[i, c] = d q_ic / d xi_i``, ``gamma_const``, ``ip1_sum``.
    """

    def __init__(self, spec: NoiseSpec, basis: SpectralBasis):
        if basis.dim != 2:
            if spec.alpha0 != 0 and spec.K > 0:
                raise NoiseUnavailable(
                    "transport noise needs d = 2: divergence-free fields vanishing on the "
                    "boundary are identically zero in 1D; set alpha0 = 0")
        self.spec = spec
        self.basis = basis
        self.K = spec.K if (basis.dim == 2 and spec.alpha0 > 0) else 0
        if self.K > basis.n:
            raise ValueError(f"K = {spec.K} exceeds the {basis.n} retained modes")
        self.modes = basis.modes[: self.K]
        self.lam = basis.lam[: self.K]
        self.alpha = spec.alpha(self.lam)
        if self.K == 0:
            self.sigma = np.zeros((0, basis.dim) + basis.grid_shape)
            self.Q = np.zeros((basis.dim, basis.dim) + basis.grid_shape)
            self.dQ = np.zeros_like(self.Q)
        else:
            self.sigma = sigma_fields(self.modes, basis.x)
            jac = sigma_jacobian(self.modes, basis.x)
            w = self.alpha ** 2
            self.Q = np.einsum("k,kimn,kjmn->ijmn", w, self.sigma, self.sigma)
            self.Q[1, 0] = self.Q[0, 1]  # exact symmetry regardless of summation order
            # d_i (sigma_i sigma_c) summed with weights; dQ[i, c] = d q_ic / d xi_i
            self.dQ = (np.einsum("k,kiimn,kcmn->icmn", w, jac, self.sigma)
                       + np.einsum("k,kimn,kcimn->icmn", w, self.sigma, jac))
        self.gamma_const = self._gamma()
        self.ip1_sum = float(np.sum(self.alpha ** 2 * self.lam ** 2 * mu_sup(self.modes) ** 2)) if self.K else 0.0

    @property
    def div_Q(self):
        """Row divergence r_c = sum_i d q_ic / d xi_i, shape (2, M, M)."""
        return self.dQ.sum(axis=0)

    def _gamma(self) -> float:
        if self.K == 0:
            return 0.0
        d = self.basis.dim
        best = 0.0
        for i in range(d):
            for j in range(d):
                best = max(best, float(np.max(np.abs(self.Q[i, j])) + np.max(np.abs(self.dQ[i, j]))))
        return best

    def tail_ratio(self) -> float:
        """Share of the integrated trace of Q carried by the last decile of modes.

        ``int |sigma_k|^2 = 3 lambda_k / 4`` in closed form.
        """
        if self.K == 0:
            return 0.0
        contrib = self.alpha ** 2 * 0.75 * self.lam
        tail = contrib[int(math.floor(0.9 * self.K)):]
        return float(tail.sum() / contrib.sum())

    def min_eigenvalue(self):
        if self.K == 0:
            return np.zeros(self.basis.grid_shape)
        return psd_min_eigenvalue(self.Q[0, 0], self.Q[0, 1], self.Q[1, 1])

    # -- operators ------------------------------------------------------------
    def apply_B(self, theta_coeffs, enthalpy: EnthalpyModel):
        """alpha_k sigma_k . grad eta(theta) on the grid, shape (K, M, M).

        ``eta(theta)`` is formed pointwise and differentiated through its
        full-resolution sine interpolant.
        """
        b = self.basis
        th = b.synthesize(theta_coeffs)
        grad = grid_gradient(b, enthalpy.eta(th))
        return self.alpha[:, None, None] * np.einsum("kcmn,cmn->kmn", self.sigma, grad)


def grid_gradient(basis: SpectralBasis, f):
    """Spectral gradient of a grid field through its full M-mode sine interpolant."""
    return basis.interpolant_gradient(f)


def check_ip1(spec: NoiseSpec, K: int | None = None, threshold: float = 1e-3) -> NoiseReport:
    """Partial sums of sum_k alpha_k^2 lambda_k^2 |mu_k|_inf^2 over K and 2K modes."""
    K = spec.K if K is None else K
    if spec.alpha0 == 0 or K == 0:
        return NoiseReport("(Ip1)", True, {"sum_K": 0.0, "sum_2K": 0.0, "increment_ratio": 0.0})
    modes = global_modes(2 * K)
    lam = math.pi ** 2 * np.sum(modes.astype(float) ** 2, axis=1)
    terms = spec.alpha(lam) ** 2 * lam ** 2 * mu_sup(modes) ** 2
    s1, s2 = float(terms[:K].sum()), float(terms.sum())
    ratio = (s2 - s1) / s2
    return NoiseReport("(Ip1)", ratio < threshold,
                       {"sum_K": s1, "sum_2K": s2, "increment_ratio": ratio, "threshold": threshold})


def check_ip2_ip3(model: NoiseModel, tail_threshold: float = 0.01, psd_tol: float = 1e-12) -> NoiseReport:
    lmin = float(np.min(model.min_eigenvalue()))
    tail = model.tail_ratio()
    gamma = model.gamma_const
    sym = bool(model.K == 0 or np.array_equal(model.Q[0, 1], model.Q[1, 0]))
    ok = lmin >= -psd_tol and math.isfinite(gamma) and tail < tail_threshold and sym
    return NoiseReport("(Ip2)/(Ip3)", ok, {"min_eigenvalue": lmin, "gamma": gamma,
                                           "tail_ratio": tail, "tail_threshold": tail_threshold,
                                           "symmetric": sym, "psd_tol": psd_tol})
