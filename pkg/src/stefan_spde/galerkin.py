"""Finite-dimensional Galerkin SDE in H_n and its Euler-Maruyama integration.

The spatial operators are assembled by grid quadrature against closed-form
basis quantities (a collocation Galerkin scheme): the coefficient of e_j in
the drift is

    (Psi(X), Lap e_j)_M + (g(gamma~^-1 X), div[Q grad e_j])_M + (F, e_j)_M

and in the k-th diffusion column

    alpha_k (eta(gamma~^-1 X), sigma_k . grad e_j)_M,

which is ``-P_n(alpha_k sigma_k . grad eta(gamma~^-1 X))`` after integrating
by parts (div sigma_k = 0, sigma_k . N = 0).  In this form each Euler step
satisfies the weak-solution identity term by term.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .basis import SpectralBasis
from .enthalpy import EnthalpyModel
from .noise import NoiseModel


class BlowUp(FloatingPointError):
    """Non-finite state produced by the integrator."""

    def __init__(self, step: int, time: float, where: str = "state"):
        self.step = step
        self.time = time
        super().__init__(f"non-finite {where} at step {step} (t = {time:.6g})")


def _sine_cos_overlap(m: int) -> np.ndarray:
    """D[q, p] = int_0^1 sqrt2 sin(p pi x) * d/dx[sqrt2 sin(q pi x)] dx for p, q = 1..m."""
    p = np.arange(1, m + 1)[None, :]
    q = np.arange(1, m + 1)[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        d = 2.0 * p * q * (1.0 - (-1.0) ** (p + q)) / (p * p - q * q)
    d[p.repeat(m, 0) == q.repeat(m, 1)] = 0.0
    return d


@dataclass
class StepTerms:
    """Intermediate fields of one drift/diffusion evaluation (reused by the ledger)."""

    X: np.ndarray
    grid: np.ndarray
    theta: np.ndarray
    drift: np.ndarray
    diffusion: np.ndarray  # (K, n)
    extras: dict = field(default_factory=dict)


class GalerkinSystem:
    """Drift and diffusion of the projected equation for fixed basis/models/source."""

    def __init__(self, basis: SpectralBasis, enthalpy: EnthalpyModel, noise: NoiseModel,
                 source=None, inner_projection: bool = False):
        self.basis = basis
        self.enthalpy = enthalpy
        self.noise = noise
        self.inner_projection = inner_projection
        if source is None:
            self.source_coeffs = np.zeros(basis.n)
        else:
            source = np.asarray(source, dtype=float)
            self.source_coeffs = basis.project(source) if source.shape == basis.grid_shape else source
        self.K = noise.K
        self._pi2 = (math.pi * basis.modes.astype(float)) ** 2  # (n, d) squared wavenumbers
        if inner_projection:
            self._overlap = _sine_cos_overlap(basis.m)
        if self.K:
            self._build_separable()

    # -- pieces ---------------------------------------------------------------
    def psi_term(self, grid):
        b = self.basis
        return -b.lam * b.project(self.enthalpy.psi(grid))

    def correction_term(self, G, X=None):
        """Coefficients of P_n div[Q grad G] for the pointwise field G = g(gamma~^-1 X)."""
        b = self.basis
        if self.K == 0:
            return np.zeros(G.shape[:-2] + (b.n,))
        if self.inner_projection:
            return self._correction_literal(G)
        nm = self.noise
        Q, r = nm.Q, nm.div_Q
        out = b.test_against(G * r[0], (1, 0)) + b.test_against(G * r[1], (0, 1))
        out = out - self._pi2[:, 0] * b.test_against(G * Q[0, 0], (0, 0))
        out = out - self._pi2[:, 1] * b.test_against(G * Q[1, 1], (0, 0))
        out = out + 2.0 * b.test_against(G * Q[0, 1], (1, 1))
        return out

    def _correction_literal(self, G):
        """P_n div[P_n(Q grad G)] with the inner projection taken componentwise."""
        from .noise import grid_gradient

        b = self.basis
        Q = self.noise.Q
        gG = grid_gradient(b, G)
        V = np.einsum("icmn,...cmn->...imn", Q, gG)
        out = 0.0
        D = self._overlap
        for c in range(2):
            modal = b.to_modal(b.project(V[..., c, :, :]))
            # (P_n V_c, d_c e_j) with the closed-form sine/cosine overlap on axis c
            if c == 0:
                t = np.einsum("qp,...pb->...qb", D, modal)
            else:
                t = np.einsum("qp,...ap->...aq", D, modal)
            out = out - b.from_modal(t)
        return out

    def _build_separable(self):
        # sigma_k factorises per axis, so (Phi, sigma_k . grad e_j)_M = L Phi R with
        # small per-mode matrices; same quadrature as test_against, far fewer flops
        b = self.basis
        x = b.x
        p = np.arange(1, b.m + 1)
        cos_p = np.cos(np.pi * np.outer(p, x))  # (m, M)
        sin_p = np.sin(np.pi * np.outer(p, x))
        A, B = self.noise.modes[:, 0, None], self.noise.modes[:, 1, None]
        one_minus = lambda k: 1.0 - np.cos(2 * np.pi * k * x)  # noqa: E731
        s2 = lambda k: np.sin(2 * np.pi * k * x)  # noqa: E731
        scale = 2.0 * b.h ** 2 * math.pi ** 2 * self.noise.alpha
        self._L1 = (p[:, None] * cos_p)[None] * one_minus(A)[:, None, :]  # (K, m, M)
        self._R1 = np.swapaxes(sin_p[None] * s2(B)[:, None, :], 1, 2)  # (K, M, m)
        self._L2 = sin_p[None] * s2(A)[:, None, :]
        self._R2 = np.swapaxes((p[:, None] * cos_p)[None] * one_minus(B)[:, None, :], 1, 2)
        self._c1 = (scale * B[:, 0])[:, None, None]
        self._c2 = (-scale * A[:, 0])[:, None, None]

    def diffusion_columns(self, Phi):
        """alpha_k (Phi, sigma_k . grad e_j)_M for all k, j; shape (..., K, n)."""
        b = self.basis
        if self.K == 0:
            return np.zeros(Phi.shape[:-2] + (0, b.n))
        P = Phi[..., None, :, :]
        modal = self._c1 * ((self._L1 @ P) @ self._R1) + self._c2 * ((self._L2 @ P) @ self._R2)
        return b.from_modal(modal)

    def diffusion_columns_transform(self, Phi):
        """Same quantity through the sine/cosine transforms (kept as a cross-check)."""
        b = self.basis
        if self.K == 0:
            return np.zeros(Phi.shape[:-2] + (0, b.n))
        s = self.noise.sigma
        f = Phi[..., None, None, :, :] * s  # (..., K, 2, M, M)
        cols = b.test_against(f[..., 0, :, :], (1, 0)) + b.test_against(f[..., 1, :, :], (0, 1))
        return self.noise.alpha[:, None] * cols

    # -- public operators --------------------------------------------------------
    def evaluate(self, X) -> StepTerms:
        b, em = self.basis, self.enthalpy
        X = np.asarray(X, dtype=float)
        grid = b.synthesize(X)
        if not np.all(np.isfinite(grid)):
            raise BlowUp(-1, float("nan"))
        psi = self.psi_term(grid)
        drift = psi + self.source_coeffs
        extras = {"psi": psi}
        if self.K:
            theta = em.gamma_tilde_inv(grid)
            G = em.g_of(theta)
            Phi = em.eta(theta)
            corr = self.correction_term(G)
            drift = drift + corr
            extras["correction"] = corr
            diff = self.diffusion_columns(Phi)
        else:
            theta = None
            diff = np.zeros(X.shape[:-1] + (0, b.n))
        return StepTerms(X, grid, theta, drift, diff, extras)

    def drift(self, X):
        return self.evaluate(X).drift

    def diffusion(self, X):
        return self.evaluate(X).diffusion

    def step_em(self, X, dt: float, dW):
        """One Euler-Maruyama step in the Ito form; returns (X_next, terms at X)."""
        t = self.evaluate(X)
        inc = t.drift * dt
        dW = np.asarray(dW, dtype=float)
        # fixed-order accumulation over modes keeps the result independent of batching
        for k in range(self.K):
            inc = inc + t.diffusion[..., k, :] * dW[..., k, None]
        return X + inc, t

    def stable_dt(self, safety: float = 0.5) -> float:
        gam = self.noise.gamma_const
        L = self.enthalpy.params.eta_lipschitz
        lam = self.basis.lam_max
        return safety / (self.enthalpy.psi_prime_max * lam + gam * L ** 2 * lam + 1.0)
