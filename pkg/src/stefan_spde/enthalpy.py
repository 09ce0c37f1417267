"""Constitutive functions of the smoothed enthalpy formulation.

All functions act elementwise on numpy arrays (or floats).  The smoothing
profile throughout is the quintic smoothstep ``S(u) = 6u^5 - 15u^4 + 10u^3``
clamped to ``[0, 1]``; its antiderivatives are kept in closed polynomial form
so that ``gamma_tilde``, ``psi``, ``eta`` and ``g`` are exact integrals of
their derivatives.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial

# S(u) on [0, 1]
_S = Polynomial([0.0, 0.0, 0.0, 10.0, -15.0, 6.0])
_DS = _S.deriv()
_S_INT = _S.integ()
_S2_INT = (_S * _S).integ()
_S_INT_1 = float(_S_INT(1.0))  # = 1/2
_S2_INT_1 = float(_S2_INT(1.0))


def _horner(poly: Polynomial):
    coef = [float(c) for c in poly.coef[::-1]]

    def ev(u):
        r = coef[0] * u + coef[1]
        for c in coef[2:]:
            r = r * u + c
        return r
    return ev


_S_EV, _DS_EV, _S_INT_EV, _S2_INT_EV = map(_horner, (_S, _DS, _S_INT, _S2_INT))


def _piecewise(ev, u, right):
    """``ev`` on (0, 1), zero at or below 0, ``right(u)`` at or above 1.

    The polynomial is evaluated only on the ramp, which on large grids is
    usually a thin band around the interface.
    """
    u = np.asarray(u, dtype=float)
    out = np.where(u >= 1.0, right(u), 0.0)
    inside = (u > 0.0) & (u < 1.0)
    if out.ndim == 0:
        return ev(u) if inside else out
    if inside.any():
        out[inside] = ev(u[inside])
    return out


def smoothstep(u):
    return _piecewise(_S_EV, u, lambda v: 1.0)


def smoothstep_prime(u):
    return _piecewise(_DS_EV, u, lambda v: 0.0)


def smoothstep_integral(v):
    """``int_0^v S(u) du`` for the clamped smoothstep (zero for v <= 0)."""
    return _piecewise(_S_INT_EV, v, lambda w: _S_INT_1 + (w - 1.0))


def smoothstep_sq_integral(v):
    """``int_0^v S(u)^2 du`` for the clamped smoothstep."""
    return _piecewise(_S2_INT_EV, v, lambda w: _S2_INT_1 + (w - 1.0))


class ModelRejected(ValueError):
    """A configuration violates one of the structural hypotheses.

    ``hypothesis`` names the violated condition, e.g. ``"0 <= (gamma~^-1)' <= 1"``.
    """

    def __init__(self, hypothesis: str, detail: str = ""):
        self.hypothesis = hypothesis
        msg = f"configuration rejected: {hypothesis}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


HYP_GAMMA = "0 <= (gamma~^-1)' <= 1"
HYP_PSI = "Psi strictly monotone: Psi' >= psi0 > 0"
HYP_ETA = "|eta'| <= L"


@dataclass(frozen=True)
class PhysicalParams:
    c1: float = 1.0
    c2: float = 1.0
    k1: float = 1.0
    k2: float = 1.0
    latent_heat: float = 1.0
    eta_cutoff: float = 0.05
    eta_lipschitz: float = 1.0
    mush_width: float = 0.05
    psi_floor: float = 0.05
    blend_width: float = 0.1

    def __post_init__(self):
        for name in ("c1", "c2", "k1", "k2", "latent_heat", "eta_cutoff",
                     "eta_lipschitz", "mush_width", "psi_floor", "blend_width"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ModelRejected("finite parameters", f"{name}={v}")
        if min(self.k1, self.k2) <= 0:
            raise ModelRejected("k1, k2 > 0")
        if self.latent_heat < 0:
            raise ModelRejected("l >= 0")
        if self.eta_cutoff <= 0 or self.eta_lipschitz <= 0 or self.mush_width <= 0:
            raise ModelRejected("eps > 0, L > 0, eps_m > 0")
        if min(self.c1, self.c2) <= 0:
            raise ModelRejected("c1, c2 > 0")
        kmin = min(self.k1 / self.c1, self.k2 / self.c2)
        if not (0.0 < self.psi_floor <= kmin):
            raise ModelRejected(HYP_PSI, f"need 0 < psi0 <= {kmin}, got {self.psi_floor}")
        if self.blend_width <= 0 or (self.latent_heat > 0 and self.blend_width >= self.latent_heat / 2):
            raise ModelRejected("0 < delta < l/2", f"delta = {self.blend_width}")

    @classmethod
    def heat(cls) -> "PhysicalParams":
        """Parameters reducing the model to the linear heat equation (gamma~ = Psi = id)."""
        return cls(c1=1.0, c2=1.0, k1=1.0, k2=1.0, latent_heat=0.0, psi_floor=1.0)


@dataclass
class CheckResult:
    name: str
    hypothesis: str
    measured: float
    bound: float
    passed: bool


@dataclass
class ValidationReport:
    checks: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [dataclasses.asdict(c) for c in self.checks]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class EnthalpyModel:
    """Smoothed enthalpy gamma~, its inverse, the flux potential Psi, eta and g.

    Immutable after construction.
    """

    NEWTON_TOL = 1e-12
    NEWTON_MAXITER = 200

    def __init__(self, params: PhysicalParams | None = None):
        self.params = params if params is not None else PhysicalParams()
        p = self.params
        em = p.mush_width
        # gamma~ is affine outside [-em, em]
        self._x_lo = p.c1 * -em
        self._x_hi = p.c2 * em + p.latent_heat
        self._kc1 = p.k1 / p.c1
        self._kc2 = p.k2 / p.c2
        self._eta_threshold = float(self.gamma_tilde(p.eta_cutoff))

    # -- enthalpy ---------------------------------------------------------
    def _u(self, r):
        em = self.params.mush_width
        return (np.asarray(r, dtype=float) + em) / (2.0 * em)

    def gamma_tilde(self, r):
        r = np.asarray(r, dtype=float)
        if not np.all(np.isfinite(r)):
            raise ValueError("gamma_tilde: non-finite temperature")
        p = self.params
        u = self._u(r)
        blend = 2.0 * p.mush_width * smoothstep_integral(u)
        return p.c1 * r + (p.c2 - p.c1) * blend + p.latent_heat * smoothstep(u)

    def gamma_tilde_prime(self, r):
        p = self.params
        u = self._u(r)
        return (p.c1 + (p.c2 - p.c1) * smoothstep(u)
                + p.latent_heat * smoothstep_prime(u) / (2.0 * p.mush_width))

    def gamma_tilde_inv(self, x):
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            raise ValueError("gamma_tilde_inv: non-finite enthalpy")
        p = self.params
        out = np.where(x <= self._x_lo, x / p.c1, (x - p.latent_heat) / p.c2)
        ramp = (x > self._x_lo) & (x < self._x_hi)
        if np.any(ramp):
            out = np.array(out, dtype=float, copy=True)
            out[ramp] = self._newton(x[ramp])
        return out if out.ndim else float(out)

    def _newton(self, x: np.ndarray) -> np.ndarray:
        """Safeguarded Newton on the ramp; converged points leave the active set."""
        em = self.params.mush_width
        lo = np.full_like(x, -em)
        hi = np.full_like(x, em)
        # start from the chord of the ramp
        r = -em + 2.0 * em * (x - self._x_lo) / (self._x_hi - self._x_lo)
        tol = self.NEWTON_TOL * np.maximum(1.0, np.abs(x))
        act = np.arange(x.size)
        out = r.copy()
        for _ in range(self.NEWTON_MAXITER):
            f = self.gamma_tilde(r) - x
            done = np.abs(f) <= tol
            out[act[done]] = r[done]
            keep = ~done
            if not keep.any():
                return out
            act, x, r, f, lo, hi, tol = (a[keep] for a in (act, x, r, f, lo, hi, tol))
            lo = np.where(f < 0, r, lo)
            hi = np.where(f > 0, r, hi)
            step = r - f / self.gamma_tilde_prime(r)
            bad = (step <= lo) | (step >= hi) | ~np.isfinite(step)
            r = np.where(bad, 0.5 * (lo + hi), step)
        raise RuntimeError("gamma_tilde_inv did not converge; gamma~ is not monotone")

    def gamma_tilde_inv_prime(self, x):
        return 1.0 / self.gamma_tilde_prime(self.gamma_tilde_inv(x))

    # -- flux potential ---------------------------------------------------
    def psi(self, x):
        p = self.params
        x = np.asarray(x, dtype=float)
        d = p.blend_width
        solid = -d * smoothstep_integral(-x / d)
        liquid = d * smoothstep_integral((x - p.latent_heat) / d)
        return p.psi_floor * x + (self._kc1 - p.psi_floor) * solid + (self._kc2 - p.psi_floor) * liquid

    def psi_prime(self, x):
        p = self.params
        x = np.asarray(x, dtype=float)
        d = p.blend_width
        return (p.psi_floor + (self._kc1 - p.psi_floor) * smoothstep(-x / d)
                + (self._kc2 - p.psi_floor) * smoothstep((x - p.latent_heat) / d))

    @property
    def psi_prime_max(self) -> float:
        return max(self._kc1, self._kc2)

    # -- turbulence cutoff ------------------------------------------------
    def eta(self, theta):
        p = self.params
        e = p.eta_cutoff
        return p.eta_lipschitz * e * smoothstep_integral((np.asarray(theta, dtype=float) - e) / e)

    def eta_prime(self, theta):
        p = self.params
        e = p.eta_cutoff
        return p.eta_lipschitz * smoothstep((np.asarray(theta, dtype=float) - e) / e)

    def g_of(self, theta):
        p = self.params
        e = p.eta_cutoff
        return 0.5 * p.eta_lipschitz ** 2 * e * smoothstep_sq_integral((np.asarray(theta, dtype=float) - e) / e)

    def g_prime(self, theta):
        return 0.5 * self.eta_prime(theta) ** 2

    # -- composites used by the dynamics -----------------------------------
    def eta_of_enthalpy(self, x):
        """eta(gamma~^-1(x)), inverting only where the result can be nonzero.

        eta vanishes for theta <= eta_cutoff, i.e. for x <= gamma~(eta_cutoff).
        """
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        live = x > self._eta_threshold
        if np.any(live):
            out[live] = self.eta(self.gamma_tilde_inv(x[live]))
        return out

    def phi(self, x):
        """eta o gamma~^-1 and its derivative, evaluated together."""
        theta = self.gamma_tilde_inv(x)
        dinv = 1.0 / self.gamma_tilde_prime(theta)
        return self.eta(theta), self.eta_prime(theta) * dinv, theta, dinv

    # -- validation --------------------------------------------------------
    def default_range(self) -> tuple[float, float]:
        p = self.params
        pad = 4.0 * max(p.mush_width, p.blend_width, p.eta_cutoff) + 1.0
        return (self._x_lo - pad, self._x_hi + pad)

    def validate(self, x_range: tuple[float, float] | None = None, points: int = 10_000,
                 strict: bool = True) -> ValidationReport:
        """Certify the regularity hypotheses on a uniform grid of enthalpy values.

        With ``strict`` a failed check raises :class:`ModelRejected`.
        """
        p = self.params
        lo, hi = x_range if x_range is not None else self.default_range()
        x = np.linspace(lo, hi, points)
        r = np.linspace(self.gamma_tilde_inv(lo), self.gamma_tilde_inv(hi), points)
        rep = ValidationReport()
        gp = float(np.min(self.gamma_tilde_prime(r)))
        rep.checks.append(CheckResult("gamma_tilde_prime_min", HYP_GAMMA, gp, 1.0 - 1e-9, gp >= 1.0 - 1e-9))
        theta = self.gamma_tilde_inv(x)
        h = 1e-6
        fd = (self.gamma_tilde_inv(x + h) - self.gamma_tilde_inv(x - h)) / (2 * h)
        dmin, dmax = float(np.min(fd)), float(np.max(fd))
        ok = dmin >= 0.0 and dmax <= 1.0 + 1e-9 + 1e-6
        rep.checks.append(CheckResult("gamma_tilde_inv_prime_range", HYP_GAMMA, dmax, 1.0 + 1e-9, ok))
        rt = float(np.max(np.abs(self.gamma_tilde(theta) - x) / np.maximum(1.0, np.abs(x))))
        rep.checks.append(CheckResult("gamma_tilde_roundtrip", HYP_GAMMA, rt, 1e-12, rt <= 1e-12))
        pp = float(np.min(self.psi_prime(x)))
        rep.checks.append(CheckResult("psi_prime_min", HYP_PSI, pp, p.psi_floor - 1e-12, pp >= p.psi_floor - 1e-12))
        ep = float(np.max(np.abs(self.eta_prime(r))))
        rep.checks.append(CheckResult("eta_prime_max", HYP_ETA, ep, p.eta_lipschitz + 1e-12,
                                      ep <= p.eta_lipschitz + 1e-12))
        if strict and not rep.passed:
            bad = rep.failures()[0]
            raise ModelRejected(bad.hypothesis, f"{bad.name}: measured {bad.measured:.3g}")
        return rep


def validate_model(params: PhysicalParams, **kw) -> ValidationReport:
    return EnthalpyModel(params).validate(**kw)


def require_valid(params: PhysicalParams) -> ValidationReport:
    """The validation report, or ModelRejected naming the first failed hypothesis."""
    rep = EnthalpyModel(params).validate(strict=False)
    if not rep.passed:
        bad = rep.failures()[0]
        raise ModelRejected(bad.hypothesis, f"{bad.name}: measured {bad.measured:.6g}, bound {bad.bound:.6g}")
    return rep
