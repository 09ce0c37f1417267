"""Run configuration, initial data, Brownian increments and path integration."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSpec, SpectralBasis, read_coeff_csv
from .enthalpy import EnthalpyModel, PhysicalParams, ValidationReport, require_valid
from .galerkin import BlowUp, GalerkinSystem
from .noise import AssumptionRejected, NoiseModel, NoiseReport, NoiseSpec, check_ip1, check_ip2_ip3

# paths are integrated in fixed blocks so thread count never changes the arithmetic
PATH_BLOCK = 4


@dataclass(frozen=True)
class SimConfig:
    basis: BasisSpec = field(default_factory=BasisSpec)
    enthalpy: PhysicalParams = field(default_factory=PhysicalParams)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    T: float = 0.05
    dt: float | None = None  # None: stable_dt
    initial: str = "slab"
    source: str = "zero"
    seed: int = 0
    paths: int = 1
    save_every: int = 50
    inner_projection: bool = False
    strict_ip1: bool = False

    def __post_init__(self):
        if not (self.T > 0 and math.isfinite(self.T)):
            raise ValueError("T must be positive")
        if self.dt is not None and not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if self.save_every < 1:
            raise ValueError("save_every must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 bits")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def replace(self, **kw) -> "SimConfig":
        return dataclasses.replace(self, **kw)


# -- descriptors ------------------------------------------------------------------

_DESC = re.compile(r"^\s*([A-Za-z_][\w-]*)\s*(?:\((.*)\))?\s*$")


def parse_descriptor(text: str) -> tuple[str, list, dict]:
    """``name(a, b, key=value)`` -> (name, positional, keyword)."""
    m = _DESC.match(text)
    if not m:
        raise ValueError(f"malformed descriptor {text!r}")
    name, body = m.group(1), m.group(2)
    pos, kw = [], {}
    if body and body.strip():
        for part in body.split(","):
            part = part.strip()
            if "=" in part:
                k, v = part.split("=", 1)
                kw[k.strip()] = v.strip()
            else:
                if kw:
                    raise ValueError(f"positional argument after keyword in {text!r}")
                pos.append(part)
    return name, pos, kw


def _mode_coeffs(basis: SpectralBasis, pos, kw, what: str):
    if len(pos) < basis.dim:
        raise ValueError(f"{what}: mode needs {basis.dim} indices")
    idx = tuple(int(p) for p in pos[: basis.dim])
    rest = pos[basis.dim:]
    amp = float(kw.pop("amp", rest[0] if rest else 1.0))
    if kw or len(rest) > 1:
        raise ValueError(f"{what}: unexpected arguments to mode")
    out = np.zeros(basis.n)
    out[basis.index_of(idx)] = amp
    return out


def _gauss_panels(breaks, panels: int = 64, order: int = 16):
    """Composite Gauss-Legendre nodes/weights on the given breakpoints."""
    z, w = np.polynomial.legendre.leggauss(order)
    xs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        edges = np.linspace(a, b, panels + 1)
        mid, half = 0.5 * (edges[1:] + edges[:-1]), 0.5 * np.diff(edges)
        xs.append((mid[:, None] + half[:, None] * z).ravel())
        ws.append((half[:, None] * w).ravel())
    return np.concatenate(xs), np.concatenate(ws)


def slab_profile(enthalpy: EnthalpyModel, x, theta_a: float, theta_b: float):
    """Enthalpy of the smoothed two-phase slab as a function of the first coordinate."""
    from .enthalpy import smoothstep

    w = enthalpy.params.mush_width
    theta = -theta_a + (theta_a + theta_b) * smoothstep((np.asarray(x) - 0.5 + w) / (2 * w))
    return enthalpy.gamma_tilde(theta)


def slab_coeffs(basis: SpectralBasis, enthalpy: EnthalpyModel, theta_a=0.5, theta_b=0.5):
    """Exact-to-roundoff projection of the slab onto H_n.

    The profile only depends on xi_1, so in 2D the xi_2 factor integrates in
    closed form and the xi_1 factor by composite Gauss-Legendre with the
    smoothing interval as breakpoints (independent of the collocation grid).
    """
    w = enthalpy.params.mush_width
    xq, wq = _gauss_panels([0.0, 0.5 - w, 0.5 + w, 1.0])
    prof = slab_profile(enthalpy, xq, theta_a, theta_b)
    k = np.arange(1, basis.m + 1)
    c1 = (math.sqrt(2) * np.sin(np.pi * np.outer(k, xq))) @ (wq * prof)
    if basis.dim == 1:
        return basis.from_modal(c1)
    c2 = math.sqrt(2) * (1.0 - (-1.0) ** k) / (k * math.pi)
    return basis.from_modal(np.outer(c1, c2))


def field_from_descriptor(text: str, basis: SpectralBasis, enthalpy: EnthalpyModel, what="initial"):
    name, pos, kw = parse_descriptor(text)
    if name == "zero":
        return np.zeros(basis.n)
    if name == "mode":
        return _mode_coeffs(basis, pos, dict(kw), what)
    if name == "file":
        path = kw.pop("path", pos[0] if pos else None)
        if path is None:
            raise ValueError(f"{what}: file() needs a path")
        return read_coeff_csv(path, basis)
    if name == "slab" and what == "initial":
        ta = float(kw.pop("theta_a", 0.5))
        tb = float(kw.pop("theta_b", 0.5))
        if kw or pos:
            raise ValueError("slab takes only theta_a and theta_b")
        return slab_coeffs(basis, enthalpy, ta, tb)
    raise ValueError(f"unknown {what} preset {name!r}")


# -- assembly -------------------------------------------------------------------------

@dataclass
class Setup:
    config: SimConfig
    basis: SpectralBasis
    enthalpy: EnthalpyModel
    noise: NoiseModel
    system: GalerkinSystem
    x0: np.ndarray
    dt: float
    steps: int
    enthalpy_report: ValidationReport
    ip1: NoiseReport
    ip23: NoiseReport
    warnings: list = field(default_factory=list)

    @property
    def snapshot_steps(self) -> np.ndarray:
        s = list(range(0, self.steps + 1, self.config.save_every))
        if s[-1] != self.steps:
            s.append(self.steps)
        return np.array(s)


def prepare(config: SimConfig) -> Setup:
    """Build and validate every model for ``config``; raises on rejected hypotheses."""
    basis = SpectralBasis(config.basis)
    enthalpy = EnthalpyModel(config.enthalpy)
    rep = require_valid(config.enthalpy)
    noise = NoiseModel(config.noise, basis)
    ip1 = check_ip1(config.noise) if noise.K else check_ip1(dataclasses.replace(config.noise, alpha0=0.0))
    ip23 = check_ip2_ip3(noise)
    warnings = []
    if not ip23.passed:
        raise AssumptionRejected(ip23.assumption, json.dumps(ip23.values))
    if not ip1.passed:
        if config.strict_ip1:
            raise AssumptionRejected(ip1.assumption, json.dumps(ip1.values))
        warnings.append(f"{ip1.assumption} partial-sum increment ratio "
                        f"{ip1.values['increment_ratio']:.3g} above {ip1.values['threshold']:g}")
    source = field_from_descriptor(config.source, basis, enthalpy, "source")
    system = GalerkinSystem(basis, enthalpy, noise, source, config.inner_projection)
    dt_req = system.stable_dt() if config.dt is None else config.dt
    # ceil(T / dt) steps of exactly dt; the guard absorbs T / dt landing a hair above an integer
    dt = dt_req
    steps = max(1, math.ceil(config.T / dt - 1e-9))
    x0 = field_from_descriptor(config.initial, basis, enthalpy, "initial")
    return Setup(config, basis, enthalpy, noise, system, x0, dt, steps, rep, ip1, ip23, warnings)


# -- Brownian increments -----------------------------------------------------------------

def brownian_increments(seed: int, path: int, K: int, steps: int, dt: float) -> np.ndarray:
    """dW[step, k] = sqrt(dt) N(0,1) from a Philox stream keyed by (seed, path, k).

    Keying on the global mode index means runs with different truncations
    share the increments of their common noise modes.
    """
    out = np.empty((steps, K))
    sq = math.sqrt(dt)
    for k in range(K):
        key = (((path << 32) | k) << 64) | seed
        g = np.random.Generator(np.random.Philox(key=key))
        out[:, k] = g.standard_normal(steps) * sq
    return out


# -- trajectories -------------------------------------------------------------------------

@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (snapshots, n)
    dW: np.ndarray  # (steps, K)
    dt: float
    seed: int
    path: int
    config_hash: str
    snapshot_steps: np.ndarray
    blowup: dict | None = None
    final_state: np.ndarray | None = None
    ledger: dict | None = None

    @property
    def x0(self):
        return self.states[0]


def integrate(system: GalerkinSystem, x0, dt: float, dW, snapshot_steps, observer=None):
    """Euler-Maruyama over a batch of paths.

    ``x0`` has shape (B, n) and ``dW`` (B, steps, K).  Returns the snapshot
    array (B, S, n), the last finite state per path and per-path blow-up
    info.  ``observer(step, terms)`` sees the evaluated terms of each step.
    """
    X = np.array(x0, dtype=float)
    B = X.shape[0]
    steps = dW.shape[1]
    snaps = np.full((B, len(snapshot_steps), X.shape[-1]), np.nan)
    where = {int(s): i for i, s in enumerate(snapshot_steps)}
    snaps[:, where[0]] = X
    alive = np.ones(B, dtype=bool)
    blow = [None] * B
    last = X.copy()
    for s in range(steps):
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        with np.errstate(over="ignore", invalid="ignore"):
            try:
                Xn, terms = system.step_em(X[idx], dt, dW[idx, s])
            except BlowUp:
                Xn, terms = np.full_like(X[idx], np.nan), None
        if observer is not None and terms is not None:
            observer(s, idx, terms)
        ok = np.all(np.isfinite(Xn), axis=-1)
        for i, good in zip(idx, ok):
            if not good:
                alive[i] = False
                blow[i] = {"step": s + 1, "time": (s + 1) * dt}
        X[idx[ok]] = Xn[ok]
        last[idx[ok]] = Xn[ok]
        if s + 1 in where:
            snaps[idx[ok], where[s + 1]] = Xn[ok]
    return snaps, last, blow


def simulate_block(setup: Setup, paths, dW=None, observer=None) -> list[Trajectory]:
    cfg = setup.config
    K = setup.noise.K
    if dW is None:
        dW = np.stack([brownian_increments(cfg.seed, p, K, setup.steps, setup.dt) for p in paths])
    x0 = np.broadcast_to(setup.x0, (len(paths), setup.basis.n))
    snap_steps = setup.snapshot_steps
    snaps, last, blow = integrate(setup.system, x0, setup.dt, dW, snap_steps, observer)
    digest = cfg.digest()
    out = []
    for i, p in enumerate(paths):
        keep = np.all(np.isfinite(snaps[i]), axis=-1)
        out.append(Trajectory(snap_steps[keep] * setup.dt, snaps[i][keep], dW[i], setup.dt, cfg.seed, p,
                              digest, snap_steps[keep], blow[i], last[i]))
    return out


def simulate(config: SimConfig | Setup, path: int = 0, dW=None) -> Trajectory:
    setup = config if isinstance(config, Setup) else prepare(config)
    return simulate_block(setup, [path], None if dW is None else np.asarray(dW)[None])[0]


def path_blocks(paths: int, block: int = PATH_BLOCK) -> list[list[int]]:
    return [list(range(i, min(i + block, paths))) for i in range(0, paths, block)]


def simulate_ensemble(config: SimConfig | Setup, threads: int = 1) -> list[Trajectory]:
    """All ``config.paths`` paths; output identical for every thread count."""
    setup = config if isinstance(config, Setup) else prepare(config)
    blocks = path_blocks(setup.config.paths)
    if threads <= 1:
        results = [simulate_block(setup, b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda b: simulate_block(setup, b), blocks))
    return [t for r in results for t in r]
