"""Flat ``key = value`` run files.

Lines are ``key = value``; ``#`` starts a comment.  A ``preset`` line
expands first and every other key overrides it, whatever the line order.
Unknown keys and malformed lines are rejected with their line number.

Keys and defaults (the ``default`` preset)::

    dim = 2                 modes_per_axis = 16      grid_points = auto (2 m)
    c1 = 1  c2 = 1  k1 = 1  k2 = 1  latent_heat = 1
    eta_cutoff = 0.05       eta_lipschitz = 1        mush_width = 0.05
    psi_floor = 0.05        blend_width = 0.1
    K = 32                  alpha0 = 0.5             decay = 2
    T = 0.05                dt = auto                save_every = 50
    initial = slab          source = zero
    seed = 0                paths = 1
    inner_projection = false                         strict_ip1 = false
    converge_modes = 8,16,32
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .basis import BasisSpec
from .enthalpy import ModelRejected, PhysicalParams, require_valid
from .noise import NoiseSpec
from .simulation import SimConfig


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt_float(v: str):
    return None if v.lower() == "auto" else float(v)


def _opt_int(v: str):
    return None if v.lower() == "auto" else int(v)


def _int_list(v: str):
    return tuple(int(p) for p in v.replace(" ", "").split(",") if p)


# key -> (section, field, parser)
KEYS = {
    "dim": ("basis", "dim", int),
    "modes_per_axis": ("basis", "modes_per_axis", int),
    "grid_points": ("basis", "grid_points_per_axis", _opt_int),
    **{k: ("enthalpy", k, float) for k in ("c1", "c2", "k1", "k2", "latent_heat", "eta_cutoff",
                                              "eta_lipschitz", "mush_width", "psi_floor", "blend_width")},
    "K": ("noise", "K", int),
    "alpha0": ("noise", "alpha0", float),
    "decay": ("noise", "decay", float),
    "T": ("run", "T", float),
    "dt": ("run", "dt", _opt_float),
    "initial": ("run", "initial", str),
    "source": ("run", "source", str),
    "seed": ("run", "seed", int),
    "paths": ("run", "paths", int),
    "save_every": ("run", "save_every", int),
    "inner_projection": ("run", "inner_projection", _bool),
    "strict_ip1": ("run", "strict_ip1", _bool),
    "converge_modes": ("extra", "converge_modes", _int_list),
}

_HEAT = {"c1": "1", "c2": "1", "k1": "1", "k2": "1", "latent_heat": "0", "psi_floor": "1", "alpha0": "0"}

PRESETS = {
    "default": {},
    "heat1d": {**_HEAT, "dim": "1", "initial": "mode(1)", "T": "0.01"},
    "heat2d-exact": {**_HEAT, "initial": "mode(1, 1)", "T": "0.01", "dt": "1e-5", "save_every": "100"},
}


@dataclass(frozen=True)
class RunFile:
    config: SimConfig
    converge_modes: tuple[int, ...] = (8, 16, 32)
    resolved: dict = dataclasses.field(default_factory=dict)


def parse_text(text: str, source: str = "<string>") -> RunFile:
    entries: dict[str, tuple[str, int]] = {}
    preset = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", no)
        key, value = (p.strip() for p in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"empty key or value in {raw.strip()!r}", no)
        if key == "preset":
            if value not in PRESETS:
                raise ConfigError(f"unknown preset {value!r} (known: {', '.join(PRESETS)})", no)
            preset = value
            continue
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", no)
        if key in entries:
            raise ConfigError(f"duplicate key {key!r} (first on line {entries[key][1]})", no)
        entries[key] = (value, no)
    merged = {k: (v, None) for k, v in PRESETS[preset or "default"].items()}
    merged.update(entries)
    return build(merged, preset)


def build(entries: dict, preset: str | None = None) -> RunFile:
    sections = {"basis": {}, "enthalpy": {}, "noise": {}, "run": {}, "extra": {}}
    for key, (value, no) in entries.items():
        section, name, parse = KEYS[key]
        try:
            sections[section][name] = parse(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", no) from None
    try:
        cfg = SimConfig(basis=BasisSpec(**sections["basis"]),
                        enthalpy=PhysicalParams(**sections["enthalpy"]),
                        noise=NoiseSpec(**sections["noise"]), **sections["run"])
    except ModelRejected:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    require_valid(cfg.enthalpy)
    extra = sections["extra"]
    resolved = {"preset": preset or "default", **resolved_keys(cfg),
                "converge_modes": list(extra.get("converge_modes", (8, 16, 32)))}
    return RunFile(cfg, tuple(extra.get("converge_modes", (8, 16, 32))), resolved)


def parse_config(path) -> RunFile:
    with open(path, encoding="utf-8") as fh:
        return parse_text(fh.read(), str(path))


def resolved_keys(cfg: SimConfig) -> dict:
    """Every key with its resolved value, in run-file vocabulary."""
    out = {}
    for key, (section, name, _) in KEYS.items():
        if section == "extra":
            continue
        obj = {"basis": cfg.basis, "enthalpy": cfg.enthalpy, "noise": cfg.noise, "run": cfg}[section]
        v = getattr(obj, name)
        out[key] = "auto" if v is None else v
    return out


def to_text(cfg: SimConfig, converge_modes=(8, 16, 32)) -> str:
    lines = []
    for key, value in resolved_keys(cfg).items():
        if isinstance(value, bool):
            value = str(value).lower()
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    lines.append("converge_modes = " + ",".join(map(str, converge_modes)))
    return "\n".join(lines) + "\n"
