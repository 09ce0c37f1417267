"""Command line: ``stefan-spde simulate|verify|converge|qreport``.

Exit codes: 0 success, 1 configuration rejected, 2 runtime failure (blow-up,
missing or tampered replay data), 3 a verification check failed.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .basis import SpectralBasis
from .config import ConfigError, parse_config, parse_text, to_text
from .enthalpy import ModelRejected
from .noise import AssumptionRejected, NoiseModel, NoiseUnavailable, check_ip1, check_ip2_ip3
from .simulation import Setup, Trajectory, prepare, simulate_ensemble
from .storage import (ReplayDataMissing, read_increments, read_snapshots, sha256_file, write_increments,
                      write_snapshots)
from .verification import (CheckEntry, VerificationReport, calibrate_energy_constant, galerkin_convergence,
                           heat_kernel_check, increment_moment_scaling, verify_ensemble)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3
MANIFEST = "manifest.json"


class RuntimeFailure(RuntimeError):
    pass


def resolve_threads(arg: int | None) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("STEFAN_SPDE_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"STEFAN_SPDE_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _load(args):
    rf = parse_config(args.config)
    cfg = rf.config if args.seed is None else rf.config.replace(seed=args.seed)
    return rf, cfg


def _validators(setup: Setup) -> dict:
    return {"enthalpy": setup.enthalpy_report.to_dict(), "ip1": setup.ip1.to_dict(), "ip2_ip3": setup.ip23.to_dict()}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_plain) + "\n")


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def snapshot_name(p: int) -> str:
    return f"snapshots_path{p:04d}.csv"


def increments_name(p: int) -> str:
    return f"dw_path{p:04d}.bin"


# -- simulate ------------------------------------------------------------------------------

def run_simulate(args) -> int:
    rf, cfg = _load(args)
    threads = resolve_threads(args.threads)
    setup = prepare(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    trajs = simulate_ensemble(setup, threads)
    wall = time.perf_counter() - t0
    files = {}
    config_text = to_text(cfg, rf.converge_modes)
    (out / "config.txt").write_text(config_text)
    files["config.txt"] = sha256_file(out / "config.txt")
    paths = []
    for t in trajs:
        sn, dn = snapshot_name(t.path), increments_name(t.path)
        write_snapshots(out / sn, setup.basis, t.times, t.states)
        write_increments(out / dn, t.dW)
        files[sn] = sha256_file(out / sn)
        files[dn] = sha256_file(out / dn)
        paths.append({"path": t.path, "blowup": t.blowup, "snapshots": sn, "increments": dn})
    manifest = {
        "artifact_version": __version__,
        "command": "simulate",
        "config": rf.resolved | {"seed": cfg.seed},
        "config_text": config_text,
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "dt": setup.dt,
        "dt_requested": "auto" if cfg.dt is None else cfg.dt,
        "stable_dt": setup.system.stable_dt(),
        "steps": setup.steps,
        "lambda_max": setup.basis.lam_max,
        "gamma": setup.noise.gamma_const,
        "noise_modes": int(setup.noise.K),
        "validators": _validators(setup),
        "warnings": setup.warnings,
        "wall_time_s": wall,
        "threads": threads,
        "paths": paths,
        "blowup_any": any(p["blowup"] for p in paths),
        "files": files,
    }
    _write_json(out / MANIFEST, manifest)
    for w in setup.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"simulated {len(trajs)} path(s), {setup.steps} steps of dt = {setup.dt:.6g} in {wall:.2f} s -> {out}")
    if manifest["blowup_any"]:
        bad = [p["path"] for p in paths if p["blowup"]]
        print(f"blow-up on paths {bad}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# -- verify ---------------------------------------------------------------------------------

def load_run(run_dir: Path):
    """Manifest, Setup and trajectories of a simulate output directory (hashes enforced)."""
    mpath = run_dir / MANIFEST
    if not mpath.exists():
        raise ReplayDataMissing(f"replay data absent: no {MANIFEST} in {run_dir}")
    manifest = json.loads(mpath.read_text())
    for name, digest in manifest["files"].items():
        f = run_dir / name
        if not f.exists():
            raise ReplayDataMissing(f"replay data absent: {name}")
        if sha256_file(f) != digest:
            raise RuntimeFailure(f"hash mismatch for {name}; refusing to verify")
    cfg = parse_text(manifest["config_text"]).config.replace(seed=manifest["seed"])
    setup = prepare(cfg)
    if setup.dt != manifest["dt"] or setup.steps != manifest["steps"]:
        raise RuntimeFailure("time grid of the manifest does not match the configuration")
    trajs = []
    snap_steps = setup.snapshot_steps
    for entry in manifest["paths"]:
        times, states = read_snapshots(run_dir / entry["snapshots"], setup.basis)
        dW = read_increments(run_dir / entry["increments"])
        steps = snap_steps[: len(times)]
        trajs.append(Trajectory(times, states, dW, setup.dt, cfg.seed, entry["path"], cfg.digest(), steps,
                                entry["blowup"], states[-1]))
    return manifest, setup, trajs


def run_verify(args) -> int:
    threads = resolve_threads(args.threads)
    run_dir = Path(args.run or args.out)
    manifest, setup, trajs = load_run(run_dir)
    if args.config:
        rf, cfg = _load(args)
        if cfg.replace(seed=setup.config.seed).digest() != setup.config.digest():
            raise ConfigError("--config does not match the configuration recorded in the run manifest")
    t0 = time.perf_counter()
    c_E = calibrate_energy_constant()
    rep = verify_ensemble(setup, trajs, c_E, threads=threads)
    rep.add(heat_kernel_check(setup, trajs))
    moments, per_mode = increment_moment_scaling(trajs, setup.basis, setup.dt, setup.config.T)
    rep.add(moments)
    rep.add(per_mode)
    rep.meta.update({"run": str(run_dir), "config_hash": manifest["config_hash"],
                     "wall_time_s": time.perf_counter() - t0})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(rep.to_json() + "\n")
    table = rep.table()
    (out / "report.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK if rep.passed else EXIT_CHECK


# -- converge -------------------------------------------------------------------------------

def run_converge(args) -> int:
    rf, cfg = _load(args)
    entry = galerkin_convergence(cfg, rf.converge_modes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "convergence.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "D"])
        for n, d in zip(entry.details.get("n", []), entry.details.get("D", [])):
            w.writerow([n, repr(d)])
    rep = VerificationReport([entry], {"config": rf.resolved, "modes_per_axis": list(rf.converge_modes)})
    (out / "convergence.json").write_text(rep.to_json() + "\n")
    print(rep.table())
    if entry.status == "inconclusive":
        return EXIT_RUNTIME
    return EXIT_OK if entry.passed else EXIT_CHECK


# -- qreport --------------------------------------------------------------------------------

def run_qreport(args) -> int:
    rf, cfg = _load(args)
    basis = SpectralBasis(cfg.basis)
    noise = NoiseModel(cfg.noise, basis)
    ip1 = check_ip1(cfg.noise)
    ip23 = check_ip2_ip3(noise)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lmin = noise.min_eigenvalue()
    with open(out / "q_report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "j", "x", "y", "q11", "q12", "q22", "min_eigenvalue"])
        for i, x in enumerate(basis.x):
            for j, y in enumerate(basis.x):
                w.writerow([i, j, repr(float(x)), repr(float(y)), repr(float(noise.Q[0, 0, i, j])),
                            repr(float(noise.Q[0, 1, i, j])), repr(float(noise.Q[1, 1, i, j])),
                            repr(float(lmin[i, j]))])
    summary = {"K": noise.K, "alpha0": cfg.noise.alpha0, "decay": cfg.noise.decay, "gamma": noise.gamma_const,
               "ip1": ip1.to_dict(), "ip2_ip3": ip23.to_dict(), "tail_ratio": noise.tail_ratio(),
               "min_eigenvalue": float(lmin.min()), "ip1_sum_retained": noise.ip1_sum}
    _write_json(out / "q_report.json", summary)
    for r in (ip1, ip23):
        print(f"{r.assumption}: {'pass' if r.passed else 'FAIL'}  {json.dumps(r.values, default=_plain)}")
    return EXIT_OK if ip1.passed and ip23.passed else EXIT_CHECK


# -- entry point ----------------------------------------------------------------------------

COMMANDS = {"simulate": run_simulate, "verify": run_verify, "converge": run_converge, "qreport": run_qreport}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stefan-spde", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "verify", help="key = value run file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (fallback: STEFAN_SPDE_THREADS, then CPU count)")
        if name == "verify":
            p.add_argument("--run", default=None, help="simulate output to verify (default: --out)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ModelRejected, AssumptionRejected, NoiseUnavailable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        if isinstance(exc, ReplayDataMissing):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if args.command != "verify" else EXIT_RUNTIME
    except (RuntimeFailure, FloatingPointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
