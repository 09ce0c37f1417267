"""Distance between consecutive Galerkin truncations driven by shared increments."""
import argparse

from stefan_spde.noise import NoiseSpec
from stefan_spde.simulation import SimConfig
from stefan_spde.verification import galerkin_convergence


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--modes", default="8,16,32", help="modes per axis, comma separated")
    ap.add_argument("--T", type=float, default=0.05)
    args = ap.parse_args()
    ms = tuple(int(v) for v in args.modes.split(","))
    base = SimConfig(T=args.T)
    for label, cfg in (("deterministic", base.replace(noise=NoiseSpec(alpha0=0.0))), ("noisy", base)):
        e = galerkin_convergence(cfg, ms)
        print(f"{label:13s} n = {e.details.get('n')}  D = {e.details.get('D')}  "
              f"ratios = {e.details.get('ratios')}  -> {e.status}")


if __name__ == "__main__":
    main()
