"""Partial sums of sum_k alpha_k^2 lambda_k^2 |mu_k|_inf^2 for growing K and several decay rates.

For modes (a, b) on the unit square lambda_k ~ |k|^2 and |mu_k|_inf ~ |k|,
so the terms behave like |k|^(6 - 4p) and the lattice sum converges only
for p > 2; at p = 2 the K-mode partial sums grow like log K.
"""
import argparse

from stefan_spde.noise import NoiseSpec, check_ip1


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--decays", default="2,2.5,3,4")
    args = ap.parse_args()
    Ks = (32, 64, 128, 256, 512, 1024)
    print("p      " + "".join(f"{'S(' + str(K) + ')':>12s}" for K in Ks) + "   ratio(32->64)")
    for p in (float(v) for v in args.decays.split(",")):
        sums = [check_ip1(NoiseSpec(K=K, decay=p)).values["sum_K"] for K in Ks]
        ratio = check_ip1(NoiseSpec(K=32, decay=p)).values["increment_ratio"]
        print(f"{p:<6g} " + "".join(f"{s:12.5g}" for s in sums) + f"   {ratio:.4f}")


if __name__ == "__main__":
    main()
