"""Median estimation errors of the FB solution along a grid of sample sizes.

    python3 scripts/consistency_sweep.py --p 20 --s 4 --noise 0.1 --replications 20
"""
import argparse

from stratatrack.harness import ExperimentConfig, run_consistency_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--p", type=int, default=20)
    ap.add_argument("--s", type=int, default=4)
    ap.add_argument("--noise", type=float, default=0.1)
    ap.add_argument("--lam0", type=float, default=1.0)
    ap.add_argument("--replications", type=int, default=20)
    ap.add_argument("--n-grid", type=int, nargs="+", default=[50, 100, 200, 400, 800])
    ap.add_argument("--covariance", choices=["identity", "empirical"], default="identity")
    ap.add_argument("--out")
    args = ap.parse_args()

    cfg = ExperimentConfig(p=args.p, s=args.s, lam=None, lam0=args.lam0, noise_std=args.noise,
                           replications=args.replications, certificate_covariance=args.covariance)
    report = run_consistency_sweep(cfg, args.n_grid, args.out)
    print(f"{'n':>6} {'lambda':>8} {'|w-w0|':>9} {'|eta-eta0|':>11} {'exact':>6}")
    for c in report["columns"]:
        print(f"{c['n']:6d} {c['lambda']:8.4f} {c['median_w_error']:9.4f} "
              f"{c['median_eta_error']:11.4f} {c['exact_rate']:6.2f}")


if __name__ == "__main__":
    main()
