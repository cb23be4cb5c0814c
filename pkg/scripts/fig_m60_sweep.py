"""BMI-vs-SNR sweep of bps/cpn/map_bp at M=60 test phases (N=32).

Paper-scale defaults: 2^15-symbol sequences, median over 100 realizations.
Use --desk for a reduced run that finishes in minutes on a laptop.
"""

import argparse

from wiener_cpe import ExperimentConfig, emit_plot_data, run_sweep


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="results/m60")
    parser.add_argument("--desk", action="store_true", help="reduced scale (2^13 symbols, 20 realizations)")
    parser.add_argument("--target-entropy", type=float, default=5.75)
    parser.add_argument("--snr-db", type=float, nargs="+", default=[16.0, 18.0, 20.0, 22.0, 24.0])
    parser.add_argument("--sigma-theta-sq", type=float, nargs="+", default=[1e-5, 1.18e-4, 1e-3])
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=None)
    args = parser.parse_args()

    config = ExperimentConfig(
        order=64,
        target_entropy=args.target_entropy,
        snr_db=tuple(args.snr_db),
        sigma_theta_sq=tuple(args.sigma_theta_sq),
        algorithms=("bps", "cpn", "map_bp"),
        half_window=32,
        num_test_phases=60,
        realizations=20 if args.desk else 100,
        num_symbols=2**13 if args.desk else 2**15,
        seed=args.seed,
    )
    results = run_sweep(config, args.out, workers=args.workers)
    emit_plot_data(results, config, f"{args.out}/plots")
    for cell in results:
        print(
            f"snr={cell.snr_db:5.1f} sigma={cell.sigma_theta_sq:.3e} "
            f"{cell.algorithm:7s} bmi_median={cell.bmi_median:.4f}"
        )


if __name__ == "__main__":
    main()
