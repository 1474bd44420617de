"""Stage-two CV error of the whole pipeline with band features against whole-signal features."""

from _common import parse_config
from padloop.pipeline import BAND_BENCHMARK_TRIALS, band_comparison


def main():
    cfg, args = parse_config(__doc__, lambda p: p.add_argument("--trials", type=int, default=BAND_BENCHMARK_TRIALS))
    res = band_comparison(cfg, args.trials)
    for mode, values in res.items():
        print(f"{mode}: pad_mse={values['pad_mse']:.4f} cv_mse={values['cv_mse']:.6f}")
    print(f"bands_win={res['BANDS']['cv_mse'] <= res['EEG']['cv_mse']}")


if __name__ == "__main__":
    main()
