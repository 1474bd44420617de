"""Held-out PAD error of the deep kernel against a plain RBF on raw features."""

import time

from _common import parse_config
from padloop.pipeline import kernel_comparison


def main():
    cfg, _ = parse_config(__doc__)
    start = time.perf_counter()
    res = kernel_comparison(cfg)
    for key, value in res.items():
        print(f"{key}={value:.6f}")
    print(f"deep_kernel_wins={res['dbn_mse'] <= res['raw_mse']}")
    print(f"seconds={time.perf_counter() - start:.1f}")


if __name__ == "__main__":
    main()
