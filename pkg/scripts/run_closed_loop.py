"""Train both stages, then compare control-on and control-off loops on paired seeds."""

import numpy as np

from _common import parse_config
from padloop.pipeline import closed_loop_comparison, train_full


def main():
    cfg, args = parse_config(__doc__, lambda p: p.add_argument("--pairs", type=int, default=20))
    pad, perf = train_full(cfg)
    runs = closed_loop_comparison(cfg, pad.model, perf.model, n_pairs=args.pairs)
    print("seed,mean_q_on,mean_q_off,hit_rate_on,hit_rate_off,stimuli_on")
    for r in runs:
        print(f"{r.seed},{r.mean_q_on:.4f},{r.mean_q_off:.4f},{r.hit_rate_on:.3f},{r.hit_rate_off:.3f},{r.stimuli_on}")
    print(f"q_wins={sum(r.mean_q_on > r.mean_q_off for r in runs)}/{len(runs)}")
    print(f"hit_wins={sum(r.hit_rate_on > r.hit_rate_off for r in runs)}/{len(runs)}")
    print(f"mean_gain={np.mean([r.mean_q_on - r.mean_q_off for r in runs]):.4f}")


if __name__ == "__main__":
    main()
