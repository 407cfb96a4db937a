"""Mountain Car policy evaluation for all four learners, with and without the barrier.

Usage: python3 scripts/run_mountain_car.py [--seed N] [--out DIR]
"""

import argparse
from pathlib import Path

import numpy as np

from ctvf.config import load_config, with_overrides
from ctvf.experiments import run_policy_evaluation

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
NAMES = (
    "mountain_car_ctgp",
    "mountain_car_ctkf",
    "mountain_car_gptd_dt1",
    "mountain_car_gptd_dt20",
    "mountain_car_dtkf_dt1",
    "mountain_car_dtkf_dt20",
)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="out/mountain_car")
    args = ap.parse_args()
    print(f"{'config':<26}{'barrier':>8}{'dict':>6}{'cum. cost':>11}{'violations':>12}")
    for name in NAMES:
        for barrier in (True, False):
            cfg = with_overrides(load_config(CONFIGS / f"{name}.cfg"), seed=args.seed, barrier=barrier)
            res = run_policy_evaluation(cfg, Path(args.out) / f"{name}_{'b' if barrier else 'nb'}")
            upd = [r for r in res.records if r.phase == "updated"]
            cost = np.mean([r.cumulative_cost for r in upd])
            viol = sum(r.violations for r in upd)
            print(f"{name:<26}{str(barrier):>8}{res.model.size:>6}{cost:>11.2f}{viol:>12}")


if __name__ == "__main__":
    main()
