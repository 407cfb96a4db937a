"""Inverted pendulum RL loop: mean up-time per policy update for CTGP and GPTD.

Usage: python3 scripts/run_pendulum.py [--seed N] [--updates K] [--out DIR]
"""

import argparse
from pathlib import Path

from ctvf.config import load_config, with_overrides
from ctvf.experiments import mean_duration, run_rl_loop

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--updates", type=int, default=5)
    ap.add_argument("--out", default="out/pendulum")
    args = ap.parse_args()
    for name in ("pendulum_ctgp", "pendulum_gptd"):
        cfg = with_overrides(load_config(CONFIGS / f"{name}.cfg"), seed=args.seed, policy_updates=args.updates)
        history = run_rl_loop(cfg, Path(args.out) / name)
        print(f"{name:<15}" + " ".join(f"{mean_duration(h):6.3f}" for h in history))


if __name__ == "__main__":
    main()
