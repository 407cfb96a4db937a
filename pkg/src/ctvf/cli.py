"""Command line entry point: ``ctvf {eval,rl,check,grid}``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ParseError, ValidationError, load_config
from .kernels import DiffusionUnsupported
from .numeric import NotHurwitz, NotSpd

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _config(args):
    return load_config(args.config, seed=args.seed, output_dir=args.out)


def cmd_eval(args):
    from .experiments import run_policy_evaluation

    cfg = _config(args)
    res = run_policy_evaluation(cfg)
    upd = [r for r in res.records if r.phase == "updated"]
    print(f"learner={cfg.learner} dictionary_size={res.model.size} out={res.out_dir}")
    if upd:
        print(
            f"updated policy: mean cumulative cost {np.mean([r.cumulative_cost for r in upd]):.3f}, "
            f"violations {sum(r.violations for r in upd)}"
        )
    return EXIT_OK


def cmd_rl(args):
    from .experiments import mean_duration, run_rl_loop

    cfg = _config(args)
    history = run_rl_loop(cfg)
    for k, recs in enumerate(history):
        print(
            f"update {k}: mean duration {mean_duration(recs):.3f} s, "
            f"mean cumulative cost {np.mean([r.cumulative_cost for r in recs]):.3f}, "
            f"violations {sum(r.violations for r in recs)}"
        )
    return EXIT_OK


def cmd_check(args):
    from .checks import kernel_selfcheck

    seed = args.seed
    if args.config:
        seed = _config(args).seed if seed is None else seed
    report = kernel_selfcheck(seed=0 if seed is None else seed)
    for name, (ok, value, tol) in report.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}: {value:.3e} (tol {tol:.0e})")
    return EXIT_OK if all(ok for ok, _, _ in report.values()) else EXIT_NUMERIC


def cmd_grid(args):
    from .experiments import make_env, value_grid, write_grid

    cfg = _config(args)
    model = value_model_from_doc(json.loads(Path(args.dictionary).read_text()))
    X, mean, _ = value_grid(model, make_env(cfg), args.resolution or cfg.grid_resolution)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_grid(out / "value_grid_mean.csv", X, mean, np.full(len(mean), np.nan))
    print(f"wrote {out / 'value_grid_mean.csv'}")
    return EXIT_OK


def value_model_from_doc(doc):
    from .dt_learners import value_dictionary_from_doc
    from .experiments import Scaling, ValueModel
    from .kernels import dictionary_from_doc

    scaling = Scaling(np.asarray(doc["state_center"]), np.asarray(doc["state_scale"]))
    d = dictionary_from_doc(doc) if doc["space"] == "cost" else value_dictionary_from_doc(doc)
    return ValueModel(
        doc.get("learner", "?"), scaling, lambda Q: (d.value(Q), None), d.gradient, len(d), doc, False, doc.get("value_offset", 0.0)
    )


def build_parser():
    p = argparse.ArgumentParser(prog="ctvf", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn, need in (("eval", cmd_eval, True), ("rl", cmd_rl, True), ("check", cmd_check, False), ("grid", cmd_grid, True)):
        s = sub.add_parser(name)
        s.add_argument("--config", required=need)
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        if name == "grid":
            s.add_argument("--dictionary", required=True)
            s.add_argument("--resolution", type=int)
        s.set_defaults(func=fn)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ParseError, ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NotSpd, NotHurwitz, DiffusionUnsupported, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
