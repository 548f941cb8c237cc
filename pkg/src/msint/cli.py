"""``msint`` command line: run, sweep-alpha, order-study, validate-kernel, list-problems."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .kernel_schedule import KERNELS, get_kernel, validate_kernel
from .multiscale import ConfigError
from .steppers import NumericFailure
from .systems import BENCHMARKS

EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _overrides(args) -> dict:
    return {
        "epsilon": getattr(args, "epsilon", None),
        "reference": getattr(args, "reference", None),
        "t_final": getattr(args, "t_final", None),
        "macro_dt": getattr(args, "macro_dt", None),
        "delta_t": getattr(args, "delta_t", None),
    }


def _load(args) -> harness.ExperimentConfig:
    cfg = harness.parse_config(args.config, _overrides(args), out_dir=args.out)
    if args.cache_dir:
        cfg.cache_dir = Path(args.cache_dir)
    return cfg


def _base_method(cfg: harness.ExperimentConfig):
    for m in cfg.methods:
        if m.method == "vshmm":
            return m
    for m in cfg.methods:
        if m.alpha is not None:
            return m
    raise ConfigError("config needs a vshmm (or alpha-carrying) method entry to take step sizes from")


def cmd_run(args) -> int:
    cfg = _load(args)
    result = harness.run_experiment(cfg, args.out)
    print(f"reference: {result.reference.provenance}")
    for label in result.labels:
        rep, cost = result.reports[label], result.costs[label]
        ratio = cost.measured_ratio
        extra = f"  measured ratio {ratio:.3f}" if ratio is not None else ""
        print(f"{label:12s} sup error {rep.sup_norm:.3e}  evals {sum(rep.counters.values())}"
              f"  predicted efficiency {cost.predicted_efficiency:g}{extra}")
    print(f"wrote {args.out}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    try:
        alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    except ValueError:
        raise ConfigError(f"--alphas: expected comma-separated numbers, got {args.alphas!r}") from None
    if not alphas:
        raise ConfigError("--alphas: empty list")
    base = _base_method(cfg)
    rows = harness.alpha_sweep(cfg.system, cfg.epsilon, alphas, base, cfg.reference, cfg.cache_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_sweep_csv(rows, out / "alpha_sweep.csv")
    for r in rows:
        print(f"alpha {r.alpha:8g}  {r.method:8s} sup error {r.sup_error:.3e}")
    return 0


def cmd_order(args) -> int:
    cfg = _load(args)
    base = _base_method(cfg)
    if args.halvings < 0:
        raise ConfigError("--halvings must be nonnegative")
    dts = [base.delta_t / 2 ** j for j in range(args.halvings + 1)]
    result = harness.order_study(cfg.system, cfg.epsilon, base.alpha, dts, base.macro_dt, base.t_final,
                                 cfg.kernel, base.micro_scheme, cfg.reference, cfg.cache_dir)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    harness.write_order_csv(result, out / "order_study.csv")
    print(f"floor {result.floor:.3e}")
    for order in (1, 2):
        s = result.slopes[order]
        if s is None:
            print(f"order {order}: no slope ({result.notes[order]})")
        else:
            print(f"order {order}: slope {s:.3f} from {result.used[order]} rows")
    return 0


def cmd_kernel(args) -> int:
    report = validate_kernel(get_kernel(args.kernel), args.tol_moment, args.tol_reg)
    print("\n".join(report.lines()))
    return 0 if report.passed else 1


def cmd_list(args) -> int:
    for name, b in BENCHMARKS.items():
        print(f"{name:18s} dT={b.macro_dt:<5g} T={b.t_final:<4g} reference={b.reference_kind:12s} {b.description}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="msint", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def experiment(name, help_, func):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="JSON experiment config")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--epsilon", type=float)
        sp.add_argument("--t-final", type=float)
        sp.add_argument("--macro-dt", type=float)
        sp.add_argument("--delta-t", type=float)
        sp.add_argument("--reference", choices=harness.REFERENCE_KINDS)
        sp.add_argument("--cache-dir", help="directory for cached DNS reference tables")
        sp.set_defaults(func=func)
        return sp

    experiment("run", "integrate the configured methods and write trajectories, errors and costs", cmd_run)
    sw = experiment("sweep-alpha", "VSHMM vs FLAVORS sup error over a list of alpha values", cmd_sweep)
    sw.add_argument("--alphas", default="10,25,50,100", help="comma-separated alpha values")
    od = experiment("order-study", "VSHMM error vs mean meso step for meso orders 1 and 2", cmd_order)
    od.add_argument("--halvings", type=int, default=6, help="number of times delta_t is halved")

    vk = sub.add_parser("validate-kernel", help="check kernel moment and endpoint regularity")
    vk.add_argument("--kernel", default="cosine", choices=sorted(KERNELS))
    vk.add_argument("--tol-moment", type=float, default=1e-8)
    vk.add_argument("--tol-reg", type=float, default=1e-6)
    vk.set_defaults(func=cmd_kernel)

    ls = sub.add_parser("list-problems", help="list the registered benchmark systems")
    ls.set_defaults(func=cmd_list)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
