"""Command-line entry point: simulate, baseline, train and eval."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, SystemConfig, desk_config
from .experiments import ExperimentError
from .io import save_channels
from .sim import generate_channels


def _config(path) -> SystemConfig:
    return desk_config() if path is None else SystemConfig.load(path)


def cmd_simulate(args) -> int:
    cfg = _config(args.config)
    ch = generate_channels(cfg, args.seed)
    save_channels(args.out, ch)
    print(f"wrote M={ch.M} N={ch.N} K={ch.K} N_T={ch.N_T} channels to {args.out}")
    return 0


def cmd_baseline(args) -> int:
    from .solvers import dsatur_tabu_wmmse, oracle_baseline

    cfg = _config(args.config)
    ch = generate_channels(cfg, args.seed)
    if args.algo == "oracle":
        res = oracle_baseline(ch, cfg, args.oracle_power)
    else:
        res = dsatur_tabu_wmmse(ch, cfg)
    payload = {"algo": args.algo, "seed": args.seed, **res.to_json()}
    Path(args.out).write_text(json.dumps(payload, indent=1))
    print(f"{args.algo}: tau_p={payload['tau_p']} eta_bar={payload['eta_bar']:.4f}")
    return 0


def cmd_train(args) -> int:
    from .training import TrainConfig, save_policy, train

    cfg = _config(args.config)
    base = json.loads(Path(args.train_config).read_text()) if args.train_config else {}
    overrides = {"variant": args.variant, "seed": args.train_seed}
    for key in ("epochs", "n_train", "batch_size", "lr", "lr_decay", "w", "fixed_tau"):
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if args.no_attention:
        overrides["attention"] = False
    if args.no_fe:
        overrides["feature_enhancement"] = False
    tc = TrainConfig.from_dict({**base, **overrides})

    def progress(row):
        if args.verbose:
            print(f"epoch {row['epoch']} step {row['step']} loss {row['loss']:.4f} "
                  f"net-SE {row['net_se']:.4f} tau {row['tau']:.3f}")

    policy = train(cfg, tc, curve_path=args.curve, progress=progress)
    save_policy(args.out, policy, cfg)
    last = policy.curve[-1] if policy.curve else {}
    print(f"trained {args.variant} for {tc.epochs} epochs; final batch net-SE "
          f"{last.get('net_se', float('nan')):.4f}; checkpoint {args.out}")
    return 0


def cmd_eval(args) -> int:
    from .experiments import (ExperimentSpec, generalization_csv, rows_to_csv,
                              run_generalization, run_property_suite, run_sweep)

    if args.mode != "properties" and args.spec is None:
        raise ValueError("--spec is required for sweep and generalize")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.mode == "properties":
        report = run_property_suite(args.seed, quick=args.quick)
        lines = []
        for name, passed, detail in report:
            lines.append(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        print("\n".join(lines))
        (out / "properties.json").write_text(json.dumps(
            [{"name": n, "passed": p, "detail": d} for n, p, d in report], indent=1))
        return 0 if all(p for _, p, _ in report) else 1
    spec = ExperimentSpec.load(args.spec)
    if args.mode == "sweep":
        rows = run_sweep(spec, progress=lambda r: print(
            f"{r.method:>26s} {r.variable}={r.value}: eta {r.eta_mean:.4f} +- {r.eta_std:.4f}, "
            f"tau {r.tau_mean:.2f}"), workers=args.workers)
        (out / "sweep.csv").write_text(rows_to_csv(rows))
        (out / "timing.json").write_text(json.dumps(
            [{"method": r.method, "value": r.value, "seconds": r.seconds} for r in rows], indent=1))
    else:
        train_value = spec.values[0] if args.train_value is None else json.loads(args.train_value)
        rows = run_generalization(spec, train_value, args.method, progress=lambda r: print(
            f"{r.variable}={r.value}: transfer {r.eta_transfer:.4f} native {r.eta_native:.4f} "
            f"ratio {100 * r.ratio:.2f}%"))
        (out / "generalization.csv").write_text(generalization_csv(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cellfree", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw one frame of channels and dump it")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("baseline", help="run a classical baseline on one frame")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--algo", choices=["dsatur-tabu-wmmse", "oracle"], default="dsatur-tabu-wmmse")
    p.add_argument("--oracle-power", choices=["equal", "wmmse"], default="equal")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("train", help="train a DTS pair or an STS model")
    p.add_argument("--variant", choices=["dts", "sts"], required=True)
    p.add_argument("--config")
    p.add_argument("--train-config", help="JSON file with training options")
    p.add_argument("--train-seed", type=int, default=0)
    p.add_argument("--epochs", type=int)
    p.add_argument("--n-train", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lr-decay", type=float)
    p.add_argument("--w", type=float, help="binarization penalty weight")
    p.add_argument("--fixed-tau", type=int)
    p.add_argument("--no-attention", action="store_true")
    p.add_argument("--no-fe", action="store_true", help="disable feature enhancement")
    p.add_argument("--out", required=True)
    p.add_argument("--curve")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="sweeps, generalization and property checks")
    p.add_argument("mode", choices=["sweep", "generalize", "properties"])
    p.add_argument("--spec")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="smaller property checks")
    p.add_argument("--train-value", help="JSON value of the training point (generalize)")
    p.add_argument("--method", default="dts_agnn", help="learned method to transfer (generalize)")
    p.add_argument("--workers", type=int, default=1, help="processes for sweep points")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ExperimentError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
