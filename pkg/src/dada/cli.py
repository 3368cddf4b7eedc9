"""``dada`` command line: data generation, training, evaluation, ablation, gradient checks.

Exit codes: 0 success, 1 validation error (bad flags, config or input
files), 2 runtime error (including a failed gradient check).
"""

import argparse
import json
import os
import sys
from dataclasses import replace

from . import config as cfg
from . import data
from .errors import ConfigError, DadaError, DimensionError, ParseError
from .evaluation import VARIANTS, a_distance_proxy, ablate, accuracy, export_features, extract_features
from .gradcheck import format_report, run_registry
from .models import load_bundle, save_bundle
from .trainer import train

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
VALIDATION_ERRORS = (ConfigError, ParseError, DimensionError, FileNotFoundError, IsADirectoryError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; the contract here is 1
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _eq12(value):
    return {"paper": "paper_literal_K", "full": "full_2K"}[value]


def _load_config(args, **extra):
    values = cfg.read(args.config) if getattr(args, "config", None) else {}
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    if getattr(args, "eq12_range", None):
        values["eq12_range"] = _eq12(args.eq12_range)
    values.update({k: v for k, v in extra.items() if v is not None})
    return cfg.resolve(values)


def _write_echo(path, hp, spec):
    with open(path, "w") as fh:
        fh.write(cfg.dump(hp, spec))


def _load_pair(args, spec):
    if args.data:
        return data.load(args.data)
    return data.generate(spec)


def _check_pair(pair):
    if pair.source_x.shape[1] != 2:
        raise DimensionError("datasets must have 2 input features")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    overrides = {
        "generator": args.generator, "angle_deg": args.angle_deg,
        "mean_offset": tuple(args.mean_offset) if args.mean_offset else None,
        "noise_std": args.noise_std, "n_source": args.n_source, "n_target": args.n_target,
        "n_classes": args.n_classes, "data_seed": args.seed,
    }
    values = cfg.read(args.config) if args.config else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    hp, spec = cfg.resolve(values)
    pair = data.generate(spec)
    data.save(pair, args.out)
    _write_echo(os.path.splitext(args.out)[0] + ".config.txt", hp, spec)
    print(f"wrote {args.out}: {pair.n_source} source / {pair.n_target} target rows, K={pair.K}")


def cmd_train(args):
    hp, spec = _load_config(args)
    pair = _load_pair(args, spec)
    _check_pair(pair)
    os.makedirs(args.out_dir, exist_ok=True)
    _write_echo(os.path.join(args.out_dir, "config.txt"), hp, spec)
    bundle, log = train(pair, hp)
    save_bundle(bundle, os.path.join(args.out_dir, "model.bin"))
    log.write(os.path.join(args.out_dir, "metrics.ndjson"))
    if args.export_features:
        export_features(bundle, pair, os.path.join(args.out_dir, "features.csv"))
    last = log.records[-1]
    print(f"trained {len(log.records)} epochs: acc_source={last['acc_source']:.4f} "
          f"acc_target={last['acc_target']:.4f} -> {args.out_dir}")


def cmd_eval(args):
    bundle = load_bundle(args.model)
    pair = data.load(args.data, K=bundle.K)
    _check_pair(pair)
    if pair.K != bundle.K:
        raise ConfigError(f"model has K={bundle.K} but the data has labels up to {pair.K - 1}")
    result = {
        "acc_source": accuracy(bundle, pair.source_x, pair.source_y),
        "acc_target": accuracy(bundle, pair.target_x, pair.target_y_hidden),
        "a_distance": a_distance_proxy(extract_features(bundle, pair.source_x),
                                       extract_features(bundle, pair.target_x), seed=args.seed),
        "n_source": pair.n_source,
        "n_target": pair.n_target,
    }
    print(json.dumps(result))


def cmd_ablate(args):
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    if args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    hp, spec = _load_config(args)
    pair = _load_pair(args, spec)
    _check_pair(pair)
    os.makedirs(args.out_dir, exist_ok=True)
    _write_echo(os.path.join(args.out_dir, "config.txt"), hp, spec)
    seeds = tuple(range(hp.seed, hp.seed + args.seeds))
    table = ablate(pair, hp, seeds, VARIANTS, workers=args.workers)
    with open(os.path.join(args.out_dir, "ablation.csv"), "w", newline="") as fh:
        fh.write(table.to_csv())
    text = table.to_text()
    with open(os.path.join(args.out_dir, "ablation.txt"), "w") as fh:
        fh.write(text)
    print(text, end="")


def cmd_gradcheck(args):
    if args.configs < 1:
        raise ConfigError("--configs must be >= 1")
    report, ok = format_report(run_registry(seed=args.seed, configs=args.configs))
    print(report, end="")
    return EXIT_OK if ok else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = _Parser(prog="dada", description="Dual adversarial domain adaptation on 2-D toy shifts.",
                formatter_class=argparse.RawDescriptionHelpFormatter, epilog=cfg.defaults_help())
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a source/target dataset CSV")
    g.add_argument("--out", required=True, help="output CSV path")
    g.add_argument("--config", help="config file; its ShiftSpec keys are the defaults")
    g.add_argument("--generator", choices=data.GENERATORS)
    g.add_argument("--angle-deg", type=float)
    g.add_argument("--mean-offset", type=float, nargs=2, metavar=("DX", "DY"))
    g.add_argument("--noise-std", type=float)
    g.add_argument("--n-source", type=int)
    g.add_argument("--n-target", type=int)
    g.add_argument("--n-classes", type=int)
    g.add_argument("--seed", type=int, help="dataset seed (config key data_seed)")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train DADA and write model.bin, metrics.ndjson, config.txt")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--config")
    t.add_argument("--data", help="dataset CSV; generated from the config when omitted")
    t.add_argument("--seed", type=int, help="training seed (overrides the config)")
    t.add_argument("--eq12-range", choices=("paper", "full"),
                   help="discrepancy over the first K (paper) or all 2K (full) outputs")
    t.add_argument("--export-features", action="store_true", help="also write features.csv")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="print accuracies and the proxy A-distance as JSON")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--seed", type=int, default=0, help="seed of the A-distance split")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="source_only / dada_no_ssl / dada_full over several seeds")
    a.add_argument("--out-dir", required=True)
    a.add_argument("--config")
    a.add_argument("--data")
    a.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at --seed")
    a.add_argument("--seed", type=int)
    a.add_argument("--eq12-range", choices=("paper", "full"))
    a.add_argument("--workers", type=int, default=1)
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("gradcheck", help="finite-difference check of every op and loss")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--configs", type=int, default=10, help="random configurations per entry")
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "seed", None) is not None and args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        code = args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except VALIDATION_ERRORS as exc:
        print(f"dada: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (DadaError, ArithmeticError, OSError, ValueError) as exc:
        print(f"dada: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
