"""Command-line front end.

Subcommands: synth (write a synthetic benchmark pair), train (one run,
writing metrics.jsonl, model.bin, summary.json), distance (standalone
distance between two feature CSVs), gradcheck (finite-difference audit of
the autodiff ops and losses), suite (variant x seed sweep to CSV).

Exit codes: 0 success, 2 usage or configuration error, 3 file I/O error,
4 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from .data import Dataset, SynthSpec, gen_rotated_blobs, load_csv, save_csv
from .errors import (BjdaError, ConfigError, DimensionError, DomainError,
                     InputError, NumericalError, ParseError, ValidationError)
from .gradcheck import run_all
from .kernels import (KERNEL_KINDS, KernelSpec, closed_form_bures,
                      exact_wasserstein_sq, kbw_sq)
from .model import save_checkpoint
from .train import VARIANTS, TrainConfig, evaluate, run_suite, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

_USAGE_ERRORS = (ConfigError, InputError, DimensionError, DomainError,
                 ParseError, ValidationError)

# CLI spelling of the kernel kinds
_KERNEL_FLAG = {"gauss": "gaussian", "linear": "linear"}


# ---------------------------------------------------------------------------
# config file: one "key = value" per line, mirroring TrainConfig


_CONFIG_KEYS: dict[str, type] = {
    "lambda1": float, "lambda2": float, "lr": float, "momentum": float,
    "weight_decay": float, "t_max": int, "batch_source": int,
    "batch_target": int, "seed": int, "variant": str, "triplet_margin": float,
    "confidence_threshold": float, "pl": bool, "kernel_kind": str,
    "kernel_bandwidth_sq": float, "leaky_slope": float, "proto_mode": str,
    "ema_decay": float, "shared_bandwidth": bool, "hidden_dim": int,
    "feat_dim": int, "eval_every": int,
}


def emit_config(cfg: TrainConfig) -> str:
    """Render a config as key = value lines; parse_config inverts this."""
    values = {
        "kernel_kind": cfg.kernel.kind,
        "kernel_bandwidth_sq": "auto" if cfg.kernel.bandwidth_sq is None
                               else repr(cfg.kernel.bandwidth_sq),
    }
    for f in dataclasses.fields(cfg):
        if f.name == "kernel":
            continue
        v = getattr(cfg, f.name)
        values[f.name] = ("true" if v else "false") if isinstance(v, bool) else \
            (repr(v) if isinstance(v, float) else str(v))
    return "".join(f"{key} = {values[key]}\n" for key in _CONFIG_KEYS)


def _parse_scalar(key: str, raw: str):
    want = _CONFIG_KEYS[key]
    if want is bool:
        if raw not in ("true", "false"):
            raise ConfigError(f"config key {key}: expected true/false, got {raw!r}")
        return raw == "true"
    if want is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"config key {key}: expected an integer, got {raw!r}") from None
    if want is float:
        if key == "kernel_bandwidth_sq" and raw == "auto":
            return None
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"config key {key}: expected a float, got {raw!r}") from None
    return raw


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse key = value lines; unknown and repeated keys are rejected."""
    seen: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected key = value, got {line!r}")
        key, _, raw = stripped.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        seen[key] = _parse_scalar(key, raw)

    cfg = base if base is not None else TrainConfig()
    kernel_kind = seen.pop("kernel_kind", cfg.kernel.kind)
    bw = seen.pop("kernel_bandwidth_sq", cfg.kernel.bandwidth_sq)
    cfg = dataclasses.replace(cfg, kernel=KernelSpec(kernel_kind, bw), **seen)
    cfg.validate()
    return cfg


def _apply_overrides(cfg: TrainConfig, pairs: list[str]) -> TrainConfig:
    for pair in pairs:
        cfg = parse_config(pair, base=cfg)
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    spec = SynthSpec(classes=args.classes, dim=args.dim, per_class=args.per_class,
                     shift_angle=args.shift_angle, noise_sigma=args.noise_sigma,
                     projection_seed=args.projection_seed, sample_seed=args.sample_seed)
    source, target = gen_rotated_blobs(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_csv(source, out / "source.csv")
    save_csv(target, out / "target.csv")
    (out / "spec.json").write_text(json.dumps(dataclasses.asdict(spec), indent=2) + "\n")
    print(f"wrote {out / 'source.csv'} and {out / 'target.csv'} "
          f"({spec.classes} classes x {spec.per_class} rows each)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = TrainConfig()
    if args.config:
        cfg = parse_config(Path(args.config).read_text(), base=cfg)
    cfg = _apply_overrides(cfg, args.set or [])
    source = load_csv(args.source, name="source")
    target = load_csv(args.target, name="target")

    started = time.monotonic()
    params, metrics = train(source, target, cfg)
    wall = time.monotonic() - started

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.jsonl").write_text(metrics.to_jsonl())
    save_checkpoint(params, out / "model.bin")
    final_acc = None
    if np.any(target.labels >= 0):
        final_acc = evaluate(params, target, cfg.leaky_slope).accuracy
    summary = {
        "final_target_accuracy": final_acc,
        "config": {line.split(" = ")[0]: line.split(" = ", 1)[1]
                   for line in emit_config(cfg).splitlines()},
        "wall_clock_seconds": wall,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    acc_text = "n/a" if final_acc is None else f"{final_acc:.4f}"
    print(f"trained variant={cfg.variant} seed={cfg.seed} for {cfg.t_max} iterations; "
          f"target accuracy {acc_text}")
    return EXIT_OK


def _covariance(x: np.ndarray) -> np.ndarray:
    centered = x - x.mean(axis=0, keepdims=True)
    return centered.T @ centered / x.shape[0]


def cmd_distance(args) -> int:
    a = load_csv(args.a, name="a")
    b = load_csv(args.b, name="b")
    if args.kind == "kbw":
        spec = KernelSpec(_KERNEL_FLAG[args.kernel], args.bandwidth_sq)
        sq = kbw_sq(a.features, b.features, spec, tape=None,
                    shared_bandwidth=args.shared_bandwidth)
        print(f"{np.sqrt(sq.item()):.12f} (kbw distance, {spec.kind} kernel)")
    elif args.kind == "bures":
        d = closed_form_bures(_covariance(a.features), _covariance(b.features))
        print(f"{d:.12f} (bures distance between feature covariances)")
    else:
        cost = exact_wasserstein_sq(a.features, b.features)
        print(f"{cost:.12f} (squared)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_all(args.seed)
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max rel err {r.max_rel_err:.3e}  "
              f"(tol {r.tol:.0e})  {status}")
        failures += 0 if r.passed else 1
    if failures:
        print(f"{failures} of {len(results)} checks failed")
        return 1
    print(f"all {len(results)} gradient checks passed")
    return EXIT_OK


def cmd_suite(args) -> int:
    cfg = TrainConfig()
    if args.config:
        cfg = parse_config(Path(args.config).read_text(), base=cfg)
    cfg = _apply_overrides(cfg, args.set or [])
    source = load_csv(args.source, name="source")
    target = load_csv(args.target, name="target")
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    try:
        seeds = [int(s) for s in args.seeds.split(",")]
    except ValueError:
        raise ConfigError(f"--seeds must be comma-separated integers, got {args.seeds!r}") from None
    result = run_suite(source, target, cfg, variants, seeds, jobs=args.jobs)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.csv", "w") as fh:
        fh.write("variant,seed,accuracy\n")
        for cell in result.cells:
            acc = "failed" if cell.accuracy is None else f"{cell.accuracy:.17g}"
            fh.write(f"{cell.variant},{cell.seed},{acc}\n")
    with open(out / "summary.csv", "w") as fh:
        fh.write("variant,mean,std\n")
        for variant, mean, std in result.summary():
            fh.write(f"{variant},{mean:.17g},{std:.17g}\n")
    for cell in result.cells:
        if cell.error:
            print(f"cell ({cell.variant}, {cell.seed}) failed: {cell.error}", file=sys.stderr)
    for variant, mean, std in result.summary():
        print(f"{variant}: mean accuracy {mean:.4f} (std {std:.4f})")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bjda",
        description="Joint distribution alignment trainer and distance toolbox "
                    "for precomputed feature vectors.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a rotated-blobs benchmark pair")
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--per-class", type=int, default=200)
    p.add_argument("--shift-angle", type=float, default=50.0)
    p.add_argument("--noise-sigma", type=float, default=0.25)
    p.add_argument("--projection-seed", type=int, default=0)
    p.add_argument("--sample-seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="run one training configuration")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--config", help="key = value file; defaults apply otherwise")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("distance", help="distance between two feature CSVs")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--kind", choices=("kbw", "bures", "ot"), default="kbw")
    p.add_argument("--kernel", choices=tuple(_KERNEL_FLAG), default="gauss")
    p.add_argument("--bandwidth-sq", type=float, default=None)
    p.add_argument("--shared-bandwidth", action="store_true")
    p.set_defaults(func=cmd_distance)

    p = sub.add_parser("gradcheck", help="finite-difference audit of gradients")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("suite", help="variant x seed sweep, results to CSV")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--variants", default=",".join(VARIANTS))
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_suite)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    try:
        return args.func(args)
    except _USAGE_ERRORS as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERIC


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
