"""Command line front end.

Exit codes: 0 success, 1 failed verification or I/O problem, 2 bad
configuration or arguments.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .coding import IndexStream, make_bit_report, raw_bits
from .dither import DitherCoordinates
from .errors import ConfigError, DecodeError
from .quantizers import UniformQuantizerCfg, dithered_decode, dithered_encode
from .simnet import ExperimentConfig, run_experiment
from .verify import VERIFY_SEED, run_verification

# Any nonzero replacement constant breaks the per-index mixing; zero is the
# most dramatic (every coordinate in a round gets the same dither) and makes
# the corruption drill easy to see in the report.
CORRUPT_INDEX_GAMMA = 0

_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r}; valid keys: {', '.join(sorted(_FIELD_TYPES))}")
    kind = _FIELD_TYPES[key]
    kind = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key}: cannot parse {raw!r} as {kind}") from None
    return raw


def read_config_file(path) -> dict:
    """Parse a key=value config file; unknown keys are rejected."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        values[key] = _coerce(key, raw)
    return values


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradquant", description=__doc__)
    parser.add_argument("--version", action="version", version=f"gradquant {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run a simulated multi-worker training experiment")
    train.add_argument("--config", help="key=value config file; flags below override it")
    for field in dataclasses.fields(ExperimentConfig):
        if field.name == "master_seed":
            continue
        train.add_argument(f"--{field.name.replace('_', '-')}", dest=field.name, default=None)
    train.add_argument("--seed", dest="master_seed", default=None, help="master seed (config key master_seed)")
    train.add_argument("--out", help="directory for train.csv and summary.json")

    bits = sub.add_parser("bits", help="print the per-round communication budget for an MLP")
    bits.add_argument("--layers", default="784,300,100,10", help="comma separated layer sizes")
    bits.add_argument("--scales-per-layer", type=int, default=2,
                      help="scale factors per layer (weights and biases separately by default)")
    bits.add_argument("--nesting-k", type=int, default=3)

    for name in ("verify", "stats-test"):
        ver = sub.add_parser(name, help="run the statistical verification suite")
        ver.add_argument("--scale", type=float, default=1.0, help="sample-count multiplier")
        ver.add_argument("--seed", type=int, default=VERIFY_SEED)
        ver.add_argument("--corrupt-dither", action="store_true",
                         help="deliberately break the dither generator; the suite must notice")
        ver.add_argument("--json", dest="json_path", help="also write the full report as JSON")

    bench = sub.add_parser("quantize-bench", help="quantize random gradients and report bits/error")
    bench.add_argument("--n", type=int, default=100_000)
    bench.add_argument("--levels", type=int, default=2, help="index range M; alphabet size is 2M+1")
    bench.add_argument("--seed", type=int, default=0)
    return parser


def _cmd_train(args) -> int:
    values = read_config_file(args.config) if args.config else {}
    for field in dataclasses.fields(ExperimentConfig):
        flag = getattr(args, field.name, None)
        if flag is not None:
            values[field.name] = _coerce(field.name, str(flag))
    config = ExperimentConfig(**values)

    csv_path = json_path = None
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / "train.csv", out / "summary.json"
    reports, opt = run_experiment(config, csv_path=csv_path, json_path=json_path)
    last = reports[-1]
    total_bits = sum(r.raw_bits_total for r in reports)
    print(f"rounds={config.rounds} final_loss={last.loss:.6g} grad_norm={last.grad_norm:.6g} "
          f"raw_kbit_total={total_bits / 1000.0:.1f} decode_failures={sum(r.decode_failures for r in reports)}")
    if args.out:
        print(f"wrote {csv_path} and {json_path}")
    return 0


def _cmd_bits(args) -> int:
    layers = [int(s) for s in args.layers.split(",") if s.strip()]
    if len(layers) < 2:
        raise ConfigError("--layers needs at least an input and an output size")
    n = sum(a * b + b for a, b in zip(layers[:-1], layers[1:]))
    k_scales = args.scales_per_layer * (len(layers) - 1)
    rows = [
        ("float32 baseline", n * 32.0),
        ("3-level dithered", raw_bits(n, 3, k_scales)),
        ("5-level dithered", raw_bits(n, 5, k_scales)),
        (f"nested k={args.nesting_k}", raw_bits(n, args.nesting_k, k_scales)),
        ("one-bit + feedback", n * 1.0 + 64.0 * k_scales),
    ]
    print(f"layers={'-'.join(map(str, layers))}  parameters={n}  scale_factors={k_scales}")
    print(f"{'scheme':<20}{'Kbit/round':>12}{'vs float32':>12}")
    for name, bits_ in rows:
        print(f"{name:<20}{bits_ / 1000.0:>12.2f}{bits_ / (n * 32.0):>11.1%}")
    saving = 1.0 - raw_bits(n, 3, k_scales) / raw_bits(n, 5, k_scales)
    print(f"3-level vs 5-level saving: {saving:.1%}")
    return 0


def _cmd_verify(args) -> int:
    c2 = CORRUPT_INDEX_GAMMA if args.corrupt_dither else None
    report = run_verification(scale=args.scale, dither_c2=c2, seed=args.seed)
    width = max(len(c["name"]) for c in report["checks"])
    for c in report["checks"]:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"{status}  {c['name']:<{width}}  statistic={c['statistic']:.6g} threshold={c['threshold']:.6g}")
        if c["detail"] and not c["passed"]:
            print(f"      {c['detail']}")
    if args.json_path:
        with open(args.json_path, "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if not report["all_passed"]:
        failed = [c["name"] for c in report["checks"] if not c["passed"]]
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return 1
    print(f"all {len(report['checks'])} checks passed (alpha={report['alpha']})")
    return 0


def _cmd_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    g = rng.normal(size=args.n)
    cfg = UniformQuantizerCfg.from_levels(args.levels)
    coords = DitherCoordinates(seed=args.seed, round=0)
    msg = dithered_encode(g, cfg, coords)
    decoded = dithered_decode(msg)
    stream = IndexStream(msg.indices, -cfg.levels_m, cfg.levels_m)
    rep = make_bit_report(stream, cfg.n_levels, len(msg.partitions))
    mse = float(np.mean((decoded - g) ** 2))
    print(f"n={args.n} levels={cfg.n_levels} delta={cfg.delta:.6g}")
    print(f"raw_bits={rep.raw_bits:.1f} packed_bits={rep.packed_bits} "
          f"entropy_bits={rep.entropy_bits:.1f} coded_bits={rep.coded_bits}")
    print(f"mse={mse:.6g} bound_delta2_over_12={(float(np.abs(g).max()) * cfg.delta) ** 2 / 12.0:.6g}")
    return 0


def cli_main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "bits":
            return _cmd_bits(args)
        if args.command in ("verify", "stats-test"):
            return _cmd_verify(args)
        if args.command == "quantize-bench":
            return _cmd_bench(args)
        parser.error(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, DecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    raise SystemExit(cli_main())


if __name__ == "__main__":
    main()
