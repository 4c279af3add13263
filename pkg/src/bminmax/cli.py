"""Command line interface: ``gen``, ``sample``, ``aggregate``, ``experiment``.

Exit status is 0 on success, 2 for configuration errors and 3 for data
errors.  ``BMMX_THREADS`` caps the worker threads used by ``experiment``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .aggregation import Mode, adaptive_aggregate, aggregate_fixed, estimate_aggregate_mse
from .exceptions import ConfigError, DataError
from .harness import (
    Axis,
    Estimator,
    ExperimentConfig,
    FileSource,
    ZipfSource,
    gen_zipf,
    load_vector,
    save_vector,
    sweep_rows,
    write_results,
)
from .sampling import plan_for, poisson_sample, sample_size_for_ratio
from .wire import build_payload, effective_compression, read_payload, write_payload

log = logging.getLogger("bminmax")

EXIT_CONFIG = 2
EXIT_DATA = 3


def _parse_dist(text: str) -> ZipfSource:
    name, _, rest = text.partition(":")
    if name != "zipf":
        raise ConfigError(f"unsupported distribution {name!r} (only zipf)")
    parts = [p for p in rest.split(":") if p]
    try:
        exponent = float(parts[0]) if parts else 1.0
        support = int(parts[1]) if len(parts) > 1 else 10**6
    except ValueError:
        raise ConfigError(f"bad distribution spec {text!r}") from None
    return ZipfSource(exponent, support)


def cmd_gen(args) -> int:
    if args.dist != "zipf":
        raise ConfigError(f"unsupported distribution {args.dist!r} (only zipf)")
    vec = gen_zipf(args.dim, args.s, args.support, args.seed, args.site)
    save_vector(args.out, vec.values)
    log.info("wrote %d values to %s", vec.values.size, args.out)
    return 0


def cmd_sample(args) -> int:
    vec = load_vector(args.input)
    vec.site_id = args.site_id
    plan = plan_for(vec, sample_size_for_ratio(vec.dim, args.ratio))
    draw = poisson_sample(vec, plan, args.seed, args.trial)
    payload = build_payload(vec, plan, draw, prescaled=args.unbiased)
    size = write_payload(args.out, payload)
    nominal, byte_ratio = effective_compression(payload)
    print(f"site={vec.site_id} d={vec.dim} C={plan.threshold!r} sent={draw.draw_count} "
          f"bytes={size} nominal_ratio={nominal:.4g} byte_ratio={byte_ratio:.4g}")
    return 0


def cmd_aggregate(args) -> int:
    payloads = [read_payload(p) for p in args.payloads]
    if args.mode == "adaptive":
        result = adaptive_aggregate(payloads)
        estimates, mode = result.estimates, result.mode
        est_b, est_m = result.est_mse_bminmax, result.est_mse_minmax
    else:
        mode = Mode(args.mode)
        estimates = aggregate_fixed(payloads, mode)
        est_b, est_m = estimate_aggregate_mse([p.summary for p in payloads])
    lines = ["key,estimate"] + [f"{k},{v!r}" for k, v in sorted(estimates.items())]
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"mode={mode.value} sites={len(payloads)} keys={len(estimates)} "
          f"est_mse_bminmax={est_b!r} est_mse_minmax={est_m!r}")
    return 0


def cmd_experiment(args) -> int:
    if args.input:
        source = FileSource(args.input)
        dim = args.dim
    else:
        source = _parse_dist(args.dist)
        if args.support is not None:
            source = ZipfSource(source.exponent, args.support)
        dim = args.dim if args.dim is not None else 10000
    try:
        estimators = tuple(Estimator(e.strip()) for e in args.estimators.split(","))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    config = ExperimentConfig(
        sites=args.sites, dim=dim, ratio=args.ratio, trials=args.trials, seed=args.seed,
        source=source, estimators=estimators, key_overlap=args.overlap,
        replicate=args.replicate, roundtrip=not args.no_roundtrip,
    )
    axis = Axis.parse(args.sweep) if args.sweep else Axis("ratio", (args.ratio,))
    rows = sweep_rows(config, axis)
    csv_path, dat_path = write_results(rows, axis.name, args.out, timing=args.timing)
    print(f"wrote {len(rows)} rows to {csv_path} and {dat_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bminmax", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a synthetic site vector")
    g.add_argument("--dist", default="zipf")
    g.add_argument("--s", type=float, default=1.0, help="Zipf exponent")
    g.add_argument("--support", type=int, default=10**6)
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--site", type=int, default=0, help="site index (selects the stream)")
    g.add_argument("--out", required=True, help=".csv/.txt for text, anything else raw float64")
    g.set_defaults(func=cmd_gen)

    s = sub.add_parser("sample", help="sample one vector file into a .bmmx payload")
    s.add_argument("--input", required=True)
    s.add_argument("--ratio", type=float, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--unbiased", action="store_true", help="send x/p instead of raw x")
    s.add_argument("--seed", type=int, default=42)
    s.add_argument("--trial", type=int, default=0)
    s.add_argument("--site-id", type=int, default=0)
    s.set_defaults(func=cmd_sample)

    a = sub.add_parser("aggregate", help="merge payload files into per-key estimates")
    a.add_argument("payloads", nargs="+")
    a.add_argument("--mode", choices=["adaptive", "minmax", "bminmax"], default="adaptive")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_aggregate)

    e = sub.add_parser("experiment", help="Monte Carlo MSE run or sweep")
    e.add_argument("--sites", type=int, default=4)
    e.add_argument("--dim", type=int, default=None)
    e.add_argument("--ratio", type=float, default=4.0)
    e.add_argument("--trials", type=int, default=1000)
    e.add_argument("--seed", type=int, default=42)
    src = e.add_mutually_exclusive_group()
    src.add_argument("--dist", default="zipf:1", help="zipf:S[:SUPPORT]")
    src.add_argument("--input", help="flat vector file split across sites")
    e.add_argument("--support", type=int, default=None)
    e.add_argument("--sweep", help="ratio=2,4,6 or sites=1..50")
    e.add_argument("--overlap", type=float, default=1.0, help="fraction of keys shared by all sites")
    e.add_argument("--replicate", action="store_true", help="every site holds site 0's vector")
    e.add_argument("--estimators", default="minmax,bminmax,adaptive")
    e.add_argument("--no-roundtrip", action="store_true", help="skip payload encode/decode")
    e.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
