"""Command-line entry point: ``build-pcm``, ``run`` and ``compare``.

Exit codes are 0 on success, 2 for an invalid configuration and 3 when a
pruned-PCM artifact is missing or unreadable.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .pcm import ArtifactError, pruned_pcm_for, serialize
from .sim import (
    ConfigError,
    ExperimentConfig,
    MissingArtifactError,
    emit,
    emit_report,
    paired_compare,
    run_experiment,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3

log = logging.getLogger("polarosd")


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _load(path: str, args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(path)
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    cfg.validate()
    return cfg


def _write(data: bytes, out: str | None) -> None:
    if out is None:
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        with open(out, "wb") as fh:
            fh.write(data)


def cmd_build_pcm(args) -> int:
    if args.config:
        cfg = _load(args.config, args)
        n, m, poly, design = cfg.n, cfg.m, cfg.crc_poly, cfg.design_param
    else:
        if args.n is None or args.m is None:
            raise ConfigError("build-pcm needs --config or both --n and --m")
        n, m, design = args.n, args.m, args.design_param
        poly = None if args.crc_poly.lower() == "none" else int(args.crc_poly, 0)
        ExperimentConfig(n=n, m=m, crc_poly=poly, design_param=design).validate()
    cfg = ExperimentConfig(n=n, m=m, crc_poly=poly, design_param=design)
    p = pruned_pcm_for(cfg.code())
    log.info("pruned PCM: %d x %d, density %.4f%%", p.matrix.n_rows, p.n_prime, 100 * p.density())
    if args.out is None:
        raise ConfigError("build-pcm needs --out")
    _write(serialize(p), args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load(args.config, args)
    result = run_experiment(cfg)
    _write(emit(result, args.format), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    if len(args.config) != 2:
        raise ConfigError("compare needs exactly two --config files")
    cfg_a, cfg_b = (_load(path, args) for path in args.config)
    report = paired_compare(cfg_a, cfg_b)
    _write(emit_report(report, args.format), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polarosd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, multi=False):
        if multi:
            p.add_argument("--config", action="append", required=True, help="JSON config (give twice)")
        else:
            p.add_argument("--config", help="JSON experiment config")
        p.add_argument("--seed", type=_u64, help="override master_seed")
        p.add_argument("--workers", type=int, help="override worker count")
        p.add_argument("--out", help="output path (default stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    b = sub.add_parser("build-pcm", help="write a pruned-PCM artifact")
    common(b)
    b.add_argument("--n", type=int, help="log2 of the blocklength")
    b.add_argument("--m", type=int, help="message bits")
    b.add_argument("--crc-poly", default="0x43", help="CRC polynomial or 'none'")
    b.add_argument("--design-param", type=float, default=0.5)
    b.set_defaults(func=cmd_build_pcm)

    r = sub.add_parser("run", help="run a Monte Carlo sweep")
    common(r)
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="paired comparison of two decoders")
    common(c, multi=True)
    c.set_defaults(func=cmd_compare, format="json")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "run" and not args.config:
        print("error: run needs --config", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (MissingArtifactError, ArtifactError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
