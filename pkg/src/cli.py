# src/cli.py
"""Command-line front end: detect, describe, match, verify, evaluate, selftest.

Exit codes: 0 success, 1 domain error, 2 usage error (bad flags or config).
"""
import argparse
import logging
import sys
from typing import List, Optional

from src import __version__
from src.config import load_run_config
from src.errors import AffinaError, ConfigError, InterchangeError
from src.services.evaluation import emit_report, evaluate, load_sequence
from src.services.feature_io import (read_descriptors, read_features, read_matches,
                                     write_descriptors, write_features, write_inliers,
                                     write_matches)
from src.services.imagecore import load_image
from src.services.matcher import match_descriptors
from src.services.pipeline import AffinaPipeline
from src.services.selftest import run_selftest

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


# -------------------------------
# Argument parsing
# -------------------------------
def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--threads", type=int, default=None, help="Worker threads (default: AFFINA_THREADS or all cores)")
    p.add_argument("--seed", type=int, default=None, help="Seed for randomized checks")
    p.add_argument("--debug-dir", dest="debug_dir", default=None, help="Where --debug dumps go")
    level = p.add_mutually_exclusive_group()
    level.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
    level.add_argument("-q", "--quiet", action="store_true", help="Log warnings and errors only")


def _detector_flags(p: argparse.ArgumentParser):
    p.add_argument("--channels", default=None, help="'default', 'identity' or tilt@degrees list, e.g. '1,2@0,2@90'")
    p.add_argument("--octaves", type=int, default=None, help="Maximum number of octaves")
    p.add_argument("--edge-ratio", dest="edge_ratio", type=float, default=None, help="Edge response limit r")
    p.add_argument("--contrast", type=float, default=None, help="Absolute |LoG| floor")


def _matcher_flags(p: argparse.ArgumentParser):
    p.add_argument("--ratio", type=float, default=None, help="Distance ratio threshold")
    p.add_argument("--mutual", action="store_const", const=True, default=None,
                   help="Keep only mutual nearest neighbours")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="affina", description="Affine-invariant feature detection, "
                                     "description, matching and geometric verification.")
    parser.add_argument("--version", action="version", version=f"affina {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="Detect features in an image")
    p.add_argument("image")
    p.add_argument("--out", required=True, help="Features CSV")
    _detector_flags(p)
    _common(p)

    p = sub.add_parser("describe", help="Describe detected features")
    p.add_argument("image")
    p.add_argument("features")
    p.add_argument("--out", required=True, help="Descriptor file")
    _common(p)

    p = sub.add_parser("match", help="Match two descriptor files")
    p.add_argument("descriptors_a")
    p.add_argument("descriptors_b")
    p.add_argument("--out", required=True, help="Matches file")
    _matcher_flags(p)
    _common(p)

    p = sub.add_parser("verify", help="Geometric verification of matches",
                       description="Verify a matches file. Match indices refer to descriptor rows, so the "
                       "point sets are read from the two descriptor files written by `describe` "
                       "and passed to `match`, not from the features CSVs.")
    p.add_argument("matches", help="Matches file written by `match`")
    p.add_argument("descriptors_a", help="Descriptor file of image A, as written by `describe` (index_a refers to its rows)")
    p.add_argument("descriptors_b", help="Descriptor file of image B, as written by `describe` (index_b refers to its rows)")
    p.add_argument("--out", required=True, help="Inliers file")
    _common(p)

    p = sub.add_parser("evaluate", help="Repeatability and matching score on an image sequence")
    p.add_argument("sequence")
    p.add_argument("--out", required=True, help="Report CSV")
    p.add_argument("--debug", action="store_true", help="Dump side-by-side match drawings")
    _detector_flags(p)
    _matcher_flags(p)
    _common(p)

    p = sub.add_parser("selftest", help="Run the built-in oracle checks")
    _common(p)
    return parser


def _overrides(args) -> dict:
    keys = ("channels", "octaves", "edge_ratio", "contrast", "ratio", "mutual", "threads", "seed", "debug_dir")
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def _configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)


# -------------------------------
# Subcommands
# -------------------------------
def cmd_detect(args, cfg) -> int:
    img = load_image(args.image)
    features = AffinaPipeline(cfg).detect(img)
    write_features(features, args.out)
    return EXIT_OK


def cmd_describe(args, cfg) -> int:
    img = load_image(args.image)
    features = read_features(args.features)
    descriptors, dropped = AffinaPipeline(cfg).describe(img, features)
    write_descriptors(descriptors, args.out)
    if dropped:
        logger.info(f"{len(dropped)} feature(s) could not be described")
    return EXIT_OK


def cmd_match(args, cfg) -> int:
    a = read_descriptors(args.descriptors_a)
    b = read_descriptors(args.descriptors_b)
    matches = match_descriptors(a.values, b.values, cfg.matcher.ratio, cfg.matcher.mutual, cfg.threads)
    write_matches(matches, args.out)
    return EXIT_OK


def cmd_verify(args, cfg) -> int:
    matches = read_matches(args.matches)
    a = read_descriptors(args.descriptors_a)
    b = read_descriptors(args.descriptors_b)
    for m in matches:
        if not (0 <= m.index_a < len(a) and 0 <= m.index_b < len(b)):
            raise InterchangeError(f"match ({m.index_a}, {m.index_b}) refers past the descriptor files "
                                   f"({len(a)}, {len(b)} entries)")
    summary = AffinaPipeline(cfg).verify(a.points, b.points, matches)
    write_inliers(summary, args.out)
    print(summary.summary_line())
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    cfg.eval.debug = cfg.eval.debug or args.debug
    seq = load_sequence(args.sequence)
    emit_report(evaluate(seq, cfg), args.out)
    return EXIT_OK


def cmd_selftest(args, cfg) -> int:
    results = run_selftest(cfg.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_DOMAIN


COMMANDS = {
    "detect": cmd_detect,
    "describe": cmd_describe,
    "match": cmd_match,
    "verify": cmd_verify,
    "evaluate": cmd_evaluate,
    "selftest": cmd_selftest,
}


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors and 0 for --help / --version
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    _configure_logging(args)
    try:
        cfg = load_run_config(args.config, _overrides(args))
        return COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except AffinaError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_DOMAIN
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_DOMAIN


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
