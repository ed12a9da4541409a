"""Command line: ``regmt {prepare,run,export-pt,eval}``.

Every ExperimentConfig field has a flag (``m_list`` -> ``--m-list 50,100``).
Flags override ``--config FILE`` (TOML), which overrides the defaults.
Exit codes: 0 success, 1 some sentences failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from regmt import pipeline
from regmt.config import ConfigError, field_names, load_config
from regmt.corpus import AlignmentError, load_parallel
from regmt.evaluation import bleu

logger = logging.getLogger("regmt")

EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG = 0, 1, 2


def _config_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="TOML file of ExperimentConfig keys")
    g = p.add_argument_group("experiment settings")
    for name in field_names():
        g.add_argument("--" + name.replace("_", "-"), dest=name, default=None, metavar="V")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="regmt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _config_parser()
    sub.add_parser("prepare", parents=[common], help="build corpus and dev/dev2/test split")
    sub.add_parser("run", parents=[common], help="select, fit, tune, evaluate and decode")
    sub.add_parser("export-pt", parents=[common], help="write per-sentence phrase tables")
    ev = sub.add_parser("eval", help="corpus BLEU of a hypothesis file")
    ev.add_argument("hypotheses")
    ev.add_argument("references")
    ev.add_argument("--max-n", type=int, default=4)
    return parser


def _load(args):
    overrides = {name: getattr(args, name) for name in field_names()}
    return load_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "eval":
            corpus = load_parallel(args.hypotheses, args.references)
            print(f"BLEU = {bleu(corpus.sources, corpus.targets, args.max_n):.4f}")
            return EXIT_OK
        cfg = _load(args)
        if args.command == "prepare":
            pipeline.prepare(cfg)
            return EXIT_OK
        if args.command == "run":
            result = pipeline.run(cfg)
            for r in result.reports:
                logger.info("%s m=%s: F1 %.4f BER %.4f BLEU %s", r.config["solver"],
                            r.config["m"], r.f1, r.ber,
                            "n/a" if r.bleu is None else f"{r.bleu:.4f}")
            if result.failures:
                logger.error("%d sentence(s) failed", len(result.failures))
                return EXIT_PARTIAL
            return EXIT_OK
        if args.command == "export-pt":
            pipeline.export_phrase_tables(cfg)
            return EXIT_OK
    except (ConfigError, AlignmentError, FileNotFoundError) as e:
        logger.error("%s", e)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
