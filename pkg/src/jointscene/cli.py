"""Command-line entry point: ``jointscene <command> [options]``.

Every configuration key is also a flag (``--synthesis.duration 5``). Errors
are printed to stderr as one JSON object and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, ExperimentConfig, config_keys, parse_override_value
from . import pipeline as pl

EXIT_ERROR = 1
EXIT_STALE = 2
EXIT_CHECK_FAILED = 3
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"error": "UsageError", "message": message, "usage": self.format_usage()}),
              file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="experiment YAML file (default: full-scale settings)")
    p.add_argument("--desk", action="store_true",
                   help="start from the bundled desk-scale settings instead")
    p.add_argument("--work-dir", help="work directory (overrides paths.work_dir)")
    p.add_argument("--force", action="store_true", help="use stale upstream outputs anyway")
    group = p.add_argument_group("config overrides")
    for key in config_keys():
        group.add_argument(f"--{key}", dest=f"override:{key}", metavar="VALUE",
                           default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jointscene", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("procedural-corpus", help="write a synthetic event/background corpus")
    p.add_argument("out_dir")
    p.add_argument("--ontology", default="desk")
    p.add_argument("--sources-per-class", type=int, default=4)
    p.add_argument("--locations-per-scene", type=int, default=3)
    p.add_argument("--background-duration", type=float, default=6.0)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("prepare-corpus", help="normalize, trim, resample and triple event sources")
    _add_config_flags(p)
    p.add_argument("--manifest", help="event source CSV (default: paths.events)")
    p.add_argument("--out-dir", help="default: <work>/corpus")

    p = sub.add_parser("synthesize", help="render the annotated scene dataset")
    _add_config_flags(p)

    p = sub.add_parser("make-folds", help="grouped, stratified cross-validation folds")
    _add_config_flags(p)

    p = sub.add_parser("featurize", help="log-mel features, labels and per-fold standardizers")
    _add_config_flags(p)

    for name, help_ in (("train", "train one task on one fold"),
                        ("evaluate", "score a trained run on its test split")):
        p = sub.add_parser(name, help=help_)
        _add_config_flags(p)
        p.add_argument("--task", choices=pl.TASKS, default="joint")
        p.add_argument("--fold", type=int, default=0)

    p = sub.add_parser("compare", help="separate vs joint models over all folds")
    _add_config_flags(p)

    p = sub.add_parser("gradient-check", help="finite-difference check of the network")
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the JSON report here")
    return parser


def load_config(args) -> ExperimentConfig:
    if args.config and args.desk:
        raise ConfigError("--config and --desk are mutually exclusive")
    if args.config:
        config = ExperimentConfig.load(args.config)
    elif args.desk:
        config = ExperimentConfig.desk()
    else:
        config = ExperimentConfig()
    overrides = {k.split(":", 1)[1]: parse_override_value(v)
                 for k, v in vars(args).items() if k.startswith("override:")}
    if args.work_dir:
        overrides["paths.work_dir"] = args.work_dir
    return config.with_overrides(overrides) if overrides else config


def run(args) -> dict:
    if args.command == "procedural-corpus":
        return pl.cmd_procedural_corpus(args.out_dir, args.ontology, args.sources_per_class,
                                        args.locations_per_scene, args.background_duration,
                                        args.seed)
    if args.command == "gradient-check":
        doc = pl.cmd_gradient_check(args.epsilon, args.tolerance, args.seed, args.out)
        print(doc.pop("summary"))
        return doc

    config = load_config(args)
    layout = pl.Layout.from_config(config)
    force = args.force
    if args.command == "prepare-corpus":
        out = pl.cmd_prepare_corpus(config, args.manifest or config.paths.events,
                                    args.out_dir or layout.corpus)
        return {"corpus": str(out)}
    if args.command == "synthesize":
        out = pl.cmd_synthesize(config, layout.corpus, config.paths.backgrounds, layout.dataset,
                                force)
        return {"dataset": str(out)}
    if args.command == "make-folds":
        return {"folds": str(pl.cmd_make_folds(config, layout.dataset, layout.folds, force))}
    if args.command == "featurize":
        out = pl.cmd_featurize(config, layout.dataset, layout.folds, layout.features, force)
        return {"features": str(out)}
    if args.command == "train":
        out = pl.cmd_train(config, args.task, args.fold, layout.features, layout.folds,
                           layout.run_dir(args.task, args.fold), force)
        return {"run": str(out)}
    if args.command == "evaluate":
        result = pl.cmd_evaluate(config, args.task, args.fold,
                                 layout.run_dir(args.task, args.fold), layout.features,
                                 layout.folds, layout.dataset, force)
        return {k: v for k, v in result.items() if k not in ("class_wise", "counts")}
    if args.command == "compare":
        result = pl.cmd_compare(config, force=force)
        print(result["table"], end="")
        return {"report": str(layout.reports / "compare.json")}
    raise ConfigError(f"unknown command {args.command!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = run(args)
    except pl.StaleInputError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return EXIT_STALE
    except pl.PipelineError as exc:
        print(json.dumps(exc.to_dict()), file=sys.stderr)
        return EXIT_ERROR
    except (ConfigError, ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps(result, sort_keys=True, default=str))
    if args.command == "gradient-check" and not result["passed"]:
        return EXIT_CHECK_FAILED
    return 0


if __name__ == "__main__":
    sys.exit(main())
