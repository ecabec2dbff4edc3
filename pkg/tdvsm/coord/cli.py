"""
Command-line entry point: ``tdvsm <subcommand> [flags]``.

Exit codes: 0 success, 1 usage, 2 data/configuration problems, 3 numerical
failures. Diagnostics go to standard error through the root logger.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace

from hydra.errors import HydraException
from omegaconf.errors import OmegaConfBaseException

from tdvsm.build_tdvsm import build_case, load_settings
from tdvsm.coord.loop import run_loop, write_outputs
from tdvsm.coord.report import render_report
from tdvsm.errors import ConfigError, IslandingError, NumericalError
from tdvsm.margin.dataset import generate_dataset, load_dataset
from tdvsm.margin.scenario import sample_scenario
from tdvsm.margin.state import feature_names
from tdvsm.mlpvsm.dx import train_dx_model
from tdvsm.mlpvsm.metrics import Metrics, metrics
from tdvsm.mlpvsm.model import load_model, save_model
from tdvsm.mlpvsm.train import kfold_cv, train_rprop
from tdvsm.netmodel.contingency import parse_contingency
from tdvsm.netmodel.types import nominal_operating_point
from tdvsm.utils.misc import configure_logging, write_json, write_text

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _shared(parser):
    parser.add_argument("--case", default=None, help="bundled case name or path to a .case file")
    parser.add_argument("--config", default="default.yaml", help="config name in tdvsm_configs/ or a YAML path")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="config override")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--jobs", type=int, default=None)
    parser.add_argument("--verbose", action="store_true")


def _coordination(parser):
    parser.add_argument("--model", required=True, help="transmission VSM surrogate artifact")
    parser.add_argument("--dx-model", dest="dx_models", action="append", default=[], help="feeder surrogate artifact")
    parser.add_argument("--target", type=float, default=None, help="target margin, MW")
    parser.add_argument("--scenario", type=int, default=None, help="seed of the operating point to start from")
    parser.add_argument("--contingency", default=None, help="contingency id, e.g. br3")


def build_parser():
    parser = _Parser(prog="tdvsm", description="TSO-DSO voltage stability margin toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-dataset", help="sample scenarios and compute their margins")
    _shared(p)
    p.add_argument("--dataset", default=None, help="output CSV (default <out>/dataset.csv)")
    p.add_argument("--scenarios", type=int, default=None)

    p = sub.add_parser("train", help="fit a tanh-MLP surrogate")
    _shared(p)
    p.add_argument("--dataset", default=None, help="VSM dataset CSV")
    p.add_argument("--feeder", default=None, help="fit the boundary reactive surrogate of this feeder instead")
    p.add_argument("--model", default=None, help="output artifact (default <out>/vsm_model.json)")

    p = sub.add_parser("validate", help="score a surrogate and cross-validate on a dataset")
    _shared(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", default=None)
    p.add_argument("--folds", type=int, default=5)

    p = sub.add_parser("optimize", help="one TSO/DSO iteration and its verification")
    _shared(p)
    _coordination(p)
    p.add_argument("--weights", choices=("sensitivity", "equal"), default=None)

    p = sub.add_parser("run-loop", help="iterate TSO/DSO coordination up to the target margin")
    _shared(p)
    _coordination(p)
    p.add_argument("--weights", choices=("sensitivity", "equal"), default=None)

    p = sub.add_parser("report", help="paired sensitivity/equal runs summarized as markdown")
    _shared(p)
    _coordination(p)
    p.add_argument("--dataset", default=None, help="dataset used for cross-validation in the report")
    p.add_argument("--folds", type=int, default=5)
    return parser


def _settings(args):
    overrides = [o if o.startswith(("+", "~")) else "++" + o for o in args.overrides]
    if args.seed is not None:
        overrides.append(f"++seed={args.seed}")
    settings = load_settings(args.config, overrides)
    if args.case is not None:
        settings.case = args.case
    if args.jobs is not None:
        settings.dataset.jobs = args.jobs
        settings.cosim.jobs = args.jobs
    return settings


def _load_vsm_model(path, net):
    model = load_model(path)
    expected = feature_names(net)
    if model.feature_names and list(model.feature_names) != expected:
        raise ConfigError(f"model {path} was trained on other features than case {net.name or '?'} provides")
    return model


def _dx_models(args, settings, feeders, needed):
    models = {}
    for path in args.dx_models:
        model = load_model(path)
        feeder = model.meta.get("feeder")
        if feeder not in feeders:
            raise ConfigError(f"{path}: feeder {feeder!r} is not part of the case")
        models[feeder] = model
    if not needed:
        return models
    for fid, feeder in feeders.items():
        if fid not in models and feeder.ders:
            logging.info(f"No surrogate given for feeder {fid}, training one on {settings.dx_samples} BFS samples")
            models[fid] = train_dx_model(
                feeder,
                config=settings.dx_train,
                n=settings.dx_samples,
                seed=settings.seed,
                load_scale=settings.coord.load_scale,
            )
    return models


def _operating_point(args, settings, net, feeders):
    if args.scenario is not None:
        return sample_scenario(net, feeders, settings.scenario, args.scenario, settings.cosim, settings.powerflow).op
    op = nominal_operating_point(net)
    return replace(op, load_scale=settings.coord.load_scale)


def _target(args, settings):
    target = args.target if args.target is not None else settings.coord.target
    if target is None:
        raise ConfigError("no target margin: pass --target or set coord.target")
    return float(target)


def cmd_gen_dataset(args):
    settings = _settings(args)
    if args.scenarios is not None:
        settings.dataset.n_scenarios = args.scenarios
    net, feeders = build_case(settings)
    path = args.dataset or os.path.join(args.out, "dataset.csv")
    dataset = generate_dataset(
        net,
        feeders,
        settings.dataset,
        settings.scenario,
        settings.margin,
        settings.cosim,
        settings.powerflow,
        out_path=path,
    )
    logging.info(f"Wrote {len(dataset)} samples to {path}")
    return 0


def cmd_train(args):
    settings = _settings(args)
    if args.feeder is not None:
        net, feeders = build_case(settings)
        feeders = {f.id: f for f in feeders}
        if args.feeder not in feeders:
            raise ConfigError(f"feeder {args.feeder!r} is not part of case {settings.case}")
        model = train_dx_model(
            feeders[args.feeder],
            config=settings.dx_train,
            n=settings.dx_samples,
            seed=settings.seed,
            load_scale=settings.coord.load_scale,
        )
        path = args.model or os.path.join(args.out, f"dx_model_{args.feeder}.json")
    else:
        if args.dataset is None:
            raise ConfigError("train needs --dataset (or --feeder)")
        dataset = load_dataset(args.dataset)
        model, _ = train_rprop(dataset, settings.train)
        path = args.model or os.path.join(args.out, "vsm_model.json")
    save_model(path, model)
    logging.info(f"Saved surrogate to {path}")
    return 0


def cmd_validate(args):
    settings = _settings(args)
    dataset = load_dataset(args.dataset)
    summary = {"samples": len(dataset)}
    if args.model is not None:
        model = load_model(args.model)
        if model.feature_names and list(model.feature_names) != list(dataset.feature_names):
            raise ConfigError(f"model {args.model} does not match the dataset columns")
        m = metrics(dataset.y, model.forward(dataset.x))
        summary["model"] = m.to_dict()
        logging.info(f"Model on dataset: R2 {m.r2:.4f}, MAE {m.mae_pct:.2f}%")
    cv = kfold_cv(dataset, settings.train, folds=args.folds, jobs=settings.dataset.jobs)
    summary["cv_mean"] = cv.mean.to_dict()
    summary["cv_pooled"] = cv.pooled.to_dict()
    summary["cv_folds"] = [m.to_dict() for m in cv.folds]
    write_json(os.path.join(args.out, "validation.json"), summary)
    return 0


def _coordinate(args, settings, weight_mode, config=None, dx_models=None):
    net, feeders = build_case(settings)
    feeders = {f.id: f for f in feeders}
    vsm_model = _load_vsm_model(args.model, net)
    if dx_models is None:
        dx_models = _dx_models(args, settings, feeders, needed=weight_mode == "sensitivity")
    op = _operating_point(args, settings, net, feeders)
    trace = run_loop(
        net,
        feeders,
        op,
        vsm_model,
        dx_models,
        _target(args, settings),
        weight_mode,
        config or settings.coord,
        settings.tso,
        settings.cosim,
        settings.powerflow,
        parse_contingency(args.contingency),
    )
    return trace, vsm_model, dx_models


def _run(args, max_iters=None):
    settings = _settings(args)
    weight_mode = args.weights or settings.coord.weight_mode
    config = settings.coord if max_iters is None else replace(settings.coord, max_iters=max_iters)
    trace, vsm_model, dx_models = _coordinate(args, settings, weight_mode, config)
    report = render_report({weight_mode: trace}, metrics=_model_metrics(vsm_model), dx_metrics=_dx_metrics(dx_models))
    write_outputs(trace, args.out, report)
    logging.info(
        f"{trace.iterations} iteration(s), final margin {trace.final_vsm:.2f} MW, "
        f"{'converged' if trace.converged else 'not converged: ' + trace.reason}"
    )
    return 0


def cmd_optimize(args):
    return _run(args, max_iters=1)


def cmd_run_loop(args):
    return _run(args)


def _model_metrics(model):
    val = model.meta.get("validation")
    if not val:
        return None
    return Metrics(r2=val["r2"], mae_pct=val["mae_pct"], mse=val["mse"], n=val.get("n", 0))


def _dx_metrics(dx_models):
    return {fid: m.meta["validation"] for fid, m in (dx_models or {}).items() if "validation" in m.meta}


def cmd_report(args):
    settings = _settings(args)
    traces = {}
    dx_models = None
    vsm_model = None
    for mode in ("sensitivity", "equal"):
        trace, vsm_model, dx_models = _coordinate(args, settings, mode, dx_models=dx_models)
        traces[mode] = trace
        write_outputs(trace, os.path.join(args.out, mode))
    cv = None
    if args.dataset is not None:
        cv = kfold_cv(load_dataset(args.dataset), settings.train, folds=args.folds, jobs=settings.dataset.jobs)
    text = render_report(traces, metrics=_model_metrics(vsm_model), cv=cv, dx_metrics=_dx_metrics(dx_models))
    write_text(os.path.join(args.out, "report.md"), text)
    logging.info(f"Report written to {os.path.join(args.out, 'report.md')}")
    return 0


COMMANDS = {
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "validate": cmd_validate,
    "optimize": cmd_optimize,
    "run-loop": cmd_run_loop,
    "report": cmd_report,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return COMMANDS[args.command](args)
    except NumericalError as e:
        logging.error(f"{type(e).__name__}: {e}")
        return EXIT_NUMERICAL
    except (ValueError, OSError, KeyError, IslandingError, HydraException, OmegaConfBaseException) as e:
        logging.error(f"{type(e).__name__}: {e}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
