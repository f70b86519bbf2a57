"""Command-line interface.

Exit codes: 0 success, 1 a check was not satisfied (or training diverged),
2 usage, configuration or parse errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as lio
from .errors import LinGNNError
from .gradients import LossKind, evaluate
from .harness import ExperimentSpec, SyntheticSpec, gen_synthetic, run_experiment
from .model import init_params
from .theory import (BoundCase, GraphProblem, condition_report, convergence_bound_trace,
                     differential_inequality_check, loss_reduction_decomposition,
                     project_skip_heads, skip_acceleration_check)
from .trainer import TrainConfig, train

logger = logging.getLogger("lingnn")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise lio.ParseError(path, 0, "file not found") from None
    except json.JSONDecodeError as exc:
        raise lio.ParseError(path, exc.lineno, exc.msg) from None


def _emit(report, out, fmt="json"):
    if out:
        lio.write_report(report, out, fmt)
    else:
        text = lio.report_json(report) if fmt == "json" else lio.report_csv(report)
        sys.stdout.write(text)


def cmd_gen(args):
    d = _load_json(args.spec)
    if args.seed is not None:
        d["seed"] = args.seed
    data = gen_synthetic(SyntheticSpec.from_dict(d))
    lio.write_dataset(data, args.out)
    return EXIT_OK


def cmd_check(args):
    data = lio.parse_dataset(args.data)
    arch = "multiscale" if args.multiscale else "linear"
    rep = condition_report(data.X, data.S(args.agg), data.idx, args.max_depth, arch, data.Y)
    _emit(rep, args.out)
    return EXIT_OK if rep.graph_condition_holds() else EXIT_FAIL


def cmd_init(args):
    data = lio.parse_dataset(args.data)
    p = init_params(args.arch, args.depth, data.X.shape[0], args.hidden, data.Y.shape[0],
                    args.scheme, args.seed, zero_skip_heads=args.zero_skip_heads)
    lio.write_params(p, args.out)
    return EXIT_OK


def _run_config(path):
    d = _load_json(path)
    extra = set(d) - {"aggregation", "model", "train"}
    if extra:
        raise lio.ParseError(path, 0, f"unknown keys {sorted(extra)}")
    return d.get("aggregation", "gcn"), d.get("model", {}), TrainConfig.from_dict(d.get("train", {}))


def cmd_train(args):
    data = lio.parse_dataset(args.data)
    agg, model, cfg = _run_config(args.config)
    if args.params:
        params = lio.read_params(args.params)
    else:
        params = init_params(model.get("arch", "linear"), int(model.get("depth", 2)), data.X.shape[0],
                             model.get("hidden", 16), data.Y.shape[0], model.get("init", "uniform_fan_in"),
                             int(model.get("seed", cfg.seed)),
                             zero_skip_heads=bool(model.get("zero_skip_heads", False)))
    if args.snapshots and not cfg.snapshot_params:
        cfg = TrainConfig.from_dict({**cfg.to_dict(), "snapshot_params": True})
    final, traj = train(params, data.X, data.S(agg), data.idx, data.Y, cfg)
    lio.write_report(lio.trajectory_table(traj), args.out, "csv")
    if args.snapshots:
        lio.write_snapshots(traj, args.snapshots, {"aggregation": agg, "loss": cfg.loss.value,
                                                   "steps": cfg.steps})
    if args.final_params:
        lio.write_params(final, args.final_params)
    return EXIT_OK if traj.status == "ok" else EXIT_FAIL


def cmd_verify(args):
    data = lio.parse_dataset(args.data)
    traj, meta = lio.read_snapshots(args.traj_snapshots)
    agg = args.agg or meta.get("aggregation", "gcn")
    S = data.S(agg)
    case = BoundCase.parse(args.case)
    problem = GraphProblem(data.X, S, data.idx, data.Y)
    cols = ["step", "t", "loss", "lhs", "rhs", "satisfied"]
    if args.pointwise is None:
        rows = convergence_bound_trace(traj, data.X, S, data.idx, data.Y, case, problem=problem)
        table = lio.Table(cols, [[r.step, r.t, r.loss, r.lhs, r.rhs, r.satisfied] for r in rows])
        ok = all(r.satisfied for r in rows)
    else:
        cps = traj.checkpoints
        k = max(1, min(args.pointwise, len(cps)))
        picks = sorted(set(np.linspace(0, len(cps) - 1, k).round().astype(int).tolist()))
        out, ok = [], True
        for i in picks:
            cp = cps[i]
            r = differential_inequality_check(cp.params, data.X, S, data.idx, data.Y, case, problem=problem)
            if not r.premise_holds:
                raise LinGNNError(f"premise of {case} does not hold on this data")
            ok &= bool(r.satisfied)
            out.append([cp.step, cp.t, r.loss, r.lhs, r.rhs, r.satisfied])
        table = lio.Table(cols, out)
    _emit(table, args.out, "csv")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_decompose(args):
    data = lio.parse_dataset(args.data)
    params = lio.read_params(args.params)
    S = data.S(args.agg)
    rg = evaluate(params, data.X, S, data.idx, data.Y, LossKind(args.loss))
    terms = loss_reduction_decomposition(params, data.X, S, data.idx, rg)
    d = terms.to_dict(include_vectors=False)
    d["loss"] = rg.loss
    _emit(d, args.out)
    return EXIT_OK


def cmd_compare_skip(args):
    data = lio.parse_dataset(args.data)
    params = lio.read_params(args.params)
    S = data.S(args.agg)
    if args.project:
        params = project_skip_heads(params, data.X, S, data.idx)
    rep = skip_acceleration_check(params, data.X, S, data.idx, data.Y, LossKind(args.loss))
    _emit(rep, args.out)
    return EXIT_OK if rep.implication_holds else EXIT_FAIL


def cmd_experiment(args):
    d = _load_json(args.spec)
    if args.seed is not None:
        d.setdefault("synthetic", {})["seed"] = args.seed
    rep = run_experiment(ExperimentSpec.from_dict(d))
    lio.write_report(lio.Table(rep.columns, rep.rows), args.out, "csv")
    if args.summary:
        lio.write_report({"family": rep.family, "cells": rep.summaries()}, args.summary, "json")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lingnn", description=__doc__.splitlines()[0])
    ap.add_argument("--log-level", default="WARNING")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a synthetic dataset directory")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("check", help="graph condition and global minima per depth")
    p.add_argument("--data", required=True)
    p.add_argument("--agg", choices=["gcn", "gin"], default="gcn")
    p.add_argument("--max-depth", type=int, required=True)
    p.add_argument("--multiscale", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("init", help="write initial parameters")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", default="linear",
                   choices=["linear", "multiscale", "relu", "multiscale_relu"])
    p.add_argument("--depth", type=int, required=True)
    p.add_argument("--hidden", type=int, default=16)
    p.add_argument("--scheme", default="uniform_fan_in")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zero-skip-heads", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("train", help="train and write the trajectory CSV")
    p.add_argument("--data", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--params")
    p.add_argument("--out", required=True)
    p.add_argument("--snapshots")
    p.add_argument("--final-params")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="integrated bound trace or pointwise differential checks")
    p.add_argument("--data", required=True)
    p.add_argument("--traj-snapshots", required=True)
    p.add_argument("--case", required=True, help="thm6 | thm1i | thm1ii:H' | thm1iii:l,l'")
    p.add_argument("--pointwise", type=int, metavar="N")
    p.add_argument("--agg", choices=["gcn", "gin"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("decompose", help="loss-reduction terms at given parameters")
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--loss", choices=["sq", "ce", "squared", "cross_entropy"], default="sq")
    p.add_argument("--agg", choices=["gcn", "gin"], default="gcn")
    p.add_argument("--out")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("compare-skip", help="multiscale vs. plain loss reduction")
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--loss", choices=["sq", "ce", "squared", "cross_entropy"], default="sq")
    p.add_argument("--agg", choices=["gcn", "gin"], default="gcn")
    p.add_argument("--project", action="store_true",
                   help="project skip heads so both models share outputs")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare_skip)

    p = sub.add_parser("experiment", help="run an experiment family")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--summary")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LinGNNError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
