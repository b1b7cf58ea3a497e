"""Command-line entry point for the corpus/train/predict/evaluate pipeline.

Subcommands: generate, stats, train, predict, evaluate, textbook,
fd-check.  Config files are JSON mirroring the dataclass field names;
every subcommand honors --seed and fails with a one-line
machine-parseable ``error:<category>: message`` on stderr, removing any
partially written outputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    DatasetManifest,
    dataset_stats,
    generate_dataset,
    load_equation_list,
    textbook_testset,
    write_stats,
)
from .evalbench import (
    EvalConfig,
    ModelPredictor,
    OraclePredictor,
    emit_report,
    run_benchmark,
)
from .expr import ParseError, parse_infix, to_infix, to_prefix
from .model import (
    DESK_ARCH,
    PAPER_ARCH,
    Candidate,
    TrainConfig,
    init_model,
    load_model,
    predict_candidates,
    save_model,
    train,
)
from .codec import DEFAULT_VOCAB
from .sampler import GenerationConfig, GenerationError
from .solver import SolveConfig, fd_weights, integrate, quality_check


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _read_json(path: str | None, what: str) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliError("config-error", f"{what} file not found: {path}")
    except json.JSONDecodeError as exc:
        raise CliError("config-error", f"{what} is not valid JSON: {exc}")


def _fresh_output(path: Path) -> bool:
    """True when this run creates the path (so failure should remove it)."""
    return not path.exists()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _cmd_generate(args) -> int:
    cfg = _read_json(args.config, "generation config")
    try:
        gen_cfg = GenerationConfig.from_json_dict(cfg.get("generation", {}))
        solve_cfg = SolveConfig.from_json_dict(cfg.get("solve", {}))
    except (ValueError, KeyError) as exc:
        raise CliError("config-error", str(exc))
    n_skeletons = args.n_skeletons or int(cfg.get("n_skeletons", 50))
    out = Path(args.out)
    created = _fresh_output(out)
    try:
        manifest = generate_dataset(
            gen_cfg, solve_cfg, n_skeletons, args.seed, out, threads=args.threads
        )
    except GenerationError as exc:
        if created and out.exists():
            shutil.rmtree(out)
        raise CliError("generation-error", str(exc))
    print(json.dumps(manifest.counts, sort_keys=True))
    return 0


def _cmd_stats(args) -> int:
    try:
        manifest = DatasetManifest.load(args.data)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise CliError("io-error", f"cannot load dataset {args.data}: {exc}")
    stats = dataset_stats(manifest)
    write_stats(stats, args.out or args.data)
    print(json.dumps({k: stats[k] for k in ("n_records", "complexity_hist", "operator_totals")},
                     sort_keys=True))
    return 0


def _cmd_train(args) -> int:
    try:
        manifest = DatasetManifest.load(args.data)
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise CliError("io-error", f"cannot load dataset {args.data}: {exc}")
    try:
        train_cfg = TrainConfig.from_json_dict(_read_json(args.train_config, "train config"))
    except ValueError as exc:
        raise CliError("config-error", str(exc))
    if args.seed is not None:
        train_cfg.seed = args.seed
    arch = {"desk": DESK_ARCH, "paper": PAPER_ARCH}[args.arch]
    model = init_model(arch, DEFAULT_VOCAB, seed=train_cfg.seed)
    out = Path(args.out)
    created = _fresh_output(out)
    try:
        result = train(model, manifest, train_cfg, log_path=args.log)
        save_model(out, model, meta={
            "train_config": train_cfg.to_json_dict(),
            "final_token_acc": result["final_token_acc"],
            "steps": result["steps"],
            "symode_version": __version__,
        })
    except (RuntimeError, ValueError) as exc:
        if created and out.exists():
            out.unlink()
        raise CliError("model-error", str(exc))
    print(json.dumps({"steps": result["steps"],
                      "final_token_acc": result["final_token_acc"]}, sort_keys=True))
    return 0


def _read_trajectory_csv(path: str) -> tuple[np.ndarray, np.ndarray]:
    times, values = [], []
    header_allowed = True
    try:
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or not row[0].strip():
                    continue
                try:
                    t, y = float(row[0]), float(row[1])
                except (ValueError, IndexError):
                    if header_allowed:  # tolerate a single header line
                        header_allowed = False
                        continue
                    raise CliError("parse-error", f"bad trajectory row: {row!r}")
                header_allowed = False
                times.append(t)
                values.append(y)
    except OSError as exc:
        raise CliError("io-error", f"cannot read trajectory {path}: {exc}")
    if len(times) < 2:
        raise CliError("parse-error", "trajectory needs at least 2 points")
    return np.array(times), np.array(values)


def _cmd_predict(args) -> int:
    times, values = _read_trajectory_csv(args.traj)
    if args.oracle_expr is not None:
        try:
            e = parse_infix(args.oracle_expr)
        except ParseError as exc:
            raise CliError("parse-error", f"bad oracle expression: {exc}")
        candidates = [Candidate(tokens=to_prefix(e), score=0.0, log_prob=0.0,
                                terminated=True, expr=e)]
    else:
        if args.model is None:
            raise CliError("usage-error", "predict needs --model or --oracle-expr")
        try:
            model, _meta = load_model(args.model)
        except OSError as exc:
            raise CliError("io-error", f"cannot load model {args.model}: {exc}")
        candidates = predict_candidates(model, times, values, width=args.beams)
    shown = 0
    for cand in candidates:
        if cand.expr is None:
            continue
        print(f"{to_infix(cand.expr)}\t{cand.score:.6f}")
        shown += 1
    if shown == 0:
        raise CliError("model-error", "no parseable candidate")
    return 0


def _load_testset(spec: str) -> DatasetManifest:
    if spec == "textbook":
        return textbook_testset()
    path = Path(spec)
    if path.is_dir():
        try:
            return DatasetManifest.load(path)
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise CliError("io-error", f"cannot load dataset {spec}: {exc}")
    if path.is_file():
        try:
            return load_equation_list(path)
        except ValueError as exc:
            raise CliError("parse-error", str(exc))
        except OSError as exc:
            raise CliError("io-error", str(exc))
    raise CliError("usage-error", f"testset {spec!r} is neither 'textbook', a directory, nor a file")


def _cmd_evaluate(args) -> int:
    testset = _load_testset(args.testset)
    try:
        eval_cfg = EvalConfig.from_json_dict(_read_json(args.eval_config, "eval config"))
    except ValueError as exc:
        raise CliError("config-error", str(exc))
    if args.oracle:
        predictor = OraclePredictor()
    else:
        if args.model is None:
            raise CliError("usage-error", "evaluate needs --model or --oracle")
        try:
            model, _meta = load_model(args.model)
        except OSError as exc:
            raise CliError("io-error", f"cannot load model {args.model}: {exc}")
        import torch

        torch.set_num_threads(args.threads)
        predictor = ModelPredictor(model, width=args.beams or eval_cfg.beam_width,
                                   max_len=eval_cfg.max_len)
    report = run_benchmark(predictor, testset, eval_cfg, seed=args.seed)
    out = Path(args.out)
    created = _fresh_output(out)
    try:
        emit_report(report, out)
    except OSError as exc:
        if created and out.exists():
            shutil.rmtree(out)
        raise CliError("io-error", str(exc))
    medians = {k: v["median_r2"] for k, v in report.aggregates().items()}
    print(json.dumps({"cases": report.n_cases, "median_r2": medians}, sort_keys=True))
    return 0


def _cmd_textbook(args) -> int:
    manifest = textbook_testset()
    out = Path(args.out)
    created = _fresh_output(out)
    try:
        manifest.save(out)
    except OSError as exc:
        if created and out.exists():
            shutil.rmtree(out)
        raise CliError("io-error", str(exc))
    print(json.dumps({"records": len(manifest.records), "out": str(out)}, sort_keys=True))
    return 0


def _cmd_fd_check(args) -> int:
    weights = fd_weights(tuple(range(-4, 5)), 1)
    print("9-point central first-derivative weights (unit spacing):")
    print("  " + " ".join(f"{w:+.12g}" for w in weights))
    cfg = SolveConfig()
    e = parse_infix("0.1*y")
    traj = integrate(e, 4.9, (0.0, cfg.t_end), cfg.n_grid, cfg)
    ok, err = quality_check(traj, e, cfg.qc_threshold)
    print(f"QC on y' = 0.1*y from 4.9: status={traj.status} max_error={err:.3e} pass={ok}")
    spiked = traj.values.copy()
    spiked[len(spiked) // 2] += 10.0
    traj.values = spiked
    bad_ok, bad_err = quality_check(traj, e, cfg.qc_threshold)
    print(f"QC with +10 spike injected: max_error={bad_err:.3e} pass={bad_ok}")
    if not ok or bad_ok:
        raise CliError("self-test", "finite-difference QC self-test failed")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symode",
        description="Generate symbolic ODE corpora, train the trajectory-to-equation "
                    "model, and benchmark predictions.",
    )
    parser.add_argument("--version", action="version", version=f"symode {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample, solve, and store a corpus")
    p.add_argument("--config", help="JSON with 'generation', 'solve', 'n_skeletons'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--n-skeletons", type=int, default=None)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("stats", help="complexity/operator statistics of a dataset")
    p.add_argument("data")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("train", help="train a model on a generated dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--arch", choices=("desk", "paper"), default="desk")
    p.add_argument("--train-config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None, help="write step,loss,token_acc CSV here")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="decode equations for one trajectory CSV")
    p.add_argument("--model", default=None)
    p.add_argument("--oracle-expr", default=None,
                   help="skip the model and emit this infix expression")
    p.add_argument("--traj", required=True, help="two-column CSV of (t, y)")
    p.add_argument("--beams", type=int, default=32)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="run the benchmark protocol over a test set")
    p.add_argument("--model", default=None)
    p.add_argument("--oracle", action="store_true",
                   help="substitute each record's own expression for the model")
    p.add_argument("--testset", required=True, help="'textbook', a dataset dir, or a list file")
    p.add_argument("--eval-config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beams", type=int, default=None)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("textbook", help="write the built-in curated test set")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_textbook)

    p = sub.add_parser("fd-check", help="print stencil weights and run the QC self-test")
    p.set_defaults(func=_cmd_fd_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
