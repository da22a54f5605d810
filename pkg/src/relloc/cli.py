"""Command-line entry points.

    relloc simulate    [--config FILE] [--seed N] [--trials N] [--sigma S,...] [--space L,...]
                       [--algs A,...] [--window K] [--out-dir DIR] [--threads N]
    relloc nde train   [--config FILE] [--seed N] [--out-dir DIR] [--model PATH]
    relloc nde eval    --model PATH [--config FILE] [--seed N] [--out-dir DIR]
    relloc robust-demo [--config FILE] [--seed N] [--trials N] [--out-dir DIR]

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
RELLOC_THREADS overrides --threads.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .config import benchmark_config, config_hash, load_document, load_experiment, merge, robust_config
from .errors import ConfigError, RellocError

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------- output helpers

def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    tmp.replace(path)


def _fmt(v):
    if isinstance(v, float):
        return repr(float(v))
    return v


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclasses.dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    version: str
    started: str
    outputs: list
    config: dict
    finished: Optional[str] = None
    status: str = "running"

    def write(self, out_dir: Path) -> None:
        _atomic_write(out_dir / "manifest.json", json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True, default=str) + "\n")


def _threads(flag: Optional[int]) -> int:
    env = os.environ.get("RELLOC_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"RELLOC_THREADS must be an integer, got {env!r}")
    elif flag is not None:
        n = flag
    else:
        n = os.cpu_count() or 1
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    return n


def _floats(text: Optional[str]):
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}")


def _out_dir(path: str) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {p}: {exc}")
    return p


# ---------------------------------------------------------------- simulate

def cmd_simulate(args) -> int:
    from .simulator.montecarlo import aggregate, run_monte_carlo

    overrides = {"seed": args.seed, "trials": args.trials, "sigmas": _floats(args.sigma),
                 "spaces": _floats(args.space), "algorithms": args.algs}
    if args.window is not None:
        overrides["window"] = {"window": args.window}
    cfg, doc = load_experiment(args.config, overrides)
    workers = _threads(args.threads)
    cfg = dataclasses.replace(cfg, workers=workers)
    out = _out_dir(args.out_dir)
    names = ["manifest.json", "summary.csv", "timings.csv", "trials.jsonl"]
    man = RunManifest("simulate", config_hash(doc), cfg.seed, __version__, _now(), [str(out / n) for n in names], doc)
    man.write(out)
    t0 = time.perf_counter()
    try:
        results = run_monte_carlo(cfg, progress=_progress(args.quiet))
    except Exception as exc:  # noqa: BLE001 - any crash leaves a partial marker
        _atomic_write(out / "PARTIAL", f"{type(exc).__name__}: {exc}\n")
        man.status, man.finished = "failed", _now()
        man.write(out)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    summ = aggregate(results, cfg.algorithms)
    _write_csv(out / "summary.csv", ["sigma", "space", "algorithm", "trials", "failures", "mean_rmse", "var_rmse"],
               [(s.sigma, s.space, s.algorithm, s.trials, s.failures, s.mean_rmse, s.var_rmse) for s in summ])
    _write_csv(out / "timings.csv", ["sigma", "space", "algorithm", "mean_seconds"],
               [(s.sigma, s.space, s.algorithm, s.mean_seconds) for s in summ])
    lines = []
    for r in results:
        rec = r.to_record()
        rec.pop("seconds")
        lines.append(json.dumps(rec, sort_keys=True))
    _atomic_write(out / "trials.jsonl", "\n".join(lines) + "\n")
    _print_table(summ)
    man.status, man.finished = "ok", _now()
    man.write(out)
    if not args.quiet:
        print(f"{len(results)} results in {time.perf_counter() - t0:.1f}s -> {out}")
    return EXIT_OK


def _progress(quiet: bool):
    if quiet:
        return None

    def cb(n, total):
        if n == total or n % max(1, total // 20) == 0:
            print(f"  {n}/{total} trials", file=sys.stderr, flush=True)
    return cb


def _print_table(summ) -> None:
    print(f"{'sigma':>8} {'space':>6} {'algorithm':<16} {'mean':>10} {'var':>10} {'fail':>5}")
    for s in summ:
        print(f"{s.sigma:>8g} {s.space:>6g} {s.algorithm:<16} {s.mean_rmse:>10.4f} {s.var_rmse:>10.4f} {s.failures:>5d}")


# ---------------------------------------------------------------- nde

def _nde_doc(args) -> dict:
    doc = load_document(args.config) if args.config else {}
    return merge(doc, {"seed": args.seed})


def cmd_nde(args) -> int:
    from .nde import MdnModel
    from .simulator.nde_benchmark import (BenchmarkProblem, learning_curve, marginal_grid, run_benchmark,
                                          fit_benchmark_mdn, training_pairs)
    import numpy as np

    doc = _nde_doc(args)
    cfg = benchmark_config(doc)
    out = _out_dir(args.out_dir)
    if args.sub == "train":
        model_path = Path(args.model) if args.model else out / "nde_model.bin"
        names = [model_path, out / "training_curve.csv", out / "sample_curve.csv"]
        man = RunManifest("nde train", config_hash(doc), cfg.seed, __version__, _now(), [str(n) for n in names], doc)
        man.write(out)
        prob = BenchmarkProblem.random(cfg.seed, cfg.space)
        r_train, r_curve, _, _ = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(4))
        model = fit_benchmark_mdn(*training_pairs(prob, cfg.samples, r_train), cfg.mdn)
        try:
            model_path.parent.mkdir(parents=True, exist_ok=True)
            model.save(model_path, extra={"benchmark_seed": cfg.seed, "samples": cfg.samples})
        except OSError as exc:
            raise ConfigError(f"cannot write model {model_path}: {exc}")
        h = model.history
        _write_csv(out / "training_curve.csv", ["epoch", "train_nll", "val_nll"],
                   [(e + 1, float(a), float(b)) for e, (a, b) in enumerate(zip(h["train"], h["val"]))])
        curve = learning_curve(prob, cfg.curve_sizes, cfg.mdn, r_curve, cfg.test_size)
        _write_csv(out / "sample_curve.csv", ["samples", "heldout_nll"], curve)
        man.status, man.finished = "ok", _now()
        man.write(out)
        print(f"model -> {model_path}; best val NLL {min(h['val']):.4f} after {len(h['val'])} epochs")
        return EXIT_OK
    # eval
    if not args.model:
        raise UsageError("nde eval needs --model")
    path = Path(args.model)
    if not path.is_file():
        raise UsageError(f"model file {path} does not exist")
    try:
        model, _ = MdnModel.load(path)
    except (ValueError, OSError) as exc:
        raise UsageError(f"cannot load model {path}: {exc}")
    names = [out / "marginals.csv", out / "tv.csv"]
    man = RunManifest("nde eval", config_hash(doc), cfg.seed, __version__, _now(), [str(n) for n in names], doc)
    man.write(out)
    res = run_benchmark(cfg, model=model, with_curve=False)
    lo = np.minimum(res.oracle.min(0), res.learned.min(0))
    hi = np.maximum(res.oracle.max(0), res.learned.max(0))
    learned = marginal_grid(res.learned, cfg.bins, lo, hi)
    oracle = marginal_grid(res.oracle, cfg.bins, lo, hi)
    _write_csv(out / "marginals.csv", ["component", "x", "learned_density", "oracle_density"],
               [(c, x, a, b) for (c, x, a), (_, _, b) in zip(learned, oracle)])
    _write_csv(out / "tv.csv", ["component", "tv_distance", "mode_in_oracle_68"],
               [(c, float(t), bool(m)) for c, (t, m) in enumerate(zip(res.tv, res.mode_in_68))])
    man.status, man.finished = "ok", _now()
    man.write(out)
    print("TV per marginal: " + " ".join(f"{t:.4f}" for t in res.tv))
    return EXIT_OK


# ---------------------------------------------------------------- robust-demo

def cmd_robust_demo(args) -> int:
    from .simulator.experiments import failure_demo, outlier_demo

    doc = load_document(args.config) if args.config else {}
    doc = merge(doc, {"seed": args.seed, "trials": args.trials})
    cfg = robust_config(doc)
    out = _out_dir(args.out_dir)
    names = ["outliers.csv", "outlier_rows.csv", "failures.jsonl"]
    man = RunManifest("robust-demo", config_hash(doc), cfg.seed, __version__, _now(), [str(out / n) for n in names], doc)
    man.write(out)
    od = outlier_demo(cfg)
    _write_csv(out / "outliers.csv", ["trials", "spike_sigmas", "mode", "detection_rate", "false_positive_rate"],
               [(od.trials, cfg.spike, cfg.mode, od.detection_rate, od.false_positive_rate)])
    _write_csv(out / "outlier_rows.csv", ["trial", "edge", "residual", "threshold", "classification", "injected"], od.rows)
    print(f"outliers: detection {od.detection_rate:.3f}, false positives {od.false_positive_rate:.4f}")
    scenarios = [("angle", (1,)), ("range", (2,)), ("disp", (1,)), ("angle", (1, 2))]
    lines, unexpected = [], []
    for kind, robots in scenarios:
        fd = failure_demo(kind, robots, cfg)
        for k, failed, anomalous, flags in fd.log:
            lines.append(json.dumps({"scenario": f"{kind}:{','.join(map(str, robots))}", "k": k, "failed": failed,
                                     "anomalous": anomalous, "flags": flags}, sort_keys=True))
        verdict = "inoperable" if fd.inoperable else "operable"
        tag = "expected" if fd.as_expected else "UNEXPECTED"
        print(f"failure {kind} robots={list(robots)}: {verdict} ({tag}) {fd.reason}")
        if not fd.as_expected:
            unexpected.append(kind)
    _atomic_write(out / "failures.jsonl", "\n".join(lines) + "\n")
    man.status, man.finished = ("failed" if unexpected else "ok"), _now()
    man.write(out)
    return EXIT_RUNTIME if unexpected else EXIT_OK


# ---------------------------------------------------------------- entry

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="relloc", description="Relative localization experiments")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    def common(sp):
        sp.add_argument("--config", help="TOML or JSON experiment file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir", default="results")
        sp.add_argument("--quiet", action="store_true")

    s = sub.add_parser("simulate", help="Monte Carlo experiments")
    common(s)
    s.add_argument("--trials", type=int)
    s.add_argument("--sigma", help="comma-separated noise levels")
    s.add_argument("--space", help="comma-separated cube edge lengths")
    s.add_argument("--algs", help="comma-separated algorithm names")
    s.add_argument("--window", type=int)
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_simulate)

    n = sub.add_parser("nde", help="train or evaluate the density-estimation benchmark")
    n.add_argument("sub", choices=("train", "eval"))
    common(n)
    n.add_argument("--model", help="model file to write (train) or read (eval)")
    n.set_defaults(func=cmd_nde)

    r = sub.add_parser("robust-demo", help="outlier injection and sensor-failure scenarios")
    common(r)
    r.add_argument("--trials", type=int)
    r.set_defaults(func=cmd_robust_demo)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RellocError, OSError, ArithmeticError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
