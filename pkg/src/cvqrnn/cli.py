"""Command-line harness: generate data, train, sweep and forecast.

Exit status is 0 on success, 2 on configuration or input-format errors
and 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .baseline import LSTMModel, RepeatLastModel, lstm_param_count, match_hidden_size
from .channels import DataNoiseSpec, LossSpec, add_data_noise
from .datasets import generate_series, load_mnist, write_series_csv
from .errors import FormatError, NumericalFailure, NumericalInconsistency
from .qrnn import QRNNConfig, QRNNModel
from .training import CostSpec, TrainConfig, evaluate_split, train

logger = logging.getLogger("cvqrnn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

DATASETS = ("bessel", "sine", "two-sine", "triangle", "damped-cosine", "mnist")
MODELS = ("qrnn", "lstm", "repeat-last")
SWEEP_VARIABLES = {"window": "window", "window_T": "window", "beta": "beta", "channel_beta": "beta",
                   "epsilon": "epsilon", "data_epsilon": "epsilon"}

METRICS_HEADER = ["epoch", "train_cost", "test_cost", "accuracy", "wall_seconds"]
PREDICTIONS_HEADER = ["x", "target", "prediction", "phase"]


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


@dataclass
class RunManifest:
    """Everything needed to rebuild a run: resolved options plus results."""

    options: dict
    model: str
    param_counts: dict
    metrics: list = field(default_factory=list)
    initial_params: list = field(default_factory=list)
    final_params: list = field(default_factory=list)
    class_counts: Optional[dict] = None
    warnings: list = field(default_factory=list)
    loss_placement: Optional[str] = None
    started: str = ""
    finished: str = ""
    version: str = __version__

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        try:
            data = json.loads(text)
            return cls(**data)
        except (json.JSONDecodeError, TypeError) as exc:
            raise FormatError(f"corrupt run manifest: {exc}") from exc

    @classmethod
    def load(cls, run_dir) -> "RunManifest":
        path = Path(run_dir) / "manifest.json"
        if not path.is_file():
            raise FormatError(f"no manifest.json in {run_dir}")
        return cls.from_json(path.read_text(encoding="utf-8"))


# -- building runs from options ------------------------------------------------


def parse_qumodes(text: str) -> tuple[int, int]:
    try:
        n1, n2 = (int(p) for p in text.split("+"))
    except ValueError as exc:
        raise ValueError(f"--qumodes must look like N1+N2, got {text!r}") from exc
    return n1, n2


def resolve_options(args: argparse.Namespace) -> dict:
    """Validate flags and fill dataset-dependent defaults."""
    opts = {k: getattr(args, k) for k in (
        "model", "dataset", "qumodes", "cutoff", "window", "epochs", "lr", "batch", "eta", "seed",
        "mnist_images", "mnist_labels", "n_images", "points", "beta", "epsilon", "headroom",
        "fd_step", "horizon",
    )}
    mnist = opts["dataset"] == "mnist"
    if mnist and not (opts["mnist_images"] and opts["mnist_labels"]):
        raise ValueError("the mnist dataset needs both --mnist-images and --mnist-labels")
    if mnist and opts["model"] == "repeat-last":
        raise ValueError("the repeat-last model only applies to series datasets")
    if opts["model"] != "qrnn" and opts["beta"]:
        raise ValueError("--beta applies to the quantum model only")
    if mnist and opts["epsilon"]:
        raise ValueError("--epsilon applies to series datasets only")
    if not 0.0 <= opts["beta"] <= 1.0:
        raise ValueError("--beta must lie in [0, 1]")
    if opts["epsilon"] < 0:
        raise ValueError("--epsilon must be non-negative")
    if opts["lr"] is None:
        opts["lr"] = 0.005 if mnist else 0.01
    if opts["epochs"] is None:
        opts["epochs"] = 25 if mnist else 50
    for key in ("mnist_images", "mnist_labels"):
        if opts[key]:
            opts[key] = str(Path(opts[key]).resolve())
    parse_qumodes(opts["qumodes"])
    return opts


def build_data(opts: dict):
    if opts["dataset"] == "mnist":
        return load_mnist(opts["mnist_images"], opts["mnist_labels"], opts["n_images"])
    ds = generate_series(opts["dataset"].replace("-", "_"), opts["points"], window=opts["window"])
    if opts["epsilon"]:
        ds = ds.with_values(add_data_noise(ds.values, DataNoiseSpec(opts["epsilon"], opts["seed"])))
    return ds


def build_model(opts: dict):
    head = "sigmoid" if opts["dataset"] == "mnist" else "linear"
    if opts["model"] == "repeat-last":
        return RepeatLastModel()
    n1, n2 = parse_qumodes(opts["qumodes"])
    config = QRNNConfig(
        n1=n1, n2=n2, cutoff=opts["cutoff"], window=opts["window"], headroom=opts["headroom"],
        loss=LossSpec(opts["beta"]) if opts["beta"] else None,
    )
    if opts["model"] == "qrnn":
        return QRNNModel(config, head=head)
    return LSTMModel(match_hidden_size(config.n_params), head=head)


def _param_counts(model, opts) -> dict:
    n1, n2 = parse_qumodes(opts["qumodes"])
    counts = {"model": int(model.n_params), "quantum": QRNNConfig(n1=n1, n2=n2).n_params}
    if isinstance(model, LSTMModel):
        counts["lstm_hidden"] = model.hidden
    else:
        d = match_hidden_size(counts["quantum"])
        counts["lstm_hidden"] = d
    counts["lstm"] = lstm_param_count(counts["lstm_hidden"])
    return counts


def _cost(opts) -> CostSpec:
    return CostSpec("bce" if opts["dataset"] == "mnist" else "mse", opts["eta"])


def prediction_rows(model, params, data, opts) -> list:
    """Rows (x, target, prediction, phase) for both splits and the forecast phase."""
    rows = []
    mnist = opts["dataset"] == "mnist"
    for phase in ("train", "test"):
        inputs = getattr(data, f"{phase}_inputs")
        targets = getattr(data, f"{phase}_targets")
        preds, _ = model.evaluate(np.asarray(params)[None], inputs)
        xs = np.arange(len(targets)) if mnist else getattr(data, f"{phase}_target_x")
        rows += [[_fmt(x), _fmt(t), _fmt(p), phase] for x, t, p in zip(xs, targets, preds[0])]
    if mnist:
        return rows
    test_x, test_v = data.xs[data.split :], data.values[data.split :]
    T = opts["window"]
    horizon = len(test_v) - T if opts["horizon"] is None else opts["horizon"]
    horizon = min(horizon, len(test_v) - T)
    if horizon > 0:
        seed = test_v[None, :T]
        first, _ = model.evaluate(np.asarray(params)[None], seed)
        rest = model.forecast(np.asarray(params), seed, horizon - 1)[0] if horizon > 1 else []
        preds = np.concatenate([first[0], rest])
        rows += [[_fmt(test_x[T + j]), _fmt(test_v[T + j]), _fmt(p), "forecast"] for j, p in enumerate(preds)]
    return rows


def run_train(opts: dict, out_dir, wall_time: bool = False) -> RunManifest:
    """Train one model and write manifest.json, metrics.csv and predictions.csv."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat()
    data = build_data(opts)
    model = build_model(opts)
    cost = _cost(opts)
    cfg = TrainConfig(lr=opts["lr"], batch_size=opts["batch"], epochs=opts["epochs"], seed=opts["seed"],
                      fd_step=opts["fd_step"])
    manifest = RunManifest(
        options=dict(opts), model=opts["model"], param_counts=_param_counts(model, opts), started=started,
        loss_placement="after the layer unitary, before measurement, all modes" if opts["beta"] else None,
    )
    if hasattr(data, "class_counts"):
        manifest.class_counts = data.class_counts
        manifest.warnings = list(data.warnings)

    if isinstance(model, RepeatLastModel):
        params = model.init_params(None)
        init = params
        t0 = time.perf_counter()
        tr, _, _ = evaluate_split(model, params, data.train_inputs, data.train_targets, cost)
        te, _, _ = evaluate_split(model, params, data.test_inputs, data.test_targets, cost)
        metrics = [dict(epoch=0, train_cost=tr, test_cost=te, accuracy=None,
                        wall_seconds=time.perf_counter() - t0)]
    else:
        result = train(model, data, cost, cfg)
        params, init = result.params, result.initial_params
        metrics = [asdict(m) for m in result.metrics]

    manifest.metrics = metrics
    manifest.initial_params = [float(v) for v in init]
    manifest.final_params = [float(v) for v in params]
    rows = [
        [str(m["epoch"]), _fmt(m["train_cost"]), _fmt(m["test_cost"]), _fmt(m["accuracy"]),
         _fmt(m["wall_seconds"]) if wall_time else ""]
        for m in metrics
    ]
    _write_csv(out / "metrics.csv", METRICS_HEADER, rows)
    _write_csv(out / "predictions.csv", PREDICTIONS_HEADER, prediction_rows(model, params, data, opts))
    manifest.finished = datetime.now(timezone.utc).isoformat()
    (out / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    return manifest


def run_forecast(run_dir, out_dir=None, horizon=None) -> Path:
    """Rebuild the model of a finished run and rewrite predictions.csv from its final parameters."""
    manifest = RunManifest.load(run_dir)
    opts = dict(manifest.options)
    if horizon is not None:
        opts["horizon"] = horizon
    try:
        data, model = build_data(opts), build_model(opts)
        params = np.asarray(manifest.final_params, dtype=float)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"manifest options are incomplete: {exc}") from exc
    if params.shape != (model.n_params,):
        raise FormatError("manifest parameters do not match the model")
    out = Path(out_dir or run_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "predictions.csv"
    _write_csv(path, PREDICTIONS_HEADER, prediction_rows(model, params, data, opts))
    return path


# -- sweeps --------------------------------------------------------------------


def derived_seed(base: int, value_index: int, repeat: int) -> int:
    """Sub-run seed: first word of numpy's SeedSequence over (base, value index, repeat)."""
    return int(np.random.SeedSequence([base, value_index, repeat]).generate_state(1)[0])


def _sweep_job(job):
    opts, out_dir, wall_time = job
    try:
        m = run_train(opts, out_dir, wall_time)
        last = m.metrics[-1] if m.metrics else None
        return {"train": last and last["train_cost"], "test": last and last["test_cost"], "error": None}
    except (ValueError, ArithmeticError, FormatError) as exc:
        return {"train": None, "test": None, "error": f"{type(exc).__name__}: {exc}"}


def run_sweep(opts: dict, variable: str, values, repeats: int, out_dir, jobs: int = 1, wall_time=False):
    """Train one sub-run per (value, repeat) and write aggregate.csv and summary.csv."""
    key = SWEEP_VARIABLES[variable]
    if not values:
        raise ValueError("a sweep needs at least one value")
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    cast = int if key == "window" else float
    values = [cast(v) for v in values]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plan = []
    for i, v in enumerate(values):
        for r in range(repeats):
            sub = dict(opts, **{key: v, "seed": derived_seed(opts["seed"], i, r)})
            resolve_check(sub)
            plan.append((i, v, r, (sub, str(out / f"{key}-{i:02d}" / f"repeat-{r}"), wall_time)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_job, [p[3] for p in plan]))
    else:
        results = [_sweep_job(p[3]) for p in plan]

    agg, failures = [], []
    for (i, v, r, job), res in zip(plan, results):
        agg.append([repr(v), str(r), _fmt(res["train"]), _fmt(res["test"])])
        if res["error"]:
            failures.append({"value": v, "repeat": r, "seed": job[0]["seed"], "error": res["error"]})
            logger.warning("sub-run %s=%s repeat %d failed: %s", key, v, r, res["error"])
    _write_csv(out / "aggregate.csv", ["value", "repeat", "final_train_cost", "final_test_cost"], agg)

    summary = []
    for i, v in enumerate(values):
        block = [res for (j, *_), res in zip(plan, results) if j == i and res["error"] is None]
        tr = np.array([b["train"] for b in block], dtype=float)
        te = np.array([b["test"] for b in block], dtype=float)
        stats = []
        for arr in (tr, te):
            stats += [_fmt(arr.mean()), _fmt(arr.min()), _fmt(arr.max())] if arr.size else ["", "", ""]
        summary.append([repr(v), *stats, str(len(block))])
    _write_csv(
        out / "summary.csv",
        ["value", "mean_final_train_cost", "min_final_train_cost", "max_final_train_cost",
         "mean_final_test_cost", "min_final_test_cost", "max_final_test_cost", "completed"],
        summary,
    )
    (out / "sweep.json").write_text(
        json.dumps({"variable": key, "values": values, "repeats": repeats, "base_options": opts,
                    "failures": failures, "seeds": [[i, r, job[0]["seed"]] for i, _, r, job in plan],
                    "version": __version__}, indent=2, sort_keys=True),
        encoding="utf-8",
    )
    return agg, summary, failures


def resolve_check(opts: dict):
    """Re-validate options after a sweep substitutes a value."""
    if opts["window"] < 2:
        raise ValueError("window must be at least 2")
    if not 0.0 <= opts["beta"] <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    if opts["model"] != "qrnn" and opts["beta"]:
        raise ValueError("beta sweeps apply to the quantum model only")
    if opts["epsilon"] < 0:
        raise ValueError("epsilon must be non-negative")


# -- argument parsing ----------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--model", choices=MODELS, default="qrnn")
    p.add_argument("--dataset", choices=DATASETS, default="bessel")
    p.add_argument("--qumodes", default="2+1", help="register+input modes, e.g. 2+1")
    p.add_argument("--cutoff", type=int, default=6)
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--epochs", type=int, default=None, help="default 50 (series) or 25 (mnist)")
    p.add_argument("--lr", type=float, default=None, help="default 0.01 (series) or 0.005 (mnist)")
    p.add_argument("--batch", type=int, default=7)
    p.add_argument("--eta", type=float, default=10.0, help="trace penalty weight")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mnist-images")
    p.add_argument("--mnist-labels")
    p.add_argument("--n-images", type=int, default=1000)
    p.add_argument("--points", type=int, default=200, help="series length")
    p.add_argument("--beta", type=float, default=0.0, help="photon loss per step")
    p.add_argument("--epsilon", type=float, default=0.0, help="uniform data noise amplitude")
    p.add_argument("--headroom", type=int, default=2, help="extra Fock levels while applying the layer")
    p.add_argument("--fd-step", type=float, default=1e-4)
    p.add_argument("--horizon", type=int, default=None, help="forecast steps (default: rest of test half)")
    p.add_argument("--wall-time", action="store_true", help="fill wall_seconds in metrics.csv")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvqrnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _add_run_flags(sub.add_parser("train", help="train one model"))

    sw = sub.add_parser("sweep", help="repeat training over a grid of one variable")
    _add_run_flags(sw)
    sw.add_argument("--variable", choices=sorted(SWEEP_VARIABLES), required=True)
    sw.add_argument("--values", nargs="+", required=True)
    sw.add_argument("--repeats", type=int, default=5)
    sw.add_argument("--jobs", type=int, default=1)

    fc = sub.add_parser("forecast", help="rewrite predictions of a finished run")
    fc.add_argument("--run", required=True, help="run directory holding manifest.json")
    fc.add_argument("--horizon", type=int, default=None)
    fc.add_argument("--out", default=None)

    rr = sub.add_parser("rerun", help="train again from the options stored in a run manifest")
    rr.add_argument("--run", required=True, help="run directory holding manifest.json")
    rr.add_argument("--out", required=True, help="output directory")
    rr.add_argument("--wall-time", action="store_true")

    gen = sub.add_parser("generate", help="write a synthetic series as CSV")
    gen.add_argument("--dataset", choices=DATASETS[:-1], default="bessel")
    gen.add_argument("--points", type=int, default=200)
    gen.add_argument("--out", required=True, help="CSV path")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "generate":
            write_series_csv(args.out, generate_series(args.dataset.replace("-", "_"), args.points))
        elif args.command == "forecast":
            run_forecast(args.run, args.out, args.horizon)
        elif args.command == "rerun":
            run_train(RunManifest.load(args.run).options, args.out, args.wall_time)
        elif args.command == "train":
            run_train(resolve_options(args), args.out, args.wall_time)
        else:
            run_sweep(resolve_options(args), args.variable, args.values, args.repeats, args.out,
                      args.jobs, args.wall_time)
    except (NumericalFailure, NumericalInconsistency) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK
