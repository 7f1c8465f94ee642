"""Command-line entry point: ``gaussreg <command> [flags]``.

Every command writes a JSON report that echoes its resolved configuration.
Exit status is 0 on success, 2 for bad input or data, 3 when training hits a
non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__, plots, rng
from .datasets import (
    Dataset,
    Standardizer,
    fit_standardizer,
    gen_constant_gaussian,
    gen_corrupted,
    gen_heteroscedastic,
    gen_series_with_anomalies,
    load_csv,
    load_series_csv,
    read_header,
    write_series_csv,
)
from .errors import DataError, DimensionError, ModelFormatError, NonFiniteError, NotFittedError, TrainingAbort
from .evaluation import evaluate, run_benchmark
from .network import Network, NetworkSpec
from .trainer import TrainConfig, train
from .uq_apps import DEFAULT_SERIES_CONFIG, fit_series_model, flag_anomalies, retrain_cleaned

log = logging.getLogger("gaussreg")

REPORT_FORMAT = "gaussreg-report"
REPORT_VERSION = 1

EXIT_OK, EXIT_DATA, EXIT_ABORT = 0, 2, 3


class UsageError(DataError):
    pass


# -- config resolution ------------------------------------------------------------

TRAIN_DEFAULTS = {
    "hidden": "50:relu",
    "head_hidden": "50",
    "head_activation": "relu",
    "head": "gaussian",
    "sigma_floor": 1e-6,
    "epochs": 40,
    "learning_rate": 1e-3,
    "batch_size": 32,
    "patience": None,
    "clip_norm": 10.0,
    "loss": None,
}

DEFAULTS: Dict[str, dict] = {
    "train": {**TRAIN_DEFAULTS, "data": None, "targets": None, "drop": "", "out": None, "history": None,
              "val_data": None, "report": None},
    "eval": {"model": None, "data": None, "report": None},
    "benchmark": {**TRAIN_DEFAULTS, "data": None, "targets": None, "drop": "", "splits": 20, "test_frac": 0.1,
                  "workers": 1, "out": None, "csv": None},
    "anomaly": {**TRAIN_DEFAULTS, "hidden": "64:relu", "head_hidden": "64", "epochs": DEFAULT_SERIES_CONFIG.epochs,
                "series": None, "family": [], "lookback": 10, "threshold": 0.5, "raw": False,
                "out": None, "intervals": None, "svg": None},
    "clean": {"model": None, "data": None, "val": None, "fraction": 0.05, "out": None, "cleaned": None},
    "plot-band": {"model": None, "data": None, "k": 3.0, "out": None},
    "synth": {"kind": None, "n": 1000, "out": None, "fraction": 0.1, "mu": 0.0, "sigma": 1.0},
}
REQUIRED = {
    "train": ("data", "targets", "out"),
    "eval": ("model", "data"),
    "benchmark": ("data", "targets"),
    "anomaly": ("series",),
    "clean": ("model", "data", "val"),
    "plot-band": ("model", "data", "out"),
    "synth": ("kind", "out"),
}


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    cfg = dict(DEFAULTS[command])
    cfg["seed"] = rng.default_seed()
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {unknown}")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key in cfg and value is not None:
            cfg[key] = value
    missing = [k for k in REQUIRED[command] if cfg.get(k) in (None, "")]
    if missing:
        raise UsageError(f"{command}: missing required option(s) " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return cfg


def _split_names(value) -> List[str]:
    if isinstance(value, (list, tuple)):
        return [str(v) for v in value]
    return [v.strip() for v in str(value).split(",") if v.strip()]


def parse_hidden(text) -> tuple:
    """``"64:tanh,32:relu"`` -> ((64, "tanh"), (32, "relu")); a bare width means relu."""
    layers = []
    for part in _split_names(text):
        width, _, act = part.partition(":")
        try:
            layers.append((int(width), act or "relu"))
        except ValueError:
            raise UsageError(f"bad layer {part!r}; expected WIDTH[:ACTIVATION]") from None
    return tuple(layers)


def build_spec(cfg: dict, input_dim: int, output_dim: int) -> NetworkSpec:
    try:
        return NetworkSpec(
            input_dim,
            parse_hidden(cfg["hidden"]),
            tuple(w for w, _ in parse_hidden(cfg["head_hidden"])),
            cfg["head_activation"],
            output_dim,
            float(cfg["sigma_floor"]),
            int(cfg["seed"]),
            cfg["head"],
        )
    except ValueError as exc:
        raise UsageError(f"bad network options: {exc}") from None


def build_train_config(cfg: dict) -> TrainConfig:
    loss = cfg["loss"] or ("mse" if cfg["head"] == "point" else "nll")
    try:
        return TrainConfig(
            learning_rate=float(cfg["learning_rate"]),
            batch_size=int(cfg["batch_size"]),
            epochs=int(cfg["epochs"]),
            seed=int(cfg["seed"]),
            clip_norm=None if cfg["clip_norm"] is None else float(cfg["clip_norm"]),
            patience=None if cfg["patience"] is None else int(cfg["patience"]),
            loss=loss,
        )
    except ValueError as exc:
        raise UsageError(f"bad training options: {exc}") from None


# -- output ---------------------------------------------------------------------


def report_document(command: str, cfg: dict, result: dict) -> str:
    doc = {"format": REPORT_FORMAT, "version": REPORT_VERSION, "command": command, "config": cfg, "result": result}
    return json.dumps(doc, sort_keys=True, indent=2, allow_nan=False) + "\n"


def emit(command: str, cfg: dict, result: dict, path: Optional[str]) -> None:
    text = report_document(command, cfg, result)
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# -- model helpers ----------------------------------------------------------------


def _load_model(path) -> Network:
    try:
        return Network.load(path)
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc}") from None


def _model_standardizer(net: Network) -> Standardizer:
    if "standardizer" not in net.metadata:
        raise DataError("model file carries no standardizer; it was not written by 'gaussreg train'")
    return Standardizer.from_dict(net.metadata["standardizer"])


def load_for_model(net: Network, path) -> Dataset:
    """Read ``path`` with the model's column names, ignoring unrelated columns."""
    feats = list(net.metadata.get("feature_names", []))
    targets = list(net.metadata.get("target_names", []))
    if not feats or not targets:
        raise DataError("model file carries no column names")
    header = read_header(path)
    missing = [c for c in feats + targets if c not in header]
    if missing:
        raise DataError(f"{path}: missing column(s) {missing} required by the model")
    data = load_csv(path, targets, [h for h in header if h not in feats and h not in targets])
    order = [data.feature_names.index(f) for f in feats]
    return replace(data, features=data.features[:, order], feature_names=tuple(feats))


# -- commands -------------------------------------------------------------------


def cmd_train(cfg: dict) -> dict:
    data = load_csv(cfg["data"], _split_names(cfg["targets"]), _split_names(cfg["drop"]))
    spec = build_spec(cfg, data.n_features, data.n_targets)
    tcfg = build_train_config(cfg)
    st = fit_standardizer(data)
    val = None
    if cfg["val_data"]:
        val = st.apply(load_csv(cfg["val_data"], list(data.target_names), _split_names(cfg["drop"])))
    net, history = train(Network.init(spec), st.apply(data), val, tcfg)
    net.metadata = {
        "feature_names": list(data.feature_names),
        "target_names": list(data.target_names),
        "standardizer": st.to_dict(),
        "train_config": tcfg.to_dict(),
        "n_train": len(data),
        "rejected_rows": data.rejected_rows,
    }
    net.save(cfg["out"])
    hist_path = cfg["history"] or str(Path(cfg["out"]).with_suffix(".history.csv"))
    history.to_csv(hist_path)
    return {
        "model": cfg["out"],
        "history": hist_path,
        "parameter_count": net.parameter_count(),
        "n_train": len(data),
        "rejected_rows": data.rejected_rows,
        "final_train_loss": history.train_loss[-1] if history.train_loss else None,
        "best_epoch": history.best_epoch,
    }


def cmd_eval(cfg: dict) -> dict:
    net = _load_model(cfg["model"])
    data = load_for_model(net, cfg["data"])
    report = evaluate(net, data, _model_standardizer(net))
    return {"report": report.to_dict(), "rejected_rows": data.rejected_rows}


def cmd_benchmark(cfg: dict) -> dict:
    data = load_csv(cfg["data"], _split_names(cfg["targets"]), _split_names(cfg["drop"]))
    spec = build_spec(cfg, data.n_features, data.n_targets)
    result = run_benchmark(
        data, int(cfg["splits"]), float(cfg["test_frac"]), build_train_config(cfg), spec, int(cfg["seed"]), int(cfg["workers"])
    )
    if cfg["csv"]:
        result.write_csv(cfg["csv"])
    return result.to_dict()


def cmd_anomaly(cfg: dict) -> dict:
    values, labels = load_series_csv(cfg["series"])
    family = [load_series_csv(p)[0] for p in _split_names(cfg["family"])]
    lookback = int(cfg["lookback"])
    if values.size <= lookback:
        raise DataError(f"series of length {values.size} is too short for lookback {lookback}")
    spec = build_spec(cfg, lookback, 1)
    model = fit_series_model(values, lookback, spec, build_train_config(cfg), family)
    sigma = model.uncertainty(values)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        report = flag_anomalies(sigma, float(cfg["threshold"]), normalize=not cfg["raw"])
    for w in caught:
        log.warning("%s", w.message)
    if cfg["intervals"]:
        report.write_intervals_csv(cfg["intervals"])
    if cfg["svg"]:
        shown, rule = report.normalized, report.threshold
        if cfg["raw"]:
            lo, hi = np.nanmin(sigma), np.nanmax(sigma)
            span = hi - lo if hi > lo else 1.0
            shown, rule = (sigma - lo) / span, (report.threshold - lo) / span
        plots.write(cfg["svg"], plots.anomaly_svg(values, shown, rule, report.flagged, Path(cfg["series"]).name))
    out = report.to_dict()
    if labels:
        out["flagged_labels"] = [labels[i] for i in report.flagged]
    out["warnings"] = [str(w.message) for w in caught]
    return out


def cmd_clean(cfg: dict) -> dict:
    fraction = float(cfg["fraction"])
    if not 0 <= fraction < 1:
        raise UsageError("--fraction must lie in [0, 1)")
    net = _load_model(cfg["model"])
    st = _model_standardizer(net)
    train_set = load_for_model(net, cfg["data"])
    val_set = load_for_model(net, cfg["val"])
    tcfg = TrainConfig.from_dict(net.metadata.get("train_config", {}))
    result = retrain_cleaned(net, st, tcfg, train_set, val_set, fraction)
    if cfg["cleaned"]:
        result.cleaned.to_csv(cfg["cleaned"])
    return result.to_dict()


def cmd_plot_band(cfg: dict) -> dict:
    net = _load_model(cfg["model"])
    if net.spec.input_dim != 1 or net.spec.output_dim != 1 or net.spec.head != "gaussian":
        raise DataError("plot-band needs a 1-D input, 1-D target gaussian model")
    data = load_for_model(net, cfg["data"])
    st = _model_standardizer(net)
    grid = np.linspace(data.features.min(), data.features.max(), 200)[:, None]
    pred = net.predict(st.transform_features(grid)).affine(st.y_mean, st.y_std)
    k = float(cfg["k"])
    if not k > 0:
        raise UsageError("--k must be positive")
    plots.write(cfg["out"], plots.band_svg(grid, pred, k, data.features[:, 0], data.targets[:, 0], Path(cfg["data"]).name))
    return {"svg": cfg["out"], "k": k, "n_points": len(data)}


def cmd_synth(cfg: dict) -> dict:
    kind, n, seed, out = cfg["kind"], int(cfg["n"]), int(cfg["seed"]), cfg["out"]
    result = {"kind": kind, "out": out}
    if kind == "hetero":
        gen_heteroscedastic(n, seed).to_csv(out)
    elif kind == "constant":
        gen_constant_gaussian(n, float(cfg["mu"]), float(cfg["sigma"]), seed).to_csv(out)
    elif kind == "corrupted":
        data, mask = gen_corrupted(gen_heteroscedastic(n, seed), float(cfg["fraction"]), seed)
        data.to_csv(out)
        side = str(Path(out).with_suffix(".mask.csv"))
        with open(side, "w", encoding="utf-8") as fh:
            fh.write("row\n" + "".join(f"{i}\n" for i in np.flatnonzero(mask)))
        result.update(sidecar=side, n_corrupted=int(mask.sum()))
    elif kind == "series":
        s = gen_series_with_anomalies(n, seed)
        write_series_csv(out, s.values)
        side = str(Path(out).with_suffix(".anomalies.csv"))
        with open(side, "w", encoding="utf-8") as fh:
            fh.write("index,shift\n" + "".join(f"{i},{v!r}\n" for i, v in zip(s.anomaly_indices, s.shifts)))
        result.update(sidecar=side, anomaly_indices=list(s.anomaly_indices))
    else:
        raise UsageError(f"unknown synth kind {kind!r}")
    return result


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "benchmark": cmd_benchmark,
    "anomaly": cmd_anomaly,
    "clean": cmd_clean,
    "plot-band": cmd_plot_band,
    "synth": cmd_synth,
}
REPORT_FLAG = {"train": "report", "eval": "report", "benchmark": "out", "anomaly": "out", "clean": "out"}


# -- argument parsing ---------------------------------------------------------------


def _add_network_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("network and training")
    g.add_argument("--hidden", help="trunk layers, e.g. 50:relu,50:tanh")
    g.add_argument("--head-hidden", help="head widths, e.g. 50")
    g.add_argument("--head-activation", choices=["relu", "tanh"])
    g.add_argument("--head", choices=["gaussian", "point"])
    g.add_argument("--sigma-floor", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--lr", "--learning-rate", dest="learning_rate", type=float)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--patience", type=int)
    g.add_argument("--clip-norm", type=float)
    g.add_argument("--loss", choices=["nll", "mse"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gaussreg", description="Regression with a predicted Gaussian (mu, sigma).")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON file of option values; flags override it")
        p.add_argument("--seed", type=int, help="default from $GAUSSREG_SEED, else 0")
        return p

    p = command("train", "fit a model on a CSV file")
    p.add_argument("--data")
    p.add_argument("--targets", help="comma-separated target column names")
    p.add_argument("--drop", help="comma-separated columns to ignore")
    p.add_argument("--val-data", help="optional validation CSV (used for early stopping)")
    p.add_argument("--out", help="model file to write")
    p.add_argument("--history", help="history CSV (default: next to the model)")
    p.add_argument("--report")
    _add_network_flags(p)

    p = command("eval", "evaluate a model on a CSV file")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--report")

    p = command("benchmark", "repeated random-split benchmark")
    p.add_argument("--data")
    p.add_argument("--targets")
    p.add_argument("--drop")
    p.add_argument("--splits", type=int)
    p.add_argument("--test-frac", type=float)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="report file (default stdout)")
    p.add_argument("--csv", help="per-split CSV")
    _add_network_flags(p)

    p = command("anomaly", "flag high-uncertainty points of a series")
    p.add_argument("--series")
    p.add_argument("--family", help="comma-separated extra series files to train on")
    p.add_argument("--lookback", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--raw", action="store_const", const=True, help="threshold raw sigma instead of normalized")
    p.add_argument("--out")
    p.add_argument("--intervals", help="interval CSV")
    p.add_argument("--svg")
    _add_network_flags(p)

    p = command("clean", "drop highest-sigma training rows and retrain")
    p.add_argument("--model")
    p.add_argument("--data", help="training CSV the model was fitted on")
    p.add_argument("--val")
    p.add_argument("--fraction", type=float)
    p.add_argument("--out")
    p.add_argument("--cleaned", help="cleaned CSV")

    p = command("plot-band", "SVG of the mean with a +/- k sigma band")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--k", type=float)
    p.add_argument("--out")

    p = command("synth", "write a synthetic dataset")
    p.add_argument("--kind", choices=["hetero", "constant", "corrupted", "series"])
    p.add_argument("--n", type=int, help="rows, or series length")
    p.add_argument("--fraction", type=float, help="corrupted share (corrupted kind)")
    p.add_argument("--mu", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--out")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args.command, args)
        result = COMMANDS[args.command](cfg)
        emit(args.command, cfg, result, cfg.get(REPORT_FLAG.get(args.command, "")))
    except TrainingAbort as exc:
        print(f"gaussreg: training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except NonFiniteError as exc:
        print(f"gaussreg: numerical failure: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (DataError, DimensionError, ModelFormatError, NotFittedError, OSError, ValueError) as exc:
        print(f"gaussreg: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
