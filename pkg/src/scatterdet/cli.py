"""Command-line front end.

Configuration is a flat set of ``key=value`` pairs taken, in increasing
precedence, from built-in defaults, a ``--config`` file and trailing
``key=value`` arguments.  ``--seed`` overrides the ``seed`` key.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from . import experiments as ex
from .data import DataError, SyntheticSpec, generate_synthetic, load_csv, read_labels_csv, read_matrix_csv, save_dataset
from .detector import (
    ABLATIONS,
    NumericalError,
    ScoreConfig,
    TrainConfig,
    delta_table,
    load_checkpoint,
    save_checkpoint,
    score_series,
    threshold,
    train,
    write_loss_log,
    write_scores_csv,
)
from .graph import TopologyConfig
from .metrics import MetricError, MetricReport, evaluate, format_table
from .objective import EmaConfig

log = logging.getLogger("scatterdet")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class ConfigError(ValueError):
    """Bad or missing configuration."""


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _opt_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none") else int(text)


@dataclass(frozen=True)
class Key:
    default: str
    parse: Callable[[str], Any]
    doc: str


# Every accepted key with its default (as text) and meaning.
KEYS: dict[str, Key] = {
    # data
    "train_path": Key("", str, "training CSV (header row, one column per channel)"),
    "test_path": Key("", str, "test CSV with the same header"),
    "labels_path": Key("", str, "test labels, one 0/1 per line"),
    "data_dir": Key("", str, "directory holding train.csv, test.csv, labels.csv (fills unset paths)"),
    "checkpoint": Key("", str, "checkpoint file; defaults to <out-dir>/checkpoint.npz"),
    "seed": Key("0", int, "seed for every random draw"),
    # training
    "window_T": Key("64", int, "window length T (full-scale setting 110)"),
    "batch_size": Key("32", int, "windows per step (full-scale setting 128)"),
    "lr": Key("0.001", float, "Adam learning rate (full-scale setting 1e-4)"),
    "epochs": Key("30", int, "training epochs"),
    "stride": Key("8", _opt_int, "training window stride; none means window_T"),
    "hidden_dim": Key("32", int, "embedding width d_out (full-scale setting 512)"),
    "num_heads": Key("4", int, "GAT heads"),
    "gat_layers": Key("2", int, "GAT layers"),
    "kernel_sizes": Key("2,4,8", _ints, "causal convolution kernel sizes"),
    "ema_m": Key("0.9", float, "EMA momentum m"),
    "ema_cadence": Key("per_epoch", str, "per_epoch or per_step"),
    "contrast_mode": Key("sigmoid_edge", str, "sigmoid_edge or infonce"),
    "temperature": Key("0.1", float, "InfoNCE temperature"),
    "scatter_on": Key("online", str, "embeddings the scatter loss acts on: online or target"),
    "center_strategy": Key("random_in_ball", str, "random_in_ball, zero, fixed_radius or multi_center"),
    "center_radius": Key("0.5", float, "radius for fixed_radius"),
    "num_centers": Key("3", int, "centers for multi_center"),
    # graph
    "topology": Key("lookback", str, "lookback, random or knn"),
    "tau": Key("2", int, "look-back depth"),
    "edge_prob": Key("0.3", float, "edge probability of the random topology"),
    "knn_k": Key("3", int, "neighbours of the knn topology"),
    # scoring
    "delta": Key("1.0", float, "absolute score threshold"),
    "score_mode": Key("distance", str, "distance or reciprocal_similarity"),
    "threshold_mode": Key("absolute_delta", str, "absolute_delta or percentile"),
    "percentile": Key("95", float, "percentile for threshold_mode=percentile"),
    # synthetic data
    "synth_train_length": Key("8000", int, "synthetic training length"),
    "synth_test_length": Key("4000", int, "synthetic test length"),
    "synth_channels": Key("8", int, "synthetic channel count"),
    "synth_anomaly_rate": Key("0.05", float, "fraction of anomalous test points"),
    "synth_noise_std": Key("0.05", float, "observation noise"),
    "synth_types": Key("point,contextual,shapelet", lambda t: tuple(v for v in t.split(",") if v), "anomaly types"),
    # simulations
    "shifts": Key("0,1,2,5,10", _ints, "label shifts for simulate sensitivity"),
    "stream_length": Key("4000", int, "truth-stream length for simulate sensitivity"),
    "sigmas": Key("0,0.5,1,2", _floats, "input-noise levels for simulate scatter"),
    "deltas": Key("0.2,0.4,0.6,0.8,1.0", _floats, "thresholds for simulate delta"),
    "seeds": Key("0,1,2,3,4", _ints, "seeds for simulate stability"),
    "topologies": Key("lookback,random,knn", lambda t: tuple(v for v in t.split(",") if v), "topologies for the topology command"),
}


class RunConfig(dict):
    """Parsed configuration: every key of KEYS, typed."""

    @classmethod
    def build(cls, pairs: dict[str, str]) -> "RunConfig":
        unknown = sorted(set(pairs) - set(KEYS))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        out = cls()
        for name, key in KEYS.items():
            text = pairs.get(name, key.default)
            try:
                out[name] = key.parse(text)
            except ValueError as exc:
                raise ConfigError(f"{name}={text!r}: {exc}") from None
        return out

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            window_T=self["window_T"],
            batch_size=self["batch_size"],
            lr=self["lr"],
            epochs=self["epochs"],
            stride=self["stride"],
            seed=self["seed"],
            hidden_dim=self["hidden_dim"],
            num_heads=self["num_heads"],
            gat_layers=self["gat_layers"],
            kernel_sizes=self["kernel_sizes"],
            ema=EmaConfig(self["ema_m"], self["ema_cadence"]),
            contrast_mode=self["contrast_mode"],
            temperature=self["temperature"],
            topology=TopologyConfig(
                kind=self["topology"], tau=self["tau"], edge_prob=self["edge_prob"], knn_k=self["knn_k"], seed=self["seed"]
            ),
            center_strategy=self["center_strategy"],
            center_radius=self["center_radius"],
            num_centers=self["num_centers"],
            scatter_on=self["scatter_on"],
        )

    def score_config(self) -> ScoreConfig:
        return ScoreConfig(self["delta"], self["score_mode"], self["threshold_mode"], self["percentile"])

    def synthetic_spec(self) -> SyntheticSpec:
        return SyntheticSpec(
            train_length=self["synth_train_length"],
            test_length=self["synth_test_length"],
            channels=self["synth_channels"],
            anomaly_rate=self["synth_anomaly_rate"],
            noise_std=self["synth_noise_std"],
            anomaly_types=self["synth_types"],
            seed=self["seed"],
        )


def parse_pairs(items) -> dict[str, str]:
    pairs = {}
    for item in items:
        item = item.strip()
        if not item or item.startswith("#"):
            continue
        if "=" not in item:
            raise ConfigError(f"expected key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def load_config(config_file: str | None, overrides: list[str], seed: int | None) -> RunConfig:
    pairs = {}
    if config_file:
        path = Path(config_file)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        pairs.update(parse_pairs(path.read_text().splitlines()))
    pairs.update(parse_pairs(overrides))
    if seed is not None:
        pairs["seed"] = str(seed)
    return RunConfig.build(pairs)


def keys_help() -> str:
    width = max(len(k) for k in KEYS)
    lines = ["configuration keys (key=value, default in brackets):"]
    for name, key in KEYS.items():
        lines.append(f"  {name:<{width}}  [{key.default}]  {key.doc}")
    return "\n".join(lines)


# -- helpers -------------------------------------------------------------------
def _data_paths(cfg: RunConfig, need=("train_path", "test_path", "labels_path")) -> dict[str, str]:
    names = {"train_path": "train.csv", "test_path": "test.csv", "labels_path": "labels.csv"}
    out = {}
    for key in need:
        value = cfg[key] or (str(Path(cfg["data_dir"]) / names[key]) if cfg["data_dir"] else "")
        if not value:
            raise ConfigError(f"missing required key {key} (or data_dir)")
        out[key] = value
    return out


def _load_dataset(cfg: RunConfig):
    p = _data_paths(cfg)
    return load_csv(p["train_path"], p["test_path"], p["labels_path"])


def _checkpoint_path(cfg: RunConfig, out_dir: Path) -> Path:
    return Path(cfg["checkpoint"]) if cfg["checkpoint"] else out_dir / "checkpoint.npz"


def _load_model(cfg: RunConfig, out_dir: Path):
    path = _checkpoint_path(cfg, out_dir)
    if not path.exists():
        raise DataError(f"checkpoint {path} not found (set checkpoint=... or run train first)")
    return load_checkpoint(path)


def _model_for(cfg: RunConfig, out_dir: Path, ds):
    """Reuse an existing checkpoint, otherwise train one from the config."""
    path = _checkpoint_path(cfg, out_dir)
    if path.exists():
        return load_checkpoint(path)
    return train(ds, cfg.train_config()).state


def _emit(out_dir: Path, name: str, rows: list[dict]) -> None:
    ex.write_rows_csv(out_dir / f"{name}.csv", rows)
    print(ex.format_rows(rows))
    print(f"wrote {out_dir / (name + '.csv')}")


# -- commands ------------------------------------------------------------------
def cmd_train(cfg: RunConfig, out_dir: Path, args) -> None:
    ds = _load_dataset(cfg)
    fit = train(ds, cfg.train_config())
    ckpt = _checkpoint_path(cfg, out_dir)
    save_checkpoint(fit.state, ckpt)
    write_loss_log(out_dir / "loss_log.csv", fit.log)
    print(f"trained {fit.state.step} steps in {fit.seconds:.1f}s; wrote {ckpt} and {out_dir / 'loss_log.csv'}")


def _report(state, ds, score_cfg) -> MetricReport:
    res = score_series(state, ds.test, score_cfg.score_mode)
    return evaluate(res.scores, threshold(res.scores, score_cfg), ds.test_labels[: res.covered])


def cmd_evaluate(cfg: RunConfig, out_dir: Path, args) -> None:
    ds = _load_dataset(cfg)
    score_cfg = cfg.score_config()
    if args.ablate:
        arms = args.ablate
        base = cfg.train_config()
        reports = [(arm, _report(train(ds, base.ablate(arm)).state, ds, score_cfg)) for arm in arms]
        names, reps = [a for a, _ in reports], [r for _, r in reports]
        stem = "ablation"
    else:
        names, reps = ["model"], [_report(_load_model(cfg, out_dir), ds, score_cfg)]
        stem = "metrics"
    with open(out_dir / f"{stem}.csv", "w") as fh:
        fh.write(MetricReport.csv_header(["run"]) + "\n")
        fh.writelines(r.csv_row([n]) + "\n" for n, r in zip(names, reps))
    table = format_table(reps, names)
    (out_dir / f"{stem}.txt").write_text(table + "\n")
    print(table)
    for n, r in zip(names, reps):
        for metric, reason in r.errors.items():
            print(f"{n}: {metric} undefined: {reason}", file=sys.stderr)
    print(f"wrote {out_dir / (stem + '.csv')}")


def cmd_detect(cfg: RunConfig, out_dir: Path, args) -> None:
    state = _load_model(cfg, out_dir)
    _, raw = read_matrix_csv(_data_paths(cfg, ("test_path",))["test_path"])
    if raw.shape[1] != state.online.cfg.in_dim:
        raise DataError(f"test data has {raw.shape[1]} channels, model expects {state.online.cfg.in_dim}")
    x = raw if state.norm_mean is None else (raw - state.norm_mean) / state.norm_std
    score_cfg = cfg.score_config()
    res = score_series(state, x, score_cfg.score_mode)
    path = out_dir / "scores.csv"
    write_scores_csv(path, res.scores, threshold(res.scores, score_cfg))
    print(f"scored {res.covered} of {len(x)} points; wrote {path}")


def cmd_synth(cfg: RunConfig, out_dir: Path, args) -> None:
    ds, events = generate_synthetic(cfg.synthetic_spec())
    paths = save_dataset(ds, out_dir)
    rows = [{"kind": e.kind, "start": e.start, "length": e.length, "channels": " ".join(map(str, e.channels))} for e in events]
    ex.write_rows_csv(out_dir / "events.csv", rows)
    print(f"wrote {', '.join(str(p) for p in paths.values())} ({int(ds.test_labels.sum())} anomalous points)")


def _dataset_or_synthetic(cfg: RunConfig):
    if cfg["train_path"] or cfg["data_dir"]:
        return _load_dataset(cfg)
    return generate_synthetic(cfg.synthetic_spec())[0]


def cmd_simulate(cfg: RunConfig, out_dir: Path, args) -> None:
    kind = args.protocol
    if kind == "sensitivity":
        if cfg["labels_path"]:
            streams = {Path(cfg["labels_path"]).stem: read_labels_csv(cfg["labels_path"])}
        else:
            streams = ex.sensitivity_streams(cfg["stream_length"], cfg["seed"])
        rows = [r for name, y in streams.items() for r in ex.sensitivity_table(y, name, cfg["shifts"])]
        _emit(out_dir, "sensitivity", rows)
    elif kind == "scatter":
        ds = _dataset_or_synthetic(cfg)
        state = _model_for(cfg, out_dir, ds)
        _emit(out_dir, "scatter", ex.scatter_rows(ex.scatter_sweep(state, ds, cfg["sigmas"], cfg["seed"])))
    elif kind == "delta":
        ds = _dataset_or_synthetic(cfg)
        state = _model_for(cfg, out_dir, ds)
        res = score_series(state, ds.test, cfg["score_mode"])
        rows = delta_table(res.scores, ds.test_labels[: res.covered], cfg["deltas"])
        _emit(out_dir, "delta", [dataclasses.asdict(r) for r in rows])
    elif kind == "stability":
        ds = _dataset_or_synthetic(cfg)
        rows = ex.stability(ds, cfg.train_config(), cfg["seeds"])
        _emit(out_dir, "stability", rows)
        summary = ex.summarize(rows)
        (out_dir / "stability_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        print(
            f"Aff-F {summary['aff_f_mean']:.4f} ± {summary['aff_f_std']:.4f}   "
            f"AUC-ROC {summary['auc_roc_mean']:.4f} ± {summary['auc_roc_std']:.4f}"
        )


def cmd_topology(cfg: RunConfig, out_dir: Path, args) -> None:
    ds = _dataset_or_synthetic(cfg)
    _emit(out_dir, "topology", ex.topology_comparison(ds, cfg.train_config(), cfg["topologies"]))


def cmd_centers(cfg: RunConfig, out_dir: Path, args) -> None:
    ds = _dataset_or_synthetic(cfg)
    base = cfg.train_config()
    rows = []
    for strategy in ("random_in_ball", "zero", "fixed_radius", "multi_center"):
        run = ex.detection_run(ds, dataclasses.replace(base, center_strategy=strategy), cfg.score_config(), baseline=False)
        rows.append({"center": strategy, "aff_f": run.report.aff_f, "auc_roc": run.report.auc_roc})
    _emit(out_dir, "centers", rows)


COMMANDS = {
    "train": (cmd_train, "train a model; writes checkpoint.npz and loss_log.csv"),
    "evaluate": (cmd_evaluate, "all twelve metrics for a checkpoint (or ablation arms with --ablate)"),
    "detect": (cmd_detect, "score a test CSV; writes scores.csv (index,score,label_pred)"),
    "synth": (cmd_synth, "generate a synthetic dataset"),
    "simulate": (cmd_simulate, "sensitivity | scatter | delta | stability tables"),
    "topology": (cmd_topology, "compare graph topologies (quality and throughput)"),
    "centers": (cmd_centers, "compare scattering-center initialisations"),
}


def _arms(text: str) -> tuple[str, ...]:
    arms = tuple(a for a in text.split(",") if a)
    if arms == ("all",):
        return ABLATIONS
    bad = [a for a in arms if a not in ABLATIONS]
    if bad or not arms:
        raise argparse.ArgumentTypeError(f"unknown ablation arm(s) {bad}; expected {', '.join(ABLATIONS)} or all")
    return arms


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scatterdet",
        description=__doc__,
        epilog=keys_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", help="file of key=value lines")
    parser.add_argument("--seed", type=int, help="overrides the seed key")
    parser.add_argument("--out-dir", default=".", help="output directory (created if missing)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, help=text, epilog=keys_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
        if name == "simulate":
            p.add_argument("protocol", choices=("sensitivity", "scatter", "delta", "stability"))
        if name == "evaluate":
            p.add_argument(
                "--ablate",
                type=_arms,
                metavar="ARMS",
                help=f"comma-separated arms to retrain with, or all: {','.join(ABLATIONS)}",
            )
        p.add_argument("pairs", nargs="*", metavar="key=value")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors
        return EXIT_CONFIG if exc.code == 2 else int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.pairs, args.seed)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command][0](cfg, out_dir, args)
    except (NumericalError, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, MetricError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
