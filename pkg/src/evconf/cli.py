"""Command-line front end for the confidence benchmark.

Subcommands cover the whole pipeline: generate data, train every
(method, seed) pair, predict, calibrate, evaluate, and run reject-option
sweeps. Each command is deterministic given its config file, and every
output file carries the config hash so reports are self-describing.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import math
import sys
from pathlib import Path

import numpy as np

from .calibration import fit_pwlm, map_records, save_pwlm
from .data import (
    AUGMENT_PRESETS,
    SplitSpec,
    SyntheticSpec,
    balance_augment,
    generate_synthetic,
    load_examples,
    save_examples,
    split,
)
from .errors import (
    ContractError,
    NumericError,
    ParseError,
    TrainingError,
    UndefinedMetricError,
)
from .metrics import EceConfig, MetricsReport, RejectPoint, reject_sweep, reliability_bins
from .methods import (
    METHODS,
    MethodConfig,
    load_model,
    predict_dataset,
    read_prediction_log,
    save_model,
    train_method,
    write_prediction_log,
)
from .numeric import SeededStream
from .tables import write_table

DEFAULT_CONFIG = {
    "out_dir": "out",
    "dataset": {
        "path": None,
        "class_counts": [150, 150],
        "feature_dim": 16,
        "seq_len_range": [4, 12],
        "separation": 1.0,
        "noise_scale": 1.0,
        "seed": 0,
    },
    "split": {"train_frac": 0.6, "val_frac": 0.2, "test_frac": 0.2, "seed": 0},
    "augment": None,
    "augment_seed": 0,
    "methods": list(METHODS),
    "seeds": [0, 1, 2, 3, 4],
    "training": {
        "hidden_dims": [128, 128],
        "epochs": 20,
        "batch_size": 32,
        "warmup_steps": 150,
        "peak_lr": 0.003,
        "weight_decay": None,
        "lam": 0.5,
        "kl_form": "mean",
        "dropout_rate": 0.3,
        "prior_scale": 1.0,
        "kl_weight_mode": "uniform",
        "test_samples": 50,
        "ensemble_size": 5,
    },
    "ece_bins": 10,
    "pwlm_bins": 10,
    "reject_thresholds": [0.5, 0.8],
}

METRIC_COLUMNS = (
    "acc",
    "f1",
    "ece_raw",
    "ece_pwlm",
    "nce_raw",
    "nce_pwlm",
    "auroc",
    "auprc",
)


def _merge(defaults, overrides, trail=""):
    """Deep merge onto the default document, rejecting unknown fields so a
    typo in a config file fails loudly instead of silently using a default."""
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        here = f"{trail}{key}"
        if key not in defaults:
            raise ContractError(f"unknown config field {here!r}")
        if isinstance(defaults[key], dict) and isinstance(value, dict) and key != "augment":
            merged[key] = _merge(defaults[key], value, trail=f"{here}.")
        else:
            merged[key] = copy.deepcopy(value)
    return merged


class ExperimentConfig:
    """Fully materialized experiment description (all defaults filled in)."""

    def __init__(self, doc: dict):
        self.doc = doc
        self._validate()

    @classmethod
    def load(cls, path=None, out_dir=None, seeds=None, methods=None):
        user = {}
        if path is not None:
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParseError(f"config is not valid JSON: {exc}", line=exc.lineno)
            if not isinstance(user, dict):
                raise ContractError("config file must hold a JSON object")
        doc = _merge(DEFAULT_CONFIG, user)
        if out_dir is not None:
            doc["out_dir"] = out_dir
        if seeds is not None:
            doc["seeds"] = seeds
        if methods is not None:
            doc["methods"] = methods
        return cls(doc)

    def _validate(self):
        doc = self.doc
        if not doc["methods"]:
            raise ContractError("config field 'methods' needs at least one method")
        for m in doc["methods"]:
            if m not in METHODS:
                raise ContractError(f"unknown method {m!r} in config field 'methods'")
        if not doc["seeds"]:
            raise ContractError("config field 'seeds' needs at least one seed")
        seeds = [int(s) for s in doc["seeds"]]
        if len(set(seeds)) != len(seeds):
            raise ContractError("config field 'seeds' has duplicates")
        doc["seeds"] = seeds
        if doc["dataset"]["path"] is not None and not Path(doc["dataset"]["path"]).exists():
            raise ContractError(
                f"config field 'dataset.path' points at a missing file: "
                f"{doc['dataset']['path']}"
            )
        # construct the spec objects once so their own validation runs now
        self.split_spec()
        if doc["dataset"]["path"] is None:
            self.synthetic_spec()
        self.augment_counts()
        self.ece_config()
        if int(doc["pwlm_bins"]) < 1:
            raise ContractError("config field 'pwlm_bins' must be >= 1")
        for tau in doc["reject_thresholds"]:
            if not 0.0 <= float(tau) <= 1.0:
                raise ContractError(
                    "config field 'reject_thresholds' entries must lie in [0, 1]"
                )

    @property
    def out_dir(self) -> str:
        return self.doc["out_dir"]

    @property
    def methods(self) -> list[str]:
        return list(self.doc["methods"])

    @property
    def seeds(self) -> list[int]:
        return list(self.doc["seeds"])

    @property
    def reject_thresholds(self) -> list[float]:
        return [float(t) for t in self.doc["reject_thresholds"]]

    def synthetic_spec(self) -> SyntheticSpec:
        d = self.doc["dataset"]
        return SyntheticSpec(
            class_counts=tuple(d["class_counts"]),
            feature_dim=int(d["feature_dim"]),
            seq_len_range=tuple(d["seq_len_range"]),
            separation=float(d["separation"]),
            noise_scale=float(d["noise_scale"]),
            seed=int(d["seed"]),
        )

    def split_spec(self) -> SplitSpec:
        s = self.doc["split"]
        try:
            return SplitSpec(
                train_frac=float(s["train_frac"]),
                val_frac=float(s["val_frac"]),
                test_frac=float(s["test_frac"]),
                seed=int(s["seed"]),
            )
        except ContractError as exc:
            raise ContractError(f"config field 'split': {exc}") from exc

    def augment_counts(self) -> dict[int, int] | None:
        a = self.doc["augment"]
        if a is None:
            return None
        if isinstance(a, str):
            if a not in AUGMENT_PRESETS:
                raise ContractError(
                    f"unknown augment preset {a!r}; expected one of "
                    f"{sorted(AUGMENT_PRESETS)}"
                )
            return dict(AUGMENT_PRESETS[a])
        if isinstance(a, dict):
            return {int(k): int(v) for k, v in a.items()}
        raise ContractError("config field 'augment' must be null, a preset name, or a mapping")

    def method_config(self, method: str, seed: int) -> MethodConfig:
        t = self.doc["training"]
        return MethodConfig(
            method=method,
            seed=seed,
            hidden_dims=tuple(t["hidden_dims"]),
            epochs=int(t["epochs"]),
            batch_size=int(t["batch_size"]),
            warmup_steps=int(t["warmup_steps"]),
            peak_lr=float(t["peak_lr"]),
            weight_decay=None if t["weight_decay"] is None else float(t["weight_decay"]),
            lam=float(t["lam"]),
            kl_form=t["kl_form"],
            dropout_rate=float(t["dropout_rate"]),
            prior_scale=float(t["prior_scale"]),
            kl_weight_mode=t["kl_weight_mode"],
            test_samples=int(t["test_samples"]),
            ensemble_size=int(t["ensemble_size"]),
        )

    def ece_config(self) -> EceConfig:
        return EceConfig(num_bins=int(self.doc["ece_bins"]))

    def canonical_json(self) -> str:
        return json.dumps(self.doc, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        # out_dir is excluded so the same experiment written elsewhere
        # produces byte-identical artifacts
        hashed = {k: v for k, v in self.doc.items() if k != "out_dir"}
        blob = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


class Workspace:
    """Directory layout under the experiment's output directory."""

    SUBDIRS = ("data", "checkpoints", "predictions", "calibration", "reports", "figures")

    def __init__(self, out_dir):
        self.root = Path(out_dir)

    def ensure(self):
        for sub in self.SUBDIRS:
            (self.root / sub).mkdir(parents=True, exist_ok=True)

    def resolved_config(self) -> Path:
        return self.root / "config.resolved.json"

    def dataset(self, part: str) -> Path:
        return self.root / "data" / f"{part}.txt"

    def model(self, method: str, seed: int) -> Path:
        return self.root / "checkpoints" / f"{method}_seed{seed}.json"

    def log(self, part: str, method: str, seed: int) -> Path:
        return self.root / "predictions" / f"{part}_{method}_seed{seed}.tsv"

    def pwlm(self, method: str, seed: int) -> Path:
        return self.root / "calibration" / f"pwlm_{method}_seed{seed}.txt"

    def metrics_report(self) -> Path:
        return self.root / "reports" / "metrics.tsv"

    def reliability(self, method: str, seed: int) -> Path:
        return self.root / "reports" / f"reliability_{method}_seed{seed}.tsv"

    def reject_report(self) -> Path:
        return self.root / "reports" / "reject.tsv"

    def figure(self, name: str) -> Path:
        return self.root / "figures" / name


def _say(quiet: bool, *parts):
    if not quiet:
        print(*parts, flush=True)


def _write_resolved(cfg: ExperimentConfig, ws: Workspace):
    ws.ensure()
    with open(ws.resolved_config(), "w", encoding="utf-8") as fh:
        json.dump(cfg.doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _class_counts(examples) -> dict[int, int]:
    counts: dict[int, int] = {}
    for ex in examples:
        counts[ex.label] = counts.get(ex.label, 0) + 1
    return dict(sorted(counts.items()))


def _load_split(cfg: ExperimentConfig, ws: Workspace, part: str):
    path = ws.dataset(part)
    if not path.exists():
        raise ContractError(f"missing dataset file {path}; run 'generate' first")
    return load_examples(path)


def _require_log(path: Path):
    if not path.exists():
        raise ContractError(f"missing prediction log {path}; run 'predict' first")
    return [rec for _, _, rec in read_prediction_log(path)]


def cmd_generate(cfg: ExperimentConfig, ws: Workspace, quiet: bool):
    _write_resolved(cfg, ws)
    source = cfg.doc["dataset"]["path"]
    if source is not None:
        examples = load_examples(source)
        if not examples:
            raise ContractError(f"dataset file {source} holds no examples")
    else:
        examples = generate_synthetic(cfg.synthetic_spec())
    train, val, test = split(examples, cfg.split_spec())
    counts = cfg.augment_counts()
    if counts:
        train = balance_augment(train, counts, SeededStream(int(cfg.doc["augment_seed"]), 6))
    tag = f"config {cfg.hash()}"
    for part, subset in (("train", train), ("val", val), ("test", test)):
        save_examples(subset, ws.dataset(part), comments=[tag, f"split {part}"])
        per_class = " ".join(f"class{c}={n}" for c, n in _class_counts(subset).items())
        _say(quiet, f"{part}: {len(subset)} examples ({per_class}) -> {ws.dataset(part)}")


def cmd_train(cfg: ExperimentConfig, ws: Workspace, quiet: bool):
    _write_resolved(cfg, ws)
    train = _load_split(cfg, ws, "train")
    val = _load_split(cfg, ws, "val")
    tag = f"config {cfg.hash()}"
    for method in cfg.methods:
        for seed in cfg.seeds:
            model = train_method(train, val, cfg.method_config(method, seed))
            path = ws.model(method, seed)
            save_model(path, model, provenance=tag)
            last = model.history[-1]
            _say(
                quiet,
                f"trained {method} seed {seed}: "
                f"val_f1 {last['val_f1']:.3f} -> {path}",
            )


def cmd_predict(cfg: ExperimentConfig, ws: Workspace, quiet: bool):
    _write_resolved(cfg, ws)
    parts = {"val": _load_split(cfg, ws, "val"), "test": _load_split(cfg, ws, "test")}
    tag = f"config {cfg.hash()}"
    for method in cfg.methods:
        for seed in cfg.seeds:
            path = ws.model(method, seed)
            if not path.exists():
                raise ContractError(f"missing checkpoint {path}; run 'train' first")
            model = load_model(path)
            for stream_id, (part, examples) in enumerate(parts.items(), start=4):
                records = predict_dataset(model, examples, SeededStream(seed, stream_id))
                log = ws.log(part, method, seed)
                write_prediction_log(
                    log, records, method, seed, comments=[tag, f"dataset {part}"]
                )
                _say(quiet, f"{method} seed {seed} {part}: {len(records)} rows -> {log}")


def _fitted_map(cfg: ExperimentConfig, ws: Workspace, method: str, seed: int):
    val_records = _require_log(ws.log("val", method, seed))
    return fit_pwlm(val_records, num_bins=int(cfg.doc["pwlm_bins"]))


def cmd_calibrate(cfg: ExperimentConfig, ws: Workspace, quiet: bool):
    _write_resolved(cfg, ws)
    tag = f"config {cfg.hash()}"
    for method in cfg.methods:
        for seed in cfg.seeds:
            pwlm = _fitted_map(cfg, ws, method, seed)
            path = ws.pwlm(method, seed)
            save_pwlm(pwlm, path, comments=[tag, f"fitted on val {method} seed {seed}"])
            _say(quiet, f"calibration map {method} seed {seed}: "
                        f"{len(pwlm.xs)} knots -> {path}")


def _aggregate(values: list[float]) -> tuple[float, float]:
    arr = np.array(values, dtype=float)
    mean = float(arr.mean())
    if arr.size > 1:
        stderr = float(arr.std(ddof=1) / math.sqrt(arr.size))
    else:
        stderr = math.nan
    return mean, stderr


def cmd_evaluate(cfg: ExperimentConfig, ws: Workspace, quiet: bool):
    _write_resolved(cfg, ws)
    ece_cfg = cfg.ece_config()
    tag = f"config {cfg.hash()}"
    rows = []
    per_method: dict[str, list[dict]] = {m: [] for m in cfg.methods}
    reliability_store: dict[str, tuple[list, list]] = {}
    for method in cfg.methods:
        for seed in cfg.seeds:
            raw = _require_log(ws.log("test", method, seed))
            pwlm = _fitted_map(cfg, ws, method, seed)
            mapped = map_records(pwlm, raw)
            raw_rep = MetricsReport.from_records(raw, method, seed, ece_cfg)
            map_rep = MetricsReport.from_records(mapped, method, seed, ece_cfg)
            row = {
                "method": method,
                "seed": seed,
                "n": raw_rep.n,
                "acc": raw_rep.accuracy,
                "f1": raw_rep.f1,
                "ece_raw": raw_rep.ece,
                "ece_pwlm": map_rep.ece,
                "nce_raw": raw_rep.nce,
                "nce_pwlm": map_rep.nce,
                "auroc": raw_rep.auroc,
                "auprc": raw_rep.auprc,
            }
            rows.append(row)
            per_method[method].append(row)

            raw_bins = reliability_bins(raw, ece_cfg)
            map_bins = reliability_bins(mapped, ece_cfg)
            rel_rows = []
            for variant, bins in (("raw", raw_bins), ("pwlm", map_bins)):
                for b, (conf, acc, count) in enumerate(bins):
                    rel_rows.append(
                        {
                            "variant": variant,
                            "bin": b,
                            "mean_confidence": conf,
                            "accuracy": acc,
                            "count": count,
                        }
                    )
            write_table(
                ws.reliability(method, seed),
                ["variant", "bin", "mean_confidence", "accuracy", "count"],
                rel_rows,
                comments=[tag, f"reliability {method} seed {seed}"],
            )
            if method not in reliability_store:
                reliability_store[method] = (raw_bins, map_bins)
            _say(
                quiet,
                f"{method} seed {seed}: acc {raw_rep.accuracy:.3f} "
                f"ece {raw_rep.ece:.4f} -> {map_rep.ece:.4f}",
            )

    for method in cfg.methods:
        seed_rows = per_method[method]
        for stat in ("mean", "stderr"):
            agg = {"method": method, "seed": stat, "n": len(seed_rows)}
            for col in METRIC_COLUMNS:
                mean, stderr = _aggregate([r[col] for r in seed_rows])
                agg[col] = mean if stat == "mean" else stderr
            rows.append(agg)

    write_table(
        ws.metrics_report(),
        ["method", "seed", "n"] + list(METRIC_COLUMNS),
        rows,
        comments=[
            tag,
            "per-seed rows first; aggregate rows use seed=mean|stderr over seeds",
            "stderr = sample standard deviation / sqrt(number of seeds)",
        ],
    )
    _say(quiet, f"metrics report -> {ws.metrics_report()}")

    from . import plotting

    for method, (raw_bins, map_bins) in reliability_store.items():
        fig = ws.figure(f"reliability_{method}.png")
        plotting.plot_reliability(
            fig,
            method,
            [b for b in raw_bins if b[2] > 0],
            [b for b in map_bins if b[2] > 0],
        )
        _say(quiet, f"figure -> {fig}")
    for col in METRIC_COLUMNS:
        summary = {}
        for method in cfg.methods:
            vals = [r[col] for r in per_method[method]]
            summary[method] = _aggregate(vals)
        fig = ws.figure(f"metric_{col}.png")
        plotting.plot_metric_bars(fig, col, summary)
        _say(quiet, f"figure -> {fig}")


def cmd_reject(cfg: ExperimentConfig, ws: Workspace, quiet: bool):
    _write_resolved(cfg, ws)
    tag = f"config {cfg.hash()}"
    thresholds = cfg.reject_thresholds
    rows = []
    curve_acc: dict[tuple[str, str], dict[float, list[float]]] = {}
    curve_cov: dict[tuple[str, str], dict[float, list[float]]] = {}
    for method in cfg.methods:
        for seed in cfg.seeds:
            raw = _require_log(ws.log("test", method, seed))
            pwlm = _fitted_map(cfg, ws, method, seed)
            for variant, records in (("raw", raw), ("pwlm", map_records(pwlm, raw))):
                for point in reject_sweep(records, thresholds):
                    rows.append(
                        {
                            "method": method,
                            "seed": seed,
                            "variant": variant,
                            "threshold": point.threshold,
                            "coverage": point.coverage,
                            "n_retained": point.n_retained,
                            "acc": point.accuracy,
                            "f1": point.f1,
                        }
                    )
                    key = (method, variant)
                    curve_acc.setdefault(key, {}).setdefault(point.threshold, []).append(
                        point.accuracy
                    )
                    curve_cov.setdefault(key, {}).setdefault(point.threshold, []).append(
                        point.coverage
                    )
    write_table(
        ws.reject_report(),
        ["method", "seed", "variant", "threshold", "coverage", "n_retained", "acc", "f1"],
        rows,
        comments=[tag, "metrics over the subset with confidence >= threshold"],
    )
    _say(quiet, f"reject report -> {ws.reject_report()}")

    from . import plotting

    curves = {}
    for key, by_tau in curve_acc.items():
        points = []
        for tau in sorted(by_tau):
            accs = [a for a in by_tau[tau] if not math.isnan(a)]
            covs = curve_cov[key][tau]
            if not accs:
                continue
            points.append(
                RejectPoint(
                    threshold=tau,
                    coverage=float(np.mean(covs)),
                    accuracy=float(np.mean(accs)),
                    f1=math.nan,
                    n_retained=0,
                )
            )
        if points:
            curves[key] = points
    fig = ws.figure("reject.png")
    plotting.plot_reject_curves(fig, curves)
    _say(quiet, f"figure -> {fig}")


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "predict": cmd_predict,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "reject": cmd_reject,
}


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError as exc:
        raise ContractError(f"--seeds expects comma-separated integers: {exc}")


def _parse_methods(text: str) -> list[str]:
    return [m.strip() for m in text.split(",") if m.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evconf",
        description="Dirichlet-based confidence estimation benchmark pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", metavar="PATH", default=None,
                       help="experiment config JSON; defaults apply when omitted")
        p.add_argument("--out", metavar="DIR", default=None,
                       help="output directory (overrides the config)")
        p.add_argument("--seeds", metavar="LIST", default=None,
                       help="comma-separated seed list (overrides the config)")
        p.add_argument("--methods", metavar="LIST", default=None,
                       help="comma-separated method list (overrides the config)")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


_HANDLED = (
    ContractError,
    ParseError,
    UndefinedMetricError,
    NumericError,
    TrainingError,
    OSError,
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(
            args.config,
            out_dir=args.out,
            seeds=_parse_seeds(args.seeds) if args.seeds else None,
            methods=_parse_methods(args.methods) if args.methods else None,
        )
        ws = Workspace(cfg.out_dir)
        COMMANDS[args.command](cfg, ws, args.quiet)
    except _HANDLED as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
