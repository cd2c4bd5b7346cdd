"""Command-line front door: synthesize, train, eval, calibrate, sweep.

Every command that produces results writes into a run directory under the
output root (``$RGANCTR_OUTPUT_ROOT``, default ``./runs``) unless an explicit
``--run-dir`` is given.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .calibration import (
    CalibrationModel,
    calibrate_dataset,
    normalize_scores,
    relative_error,
)
from .config import RunConfig, model_config_hash
from .data import Dataset, SchemaConfig, load_jsonl, write_jsonl
from .errors import ConfigurationError, OutputExistsError, RganCtrError
from .evaluation import auc
from .model import load_checkpoint, save_checkpoint
from .synthetic import (
    SyntheticConfig,
    coerce_fields,
    config_to_text,
    generate_synthetic,
    load_config,
    parse_kv,
    split_by_time,
)
from .training import EPOCH_COLUMNS, METRIC_COLUMNS, train

log = logging.getLogger("rganctr")

OUTPUT_ROOT_ENV = "RGANCTR_OUTPUT_ROOT"
SWEEP_AXES = {"C": int, "T0": float}


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


# ---------------------------------------------------------------------------
# small writers
# ---------------------------------------------------------------------------

def _cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _run_dir(run_dir, stem: str, text: str) -> Path:
    if run_dir:
        return Path(run_dir)
    digest = hashlib.sha256(text.encode()).hexdigest()[:8]
    return output_root() / f"{stem}-{digest}"


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

def load_data(rc: RunConfig) -> tuple[Dataset, Dataset | None]:
    """Train and test sets named by a run config."""
    if rc.synthetic:
        syn = load_config(rc.synthetic)
        ds = generate_synthetic(syn)
        return split_by_time(ds, syn.split_time)
    schema = SchemaConfig(L=rc.L, n_categories=rc.n_categories)
    train_ds = load_jsonl(rc.train_path, schema)
    test_ds = load_jsonl(rc.test_path, schema) if rc.test_path else None
    return train_ds, test_ds


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

SYNTH_FILES = ("train.jsonl", "test.jsonl", "truth.csv", "synthetic.cfg")


def cmd_synthesize(cfg: SyntheticConfig, out_dir, force: bool = False) -> dict:
    """Generate a synthetic dataset and write it split at the date boundary."""
    cfg.validate()
    out = Path(out_dir)
    existing = [f for f in SYNTH_FILES if (out / f).exists()]
    if existing and not force:
        raise OutputExistsError(f"{out}: {', '.join(existing)} already exist (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    ds = generate_synthetic(cfg)
    train_ds, test_ds = split_by_time(ds, cfg.split_time)
    write_jsonl(train_ds, out / "train.jsonl")
    write_jsonl(test_ds, out / "test.jsonl")
    rows = []
    for split, part in (("train", train_ds), ("test", test_ds)):
        for i in range(len(part.label)):
            rows.append(dict(split=split, index=i, label=int(part.label[i]),
                             logit=float(part.extras["logit"][i]),
                             logit_time_blind=float(part.extras["logit_time_blind"][i]),
                             item_id=int(part.extras["item_id"][i])))
    write_csv(out / "truth.csv", ("split", "index", "label", "logit", "logit_time_blind",
                                  "item_id"), rows)
    (out / "synthetic.cfg").write_text(config_to_text(cfg))
    return {"train": len(train_ds.label), "test": len(test_ds.label),
            "split_time": cfg.split_time, "dir": str(out)}


def cmd_train(rc: RunConfig, run_dir, data=None) -> dict:
    """Train one model; write config, metric series, checkpoints and a summary."""
    rc.validate()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.resolved").write_text(rc.to_text())
    train_ds, test_ds = data if data is not None else load_data(rc)
    mc = rc.model_config(train_ds.n_categories, train_ds.aux_dim)
    try:
        result = train(train_ds, test_ds, rc.train_config(), mc)
    except RganCtrError as exc:
        raise type(exc)(f"train run {run_dir}: {exc}") from exc
    write_csv(run_dir / "metrics.csv", METRIC_COLUMNS, result.step_rows)
    write_csv(run_dir / "epochs.csv", EPOCH_COLUMNS, result.epoch_rows)
    digest = model_config_hash(mc)
    extra = {"sampler": rc.sampler, "seed": rc.seed, "model_config_hash": digest}
    save_checkpoint(result.initial, run_dir / "checkpoint_initial.json", extra)
    save_checkpoint(result.discriminator, run_dir / "checkpoint_final.json", extra)
    save_checkpoint(result.best, run_dir / "checkpoint_best.json", extra)
    summary = dict(
        sampler=rc.sampler, seed=rc.seed, epochs=rc.epochs,
        model_config_hash=digest, final_auc=result.final_auc, best_auc=result.best_auc,
        n_train=len(train_ds.label), n_test=len(test_ds.label) if test_ds is not None else 0,
        train_ctr=train_ds.ctr, test_ctr=test_ds.ctr if test_ds is not None else None,
    )
    write_json(run_dir / "summary.json", summary)
    return summary


def cmd_eval(checkpoint, ds: Dataset, run_dir=None) -> dict:
    net = load_checkpoint(checkpoint)
    scores = net.predict(ds)
    report = {"checkpoint": str(checkpoint), "n": len(ds.label), "ctr": ds.ctr,
              "auc": auc(scores, ds.label)}
    if run_dir is not None:
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        write_json(Path(run_dir) / "eval.json", report)
    return report


def cmd_calibrate(checkpoint, train_ds: Dataset, test_ds: Dataset, buckets, epsilon: float,
                  run_dir) -> dict:
    """Fit calibration on training scores, apply to test, report per bucket count and cid3."""
    if not buckets:
        raise ConfigurationError("need at least one bucket count")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    net = load_checkpoint(checkpoint)
    sig_train = normalize_scores(net.predict(train_ds))
    sig_test = normalize_scores(net.predict(test_ds))
    empirical = float(test_ds.label.mean())
    rows, model = [], None
    for n in buckets:
        model = CalibrationModel.fit(sig_train, train_ds.label, n, epsilon)
        mean_cal = calibrate_dataset(sig_test, model)
        rows.append(dict(n=n, mean_calibrated=mean_cal, empirical_ctr=empirical,
                         relative_error=relative_error(mean_cal, empirical)))
    write_csv(run_dir / "calibration.csv", ("n", "mean_calibrated", "empirical_ctr",
                                            "relative_error"), rows)
    model.save(run_dir / "calibration.json")

    cat_rows = []
    target_cid3 = test_ds.cid3[test_ds.target]
    for c in np.unique(target_cid3):
        sel = target_cid3 == c
        emp = float(test_ds.label[sel].mean())
        mean_cal = calibrate_dataset(sig_test, model, target_cid3, c)
        cat_rows.append(dict(cid3=int(c), n_test=int(sel.sum()), empirical_ctr=emp,
                             mean_calibrated=mean_cal,
                             relative_error=relative_error(mean_cal, emp) if emp > 0 else None))
    write_csv(run_dir / "calibration_by_cid3.csv",
              ("cid3", "n_test", "empirical_ctr", "mean_calibrated", "relative_error"), cat_rows)
    return {"buckets": rows, "categories": cat_rows}


def cmd_sweep(rc: RunConfig, axis: str, values, seeds, run_dir, data=None) -> list[dict]:
    """Train once per (value, seed) and summarize final test AUC per value."""
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"sweep axis must be one of {sorted(SWEEP_AXES)}")
    if not values or any(v <= 0 for v in values):
        raise ConfigurationError("sweep values must be positive")
    if not seeds:
        raise ConfigurationError("need at least one seed")
    if len(seeds) < 3:
        log.warning("sweep over %d seed(s); at least 3 are recommended", len(seeds))
    run_dir = Path(run_dir)
    data = data if data is not None else load_data(rc)
    rows = []
    for value in values:
        aucs = []
        for seed in seeds:
            sub = run_dir / f"{axis}={value}" / f"seed={seed}"
            summary = cmd_train(rc.replace(**{axis: value, "seed": seed}), sub, data)
            aucs.append(summary["final_auc"])
        arr = np.asarray([a for a in aucs if a is not None], dtype=np.float64)
        rows.append(dict(
            value=value, n_seeds=len(seeds),
            mean_auc=float(arr.mean()) if arr.size else None,
            std_auc=float(arr.std(ddof=1)) if arr.size > 1 else 0.0,
            aucs=" ".join(repr(float(a)) for a in arr)))
    run_dir.mkdir(parents=True, exist_ok=True)
    write_csv(run_dir / "sweep.csv", ("value", "n_seeds", "mean_auc", "std_auc", "aucs"), rows)
    return rows


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _flag_names(name: str) -> list[str]:
    kebab = name.replace("_", "-")
    names = [f"--{kebab}"]
    if kebab.lower() != kebab:
        names.append(f"--{kebab.lower()}")
    return names


def _add_dataclass_flags(parser, cls, skip=()):
    types = {"int": int, "float": float, "str": str, "bool": _parse_bool}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        parser.add_argument(*_flag_names(f.name), dest=f.name, default=None,
                            type=types.get(str(f.type), str), metavar=str(f.type).upper())


def _overrides(args, cls) -> dict:
    return {f.name: getattr(args, f.name) for f in dataclasses.fields(cls)
            if getattr(args, f.name, None) is not None}


def _run_config(args) -> RunConfig:
    values = parse_kv(Path(args.config).read_text()) if args.config else {}
    values = coerce_fields(RunConfig, values)
    values.update(_overrides(args, RunConfig))
    return RunConfig(**values).validate()


def _int_list(text: str) -> list[int]:
    return [int(float(x)) for x in text.split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rganctr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synthesize", help="generate a synthetic dataset")
    s.add_argument("--config", help="synthetic config file (key = value lines)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--force", action="store_true", help="overwrite existing files")
    _add_dataclass_flags(s, SyntheticConfig)

    for name, helptext in (("train", "train one model"), ("sweep", "sensitivity sweep")):
        t = sub.add_parser(name, help=helptext)
        t.add_argument("--config", help="run config file (key = value lines)")
        t.add_argument("--run-dir", help="explicit run directory")
        _add_dataclass_flags(t, RunConfig)
        if name == "sweep":
            t.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
            t.add_argument("--values", required=True, type=_float_list)
            t.add_argument("--seeds", default=[0, 1, 2], type=_int_list)

    e = sub.add_parser("eval", help="test AUC of a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="JSONL file")
    e.add_argument("--n-categories", type=int, default=None,
                   help="category vocabulary (default: the checkpoint's)")
    e.add_argument("--run-dir")

    c = sub.add_parser("calibrate", help="fit and apply absolute-CTR calibration")
    c.add_argument("--checkpoint", required=True)
    c.add_argument("--config", help="run config naming the data")
    c.add_argument("--run-dir")
    c.add_argument("--buckets", type=_int_list, default=[100, 1000, 10000])
    c.add_argument("--epsilon", type=float, default=0.1)
    _add_dataclass_flags(c, RunConfig)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synthesize":
            values = parse_kv(Path(args.config).read_text()) if args.config else {}
            values = coerce_fields(SyntheticConfig, values)
            values.update(_overrides(args, SyntheticConfig))
            out = cmd_synthesize(SyntheticConfig(**values), args.out, args.force)
        elif args.command == "train":
            rc = _run_config(args)
            out = cmd_train(rc, _run_dir(args.run_dir, f"train-{rc.sampler}", rc.to_text()))
        elif args.command == "sweep":
            rc = _run_config(args)
            cast = SWEEP_AXES[args.axis]
            values = [cast(v) for v in args.values]
            key = rc.to_text() + f"{args.axis}={values} seeds={args.seeds}"
            out = cmd_sweep(rc, args.axis, values, args.seeds,
                            _run_dir(args.run_dir, f"sweep-{args.axis}", key))
        elif args.command == "eval":
            mc = load_checkpoint(args.checkpoint).cfg
            ds = load_jsonl(args.data, SchemaConfig(L=mc.L, n_categories=args.n_categories or mc.n_categories))
            out = cmd_eval(args.checkpoint, ds, args.run_dir)
        else:
            rc = _run_config(args)
            train_ds, test_ds = load_data(rc)
            if test_ds is None:
                raise ConfigurationError("calibration needs test data")
            key = rc.to_text() + f"{args.checkpoint} {args.buckets} {args.epsilon}"
            out = cmd_calibrate(args.checkpoint, train_ds, test_ds, args.buckets, args.epsilon,
                                _run_dir(args.run_dir, "calibrate", key))
    except (RganCtrError, OSError) as exc:
        print(f"rganctr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(out, indent=1, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
