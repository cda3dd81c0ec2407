"""Command-line surface for the whole pipeline.

Commands: preprocess, stats, cv, train, predict, visualize,
export-submission. Every command accepts --config pointing at a JSON run
config; explicit flags override file values, and the merged effective config
is written next to the command's outputs so any run can be replayed.

Exit codes: 0 success, 1 processing failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ingest, resample
from .errors import BytecnnError
from .models import ARCHITECTURES, ModelConfig, Model, load_model, save_model, write_submission
from .sampling import stratified_subsample
from .train_eval import (
    TrainConfig,
    cross_validate,
    stack_dataset,
    train_final,
    write_report,
)


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    """Everything needed to replay a run: paths, model, training, flags."""

    data_dir: str = None
    labels: str = None
    cache_dir: str = None
    model_path: str = None
    out_dir: str = None
    resample_method: str = "linear"
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    flags: dict = field(default_factory=dict)  # command-specific extras

    def to_json(self) -> str:
        d = dataclasses.asdict(self)
        d["model"]["conv_filters"] = list(d["model"]["conv_filters"])
        return json.dumps(d, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        model = d.pop("model", {})
        train = d.pop("train", {})
        if "conv_filters" in model:
            model["conv_filters"] = tuple(model["conv_filters"])
        known = {f.name for f in dataclasses.fields(cls)} - {"model", "train"}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        return cls(model=ModelConfig(**model), train=TrainConfig(**train), **d)


_MODEL_FLAGS = ("architecture", "seed")
_TRAIN_FLAGS = ("epochs", "batch_size", "sampler_mode", "learning_rate", "seed")


def _merge_config(args) -> RunConfig:
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            cfg = RunConfig.from_dict(json.loads(path.read_text()))
        except (json.JSONDecodeError, TypeError, ValueError) as exc:
            raise UsageError(f"bad config file {path}: {exc}")
    else:
        cfg = RunConfig()
    for name in ("data_dir", "labels", "cache_dir", "out_dir", "resample_method"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "model", None) is not None:
        cfg.model_path = args.model
    model_kw = {}
    if getattr(args, "architecture", None) is not None:
        model_kw["architecture"] = args.architecture
    if getattr(args, "model_seed", None) is not None:
        model_kw["seed"] = args.model_seed
    if model_kw:
        cfg.model = dataclasses.replace(cfg.model, **model_kw)
    train_kw = {}
    for flag, attr in (("epochs", "epochs"), ("batch_size", "batch_size"),
                       ("sampler", "sampler_mode"), ("lr", "learning_rate"), ("seed", "seed")):
        value = getattr(args, flag, None)
        if value is not None:
            train_kw[attr] = value
    if train_kw:
        cfg.train = dataclasses.replace(cfg.train, **train_kw)
    return cfg


def _write_effective_config(cfg: RunConfig, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "effective_config.json").write_text(cfg.to_json())


def _require(cfg: RunConfig, *names):
    for name in names:
        if getattr(cfg, name) is None:
            raise UsageError(f"missing required setting --{name.replace('_', '-')}")
    for name in set(names) & {"data_dir", "labels", "model_path"}:
        value = Path(getattr(cfg, name))
        if name == "data_dir" and not value.is_dir():
            raise UsageError(f"data directory not found: {value}")
        if name in ("labels", "model_path") and not value.is_file():
            raise UsageError(f"file not found: {value}")


def _load_resampled_corpus(cfg: RunConfig):
    samples = ingest.load_corpus(cfg.data_dir, cfg.labels)
    out = []
    for s in samples:
        rs = resample.resample_cached(s.sequence, cfg.cache_dir, method=cfg.resample_method)
        out.append(ingest.LabeledSample(rs, s.label))
    return out


def _print_family_mapping(fh=sys.stdout):
    print("class-index mapping: " + ", ".join(f"{i}={n}" for i, n in enumerate(ingest.FAMILY_NAMES)), file=fh)


# ---------------------------------------------------------------------------
# commands


def cmd_preprocess(args) -> int:
    cfg = _merge_config(args)
    _require(cfg, "data_dir", "cache_dir")
    cfg.flags = {"command": "preprocess"}
    files = ingest.find_sample_files(cfg.data_dir)
    _write_effective_config(cfg, cfg.cache_dir)
    processed = 0
    skipped = 0
    failures = []
    t0 = time.perf_counter()
    for sample_id in sorted(files):
        if resample.cache_path(cfg.cache_dir, sample_id).exists():
            skipped += 1
            continue
        try:
            seq = ingest.read_sample_file(files[sample_id])
            resample.write_cache(cfg.cache_dir, resample.resample_linear(seq, method=cfg.resample_method))
            processed += 1
        except (BytecnnError, OSError) as exc:
            failures.append((sample_id, str(exc)))
    elapsed = time.perf_counter() - t0
    per_file = elapsed / processed if processed else 0.0
    print(f"preprocess: {processed} processed, {skipped} cached, {len(failures)} failed")
    print(f"preprocess: total {elapsed:.2f} s, average {per_file:.4f} s/file")
    for sample_id, msg in failures:
        print(f"FAILED {sample_id}: {msg}", file=sys.stderr)
    return 1 if failures else 0


def cmd_stats(args) -> int:
    cfg = _merge_config(args)
    _require(cfg, "data_dir", "labels")
    cfg.flags = {"command": "stats"}
    samples = ingest.load_corpus(cfg.data_dir, cfg.labels)
    stats = ingest.corpus_stats(samples)
    _print_family_mapping()
    print(f"samples: {stats.total}")
    for c in range(ingest.NUM_CLASSES):
        print(f"{c},{ingest.FAMILY_NAMES[c]},{stats.per_class_counts.get(c, 0)}")
    if cfg.out_dir:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_effective_config(cfg, out)
        with (out / "class_counts.csv").open("w") as fh:
            fh.write("class,family,count\n")
            for c in range(ingest.NUM_CLASSES):
                fh.write(f"{c},{ingest.FAMILY_NAMES[c]},{stats.per_class_counts.get(c, 0)}\n")
        with (out / "size_histogram.csv").open("w") as fh:
            fh.write("kb_bucket,count\n")
            for bucket in sorted(stats.size_histogram):
                fh.write(f"{bucket},{stats.size_histogram[bucket]}\n")
    return 0


def _cv_single(samples, cfg: RunConfig, folds: int, out_dir: Path):
    report = cross_validate(samples, cfg.model, cfg.train, k=folds, out_dir=out_dir)
    write_report(report, out_dir, ingest.FAMILY_NAMES)
    return report


def cmd_cv(args) -> int:
    cfg = _merge_config(args)
    _require(cfg, "data_dir", "labels", "out_dir")
    cfg.flags = {"command": "cv", "folds": args.folds, "subsample": args.subsample, "sweep": args.sweep}
    samples = _load_resampled_corpus(cfg)
    if args.subsample is not None:
        samples = stratified_subsample(samples, args.subsample, seed=cfg.train.seed)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_effective_config(cfg, out_dir)
    _print_family_mapping()
    if not args.sweep:
        report = _cv_single(samples, cfg, args.folds, out_dir)
        print(f"cv: accuracy {report.micro_accuracy:.4f}, macro F1 {report.macro_f1:.4f}, "
              f"log-loss {report.avg_log_loss:.4f}")
        return 0
    rows = []
    for arch in ARCHITECTURES:
        for sampler in ("default", "rebalance"):
            sub = dataclasses.replace(cfg)
            sub.model = dataclasses.replace(cfg.model, architecture=arch)
            sub.train = dataclasses.replace(cfg.train, sampler_mode=sampler)
            combo_dir = out_dir / f"{arch}_{sampler}"
            combo_dir.mkdir(parents=True, exist_ok=True)
            report = _cv_single(samples, sub, args.folds, combo_dir)
            rows.append((arch, sampler, report.micro_accuracy, report.macro_f1, report.avg_log_loss))
            print(f"cv: {arch} + {sampler}: accuracy {report.micro_accuracy:.4f}, "
                  f"macro F1 {report.macro_f1:.4f}")
    with (out_dir / "comparison.csv").open("w") as fh:
        fh.write("architecture,sampler,accuracy,macro_f1,avg_log_loss\n")
        for arch, sampler, acc, f1, ll in rows:
            fh.write(f"{arch},{sampler},{acc:.4f},{f1:.4f},{ll:.4f}\n")
    return 0


def cmd_train(args) -> int:
    cfg = _merge_config(args)
    _require(cfg, "data_dir", "labels", "out_dir")
    cfg.flags = {"command": "train"}
    samples = _load_resampled_corpus(cfg)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_effective_config(cfg, out_dir)
    model, history, best_epoch = train_final(samples, cfg.model, cfg.train,
                                             history_path=out_dir / "history.csv")
    model_path = Path(cfg.model_path) if cfg.model_path else out_dir / "model.bcnn"
    save_model(model, model_path)
    best = history[best_epoch]
    _print_family_mapping()
    print(f"train: best epoch {best_epoch}, val log-loss {best[3]:.4f}, val accuracy {best[4]:.4f}")
    print(f"train: weights written to {model_path}")
    return 0


def _expand_inputs(inputs):
    paths = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            found = ingest.find_sample_files(p)
            paths.extend(found[sid] for sid in sorted(found))
        else:
            paths.append(p)
    return paths


def cmd_predict(args) -> int:
    cfg = _merge_config(args)
    _require(cfg, "model_path")
    cfg.flags = {"command": "predict", "submission": args.submission}
    model = load_model(cfg.model_path)
    paths = _expand_inputs(args.inputs)
    if not paths:
        raise UsageError("no input files")
    t0 = time.perf_counter()
    rows = []  # (sample_id, values or None, error message)
    for path in paths:
        try:
            seq = ingest.read_sample_file(path)
            rs = resample.resample_cached(seq, cfg.cache_dir, method=cfg.resample_method)
            rows.append((seq.sample_id, rs.values, None))
        except (BytecnnError, OSError) as exc:
            rows.append((Path(path).stem, None, str(exc)))
    valid = [i for i, r in enumerate(rows) if r[1] is not None]
    probs = np.empty((len(rows), model.config.num_classes))
    probs.fill(np.nan)
    if valid:
        x = np.stack([rows[i][1] for i in valid]).astype(np.float32)
        probs[valid] = model.predict_proba(x)
    elapsed = time.perf_counter() - t0

    header = "Id,Family," + ",".join(f"P_{name}" for name in ingest.FAMILY_NAMES)
    lines = [header]
    for (sample_id, values, err), p in zip(rows, probs):
        if err is not None:
            lines.append(f"{sample_id},ERROR," + ",".join([""] * model.config.num_classes))
            print(f"FAILED {sample_id}: {err}", file=sys.stderr)
        else:
            family = ingest.FAMILY_NAMES[int(p.argmax())]
            lines.append(f"{sample_id},{family}," + ",".join(f"{v:.9f}" for v in p))
    text = "\n".join(lines) + "\n"
    if args.out:
        out_path = Path(args.out)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text(text)
        _write_effective_config(cfg, out_path.parent)
    else:
        sys.stdout.write(text)
    if args.submission:
        ok = [(rows[i][0], probs[i]) for i in valid]
        write_submission(args.submission, [sid for sid, _ in ok], np.array([p for _, p in ok]))
    print(f"predict: {len(paths)} files in {elapsed:.2f} s "
          f"({elapsed / len(paths):.4f} s/file end to end)", file=sys.stderr)
    return 1 if len(valid) != len(rows) else 0


def cmd_visualize(args) -> int:
    cfg = _merge_config(args)
    cfg.flags = {"command": "visualize", "width": args.width}
    path = Path(args.input)
    if not path.is_file():
        raise UsageError(f"input file not found: {path}")
    seq = ingest.read_sample_file(path)
    rs = resample.resample_linear(seq, method=cfg.resample_method)
    Path(args.out).write_bytes(resample.export_pgm(rs, args.width))
    print(f"visualize: wrote {args.out}")
    return 0


def cmd_export_submission(args) -> int:
    cfg = _merge_config(args)
    _require(cfg, "model_path", "data_dir")
    cfg.flags = {"command": "export-submission"}
    model = load_model(cfg.model_path)
    files = ingest.find_sample_files(cfg.data_dir)
    if not files:
        raise UsageError(f"no sample files in {cfg.data_dir}")
    ids = sorted(files)
    values = []
    for sample_id in ids:
        seq = ingest.read_sample_file(files[sample_id])
        values.append(resample.resample_cached(seq, cfg.cache_dir, method=cfg.resample_method).values)
    probs = model.predict_proba(np.stack(values).astype(np.float32))
    write_submission(args.out, ids, probs)
    _write_effective_config(cfg, Path(args.out).parent)
    print(f"export-submission: {len(ids)} rows written to {args.out}")
    return 0


# ---------------------------------------------------------------------------


def _add_common(p, *, paths=(), model_flags=False, train_flags=False):
    p.add_argument("--config", help="JSON run config; flags override its values")
    for name in paths:
        p.add_argument(f"--{name.replace('_', '-')}", dest=name)
    p.add_argument("--resample-method", dest="resample_method", choices=("linear", "area"))
    if model_flags:
        p.add_argument("--architecture", choices=ARCHITECTURES)
        p.add_argument("--model-seed", dest="model_seed", type=int)
    if train_flags:
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--sampler", choices=("default", "rebalance"))
        p.add_argument("--lr", type=float)
        p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bytecnn",
                                     description="Malware family classification from raw bytes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="resample samples into the on-disk cache")
    _add_common(p, paths=("data_dir", "cache_dir"))
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("stats", help="corpus class counts and size histogram")
    _add_common(p, paths=("data_dir", "labels", "out_dir"))
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation")
    _add_common(p, paths=("data_dir", "labels", "cache_dir", "out_dir"), model_flags=True, train_flags=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--subsample", type=float, help="stratified fraction of the corpus to use")
    p.add_argument("--sweep", action="store_true", help="run all architecture x sampler combinations")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("train", help="train the final model (90/10 split, best epoch kept)")
    _add_common(p, paths=("data_dir", "labels", "cache_dir", "out_dir"), model_flags=True, train_flags=True)
    p.add_argument("--model", help="where to write the weight file (default out_dir/model.bcnn)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="classify binaries or hex dumps with a trained model")
    _add_common(p, paths=("cache_dir",))
    p.add_argument("--model", required=True)
    p.add_argument("inputs", nargs="+", help="sample files or directories")
    p.add_argument("--out", help="write rows to this CSV (default stdout)")
    p.add_argument("--submission", help="also write a challenge submission file")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("visualize", help="export one sample as a greyscale PGM image")
    _add_common(p)
    p.add_argument("input")
    p.add_argument("--width", type=int, default=100)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("export-submission", help="predict a directory and write the submission file")
    _add_common(p, paths=("data_dir", "cache_dir"))
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_submission)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (BytecnnError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
