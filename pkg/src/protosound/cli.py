"""``protosound`` command line: synth, preprocess, train, eval, project, gradcheck.

Exit codes: 0 ok, 1 usage, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, Optional, Sequence, get_type_hints

import numpy as np

from . import checkpoint as ckpt_io
from .dataset import AnnotationError, CorpusStats, assign_splits, load_corpus, write_synthetic_corpus
from .explain import explain_report, export_spectrogram, project
from .gradcheck import check_model, op_suite, worst_error
from .losses import DegenerateSimilarityError
from .metrics import ConfusionMatrix, format_report, metrics, report_json
from .model import FC_INITS, NORMS, VARIANTS
from .train import NumericalError, TrainConfig, center_features, evaluate, load_checkpoint, train

log = logging.getLogger("protosound")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


# --- run configuration ---------------------------------------------------------------------
@dataclass
class RunConfig:
    """Everything ``train`` needs: corpus, output directory and a TrainConfig."""

    corpus: str
    out: str
    train: TrainConfig
    test_list: Optional[str] = None

    @classmethod
    def from_mapping(cls, values: Dict[str, object]) -> "RunConfig":
        values = dict(values)
        own = {k: values.pop(k) for k in ("corpus", "out", "test_list") if k in values}
        known = {f.name for f in fields(TrainConfig)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
        if not own.get("corpus") or not own.get("out"):
            raise UsageError("both a corpus and an output directory are required")
        try:
            tcfg = TrainConfig(**{k: _coerce(k, v) for k, v in values.items()})
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid training configuration: {exc}") from None
        return cls(str(own["corpus"]), str(own["out"]), tcfg, own.get("test_list"))

    def to_dict(self) -> dict:
        return {"corpus": self.corpus, "out": self.out, "test_list": self.test_list,
                "train": self.train.to_dict()}


def _coerce(key: str, value):
    """Turn config-file strings into the TrainConfig field's type."""
    if not isinstance(value, str):
        return value
    hint = str(get_type_hints(TrainConfig)[key])
    try:
        if key == "block_channels":
            return tuple(int(v) for v in value.replace(",", " ").split())
        if key == "norm":
            return None if value.lower() in ("", "default") else value
        if "int" in hint:
            return int(value)
        if "float" in hint:
            return float(value)
    except ValueError:
        raise UsageError(f"config key {key}: cannot parse {value!r}") from None
    return value


def read_config_file(path) -> Dict[str, str]:
    """``key = value`` lines; blank lines and ``#`` comments are skipped."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file {path} not found")
    out = {}
    for n, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


# flag name -> TrainConfig / RunConfig key
FLAG_KEYS = {"variant": "variant", "norm": "norm", "n_prototypes": "n_prototypes", "alpha": "alpha",
             "seed": "seed", "iters": "max_iter", "batch": "batch", "lr": "lr0",
             "channels": "block_channels", "devel_fraction": "devel_fraction",
             "split_seed": "split_seed", "checkpoint_every": "checkpoint_every",
             "fc_init": "fc_init", "corpus": "corpus", "out": "out", "test_list": "test_list"}


def run_config_from_args(args) -> RunConfig:
    # config files may use either flag names (iters, lr, ...) or field names (max_iter, lr0, ...)
    raw = read_config_file(args.config) if args.config else {}
    values: Dict[str, object] = {FLAG_KEYS.get(k, k): v for k, v in raw.items()}
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = tuple(v) if key == "block_channels" else v
    return RunConfig.from_mapping(values)


# --- helpers -----------------------------------------------------------------------------------
def prepare_output(path, force: bool) -> Path:
    """Create ``path``; refuse to reuse a non-empty directory unless forced."""
    path = Path(path)
    if path.exists() and not path.is_dir():
        raise UsageError(f"output path {path} exists and is not a directory")
    if path.is_dir() and any(path.iterdir()):
        if not force:
            raise UsageError(f"output directory {path} is not empty; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _splits(corpus: str, tcfg: TrainConfig, test_list: Optional[str] = None):
    records = load_corpus(corpus, test_list)
    train_r, devel_r, test_r = assign_splits(records, tcfg.devel_fraction, tcfg.split_seed)
    return records, {"train": train_r, "devel": devel_r, "test": test_r}


def _split_records(corpus, tcfg, split, test_list=None):
    _, splits = _splits(corpus, tcfg, test_list)
    if not splits[split]:
        raise ValueError(f"split {split!r} is empty for corpus {corpus}")
    return splits[split]


# --- commands --------------------------------------------------------------------------------
def cmd_synth(args) -> int:
    out = prepare_output(args.out, args.force)
    paths = write_synthetic_corpus(out, args.per_class, args.seed, args.subjects, args.test_subjects)
    print(f"wrote {len(paths)} recordings to {out}")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    tcfg = TrainConfig(devel_fraction=args.devel_fraction, split_seed=args.split_seed)
    records, splits = _splits(args.corpus, tcfg, args.test_list)
    out = prepare_output(args.out, args.force)
    ordered = [r for name in ("train", "devel", "test") for r in splits[name]]
    np.savez(out / "features.npz", features=center_features(ordered),
             labels=np.array([r.label for r in ordered]),
             splits=np.array([r.split for r in ordered]),
             record_ids=np.array([r.record_id for r in ordered]))
    stats = CorpusStats.from_records(ordered)
    (out / "stats.json").write_text(json.dumps(stats.to_dict(), indent=2))
    table = stats.table()
    (out / "stats.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


def cmd_train(args) -> int:
    run = run_config_from_args(args)
    _, splits = _splits(run.corpus, run.train, run.test_list)
    if not splits["train"]:
        raise ValueError("no training records")
    out = prepare_output(run.out, args.force)
    (out / "run_config.json").write_text(json.dumps(run.to_dict(), indent=2, sort_keys=True))
    result = train(splits["train"], splits["devel"], run.train, out, progress_every=args.progress)
    summary = {"best_devel_AS": None if np.isnan(result.best_as) else result.best_as,
               "best_iteration": result.best_iteration, "final": result.history[-1]}
    if splits["devel"]:
        cm = evaluate(result.model, splits["devel"])
        summary["devel"] = {"metrics": metrics(cm), "confusion": cm.m.tolist()}
    (out / "metrics.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _, tcfg = load_checkpoint(args.checkpoint)
    records = _split_records(args.corpus, tcfg, args.split, args.test_list)
    cm = evaluate(model, records)
    scores = metrics(cm, binary_se=args.binary_se)
    print(format_report(scores, cm))
    if args.out:
        out = prepare_output(args.out, args.force)
        (out / "report.txt").write_text(format_report(scores, cm) + "\n")
        (out / "report.json").write_text(report_json(scores, cm))
    return EXIT_OK


def cmd_project(args) -> int:
    model, _, tcfg = load_checkpoint(args.checkpoint)
    records = _split_records(args.corpus, tcfg, args.split, args.test_list)
    out = prepare_output(args.out, args.force)
    feats = center_features(records)
    results = project(model, records, feats)
    for r in results:
        path = export_spectrogram(r.log_mel_image, out / f"prototype_{r.prototype_index:02d}.pgm")
        r.image_path = path.name
    cm = ConfusionMatrix.from_predictions([r.label for r in records], model.predict(feats))
    text, doc = explain_report(results, cm)
    (out / "report.txt").write_text(text + "\n")
    (out / "report.json").write_text(doc)
    print(text)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    failed = False
    for name, worst in op_suite(seed=args.seed).items():
        ok = worst < GRADCHECK_TOL
        failed |= not ok
        print(f"{name:14s} max rel err {worst:.3e} {'ok' if ok else 'FAIL'}")
    for variant in args.variant or VARIANTS:
        worst = worst_error(check_model(variant, seed=args.seed))
        ok = worst < GRADCHECK_TOL
        failed |= not ok
        print(f"{variant:14s} max rel err {worst:.3e} {'ok' if ok else 'FAIL'}")
    return EXIT_NUMERIC if failed else EXIT_OK


# --- argument parsing -------------------------------------------------------------------------
class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="protosound", description="Prototype networks for respiratory sound classification.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def corpus_args(p, split=False):
        p.add_argument("--corpus", required=True, help="directory of <name>.wav/<name>.txt pairs")
        p.add_argument("--test-list", help="official test list (defaults to <corpus>/test_list.txt)")
        if split:
            p.add_argument("--split", choices=("train", "devel", "test"), default="test")

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("out")
    p.add_argument("--per-class", type=_positive_int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--subjects", type=_positive_int, default=10)
    p.add_argument("--test-subjects", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="cache center-crop features and print corpus statistics")
    corpus_args(p)
    p.add_argument("--out", required=True)
    p.add_argument("--devel-fraction", type=float, default=0.3)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a prototype network")
    p.add_argument("--corpus")
    p.add_argument("--test-list")
    p.add_argument("--out")
    p.add_argument("--config", help="key = value file; command-line flags take precedence")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--norm", choices=NORMS)
    p.add_argument("--fc-init", choices=FC_INITS, help="classifier init; class ties each prototype to its class")
    p.add_argument("--n-prototypes", type=int, choices=range(1, 6), metavar="{1..5}")
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=_positive_int)
    p.add_argument("--batch", type=_positive_int)
    p.add_argument("--lr", type=float)
    p.add_argument("--channels", type=_positive_int, nargs=4, metavar="C")
    p.add_argument("--devel-fraction", type=float)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--checkpoint-every", type=_positive_int)
    p.add_argument("--progress", type=int, default=0, help="log every N iterations")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="confusion matrix and SE/SP/AS/UAR of a checkpoint")
    p.add_argument("checkpoint")
    corpus_args(p, split=True)
    p.add_argument("--binary-se", action="store_true", help="count any abnormal prediction as a hit")
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("project", help="match prototypes to their closest records")
    p.add_argument("checkpoint")
    corpus_args(p, split=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and model variant")
    p.add_argument("--variant", choices=VARIANTS, action="append")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"protosound: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, DegenerateSimilarityError, FloatingPointError) as exc:
        print(f"protosound: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, AnnotationError, ckpt_io.CheckpointError, ValueError) as exc:
        print(f"protosound: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
