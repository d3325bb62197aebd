"""Seeded end-to-end training, evaluation and checkpoint round-trips."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint as ckpt_io
from .dataset import CycleRecord, class_counts, class_weights
from .dsp import build_feature
from .losses import total_loss
from .metrics import ConfusionMatrix, metrics
from .model import Cnn8Config, ModelConfig, PrototypeNet
from .optim import AdamState, adam_step, lr_at

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("iteration", "lr", "nll", "diverse", "total", "devel_AS")


class NumericalError(ArithmeticError):
    pass


@dataclass
class TrainConfig:
    variant: str = "p2d-ev"
    n_prototypes: int = 1
    norm: Optional[str] = None
    block_channels: Tuple[int, ...] = (64, 128, 256, 512)
    lr0: float = 1e-3
    batch: int = 16
    decay: float = 0.9
    decay_every: int = 200
    max_iter: int = 10000
    alpha: float = 0.1
    seed: int = 0
    checkpoint_every: int = 500
    devel_fraction: float = 0.3
    split_seed: int = 0
    fc_init: str = "class"

    def __post_init__(self):
        self.block_channels = tuple(int(c) for c in self.block_channels)
        for name in ("lr0", "batch", "decay", "decay_every", "max_iter", "checkpoint_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 1 <= self.n_prototypes <= 5:
            raise ValueError(f"n_prototypes must be in [1, 5], got {self.n_prototypes}")
        self.model_config()

    def model_config(self) -> ModelConfig:
        return ModelConfig(variant=self.variant, n_prototypes=self.n_prototypes, norm=self.norm,
                           encoder=Cnn8Config(block_channels=self.block_channels), fc_init=self.fc_init)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_channels"] = list(self.block_channels)
        return d


@dataclass
class TrainResult:
    model: PrototypeNet
    adam: AdamState
    history: List[Dict[str, float]]
    best_as: float = float("nan")
    best_iteration: int = -1
    outputs: Dict[str, Path] = field(default_factory=dict)


# --- features & evaluation -----------------------------------------------------------
def center_features(records: Sequence[CycleRecord]) -> np.ndarray:
    """Test-time (center crop) feature maps stacked to (N, 3, T, F)."""
    return np.stack([build_feature(r.audio, "center").data for r in records])


def evaluate(model: PrototypeNet, records: Sequence[CycleRecord] = (), features=None) -> ConfusionMatrix:
    if features is None:
        features = center_features(records)
    labels = np.array([r.label for r in records])
    return ConfusionMatrix.from_predictions(labels, model.predict(features))


# --- checkpoints ------------------------------------------------------------------------
def make_checkpoint(model: PrototypeNet, adam: AdamState, cfg: TrainConfig, iteration: int,
                    scores: Optional[dict] = None) -> ckpt_io.Checkpoint:
    arrays = {f"param.{n}": p.data for n, p in model.named_parameters().items()}
    arrays.update({f"buffer.{n}": b for n, b in model.named_buffers().items()})
    arrays.update({f"adam.m.{n}": a for n, a in adam.m.items()})
    arrays.update({f"adam.v.{n}": a for n, a in adam.v.items()})
    meta = {
        "format": 1,
        "train_config": cfg.to_dict(),
        "model_config": model.cfg.to_dict(),
        "iteration": iteration,
        "adam": {"step": adam.step, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps},
        "metrics": scores or {},
    }
    return ckpt_io.Checkpoint(meta, arrays)


def save_checkpoint(path, model, adam, cfg, iteration, scores=None) -> None:
    ckpt_io.save(path, make_checkpoint(model, adam, cfg, iteration, scores))


def restore(ck: ckpt_io.Checkpoint) -> Tuple[PrototypeNet, AdamState, TrainConfig]:
    """Rebuild model, optimiser state and config from a loaded checkpoint."""
    try:
        cfg = TrainConfig(**ck.meta["train_config"])
        mcfg = ModelConfig(**ck.meta["model_config"])
        adam_meta = ck.meta["adam"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ckpt_io.CheckpointError(f"checkpoint metadata incomplete: {exc}") from None
    model = PrototypeNet(mcfg)
    params = model.named_parameters()
    buffers = model.named_buffers()
    expected = ({f"param.{n}" for n in params} | {f"buffer.{n}" for n in buffers}
                | {f"adam.m.{n}" for n in params} | {f"adam.v.{n}" for n in params})
    if set(ck.arrays) != expected:
        missing = sorted(expected - set(ck.arrays))
        extra = sorted(set(ck.arrays) - expected)
        raise ckpt_io.CheckpointError(f"array set mismatch; missing {missing[:3]}, unexpected {extra[:3]}")

    def fetch(key, like):
        arr = ck.arrays[key]
        if arr.shape != like.shape:
            raise ckpt_io.CheckpointError(f"{key}: shape {arr.shape} != expected {like.shape}")
        return arr.astype(np.float32)

    for n, p in params.items():
        p.data = fetch(f"param.{n}", p.data)
    for n, b in buffers.items():
        b[...] = fetch(f"buffer.{n}", b)
    adam = AdamState({n: fetch(f"adam.m.{n}", p.data) for n, p in params.items()},
                     {n: fetch(f"adam.v.{n}", p.data) for n, p in params.items()},
                     step=int(adam_meta["step"]), beta1=adam_meta["beta1"],
                     beta2=adam_meta["beta2"], eps=adam_meta["eps"])
    return model, adam, cfg


def load_checkpoint(path):
    return restore(ckpt_io.load(path))


def _cell(v) -> str:
    if v is None:
        return ""
    return str(int(v)) if isinstance(v, (int, np.integer)) else repr(float(v))


def write_history(path, history: Sequence[Dict[str, float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_FIELDS)
        for row in history:
            w.writerow([_cell(row.get(k)) for k in HISTORY_FIELDS])


def draw_batch(rng: np.random.Generator, n_records: int, size: int) -> np.ndarray:
    """Record indices drawn uniformly with replacement (no class re-balancing)."""
    return rng.integers(0, n_records, size=size)


# --- training loop --------------------------------------------------------------------------
def train(train_records: Sequence[CycleRecord], devel_records: Sequence[CycleRecord],
          cfg: TrainConfig, out_dir=None, progress_every: int = 0) -> TrainResult:
    """Train a prototype network; fully deterministic for a given ``cfg.seed``.

    Batches are drawn uniformly with replacement, each draw getting its own
    random 4 s crop. Devel AS is computed every ``checkpoint_every``
    iterations and at the end; ``best.ckpt`` tracks the best devel AS.
    """
    counts = class_counts(train_records)
    if np.any(counts == 0):
        raise ValueError(f"train split lacks a class (counts {counts.tolist()})")
    weights = class_weights(counts)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(cfg.seed)
    model = PrototypeNet(cfg.model_config(), seed=cfg.seed)
    params = model.named_parameters()
    adam = AdamState.for_params({n: p.data for n, p in params.items()})
    labels = np.array([r.label for r in train_records])
    devel_feats = center_features(devel_records) if devel_records else None
    history: List[Dict[str, float]] = []
    result = TrainResult(model, adam, history)

    for it in range(cfg.max_iter):
        idx = draw_batch(rng, len(train_records), cfg.batch)
        x = np.stack([build_feature(train_records[i].audio, "random", rng).data for i in idx])
        model.train()
        model.zero_grad()
        loss, rep = total_loss(model.log_probs(x), labels[idx], weights, model.bank, cfg.alpha)
        lr = lr_at(it, cfg.lr0, cfg.decay, cfg.decay_every)
        if not all(math.isfinite(v) for v in (rep.nll, rep.diverse, rep.total)):
            dump = {"iteration": it, "lr": lr, "batch_indices": idx.tolist(), "loss": asdict(rep),
                    "param_finite": {n: bool(np.all(np.isfinite(p.data))) for n, p in params.items()}}
            if out_dir is not None:
                (out_dir / "nan_dump.json").write_text(json.dumps(dump, indent=2))
            raise NumericalError(f"non-finite loss at iteration {it}: {json.dumps(dump)}")
        loss.backward()
        adam_step({n: p.data for n, p in params.items()}, {n: p.grad for n, p in params.items()}, adam, lr)

        row = {"iteration": it, "lr": lr, "nll": rep.nll, "diverse": rep.diverse,
               "total": rep.total, "devel_AS": None}
        last = it == cfg.max_iter - 1
        if devel_feats is not None and ((it + 1) % cfg.checkpoint_every == 0 or last):
            scores = metrics(evaluate(model, devel_records, devel_feats))
            row["devel_AS"] = scores["AS"]
            if not scores["AS"] <= result.best_as:  # also true while best_as is nan
                result.best_as, result.best_iteration = scores["AS"], it
                if out_dir is not None:
                    save_checkpoint(out_dir / "best.ckpt", model, adam, cfg, it + 1, scores)
        history.append(row)
        if progress_every and (it + 1) % progress_every == 0:
            log.info("iter %d lr %.2e nll %.4f dv %.4f total %.4f", it + 1, lr, rep.nll, rep.diverse, rep.total)

    if out_dir is not None:
        final_scores = {"devel_AS": history[-1]["devel_AS"]} if devel_feats is not None else {}
        save_checkpoint(out_dir / "final.ckpt", model, adam, cfg, cfg.max_iter, final_scores)
        write_history(out_dir / "history.csv", history)
        result.outputs = {"final": out_dir / "final.ckpt", "history": out_dir / "history.csv"}
        if (out_dir / "best.ckpt").exists():
            result.outputs["best"] = out_dir / "best.ckpt"
    return result
