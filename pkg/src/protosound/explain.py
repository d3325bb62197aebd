"""Prototype projection onto real cycles and spectrogram export.

Each prototype is matched to the record whose encoder output it resembles
most under the model's own similarity.  The match is reported, the
prototype parameters are left untouched.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .autograd import no_grad
from .dataset import CLASS_NAMES, CycleRecord
from .dsp import crop_to_length, log_mel
from .metrics import ConfusionMatrix, metrics
from .model import PrototypeNet, similarity_scores

log = logging.getLogger(__name__)


@dataclass
class ProjectionResult:
    prototype_index: int
    cls: int
    nearest_index: int
    nearest_record_id: str
    similarity: float
    distance: float
    log_mel_image: np.ndarray = field(repr=False)
    image_path: Optional[str] = None

    @property
    def class_name(self) -> str:
        return CLASS_NAMES[self.cls]

    def to_dict(self) -> dict:
        return {"prototype_index": self.prototype_index, "class": self.class_name,
                "nearest_index": self.nearest_index, "nearest_record_id": self.nearest_record_id,
                "similarity": self.similarity, "distance": self.distance, "image_path": self.image_path}


def similarity_table(model: PrototypeNet, features: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Scalar similarity of every record (rows) to every prototype (columns)."""
    feats = np.asarray(features, dtype=np.float32)
    was_training = model.training
    model.eval()
    try:
        with no_grad():
            rows = [similarity_scores(model.variant, model.features(feats[i:i + batch_size]),
                                      model.bank.prototypes).data
                    for i in range(0, len(feats), batch_size)]
    finally:
        model.train(was_training)
    return np.concatenate(rows).astype(np.float64)


def project(model: PrototypeNet, records: Sequence[CycleRecord], features: Optional[np.ndarray] = None
            ) -> List[ProjectionResult]:
    """Nearest record (largest similarity, smallest ``exp(-S)``) for every prototype.

    ``features`` defaults to the center-crop maps of ``records``.  Ties go to
    the lowest record index.
    """
    if len(records) == 0:
        raise ValueError("cannot project onto an empty split")
    if features is None:
        from .train import center_features
        features = center_features(records)
    if len(features) != len(records):
        raise ValueError(f"{len(features)} feature maps for {len(records)} records")
    scores = similarity_table(model, features)
    bank = model.bank
    results = []
    for k in range(len(bank)):
        j = int(np.argmax(scores[:, k]))  # first maximal index
        s = float(scores[j, k])
        clip = crop_to_length(records[j].audio, mode="center")
        results.append(ProjectionResult(k, bank.class_of(k), j, records[j].record_id or str(j),
                                        s, float(np.exp(-s)), log_mel(clip)))
    return results


def to_pixels(image: np.ndarray) -> np.ndarray:
    """Min-max scale to uint8; a constant image maps to mid-gray."""
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    if not hi > lo:
        log.warning("constant image; exporting mid-gray")
        return np.full(image.shape, 128, dtype=np.uint8)
    return np.rint((image - lo) / (hi - lo) * 255.0).astype(np.uint8)


def export_spectrogram(image: np.ndarray, path) -> Path:
    """Write a (T, F) log-Mel image as binary PGM plus a CSV of the raw values.

    Time runs along x, Mel bin 0 sits on the bottom row.
    """
    image = np.asarray(image)
    if image.ndim != 2 or image.size == 0:
        raise ValueError(f"expected a non-empty (T, F) image, got shape {image.shape}")
    path = Path(path)
    raster = to_pixels(image).T[::-1]  # rows = Mel bins, highest first
    h, w = raster.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + raster.tobytes())
    np.savetxt(path.with_suffix(".csv"), image.astype(np.float32), delimiter=",", fmt="%.9g")
    return path


def read_pgm(path) -> np.ndarray:
    """Minimal binary PGM reader for the files written above."""
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 255:
        raise ValueError("not an 8-bit binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def explain_report(results: Sequence[ProjectionResult], cm: Optional[ConfusionMatrix] = None):
    """Per-class prototype matches plus the metrics block, as (text, json)."""
    if not results:
        raise ValueError("no projection results to report")
    doc = {"classes": {}, "metrics": None}
    for name in CLASS_NAMES:
        doc["classes"][name] = [r.to_dict() for r in results if r.class_name == name]
    if cm is not None:
        doc["metrics"] = {"scores": metrics(cm), "confusion": cm.m.tolist()}

    lines = []
    for name, entries in doc["classes"].items():
        lines.append(f"[{name}] {len(entries)} prototype(s)")
        for e in entries:
            img = f" image={e['image_path']}" if e["image_path"] else ""
            lines.append(f"  p{e['prototype_index']}: record={e['nearest_record_id']} "
                         f"similarity={e['similarity']:.6g} distance={e['distance']:.6g}{img}")
    if doc["metrics"] is not None:
        lines.append(" ".join(f"{k}={v:.4f}" for k, v in doc["metrics"]["scores"].items()))
    return "\n".join(lines), json.dumps(doc, indent=2)
