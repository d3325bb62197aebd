"""ICBHI scores from a 4x4 confusion matrix."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .dataset import CLASS_NAMES, NUM_CLASSES

log = logging.getLogger(__name__)


@dataclass
class ConfusionMatrix:
    """``m[true][pred]`` counts in class order normal, crackle, wheeze, both."""

    m: np.ndarray = field(default_factory=lambda: np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64))

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.int64)
        if self.m.shape != (NUM_CLASSES, NUM_CLASSES) or np.any(self.m < 0):
            raise ValueError("confusion matrix must be 4x4 with non-negative counts")

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionMatrix":
        cm = cls()
        cm.update(y_true, y_pred)
        return cm

    def update(self, y_true, y_pred):
        y_true = np.asarray(y_true, dtype=np.int64).reshape(-1)
        y_pred = np.asarray(y_pred, dtype=np.int64).reshape(-1)
        if y_true.shape != y_pred.shape:
            raise ValueError("label and prediction counts differ")
        np.add.at(self.m, (y_true, y_pred), 1)

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.m + other.m)

    @property
    def total(self) -> int:
        return int(self.m.sum())


def _ratio(num: float, den: float, what: str) -> float:
    if den == 0:
        log.warning("%s is undefined (no samples); reported as 0", what)
        return 0.0
    return num / den


def per_class_recall(cm: ConfusionMatrix) -> np.ndarray:
    return np.array([_ratio(cm.m[i, i], cm.m[i].sum(), f"recall of {CLASS_NAMES[i]}")
                     for i in range(NUM_CLASSES)])


def metrics(cm: ConfusionMatrix, binary_se: bool = False) -> Dict[str, float]:
    """SE, SP, AS and UAR.

    SE counts an abnormal cycle as correct only when its exact abnormal class
    is predicted; ``binary_se`` accepts any abnormal prediction instead.
    """
    m = cm.m
    if m.sum() == 0:
        raise ValueError("confusion matrix is empty")
    abnormal_total = m[1:].sum()
    if binary_se:
        hits = m[1:, 1:].sum()
    else:
        hits = m[1, 1] + m[2, 2] + m[3, 3]
    se = float(_ratio(hits, abnormal_total, "SE"))
    sp = float(_ratio(m[0, 0], m[0].sum(), "SP"))
    uar = float(per_class_recall(cm).mean())
    return {"SE": se, "SP": sp, "AS": (se + sp) / 2, "UAR": uar}


def format_report(scores: Dict[str, float], cm: ConfusionMatrix) -> str:
    lines = [f"{k}={v:.4f}" for k, v in scores.items()]
    lines.append("confusion (rows=true, cols=pred; " + ",".join(CLASS_NAMES) + ")")
    lines.extend(" ".join(f"{v:6d}" for v in row) for row in cm.m)
    return "\n".join(lines)


def report_json(scores: Dict[str, float], cm: ConfusionMatrix) -> str:
    return json.dumps({"metrics": scores, "confusion": cm.m.tolist(),
                       "classes": list(CLASS_NAMES)}, indent=2, sort_keys=True)
