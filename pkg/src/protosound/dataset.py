"""ICBHI-style corpus ingestion, subject-independent splits and a synthetic corpus."""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import dsp
from .dsp import AudioClip
from .wavio import read_wav, write_wav

log = logging.getLogger(__name__)

CLASS_NAMES = ("normal", "crackle", "wheeze", "both")
NUM_CLASSES = len(CLASS_NAMES)
SPLITS = ("train", "devel", "test")


class AnnotationError(ValueError):
    pass


def label_from_flags(crackle: int, wheeze: int) -> int:
    """(0,0)->normal, (1,0)->crackle, (0,1)->wheeze, (1,1)->both."""
    if crackle not in (0, 1) or wheeze not in (0, 1):
        raise ValueError(f"flags must be 0/1, got ({crackle}, {wheeze})")
    return crackle + 2 * wheeze


@dataclass(frozen=True)
class Annotation:
    begin: float
    end: float
    crackle: int
    wheeze: int

    @property
    def label(self) -> int:
        return label_from_flags(self.crackle, self.wheeze)


@dataclass
class CycleRecord:
    audio: AudioClip
    label: int
    subject_id: str
    split: str = "train"
    record_id: str = ""

    def __post_init__(self):
        if not 0 <= self.label < NUM_CLASSES:
            raise ValueError(f"label must be in [0, {NUM_CLASSES - 1}], got {self.label}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")


@dataclass
class CorpusStats:
    counts: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def from_records(cls, records: Iterable[CycleRecord]) -> "CorpusStats":
        counts = {s: np.zeros(NUM_CLASSES, dtype=np.int64) for s in SPLITS}
        for r in records:
            counts[r.split][r.label] += 1
        return cls(counts)

    def row(self, split: str) -> np.ndarray:
        return self.counts[split]

    def column_totals(self) -> np.ndarray:
        return sum(self.counts.values())

    @property
    def total(self) -> int:
        return int(self.column_totals().sum())

    def table(self) -> str:
        header = f"{'#':<8}" + "".join(f"{n.capitalize():>9}" for n in CLASS_NAMES) + f"{'Sum':>9}"
        lines = [header, "-" * len(header)]
        for s in SPLITS:
            c = self.counts[s]
            lines.append(f"{s.capitalize():<8}" + "".join(f"{v:>9d}" for v in c) + f"{int(c.sum()):>9d}")
        lines.append("-" * len(header))
        tot = self.column_totals()
        lines.append(f"{'Sum':<8}" + "".join(f"{v:>9d}" for v in tot) + f"{int(tot.sum()):>9d}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {s: [int(v) for v in c] for s, c in self.counts.items()}


# --- annotation files & cycle extraction ---------------------------------------------
def parse_annotation(text: str) -> List[Annotation]:
    """Parse ``begin end crackle wheeze`` rows (tab or space separated)."""
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 4:
            raise AnnotationError(f"line {lineno}: expected 4 fields, got {len(fields)}")
        try:
            begin, end = float(fields[0]), float(fields[1])
            crackle, wheeze = int(fields[2]), int(fields[3])
        except ValueError as exc:
            raise AnnotationError(f"line {lineno}: {exc}") from None
        if crackle not in (0, 1) or wheeze not in (0, 1):
            raise AnnotationError(f"line {lineno}: flags must be 0 or 1")
        if begin >= end:
            raise AnnotationError(f"line {lineno}: begin ≥ end ({begin} ≥ {end})")
        rows.append(Annotation(begin, end, crackle, wheeze))
    return rows


def extract_cycles(recording: AudioClip, annotations: Sequence[Annotation], subject_id: str,
                   split: str = "train", name: str = "") -> List[CycleRecord]:
    sr = recording.sample_rate
    n = recording.samples.size
    out = []
    for i, ann in enumerate(annotations):
        begin, end = ann.begin, ann.end
        if begin < 0 or end > recording.duration:
            log.warning("%s row %d: [%.3f, %.3f) clamped to recording length %.3f s",
                        name, i, begin, end, recording.duration)
        a = min(max(int(round(begin * sr)), 0), n)
        b = min(max(int(round(end * sr)), 0), n)
        if b <= a:
            log.warning("%s row %d: empty slice skipped", name, i)
            continue
        out.append(CycleRecord(AudioClip(recording.samples[a:b].copy(), sr), ann.label,
                               subject_id, split, f"{name}#{i}"))
    return out


def subject_of(name: str) -> str:
    return Path(name).stem.split("_")[0]


def read_test_list(path) -> set:
    """Names of official test recordings.

    Accepts one name per line; a second column (as in the official split
    file) is honoured, and lines tagged ``train`` are ignored.
    """
    names = set()
    for line in Path(path).read_text().splitlines():
        fields = line.split()
        if not fields:
            continue
        if len(fields) > 1 and fields[1].lower() == "train":
            continue
        names.add(Path(fields[0]).stem)
    return names


def load_corpus(root, test_list: Optional[str] = None, rate: int = dsp.TARGET_RATE) -> List[CycleRecord]:
    """Load every ``<name>.wav`` / ``<name>.txt`` pair under ``root``.

    Recordings are resampled and band-pass filtered before cycles are cut.
    Records named in the test list get split ``test``; the rest ``train``.
    """
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory {root} does not exist")
    if test_list is None and (root / "test_list.txt").exists():
        test_list = root / "test_list.txt"
    test_names = read_test_list(test_list) if test_list else set()

    records: List[CycleRecord] = []
    for wav in sorted(root.glob("*.wav")):
        txt = wav.with_suffix(".txt")
        if not txt.exists():
            log.warning("%s has no annotation file; skipped", wav.name)
            continue
        try:
            annotations = parse_annotation(txt.read_text())
        except AnnotationError as exc:
            raise AnnotationError(f"{txt}: {exc}") from None
        clip = dsp.preprocess(read_wav(wav), rate)
        split = "test" if wav.stem in test_names else "train"
        records.extend(extract_cycles(clip, annotations, subject_of(wav.name), split, wav.stem))
    if not records:
        raise ValueError(f"no annotated recordings found in {root}")
    return records


# --- splits & weights --------------------------------------------------------------
def split_train_devel(records: Sequence[CycleRecord], devel_fraction: float = 0.30,
                      seed: int = 0) -> Tuple[List[CycleRecord], List[CycleRecord]]:
    """Partition subjects (not cycles) into train and devel sets."""
    if not 0 < devel_fraction < 1:
        raise ValueError(f"devel fraction must be in (0, 1), got {devel_fraction}")
    subjects = sorted({r.subject_id for r in records})
    if len(subjects) < 2:
        raise ValueError("need at least two subjects for a subject-independent split")
    order = list(np.random.default_rng(seed).permutation(len(subjects)))
    n_devel = min(max(int(round(devel_fraction * len(subjects))), 1), len(subjects) - 1)
    devel_subjects = {subjects[i] for i in order[:n_devel]}
    train, devel = [], []
    for r in records:
        if r.subject_id in devel_subjects:
            devel.append(dataclasses.replace(r, split="devel"))
        else:
            train.append(dataclasses.replace(r, split="train"))
    return train, devel


def assign_splits(records: Sequence[CycleRecord], devel_fraction: float = 0.30, seed: int = 0):
    """(train, devel, test) lists; test membership is taken from the records.

    ``devel_fraction == 0`` keeps every non-test record in train.
    """
    test = [r for r in records if r.split == "test"]
    rest = [r for r in records if r.split != "test"]
    if devel_fraction == 0:
        return [dataclasses.replace(r, split="train") for r in rest], [], test
    train, devel = split_train_devel(rest, devel_fraction, seed)
    return train, devel, test


def class_counts(records: Iterable[CycleRecord]) -> np.ndarray:
    counts = np.zeros(NUM_CLASSES, dtype=np.int64)
    for r in records:
        counts[r.label] += 1
    return counts


def class_weights(counts) -> np.ndarray:
    """Inverse-frequency weights ``total / (L * count)``."""
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts <= 0):
        raise ValueError(f"every class needs at least one sample, got counts {counts.tolist()}")
    return counts.sum() / (counts.size * counts)


# --- synthetic corpus ----------------------------------------------------------------
def _bandlimited_noise(rng: np.random.Generator, n: int, rate: int, lo: float, hi: float) -> np.ndarray:
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / rate)
    spec[(f < lo) | (f > hi)] = 0.0
    x = np.fft.irfft(spec, n)
    return x / (np.sqrt(np.mean(x * x)) + 1e-12)


def synth_cycle(label: int, duration_s: float, seed: int, rate: int = dsp.TARGET_RATE,
                subject_id: str = "synth", record_id: str = "") -> CycleRecord:
    """Surrogate respiratory cycle with class-specific adventitious sounds.

    normal: band-limited noise under a slow breathing envelope; crackle adds
    short wideband bursts; wheeze adds a sustained tone at 3x the noise RMS;
    both adds the two.
    """
    if not 0 <= label < NUM_CLASSES:
        raise ValueError(f"label must be in [0, {NUM_CLASSES - 1}], got {label}")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate
    noise = _bandlimited_noise(rng, n, rate, 100.0, 1200.0)
    envelope = 0.55 + 0.45 * np.sin(2 * np.pi * 0.25 * t + rng.uniform(0, 2 * np.pi))
    x = noise * envelope
    noise_rms = np.sqrt(np.mean(x * x))

    if label in (1, 3):
        width = max(int(round(0.005 * rate)), 2)
        for _ in range(int(rng.integers(5, 16))):
            start = int(rng.integers(0, max(n - width, 1)))
            burst = rng.standard_normal(width) * np.hanning(width)
            x[start:start + width] += 8.0 * noise_rms * burst[: n - start]
    if label in (2, 3):
        freq = rng.uniform(200.0, 800.0)
        x += 3.0 * noise_rms * np.sqrt(2.0) * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))

    x = 0.5 * x / np.max(np.abs(x))
    return CycleRecord(AudioClip(x, rate), label, subject_id, "train", record_id)


def synth_records(per_class: int, seed: int = 0, n_subjects: int = 10,
                  rate: int = dsp.TARGET_RATE, min_s: float = 3.0, max_s: float = 5.0) -> List[CycleRecord]:
    """``per_class`` cycles of each class spread round-robin over subjects."""
    rng = np.random.default_rng(seed)
    records = []
    for i in range(per_class * NUM_CLASSES):
        label = i % NUM_CLASSES
        subject = str(101 + i % n_subjects)
        duration = float(rng.uniform(min_s, max_s))
        cycle_seed = int(rng.integers(0, 2 ** 31 - 1))
        records.append(synth_cycle(label, duration, cycle_seed, rate, subject, f"{subject}_{i:04d}_synth"))
    return records


def write_synthetic_corpus(out_dir, per_class: int, seed: int = 0, n_subjects: int = 10,
                           test_subjects: int = 0, rate: int = dsp.TARGET_RATE) -> List[Path]:
    """Emit the synthetic corpus as ``<name>.wav`` + ``<name>.txt`` pairs.

    The first ``test_subjects`` subjects are listed in ``test_list.txt``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = synth_records(per_class, seed, n_subjects, rate)
    test_ids = {str(101 + k) for k in range(test_subjects)}
    paths, test_names = [], []
    for r in records:
        wav = out / f"{r.record_id}.wav"
        write_wav(wav, r.audio)
        crackle, wheeze = r.label & 1, r.label >> 1
        end = np.floor(r.audio.duration * 1000) / 1000
        wav.with_suffix(".txt").write_text(f"0.000\t{end:.3f}\t{crackle}\t{wheeze}\n")
        paths.append(wav)
        if r.subject_id in test_ids:
            test_names.append(r.record_id)
    if test_names:
        (out / "test_list.txt").write_text("".join(f"{n}\ttest\n" for n in test_names))
    return paths
