"""Interpretable prototype networks for respiratory sound classification.

A small numpy-only stack: reverse-mode autodiff, a CNN-8 encoder, prototype
similarity heads, the audio front end and the training/evaluation loop.
"""
from .dataset import CLASS_NAMES, CycleRecord, load_corpus, synth_records
from .dsp import AudioClip, FeatureMap, build_feature
from .model import VARIANTS, ModelConfig, PrototypeNet
from .train import TrainConfig, train

__all__ = ["CLASS_NAMES", "CycleRecord", "load_corpus", "synth_records", "AudioClip", "FeatureMap",
           "build_feature", "VARIANTS", "ModelConfig", "PrototypeNet", "TrainConfig", "train"]
__version__ = "0.1.0"
