"""WAV reading/writing limited to 16-bit PCM and 32-bit IEEE float."""
from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .dsp import AudioClip


def read_wav(path) -> AudioClip:
    """Load a WAV file as a mono clip with samples in [-1, 1].

    Multichannel audio is averaged to mono.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", wavfile.WavFileWarning)
        try:
            rate, data = wavfile.read(Path(path))
        except ValueError as exc:
            raise ValueError(f"{path}: unreadable WAV ({exc})") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype} "
                         "(need 16-bit PCM or 32-bit float)")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise ValueError(f"{path}: no audio samples")
    return AudioClip(samples, int(rate))


def write_wav(path, clip: AudioClip, pcm16: bool = True) -> None:
    x = np.clip(clip.samples, -1.0, 1.0)
    if pcm16:
        data = np.clip(np.round(x * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x.astype(np.float32)
    wavfile.write(Path(path), int(clip.sample_rate), data)
