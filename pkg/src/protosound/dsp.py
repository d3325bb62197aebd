"""Audio front end: resampling, band-pass filtering, cropping, log-Mel + deltas."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Union

import numpy as np
from scipy import signal

log = logging.getLogger(__name__)

TARGET_RATE = 4000
CROP_SECONDS = 4.0
WIN = 256
HOP = 128
N_MELS = 128
LOG_EPS = 1e-10
STD_EPS = 1e-8


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate}")
        if self.samples.size == 0:
            raise ValueError("audio clip is empty")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def __len__(self):
        return self.samples.size


@dataclass
class SosFilter:
    """Cascade of biquads, one row ``(b0, b1, b2, a0, a1, a2)`` per section."""

    sections: np.ndarray

    def __post_init__(self):
        self.sections = np.atleast_2d(np.asarray(self.sections, dtype=np.float64))
        if self.sections.shape[1] != 6:
            raise ValueError("each section needs six coefficients")
        a0 = self.sections[:, 3:4]
        self.sections = self.sections / a0

    def poles(self) -> np.ndarray:
        return np.concatenate([np.roots(s[3:]) for s in self.sections])

    def is_stable(self) -> bool:
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def response(self, freqs, rate: float) -> np.ndarray:
        """Complex frequency response at ``freqs`` (Hz)."""
        z1 = np.exp(-2j * np.pi * np.asarray(freqs, dtype=np.float64) / rate)
        h = np.ones_like(z1)
        for b0, b1, b2, a0, a1, a2 in self.sections:
            h *= (b0 + b1 * z1 + b2 * z1 ** 2) / (a0 + a1 * z1 + a2 * z1 ** 2)
        return h


@dataclass
class FeatureMap:
    """(3, T, F) stack of log-Mel, delta and delta-delta."""

    data: np.ndarray

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[0] != 3:
            raise ValueError(f"feature map must be (3, T, F), got {self.data.shape}")

    @property
    def T(self) -> int:
        return self.data.shape[1]

    @property
    def F(self) -> int:
        return self.data.shape[2]


# --- resampling -----------------------------------------------------------------
def _kaiser(u: np.ndarray, beta: float) -> np.ndarray:
    """Continuous Kaiser window on u in [-1, 1], zero outside."""
    inside = np.abs(u) <= 1.0
    arg = np.sqrt(np.clip(1.0 - u * u, 0.0, None))
    return np.where(inside, np.i0(beta * arg) / np.i0(beta), 0.0)


def resample(clip: AudioClip, target_rate: int, zero_crossings: int = 64,
             beta: float = 8.6, block: int = 4096) -> AudioClip:
    """Band-limited windowed-sinc resampling to ``target_rate``.

    The kernel spans ``zero_crossings`` zero crossings of the low-pass sinc
    (cut off at the lower Nyquist) under a Kaiser window.
    """
    if target_rate <= 0:
        raise ValueError(f"target rate must be positive, got {target_rate}")
    src = clip.sample_rate
    if target_rate == src:
        return AudioClip(clip.samples.copy(), src)
    x = clip.samples
    n_out = int(round(Fraction(x.size) * Fraction(target_rate) / Fraction(src)))
    step = src / target_rate
    cutoff = min(1.0, target_rate / src)
    half = zero_crossings / 2 / cutoff
    K = int(np.ceil(half))
    offsets = np.arange(-K, K + 1)

    out = np.empty(n_out)
    for start in range(0, n_out, block):
        n = np.arange(start, min(start + block, n_out))
        t = n * step
        idx = np.floor(t).astype(np.int64)[:, None] + offsets
        d = idx - t[:, None]
        w = cutoff * np.sinc(cutoff * d) * _kaiser(d / half, beta)
        valid = (idx >= 0) & (idx < x.size)
        vals = np.where(valid, x[np.clip(idx, 0, x.size - 1)], 0.0)
        out[start:start + n.size] = (w * vals).sum(axis=1)
    return AudioClip(out, target_rate)


# --- Butterworth band-pass ---------------------------------------------------------
def butter_bandpass(order: int = 5, low: float = 100.0, high: float = 1800.0,
                    rate: float = TARGET_RATE) -> SosFilter:
    """Digital Butterworth band-pass as second-order sections.

    Analog low-pass prototype -> band-pass transform -> bilinear transform
    with the band edges pre-warped.
    """
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if not 0 < low < high:
        raise ValueError(f"need 0 < low < high, got {low}, {high}")
    if high >= rate / 2:
        raise ValueError(f"high edge {high} Hz must be below Nyquist {rate / 2} Hz")

    fs2 = 2.0 * rate
    w1 = fs2 * np.tan(np.pi * low / rate)
    w2 = fs2 * np.tan(np.pi * high / rate)
    bw, w0sq = w2 - w1, w1 * w2

    k = np.arange(1, order + 1)
    lp = np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))
    half = lp * bw / 2
    disc = np.sqrt(half * half - w0sq + 0j)
    analog = np.concatenate([half + disc, half - disc])
    poles = (fs2 + analog) / (fs2 - analog)
    # `order` analog zeros at s=0 contribute fs2 each; the rest map to z=-1
    gain = np.real(bw ** order * fs2 ** order / np.prod(fs2 - analog))

    tol = 1e-9
    upper = [p for p in poles if p.imag > tol]
    real = sorted(p.real for p in poles if abs(p.imag) <= tol)
    denominators = [np.array([1.0, -2 * p.real, abs(p) ** 2]) for p in upper]
    for a, b in zip(real[::2], real[1::2]):
        denominators.append(np.array([1.0, -(a + b), a * b]))
    # least resonant section first
    denominators.sort(key=lambda a: a[2])
    if len(denominators) != order:
        raise RuntimeError("pole pairing failed")

    sections = np.array([np.concatenate([[1.0, 0.0, -1.0], a]) for a in denominators])
    sections[0, :3] *= gain
    return SosFilter(sections)


def sos_apply(clip: AudioClip, filt: SosFilter) -> AudioClip:
    """Causal filtering from zero initial state; output length equals input."""
    y = signal.sosfilt(filt.sections, clip.samples)
    return AudioClip(y, clip.sample_rate)


def preprocess(clip: AudioClip, rate: int = TARGET_RATE) -> AudioClip:
    """Resample to ``rate`` then apply the 5th-order 100-1800 Hz band-pass."""
    clip = resample(clip, rate)
    return sos_apply(clip, butter_bandpass(5, 100.0, 1800.0, rate))


# --- cropping ---------------------------------------------------------------------
def crop_to_length(clip: AudioClip, seconds: float = CROP_SECONDS, mode: str = "center",
                   seed: Union[int, np.random.Generator, None] = None) -> AudioClip:
    """Fix the clip length to ``seconds``; shorter clips are zero-padded symmetrically."""
    if seconds <= 0:
        raise ValueError(f"crop length must be positive, got {seconds}")
    if mode not in ("random", "center"):
        raise ValueError(f"unknown crop mode {mode!r}")
    target = int(round(seconds * clip.sample_rate))
    x = clip.samples
    if x.size < target:
        pad = target - x.size
        x = np.pad(x, (pad // 2, pad - pad // 2))
    if x.size > target:
        if mode == "center":
            start = (x.size - target) // 2
        else:
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
            start = int(rng.integers(0, x.size - target + 1))
        x = x[start:start + target]
    else:
        x = x.copy()
    return AudioClip(x, clip.sample_rate)


# --- spectral features ---------------------------------------------------------------
def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int = N_MELS, n_fft: int = WIN, rate: float = TARGET_RATE) -> np.ndarray:
    """(n_mels, n_fft//2+1) HTK-scale triangles over [0, rate/2], each with peak 1.

    A triangle narrower than one FFT bin on either side is widened to one bin
    so that every filter covers at least one bin, then each row is scaled to
    a maximum of exactly 1.
    """
    freqs = np.fft.rfftfreq(n_fft, 1.0 / rate)
    df = freqs[1] - freqs[0]
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(rate / 2), n_mels + 2))
    lower = np.minimum(edges[:-2], edges[1:-1] - df)
    center = edges[1:-1]
    upper = np.maximum(edges[2:], edges[1:-1] + df)

    f = freqs[None, :]
    rising = (f - lower[:, None]) / (center - lower)[:, None]
    falling = (upper[:, None] - f) / (upper - center)[:, None]
    fb = np.clip(np.minimum(rising, falling), 0.0, None)
    return fb / fb.max(axis=1, keepdims=True)


def mel_bin_of(freq_hz: float, n_mels: int = N_MELS, rate: float = TARGET_RATE, win: int = WIN) -> int:
    """Mel filter that responds most strongly to a pure tone at ``freq_hz``.

    The tone is seen through the same Hann window and FFT as :func:`log_mel`,
    so leakage into neighbouring FFT bins is accounted for.
    """
    t = np.arange(win) / rate
    window = np.hanning(win + 1)[:-1]
    power = np.abs(np.fft.fft(window * np.exp(2j * np.pi * freq_hz * t))[: win // 2 + 1]) ** 2
    return int(np.argmax(mel_filterbank(n_mels, win, rate) @ power))


def log_mel(clip: AudioClip, win: int = WIN, hop: int = HOP, n_mels: int = N_MELS) -> np.ndarray:
    """(T, n_mels) natural-log Mel power from a Hann-windowed STFT, no centre padding."""
    x = clip.samples
    if x.size < win:
        raise ValueError(f"clip has {x.size} samples, fewer than the window length {win}")
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    window = np.hanning(win + 1)[:-1]
    power = np.abs(np.fft.rfft(frames * window, n=win, axis=1)) ** 2
    fb = mel_filterbank(n_mels, win, clip.sample_rate)
    return np.log(power @ fb.T + LOG_EPS)


def num_frames(n_samples: int, win: int = WIN, hop: int = HOP) -> int:
    return (n_samples - win) // hop + 1


def deltas(feat: np.ndarray, half_window: int = 2) -> np.ndarray:
    """Regression deltas along axis 0 with edge replication."""
    feat = np.asarray(feat, dtype=np.float64)
    M = half_window
    T = feat.shape[0]
    padded = np.concatenate([np.repeat(feat[:1], M, axis=0), feat, np.repeat(feat[-1:], M, axis=0)])
    out = np.zeros_like(feat)
    for m in range(1, M + 1):
        out += m * (padded[M + m:M + m + T] - padded[M - m:M - m + T])
    return out / (2 * sum(m * m for m in range(1, M + 1)))


def stack_features(clip: AudioClip) -> np.ndarray:
    """(3, T, F) log-Mel / delta / delta-delta, before standardisation."""
    lm = log_mel(clip)
    d1 = deltas(lm)
    d2 = deltas(d1)
    return np.stack([lm, d1, d2])


def standardize(stack: np.ndarray) -> np.ndarray:
    mu = stack.mean(axis=(1, 2), keepdims=True)
    sd = stack.std(axis=(1, 2), keepdims=True)
    return (stack - mu) / (sd + STD_EPS)


def build_feature(clip: AudioClip, mode: str = "center",
                  seed: Union[int, np.random.Generator, None] = None,
                  seconds: float = CROP_SECONDS) -> FeatureMap:
    """Crop a preprocessed clip and turn it into a standardised (3, T, 128) map."""
    cropped = crop_to_length(clip, seconds, mode, seed)
    return FeatureMap(standardize(stack_features(cropped)).astype(np.float32))
