"""CNN-8 encoder, prototype banks and the classification heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from . import similarity as sim
from .autograd import Variable, log_softmax, no_grad, relu, softmax, transpose
from .nn import BatchNorm, Conv2d, LayerNorm, Linear, Module, global_maxpool, maxpool2d, parameter

VARIANTS = ("p1d", "p2d-ev", "p2d-av", "p2d-mv", "p2d-ea", "p2d-ma")
VANILLA = ("p2d-ev", "p2d-av", "p2d-mv")
ATTENTION = ("p2d-ea", "p2d-ma")
NORMS = ("none", "batch", "layer")
FC_INITS = ("class", "random")

# per-variant head normalisation when none is requested explicitly
DEFAULT_NORM = {
    "p1d": "layer",
    "p2d-ev": "batch",
    "p2d-av": "batch",
    "p2d-mv": "none",
    "p2d-ea": "layer",
    "p2d-ma": "layer",
}


@dataclass
class Cnn8Config:
    block_channels: Tuple[int, ...] = (64, 128, 256, 512)
    conv_kernel: int = 3
    input_channels: int = 3

    def __post_init__(self):
        self.block_channels = tuple(int(c) for c in self.block_channels)
        if len(self.block_channels) != 4:
            raise ValueError("CNN-8 needs exactly 4 blocks")
        if any(b <= a for a, b in zip(self.block_channels, self.block_channels[1:])):
            raise ValueError(f"block channels must increase strictly, got {self.block_channels}")
        if self.conv_kernel % 2 == 0:
            raise ValueError("conv kernel must be odd")


@dataclass
class ModelConfig:
    variant: str = "p2d-ev"
    n_prototypes: int = 1
    n_classes: int = 4
    norm: Optional[str] = None
    input_shape: Tuple[int, int] = (124, 128)
    encoder: Cnn8Config = field(default_factory=Cnn8Config)
    fc_init: str = "class"

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = Cnn8Config(**self.encoder)
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.norm is None:
            self.norm = DEFAULT_NORM[self.variant]
        if self.norm not in NORMS:
            raise ValueError(f"unknown head norm {self.norm!r}; choose from {NORMS}")
        if not 1 <= self.n_prototypes <= 5:
            raise ValueError(f"prototypes per class must be in [1, 5], got {self.n_prototypes}")
        if self.fc_init not in FC_INITS:
            raise ValueError(f"unknown fc init {self.fc_init!r}; choose from {FC_INITS}")

    @property
    def encoder_output_shape(self) -> Tuple[int, int, int]:
        t, r = self.input_shape
        for _ in self.encoder.block_channels:
            t, r = t // 2, r // 2
        if t < 1 or r < 1:
            raise ValueError(f"input {self.input_shape} too small for four 2x2 poolings")
        return self.encoder.block_channels[-1], t, r

    @property
    def prototype_shape(self) -> Tuple[int, ...]:
        c, t, r = self.encoder_output_shape
        return (c,) if self.variant == "p1d" else (c, t, r)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        d["encoder"]["block_channels"] = list(self.encoder.block_channels)
        return d


class ConvBlock(Module):
    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator):
        pad = kernel // 2
        self.conv1 = Conv2d(cin, cout, kernel, pad, rng, channel_first=True)
        self.bn1 = BatchNorm(cout, channel_axis=0)
        self.conv2 = Conv2d(cout, cout, kernel, pad, rng, channel_first=True)
        self.bn2 = BatchNorm(cout, channel_axis=0)

    def __call__(self, x):
        x = relu(self.bn1(self.conv1(x)))
        x = relu(self.bn2(self.conv2(x)))
        return maxpool2d(x, 2)


class Encoder(Module):
    """Four [conv-BN-ReLU] x2 + 2x2 max-pool blocks.

    Maps (B, 3, T, F) to (B, C, T/16, F/16); activations run channel-first
    internally.
    """

    def __init__(self, cfg: Cnn8Config, rng: np.random.Generator):
        self.cfg = cfg
        chans = (cfg.input_channels,) + cfg.block_channels
        self.blocks = [ConvBlock(a, b, cfg.conv_kernel, rng) for a, b in zip(chans, chans[1:])]

    def __call__(self, x):
        x = transpose(x, (1, 0, 2, 3))
        for block in self.blocks:
            x = block(x)
        return transpose(x, (1, 0, 2, 3))


class PrototypeBank(Module):
    """``n_classes * n_per_class`` prototypes; row i belongs to class ``i // n_per_class``."""

    def __init__(self, variant: str, n_classes: int, n_per_class: int, shape: Sequence[int],
                 rng: np.random.Generator):
        self.variant = variant
        self.n_classes = n_classes
        self.n_per_class = n_per_class
        init = rng.uniform(-0.5, 0.5, (n_classes * n_per_class,) + tuple(shape))
        self.prototypes = parameter(init.astype(np.float32))

    def __len__(self):
        return self.n_classes * self.n_per_class

    def class_of(self, i: int) -> int:
        return i // self.n_per_class

    @property
    def is_1d(self) -> bool:
        return self.variant == "p1d"


def similarity_scores(variant: str, f, p) -> Variable:
    """Scalar similarity of each feature map to each prototype: (B, K)."""
    if variant == "p1d":
        return sim.sim_1d(f, p)
    if variant == "p2d-ev":
        return sim.scalarize(sim.sim_2ev(f, p))
    if variant == "p2d-av":
        return sim.scalarize(sim.sim_2av(f, p))
    if variant == "p2d-mv":
        return sim.scalarize(sim.sim_2mv(f, p))
    if variant == "p2d-ea":
        return sim.sim_2ea(f, p)
    if variant == "p2d-ma":
        return sim.sim_2ma(f, p)
    raise ValueError(f"unknown variant {variant!r}")


def class_connection(n_classes: int, n_per_class: int) -> np.ndarray:
    """FC weights tying each prototype to its own class: +1 own class, -0.5 others.

    Without this the classifier may read a prototype as evidence for any
    class, and projections stop being class exemplars.
    """
    owner = np.arange(n_classes * n_per_class) // n_per_class
    return np.where(np.arange(n_classes)[:, None] == owner[None], 1.0, -0.5).astype(np.float32)


class PrototypeNet(Module):
    """Encoder -> prototype similarities -> [norm] -> FC -> softmax."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.encoder = Encoder(cfg.encoder, rng)
        self.bank = PrototypeBank(cfg.variant, cfg.n_classes, cfg.n_prototypes, cfg.prototype_shape, rng)
        k = len(self.bank)
        if cfg.norm == "batch":
            self.head_norm = BatchNorm(k)
        elif cfg.norm == "layer":
            self.head_norm = LayerNorm(k)
        else:
            self.head_norm = None
        self.fc = Linear(k, cfg.n_classes, rng)
        if cfg.fc_init == "class":
            self.fc.weight.data[...] = class_connection(cfg.n_classes, cfg.n_prototypes)

    @property
    def variant(self) -> str:
        return self.cfg.variant

    def _input(self, x) -> Variable:
        data = x.data if isinstance(x, Variable) else np.asarray(getattr(x, "data", x))
        if data.ndim == 3:
            data = data[None]
        expected = (self.cfg.encoder.input_channels,) + self.cfg.input_shape
        if data.ndim != 4 or data.shape[1:] != expected:
            raise ValueError(f"expected input (B, {expected}), got {data.shape}")
        if isinstance(x, Variable) and x.ndim == 4:
            return x
        return Variable(data.astype(self.fc.weight.dtype, copy=False))

    def features(self, x) -> Variable:
        """Encoder output (B, C, T, R); for P1D pooled to (B, C)."""
        f = self.encoder(self._input(x))
        return global_maxpool(f) if self.variant == "p1d" else f

    def similarities(self, f) -> Variable:
        return similarity_scores(self.variant, f, self.bank.prototypes)

    def logits(self, x) -> Variable:
        s = self.similarities(self.features(x))
        if self.head_norm is not None:
            s = self.head_norm(s)
        return self.fc(s)

    def log_probs(self, x) -> Variable:
        return log_softmax(self.logits(x), axis=-1)

    def forward(self, x) -> Variable:
        return softmax(self.logits(x), axis=-1)

    __call__ = forward

    def predict_proba(self, x, batch_size: int = 32) -> np.ndarray:
        """Eval-mode class probabilities for a stack of feature maps."""
        data = np.asarray(x.data if hasattr(x, "data") else x)
        if data.ndim == 3:
            data = data[None]
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                out = [self.forward(data[i:i + batch_size]).data for i in range(0, len(data), batch_size)]
        finally:
            self.train(was_training)
        return np.concatenate(out)

    def predict(self, x, batch_size: int = 32) -> np.ndarray:
        return np.argmax(self.predict_proba(x, batch_size), axis=1)
