"""Central finite-difference checks of analytic gradients (float64)."""
from __future__ import annotations

from typing import Callable, Dict, Optional

import numpy as np

from .autograd import Variable


def _coords(size: int, max_coords: Optional[int], rng: Optional[np.random.Generator]):
    if max_coords is None or max_coords >= size:
        return np.arange(size)
    rng = rng or np.random.default_rng(0)
    return np.sort(rng.choice(size, max_coords, replace=False))


def _scalar(out: Variable) -> float:
    if out.data.size != 1:
        raise ValueError(f"gradcheck needs a scalar-valued function, got shape {out.shape}")
    return float(out.data.reshape(()))


def gradcheck(fn: Callable[[Variable], Variable], point, step: float = 1e-5,
              max_coords: Optional[int] = None, rng=None) -> float:
    """Max relative error between autodiff and central differences at ``point``.

    The error at a coordinate is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    x0 = np.array(point, dtype=np.float64)
    x = Variable(x0.copy(), requires_grad=True)
    out = fn(x)
    _scalar(out)
    out.backward()
    analytic = x.grad.reshape(-1)

    worst = 0.0
    flat = x0.reshape(-1)
    for i in _coords(flat.size, max_coords, rng):
        plus, minus = flat.copy(), flat.copy()
        plus[i] += step
        minus[i] -= step
        fp = _scalar(fn(Variable(plus.reshape(x0.shape))))
        fm = _scalar(fn(Variable(minus.reshape(x0.shape))))
        numeric = (fp - fm) / (2 * step)
        worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(numeric)))
    return worst


def gradcheck_params(loss_fn: Callable[[], Variable], params: Dict[str, Variable],
                     step: float = 1e-5, max_coords: Optional[int] = None,
                     rng=None) -> Dict[str, float]:
    """Check d(loss)/d(param) for every named parameter, perturbing in place.

    ``loss_fn`` must rebuild the graph from the current parameter values and
    be deterministic (e.g. batchnorm in training mode on a fixed batch).
    Parameters are expected to already be float64.
    """
    for p in params.values():
        if p.data.dtype != np.float64:
            raise TypeError("gradcheck_params requires float64 parameters")
        p.zero_grad()
    loss = loss_fn()
    _scalar(loss)
    loss.backward()
    analytic = {name: p.grad.reshape(-1).copy() for name, p in params.items()}

    report = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        worst = 0.0
        for i in _coords(flat.size, max_coords, rng):
            orig = flat[i]
            flat[i] = orig + step
            fp = _scalar(loss_fn())
            flat[i] = orig - step
            fm = _scalar(loss_fn())
            flat[i] = orig
            numeric = (fp - fm) / (2 * step)
            worst = max(worst, abs(analytic[name][i] - numeric) / max(1.0, abs(numeric)))
        report[name] = worst
    return report


def worst_error(report: Dict[str, float]) -> float:
    return max(report.values()) if report else 0.0



def check_model(variant: str, seed: int = 0, max_coords: Optional[int] = 6,
                n_prototypes: int = 2, step: float = 1e-5) -> Dict[str, float]:
    """Finite-difference check of the full training loss for one model variant.

    Uses a very small encoder on (32, 48) inputs so every similarity still
    sees a 2 x 3 feature grid.  Returns the worst relative error per parameter.
    """
    from .losses import total_loss
    from .model import Cnn8Config, ModelConfig, PrototypeNet

    cfg = ModelConfig(variant=variant, n_prototypes=n_prototypes, input_shape=(32, 48),
                      encoder=Cnn8Config(block_channels=(2, 3, 4, 5)))
    model = PrototypeNet(cfg, seed=seed)
    model.astype(np.float64)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 3, 32, 48))
    labels = np.arange(4) % cfg.n_classes
    weights = np.array([0.5, 1.0, 1.5, 2.0])

    def loss_fn():
        loss, _ = total_loss(model.log_probs(x), labels, weights, model.bank)
        return loss

    return gradcheck_params(loss_fn, model.named_parameters(), step=step,
                            max_coords=max_coords, rng=np.random.default_rng(seed + 1))


def op_suite(seed: int = 0, step: float = 1e-5) -> Dict[str, float]:
    """Worst relative error of every differentiable op, checked in each input.

    Each op output is reduced to a scalar through a fixed random weighting so
    every output element contributes to the check.
    """
    from . import autograd as ag
    from . import nn
    from . import similarity as sim
    from .losses import diverse_loss, weighted_nll
    from .model import PrototypeBank

    rng = np.random.default_rng(seed)
    weights: Dict[str, np.ndarray] = {}

    def weighted(name, out):
        if name not in weights:
            weights[name] = np.random.default_rng(len(weights) + seed).normal(size=out.shape)
        return ag.sum_(ag.mul(out, Variable(weights[name])))

    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    x4 = rng.normal(size=(2, 3, 6, 4))
    w4, b4 = rng.normal(size=(5, 3, 3, 3)), rng.normal(size=5)
    f, p = rng.normal(size=(2, 3, 2, 3)), rng.normal(size=(4, 3, 2, 3))
    labels = np.array([0, 3])
    cw = np.array([0.5, 1.0, 1.5, 2.0])
    rm, rv = np.zeros(3), np.ones(3)

    def bn(x, g, be):
        return nn.batchnorm(x, g, be, rm.copy(), rv.copy(), training=True)

    def bank_loss(v):
        bank = PrototypeBank("p2d-av", 2, 2, v.shape[1:], np.random.default_rng(0))
        bank.prototypes = v
        return diverse_loss(bank)

    cases = {
        "add": [(lambda v: ag.add(v, Variable(b)), a), (lambda v: ag.add(Variable(a), v), b[0])],
        "sub": [(lambda v: ag.sub(v, Variable(b)), a), (lambda v: ag.sub(Variable(a), v), b[:, :1])],
        "mul": [(lambda v: ag.mul(v, Variable(b)), a), (lambda v: ag.mul(Variable(a), v), b)],
        "div": [(lambda v: ag.div(v, Variable(pos)), a), (lambda v: ag.div(Variable(a), v), pos)],
        "neg": [(ag.neg, a)],
        "power": [(lambda v: ag.power(v, 3.0), a), (lambda v: ag.power(v, -1.5), pos)],
        "sqrt": [(ag.sqrt, pos)],
        "exp": [(ag.exp, a)],
        "log": [(ag.log, pos)],
        "relu": [(ag.relu, a)],
        "reshape": [(lambda v: ag.reshape(v, (2, 6)), a)],
        "transpose": [(lambda v: ag.transpose(v, (2, 0, 1, 3)), x4)],
        "sum": [(lambda v: ag.sum_(v, axis=(0, 2)), x4)],
        "mean": [(lambda v: ag.mean(v, axis=-1, keepdims=True), x4)],
        "max": [(lambda v: ag.max_(v, axis=1), x4)],
        "einsum": [(lambda v: ag.einsum("bcs,kcs->bks", v, Variable(p.reshape(4, 3, 6))),
                    f.reshape(2, 3, 6))],
        "matmul": [(lambda v: ag.matmul(v, Variable(b.T)), a), (lambda v: ag.matmul(Variable(a), v), b.T)],
        "softmax": [(lambda v: ag.softmax(v, axis=-1), a)],
        "log_softmax": [(lambda v: ag.log_softmax(v, axis=0), a)],
        "norm": [(lambda v: ag.norm(v, axis=1), a)],
        "conv2d": [(lambda v: nn.conv2d(v, Variable(w4), Variable(b4), padding=1), x4),
                   (lambda v: nn.conv2d(Variable(x4), v, Variable(b4), padding=1), w4),
                   (lambda v: nn.conv2d(Variable(x4), Variable(w4), v, padding=0), b4)],
        "maxpool2d": [(lambda v: nn.maxpool2d(v, 2), x4)],
        "global_maxpool": [(nn.global_maxpool, x4)],
        "linear": [(lambda v: nn.linear(v, Variable(b), Variable(b[:, 0])), a),
                   (lambda v: nn.linear(Variable(a), v, Variable(b[:, 0])), b)],
        "batchnorm": [(lambda v: bn(v, Variable(pos[:, 0]), Variable(a[:, 0])), x4),
                      (lambda v: bn(Variable(x4), v, Variable(a[:, 0])), pos[:, 0])],
        "layernorm": [(lambda v: nn.layernorm(v, Variable(pos[0]), Variable(a[0])), a),
                      (lambda v: nn.layernorm(Variable(a), v, Variable(a[0])), pos[0])],
        "sim_1d": [(lambda v: sim.sim_1d(v, Variable(a)), b)],
        "sim_2ev": [(lambda v: sim.sim_2ev(v, Variable(p)), f), (lambda v: sim.sim_2ev(Variable(f), v), p)],
        "sim_2av": [(lambda v: sim.sim_2av(v, Variable(p)), f), (lambda v: sim.sim_2av(Variable(f), v), p)],
        "sim_2mv": [(lambda v: sim.sim_2mv(v, Variable(p)), f), (lambda v: sim.sim_2mv(Variable(f), v), p)],
        "sim_2ea": [(lambda v: sim.sim_2ea(v, Variable(p)), f), (lambda v: sim.sim_2ea(Variable(f), v), p)],
        "sim_2ma": [(lambda v: sim.sim_2ma(v, Variable(p)), f), (lambda v: sim.sim_2ma(Variable(f), v), p)],
        "scalarize": [(sim.scalarize, x4)],
        "weighted_nll": [(lambda v: weighted_nll(ag.log_softmax(v, axis=-1), labels, cw), a[:2])],
        "diverse_loss": [(bank_loss, p)],
    }
    report = {}
    for name, checks in cases.items():
        report[name] = max(gradcheck(lambda v, fn=fn, key=f"{name}{i}": weighted(key, fn(v)), point, step)
                           for i, (fn, point) in enumerate(checks))
    return report
