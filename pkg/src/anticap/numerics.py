"""Dense float64 kernels, parameter store, optimizer and a finite-difference checker.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Every backward
pass in the package is written by hand and validated with :func:`grad_check`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DTYPE = np.float64
LN_EPS = 1e-5


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class DegenerateInputError(ValueError):
    pass


def as_tensor(x) -> np.ndarray:
    """float64 array; extended-precision input is kept as is (used by the gradient oracle)."""
    x = np.asarray(x)
    return x if x.dtype == np.longdouble else x.astype(DTYPE, copy=False)


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")
    return x


def matmul(a, b) -> np.ndarray:
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def softmax_rows(m, scale: float = 1.0, mask=None) -> np.ndarray:
    """Row-wise softmax of ``m / scale``.

    If ``mask`` is given, entries where it is False get exactly zero weight and
    each row is normalized over its admitted entries only.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    z = as_tensor(m) / scale
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the logits of a row softmax with output ``p``."""
    return p * (dp - np.sum(dp * p, axis=-1, keepdims=True))


def layer_norm(v, gain, bias, eps: float = LN_EPS):
    """Normalize over the last axis. Returns ``(out, cache)``."""
    v = as_tensor(v)
    if v.shape[-1] < 2:
        raise DegenerateInputError("layer_norm needs at least 2 features")
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu = v.mean(axis=-1, keepdims=True)
    xc = v - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gain + bias, (xhat, rstd, gain)


def layer_norm_backward(dout, cache):
    """Returns ``(dv, dgain, dbias)``; parameter grads are summed over leading axes."""
    xhat, rstd, gain = cache
    n = xhat.shape[-1]
    lead = tuple(range(dout.ndim - 1))
    dgain = np.sum(dout * xhat, axis=lead)
    dbias = np.sum(dout, axis=lead)
    dxhat = dout * gain
    dv = (rstd / n) * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * np.sum(dxhat * xhat, axis=-1, keepdims=True)
    )
    return dv, dgain, dbias


_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh-form GELU."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x**3)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + _GELU_A * x**3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * _GELU_A * x * x)


def cross_entropy_loss(logits, targets, mask=None):
    """Mean token cross-entropy over masked-in rows, and its gradient.

    ``targets`` holds one class id per row; rows with ``mask`` False contribute
    neither loss nor gradient.
    """
    logits = as_tensor(logits)
    T, V = logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    if len(targets) != T:
        raise ShapeError(f"{T} logit rows but {len(targets)} targets")
    mask = np.ones(T, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ValueError("cross-entropy over an empty set of positions")
    if np.any(targets[mask] >= V) or np.any(targets[mask] < 0):
        raise IndexError("target id out of vocabulary range")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.nonzero(mask)[0]
    loss = -logp[rows, targets[rows]].sum() / count
    grad = np.exp(logp)
    grad[rows, targets[rows]] -= 1.0
    grad[~mask] = 0.0
    return loss, grad / count


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


@dataclass
class Param:
    value: np.ndarray
    trainable: bool = True
    grad: np.ndarray | None = None


@dataclass
class ParamStore:
    """Named parameters with frozen/trainable flags and Adam moment buffers."""

    entries: dict[str, Param] = field(default_factory=dict)
    step_count: int = 0
    _m: dict[str, np.ndarray] = field(default_factory=dict, repr=False)
    _v: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def add(self, name: str, value, trainable: bool = True) -> np.ndarray:
        if name in self.entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=DTYPE)
        self.entries[name] = Param(value, trainable, np.zeros_like(value) if trainable else None)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name].value

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def names(self, trainable: bool | None = None) -> list[str]:
        return [n for n, p in self.entries.items() if trainable is None or p.trainable == trainable]

    def freeze(self, names=None) -> None:
        for n in names if names is not None else list(self.entries):
            self.entries[n].trainable = False
            self.entries[n].grad = None

    def zero_grad(self) -> None:
        for p in self.entries.values():
            if p.trainable:
                p.grad = np.zeros_like(p.value)

    def accumulate(self, grads: dict[str, np.ndarray], scale: float = 1.0) -> None:
        for name, g in grads.items():
            p = self.entries[name]
            if not p.trainable:
                continue
            if p.grad is None:
                p.grad = np.zeros_like(p.value)
            p.grad += scale * g

    def set_grads(self, grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if self.entries[name].trainable:
                self.entries[name].grad = np.array(g, dtype=DTYPE)

    def state(self) -> dict[str, np.ndarray]:
        return {n: p.value for n, p in self.entries.items()}

    def copy(self) -> "ParamStore":
        out = ParamStore(step_count=self.step_count)
        for n, p in self.entries.items():
            out.entries[n] = Param(p.value.copy(), p.trainable, None if p.grad is None else p.grad.copy())
        out._m = {k: v.copy() for k, v in self._m.items()}
        out._v = {k: v.copy() for k, v in self._v.items()}
        return out


def optimizer_step(
    params: ParamStore,
    lr: float,
    mode: str = "adam",
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParamStore:
    """Update trainable entries in place (Adam or plain SGD) and return the store."""
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    for name, p in params.entries.items():
        if p.trainable and p.grad is None:
            raise ValueError(f"missing gradient for parameter {name!r}")
    params.step_count += 1
    t = params.step_count
    for name, p in params.entries.items():
        if not p.trainable:
            continue
        g = p.grad
        if mode == "sgd":
            p.value -= lr * g
        elif mode == "adam":
            m = params._m.setdefault(name, np.zeros_like(p.value))
            v = params._v.setdefault(name, np.zeros_like(p.value))
            m *= beta1
            m += (1 - beta1) * g
            v *= beta2
            v += (1 - beta2) * g * g
            mhat = m / (1 - beta1**t)
            vhat = v / (1 - beta2**t)
            p.value -= lr * mhat / (np.sqrt(vhat) + eps)
        else:
            raise ValueError(f"unknown optimizer mode {mode!r}")
    return params


@dataclass
class GradCheckReport:
    errors: dict[str, float]
    eps: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def __str__(self) -> str:
        lines = [f"{name}: {err:.3e}" for name, err in self.errors.items()]
        return "\n".join(lines + [f"max: {self.max_error:.3e}"])


def relative_error(a, n) -> np.ndarray:
    a = np.asarray(a)
    n = np.asarray(n)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(
    f: Callable[[ParamStore], float],
    params: ParamStore,
    eps: float = 1e-5,
    analytic: dict[str, np.ndarray] | None = None,
    names: list[str] | None = None,
    oracle_dtype=np.longdouble,
) -> GradCheckReport:
    """Compare analytic gradients with central differences of ``f``.

    Analytic gradients come from ``analytic`` if given, otherwise from the
    ``grad`` slots of ``params``. Frozen entries are never perturbed. While
    probing, trainable values are held in ``oracle_dtype`` so that ``f`` is
    evaluated with less rounding noise than the float64 analytic pass; the
    original arrays are restored afterwards.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    errors = {}
    for name in names if names is not None else params.names(trainable=True):
        p = params.entries[name]
        if not p.trainable:
            continue
        a = analytic[name] if analytic is not None else p.grad
        original = p.value
        x = original.astype(oracle_dtype)
        p.value = x
        num = np.zeros(x.shape, dtype=oracle_dtype)
        flat, nflat = x.reshape(-1), num.reshape(-1)
        try:
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = f(params)
                flat[i] = orig - eps
                fm = f(params)
                flat[i] = orig
                if not (np.isfinite(fp) and np.isfinite(fm)):
                    raise FloatingPointError(f"objective not finite while perturbing {name}")
                nflat[i] = (fp - fm) / (2 * eps)
        finally:
            p.value = original
        errors[name] = float(np.max(relative_error(a, num.astype(DTYPE)))) if x.size else 0.0
    return GradCheckReport(errors, eps)
