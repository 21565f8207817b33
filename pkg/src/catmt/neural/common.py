"""Shared machinery for the neural lexical models: parameter files, optimizers, gradient checks."""

from __future__ import annotations

import json
from typing import Callable

import numpy as np


class TrainingDiverged(RuntimeError):
    pass


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def log_softmax(logits, axis=-1):
    m = logits.max(axis=axis, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def logsumexp(logits, axis=-1):
    m = logits.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(logits - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def glorot(rng, shape):
    fan_out, fan_in = shape[0], shape[1] if len(shape) > 1 else 1
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape)


# ---------------------------------------------------------------------------
# parameter files
#
# Text manifest: a ``config`` line holding JSON, then per tensor a header
# ``tensor <name> <dim0> [<dim1> ...]`` followed by row-major values, one
# row per line.  Values are written with repr() so a round trip is exact.


def save_params(path, config: dict, params: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("config " + json.dumps(config, sort_keys=True) + "\n")
        for name in sorted(params):
            arr = np.asarray(params[name], dtype=np.float64)
            f.write(f"tensor {name} {' '.join(str(d) for d in arr.shape)}\n")
            rows = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr.reshape(1, -1)
            for row in rows:
                f.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_params(path) -> tuple[dict, dict]:
    params = {}
    with open(path, encoding="utf-8") as f:
        first = f.readline()
        if not first.startswith("config "):
            raise ValueError(f"{path}: missing config line")
        config = json.loads(first[len("config "):])
        line = f.readline()
        while line:
            parts = line.split()
            if not parts or parts[0] != "tensor":
                raise ValueError(f"{path}: expected tensor header, got {line[:40]!r}")
            name, shape = parts[1], tuple(int(d) for d in parts[2:])
            n_rows = shape[0] if len(shape) > 1 else 1
            rows = [f.readline() for _ in range(n_rows)]
            vals = np.array([float(x) for r in rows for x in r.split()])
            params[name] = vals.reshape(shape)
            line = f.readline()
    return config, params


# ---------------------------------------------------------------------------
# optimizers


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: dict, grads: dict) -> None:
        for k, g in grads.items():
            params[k] -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SGD(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")


# ---------------------------------------------------------------------------
# gradient checking


def relative_error(a, b, floor: float = 1e-10) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def grad_check(loss_and_grads: Callable[[dict], tuple[float, dict]], params: dict,
               eps: float = 1e-5, atol: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    Every scalar of every parameter is perturbed.  Entries where both
    gradients are below ``atol`` in magnitude are ignored, since their
    relative error only measures rounding noise.
    """
    _, grads = loss_and_grads(params)
    worst = 0.0
    for name, arr in params.items():
        g = grads.get(name, np.zeros_like(arr))
        flat = arr.reshape(-1)
        num = np.zeros(flat.size)
        for k in range(flat.size):
            old = flat[k]
            flat[k] = old + eps
            lp, _ = loss_and_grads(params)
            flat[k] = old - eps
            lm, _ = loss_and_grads(params)
            flat[k] = old
            num[k] = (lp - lm) / (2 * eps)
        ana = g.reshape(-1)
        mask = np.maximum(np.abs(ana), np.abs(num)) > atol
        if mask.any():
            worst = max(worst, float(relative_error(ana[mask], num[mask]).max()))
    return worst
