"""Fully connected ReLU networks with hand-written backprop and Adam."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SizeError, TrainingError

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths ``[d, h1, ..., K]``; ReLU after every layer but the last."""

    layer_widths: tuple
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ConfigError(f"need at least two positive widths, got {self.layer_widths}")
        object.__setattr__(self, "layer_widths", widths)


class Mlp:
    """Parameters plus Adam moment buffers.

    Weight ``i`` has shape ``(width[i], width[i+1])`` and layers compute
    ``X @ W + b``. Inputs are first mapped to ``(X - input_mean) / input_std``
    and the last layer's output is multiplied by ``output_scale``; these
    three are fixed at construction and never trained.
    """

    def __init__(self, spec: MlpSpec, weights, biases, input_mean=None, input_std=None,
                 output_scale: float = 1.0):
        self.spec = spec
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        d = spec.layer_widths[0]
        self.input_mean = np.zeros(d) if input_mean is None else np.asarray(input_mean, dtype=float)
        self.input_std = np.ones(d) if input_std is None else np.asarray(input_std, dtype=float)
        if self.input_mean.shape != (d,) or self.input_std.shape != (d,):
            raise SizeError(f"input normalization must have shape ({d},)")
        if np.any(self.input_std <= 0) or not np.all(np.isfinite(self.input_std)):
            raise ConfigError("input_std must be finite and positive")
        if not (math.isfinite(output_scale) and output_scale > 0):
            raise ConfigError(f"output_scale must be finite and positive, got {output_scale}")
        self.output_scale = float(output_scale)
        self.step_count = 0
        self._m = [np.zeros_like(p) for p in self.params()]
        self._v = [np.zeros_like(p) for p in self.params()]

    @classmethod
    def init(cls, spec: MlpSpec, input_mean=None, input_std=None,
             output_scale: float = 1.0) -> "Mlp":
        """He-normal weights (variance ``2 / fan_in``), zero biases."""
        rng = np.random.default_rng(spec.seed)
        w = spec.layer_widths
        weights = [rng.standard_normal((a, b)) * np.sqrt(2.0 / a) for a, b in zip(w[:-1], w[1:])]
        biases = [np.zeros(b) for b in w[1:]]
        return cls(spec, weights, biases, input_mean, input_std, output_scale)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_width(self) -> int:
        return self.spec.layer_widths[0]

    @property
    def out_width(self) -> int:
        return self.spec.layer_widths[-1]

    def params(self) -> list:
        """Flat list ``[W0, b0, W1, b1, ...]`` (views, not copies)."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def forward(self, X):
        """Returns ``(output, cache)``; the cache holds each layer's input."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.in_width:
            raise SizeError(f"expected input of width {self.in_width}, got shape {X.shape}")
        cache = []
        h = (X - self.input_mean) / self.input_std
        last = self.n_layers - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            cache.append(h)
            h = h @ W + b
            if i < last:
                h = np.maximum(h, 0.0)
        return h * self.output_scale, cache

    def predict(self, X) -> np.ndarray:
        return self.forward(X)[0]

    __call__ = predict

    def backward(self, cache, grad_out):
        """Gradients in :meth:`params` order, plus the gradient w.r.t. the input."""
        g = np.asarray(grad_out, dtype=float) * self.output_scale
        grads = [None] * (2 * self.n_layers)
        for i in range(self.n_layers - 1, -1, -1):
            h_in = cache[i]
            grads[2 * i] = h_in.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.weights[i].T
            if i > 0:
                # cached input of layer i is the ReLU output of layer i-1
                g = g * (h_in > 0)
        return grads, g / self.input_std

    def step(self, grads, lr: float) -> "Mlp":
        """One Adam update in place (bias-corrected moments)."""
        params = self.params()
        if len(grads) != len(params):
            raise SizeError(f"expected {len(params)} gradient arrays, got {len(grads)}")
        for p, g in zip(params, grads):
            if g.shape != p.shape:
                raise SizeError(f"gradient shape {g.shape} does not match {p.shape}")
            if not np.all(np.isfinite(g)):
                raise TrainingError("non-finite gradient")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - BETA1 ** t
        c2 = 1.0 - BETA2 ** t
        for p, g, m, v in zip(params, grads, self._m, self._v):
            m *= BETA1
            m += (1.0 - BETA1) * g
            v *= BETA2
            v += (1.0 - BETA2) * (g * g)
            p -= lr * (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        if not all(np.all(np.isfinite(p)) for p in params):
            raise TrainingError("parameters became non-finite")
        return self

    def copy(self) -> "Mlp":
        out = Mlp(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases],
                  self.input_mean.copy(), self.input_std.copy(), self.output_scale)
        out.step_count = self.step_count
        out._m = [a.copy() for a in self._m]
        out._v = [a.copy() for a in self._v]
        return out

    def to_dict(self, optimizer: bool = False) -> dict:
        d = {
            "layer_widths": list(self.spec.layer_widths),
            "seed": self.spec.seed,
            "step": self.step_count,
            "input_mean": self.input_mean.tolist(),
            "input_std": self.input_std.tolist(),
            "output_scale": self.output_scale,
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }
        if optimizer:
            d["adam_m"] = [a.ravel().tolist() for a in self._m]
            d["adam_v"] = [a.ravel().tolist() for a in self._v]
        return d

    @classmethod
    def from_dict(cls, d) -> "Mlp":
        spec = MlpSpec(tuple(d["layer_widths"]), d.get("seed", 0))
        w = spec.layer_widths
        shapes = list(zip(w[:-1], w[1:]))
        weights = [np.array(a, dtype=float).reshape(s) for a, s in zip(d["weights"], shapes)]
        net = cls(spec, weights, [np.array(b, dtype=float) for b in d["biases"]],
                  d.get("input_mean"), d.get("input_std"), d.get("output_scale", 1.0))
        net.step_count = int(d.get("step", 0))
        if "adam_m" in d:
            net._m = [np.array(a, dtype=float).reshape(p.shape)
                      for a, p in zip(d["adam_m"], net.params())]
            net._v = [np.array(a, dtype=float).reshape(p.shape)
                      for a, p in zip(d["adam_v"], net.params())]
        return net

    def save(self, path, optimizer: bool = False) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(optimizer), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def mse_loss_grad(Y, target):
    """Mean over rows of squared row norms, and its gradient ``2 (Y - target) / m``."""
    Y = np.asarray(Y, dtype=float)
    target = np.asarray(target, dtype=float)
    if Y.shape != target.shape:
        raise SizeError(f"shape mismatch {Y.shape} vs {target.shape}")
    m = Y.shape[0]
    diff = Y - target
    return float(np.sum(diff * diff) / m), 2.0 * diff / m


def contrastive_loss_grad(Zi, Zj, same, margin: float):
    """Pairwise contrastive loss averaged over pairs.

    Same-label pairs pay ``||zi - zj||^2``; other pairs pay
    ``max(0, margin - ||zi - zj||)^2``. Returns ``(loss, dZi, dZj)``; the
    subgradient is taken as zero at zero distance for differing pairs.
    """
    Zi = np.asarray(Zi, dtype=float)
    Zj = np.asarray(Zj, dtype=float)
    same = np.asarray(same, dtype=bool)
    if Zi.shape != Zj.shape or same.shape != (Zi.shape[0],):
        raise SizeError("paired batches must match and have one flag per pair")
    if margin <= 0:
        raise ConfigError("margin must be positive")
    P = Zi.shape[0]
    diff = Zi - Zj
    dist = np.linalg.norm(diff, axis=1)
    hinge = np.where(same, 0.0, np.maximum(0.0, margin - dist))
    losses = np.where(same, dist * dist, hinge * hinge)
    with np.errstate(divide="ignore", invalid="ignore"):
        push = np.where((~same) & (hinge > 0) & (dist > 0), -2.0 * hinge / dist, 0.0)
    coef = np.where(same, 2.0, push) / P
    dZi = coef[:, None] * diff
    return float(losses.mean()), dZi, -dZi


def cross_entropy_loss_grad(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
