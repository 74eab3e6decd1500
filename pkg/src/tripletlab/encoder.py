"""MLP encoder mapping input vectors onto the unit hypersphere, plus Adam.

Parameters are plain float64 arrays owned by the Encoder; every forward
pass re-registers them as leaves on a fresh tape so both input and
parameter gradients come out of one backward sweep.
"""

from __future__ import annotations

import json

import numpy as np

from . import gradcore as gc


class Encoder:
    """input -> (hidden ReLU layers) -> linear -> L2-normalized rows."""

    def __init__(self, input_dim: int, hidden: tuple = (64, 64), embed_dim: int = 32,
                 seed: int = 0):
        self.input_dim = int(input_dim)
        self.hidden = tuple(int(h) for h in hidden)
        self.embed_dim = int(embed_dim)
        self.seed = int(seed)
        rng = np.random.default_rng(seed)
        dims = [self.input_dim, *self.hidden, self.embed_dim]
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(d_in)
            self.weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)))
            self.biases.append(rng.uniform(-bound, bound, size=(d_out,)))

    def parameters(self) -> list[np.ndarray]:
        """Flat parameter list; order matches embed_with_params."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def _check_width(self, x: np.ndarray):
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ValueError(
                f"encoder expects (B, {self.input_dim}) inputs, got {x.shape}")

    def embed_with_params(self, tape: gc.Tape, x) -> tuple[gc.Node, list[gc.Node]]:
        """Embed a (B, input_dim) batch; also return the parameter leaves."""
        if not isinstance(x, gc.Node):
            x = tape.leaf(x)
        self._check_width(x.value)
        params: list[gc.Node] = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            wn, bn = tape.leaf(w), tape.leaf(b)
            params.extend((wn, bn))
            h = gc.add(gc.matmul(h, wn), bn)
            if i < last:
                h = gc.relu(h)
        return gc.l2_normalize_rows(h), params

    def embed(self, tape: gc.Tape, x) -> gc.Node:
        node, _ = self.embed_with_params(tape, x)
        return node

    def embed_array(self, x: np.ndarray) -> np.ndarray:
        """Forward pass without a tape; bit-identical to the tape version."""
        x = np.asarray(x, dtype=np.float64)
        self._check_width(x)
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.maximum(h, 0.0)
        norms = np.sqrt((h * h).sum(axis=1, keepdims=True))
        if np.any(norms == 0.0):
            raise ValueError("embed: zero-norm pre-normalization row")
        return h / norms

    def config(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "embed_dim": self.embed_dim,
            "seed": self.seed,
        }

    def save(self, path: str):
        doc = {
            "config": self.config(),
            "layers": [
                {"weights": w.tolist(), "bias": b.tolist()}
                for w, b in zip(self.weights, self.biases)
            ],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "Encoder":
        with open(path) as fh:
            doc = json.load(fh)
        cfg = doc["config"]
        model = cls(cfg["input_dim"], tuple(cfg["hidden"]), cfg["embed_dim"],
                    seed=cfg.get("seed", 0))
        layers = doc["layers"]
        if len(layers) != len(model.weights):
            raise ValueError("checkpoint layer count does not match config")
        for i, layer in enumerate(layers):
            w = np.asarray(layer["weights"], dtype=np.float64)
            b = np.asarray(layer["bias"], dtype=np.float64)
            if w.shape != model.weights[i].shape or b.shape != model.biases[i].shape:
                raise ValueError(
                    f"checkpoint layer {i} shape {w.shape}/{b.shape} does not match model")
            model.weights[i] = w
            model.biases[i] = b
        return model


class AdamState:
    """Standard Adam with bias correction."""

    def __init__(self, params: list[np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]):
        """Update params in place; deterministic given state and grads."""
        if len(params) != len(self.m):
            raise ValueError("adam: parameter count changed")
        for p, g in zip(params, grads):
            if p.shape != g.shape:
                raise ValueError(f"adam: gradient shape {g.shape} != parameter {p.shape}")
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[i] / b1t
            v_hat = self.v[i] / b2t
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
