"""One-hidden-layer ReLU network: initialization, forward pass, loss and gradients.

The network computes ``out_scale * relu(X @ W.T + b) @ A`` and is trained
with softmax cross-entropy; binary problems use two outputs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from ._io import atomic_write_text
from .exceptions import InvalidInput, ParseError, ShapeError
from .linalg import as_generator, sample_unit_sphere

__all__ = [
    "MLP",
    "Gradients",
    "forward",
    "init_lazy",
    "init_rich",
    "load_checkpoint",
    "loss_and_grad",
    "predict",
    "save_checkpoint",
]

CHECKPOINT_FORMAT = "ldsb-mlp"
CHECKPOINT_VERSION = 1


@dataclass
class MLP:
    W: np.ndarray  # (m, d)
    b: np.ndarray  # (m,)
    A: np.ndarray  # (m, c)
    out_scale: float
    regime: str

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def c(self) -> int:
        return self.A.shape[1]

    def copy(self) -> "MLP":
        return replace(self, W=self.W.copy(), b=self.b.copy(), A=self.A.copy())

    def params_equal(self, other: "MLP") -> bool:
        """Bitwise parameter equality."""
        return (
            self.regime == other.regime
            and self.out_scale == other.out_scale
            and all(
                x.shape == y.shape and x.tobytes() == y.tobytes()
                for x, y in ((self.W, other.W), (self.b, other.b), (self.A, other.A))
            )
        )


class Gradients(NamedTuple):
    dW: np.ndarray
    db: np.ndarray
    dA: np.ndarray


def _check_sizes(m, d, c):
    if m < 1 or d < 1 or c < 1:
        raise InvalidInput(f"sizes must be positive, got m={m}, d={d}, c={c}")


def init_rich(m: int, d: int, c: int, rng=None) -> MLP:
    """Mean-field initialization.

    Each row ``(W[i], b[i])`` is uniform on the unit sphere in ``R^(d+1)``,
    second-layer entries are uniform on ``{-1, +1}`` and the output is scaled
    by ``1/m``.
    """
    _check_sizes(m, d, c)
    gen = as_generator(rng)
    Wb = sample_unit_sphere(d + 1, gen, size=m)
    A = gen.choice(np.array([-1.0, 1.0]), size=(m, c))
    return MLP(Wb[:, :d].copy(), Wb[:, d].copy(), A, 1.0 / m, "rich")


def init_lazy(m: int, d: int, c: int, rng=None) -> MLP:
    """NTK-style initialization: ``W ~ N(0, 1/d)``, ``A ~ N(0, 1/m)``, ``b = 0``."""
    _check_sizes(m, d, c)
    gen = as_generator(rng)
    W = gen.standard_normal((m, d)) / np.sqrt(d)
    A = gen.standard_normal((m, c)) / np.sqrt(m)
    return MLP(W, np.zeros(m), A, 1.0, "lazy")


def init_network(regime: str, m: int, d: int, c: int, rng=None) -> MLP:
    if regime == "rich":
        return init_rich(m, d, c, rng)
    if regime == "lazy":
        return init_lazy(m, d, c, rng)
    raise InvalidInput(f"unknown regime {regime!r}")


def _check_X(net: MLP, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != net.d:
        raise ShapeError(f"expected inputs with {net.d} columns, got shape {X.shape}")
    return X


def forward(net: MLP, X) -> np.ndarray:
    X = _check_X(net, X)
    H = X @ net.W.T + net.b
    np.maximum(H, 0.0, out=H)
    return net.out_scale * (H @ net.A)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_and_grad(net: MLP, X, y, weight_decay: float = 0.0):
    """Mean softmax cross-entropy plus ``weight_decay/2 * (|W|^2 + |A|^2)``.

    Returns ``(loss, Gradients)`` with exact gradients of that objective.
    """
    X = _check_X(net, X)
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    if n == 0:
        raise InvalidInput("empty batch")
    if y.shape != (n,):
        raise ShapeError(f"labels have shape {y.shape}, expected ({n},)")
    if y.min() < 0 or y.max() >= net.c:
        raise InvalidInput("labels out of range")

    H = X @ net.W.T + net.b
    active = H > 0
    Z = np.where(active, H, 0.0)
    logits = net.out_scale * (Z @ net.A)
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, y].mean()

    G = np.exp(logp)
    G[rows, y] -= 1.0
    G /= n
    dA = net.out_scale * (Z.T @ G)
    dH = net.out_scale * (G @ net.A.T) * active
    dW = dH.T @ X
    db = dH.sum(axis=0)
    if weight_decay:
        loss += 0.5 * weight_decay * (np.sum(net.W**2) + np.sum(net.A**2))
        dW += weight_decay * net.W
        dA += weight_decay * net.A
    return float(loss), Gradients(dW, db, dA)


def predict(net: MLP, X) -> np.ndarray:
    # np.argmax returns the first maximal index, i.e. ties go to the smaller class
    return np.argmax(forward(net, X), axis=1)


# ---------------------------------------------------------------------------
# checkpoints
#
# JSON object {"format": "ldsb-mlp", "version": 1, "regime", "m", "d", "c",
# "out_scale", "W", "b", "A"}; arrays are nested lists of floats. Python's
# float repr is the shortest string that round-trips, so load(save(net)) is
# bit-exact.


def to_dict(net: MLP) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "regime": net.regime,
        "m": net.m,
        "d": net.d,
        "c": net.c,
        "out_scale": float(net.out_scale),
        "W": net.W.tolist(),
        "b": net.b.tolist(),
        "A": net.A.tolist(),
    }


def from_dict(obj: dict) -> MLP:
    if obj.get("format") != CHECKPOINT_FORMAT or obj.get("version") != CHECKPOINT_VERSION:
        raise ParseError("not an ldsb-mlp v1 checkpoint")
    try:
        m, d, c = int(obj["m"]), int(obj["d"]), int(obj["c"])
        W = np.array(obj["W"], dtype=np.float64).reshape(m, d)
        b = np.array(obj["b"], dtype=np.float64).reshape(m)
        A = np.array(obj["A"], dtype=np.float64).reshape(m, c)
        return MLP(W, b, A, float(obj["out_scale"]), str(obj["regime"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"malformed checkpoint: {exc}") from None


def save_checkpoint(net: MLP, path) -> None:
    atomic_write_text(path, json.dumps(to_dict(net)))


def load_checkpoint(path) -> MLP:
    with open(path, encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), line=exc.lineno) from None
    return from_dict(obj)
