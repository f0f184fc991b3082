"""Low-dimensional dependence of a trained network on its input.

Tools here find a low-rank subspace ``P`` of input space that the network's
output essentially depends on, and measure how much predictions move when
the component outside ``P`` is swapped between examples.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .datasets import LabeledDataset
from .exceptions import (
    ConvergenceWarning,
    DegenerateLabels,
    DegenerateLogits,
    InvalidInput,
    InvalidRank,
    UndefinedRank,
)
from .linalg import as_generator, orthonormalize, svd
from .model import MLP, forward, log_softmax, predict

__all__ = [
    "Projector",
    "SBReport",
    "auto_rank",
    "boundary_grid",
    "effective_rank",
    "linear_probe_nonlinearity",
    "mixing_metrics",
    "optimize_projector",
    "projector_objective",
    "singular_decay",
    "top_subspace",
]


class Projector:
    """Orthogonal projector ``P = Q Q^T`` onto the span of ``Q``'s columns."""

    def __init__(self, Q):
        Q = np.asarray(Q, dtype=np.float64)
        if Q.ndim != 2 or Q.shape[1] > Q.shape[0]:
            raise InvalidRank(f"basis must be d x k with k <= d, got {Q.shape}")
        if Q.shape[1] and not np.allclose(Q.T @ Q, np.eye(Q.shape[1]), atol=1e-10):
            raise InvalidInput("basis columns are not orthonormal")
        self.Q = Q

    @classmethod
    def zero(cls, d: int) -> "Projector":
        return cls(np.zeros((d, 0)))

    @property
    def d(self) -> int:
        return self.Q.shape[0]

    @property
    def k(self) -> int:
        return self.Q.shape[1]

    @property
    def matrix(self) -> np.ndarray:
        return self.Q @ self.Q.T

    def apply(self, X) -> np.ndarray:
        """``P x`` for each row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        return (X @ self.Q) @ self.Q.T

    def apply_perp(self, X) -> np.ndarray:
        """``(I - P) x`` for each row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        return X - self.apply(X)

    def coords(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.Q

    def __repr__(self):
        return f"Projector(d={self.d}, k={self.k})"


@dataclass
class SBReport:
    rank_P: int
    acc: float
    pperp_ra: float
    p_ra: float
    pperp_lc: float
    p_lc: float
    effrank_W: float
    skipped_pairs: int = 0

    _PCT = ("acc", "pperp_ra", "p_ra", "pperp_lc", "p_lc")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["percent"] = {k: round(100.0 * getattr(self, k), 2) for k in self._PCT}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def effective_rank(M) -> float:
    """``exp`` of the entropy of the normalized squared singular values."""
    p = _energy(np.asarray(M, dtype=np.float64))
    p = p[p > 0]
    return float(np.exp(-np.sum(p * np.log(p))))


def _energy(M: np.ndarray) -> np.ndarray:
    S = svd(M).S
    total = np.sum(S**2)
    if total == 0:
        raise UndefinedRank("effective rank of a zero matrix is undefined")
    return S**2 / total


def singular_decay(net: MLP) -> np.ndarray:
    """Fraction of squared Frobenius norm carried by each singular value of ``W``."""
    return _energy(net.W)


def auto_rank(net: MLP, energy: float = 0.99) -> int:
    """Smallest ``k`` whose top singular values hold ``energy`` of ``|W|_F^2``."""
    if not 0 < energy < 1:
        raise InvalidInput("energy must lie in (0, 1)")
    cum = np.cumsum(singular_decay(net))
    # absorb rounding so an exact hit (e.g. energy == 0.9 with 0.9 mass) counts
    return int(np.searchsorted(cum, energy - 1e-12) + 1)


def top_subspace(net: MLP, k: int) -> Projector:
    """Projector onto the top-``k`` right singular directions of ``W``."""
    if not 1 <= k <= net.d:
        raise InvalidRank(f"k must lie in [1, {net.d}], got {k}")
    Vt = svd(net.W).Vt
    if k > Vt.shape[0]:
        # fewer neurons than input dims: complete the basis with the null space
        full = np.linalg.svd(net.W, full_matrices=True)[2]
        Vt = np.vstack([Vt, full[Vt.shape[0] :]])
    return Projector(Vt[:k].T.copy())


# ---------------------------------------------------------------------------
# projector optimization


def _input_grad(net: MLP, X: np.ndarray, target: np.ndarray):
    """Per-row cross-entropy against ``target`` probabilities and its input gradient."""
    H = X @ net.W.T + net.b
    active = H > 0
    logits = net.out_scale * (np.where(active, H, 0.0) @ net.A)
    logp = log_softmax(logits)
    ce = -np.sum(target * logp, axis=1)
    G = np.exp(logp) - target
    dX = ((net.out_scale * (G @ net.A.T)) * active) @ net.W
    return ce, dX


def projector_objective(net: MLP, X, y, Q, lam: float = 1.0, with_grad: bool = False):
    """Mean of ``CE(f(Px), y) + lam * CE(f(P_perp x), uniform)`` for ``P = Q Q^T``.

    With ``with_grad`` also returns the Euclidean gradient with respect to ``Q``.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    L = net.c
    onehot = np.zeros((n, L))
    onehot[np.arange(n), y] = 1.0
    XQ = X @ Q
    U = XQ @ Q.T
    ce_p, G_u = _input_grad(net, U, onehot)
    obj = ce_p.mean()
    if lam:
        ce_perp, G_v = _input_grad(net, X - U, np.full((n, L), 1.0 / L))
        obj += lam * ce_perp.mean()
    if not with_grad:
        return float(obj)
    G = G_u - lam * G_v if lam else G_u
    G /= n
    # d/dQ of sum_i g_i . (Q Q^T x_i) = G^T (X Q) + X^T (G Q)
    dQ = G.T @ XQ + X.T @ (G @ Q)
    return float(obj), dQ


def optimize_projector(
    net: MLP,
    data: LabeledDataset,
    k: int,
    lam: float = 1.0,
    steps: int = 2000,
    lr: float = 0.1,
    batch: Optional[int] = None,
    seed: int = 0,
    init: str = "svd",
) -> Projector:
    """Search for a rank-``k`` projector the network's predictions live in.

    Gradient steps on the basis ``Q`` followed by a QR retraction each step,
    with cosine-decayed step size. The best iterate (lowest full-data
    objective) is returned; ``net`` is never modified.
    """
    d = net.d
    if not 1 <= k < d:
        raise InvalidRank(f"k must lie in [1, {d - 1}], got {k}")
    if init == "svd":
        Q = top_subspace(net, k).Q
    elif init == "random":
        Q = orthonormalize(as_generator(seed, "projector/init").standard_normal((d, k)))
    else:
        raise InvalidInput(f"unknown init {init!r}")
    gen = as_generator(seed, "projector/batch")
    X, y = data.X, data.y

    best_obj = projector_objective(net, X, y, Q, lam)
    init_obj = best_obj
    best_Q = Q
    for step in range(steps):
        if batch is None or batch >= data.n:
            Xb, yb = X, y
        else:
            idx = gen.choice(data.n, size=batch, replace=False)
            Xb, yb = X[idx], y[idx]
        _, dQ = projector_objective(net, Xb, yb, Q, lam, with_grad=True)
        step_lr = lr * 0.5 * (1.0 + math.cos(math.pi * step / steps))
        Q = orthonormalize(Q - step_lr * dQ)
        obj = projector_objective(net, X, y, Q, lam)
        if obj < best_obj:
            best_obj, best_Q = obj, Q
    if steps and not best_obj < init_obj:
        warnings.warn("projector objective never decreased", ConvergenceWarning, stacklevel=2)
    return Projector(best_Q)


# ---------------------------------------------------------------------------
# mixing metrics


def mixing_metrics(
    net: MLP,
    data: LabeledDataset,
    P: Projector,
    num_pairs: Optional[int] = None,
    rng=None,
) -> SBReport:
    """Randomized accuracies and logit changes for mixed inputs ``P x1 + P_perp x2``.

    Pairs are drawn i.i.d. uniformly with replacement (``10 n`` by default).
    Pairs where ``f(x1)`` or ``f(x2)`` is the zero vector are left out of the
    logit-change means; more than 10% such pairs raises ``DegenerateLogits``.
    """
    if num_pairs is None:
        num_pairs = 10 * data.n
    if num_pairs < 1:
        raise InvalidInput("num_pairs must be >= 1")
    gen = as_generator(rng, "mixing")
    i1 = gen.integers(data.n, size=num_pairs)
    i2 = gen.integers(data.n, size=num_pairs)
    X1, X2 = data.X[i1], data.X[i2]
    mixed = P.apply(X1) + P.apply_perp(X2)
    f_mix = forward(net, mixed)
    logits = forward(net, data.X)
    f1, f2 = logits[i1], logits[i2]
    pred = np.argmax(f_mix, axis=1)

    n1 = np.linalg.norm(f1, axis=1)
    n2 = np.linalg.norm(f2, axis=1)
    ok = (n1 > 0) & (n2 > 0)
    skipped = int(num_pairs - ok.sum())
    if skipped > 0.1 * num_pairs:
        raise DegenerateLogits(f"{skipped} of {num_pairs} pairs have all-zero logits")
    pperp_lc = np.linalg.norm(f_mix - f1, axis=1)[ok] / n1[ok]
    p_lc = np.linalg.norm(f_mix - f2, axis=1)[ok] / n2[ok]
    return SBReport(
        rank_P=P.k,
        acc=float(np.mean(np.argmax(logits, axis=1) == data.y)),
        pperp_ra=float(np.mean(pred == data.y[i1])),
        p_ra=float(np.mean(pred == data.y[i2])),
        pperp_lc=float(pperp_lc.mean()),
        p_lc=float(p_lc.mean()),
        effrank_W=effective_rank(net.W) if np.any(net.W) else float("nan"),
        skipped_pairs=skipped,
    )


# ---------------------------------------------------------------------------
# two-dimensional views


def _plane_points(P2: Projector, coords: np.ndarray, base_point) -> np.ndarray:
    if P2.k != 2:
        raise InvalidRank(f"expected a rank-2 projector, got rank {P2.k}")
    base = np.zeros(P2.d) if base_point is None else np.asarray(base_point, dtype=np.float64)
    return P2.apply_perp(base[None, :]) + coords @ P2.Q.T


def boundary_grid(net: MLP, P2: Projector, extent: float, res: int, base_point=None):
    """Predicted labels on ``base + u q1 + v q2`` for ``u, v`` in ``[-extent, extent]``.

    Returns ``(u, v, labels)`` where ``labels[i, j]`` is the prediction at
    ``(u[i], v[j])``. Only the component of ``base_point`` orthogonal to the
    plane is kept, so the grid is centred on the plane's origin.
    """
    if res < 1:
        raise InvalidInput("res must be >= 1")
    u = np.linspace(-extent, extent, res)
    v = np.linspace(-extent, extent, res)
    uu, vv = np.meshgrid(u, v, indexing="ij")
    coords = np.column_stack([uu.ravel(), vv.ravel()])
    labels = predict(net, _plane_points(P2, coords, base_point)).reshape(res, res)
    return u, v, labels


def boundary_grid_csv(u, v, labels) -> str:
    lines = ["u,v,label"]
    for i, ui in enumerate(u):
        for j, vj in enumerate(v):
            lines.append(f"{ui!r},{vj!r},{int(labels[i, j])}")
    return "\n".join(lines) + "\n"


def linear_probe_nonlinearity(net: MLP, data: LabeledDataset, P2: Projector, base_point=None) -> float:
    """How well a linear classifier reproduces the network's boundary in a plane.

    Each point is replaced by its projection onto the plane plus a fixed
    orthogonal offset (the orthogonal part of ``base_point``, default the data
    mean); the network's predictions there are fitted by logistic regression
    on the two plane coordinates and the agreement rate is returned.
    """
    from sklearn.linear_model import LogisticRegression

    if base_point is None:
        base_point = data.X.mean(axis=0)
    coords = P2.coords(data.X)
    pseudo = predict(net, _plane_points(P2, coords, base_point))
    if np.unique(pseudo).size < 2:
        raise DegenerateLabels("network predicts a single class on the plane")
    clf = LogisticRegression(C=1e4, max_iter=5000).fit(coords, pseudo)
    return float(np.mean(clf.predict(coords) == pseudo))
