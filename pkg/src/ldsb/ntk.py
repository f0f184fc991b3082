"""Closed-form checks for the two infinite-width regimes on the point-mass dataset.

Lazy regime
    The max-margin kernel machine under the one-hidden-layer ReLU NTK
    ``K(x, x') = |x| |x'| kappa(cos(x, x'))`` on the point-mass dataset (with a
    constant-1 bias coordinate appended) has every training point as a
    support vector. Its dual coefficients are ``a`` on each of the ``2^(d-1)``
    positive points and ``b`` on the single negative point. Sums over the
    positive points only depend on the number ``i`` of mismatching sign
    coordinates, so they are taken against the normalized binomial weights
    ``w_i = C(d-1, i) / 2^(d-1)``; ``a`` is carried as
    ``a_tilde = 2^(d-1) * a``. Nothing here grows like ``2^d``, so ``d`` in
    the millions is fine.

Rich regime
    The mean-field max-margin measure puts mass 1/2 on each of two neurons
    aligned with the linear coordinate. :func:`rich_dual_value` evaluates the
    dual objective ``g(w, b, a) = E_{p*}[y a relu(<w, x> + b)]`` under the
    worst-case data distribution (1/2 on the positive patterns, 1/2 on the
    negative point) by exact enumeration of sign patterns.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .datasets import LabeledDataset, gen_pointmass_d
from .exceptions import DomainError, InternalInconsistency, InvalidInput, NoCrossing, TooLarge
from .linalg import as_generator, sample_unit_sphere
from .model import MLP, forward

__all__ = [
    "NTKSetup",
    "RichCheckpoint",
    "build_setup",
    "closed_form_alpha",
    "dense_duals",
    "kappa",
    "margin_fn_neg",
    "margin_fn_pos",
    "ntk_gram",
    "ntk_report",
    "nustar_network",
    "rich_dual_value",
    "rich_dual_values",
    "rich_margin_of_nustar",
    "rich_maximizer_check",
    "threshold_scan",
]

_CLAMP_TOL = 1e-9


def kappa(u):
    """``(2u(pi - arccos u) + sqrt(1 - u^2)) / pi`` on ``[-1, 1]``.

    Inputs within ``1e-9`` outside the interval are clamped to it.
    """
    u = np.asarray(u, dtype=np.float64)
    if np.any(np.abs(u) > 1 + _CLAMP_TOL) or np.any(np.isnan(u)):
        raise DomainError("kappa is defined on [-1, 1]")
    u = np.clip(u, -1.0, 1.0)
    out = (2.0 * u * (np.pi - np.arccos(u)) + np.sqrt(1.0 - u * u)) / np.pi
    return float(out) if out.ndim == 0 else out


def _gram_block(X1, n1, X2, n2) -> np.ndarray:
    # same formula as kappa(), evaluated in place to keep large Gram builds cheap
    U = X1 @ X2.T
    U /= n1[:, None]
    U /= n2[None, :]
    np.clip(U, -1.0, 1.0, out=U)
    T = np.arccos(U)
    np.subtract(np.pi, T, out=T)
    T *= U
    T *= 2.0
    np.multiply(U, U, out=U)
    np.subtract(1.0, U, out=U)
    np.sqrt(U, out=U)
    U += T
    U *= n1[:, None] / np.pi
    U *= n2[None, :]
    return U


def ntk_gram(X1, X2=None, block: int = 1024) -> np.ndarray:
    """NTK Gram matrix ``|x||x'| kappa(<x, x'> / (|x||x'|))``.

    With ``X2`` omitted the symmetric Gram of ``X1`` is built from its upper
    block triangle. Rows must be nonzero.
    """
    X1 = np.atleast_2d(np.asarray(X1, dtype=np.float64))
    n1 = np.linalg.norm(X1, axis=1)
    if np.any(n1 == 0):
        raise InvalidInput("NTK Gram needs nonzero inputs")
    if X2 is not None:
        X2 = np.atleast_2d(np.asarray(X2, dtype=np.float64))
        n2 = np.linalg.norm(X2, axis=1)
        if np.any(n2 == 0):
            raise InvalidInput("NTK Gram needs nonzero inputs")
        return _gram_block(X1, n1, X2, n2)
    n = X1.shape[0]
    K = np.empty((n, n))
    for i in range(0, n, block):
        bi = slice(i, min(i + block, n))
        for j in range(i, n, block):
            bj = slice(j, min(j + block, n))
            K[bi, bj] = _gram_block(X1[bi], n1[bi], X1[bj], n1[bj])
            if j != i:
                K[bj, bi] = K[bi, bj].T
    # kappa is ill-conditioned at u = 1; the diagonal is known exactly
    K[np.diag_indices(n)] = 2.0 * n1 * n1
    return K


# ---------------------------------------------------------------------------
# lazy regime


def binomial_weights(n: int) -> np.ndarray:
    """``C(n, i) / 2^n`` for ``i = 0..n`` via a log-space ratio recurrence."""
    i = np.arange(n)
    steps = np.log(n - i) - np.log(i + 1.0)
    logw = np.concatenate([[-n * math.log(2.0)], -n * math.log(2.0) + np.cumsum(steps)])
    w = np.exp(logw - logw.max())
    return w / w.sum()


@dataclass
class NTKSetup:
    d: int
    gamma: float
    rho1: float
    rho2: float
    beta: np.ndarray  # beta_0 .. beta_{d-1}, then beta_d (positive/negative cross term)
    weights: np.ndarray  # C(d-1, i) / 2^(d-1), i = 0..d-1
    xi: float
    a_tilde: float
    b_dual: float

    @property
    def beta_d(self) -> float:
        return float(self.beta[-1])

    @property
    def a(self) -> float:
        """Per-point dual coefficient of a positive point (underflows for large d)."""
        return math.ldexp(self.a_tilde, -(self.d - 1))


def build_setup(d: int, gamma: float) -> NTKSetup:
    if d < 2:
        raise InvalidInput("d must be >= 2")
    if not gamma > 0:
        raise InvalidInput("gamma must be positive")
    d = int(d)
    g2 = float(gamma) ** 2
    rho1 = math.sqrt(d + g2)
    rho2 = math.sqrt(1.0 + g2)
    k1 = 2.0  # kappa(1)
    i = np.arange(d)
    beta = np.empty(d + 1)
    beta[:d] = kappa((d - 2.0 * i + g2) / (d + g2))
    beta[d] = kappa((1.0 - g2) / (rho1 * rho2))
    w = binomial_weights(d - 1)
    bd = beta[d]
    xi = float(np.sum(w * (k1 * beta[:d] - bd * bd)))
    if not xi > 0:
        raise InternalInconsistency(f"xi={xi} must be positive")
    a_tilde = (rho2 * k1 + rho1 * bd) / (xi * rho1**2 * rho2)
    b_dual = (-1.0 - a_tilde * rho1 * rho2 * bd) / (rho2**2 * k1)
    return NTKSetup(d, float(gamma), rho1, rho2, beta, w, xi, float(a_tilde), float(b_dual))


def margin_fn_pos(setup: NTKSetup, zeta):
    """``f(x) / |x|`` at ``x = (zeta, s_1..s_{d-1}, 1)`` for any sign pattern ``s``."""
    d, g = setup.d, setup.gamma
    z = np.asarray(zeta, dtype=np.float64)
    norm = np.sqrt(z * z + d)
    i = np.arange(d)
    tau = (d - 2.0 * i + g * z[..., None]) / (setup.rho1 * norm[..., None])
    tau_d = (1.0 - g * z) / (setup.rho2 * norm)
    out = setup.a_tilde * setup.rho1 * (kappa(tau) @ setup.weights) + setup.b_dual * setup.rho2 * kappa(tau_d)
    out = np.asarray(out)
    return float(out) if out.ndim == 0 else out


def margin_fn_neg(setup: NTKSetup, zeta):
    """``f(x) / |x|`` at ``x = (zeta, 0, ..., 0, 1)``."""
    g = setup.gamma
    z = np.asarray(zeta, dtype=np.float64)
    norm = np.sqrt(z * z + 1.0)
    tau0 = (1.0 + g * z) / (setup.rho1 * norm)
    tau_d = (1.0 - g * z) / (setup.rho2 * norm)
    out = np.asarray(setup.a_tilde * setup.rho1 * kappa(tau0) + setup.b_dual * setup.rho2 * kappa(tau_d))
    return float(out) if out.ndim == 0 else out


def threshold_scan(setup: NTKSetup, base: str, lo: float, hi: float, tol: float = 1e-10, return_bracket=False):
    """Bisect for a sign change of the chosen margin function on ``[lo, hi]``."""
    fn = {"pos": margin_fn_pos, "neg": margin_fn_neg}.get(base)
    if fn is None:
        raise InvalidInput(f"base must be 'pos' or 'neg', got {base!r}")
    f_lo, f_hi = fn(setup, lo), fn(setup, hi)
    if f_lo == 0:
        return (lo, lo) if return_bracket else lo
    if f_hi == 0:
        return (hi, hi) if return_bracket else hi
    if f_lo * f_hi > 0:
        raise NoCrossing(f"no sign change on [{lo}, {hi}]")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f_mid = fn(setup, mid)
        if f_mid == 0:
            lo = hi = mid
            break
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return (lo, hi) if return_bracket else 0.5 * (lo + hi)


def closed_form_alpha(setup: NTKSetup) -> np.ndarray:
    """Dual vector ``[a, ..., a, b]`` in :func:`gen_pointmass_d` row order."""
    n_pos = 2 ** (setup.d - 1)
    return np.r_[np.full(n_pos, setup.a), setup.b_dual]


def dense_duals(d: int, gamma: float, method: str = "auto"):
    """Solve ``K alpha = y`` on the materialized dataset (bias coordinate appended).

    ``method`` is ``"direct"`` (LU), ``"cg"`` (conjugate gradients on the
    dense Gram, which converges in a handful of iterations because the Gram
    has very few distinct eigenvalues) or ``"auto"`` (direct below 2048 rows).
    Returns ``(dataset, K, alpha)``.
    """
    ds = gen_pointmass_d(d, gamma, include_bias_coord=True)
    K = ntk_gram(ds.X)
    y = 2.0 * ds.y - 1.0
    if method == "auto":
        method = "direct" if ds.n < 2048 else "cg"
    if method == "direct":
        return ds, K, np.linalg.solve(K, y)
    if method != "cg":
        raise InvalidInput(f"unknown method {method!r}")
    from scipy.sparse.linalg import cg

    alpha, info = cg(K, y, rtol=1e-13, atol=0.0, maxiter=10 * ds.n)
    if info != 0:
        raise InternalInconsistency(f"conjugate gradients did not converge (info={info})")
    return ds, K, alpha


def support_vector_residual(setup: NTKSetup) -> float:
    """Max over the dataset of ``|y f(x) - 1|`` from the closed forms."""
    pos = margin_fn_pos(setup, setup.gamma) * setup.rho1
    neg = margin_fn_neg(setup, -setup.gamma) * setup.rho2
    return float(max(abs(pos - 1.0), abs(-neg - 1.0)))


def ntk_report(d: int, gamma: float) -> dict:
    s = build_setup(d, gamma)
    try:
        crossing = threshold_scan(s, "pos", -0.95 * gamma, gamma, tol=1e-10)
    except NoCrossing:
        crossing = None
    return {
        "d": s.d,
        "gamma": s.gamma,
        "xi": s.xi,
        "a_tilde": s.a_tilde,
        "b_dual": s.b_dual,
        "pos_crossing": crossing,
        "neg_values": {"at_0": margin_fn_neg(s, 0.0), "at_0.73": margin_fn_neg(s, 0.73)},
        "support_vector_residual_max": support_vector_residual(s),
    }


# ---------------------------------------------------------------------------
# rich regime


class RichCheckpoint(NamedTuple):
    theta1: tuple
    theta2: tuple
    gamma: float


def rich_thetas(gamma: float, d: int) -> RichCheckpoint:
    """The two support neurons ``(w, b, a)`` of the rich-regime max-margin measure."""
    c = 1.0 / math.sqrt(2.0 * (1.0 + gamma * gamma))
    w = np.zeros(d)
    w[0] = gamma * c
    return RichCheckpoint((w, c, 1 / math.sqrt(2)), (-w, c, -1 / math.sqrt(2)), float(gamma))


def _sign_patterns(k: int) -> np.ndarray:
    return np.array(list(itertools.product([1.0, -1.0], repeat=k))).reshape(-1, k)


class MonteCarloEstimate(NamedTuple):
    value: float
    stderr: float


def rich_dual_values(thetas, gamma: float, chunk: int = 8192) -> np.ndarray:
    """Vectorized :func:`rich_dual_value` for rows ``(w_1..w_d, b, a)``."""
    T = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    d = T.shape[1] - 2
    if d > 24:
        raise TooLarge("exact enumeration is limited to d <= 24")
    S = _sign_patterns(d - 1)
    out = np.empty(T.shape[0])
    for start in range(0, T.shape[0], chunk):
        blk = T[start : start + chunk]
        w, b, a = blk[:, :d], blk[:, d], blk[:, d + 1]
        base = gamma * w[:, 0] + b
        pos = np.maximum(base[:, None] + w[:, 1:] @ S.T, 0.0).mean(axis=1)
        neg = np.maximum(b - gamma * w[:, 0], 0.0)
        out[start : start + chunk] = 0.5 * a * (pos - neg)
    return out


def rich_dual_value(w, b: float, a: float, gamma: float, d=None, n_samples=None, rng=None):
    """``(a/2) (E_s relu(gamma w_1 + b + sum_i s_i w_i) - relu(b - gamma w_1))``.

    The expectation over Rademacher signs is exact (``d <= 24``) unless
    ``n_samples`` is given, in which case a :class:`MonteCarloEstimate` with
    its standard error is returned.
    """
    w = np.asarray(w, dtype=np.float64)
    if d is not None and w.shape != (d,):
        raise InvalidInput(f"w must have length d={d}")
    d = w.shape[0]
    if n_samples is None:
        if d > 24:
            raise TooLarge("exact enumeration is limited to d <= 24; pass n_samples")
        return float(rich_dual_values(np.r_[w, b, a][None, :], gamma)[0])
    gen = as_generator(rng, "rich/mc")
    S = gen.choice(np.array([-1.0, 1.0]), size=(int(n_samples), d - 1))
    vals = 0.5 * a * (np.maximum(gamma * w[0] + b + S @ w[1:], 0.0) - max(b - gamma * w[0], 0.0))
    return MonteCarloEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals))))


@dataclass
class RichMaximizerReport:
    gamma: float
    d: int
    g_theta1: float
    g_theta2: float
    max_random: float
    random_gap: float
    max_perturbed: float
    all_random_below: bool
    all_perturbed_below: bool

    def to_dict(self) -> dict:
        return asdict(self)


def rich_maximizer_check(
    gamma: float,
    d: int,
    num_random: int = 100_000,
    rng=None,
    eps: float = 1e-3,
    num_tangents: int = 100,
    margin: float = 1e-6,
) -> RichMaximizerReport:
    """Probe that the two support neurons maximize the dual objective on the sphere."""
    if d > 16:
        raise TooLarge("rich_maximizer_check supports d <= 16")
    if num_random < 1:
        raise InvalidInput("num_random must be >= 1")
    gen = as_generator(rng, "rich/check")
    th = rich_thetas(gamma, d)
    t1 = np.r_[th.theta1[0], th.theta1[1], th.theta1[2]]
    t2 = np.r_[th.theta2[0], th.theta2[1], th.theta2[2]]
    g1, g2 = rich_dual_values(np.vstack([t1, t2]), gamma)
    rand = rich_dual_values(sample_unit_sphere(d + 2, gen, size=num_random), gamma)
    tangents = gen.standard_normal((num_tangents, d + 2))
    tangents -= np.outer(tangents @ t1, t1)
    tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)
    moved = t1 + eps * tangents
    moved /= np.linalg.norm(moved, axis=1, keepdims=True)
    pert = rich_dual_values(moved, gamma)
    return RichMaximizerReport(
        gamma=float(gamma),
        d=int(d),
        g_theta1=float(g1),
        g_theta2=float(g2),
        max_random=float(rand.max()),
        random_gap=float(g1 - rand.max()),
        max_perturbed=float(pert.max()),
        all_random_below=bool(np.all(rand < g1 - margin)),
        all_perturbed_below=bool(np.all(pert < g1)),
    )


def nustar_network(gamma: float, d: int, lam: float = 0.5) -> MLP:
    """Two-neuron network with mass ``lam`` on theta_1 and ``1 - lam`` on theta_2.

    Single output, ``f(x) = sum_j mass_j a_j relu(<w_j, x> + b_j)``.
    """
    th = rich_thetas(gamma, d)
    W = np.vstack([th.theta1[0], th.theta2[0]])
    b = np.array([th.theta1[1], th.theta2[1]])
    A = np.array([[lam * th.theta1[2]], [(1.0 - lam) * th.theta2[2]]])
    return MLP(W, b, A, 1.0, "rich")


def rich_margin_of_nustar(gamma: float, dataset: LabeledDataset, lam: float = 0.5) -> float:
    """``min_i y_i f(x_i)`` of :func:`nustar_network` on a binary dataset."""
    if dataset.num_classes != 2:
        raise InvalidInput("binary dataset required")
    net = nustar_network(gamma, dataset.d, lam)
    yf = (2.0 * dataset.y - 1.0) * forward(net, dataset.X)[:, 0]
    return float(yf.min())
