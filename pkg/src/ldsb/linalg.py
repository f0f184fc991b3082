"""Dense linear algebra and seeded randomness helpers.

Matrices are plain ``float64`` numpy arrays. Randomness goes through
:class:`RngState`, a (seed, stream-name) pair backed by the counter-based
Philox generator, so independent consumers (data generation, weight
initialization, batch shuffling) can draw from separate reproducible
streams derived from a single master seed.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import NamedTuple, Union

import numpy as np

from .exceptions import DegenerateBasis, InvalidInput

__all__ = [
    "RngState",
    "SvdResult",
    "as_generator",
    "orthonormalize",
    "sample_unit_sphere",
    "svd",
]


@dataclass(frozen=True)
class RngState:
    """Seed plus a stream name; ``generator()`` always yields the same stream."""

    seed: int = 0
    stream: str = "main"

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidInput(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def child(self, name: str) -> "RngState":
        return RngState(self.seed, f"{self.stream}/{name}")

    def generator(self) -> np.random.Generator:
        key = zlib.crc32(self.stream.encode("utf-8"))
        ss = np.random.SeedSequence([int(self.seed) & 0xFFFFFFFF, int(self.seed) >> 32, key])
        return np.random.Generator(np.random.Philox(ss))


RandomLike = Union[None, int, RngState, np.random.Generator]


def as_generator(rng: RandomLike, stream: str = "main") -> np.random.Generator:
    """Turn a seed, :class:`RngState` or Generator into a Generator.

    Generators are passed through untouched so callers can share a stream.
    """
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngState):
        return rng.generator()
    if rng is None:
        rng = 0
    if isinstance(rng, (int, np.integer)):
        return RngState(int(rng), stream).generator()
    raise InvalidInput(f"cannot build a random generator from {type(rng).__name__}")


class SvdResult(NamedTuple):
    U: np.ndarray
    S: np.ndarray
    Vt: np.ndarray


def _as_finite_matrix(M) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise InvalidInput(f"expected a non-empty 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInput("matrix contains non-finite entries")
    return M


def svd(M) -> SvdResult:
    """Thin SVD with a deterministic sign convention.

    Each right singular vector is flipped so that its largest-magnitude entry
    is positive; the matching left vector is flipped with it.
    """
    M = _as_finite_matrix(M)
    U, S, Vt = np.linalg.svd(M, full_matrices=False)
    idx = np.argmax(np.abs(Vt), axis=1)
    signs = np.sign(Vt[np.arange(Vt.shape[0]), idx])
    signs[signs == 0] = 1.0
    return SvdResult(U * signs, S, Vt * signs[:, None])


def orthonormalize(Q) -> np.ndarray:
    """Orthonormal basis of the column space of ``Q`` (QR with positive diag(R))."""
    Q = _as_finite_matrix(Q)
    n, k = Q.shape
    if n < k:
        raise DegenerateBasis(f"cannot orthonormalize {k} columns in dimension {n}")
    q, r = np.linalg.qr(Q)
    diag = np.diag(r)
    scale = np.max(np.abs(diag)) if k else 0.0
    if scale == 0.0 or np.min(np.abs(diag)) <= 1e-12 * max(scale, 1.0):
        raise DegenerateBasis("columns are (numerically) linearly dependent")
    return q * np.sign(diag)


def sample_unit_sphere(dim: int, rng: RandomLike = None, size: int | None = None) -> np.ndarray:
    """Uniform sample(s) on the unit sphere in ``R^dim`` (normalized Gaussians)."""
    if dim < 1:
        raise InvalidInput("dim must be >= 1")
    gen = as_generator(rng)
    shape = (dim,) if size is None else (size, dim)
    while True:
        z = gen.standard_normal(shape)
        norms = np.linalg.norm(z, axis=-1, keepdims=True)
        if np.all(norms > 0):
            return z / norms
