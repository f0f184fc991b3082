"""Synthetic dataset families and the on-disk CSV format.

Three generators are provided:

* :func:`gen_ifm` -- independent-features datasets with one linearly
  separable coordinate (margin ``gamma``), coordinates whose two classes have
  disjoint but non-linearly-separable supports, and pure noise coordinates.
* :func:`gen_pointmass_d` -- the finite point-mass dataset used by the
  lazy-regime analysis: ``x_0 = gamma * y`` and every other coordinate is
  ``+-1`` for the positive class and ``0`` for the single negative point.
* :func:`gen_collage` -- a two-block "collage" where a linear block and a
  nonlinear block (XOR or sphere pattern) are each fully predictive.

Labels are integers in ``[0, L)``. For binary data class ``1`` corresponds to
``y = +1`` and class ``0`` to ``y = -1``.
"""

from __future__ import annotations

import itertools
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._io import atomic_write_text
from .exceptions import InvalidInput, InvalidSpec, ParseError, TooLarge
from .linalg import RngState

__all__ = [
    "FeatureMeta",
    "IfmSpec",
    "LabeledDataset",
    "gen_collage",
    "gen_ifm",
    "gen_pointmass_d",
    "load_dataset",
    "make_splits",
    "save_dataset",
]

JITTER = 0.25
_HEADER = "# ldsb-dataset v1"


@dataclass
class FeatureMeta:
    linear_coord: Optional[int] = None
    margin_gamma: Optional[float] = None
    coord_roles: tuple = ()

    def __post_init__(self):
        self.coord_roles = tuple(self.coord_roles)
        if self.linear_coord is not None and not (self.margin_gamma and self.margin_gamma > 0):
            raise InvalidSpec("linear_coord requires a positive margin_gamma")


@dataclass
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int
    meta: FeatureMeta = field(default_factory=FeatureMeta)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2:
            raise InvalidInput(f"X must be 2-D, got shape {self.X.shape}")
        n = self.X.shape[0]
        if self.y.shape != (n,):
            raise InvalidInput(f"y has shape {self.y.shape}, expected ({n},)")
        if self.num_classes < 2:
            raise InvalidInput("num_classes must be >= 2")
        if n < 2:
            raise InvalidInput("a dataset needs at least two rows")
        if not np.all(np.isfinite(self.X)):
            raise InvalidInput("X contains non-finite values")
        if self.y.min() < 0 or self.y.max() >= self.num_classes:
            raise InvalidInput("labels out of range")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def with_features(self, X) -> "LabeledDataset":
        """Same labels and metadata, different feature matrix."""
        return LabeledDataset(np.asarray(X, dtype=np.float64), self.y.copy(), self.num_classes, self.meta)

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.meta == other.meta
            and self.X.shape == other.X.shape
            and np.array_equal(self.X, other.X)
            and np.array_equal(self.y, other.y)
        )


@dataclass(frozen=True)
class IfmSpec:
    d: int = 20
    gamma: float = 1.5
    n_train: int = 1000
    n_val: int = 500
    n_test: int = 1000
    num_nonlinear: int = 19
    num_noise: int = 0
    seed: int = 0

    def validate(self) -> None:
        if self.num_nonlinear < 1:
            raise InvalidSpec("num_nonlinear must be >= 1")
        if self.num_noise < 0:
            raise InvalidSpec("num_noise must be >= 0")
        if self.d != 1 + self.num_nonlinear + self.num_noise:
            raise InvalidSpec(
                f"d={self.d} but 1 + num_nonlinear + num_noise = "
                f"{1 + self.num_nonlinear + self.num_noise}"
            )
        if not self.gamma >= 1:
            raise InvalidSpec("gamma must be >= 1")
        for name in ("n_train", "n_val", "n_test"):
            if getattr(self, name) < 2:
                raise InvalidSpec(f"{name} must be >= 2")

    def size(self, split: str) -> int:
        try:
            return getattr(self, f"n_{split}")
        except AttributeError:
            raise InvalidSpec(f"unknown split {split!r}") from None


def _balanced_labels(n: int, gen: np.random.Generator) -> np.ndarray:
    n_pos = n // 2 + (int(gen.integers(2)) if n % 2 else 0)
    y = np.zeros(n, dtype=np.int64)
    y[:n_pos] = 1
    return gen.permutation(y)


def _linear_coord(y: np.ndarray, gamma: float, gen: np.random.Generator) -> np.ndarray:
    sign = 2.0 * y - 1.0
    return sign * (gamma + gen.uniform(0.0, JITTER, size=y.shape[0]))


def gen_ifm(spec: IfmSpec, split: str = "train") -> LabeledDataset:
    """Draw one split of an IFM dataset.

    Coordinate 0 is ``+-(gamma + U[0, 0.25])``; each nonlinear coordinate is a
    fair ``+-1`` for the positive class and exactly ``0`` for the negative
    class; noise coordinates are standard normal.
    """
    spec.validate()
    n = spec.size(split)
    gen = RngState(spec.seed, f"ifm/{split}").generator()
    y = _balanced_labels(n, gen)
    X = np.zeros((n, spec.d))
    X[:, 0] = _linear_coord(y, spec.gamma, gen)
    k = spec.num_nonlinear
    signs = gen.choice([-1.0, 1.0], size=(n, k))
    X[:, 1 : 1 + k] = signs * y[:, None]
    X[:, 1 + k :] = gen.standard_normal((n, spec.num_noise))
    roles = ("linear",) + ("nonlinear",) * k + ("noise",) * spec.num_noise
    meta = FeatureMeta(linear_coord=0, margin_gamma=float(spec.gamma), coord_roles=roles)
    return LabeledDataset(X, y, 2, meta)


def gen_pointmass_d(d: int, gamma: float, include_bias_coord: bool = False) -> LabeledDataset:
    """All ``2^(d-1)`` positive sign patterns followed by the one negative point."""
    if d < 2:
        raise InvalidInput("d must be >= 2")
    if d > 21:
        raise TooLarge(f"d={d} would materialize 2^{d - 1}+1 rows; use the closed forms instead")
    if not gamma > 0:
        raise InvalidInput("gamma must be positive")
    patterns = np.array(list(itertools.product([1.0, -1.0], repeat=d - 1))).reshape(-1, d - 1)
    pos = np.hstack([np.full((patterns.shape[0], 1), float(gamma)), patterns])
    neg = np.zeros((1, d))
    neg[0, 0] = -float(gamma)
    X = np.vstack([pos, neg])
    roles = ("linear",) + ("nonlinear",) * (d - 1)
    if include_bias_coord:
        X = np.hstack([X, np.ones((X.shape[0], 1))])
        roles = roles + ("bias",)
    y = np.r_[np.ones(pos.shape[0], dtype=np.int64), 0]
    meta = FeatureMeta(linear_coord=0, margin_gamma=float(gamma), coord_roles=roles)
    return LabeledDataset(X, y, 2, meta)


def gen_collage(spec: IfmSpec, complex_pattern: str = "xor", split: str = "train") -> LabeledDataset:
    """Two-block dataset: a margin-``gamma`` linear coordinate plus a nonlinear block.

    ``xor``: block coordinates are grouped in pairs, each pair holding
    magnitudes ``U[0.5, 1.5]`` whose sign product is ``+1`` exactly for the
    positive class; an odd leftover coordinate is label-independent.
    ``sphere``: the block's norm is below ``sqrt(k)`` for the negative class
    and above ``1.5 * sqrt(k)`` for the positive class.
    """
    spec.validate()
    k = spec.num_nonlinear
    if k < 2:
        raise InvalidSpec("collage needs num_nonlinear >= 2")
    n = spec.size(split)
    gen = RngState(spec.seed, f"collage-{complex_pattern}/{split}").generator()
    y = _balanced_labels(n, gen)
    X = np.zeros((n, spec.d))
    X[:, 0] = _linear_coord(y, spec.gamma, gen)
    roles = ["linear"] + ["nonlinear"] * k
    if complex_pattern == "xor":
        mags = gen.uniform(0.5, 1.5, size=(n, k))
        signs = gen.choice([-1.0, 1.0], size=(n, k))
        parity = 2.0 * y - 1.0
        for j in range(0, k - 1, 2):
            # force the pair's sign product to equal the label sign
            signs[:, j + 1] = parity * signs[:, j]
        if k % 2:
            roles[-1] = "noise"
        X[:, 1 : 1 + k] = mags * signs
    elif complex_pattern == "sphere":
        z = gen.standard_normal((n, k))
        z /= np.linalg.norm(z, axis=1, keepdims=True)
        scale = math.sqrt(k)
        radius = np.where(y == 1, gen.uniform(1.5, 2.0, n), gen.uniform(0.25, 1.0, n)) * scale
        X[:, 1 : 1 + k] = z * radius[:, None]
    else:
        raise InvalidSpec(f"unknown complex_pattern {complex_pattern!r}")
    X[:, 1 + k :] = gen.standard_normal((n, spec.num_noise))
    roles += ["noise"] * spec.num_noise
    meta = FeatureMeta(linear_coord=0, margin_gamma=float(spec.gamma), coord_roles=tuple(roles))
    return LabeledDataset(X, y, 2, meta)


def make_splits(spec: IfmSpec, family: str = "ifm") -> dict:
    """Train/val/test splits for ``family`` in {"ifm", "collage-xor", "collage-sphere"}."""
    if family == "ifm":
        return {s: gen_ifm(spec, s) for s in ("train", "val", "test")}
    if family.startswith("collage-"):
        pattern = family.split("-", 1)[1]
        return {s: gen_collage(spec, pattern, s) for s in ("train", "val", "test")}
    raise InvalidSpec(f"unknown dataset family {family!r}")


# ---------------------------------------------------------------------------
# CSV persistence


def _fmt_opt(v):
    return "none" if v is None else repr(v)


def save_dataset(ds: LabeledDataset, path) -> None:
    """Write ``ds`` as CSV; floats use 17 significant digits.

    The write goes to a temporary file first and is renamed into place.
    """
    path = os.fspath(path)
    gamma = None if ds.meta.margin_gamma is None else float(ds.meta.margin_gamma)
    header = (
        f"{_HEADER} d={ds.d} L={ds.num_classes} "
        f"linear_coord={_fmt_opt(ds.meta.linear_coord)} gamma={_fmt_opt(gamma)}"
    )
    lines = [header]
    if ds.meta.coord_roles:
        lines.append("# roles=" + ",".join(ds.meta.coord_roles))
    for row, label in zip(ds.X, ds.y):
        lines.append(",".join(f"{v:.17g}" for v in row) + f",{int(label)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def _parse_header(line: str) -> dict:
    if not line.startswith(_HEADER):
        raise ParseError("missing '# ldsb-dataset v1' header", line=1)
    fields = {}
    for tok in line[len(_HEADER) :].split():
        key, sep, value = tok.partition("=")
        if not sep:
            raise ParseError(f"bad header token {tok!r}", line=1)
        fields[key] = value
    missing = {"d", "L", "linear_coord", "gamma"} - fields.keys()
    if missing:
        raise ParseError(f"header missing {sorted(missing)}", line=1)
    try:
        return {
            "d": int(fields["d"]),
            "L": int(fields["L"]),
            "linear_coord": None if fields["linear_coord"] == "none" else int(fields["linear_coord"]),
            "gamma": None if fields["gamma"] == "none" else float(fields["gamma"]),
        }
    except ValueError as exc:
        raise ParseError(f"bad header value: {exc}", line=1) from None


def load_dataset(path) -> LabeledDataset:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("empty file", line=1)
    hdr = _parse_header(lines[0])
    d = hdr["d"]
    roles = ()
    rows, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("# roles="):
            roles = tuple(line[len("# roles=") :].split(","))
            continue
        parts = line.split(",")
        if len(parts) != d + 1:
            raise ParseError(f"expected {d} features and a label, found {len(parts)} fields", line=lineno)
        try:
            rows.append([float(p) for p in parts[:d]])
            labels.append(int(parts[d]))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
    if not rows:
        raise ParseError("no data rows", line=len(lines))
    meta = FeatureMeta(hdr["linear_coord"], hdr["gamma"], roles)
    try:
        return LabeledDataset(np.array(rows), np.array(labels), hdr["L"], meta)
    except InvalidInput as exc:
        raise ParseError(str(exc)) from None
