"""Sequential training on the orthogonal complement, diversity metrics, ensembles.

``orthop_train`` takes a trained network ``f``, finds the subspace its first
layer concentrates on and trains a second network on inputs with that
subspace projected out. The projection is folded into the second network's
first layer, so the returned ``f_proj`` consumes raw inputs.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .analysis import Projector, auto_rank, top_subspace
from .datasets import LabeledDataset
from .exceptions import InsufficientData, InvalidInput, ShapeError
from .linalg import RngState, as_generator
from .model import MLP, forward, init_network
from .training import TrainConfig, train

__all__ = [
    "DiversityReport",
    "RobustnessCurve",
    "cc_logit_corr",
    "diversity_report",
    "ensemble_logits",
    "ensemble_predict",
    "mistake_diversity",
    "orthop_train",
    "robustness_sweep",
]

Model = Union[MLP, Sequence[MLP]]


def orthop_train(
    f: MLP,
    data: LabeledDataset,
    k: Union[int, str],
    config: TrainConfig,
    val: Optional[LabeledDataset] = None,
    regime: Optional[str] = None,
    energy: float = 0.99,
):
    """Train ``f_proj`` on ``(P_perp x, y)`` where ``P`` is ``f``'s top subspace.

    ``k="auto"`` picks the rank holding ``energy`` of ``|W|_F^2``. Returns
    ``(f_proj, P, log)``; ``f`` is left untouched.
    """
    if k == "auto":
        k = auto_rank(f, energy)
    P = top_subspace(f, int(k))
    regime = regime or f.regime
    proj_data = data.with_features(P.apply_perp(data.X))
    proj_val = val.with_features(P.apply_perp(val.X)) if val is not None else None
    net0 = init_network(regime, f.m, f.d, f.c, RngState(config.seed, "orthop/init"))
    g, log = train(net0, proj_data, config, proj_val)
    # W (I - P) x == W (P_perp x): the trained net now accepts raw inputs
    g.W = P.apply_perp(g.W)
    return g, P, log


# ---------------------------------------------------------------------------
# diversity


@dataclass
class DiversityReport:
    mist_div: float
    cc_logit_corr: float
    degenerate_flag: bool = False

    def to_dict(self) -> dict:
        out = asdict(self)
        out["percent"] = {
            "mist_div": round(100 * self.mist_div, 2),
            "cc_logit_corr": round(100 * self.cc_logit_corr, 2),
        }
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _as_logits(model: Model, X) -> np.ndarray:
    if isinstance(model, MLP):
        return forward(model, X)
    return ensemble_logits(*model, X=X)


def _mist_div(pred_f, pred_g, y):
    wrong_f = pred_f != y
    wrong_g = pred_g != y
    denom = min(wrong_f.sum(), wrong_g.sum())
    if denom == 0:
        return 0.0, True
    return 1.0 - float(np.sum(wrong_f & wrong_g)) / denom, False


def mistake_diversity(f: Model, g: Model, data: LabeledDataset) -> float:
    """``1 - |both wrong| / min(|f wrong|, |g wrong|)``; 0 if either makes no mistake."""
    pf = np.argmax(_as_logits(f, data.X), axis=1)
    pg = np.argmax(_as_logits(g, data.X), axis=1)
    return _mist_div(pf, pg, data.y)[0]


def _cc_corr(lf, lg, y, num_classes):
    per_class = []
    for cls in range(num_classes):
        mask = y == cls
        if mask.sum() < 3:
            raise InsufficientData(f"class {cls} has {mask.sum()} samples; need at least 3")
        a, b = lf[mask], lg[mask]
        a = a - a.mean(axis=0)
        b = b - b.mean(axis=0)
        sa = np.sqrt(np.sum(a * a, axis=0))
        sb = np.sqrt(np.sum(b * b, axis=0))
        ok = (sa > 0) & (sb > 0)
        if ok.any():
            corr = np.sum(a[:, ok] * b[:, ok], axis=0) / (sa[ok] * sb[ok])
            per_class.append(float(np.mean(corr)))
    if not per_class:
        return float("nan"), True
    return float(np.mean(per_class)), False


def cc_logit_corr(f: Model, g: Model, data: LabeledDataset) -> float:
    """Class-conditioned logit correlation.

    Within each class, Pearson correlation between the two models' logits is
    taken per output coordinate and averaged; the class values are then
    averaged. Zero-variance coordinates are skipped, and classes where every
    coordinate is skipped drop out (all dropped gives ``nan``).
    """
    lf = _as_logits(f, data.X)
    lg = _as_logits(g, data.X)
    return _cc_corr(lf, lg, data.y, data.num_classes)[0]


def diversity_report(f: Model, g: Model, data: LabeledDataset, mistakes_on: Optional[LabeledDataset] = None):
    """Both diversity numbers in one report.

    Mistake diversity is measured on ``mistakes_on`` when given (e.g. a
    noise-perturbed copy of ``data`` for models that make no clean mistakes).
    """
    md_data = mistakes_on if mistakes_on is not None else data
    md, md_flag = _mist_div(
        np.argmax(_as_logits(f, md_data.X), axis=1),
        np.argmax(_as_logits(g, md_data.X), axis=1),
        md_data.y,
    )
    cc, cc_flag = _cc_corr(_as_logits(f, data.X), _as_logits(g, data.X), data.y, data.num_classes)
    return DiversityReport(md, cc, md_flag or cc_flag)


# ---------------------------------------------------------------------------
# ensembles and robustness


def ensemble_logits(*models: MLP, X) -> np.ndarray:
    if not models:
        raise InvalidInput("an ensemble needs at least one model")
    first = models[0]
    for other in models[1:]:
        if other.c != first.c or other.d != first.d:
            raise ShapeError("ensemble members must share input and output sizes")
    return sum(forward(m, X) for m in models) / len(models)


def ensemble_predict(f: MLP, g: MLP, X) -> np.ndarray:
    """Argmax of the averaged logits; ties go to the smaller class index."""
    return np.argmax(ensemble_logits(f, g, X=X), axis=1)


@dataclass
class RobustnessCurve:
    sigmas: np.ndarray
    accuracies: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["sigma", "model", "accuracy"])
        for i, s in enumerate(self.sigmas):
            for name, accs in self.accuracies.items():
                w.writerow([repr(float(s)), name, repr(float(accs[i]))])
        return buf.getvalue()


def robustness_sweep(
    models: Mapping[str, Model],
    data: LabeledDataset,
    sigmas: Sequence[float],
    trials: int = 5,
    rng=None,
) -> RobustnessCurve:
    """Mean accuracy of each model under additive isotropic Gaussian noise.

    A model is an ``MLP`` or a sequence of MLPs (logit-averaging ensemble).
    Every model sees the same noise draw within a (sigma, trial) cell.
    """
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if np.any(sigmas < 0):
        raise InvalidInput("sigmas must be nonnegative")
    if trials < 1:
        raise InvalidInput("trials must be >= 1")
    gen = as_generator(rng, "robustness")
    acc = {name: np.zeros(len(sigmas)) for name in models}
    for i, s in enumerate(sigmas):
        for _ in range(trials):
            noise = gen.standard_normal(data.X.shape)
            X = data.X + s * noise if s else data.X
            for name, model in models.items():
                acc[name][i] += np.mean(np.argmax(_as_logits(model, X), axis=1) == data.y)
        for name in models:
            acc[name][i] /= trials
    return RobustnessCurve(sigmas, acc)


def with_noise(data: LabeledDataset, sigma: float, rng=None) -> LabeledDataset:
    """Copy of ``data`` with ``N(0, sigma^2 I)`` added to every row."""
    gen = as_generator(rng, "noise")
    return data.with_features(data.X + sigma * gen.standard_normal(data.X.shape))
