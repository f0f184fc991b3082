"""scikit-learn compatible wrappers.

These wrap the functional core so networks, subspace projections and the
two-model ensemble can sit inside pipelines, ``clone`` and grid searches.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin, clone
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from . import analysis
from .datasets import LabeledDataset
from .exceptions import InvalidInput
from .linalg import RngState
from .model import forward, init_network
from .training import PRESETS, TrainConfig, train


def _decision(logits):
    # sklearn convention: binary problems get a 1-D score for the positive class
    if logits.shape[1] == 2:
        return logits[:, 1] - logits[:, 0]
    return logits


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class ShallowReLUClassifier(ClassifierMixin, BaseEstimator):
    """One-hidden-layer ReLU classifier trained with SGD + momentum.

    Parameters
    ----------
    regime : {"rich", "lazy"}
        Initialization scale. ``"rich"`` uses unit-sphere rows, +-1 output
        weights and 1/m output scaling; ``"lazy"`` uses Gaussian NTK scaling.
    hidden_width : int
        Number of hidden units.
    steps, batch_size, momentum, weight_decay, warmup_frac, eval_every
        Optimizer settings, see :class:`ldsb.training.TrainConfig`.
    peak_lr : float or None
        Peak learning rate; ``None`` picks the regime's preset value.
    random_state : int
        Seed for initialization and batch order.

    Attributes
    ----------
    net_ : MLP
        Trained network.
    log_ : TrainLog
        Per-evaluation training records.
    classes_ : ndarray
        Class labels seen during ``fit``.
    """

    def __init__(
        self,
        regime="rich",
        hidden_width=100,
        steps=4000,
        batch_size=128,
        peak_lr=None,
        momentum=0.9,
        weight_decay=0.0,
        warmup_frac=0.05,
        eval_every=200,
        random_state=0,
    ):
        self.regime = regime
        self.hidden_width = hidden_width
        self.steps = steps
        self.batch_size = batch_size
        self.peak_lr = peak_lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.warmup_frac = warmup_frac
        self.eval_every = eval_every
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        if self.regime not in ("rich", "lazy"):
            raise InvalidInput(f"regime must be 'rich' or 'lazy', got {self.regime!r}")
        lr = PRESETS[self.regime].peak_lr if self.peak_lr is None else self.peak_lr
        return TrainConfig(
            steps=self.steps,
            batch_size=self.batch_size,
            peak_lr=lr,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            warmup_frac=self.warmup_frac,
            seed=int(self.random_state),
            eval_every=self.eval_every,
        )

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        if len(self.classes_) < 2:
            raise ValueError("training data contains only one class")
        data = LabeledDataset(X, self._encoder.transform(y), len(self.classes_))
        config = self._config()
        net = init_network(self.regime, self.hidden_width, X.shape[1], len(self.classes_), RngState(config.seed, "init"))
        self.net_, self.log_ = train(net, data, config)
        return self

    def logits(self, X):
        """Raw network outputs, one column per class."""
        check_is_fitted(self, "net_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return forward(self.net_, X)

    def decision_function(self, X):
        return _decision(self.logits(X))

    def predict_proba(self, X):
        return _softmax(self.logits(X))

    def predict(self, X):
        scores = self.logits(X)
        return self.classes_[np.argmax(scores, axis=1)]


class BiasSubspace(TransformerMixin, BaseEstimator):
    """Find the input subspace a fitted network depends on.

    ``transform`` returns the component orthogonal to that subspace, which
    is the input the second OrthoP model is trained on.

    Parameters
    ----------
    estimator : ShallowReLUClassifier
        A fitted classifier (it is not refitted).
    rank : int or "auto"
        Subspace dimension; ``"auto"`` keeps ``energy`` of ``|W|_F^2``.
    method : {"svd", "optimize"}
        Top right-singular directions of the first layer, or gradient
        search over projectors (lazy-regime networks).
    lam, opt_steps, opt_lr : float, int, float
        Settings for ``method="optimize"``.
    """

    def __init__(self, estimator=None, rank=1, method="svd", energy=0.99, lam=1.0, opt_steps=2000, opt_lr=0.1, random_state=0):
        self.estimator = estimator
        self.rank = rank
        self.method = method
        self.energy = energy
        self.lam = lam
        self.opt_steps = opt_steps
        self.opt_lr = opt_lr
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.estimator is None:
            raise ValueError("BiasSubspace needs a fitted estimator")
        check_is_fitted(self.estimator, "net_")
        X = validate_data(self, X, dtype=np.float64)
        net = self.estimator.net_
        k = analysis.auto_rank(net, self.energy) if self.rank == "auto" else int(self.rank)
        if self.method == "svd":
            self.projector_ = analysis.top_subspace(net, k)
        elif self.method == "optimize":
            if y is None:
                raise ValueError("method='optimize' needs labels")
            labels = self.estimator._encoder.transform(y)
            data = LabeledDataset(X, labels, net.c)
            self.projector_ = analysis.optimize_projector(
                net, data, k, self.lam, steps=self.opt_steps, lr=self.opt_lr, seed=int(self.random_state)
            )
        else:
            raise ValueError(f"unknown method {self.method!r}")
        return self

    def transform(self, X):
        check_is_fitted(self, "projector_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return self.projector_.apply_perp(X)

    def project(self, X):
        """Component of ``X`` inside the subspace."""
        check_is_fitted(self, "projector_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return self.projector_.apply(X)


class OrthoPEnsemble(ClassifierMixin, BaseEstimator):
    """Two-model ensemble: ``f`` on raw inputs, ``f_proj`` on the complement of ``f``'s subspace.

    Predictions average the two models' logits.

    Parameters
    ----------
    base : ShallowReLUClassifier or None
        Template for both members (cloned). Defaults to a rich-regime net.
    rank : int or "auto"
        Dimension of the subspace projected out before training ``f_proj``.
    """

    def __init__(self, base=None, rank=1, energy=0.99, random_state=0):
        self.base = base
        self.rank = rank
        self.energy = energy
        self.random_state = random_state

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        base = self.base if self.base is not None else ShallowReLUClassifier()
        self.first_ = clone(base).set_params(random_state=self.random_state).fit(X, y)
        self.classes_ = self.first_.classes_
        self.subspace_ = BiasSubspace(self.first_, rank=self.rank, energy=self.energy).fit(X, y)
        self.second_ = clone(base).set_params(random_state=self.random_state + 1).fit(self.subspace_.transform(X), y)
        # fold the projection into the second net so it takes raw inputs
        self.second_.net_ = replace(self.second_.net_, W=self.subspace_.projector_.apply_perp(self.second_.net_.W))
        return self

    def logits(self, X):
        check_is_fitted(self, "second_")
        X = validate_data(self, X, reset=False, dtype=np.float64)
        return 0.5 * (forward(self.first_.net_, X) + forward(self.second_.net_, X))

    def decision_function(self, X):
        return _decision(self.logits(X))

    def predict(self, X):
        scores = self.logits(X)
        return self.classes_[np.argmax(scores, axis=1)]
