"""Low-dimensional simplicity bias in one-hidden-layer ReLU networks.

Submodules
----------
linalg      SVD/QR helpers and named random streams
datasets    synthetic dataset families and their CSV format
model       the network, its gradients and checkpoints
training    SGD with momentum and the warmup + cosine schedule
analysis    effective rank, bias subspaces and mixing metrics
orthop      training on the orthogonal complement, diversity, ensembles
ntk         closed-form kernel and rich-regime margin checks
estimators  scikit-learn compatible wrappers
cli         the ``ldsb`` command
"""

__version__ = "0.1.0"

from .analysis import (
    Projector,
    SBReport,
    auto_rank,
    effective_rank,
    mixing_metrics,
    optimize_projector,
    top_subspace,
)
from .datasets import IfmSpec, LabeledDataset, gen_collage, gen_ifm, gen_pointmass_d, load_dataset, save_dataset
from .estimators import BiasSubspace, OrthoPEnsemble, ShallowReLUClassifier
from .exceptions import *  # noqa: F401,F403
from .linalg import RngState
from .model import MLP, forward, init_lazy, init_rich, load_checkpoint, loss_and_grad, predict, save_checkpoint
from .orthop import DiversityReport, diversity_report, ensemble_predict, orthop_train, robustness_sweep
from .training import TrainConfig, TrainLog, fit_network, preset, train
