"""Patch individual filter (PIF) layers for 3D CNNs on a small numpy autodiff engine.

The public surface is re-exported here; the submodules hold the details:

* :mod:`pifnet.tensor` reverse-mode autodiff on float64 arrays
* :mod:`pifnet.layers` conv3d, pooling, activations, loss and Adam
* :mod:`pifnet.pif` the PIF layer and its patch grid
* :mod:`pifnet.lrp` alpha/beta relevance propagation
* :mod:`pifnet.data` synthetic volumes, splits, augmentation, PIFV files
* :mod:`pifnet.training` the training protocol and run reports
"""

from .errors import ConfigError, FormatError, LeakageError, NumericalError, PifError, ShapeError
from .lrp import LrpConfig, RelevanceMap, Start, heatmap
from .model import LayerSpec, ModelSpec, Network, count_parameters, load_checkpoint, save_checkpoint
from .pif import PatchGrid, PifLayerState, make_patch_grid, pif_forward
from .presets import PAIRS, PRESETS, get_preset
from .tensor import Rng, Tensor, backward
from .training import RunReport, TrainConfig, balanced_accuracy, early_stopping_check, run_experiment, train_one

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "FormatError", "LeakageError", "NumericalError", "PifError", "ShapeError",
    "LrpConfig", "RelevanceMap", "Start", "heatmap",
    "LayerSpec", "ModelSpec", "Network", "count_parameters", "load_checkpoint", "save_checkpoint",
    "PatchGrid", "PifLayerState", "make_patch_grid", "pif_forward",
    "PAIRS", "PRESETS", "get_preset",
    "Rng", "Tensor", "backward",
    "RunReport", "TrainConfig", "balanced_accuracy", "early_stopping_check", "run_experiment", "train_one",
]
