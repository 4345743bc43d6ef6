"""HyperEnergy: a kernelized hypernetwork that generates LSTM weights for load forecasting."""

__version__ = "0.1.0"

from .autodiff import Tensor, backward, finite_diff_check, no_grad  # noqa: E402
from .data import PreparedData, TimeSeries, ingest_csv, prepare, synth_generate  # noqa: E402
from .evaluation import ablation_run, build_variant, evaluate  # noqa: E402
from .gridsearch import TABLE_II_SPACE, enumerate_space, grid_search  # noqa: E402
from .integration import build_layout, extract_layer_params  # noqa: E402
from .kernel import adaptive_kernel_forward, make_kernel  # noqa: E402
from .metrics import mae, rmse, smape  # noqa: E402
from .primary import HyperEnergyModel, build_hyperenergy, read_checkpoint, save_checkpoint  # noqa: E402
from .training import TrainConfig, train  # noqa: E402

__all__ = [
    "Tensor", "backward", "finite_diff_check", "no_grad",
    "PreparedData", "TimeSeries", "ingest_csv", "prepare", "synth_generate",
    "ablation_run", "build_variant", "evaluate",
    "TABLE_II_SPACE", "enumerate_space", "grid_search",
    "build_layout", "extract_layer_params",
    "adaptive_kernel_forward", "make_kernel",
    "mae", "rmse", "smape",
    "HyperEnergyModel", "build_hyperenergy", "read_checkpoint", "save_checkpoint",
    "TrainConfig", "train",
]
