"""Full-duplex self-interference simulation and digital cancellation models."""

from .evaluation import EvalReport, GridConfig, evaluate_cell, run_grid, sia
from .frontend import AdParams, PaParams, SiChannel, SiDataset, gen_hammerstein, gen_wiener
from .neuralnet import KINDS, ModelArch, ParamVector, count_macs, count_params, default_arch, forward, init_params
from .signal import ComplexSeq, OfdmConfig, generate_ofdm
from .training import AdamConfig, fit_linear_ls, predict, train, two_stage

__version__ = "0.1.0"

__all__ = [
    "AdParams", "AdamConfig", "ComplexSeq", "EvalReport", "GridConfig", "KINDS", "ModelArch", "OfdmConfig",
    "PaParams", "ParamVector", "SiChannel", "SiDataset", "count_macs", "count_params", "default_arch",
    "evaluate_cell", "fit_linear_ls", "forward", "gen_hammerstein", "gen_wiener", "generate_ofdm",
    "init_params", "predict", "run_grid", "sia", "train", "two_stage",
]
