"""Divide-and-conquer kernel SVM training."""

from .kernel import KernelSpec, SparseVector, kernel_eval
from .data_io import SparseDataset, ModelFile, parse_libsvm, load_libsvm, load_model, save_model
from .solver import SolverConfig, DualSolution, solve_dual
from .dcsvm import DCConfig, DCModel, predict_early, predict_exact, train

__version__ = "0.1.0"

__all__ = [
    "KernelSpec", "SparseVector", "kernel_eval",
    "SparseDataset", "ModelFile", "parse_libsvm", "load_libsvm", "load_model", "save_model",
    "SolverConfig", "DualSolution", "solve_dual",
    "DCConfig", "DCModel", "predict_early", "predict_exact", "train",
]
