"""MIMO Volterra identification with tensor trains and Tensor Head Averaging."""
from ._backend import BACKEND
from .diagnostics import baking_probe, cost_model, diagnose, evaluate_bounds, tail_norm
from .ensemble import (
    Ensemble,
    SubsetPlan,
    coverage_diag,
    head_predictions,
    optimize_weights,
    select_subsets,
    tha_predict,
    train_heads,
)
from .exceptions import ConvergenceError, DeskScaleError, GaugeError
from .features import DataSet, SystemConfig, gram_lambda_max, regressor_matrix
from .mvmals import SolverConfig, fit
from .tt import TTCoefficients, tt_predict, tt_predict_batch

__version__ = "0.1.0"
