"""Supervised functional PCA with covariate-dependent mean and low-rank covariance."""

from .basis import SplineBasis, bspline_of_size, make_bspline, orthonormalize
from .errors import (DataError, DomainError, InitError, InvalidArgumentError, NumericalError,
                     SupFPCAError)
from .fit import FitConfig, FittedModel, cross_validate, fit
from .init import initialize
from .io import load_model, read_samples, save_model, write_samples
from .likelihood import nll_dense, nll_fast, prepare
from .model import Bases, FunctionalSample, ModelParams, eigen_surface, eigenfunctions_at, make_bases
from .penalty import Lambdas, assemble
from .predict import coverage, fve, infer_scores, predict_curve, predict_mse
from .sim import SimTruth, StudyConfig, generate, run_study

__all__ = [
    "SplineBasis", "bspline_of_size", "make_bspline", "orthonormalize",
    "DataError", "DomainError", "InitError", "InvalidArgumentError", "NumericalError", "SupFPCAError",
    "FitConfig", "FittedModel", "cross_validate", "fit", "initialize",
    "load_model", "read_samples", "save_model", "write_samples",
    "nll_dense", "nll_fast", "prepare",
    "Bases", "FunctionalSample", "ModelParams", "eigen_surface", "eigenfunctions_at", "make_bases",
    "Lambdas", "assemble",
    "coverage", "fve", "infer_scores", "predict_curve", "predict_mse",
    "SimTruth", "StudyConfig", "generate", "run_study",
]
