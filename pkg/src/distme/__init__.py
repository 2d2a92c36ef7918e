"""Bayesian structured additive distributional regression with measurement error correction."""

from .config import RunConfig, parse_config, serialize_config
from .evaluation import dic, proper_scores, quantile_residuals, rmse_vs_truth, waic
from .families import Beta, Gaussian, get_family
from .model import MESpec, ModelSpec, TermSpec, build_model, parse_formula
from .sampler import ChainConfig, PosteriorSamples, run_chain
from .workflow import cross_validate, fit, ingest_observations, predict_draws

__version__ = "0.1.0"

__all__ = [
    "Beta",
    "ChainConfig",
    "Gaussian",
    "MESpec",
    "ModelSpec",
    "PosteriorSamples",
    "RunConfig",
    "TermSpec",
    "build_model",
    "cross_validate",
    "dic",
    "fit",
    "get_family",
    "ingest_observations",
    "parse_config",
    "parse_formula",
    "predict_draws",
    "proper_scores",
    "quantile_residuals",
    "rmse_vs_truth",
    "run_chain",
    "serialize_config",
    "waic",
]
