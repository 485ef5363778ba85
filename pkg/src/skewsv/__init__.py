"""Stochastic volatility with sparsity-selected dynamic skewness."""

from . import data_io, evaluation, model, sampler, skew_normal, summaries
from .data_io import TimeSeries, diff, read_csv, write_csv
from .model import LatentPaths, ModelConfig, StaticParams, default_config, simulate
from .sampler import Diagnostics, HmcConfig, PosteriorDraws, run_chains
from .skew_normal import SkewNormalMoments, SkewNormalParams
from .summaries import QuantileBand, band, static_summary

__version__ = "0.1.0"
