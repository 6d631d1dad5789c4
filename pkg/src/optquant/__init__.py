"""Optimal quadratic quantization in one dimension, quantization-based
cubature, and quantized control variates for Monte Carlo pricing."""

from .cubature import fit_rate, quantized_expectation, rate_study, richardson_romberg
from .distrib import Distribution, exponential, lognormal, normal, parse_distribution, uniform
from .gridio import GridStore, read_grid, write_grid
from .product_quant import ProductGrid, expansion_check, product_expectation
from .quantizer import OptimizeConfig, QuantizerGrid, brute_force_quantizer, distortion, optimize

__all__ = [
    "Distribution",
    "normal",
    "lognormal",
    "uniform",
    "exponential",
    "parse_distribution",
    "QuantizerGrid",
    "OptimizeConfig",
    "optimize",
    "distortion",
    "brute_force_quantizer",
    "GridStore",
    "read_grid",
    "write_grid",
    "quantized_expectation",
    "rate_study",
    "richardson_romberg",
    "fit_rate",
    "ProductGrid",
    "product_expectation",
    "expansion_check",
]

__version__ = "0.1.0"
