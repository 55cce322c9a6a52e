"""8-bit Muon: blockwise-quantized optimizer state for Muon and AdamW.

Submodules:

``linalg``   matmul, thin SVD (one-sided Jacobi), polar factor, Newton-Schulz
``quant``    linear/dynamic 8-bit codebooks, blockwise tensor quantization
``optim``    SGD-momentum, AdamW, Muon steps and the optimizer variants
``bounds``   Monte Carlo verifiers for the single-step error bounds
``testbed``  small problems and a deterministic training loop
``memory``   optimizer-state memory accounting for GPT configs
``cli``      the ``muon8`` command
"""
from ._backend import BACKEND
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    HypothesisError,
    Muon8Error,
    NumericalError,
    RankError,
    ShapeError,
    ZeroInputError,
)
from .linalg import matmul, newton_schulz, polar_factor, thin_svd
from .optim import HyperParams, make_optimizer, partition_params
from .quant import BlockQuantizer, PassThroughQuantizer, dequantize_tensor, quantize_tensor

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BlockQuantizer",
    "ConfigError",
    "DataError",
    "DivergenceError",
    "HyperParams",
    "HypothesisError",
    "Muon8Error",
    "NumericalError",
    "PassThroughQuantizer",
    "RankError",
    "ShapeError",
    "ZeroInputError",
    "dequantize_tensor",
    "make_optimizer",
    "matmul",
    "newton_schulz",
    "partition_params",
    "polar_factor",
    "quantize_tensor",
    "thin_svd",
]
