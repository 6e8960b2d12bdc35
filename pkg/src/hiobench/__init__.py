"""Stream-processing throughput benchmark: P2P framework, saturation search, bounds model."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
