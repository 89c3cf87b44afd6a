"""Remote fault-aware retraining for fixed-point CNNs on soft-error-prone devices."""
from .kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
