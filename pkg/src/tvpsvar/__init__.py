"""Time-varying parameter VAR with stochastic volatility and Student-t shocks."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
