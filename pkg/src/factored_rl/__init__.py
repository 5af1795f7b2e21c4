"""Offline reinforcement learning in factorisable discrete action spaces."""

from factored_rl.kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
