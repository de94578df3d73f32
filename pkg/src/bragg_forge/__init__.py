"""Error-robust Bragg pulse synthesis and atom-interferometer simulation."""

from ._kernels import BACKEND_NAME as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
