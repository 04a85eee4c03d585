"""rldist: composable distributed RL training on a hierarchical actor runtime."""

import os

# Workers fork from the driver; single-threaded BLAS avoids oversubscribing
# cores and fork-while-in-BLAS hazards. Must happen before numpy loads.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")

from . import taskrt  # noqa: E402

__all__ = ["taskrt"]
__version__ = "0.1.0"
