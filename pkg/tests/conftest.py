import os
import sys

# test helpers (shared actor classes) live next to the tests
sys.path.insert(0, os.path.dirname(__file__))

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
