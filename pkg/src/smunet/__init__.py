"""Frequency-disentangled state-space segmentation network, desk scale."""

import os as _os

# Thread cap must land in the environment before numpy/numba initialize.
# SMUN_THREADS defaults to 1 so runs are bit-exact; raising it trades
# reproducibility of BLAS reductions for speed.
_threads = _os.environ.get("SMUN_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS", "NUMBA_NUM_THREADS"):
    _os.environ.setdefault(_var, _threads)

__version__ = "0.1.0"
