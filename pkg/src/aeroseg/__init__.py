"""Dual-stream (local + global) patch-based segmentation of aerial imagery."""
import os as _os

# AEROSEG_THREADS caps the BLAS thread pools; it only takes effect when set
# before numpy is first imported.
if _os.environ.get("AEROSEG_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["AEROSEG_THREADS"])

__version__ = "0.1.0"
