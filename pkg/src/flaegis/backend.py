"""Kernel backend selection: compiled extension if present, numpy fallback.

Set FLAEGIS_PURE=1 to force the fallback (used by the cross-backend tests).
"""

from __future__ import annotations

import os

if os.environ.get("FLAEGIS_PURE", "") == "1":
    from flaegis import _kernels_py as _impl
else:
    try:
        from flaegis import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        from flaegis import _kernels_py as _impl

BACKEND = _impl.BACKEND

sax_symbols = _impl.sax_symbols
cosine_sim_int = _impl.cosine_sim_int
jacobi_eigh = _impl.jacobi_eigh
kmeans_iterate = _impl.kmeans_iterate
meanshift_flat = _impl.meanshift_flat
