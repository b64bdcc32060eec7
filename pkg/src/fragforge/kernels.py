"""Kernel dispatch: the compiled extension when built, NumPy otherwise.

Set ``FRAGFORGE_PURE_PYTHON=1`` to force the NumPy fallback.
"""
import os

BACKEND = "python"
if os.environ.get("FRAGFORGE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from fragforge._ckernels import (  # noqa: F401
            min_cross_distance, pairwise_distances, radius_pairs, segment_sum, surrogate_terms,
        )

        BACKEND = "cython"
    except ImportError:
        pass

if BACKEND == "python":
    from fragforge._pykernels import (  # noqa: F401
        min_cross_distance, pairwise_distances, radius_pairs, segment_sum, surrogate_terms,
    )
