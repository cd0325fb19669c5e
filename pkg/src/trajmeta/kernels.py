"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the pure-Python
twin.  Set ``TRAJMETA_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

BACKEND = "python"

if os.environ.get("TRAJMETA_PURE_PYTHON", "") not in ("", "0"):
    from ._kernels_py import *  # noqa: F401,F403
else:
    try:
        from ._kernels import *  # noqa: F401,F403
        BACKEND = "cython"
    except ImportError:
        from ._kernels_py import *  # noqa: F401,F403

from ._kernels_py import N_MOTIF_STATS, N_TRAJ_STATS  # noqa: E402,F401

__all__ = [
    "BACKEND",
    "moderator_r2_many",
    "moderator_tau2",
    "motif_stats",
    "r2_from_tau2",
    "trajectory_stats",
]
