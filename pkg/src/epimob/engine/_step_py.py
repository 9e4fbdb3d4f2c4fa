"""Pure-numpy fallback for the per-timestep counting kernel."""
from __future__ import annotations

import numpy as np

BACKEND_NAME = "numpy"


def cell_counts(cells_t, comp, quarantined, ncells):
    """Per-cell S/E/I/R counts over non-quarantined users.

    Returns a (4, ncells) int64 array indexed by compartment code.
    """
    active = np.asarray(quarantined) == 0
    out = np.zeros((4, ncells), dtype=np.int64)
    for code in range(4):
        mask = active & (comp == code)
        if mask.any():
            out[code] = np.bincount(cells_t[mask], minlength=ncells)
    return out
