"""Binary morphology on 2-D masks with the 4-connected cross element.

Pixels outside the frame count as background: erosion eats the frame rim,
dilation clamps at the frame.
"""

from __future__ import annotations

import numpy as np


def _as_bool_mask(mask) -> np.ndarray:
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {m.shape}")
    return m.astype(bool)


def erode(mask, iterations: int = 1) -> np.ndarray:
    m = _as_bool_mask(mask)
    for _ in range(iterations):
        out = m.copy()
        out[1:] &= m[:-1]
        out[:-1] &= m[1:]
        out[:, 1:] &= m[:, :-1]
        out[:, :-1] &= m[:, 1:]
        # out-of-frame neighbors are background, so the rim always erodes
        out[0, :] = False
        out[-1, :] = False
        out[:, 0] = False
        out[:, -1] = False
        m = out
    return m


def dilate(mask, iterations: int = 1) -> np.ndarray:
    m = _as_bool_mask(mask)
    for _ in range(iterations):
        out = m.copy()
        out[1:] |= m[:-1]
        out[:-1] |= m[1:]
        out[:, 1:] |= m[:, :-1]
        out[:, :-1] |= m[:, 1:]
        m = out
    return m


def boundary_band(mask, band: int = 1) -> np.ndarray:
    """Pixels of the mask within `band` of its border: mask minus its erosion."""
    m = _as_bool_mask(mask)
    return m & ~erode(m, band)
