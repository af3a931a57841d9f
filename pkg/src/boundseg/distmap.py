"""Binary masks to normalized exponential boundary distance maps.

The map is exp(-D) where D is the exact Euclidean distance (in pixels)
to the nearest mask boundary pixel, computed over the whole frame;
boundary pixels therefore carry the maximum value 1.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyMask, EmptySiteSet


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with a background 4-neighbor (frame border counts
    as background).  Returns an (k, 2) array of (row, col) coordinates in
    row-major order.
    """
    m = np.asarray(mask) != 0
    if m.ndim != 2:
        raise EmptyMask(f"mask must be 2-D, got shape {m.shape}")
    if not m.any():
        raise EmptyMask("mask has no foreground pixels")
    padded = np.pad(m, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1] &
                padded[1:-1, :-2] & padded[1:-1, 2:])
    boundary = m & ~interior
    return np.argwhere(boundary)


# stands in for +inf: parabolas this high never win against any real
# squared pixel distance, and it keeps the envelope arithmetic NaN-free
_FAR = 1e20


def _edt_1d_sq(f: np.ndarray) -> np.ndarray:
    """Exact 1-D squared distance transform of a sampled function
    (lower envelope of parabolas)."""
    n = f.shape[0]
    d = np.empty(n, dtype=np.float64)
    v = np.zeros(n, dtype=np.intp)  # parabola sites
    z = np.empty(n + 1, dtype=np.float64)  # envelope breakpoints
    k = 0
    z[0] = -np.inf
    z[1] = np.inf
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2 * q - 2 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) ** 2 + f[v[k]]
    return d


def euclidean_dt(sites: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Exact minimal Euclidean distance from every pixel to the nearest site.

    `sites` is an (k, 2) array of (row, col) coordinates inside `shape`.
    Two 1-D passes over squared distances keep this exact (not a chamfer
    approximation).
    """
    sites = np.asarray(sites)
    h, w = shape
    if sites.size == 0:
        raise EmptySiteSet("site set is empty")
    if sites.ndim != 2 or sites.shape[1] != 2:
        raise EmptySiteSet(f"sites must be (k, 2) coordinates, got shape {sites.shape}")
    if (sites < 0).any() or (sites[:, 0] >= h).any() or (sites[:, 1] >= w).any():
        raise EmptySiteSet("site coordinates fall outside the grid")

    f = np.full((h, w), _FAR, dtype=np.float64)
    f[sites[:, 0], sites[:, 1]] = 0.0
    # pass 1: down each column, pass 2: along each row
    for j in range(w):
        f[:, j] = _edt_1d_sq(f[:, j])
    for i in range(h):
        f[i, :] = _edt_1d_sq(f[i, :])
    return np.sqrt(f)


def mask_to_distance_map(mask: np.ndarray) -> np.ndarray:
    """exp(-D) over the whole frame; exactly 1.0 on boundary pixels."""
    b = boundary_pixels(mask)
    d = euclidean_dt(b, mask.shape)
    return np.exp(-d).astype(np.float32)
