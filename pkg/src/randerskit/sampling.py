"""Deterministic point sets: Sobol boxes and quasi-uniform sphere directions."""

from __future__ import annotations

import numpy as np
from scipy.stats import qmc


def sobol_box(lower, upper, count: int, seed: int = 0) -> np.ndarray:
    """``count`` scrambled-Sobol points in the box, shape ``(count, n)``."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    sampler = qmc.Sobol(d=lower.size, scramble=True, seed=seed)
    m = max(1, int(np.ceil(np.log2(max(count, 2)))))
    pts = sampler.random_base2(m)[:count]
    return lower + pts * (upper - lower)


def sphere_directions(dim: int, count: int, offset: float = 0.0) -> np.ndarray:
    """Quasi-uniform unit vectors, shape ``(count, dim)``.

    2D: equally spaced angles shifted by ``offset`` steps.  3D: Fibonacci
    spiral (rotated by ``offset`` steps of the golden angle).  Higher
    dimensions: normalised Sobol-Gaussian points.
    """
    if dim == 1:
        return np.array([[1.0], [-1.0]] * (count // 2) + [[1.0]] * (count % 2))
    k = np.arange(count, dtype=float)
    if dim == 2:
        t = 2.0 * np.pi * (k + offset) / count
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if dim == 3:
        z = 1.0 - (2.0 * k + 1.0) / count
        r = np.sqrt(1.0 - z * z)
        t = np.pi * (3.0 - np.sqrt(5.0)) * (k + offset)
        return np.stack([r * np.cos(t), r * np.sin(t), z], axis=1)
    from scipy.stats import norm
    u = sobol_box(np.full(dim, 1e-9), np.full(dim, 1 - 1e-9), count, int(offset))
    g = norm.ppf(u)
    return g / np.linalg.norm(g, axis=1, keepdims=True)
