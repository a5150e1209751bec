"""Seeded randomness helpers.

All experiments draw from a counter-based 64-bit generator (Philox), so a
given seed reproduces the same stream on every platform regardless of how
many draws other components consumed.  Normal variates are produced by the
Box-Muller transform on top of the uniform stream.
"""

import numpy as np

from .coords import SimplexPoint

TWO_PI = 2.0 * np.pi


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def normal_vector(rng: np.random.Generator, dim: int) -> np.ndarray:
    """dim i.i.d. standard normals via Box-Muller."""
    pairs = (dim + 1) // 2
    u = rng.random((pairs, 2))
    r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))  # 1 - u is in (0, 1], log is finite
    ang = TWO_PI * u[:, 1]
    z = np.concatenate([r * np.cos(ang), r * np.sin(ang)])
    return z[:dim]


def normal_matrix(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    return normal_vector(rng, rows * cols).reshape(rows, cols)


def random_simplex_point(rng: np.random.Generator, n: int) -> SimplexPoint:
    """Uniform (flat Dirichlet) draw from the interior of the n-simplex,
    via normalized standard exponentials."""
    x = -np.log1p(-rng.random(n + 1))
    return SimplexPoint(x / x.sum())


def random_simplex_batch(rng: np.random.Generator, n: int, count: int) -> np.ndarray:
    """count independent flat-Dirichlet draws, one per row."""
    x = -np.log1p(-rng.random((count, n + 1)))
    return x / x.sum(axis=1, keepdims=True)
