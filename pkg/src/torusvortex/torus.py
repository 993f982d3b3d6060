"""Coordinates on the unit 2-torus.

Points live in the fundamental cell [0,1)^2 and are represented as float
arrays whose last axis has length 2.  Displacements between points are
always reduced to the minimal image, with components in (-1/2, 1/2]; ties
at distance exactly 1/2 resolve to +1/2 so that the reduction is a
deterministic function of the raw difference.
"""

import numpy as np

__all__ = ["wrap_position", "wrap_displacement", "displacement_norm", "perp"]


def wrap_position(x):
    """Reduce coordinates modulo 1 into [0,1)."""
    return np.mod(np.asarray(x, dtype=float), 1.0)


def wrap_displacement(p, q):
    """Minimal-image difference p - q with components in (-1/2, 1/2].

    Antisymmetric up to the boundary convention: if a component of the
    difference is exactly 1/2 modulo 1, both orders return +1/2.
    """
    d = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
    d = np.mod(d, 1.0)
    return np.where(d > 0.5, d - 1.0, d)


def displacement_norm(d):
    """Euclidean length of displacement(s), over the last axis."""
    d = np.asarray(d, dtype=float)
    return np.sqrt(np.sum(d * d, axis=-1))


def perp(d):
    """Rotate vector(s) by +90 degrees: (u, v) -> (-v, u)."""
    d = np.asarray(d, dtype=float)
    return np.stack([-d[..., 1], d[..., 0]], axis=-1)
