"""Periodic Green-type kernel of the fractional velocity law on the torus.

The scalar kernel G is defined by its Fourier coefficients on the integer
lattice,

    G_hat(n) = (2 pi |n|)^(-1-eps)   for 0 < |n| <= M,   G_hat(0) = 0,

summed over the Euclidean ball |n| <= M, and the velocity kernel is its
orthogonal gradient K = perp-grad G.  Near the origin the lattice sums
reproduce the free-space laws: G grows like r^-(1-eps) and |K| like
r^-(2-eps).

A regularized pair (G_delta, K_delta) is obtained by blending G with an
even quartic polynomial inside radius delta.  The polynomial matches the
angular-mean radial profile of G (value and first two derivatives) at
r = delta, and the blend window is a C^4 polynomial step supported on
[delta/2, delta], so G_delta == G exactly for r >= delta, is smooth at the
origin, and K_delta = perp-grad G_delta analytically.

All evaluators are immutable after construction and safe to share across
workers.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import special

from .torus import perp, wrap_displacement

__all__ = ["KernelConfig", "SpectralKernel", "SingularityError"]


class SingularityError(ValueError):
    """Unregularized kernel evaluated at zero displacement."""


@dataclass(frozen=True)
class KernelConfig:
    """Kernel parameters: exponent, spectral cutoff, regularization radius.

    epsilon must lie strictly inside (0,1); delta == 0 means no
    regularization, otherwise delta must stay below a torus quarter-width.
    """

    epsilon: float
    cutoff: int = 256
    delta: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.epsilon < 1.0):
            raise ValueError(f"epsilon must be in (0,1), got {self.epsilon}")
        if int(self.cutoff) < 1 or self.cutoff != int(self.cutoff):
            raise ValueError(f"cutoff must be a positive integer, got {self.cutoff}")
        if self.delta < 0.0:
            raise ValueError(f"delta must be >= 0, got {self.delta}")
        if self.delta > 0.0 and not self.delta < 0.25:
            raise ValueError(f"positive delta must be < 1/4, got {self.delta}")


@lru_cache(maxsize=16)
def _half_modes(epsilon, cutoff):
    """Half-lattice modes (n1>0, or n1==0 and n2>0) inside the ball, with
    the coefficient arrays used by the real evaluation paths."""
    M = int(cutoff)
    n = np.arange(-M, M + 1)
    n1, n2 = np.meshgrid(n, n, indexing="ij")
    nn2 = n1 * n1 + n2 * n2
    keep = (nn2 <= M * M) & ((n1 > 0) | ((n1 == 0) & (n2 > 0)))
    a1 = n1[keep].astype(float)
    a2 = n2[keep].astype(float)
    w = (2.0 * np.pi * np.sqrt(nn2[keep].astype(float))) ** (-1.0 - epsilon)
    return a1, a2, w


@lru_cache(maxsize=16)
def _shell_weights(epsilon, cutoff):
    """Distinct lattice radii rho=|n| in the ball with multiplicity-summed
    coefficients; used for the angular-mean radial profile."""
    M = int(cutoff)
    n = np.arange(-M, M + 1)
    n1, n2 = np.meshgrid(n, n, indexing="ij")
    nn2 = (n1 * n1 + n2 * n2).ravel()
    nn2 = nn2[(nn2 > 0) & (nn2 <= M * M)]
    uniq, counts = np.unique(nn2, return_counts=True)
    rho = np.sqrt(uniq.astype(float))
    w = counts * (2.0 * np.pi * rho) ** (-1.0 - epsilon)
    return rho, w


@lru_cache(maxsize=16)
def _axis_coefficients(epsilon, cutoff):
    """Column-collapsed coefficients c[n1] = sum_n2 G_hat(n1,n2), n1 >= 0."""
    M = int(cutoff)
    c = np.zeros(M + 1)
    for a in range(M + 1):
        bmax = int(np.floor(np.sqrt(M * M - a * a)))
        n2 = np.arange(-bmax, bmax + 1)
        nn = np.hypot(float(a), n2.astype(float))
        with np.errstate(divide="ignore"):
            w = (2.0 * np.pi * nn) ** (-1.0 - epsilon)
        if a == 0:
            w[bmax] = 0.0
        c[a] = w.sum()
    return c


def _smootherstep(t):
    """C^4 polynomial step: 0 at t<=0, 1 at t>=1."""
    t = np.clip(t, 0.0, 1.0)
    return t**5 * (70.0 * t**4 - 315.0 * t**3 + 540.0 * t**2 - 420.0 * t + 126.0)


def _smootherstep_deriv(t):
    inside = (t > 0.0) & (t < 1.0)
    t = np.clip(t, 0.0, 1.0)
    d = t**4 * (630.0 * t**4 - 2520.0 * t**3 + 3780.0 * t**2 - 2520.0 * t + 630.0)
    return np.where(inside, d, 0.0)


class SpectralKernel:
    """Direct (lattice-sum) evaluator for G, K and their regularizations.

    This path is exact up to rounding for any displacement; cost per point
    is proportional to the number of retained modes, so it suits small
    cutoffs, oracle computations and table construction checks.  K is
    evaluated through a sign-canonical representative, which makes
    K(-d) == -K(d) hold bit-exactly; K(0) = 0 by convention.
    """

    def __init__(self, config):
        self.config = config
        self._a1, self._a2, self._w = _half_modes(config.epsilon, config.cutoff)
        # coefficient arrays of the half-lattice real sums
        self._gw = 2.0 * self._w
        self._ku = 4.0 * np.pi * self._a2 * self._w
        self._kv = -4.0 * np.pi * self._a1 * self._w
        if config.delta > 0.0:
            self._blend = self._match_quartic(config.delta)
        else:
            self._blend = None

    # -- radial profile (angular mean) ------------------------------------

    def radial_mean(self, r, order=0):
        """Angular mean of G over the circle |d| = r (order 0), or its
        first/second radial derivative (order 1, 2), via Bessel sums."""
        rho, w = _shell_weights(self.config.epsilon, self.config.cutoff)
        r = np.atleast_1d(np.asarray(r, dtype=float))
        out = np.empty(r.shape)
        for i in range(0, r.size, 64):
            z = 2.0 * np.pi * np.outer(r[i:i + 64], rho)
            if order == 0:
                out[i:i + 64] = special.j0(z) @ w
            elif order == 1:
                out[i:i + 64] = -(special.j1(z) * (2.0 * np.pi * rho)) @ w
            elif order == 2:
                with np.errstate(invalid="ignore", divide="ignore"):
                    j1z = np.where(z > 0, special.j1(z) / np.where(z > 0, z, 1.0), 0.5)
                out[i:i + 64] = -((special.j0(z) - j1z) * (2.0 * np.pi * rho) ** 2) @ w
            else:
                raise ValueError("order must be 0, 1 or 2")
        return out

    def _match_quartic(self, delta):
        """Coefficients (a,b,c) of p(r) = a + b r^2 + c r^4 matching the
        radial-mean profile of G in value and two derivatives at r=delta."""
        g0 = float(self.radial_mean(delta, order=0)[0])
        g1 = float(self.radial_mean(delta, order=1)[0])
        g2 = float(self.radial_mean(delta, order=2)[0])
        c = (g2 - g1 / delta) / (8.0 * delta**2)
        b = (g1 / delta - 4.0 * c * delta**2) / 2.0
        a = g0 - b * delta**2 - c * delta**4
        return a, b, c

    # -- raw truncated sums ------------------------------------------------

    def _chunk(self):
        return max(8, int(3.0e7) // max(1, self._w.size))

    def _raw_g(self, d):
        pts = d.reshape(-1, 2)
        out = np.empty(len(pts))
        step = self._chunk()
        for i in range(0, len(pts), step):
            ph = 2.0 * np.pi * (np.outer(pts[i:i + step, 0], self._a1)
                                + np.outer(pts[i:i + step, 1], self._a2))
            out[i:i + step] = np.cos(ph) @ self._gw
        return out.reshape(d.shape[:-1])

    def _raw_k(self, d):
        pts = d.reshape(-1, 2)
        out = np.empty((len(pts), 2))
        step = self._chunk()
        for i in range(0, len(pts), step):
            ph = 2.0 * np.pi * (np.outer(pts[i:i + step, 0], self._a1)
                                + np.outer(pts[i:i + step, 1], self._a2))
            s = np.sin(ph)
            out[i:i + step, 0] = s @ self._ku
            out[i:i + step, 1] = s @ self._kv
        return out.reshape(d.shape)

    # -- public evaluation --------------------------------------------------

    def g(self, d):
        """Green-function values at displacement(s) d.

        Raises SingularityError at zero displacement when delta == 0.
        """
        d = wrap_displacement(np.asarray(d, dtype=float), 0.0)
        scalar = d.ndim == 1
        d = np.atleast_2d(d)
        r = np.sqrt(np.sum(d * d, axis=-1))
        if self._blend is None:
            if np.any(r == 0.0):
                raise SingularityError("G is singular at zero displacement (delta=0)")
            out = self._raw_g(d)
        else:
            out = self._blended_g(d, r)
        return out[0] if scalar else out

    def k(self, d):
        """Velocity kernel K = perp-grad G at displacement(s) d; K(0) = 0."""
        d = wrap_displacement(np.asarray(d, dtype=float), 0.0)
        scalar = d.ndim == 1
        d = np.atleast_2d(d)
        canon, sign = self._canonicalize(d)
        if self._blend is None:
            out = self._raw_k(canon)
        else:
            r = np.sqrt(np.sum(canon * canon, axis=-1))
            out = self._blended_k(canon, r)
        out = out * sign[..., None]
        return out[0] if scalar else out

    @staticmethod
    def _canonicalize(d):
        """Sign-canonical representative: flip d where (du<0) or (du==0, dv<0).

        Evaluating K only on canonical representatives and restoring the
        sign afterwards makes antisymmetry exact in floating point.
        """
        flip = (d[..., 0] < 0.0) | ((d[..., 0] == 0.0) & (d[..., 1] < 0.0))
        sign = np.where(flip, -1.0, 1.0)
        return d * sign[..., None], sign

    # -- regularized evaluation ---------------------------------------------

    def _window(self, r):
        delta = self.config.delta
        return _smootherstep((r - 0.5 * delta) / (0.5 * delta))

    def _window_deriv(self, r):
        delta = self.config.delta
        return _smootherstep_deriv((r - 0.5 * delta) / (0.5 * delta)) / (0.5 * delta)

    def _quartic(self, r):
        a, b, c = self._blend
        r2 = r * r
        return a + b * r2 + c * r2 * r2

    def _quartic_slope(self, r):
        # p'(r)/r, regular at the origin
        _, b, c = self._blend
        return 2.0 * b + 4.0 * c * r * r

    def _blended_g(self, d, r):
        out = self._quartic(r)
        near = r < self.config.delta
        outer = ~near
        mid = near & (r >= 0.5 * self.config.delta)
        if np.any(outer):
            out[outer] = self._raw_g(d[outer])
        if np.any(mid):
            w = self._window(r[mid])
            out[mid] = w * self._raw_g(d[mid]) + (1.0 - w) * out[mid]
        return out

    def _blended_k(self, d, r):
        # K_delta = w K + [w' (G - p) / r + (1-w) p'/r] d_perp
        out = self._quartic_slope(r)[..., None] * perp(d)
        near = r < self.config.delta
        outer = ~near
        mid = near & (r >= 0.5 * self.config.delta)
        if np.any(outer):
            out[outer] = self._raw_k(d[outer])
        if np.any(mid):
            rm = r[mid]
            w = self._window(rm)
            wp = self._window_deriv(rm)
            gm = self._raw_g(d[mid])
            km = self._raw_k(d[mid])
            radial = wp * (gm - self._quartic(rm)) / rm + (1.0 - w) * self._quartic_slope(rm)
            out[mid] = w[..., None] * km + radial[..., None] * perp(d[mid])
        return out

    # -- fast on-axis evaluation --------------------------------------------

    def axis_green(self, r):
        """G((r,0)) by column-collapsed cosine sums; cost O(M) per point.

        Used by the near-field law diagnostics, where the high cutoffs make
        full lattice sums wasteful.  Ignores any regularization.
        """
        c = _axis_coefficients(self.config.epsilon, self.config.cutoff)
        r = np.atleast_1d(np.asarray(r, dtype=float))
        n1 = np.arange(1, len(c))
        out = np.empty(r.shape)
        for i in range(0, r.size, 256):
            ph = 2.0 * np.pi * np.outer(r[i:i + 256], n1)
            out[i:i + 256] = c[0] + 2.0 * (np.cos(ph) @ c[1:])
        return out

    def axis_speed(self, r):
        """|K((r,0))| (= |K_v| on the axis) by collapsed sine sums."""
        c = _axis_coefficients(self.config.epsilon, self.config.cutoff)
        r = np.atleast_1d(np.asarray(r, dtype=float))
        n1 = np.arange(1, len(c))
        out = np.empty(r.shape)
        for i in range(0, r.size, 256):
            ph = 2.0 * np.pi * np.outer(r[i:i + 256], n1)
            out[i:i + 256] = np.abs(4.0 * np.pi * (np.sin(ph) @ (c[1:] * n1)))
        return out
