"""The symmetrized nonlinearity H_phi and its statistics.

For a test function phi and velocity kernel K,

    H_phi(x, y) = (1/2) K(x - y) . (grad phi(x) - grad phi(y)),

which is symmetric under swapping x and y (both factors are odd) and
vanishes on the diagonal since K(0) = 0.  The one-half factor makes the
weak-form identity d/dt <theta, phi> = <theta x theta, H_phi> hold exactly
for the vortex dynamics.

Diagonal-cutoff approximations multiply H_phi by 1 - bump(n |x-y|), which
kills a neighbourhood of the diagonal of width 1/(2n) and leaves H_phi
untouched at separations beyond 1/n.  Their L2 norms are computed by
stratified quadrature over the separation variable: dyadic square frames
around the origin, tensor Gauss-Legendre panels per rectangle, and
adaptive bisection of the worst panels until the requested relative
tolerance is met.  The squared integrand

    H_phi^2 integrated over the base point  =  (1/4) K(d)^T S(d) K(d),
    S_ab(d) = sum_k (2 pi k_a)(2 pi k_b) |phi_hat(k)|^2 . 4 sin^2(pi k.d),

is exact in the base point, so only the separation integral is quadrature.
"""

import heapq
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from .kernel import _smootherstep
from .spectral import pair_field, sample_white_noise

__all__ = [
    "BumpCutoff", "HphiEvaluator", "SymmetricProduct", "PairingStats",
    "QuadratureResult", "QuadratureToleranceError",
    "pairing_vortex", "h_phi_l2", "h_phi_l2_diff", "wn_pairing_samples",
    "wn_pairing_stats", "diagonal_trace",
]


class QuadratureToleranceError(RuntimeError):
    """Requested relative tolerance unattainable at the configured depth."""


@dataclass(frozen=True)
class BumpCutoff:
    """Radial C^4 polynomial bump: 1 on [0, 1/2], 0 beyond 1, monotone."""

    index: int

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("cutoff index must be >= 1")

    @staticmethod
    def profile(s):
        s = np.asarray(s, dtype=float)
        return 1.0 - _smootherstep(2.0 * s - 1.0)

    def factor(self, dist):
        """Multiplier 1 - profile(n |d|): 0 inside 1/(2n), 1 outside 1/n."""
        return _smootherstep(2.0 * self.index * np.asarray(dist, dtype=float) - 1.0)


@dataclass(frozen=True)
class HphiEvaluator:
    """H_phi or its diagonal-cutoff variant, for a fixed kernel evaluator."""

    phi: object
    kernel: object
    cutoff_index: Optional[int] = None

    @property
    def bump(self):
        return BumpCutoff(self.cutoff_index) if self.cutoff_index else None

    def evaluate(self, x, y):
        """H values for batched point pairs; swap-symmetric bit-for-bit."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        from .torus import wrap_displacement
        d = wrap_displacement(x, y)
        k = self.kernel.k(d)
        gdiff = self.phi.gradient(x) - self.phi.gradient(y)
        h = 0.5 * (k[..., 0] * gdiff[..., 0] + k[..., 1] * gdiff[..., 1])
        if self.cutoff_index:
            h = h * self.bump.factor(np.hypot(d[..., 0], d[..., 1]))
        return h

    def diag_values(self, x):
        x = np.asarray(x, dtype=float)
        return self.evaluate(x, x)


@dataclass(frozen=True)
class SymmetricProduct:
    """Rank-one symmetric function f(x, y) = phi(x) phi(y)."""

    phi: object

    def evaluate(self, x, y):
        return self.phi(x) * self.phi(y)

    def diag_values(self, x):
        v = self.phi(x)
        return v * v


def _pairing_batch(positions, intensities, evaluator):
    """<theta x theta, H> for batched replicas: (1/N) sum_{i,j} xi_i xi_j H_ij."""
    from .torus import wrap_displacement
    pos = np.asarray(positions, dtype=float)
    xi = np.asarray(intensities, dtype=float)
    d = wrap_displacement(pos[..., :, None, :], pos[..., None, :, :])
    k = evaluator.kernel.k(d)
    grad = evaluator.phi.gradient(pos)
    gdiff = grad[..., :, None, :] - grad[..., None, :, :]
    h = 0.5 * (k[..., 0] * gdiff[..., 0] + k[..., 1] * gdiff[..., 1])
    if evaluator.cutoff_index:
        h = h * evaluator.bump.factor(np.hypot(d[..., 0], d[..., 1]))
    n = pos.shape[-2]
    return np.einsum("...ij,...i,...j->...", h, xi, xi) / n


def pairing_vortex(ensemble, evaluator):
    """Discrete pairing of the scaled vortex field against H."""
    return float(_pairing_batch(ensemble.positions[None],
                                ensemble.intensities[None], evaluator)[0])


# -- separation-variable quadrature ----------------------------------------

@dataclass
class QuadratureResult:
    value: float
    error: float
    n_evals: int


@lru_cache(maxsize=8)
def _gl_nodes(p):
    x, w = np.polynomial.legendre.leggauss(p)
    return x, w


def _panel(f, rect, p):
    (a, b), (c, e) = rect
    x, w = _gl_nodes(p)
    xu = 0.5 * (b - a) * x + 0.5 * (a + b)
    xv = 0.5 * (e - c) * x + 0.5 * (c + e)
    uu, vv = np.meshgrid(xu, xv, indexing="ij")
    pts = np.stack([uu.ravel(), vv.ravel()], axis=-1)
    vals = f(pts)
    ww = np.outer(w, w).ravel() * (0.25 * (b - a) * (e - c))
    return float(vals @ ww), pts.shape[0]


def _initial_frames(levels):
    """Dyadic max-norm frames covering [-1/2, 1/2]^2, plus the core square."""
    rects = []
    s = 0.5
    for _ in range(levels):
        t = s / 2.0
        rects.append(((t, s), (-s, s)))
        rects.append(((-s, -t), (-s, s)))
        rects.append(((-t, t), (t, s)))
        rects.append(((-t, t), (-s, -t)))
        s = t
    rects.append(((-s, s), (-s, s)))
    return rects


def _adaptive_quadrature(f, levels, rel_tol, p=8, max_panels=6000):
    """Adaptive panel integration with per-panel (p vs 2p) error estimates."""
    n_evals = 0
    heap = []
    total = 0.0
    err = 0.0

    def assess(rect, idx):
        nonlocal n_evals, total, err
        coarse, n1 = _panel(f, rect, p)
        fine, n2 = _panel(f, rect, 2 * p)
        n_evals += n1 + n2
        total += fine
        err += abs(fine - coarse)
        heapq.heappush(heap, (-abs(fine - coarse), idx, fine, rect))

    for idx, rect in enumerate(_initial_frames(levels)):
        assess(rect, idx)
    counter = len(heap)
    while err > rel_tol * max(abs(total), 1e-300) and err > 0.0:
        if counter >= max_panels:
            raise QuadratureToleranceError(
                f"relative tolerance {rel_tol:g} unattainable with {max_panels} "
                f"panels (estimate {total:.6g}, error {err:.2g})")
        neg_e, _, fine, rect = heapq.heappop(heap)
        total -= fine
        err += neg_e
        (a, b), (c, e) = rect
        mu, mv = 0.5 * (a + b), 0.5 * (c + e)
        for sub in (((a, mu), (c, mv)), ((mu, b), (c, mv)),
                    ((a, mu), (mv, e)), ((mu, b), (mv, e))):
            assess(sub, counter)
            counter += 1
    return QuadratureResult(value=total, error=err, n_evals=n_evals)


def _squared_integrand(evaluator, weight=None):
    """x-integrated H^2 as a function of the separation d."""
    phi = evaluator.phi
    keep = ~np.all(phi.modes == 0, axis=1)
    modes = phi.modes[keep].astype(float)
    amp2 = np.abs(phi.coeffs[keep]) ** 2
    kk = 2.0 * np.pi * modes
    cuu = amp2 * kk[:, 0] * kk[:, 0]
    cuv = amp2 * kk[:, 0] * kk[:, 1]
    cvv = amp2 * kk[:, 1] * kk[:, 1]

    def f(pts):
        k = evaluator.kernel.k(pts)
        s2 = 4.0 * np.sin(np.pi * (pts @ modes.T)) ** 2
        suu = s2 @ cuu
        suv = s2 @ cuv
        svv = s2 @ cvv
        out = 0.25 * (k[:, 0] ** 2 * suu + 2.0 * k[:, 0] * k[:, 1] * suv
                      + k[:, 1] ** 2 * svv)
        if weight is not None:
            out = out * weight(np.hypot(pts[:, 0], pts[:, 1]))
        return out

    return f, modes.size > 0


def _quadrature_levels(evaluator, extra_index=None):
    m = evaluator.kernel.config.cutoff
    scale = 4.0 * m
    if extra_index:
        scale = max(scale, 8.0 * extra_index)
    if evaluator.kernel.config.delta > 0.0:
        scale = max(scale, 8.0 / evaluator.kernel.config.delta)
    return int(np.clip(np.ceil(np.log2(scale)), 6, 24))


def h_phi_l2(evaluator, rel_tol=1e-3):
    """L2(T^2 x T^2) norm of H (or of its cutoff variant) by stratified
    quadrature; the result carries the propagated error estimate."""
    weight = None
    if evaluator.cutoff_index:
        bump = evaluator.bump
        weight = lambda r: bump.factor(r) ** 2
    f, nontrivial = _squared_integrand(evaluator, weight)
    if not nontrivial:
        return QuadratureResult(value=0.0, error=0.0, n_evals=0)
    res = _adaptive_quadrature(f, _quadrature_levels(evaluator, evaluator.cutoff_index),
                               rel_tol)
    norm = float(np.sqrt(max(res.value, 0.0)))
    err = res.error / (2.0 * norm) if norm > 0 else res.error
    return QuadratureResult(value=norm, error=err, n_evals=res.n_evals)


def h_phi_l2_diff(evaluator, index, rel_tol=1e-3):
    """||H - H^n||_{L2} for the raw evaluator and cutoff index n."""
    if evaluator.cutoff_index:
        raise ValueError("pass the raw (uncut) evaluator")
    bump = BumpCutoff(index)
    weight = lambda r: bump.profile(index * r) ** 2
    f, nontrivial = _squared_integrand(evaluator, weight)
    if not nontrivial:
        return QuadratureResult(value=0.0, error=0.0, n_evals=0)
    res = _adaptive_quadrature(f, _quadrature_levels(evaluator, index), rel_tol)
    norm = float(np.sqrt(max(res.value, 0.0)))
    err = res.error / (2.0 * norm) if norm > 0 else res.error
    return QuadratureResult(value=norm, error=err, n_evals=res.n_evals)


# -- white-noise pairing ----------------------------------------------------

@dataclass
class PairingStats:
    mean: float
    variance: float
    mean_stderr: float
    variance_stderr: float
    n_samples: int


class _SpectralPairing:
    """Evaluates <w x w, H^n> spectrally for truncated white noise.

    Undoing the symmetrization turns the pairing into a convolution form

        <w x w, H^n> = int w(x) grad phi(x) . (V * w)(x) dx,
        V(d) = (1 - bump(n|d|)) K(d),

    whose band-limited version is exact on an FFT grid.  V is band-limited
    by sampling on a fine grid and keeping the modes seen by w.
    """

    def __init__(self, evaluator, field_cutoff):
        from scipy.fft import next_fast_len
        from .table import grid_samples
        if not evaluator.cutoff_index:
            raise ValueError("white-noise pairing needs a diagonal cutoff (H^n)")
        self.M = int(field_cutoff)
        cfg = evaluator.kernel.config
        bump = evaluator.bump
        sample_res = next_fast_len(int(max(4 * cfg.cutoff, 4 * self.M,
                                           8 * evaluator.cutoff_index, 256)))
        _, ku, kv = grid_samples(cfg, sample_res)
        ax = np.arange(sample_res) / sample_res
        ax = np.where(ax > 0.5, ax - 1.0, ax)
        r = np.hypot(ax[:, None], ax[None, :])
        w = bump.factor(r)
        vu_hat = np.fft.fft2(ku * w) / sample_res**2
        vv_hat = np.fft.fft2(kv * w) / sample_res**2
        M = self.M
        n = np.arange(-M, M + 1)
        n1, n2 = np.meshgrid(n, n, indexing="ij")
        ball = (n1 * n1 + n2 * n2) <= M * M
        iu, iv = np.mod(n1, sample_res), np.mod(n2, sample_res)
        self.vu = np.where(ball, vu_hat[iu, iv], 0.0)
        self.vv = np.where(ball, vv_hat[iu, iv], 0.0)
        self.ball = ball
        phi = evaluator.phi
        self.P = next_fast_len(2 * M + 2 * phi.band + 2)
        grid = np.stack(np.meshgrid(np.arange(self.P) / self.P,
                                    np.arange(self.P) / self.P, indexing="ij"), axis=-1)
        self.grad_phi = phi.gradient(grid.reshape(-1, 2)).reshape(self.P, self.P, 2)
        self.iu, self.iv = np.mod(n1, self.P), np.mod(n2, self.P)

    def _to_grid(self, coeffs_batch):
        B = coeffs_batch.shape[0]
        spec = np.zeros((B, self.P, self.P), dtype=complex)
        spec[:, self.iu, self.iv] = coeffs_batch
        return np.fft.ifft2(spec, axes=(-2, -1)).real * (self.P * self.P)

    def samples(self, coeffs_batch):
        """Pairing values for a batch of coefficient arrays (B, 2M+1, 2M+1)."""
        w_grid = self._to_grid(coeffs_batch)
        au = self._to_grid(coeffs_batch * self.vu)
        av = self._to_grid(coeffs_batch * self.vv)
        integrand = w_grid * (self.grad_phi[..., 0] * au + self.grad_phi[..., 1] * av)
        return integrand.mean(axis=(-2, -1))


def wn_pairing_samples(f, fields):
    """Pairing statistic for explicit white-noise fields (shared cutoff)."""
    if isinstance(f, SymmetricProduct):
        return np.array([pair_field(w, f.phi) ** 2 for w in fields])
    M = fields[0].cutoff
    machine = _SpectralPairing(f, M)
    coeffs = np.stack([w.coeffs for w in fields])
    return machine.samples(coeffs)


def wn_pairing_stats(f, samples, cutoff, rng, chunk=256):
    """Monte Carlo mean/variance of <w x w, f> over truncated white noise.

    f must be symmetric: either a SymmetricProduct or an HphiEvaluator
    with a diagonal cutoff (raw H_phi is too singular to pair directly).
    """
    if isinstance(f, HphiEvaluator):
        machine = _SpectralPairing(f, cutoff)

        def batch_values(ws):
            return machine.samples(np.stack([w.coeffs for w in ws]))
    elif isinstance(f, SymmetricProduct):
        def batch_values(ws):
            return np.array([pair_field(w, f.phi) ** 2 for w in ws])
    else:
        raise ValueError(f"unsupported (or non-symmetric) pairing function {f!r}")
    vals = np.empty(samples)
    done = 0
    while done < samples:
        b = min(chunk, samples - done)
        ws = [sample_white_noise(cutoff, rng) for _ in range(b)]
        vals[done:done + b] = batch_values(ws)
        done += b
    mean = float(vals.mean())
    var = float(vals.var(ddof=1))
    m4 = float(np.mean((vals - mean) ** 4))
    return PairingStats(mean=mean, variance=var,
                        mean_stderr=float(np.sqrt(var / samples)),
                        variance_stderr=float(np.sqrt(max(m4 - var**2, 0.0) / samples)),
                        n_samples=samples)


def diagonal_trace(f, resolution=128):
    """Quadrature of x -> f(x, x) over the torus."""
    ax = np.arange(resolution) / resolution
    uu, vv = np.meshgrid(ax, ax, indexing="ij")
    pts = np.stack([uu.ravel(), vv.ravel()], axis=-1)
    return float(np.mean(f.diag_values(pts)))
