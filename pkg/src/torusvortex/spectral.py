"""Truncated Fourier fields on the torus: white noise, norms, pairings.

A field is stored as the complex coefficient array c[n1+M, n2+M] over the
square [-M, M]^2, with support restricted to the Euclidean ball |n| <= M
and Hermitian symmetry c(-n) = conj(c(n)), so every field is real-valued.
The orthonormal system is e_n(x) = exp(2 pi i n.x) and coefficients are
c(n) = <field, e_n>.

White-noise samples put independent standard complex Gaussians on a fixed
half lattice (n1 > 0, or n1 = 0 and n2 > 0), scaled so that the pairing
covariance E[<w,phi><w,psi>] = <phi,psi> holds exactly on the retained
modes; the constant mode gets a real standard normal.
"""

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SpectralField", "TestFunction", "FieldShapeError",
    "sample_white_noise", "sobolev_norm", "hminus_distance",
    "pair_field", "empirical_spectrum",
]


class FieldShapeError(ValueError):
    """Operands carry different spectral cutoffs."""


def _lattice(M):
    n = np.arange(-M, M + 1)
    n1, n2 = np.meshgrid(n, n, indexing="ij")
    return n1, n2, n1 * n1 + n2 * n2


@dataclass(frozen=True)
class SpectralField:
    """Hermitian coefficient array over the lattice ball |n| <= cutoff."""

    cutoff: int
    coeffs: np.ndarray  # complex, shape (2M+1, 2M+1), index [n1+M, n2+M]

    def __post_init__(self):
        M = self.cutoff
        if self.coeffs.shape != (2 * M + 1, 2 * M + 1):
            raise FieldShapeError(
                f"coefficient array shape {self.coeffs.shape} does not match cutoff {M}")

    def coefficient(self, n1, n2):
        M = self.cutoff
        if abs(n1) > M or abs(n2) > M or n1 * n1 + n2 * n2 > M * M:
            return 0.0 + 0.0j
        return self.coeffs[n1 + M, n2 + M]

    def evaluate(self, points):
        """Pointwise synthesis sum_n c(n) e^{2 pi i n.x}; returns complex."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n1, n2, nn2 = _lattice(self.cutoff)
        keep = nn2 <= self.cutoff**2
        ph = 2.0 * np.pi * (np.outer(pts[:, 0], n1[keep]) + np.outer(pts[:, 1], n2[keep]))
        return np.exp(1j * ph) @ self.coeffs[keep]

    # -- serialization ------------------------------------------------------

    def ball_modes(self):
        """Lattice points of the ball in fixed row-major order."""
        n1, n2, nn2 = _lattice(self.cutoff)
        keep = nn2 <= self.cutoff**2
        return n1[keep], n2[keep]

    def to_csv(self, path):
        n1, n2 = self.ball_modes()
        vals = self.coeffs[n1 + self.cutoff, n2 + self.cutoff]
        with open(path, "w") as fh:
            fh.write("n1,n2,re,im\n")
            for a, b, c in zip(n1, n2, vals):
                fh.write(f"{a},{b},{c.real!r},{c.imag!r}\n")

    def to_bytes(self):
        n1, n2 = self.ball_modes()
        vals = self.coeffs[n1 + self.cutoff, n2 + self.cutoff]
        out = np.empty(2 * vals.size)
        out[0::2] = vals.real
        out[1::2] = vals.imag
        return np.int64(self.cutoff).tobytes() + out.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, blob):
        M = int(np.frombuffer(blob, dtype="<i8", count=1)[0])
        raw = np.frombuffer(blob, dtype="<f8", offset=8)
        field = cls(cutoff=M, coeffs=np.zeros((2 * M + 1, 2 * M + 1), dtype=complex))
        n1, n2 = field.ball_modes()
        vals = raw[0::2] + 1j * raw[1::2]
        field.coeffs[n1 + M, n2 + M] = vals
        return field


@dataclass(frozen=True)
class TestFunction:
    """Real trigonometric polynomial with exact evaluation and gradient."""

    modes: np.ndarray   # int, shape (K, 2)
    coeffs: np.ndarray  # complex, shape (K,), Hermitian-closed

    @classmethod
    def from_pairs(cls, pairs):
        """Build from {(n1, n2): coefficient}; the Hermitian mirror of every
        entry is filled in automatically."""
        full = {}
        for (a, b), c in pairs.items():
            c = complex(c)
            if (a, b) == (0, 0):
                if c.imag != 0.0:
                    raise ValueError("constant-mode coefficient must be real")
                full[(0, 0)] = full.get((0, 0), 0.0) + c
            else:
                full[(a, b)] = full.get((a, b), 0.0) + c
                full[(-a, -b)] = full.get((-a, -b), 0.0) + np.conj(c)
        items = sorted(full.items())
        modes = np.array([m for m, _ in items], dtype=int).reshape(-1, 2)
        coeffs = np.array([c for _, c in items], dtype=complex)
        return cls(modes=modes, coeffs=coeffs)

    @classmethod
    def constant(cls, value=1.0):
        return cls.from_pairs({(0, 0): value})

    @classmethod
    def harmonic(cls, k, kind="cos", amplitude=None):
        """sqrt(2) cos(2 pi k.x) or sqrt(2) sin(2 pi k.x); unit L2 norm."""
        a = (np.sqrt(2.0) if amplitude is None else amplitude) / 2.0
        k = tuple(int(v) for v in k)
        if kind == "cos":
            return cls.from_pairs({k: a})
        if kind == "sin":
            return cls.from_pairs({k: -1j * a})
        raise ValueError("kind must be 'cos' or 'sin'")

    def __add__(self, other):
        pairs = {}
        for m, c in zip(map(tuple, self.modes), self.coeffs):
            pairs[m] = pairs.get(m, 0.0) + c
        for m, c in zip(map(tuple, other.modes), other.coeffs):
            pairs[m] = pairs.get(m, 0.0) + c
        items = sorted(pairs.items())
        return TestFunction(modes=np.array([m for m, _ in items], dtype=int).reshape(-1, 2),
                            coeffs=np.array([c for _, c in items], dtype=complex))

    def scaled(self, factor):
        return TestFunction(modes=self.modes.copy(), coeffs=self.coeffs * factor)

    def __call__(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ph = 2.0 * np.pi * (pts[..., 0:1] * self.modes[:, 0] + pts[..., 1:2] * self.modes[:, 1])
        vals = np.exp(1j * ph) @ self.coeffs
        return vals.real.reshape(np.asarray(points).shape[:-1])

    def gradient(self, points):
        pts = np.asarray(points, dtype=float)
        ph = 2.0 * np.pi * (pts[..., 0:1] * self.modes[:, 0] + pts[..., 1:2] * self.modes[:, 1])
        ex = np.exp(1j * ph) * (2j * np.pi * self.coeffs)
        gu = (ex @ self.modes[:, 0].astype(float)).real
        gv = (ex @ self.modes[:, 1].astype(float)).real
        return np.stack([gu, gv], axis=-1)

    def norm_l2(self):
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2)))

    def inner(self, other):
        lookup = {tuple(m): c for m, c in zip(map(tuple, other.modes), other.coeffs)}
        acc = 0.0 + 0.0j
        for m, c in zip(map(tuple, self.modes), self.coeffs):
            acc += c * np.conj(lookup.get(m, 0.0))
        return float(acc.real)

    @property
    def band(self):
        return int(np.max(np.abs(self.modes))) if self.modes.size else 0


def sample_white_noise(cutoff, rng):
    """Truncated white-noise sample on the ball |n| <= cutoff."""
    M = int(cutoff)
    if M < 1:
        raise ValueError("cutoff must be >= 1")
    n1, n2, nn2 = _lattice(M)
    ball = nn2 <= M * M
    half = ball & ((n1 > 0) | ((n1 == 0) & (n2 > 0)))
    nh = int(np.count_nonzero(half))
    ab = rng.standard_normal((2, nh))
    c = np.zeros((2 * M + 1, 2 * M + 1), dtype=complex)
    c[half] = (ab[0] + 1j * ab[1]) / np.sqrt(2.0)
    c[::-1, ::-1][half] = np.conj(c[half])
    c[M, M] = rng.standard_normal()
    return SpectralField(cutoff=M, coeffs=c)


def sobolev_norm(field, s):
    """Truncated H^s norm sqrt(sum (1+|n|^2)^s |c(n)|^2)."""
    M = field.cutoff
    _, _, nn2 = _lattice(M)
    keep = nn2 <= M * M
    w = (1.0 + nn2[keep]) ** s
    return float(np.sqrt(np.sum(w * np.abs(field.coeffs[keep]) ** 2)))


def hminus_distance(a, b, terms=32):
    """Truncation of the H^{-1-} metric: sum_{n<=terms} 2^-n (||a-b||_{H^{-1-1/n}} ^ 1).

    Monotone non-decreasing in `terms`; the omitted tail is below 2^-terms.
    """
    if a.cutoff != b.cutoff:
        raise FieldShapeError(f"cutoff mismatch: {a.cutoff} vs {b.cutoff}")
    if terms < 1:
        raise ValueError("terms must be >= 1")
    M = a.cutoff
    _, _, nn2 = _lattice(M)
    keep = nn2 <= M * M
    diff2 = np.abs(a.coeffs[keep] - b.coeffs[keep]) ** 2
    base = 1.0 + nn2[keep]
    total = 0.0
    for n in range(1, terms + 1):
        norm = np.sqrt(np.sum(base ** (-1.0 - 1.0 / n) * diff2))
        total += 2.0 ** (-n) * min(norm, 1.0)
    return total


def pair_field(field, phi):
    """Duality pairing <field, phi> = sum c(n) conj(phi_hat(n))."""
    acc = 0.0 + 0.0j
    for m, c in zip(map(tuple, phi.modes), phi.coeffs):
        acc += field.coefficient(*m) * np.conj(c)
    return float(acc.real)


def empirical_spectrum(ensemble, cutoff):
    """Fourier coefficients of the scaled vortex sum: c(n) = N^{-1/2} sum_k
    xi_k exp(-2 pi i n.X_k), restricted to the ball |n| <= cutoff."""
    M = int(cutoff)
    pos = np.asarray(ensemble.positions, dtype=float)
    xi = np.asarray(ensemble.intensities, dtype=float)
    n = np.arange(-M, M + 1)
    A = np.exp(-2j * np.pi * np.outer(n, pos[:, 0]))
    B = np.exp(-2j * np.pi * np.outer(n, pos[:, 1]))
    c = (A * xi) @ B.T / np.sqrt(len(xi))
    _, _, nn2 = _lattice(M)
    c[nn2 > M * M] = 0.0
    return SpectralField(cutoff=M, coeffs=c)
