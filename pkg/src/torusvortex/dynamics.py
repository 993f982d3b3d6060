"""CLT-scaled point-vortex dynamics on the torus.

N vortices with fixed intensities xi move under

    dx_i/dt = N^{-1/2} sum_{j != i} xi_j K(x_i - x_j),

integrated with fixed-step RK4.  The i = j term vanishes since K(0) = 0.
Initial data are drawn from the product law of i.i.d. standard-normal
intensities and i.i.d. uniform positions, which the flow leaves invariant.

Batched integration evolves many independent replicas in one tensor so the
per-step kernel evaluation is a single vectorized call; `integrate` is the
single-ensemble front end and Monte Carlo drivers use `integrate_batch`.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .torus import wrap_displacement, wrap_position

__all__ = [
    "VortexEnsemble", "IntegratorConfig", "Trajectory", "GuardEvent",
    "CollisionError", "BlowUpError", "sample_initial", "velocity_rhs",
    "integrate", "integrate_batch", "interaction_energy", "lyapunov",
    "suggest_lyapunov_offset", "flow_jacobian_det", "min_pairwise_distance",
    "write_trajectory_csv",
]


class CollisionError(RuntimeError):
    """Coincident vortices under unregularized dynamics."""


class BlowUpError(RuntimeError):
    """Non-finite state encountered during integration."""


@dataclass(frozen=True)
class VortexEnsemble:
    positions: np.ndarray    # (N, 2) in [0,1)^2
    intensities: np.ndarray  # (N,)
    epsilon: float

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float)
        x = np.asarray(self.intensities, dtype=float)
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 1:
            raise ValueError("positions must have shape (N, 2) with N >= 1")
        if x.shape != (p.shape[0],):
            raise ValueError("intensities must have shape (N,)")
        object.__setattr__(self, "positions", wrap_position(p))
        object.__setattr__(self, "intensities", x)

    @property
    def size(self):
        return self.positions.shape[0]


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float
    t_final: float
    scheme: str = "rk4"
    guard_distance: float = 1e-4
    delta: float = 0.0

    def __post_init__(self):
        if self.scheme != "rk4":
            raise ValueError(f"unknown scheme {self.scheme!r}; only 'rk4' is provided")
        if not (self.dt > 0.0):
            raise ValueError("dt must be positive")
        if self.t_final < 0.0:
            raise ValueError("t_final must be >= 0")
        if self.dt > self.t_final > 0.0:
            raise ValueError("dt must not exceed t_final")
        if not (0.0 <= self.guard_distance < 0.25):
            raise ValueError("guard_distance must lie in [0, 1/4)")
        if self.delta < 0.0:
            raise ValueError("delta must be >= 0")

    @property
    def n_steps(self):
        if self.t_final == 0.0:
            return 0
        steps = round(self.t_final / self.dt)
        if abs(steps * self.dt - self.t_final) > 1e-9 * max(1.0, self.t_final):
            raise ValueError("t_final must be an integer multiple of dt")
        return int(steps)


@dataclass(frozen=True)
class GuardEvent:
    step: int
    pair: tuple
    distance: float
    replica: int = 0


@dataclass
class Trajectory:
    times: np.ndarray        # (S+1,)
    positions: np.ndarray    # (S+1, N, 2)
    intensities: np.ndarray  # (N,)
    epsilon: float
    min_distances: np.ndarray  # (S+1,)
    guard_event: Optional[GuardEvent] = None

    def ensemble(self, step=-1):
        return VortexEnsemble(positions=self.positions[step],
                              intensities=self.intensities, epsilon=self.epsilon)


def sample_initial(n, rng, epsilon):
    """Draw N uniform positions and N standard-normal intensities."""
    if n < 1:
        raise ValueError("n must be >= 1")
    positions = rng.uniform(0.0, 1.0, size=(n, 2))
    intensities = rng.standard_normal(n)
    return VortexEnsemble(positions=positions, intensities=intensities, epsilon=epsilon)


def _pair_displacements(positions):
    """Minimal-image x_i - x_j for batched positions (..., N, 2)."""
    return wrap_displacement(positions[..., :, None, :], positions[..., None, :, :])


def _batch_velocities(positions, intensities, kernel):
    """RHS for batched states: positions (B, N, 2), intensities (B, N)."""
    d = _pair_displacements(positions)
    kv = kernel.k(d)
    n = positions.shape[-2]
    return np.einsum("bijc,bj->bic", kv, intensities) / np.sqrt(n)


def velocity_rhs(ensemble, kernel):
    """Velocities of all vortices; raises CollisionError on coincident
    positions when the kernel is unregularized."""
    if abs(kernel.config.epsilon - ensemble.epsilon) > 1e-12:
        raise ValueError("kernel epsilon does not match ensemble epsilon")
    d = _pair_displacements(ensemble.positions)
    if kernel.config.delta == 0.0 and ensemble.size > 1:
        r = np.hypot(d[..., 0], d[..., 1])
        np.fill_diagonal(r, np.inf)
        if np.any(r == 0.0):
            i, j = np.argwhere(r == 0.0)[0]
            raise CollisionError(f"vortices {i} and {j} coincide")
    v = _batch_velocities(ensemble.positions[None], ensemble.intensities[None], kernel)
    return v[0]


def _batch_min_distance(positions):
    d = _pair_displacements(positions)
    r = np.hypot(d[..., 0], d[..., 1])
    n = positions.shape[-2]
    if n == 1:
        return np.full(positions.shape[:-2], np.inf)
    ii = np.arange(n)
    r[..., ii, ii] = np.inf
    return r.min(axis=(-2, -1))


def _rk4_step(positions, intensities, kernel, dt):
    k1 = _batch_velocities(positions, intensities, kernel)
    k2 = _batch_velocities(positions + 0.5 * dt * k1, intensities, kernel)
    k3 = _batch_velocities(positions + 0.5 * dt * k2, intensities, kernel)
    k4 = _batch_velocities(positions + dt * k3, intensities, kernel)
    return wrap_position(positions + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))


def integrate_batch(positions, intensities, config, kernel, record_times=()):
    """Evolve a batch of replicas over [0, t_final].

    Returns (final_positions, min_distance (B,), recorded snapshots dict
    step->positions).  Guard checks are skipped for regularized kernels;
    non-finite states raise BlowUpError.
    """
    steps = config.n_steps
    pos = np.array(positions, dtype=float)
    xi = np.asarray(intensities, dtype=float)
    record = {int(s): None for s in record_times}
    if 0 in record:
        record[0] = pos.copy()
    running_min = _batch_min_distance(pos)
    for step in range(1, steps + 1):
        pos = _rk4_step(pos, xi, kernel, config.dt)
        if not np.all(np.isfinite(pos)):
            raise BlowUpError(f"non-finite state at step {step}")
        running_min = np.minimum(running_min, _batch_min_distance(pos))
        if step in record:
            record[step] = pos.copy()
    return pos, running_min, record


def integrate(ensemble, config, kernel):
    """Fixed-step RK4 trajectory of a single ensemble.

    Records every step and the per-step minimal pairwise distance.  For
    unregularized dynamics (delta == 0), integration halts with a
    GuardEvent as soon as the minimal distance falls below
    config.guard_distance.
    """
    if abs(config.delta - kernel.config.delta) > 1e-15:
        raise ValueError("config.delta does not match the kernel regularization")
    steps = config.n_steps
    n = ensemble.size
    out = np.empty((steps + 1, n, 2))
    mins = np.empty(steps + 1)
    out[0] = ensemble.positions
    mins[0] = _batch_min_distance(ensemble.positions[None])[0]
    xi = ensemble.intensities
    guard = None
    if config.delta == 0.0 and n > 1 and mins[0] == 0.0:
        raise CollisionError("initial configuration has coincident vortices")
    pos = ensemble.positions[None]
    last = steps
    for step in range(1, steps + 1):
        pos = _rk4_step(pos, xi[None], kernel, config.dt)
        if not np.all(np.isfinite(pos)):
            raise BlowUpError(f"non-finite state at step {step}")
        out[step] = pos[0]
        mins[step] = _batch_min_distance(pos)[0]
        if config.delta == 0.0 and mins[step] < config.guard_distance:
            d = _pair_displacements(pos[0])
            r = np.hypot(d[..., 0], d[..., 1])
            np.fill_diagonal(r, np.inf)
            i, j = np.unravel_index(np.argmin(r), r.shape)
            guard = GuardEvent(step=step, pair=(int(i), int(j)), distance=float(r[i, j]))
            last = step
            break
    times = np.arange(last + 1) * config.dt
    return Trajectory(times=times, positions=out[:last + 1], intensities=xi.copy(),
                      epsilon=ensemble.epsilon, min_distances=mins[:last + 1],
                      guard_event=guard)


def interaction_energy(ensemble, kernel):
    """Conserved pair energy sum_{i<j} xi_i xi_j G(x_i - x_j).

    The 1/sqrt(N) prefactor of the velocity law is omitted; any constant
    multiple is equally conserved.
    """
    n = ensemble.size
    if n == 1:
        return 0.0
    iu, ju = np.triu_indices(n, k=1)
    d = wrap_displacement(ensemble.positions[iu], ensemble.positions[ju])
    g = kernel.g(d)
    xi = ensemble.intensities
    return float(np.sum(xi[iu] * xi[ju] * g))


def lyapunov(ensemble, kernel, offset):
    """Nonnegative collision diagnostic L = -sum_{i != j} (G_delta - offset).

    Requires a regularized kernel and an offset making every summand
    nonnegative; otherwise raises ValueError reporting the largest
    observed G_delta.
    """
    if kernel.config.delta <= 0.0:
        raise ValueError("lyapunov requires a regularized kernel (delta > 0)")
    n = ensemble.size
    if n == 1:
        return 0.0
    iu, ju = np.triu_indices(n, k=1)
    d = wrap_displacement(ensemble.positions[iu], ensemble.positions[ju])
    g = kernel.g(d)
    if np.any(g > offset):
        raise ValueError(
            f"offset {offset} is not admissible: max G_delta over pairs is {g.max():.6g}")
    return float(2.0 * np.sum(offset - g))


def suggest_lyapunov_offset(kernel, resolution=256):
    """1 + grid maximum of G_delta, a safely admissible offset."""
    from .table import grid_samples
    g, _, _ = grid_samples(kernel.config, resolution)
    return float(g.max() + 1.0)


def flow_jacobian_det(ensemble, config, kernel, fd_step):
    """Determinant of the finite-difference Jacobian of the time-T flow map.

    Central differences with step fd_step in each of the 2N coordinates;
    all perturbed integrations run as one batch.  Tends to 1 as fd_step
    and dt shrink, reflecting measure preservation.
    """
    if kernel.config.delta <= 0.0:
        raise ValueError("flow_jacobian_det requires a regularized kernel (delta > 0)")
    n = ensemble.size
    dim = 2 * n
    base = ensemble.positions.reshape(-1)
    states = np.empty((2 * dim, n, 2))
    for c in range(dim):
        plus = base.copy(); plus[c] += fd_step
        minus = base.copy(); minus[c] -= fd_step
        states[2 * c] = wrap_position(plus.reshape(n, 2))
        states[2 * c + 1] = wrap_position(minus.reshape(n, 2))
    xi = np.broadcast_to(ensemble.intensities, (2 * dim, n))
    finals, _, _ = integrate_batch(states, xi, config, kernel)
    jac = np.empty((dim, dim))
    for c in range(dim):
        diff = wrap_displacement(finals[2 * c], finals[2 * c + 1]).reshape(-1)
        jac[:, c] = diff / (2.0 * fd_step)
    return float(np.linalg.det(jac))


def min_pairwise_distance(trajectory):
    """Minimum over all recorded steps and pairs; +inf for a single vortex."""
    return float(np.min(trajectory.min_distances))


def write_trajectory_csv(trajectory, path):
    """Columns (t, i, x, y, xi), one row per vortex per recorded step."""
    with open(path, "w") as fh:
        fh.write("t,i,x,y,xi\n")
        for k, t in enumerate(trajectory.times):
            for i in range(trajectory.positions.shape[1]):
                x, y = trajectory.positions[k, i]
                fh.write(f"{float(t)!r},{i},{float(x)!r},{float(y)!r},"
                         f"{float(trajectory.intensities[i])!r}\n")
