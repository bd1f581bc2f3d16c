"""Discrete closed-loop model along a lap and its lifted input-output map.

One lap of the sampled closed-loop error dynamics is collapsed into a single
matrix equation e = P @ delta + d, where delta stacks the learned steering at
samples 0..n-1 and e stacks the resulting lateral errors at samples 1..n.
P is lower triangular; with constant speed it is Toeplitz and its first
column holds the impulse-response samples of the sampled loop.

The per-sample discrete matrices come from exact zero-order-hold
discretization of the continuous closed-loop model, with speed and curvature
evaluated at the middle of each sample interval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.linalg import LinAlgError
from scipy.linalg import expm, solve_triangular

from .track import SpeedProfile, TimeGrid, TrackProfile, build_time_grid, sample_at_distance
from .vehicle import VehicleParams

C_ROW = np.array([1.0, 0.0, 0.0, 0.0])
DIAGONAL_FLOOR = 1e-14  # below this the lifted map is treated as singular


@dataclass(frozen=True)
class LtvMatrices:
    """Per-sample discrete system x(k+1) = a[k] x(k) + b[k] u(k) + d[k]."""

    a: np.ndarray  # (n, 4, 4)
    b: np.ndarray  # (n, 4)
    d: np.ndarray  # (n, 4)
    sample_time: float
    n: int


@dataclass(frozen=True)
class LiftedSystem:
    """One-lap map e = p @ delta + d on a given time grid."""

    p: np.ndarray
    d: np.ndarray
    grid: TimeGrid


def continuous_matrices(
    u_x: float, params: VehicleParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Continuous closed-loop matrices at speed u_x.

    Returns (a_c, b_c, c_row, d_dir); the curvature disturbance enters as
    kappa * d_dir.  The lookahead steering feedback is folded into a_c, so
    the input is the learned steer angle alone.
    """
    if u_x <= 0.0:
        raise ValueError("u_x must be positive")
    m, i_z = params.m, params.i_z
    a, b = params.a, params.b
    c_f, c_r = params.c_f, params.c_r
    k_p, x_la = params.k_p, params.x_la
    a_c = np.array(
        [
            [0.0, u_x, 0.0, u_x],
            [0.0, 0.0, 1.0, 0.0],
            [
                -a * k_p * c_f / i_z,
                -a * k_p * x_la * c_f / i_z,
                -(a * a * c_f + b * b * c_r) / (u_x * i_z),
                (b * c_r - a * c_f) / i_z,
            ],
            [
                -k_p * c_f / (m * u_x),
                -k_p * x_la * c_f / (m * u_x),
                (b * c_r - a * c_f) / (m * u_x * u_x) - 1.0,
                -(c_f + c_r) / (m * u_x),
            ],
        ]
    )
    b_c = np.array([0.0, 0.0, a * c_f / i_z, c_f / (m * u_x)])
    d_dir = np.array([0.0, -u_x, 0.0, 0.0])
    return a_c, b_c, C_ROW.copy(), d_dir


def discretize(
    a_c: np.ndarray, b_c: np.ndarray, d_c: np.ndarray, ts: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact zero-order-hold discretization over one sample.

    a = expm(a_c ts); b and d are the integrals of expm(a_c tau) applied to
    b_c and d_c, computed with the augmented-matrix exponential.
    """
    if ts <= 0.0:
        raise ValueError("sample time must be positive")
    aug = np.zeros((6, 6))
    aug[:4, :4] = a_c
    aug[:4, 4] = b_c
    aug[:4, 5] = d_c
    exp_aug = expm(aug * ts)
    return exp_aug[:4, :4], exp_aug[:4, 4], exp_aug[:4, 5]


def _mid_sample_points(grid: TimeGrid, track: TrackProfile) -> tuple[np.ndarray, np.ndarray]:
    """Distance and speed at the middle of each sample interval.

    Mid distances are the averages of consecutive sample starts (the last one
    extrapolated by half a sample of travel); mid speeds interpolate the
    grid's own start-of-sample speeds.  Holding the matrices at mid-sample
    values roughly an order of magnitude less lap-level drift than holding
    them at sample starts.
    """
    s = grid.distances
    last_mid = s[-1] + 0.5 * grid.speeds[-1] * grid.sample_time
    s_mid = np.append(0.5 * (s[:-1] + s[1:]), last_mid)
    u_mid = np.interp(s_mid, s, grid.speeds)
    return s_mid, u_mid


def build_ltv(grid: TimeGrid, track: TrackProfile, params: VehicleParams) -> LtvMatrices:
    """Discretize the closed loop at every sample of the grid."""
    n = grid.n
    s_mid, u_mid = _mid_sample_points(grid, track)
    a = np.empty((n, 4, 4))
    b = np.empty((n, 4))
    d = np.empty((n, 4))
    for k in range(n):
        a_c, b_c, _, d_dir = continuous_matrices(u_mid[k], params)
        kappa = sample_at_distance(track, s_mid[k])
        a[k], b[k], d[k] = discretize(a_c, b_c, kappa * d_dir, grid.sample_time)
    return LtvMatrices(a=a, b=b, d=d, sample_time=grid.sample_time, n=n)


def rollout_errors(ltv: LtvMatrices, delta) -> np.ndarray:
    """Time-domain reference: roll the discrete recursion from zero state.

    Returns the lateral error at samples 1..n.  This is the independent check
    that the lifted matrix assembly must reproduce.
    """
    delta = np.asarray(delta, dtype=float)
    if delta.shape != (ltv.n,):
        raise ValueError(f"input must have length {ltv.n}")
    x = np.zeros(4)
    e = np.empty(ltv.n)
    for k in range(ltv.n):
        x = ltv.a[k] @ x + ltv.b[k] * delta[k] + ltv.d[k]
        e[k] = x[0]
    return e


def build_lifted_from_ltv(ltv: LtvMatrices, grid: TimeGrid) -> LiftedSystem:
    """Assemble P column by column by forward propagation, and the lifted
    disturbance response d by rolling the disturbance alone."""
    n = ltv.n
    p = np.zeros((n, n))
    # v[:, k] carries the state response of input column k; row r appends
    # C A(r) ... A(k+1) B(k) without ever re-multiplying full products
    v = np.zeros((4, n))
    for r in range(n):
        v[:, :r] = ltv.a[r] @ v[:, :r]
        v[:, r] = ltv.b[r]
        p[r, : r + 1] = v[0, : r + 1]
    d = np.empty(n)
    x = np.zeros(4)
    for k in range(n):
        x = ltv.a[k] @ x + ltv.d[k]
        d[k] = x[0]
    return LiftedSystem(p=p, d=d, grid=grid)


def build_lifted(grid: TimeGrid, track: TrackProfile, params: VehicleParams) -> LiftedSystem:
    return build_lifted_from_ltv(build_ltv(grid, track, params), grid)


def constant_speed_system(
    u_x: float, n: int, ts: float, params: VehicleParams
) -> LiftedSystem:
    """Time-invariant lifted system: n samples at constant speed on a
    straight line (zero curvature, so the lifted disturbance is zero)."""
    length = n * u_x * ts
    track = TrackProfile.from_arrays([0.0, length], [0.0, 0.0])
    speed = SpeedProfile(track.stations, np.array([u_x, u_x]))
    grid = build_time_grid(track, speed, ts)
    if grid.n != n:
        raise AssertionError(f"expected {n} samples, grid produced {grid.n}")
    return build_lifted(grid, track, params)


# ---------------------------------------------------------------------------
# Convergence analysis

def convergence_factor(p, q: np.ndarray, l: np.ndarray) -> float:
    """Largest singular value of P Q (I - L P) P^{-1}.

    Below 1.0 the learning law contracts the error-norm distance to its
    converged profile on every iteration.  P^{-1} is applied through
    triangular solves; a near-zero diagonal entry of P raises LinAlgError.
    """
    p = np.asarray(getattr(p, "p", p), dtype=float)
    n = p.shape[0]
    if p.shape != (n, n) or q.shape != (n, n) or l.shape != (n, n):
        raise ValueError("P, Q, L must be square matrices of equal size")
    if np.min(np.abs(np.diagonal(p))) < DIAGONAL_FLOOR:
        raise LinAlgError("P has a near-zero diagonal entry; map not invertible")
    x = p @ q @ (np.eye(n) - l @ p)
    # right-multiply by P^{-1}: solve P^T M^T = X^T
    m = solve_triangular(p.T, x.T, lower=False).T
    return float(np.linalg.svd(m, compute_uv=False)[0])


def error_contraction_bound(gamma: float, errors, e_inf, slack: float = 0.0):
    """Check ||e_inf - e_{j+1}|| <= (gamma + slack) ||e_inf - e_j|| along a
    recorded iteration sequence.

    Returns True/False when gamma < 1; returns None when gamma >= 1, where
    the bound carries no guarantee.
    """
    if gamma >= 1.0:
        return None
    e_inf = np.asarray(e_inf, dtype=float)
    dists = [float(np.linalg.norm(e_inf - np.asarray(e, dtype=float))) for e in errors]
    for prev, nxt in zip(dists, dists[1:]):
        if nxt > (gamma + slack) * prev:
            return False
    return True


def fixed_point_error(system: LiftedSystem, q: np.ndarray, l: np.ndarray) -> np.ndarray:
    """Converged error of the iteration delta <- q (delta - l e) on the
    linear lifted plant, by direct linear solve."""
    n = system.grid.n
    eye = np.eye(n)
    delta_inf = np.linalg.solve(eye - q @ (eye - l @ system.p), -q @ l @ system.d)
    return system.p @ delta_inf + system.d


def export_matrix_csv(path, array: np.ndarray, n: int, ts: float) -> None:
    """Dump a lifted matrix or vector row-major with a `# N=.. Ts=..` header."""
    array = np.atleast_2d(np.asarray(array, dtype=float))
    with open(path, "w", newline="") as f:
        f.write(f"# N={n} Ts={repr(float(ts))}\n")
        for row in array:
            f.write(",".join(repr(float(v)) for v in row) + "\n")
