"""Learning update laws: PD-type with zero-phase filtering, and quadratically
optimal synthesis from the lifted plant model.

Both laws share the update delta_next = Q @ (delta_prev - L @ e_prev).  The
PD law pairs the steer correction at sample k with the error recorded one
sample later (the first sample the correction can influence), and its
derivative term uses a backward difference with the predecessor of the first
error taken as zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.linalg import LinAlgError
from scipy.linalg import cho_factor, cho_solve
from scipy.signal import butter, filtfilt


@dataclass(frozen=True)
class PdDescriptor:
    k_p: float
    k_d: float
    cutoff_hz: float | None


@dataclass(frozen=True)
class QilcDescriptor:
    t: Union[float, str]
    r: Union[float, str]
    s: Union[float, str]


@dataclass(frozen=True)
class LearningOperator:
    """A (Q, L) matrix pair defining one update law."""

    q: np.ndarray
    l: np.ndarray
    descriptor: Union[PdDescriptor, QilcDescriptor]

    def __post_init__(self):
        n = self.q.shape[0]
        if self.q.shape != (n, n) or self.l.shape != (n, n):
            raise ValueError("Q and L must be square matrices of equal size")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.l))):
            raise ValueError("Q and L must have finite entries")

    @property
    def n(self) -> int:
        return self.q.shape[0]


@dataclass(frozen=True)
class Weights:
    """Error / input / input-change weights for quadratic synthesis.

    Each weight is either a nonnegative scalar (meaning scalar * identity)
    or a full symmetric positive-semidefinite matrix.
    """

    t: Union[float, np.ndarray] = 1.0
    r: Union[float, np.ndarray] = 1.0
    s: Union[float, np.ndarray] = 100.0

    def __post_init__(self):
        for name in ("t", "r", "s"):
            w = getattr(self, name)
            if np.ndim(w) == 0:
                if float(w) < 0.0:
                    raise ValueError(f"weight {name} must be nonnegative")
            else:
                w = np.asarray(w, dtype=float)
                object.__setattr__(self, name, w)
                if w.ndim != 2 or w.shape[0] != w.shape[1]:
                    raise ValueError(f"weight {name} must be square")
                if not np.allclose(w, w.T, rtol=0.0, atol=1e-10 * (1 + np.abs(w).max())):
                    raise ValueError(f"weight {name} must be symmetric")
                if np.linalg.eigvalsh(w).min() < -1e-10 * (1 + np.abs(w).max()):
                    raise ValueError(f"weight {name} must be positive semidefinite")


def _weight_apply(w, v: np.ndarray) -> np.ndarray:
    return float(w) * v if np.ndim(w) == 0 else w @ v


def _weight_add(mat: np.ndarray, w) -> np.ndarray:
    if np.ndim(w) == 0:
        out = mat.copy()
        out[np.diag_indices_from(out)] += float(w)
        return out
    return mat + w


def _quad_form(w, v: np.ndarray) -> float:
    return float(v @ _weight_apply(w, v))


# ---------------------------------------------------------------------------
# PD-type learning

def pd_operator(
    k_p: float, k_d: float, n: int, cutoff_hz: float | None, ts: float
) -> LearningOperator:
    """Proportional-derivative learning law.

    L is lower bidiagonal: (k_p + k_d) on the diagonal and -k_d on the first
    subdiagonal, so -L @ e reproduces the pointwise update
    -k_p e(k) - k_d (e(k) - e(k-1)).  Q is the identity without a cutoff,
    else the zero-phase low-pass matrix.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if ts <= 0.0:
        raise ValueError("sample time must be positive")
    l = np.diag(np.full(n, k_p + k_d))
    if n > 1:
        l += np.diag(np.full(n - 1, -k_d), -1)
    q = np.eye(n) if cutoff_hz is None else zero_phase_filter(cutoff_hz, ts, n)
    return LearningOperator(q=q, l=l, descriptor=PdDescriptor(k_p, k_d, cutoff_hz))


def zero_phase_filter(cutoff_hz: float, ts: float, n: int) -> np.ndarray:
    """Matrix form of forward-backward second-order Butterworth low-pass.

    The columns are the filter's response to unit samples, filtered forward
    and backward over a mirror-extended window of 3 / (cutoff_hz * ts)
    samples per side.  The result is symmetrized: reflection doubles the
    influence of near-edge samples asymmetrically, and averaging with the
    transpose restores the exact zero-phase (self-adjoint) property without
    touching interior behavior.
    """
    nyquist = 0.5 / ts
    if not 0.0 < cutoff_hz < nyquist:
        raise ValueError(f"cutoff must lie in (0, {nyquist}) Hz")
    b, a = butter(2, cutoff_hz / nyquist)
    pad = int(round(3.0 / (cutoff_hz * ts)))
    pad = min(pad, n - 1)
    m = filtfilt(b, a, np.eye(n), axis=0, padtype="even", padlen=pad)
    return 0.5 * (m + m.T)


# ---------------------------------------------------------------------------
# Quadratically optimal learning

def qilc_operator(system, weights: Weights) -> LearningOperator:
    """Minimizer of e'T e + delta'R delta + change'S change for the next lap.

    Q = (P'TP + R + S)^{-1} (P'TP + S) and L = (P'TP + S)^{-1} P'T, computed
    with symmetric factorization solves.  Raises LinAlgError when the weight
    combination leaves either matrix indefinite or singular.
    """
    p = np.asarray(getattr(system, "p", system), dtype=float)
    n = p.shape[0]
    if np.ndim(weights.t) == 0:
        gram = float(weights.t) * (p.T @ p)
        pt_t = float(weights.t) * p.T
    else:
        pt_t = p.T @ weights.t
        gram = pt_t @ p
    full = _weight_add(_weight_add(gram, weights.r), weights.s)
    kept = _weight_add(gram, weights.s)
    try:
        q = cho_solve(cho_factor(full), kept)
        l = cho_solve(cho_factor(kept), pt_t)
    except LinAlgError as exc:
        raise LinAlgError(
            f"weight combination is indefinite or singular at n={n}: {exc}"
        ) from exc
    desc = QilcDescriptor(
        t=weights.t if np.ndim(weights.t) == 0 else "matrix",
        r=weights.r if np.ndim(weights.r) == 0 else "matrix",
        s=weights.s if np.ndim(weights.s) == 0 else "matrix",
    )
    return LearningOperator(q=q, l=l, descriptor=desc)


def update_input(op: LearningOperator, delta_prev, e_prev) -> np.ndarray:
    """Next-lap steering: Q @ (delta_prev - L @ e_prev)."""
    delta_prev = np.asarray(delta_prev, dtype=float)
    e_prev = np.asarray(e_prev, dtype=float)
    if delta_prev.shape != (op.n,) or e_prev.shape != (op.n,):
        raise ValueError(f"inputs must have length {op.n}")
    return op.q @ (delta_prev - op.l @ e_prev)


def quadratic_cost(p, weights: Weights, delta_next, delta_prev, e_prev) -> float:
    """Cost of a candidate next-lap input on the linear lifted plant.

    The lap-invariant disturbance is recovered from the previous lap as
    d = e_prev - P delta_prev.
    """
    p = np.asarray(getattr(p, "p", p), dtype=float)
    delta_next = np.asarray(delta_next, dtype=float)
    delta_prev = np.asarray(delta_prev, dtype=float)
    e_prev = np.asarray(e_prev, dtype=float)
    e_next = p @ delta_next + (e_prev - p @ delta_prev)
    change = delta_next - delta_prev
    return (
        _quad_form(weights.t, e_next)
        + _quad_form(weights.r, delta_next)
        + _quad_form(weights.s, change)
    )


def optimality_residual(
    op: LearningOperator, p, weights: Weights, delta_prev, e_prev
) -> float:
    """Norm of the cost gradient at the operator's own update.

    Zero in exact arithmetic for an operator built by qilc_operator; used to
    certify the analytic solution numerically.
    """
    p = np.asarray(getattr(p, "p", p), dtype=float)
    delta_prev = np.asarray(delta_prev, dtype=float)
    e_prev = np.asarray(e_prev, dtype=float)
    delta_next = update_input(op, delta_prev, e_prev)
    e_next = p @ delta_next + (e_prev - p @ delta_prev)
    grad = 2.0 * (
        p.T @ _weight_apply(weights.t, e_next)
        + _weight_apply(weights.r, delta_next)
        + _weight_apply(weights.s, delta_next - delta_prev)
    )
    return float(np.linalg.norm(grad))


# ---------------------------------------------------------------------------
# Learned-input exchange format

def save_learned_input(path, distances, delta) -> None:
    """Write a learned steering profile as CSV `k,s_m,delta_L_rad`."""
    distances = np.asarray(distances, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if distances.shape != delta.shape:
        raise ValueError("distances and delta must have equal length")
    with open(path, "w", newline="") as f:
        f.write("k,s_m,delta_L_rad\n")
        for k, (s, d) in enumerate(zip(distances, delta)):
            f.write(f"{k},{repr(float(s))},{repr(float(d))}\n")


def load_learned_input(path) -> tuple[np.ndarray, np.ndarray]:
    """Read a learned steering profile; returns (distances, delta)."""
    distances, delta = [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["k", "s_m", "delta_L_rad"]:
            raise ValueError(f"{path}: expected header k,s_m,delta_L_rad")
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                distances.append(float(row[1]))
                delta.append(float(row[2]))
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{i}: malformed row {row!r}") from exc
    return np.array(distances), np.array(delta)
