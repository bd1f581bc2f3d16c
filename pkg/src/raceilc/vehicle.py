"""Planar bicycle-model lateral dynamics and closed-loop lap simulation.

State convention is x = [e, dpsi, r, beta]: lateral path deviation (m),
heading error (rad), yaw rate (rad/s) and sideslip (rad).  Steering is the
sum of lookahead feedback, a distance-indexed learned correction and an
optional steady-state feedforward.  Sign convention: positive steer produces
positive (leftward) lateral deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

G = 9.81

TireModel = Literal["linear", "fiala"]


class DivergenceError(RuntimeError):
    """Lateral error exceeded the blow-up guard during a lap."""


@dataclass(frozen=True)
class VehicleParams:
    """Mass, geometry, tire and steering-feedback parameters.

    c_f and c_r are per-axle cornering stiffnesses (N/rad); k_p (rad/m) and
    x_la (m) define the lookahead steering feedback.
    """

    m: float
    i_z: float
    a: float
    b: float
    c_f: float
    c_r: float
    mu: float
    k_p: float
    x_la: float

    def __post_init__(self):
        for name in ("m", "i_z", "a", "b", "c_f", "c_r", "mu", "k_p", "x_la"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be strictly positive")

    @property
    def f_zf(self) -> float:
        """Static front-axle normal load (N)."""
        return self.m * G * self.b / (self.a + self.b)

    @property
    def f_zr(self) -> float:
        """Static rear-axle normal load (N)."""
        return self.m * G * self.a / (self.a + self.b)


def default_params() -> VehicleParams:
    """Parameters of the reference test vehicle (mid-size sports sedan)."""
    return VehicleParams(
        m=1500.0,
        i_z=2250.0,
        a=1.04,
        b=1.42,
        c_f=160e3,
        c_r=180e3,
        mu=0.95,
        k_p=0.053,
        x_la=15.2,
    )


@dataclass(frozen=True)
class VehicleState:
    e: float = 0.0
    dpsi: float = 0.0
    r: float = 0.0
    beta: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.e, self.dpsi, self.r, self.beta])


@dataclass(frozen=True)
class SimConfig:
    """Inner-loop integration settings for lap simulation."""

    inner_dt: float = 0.005
    tire_model: TireModel = "fiala"
    include_feedforward: bool = False
    sensor_noise_std: float = 0.0


@dataclass(frozen=True)
class LapRecord:
    """Sampled tracking errors and applied learned steering for one lap."""

    errors: np.ndarray
    inputs: np.ndarray
    rms_error: float
    peak_error: float
    iteration: int

    @classmethod
    def from_errors(cls, errors, inputs, iteration: int) -> "LapRecord":
        errors = np.asarray(errors, dtype=float)
        inputs = np.asarray(inputs, dtype=float)
        if errors.shape != inputs.shape:
            raise ValueError("errors and inputs must have equal length")
        return cls(
            errors=errors,
            inputs=inputs,
            rms_error=float(np.sqrt(np.mean(errors**2))),
            peak_error=float(np.max(np.abs(errors))) if errors.size else 0.0,
            iteration=iteration,
        )


# ---------------------------------------------------------------------------
# Tire and steering laws

def fiala_force(alpha: float, c_alpha: float, mu: float, f_z: float) -> float:
    """Lateral brush-model tire force (N) at slip angle alpha (rad).

    Cubic in tan(alpha) up to the saturation angle arctan(3*mu*f_z/c_alpha),
    fully sliding at -mu*f_z*sign(alpha) beyond it.
    """
    limit = 3.0 * mu * f_z / c_alpha
    sat = math.atan(limit)
    if alpha > sat:
        return -mu * f_z
    if alpha < -sat:
        return mu * f_z
    t = math.tan(alpha)
    return (
        -c_alpha * t
        + c_alpha * c_alpha / (3.0 * mu * f_z) * abs(t) * t
        - c_alpha**3 / (27.0 * mu * mu * f_z * f_z) * t**3
    )


def linear_force(alpha: float, c_alpha: float) -> float:
    """Small-angle tire force -c_alpha * alpha."""
    return -c_alpha * alpha


def slip_angles(
    state: VehicleState, delta: float, u_x: float, params: VehicleParams
) -> tuple[float, float]:
    """Front and rear tire slip angles (rad) for steer angle delta."""
    af = state.beta + params.a * state.r / u_x - delta
    ar = state.beta - params.b * state.r / u_x
    return af, ar


def lookahead_feedback(e: float, dpsi: float, params: VehicleParams) -> float:
    """Stabilizing steer command -k_p * (e + x_la * dpsi)."""
    return -params.k_p * (e + params.x_la * dpsi)


def feedforward_steer(kappa: float, u_x: float, params: VehicleParams) -> float:
    """Steady-state cornering steer: wheelbase term plus understeer term."""
    wheelbase = params.a + params.b
    understeer = params.m / wheelbase * (params.b / params.c_f - params.a / params.c_r)
    return kappa * wheelbase + kappa * u_x * u_x * understeer


def derivatives(
    state: VehicleState,
    delta_total: float,
    u_x: float,
    kappa: float,
    params: VehicleParams,
    tire_model: TireModel = "fiala",
) -> np.ndarray:
    """State rate [de, ddpsi, dr, dbeta] of the closed path-tracking loop.

    delta_total is the full steer angle (feedback plus any feedforward and
    learned corrections); the caller composes it.
    """
    af, ar = slip_angles(state, delta_total, u_x, params)
    if tire_model == "fiala":
        fyf = fiala_force(af, params.c_f, params.mu, params.f_zf)
        fyr = fiala_force(ar, params.c_r, params.mu, params.f_zr)
    elif tire_model == "linear":
        fyf = linear_force(af, params.c_f)
        fyr = linear_force(ar, params.c_r)
    else:
        raise ValueError(f"unknown tire model {tire_model!r}")
    return np.array(
        [
            u_x * (state.beta + state.dpsi),
            state.r - u_x * kappa,
            (params.a * fyf - params.b * fyr) / params.i_z,
            (fyf + fyr) / (params.m * u_x) - state.r,
        ]
    )


# ---------------------------------------------------------------------------
# Lap simulation

class _Interp1:
    """Scalar linear interpolation over monotone stations.

    Lookups during a lap move almost only forward, so the bracketing interval
    is tracked with a cursor instead of bisecting on every call.  With a wrap
    length, queries are taken modulo it; otherwise they clamp at the ends.
    """

    __slots__ = ("xs", "ys", "n", "wrap", "i")

    def __init__(self, xs, ys, wrap: float | None = None):
        self.xs = [float(v) for v in xs]
        self.ys = [float(v) for v in ys]
        self.n = len(self.xs)
        self.wrap = wrap
        self.i = 0

    def __call__(self, s: float) -> float:
        xs = self.xs
        if self.wrap is not None:
            s = s % self.wrap
        elif s <= xs[0]:
            return self.ys[0]
        elif s >= xs[-1]:
            return self.ys[-1]
        i = self.i
        while i > 0 and s < xs[i]:
            i -= 1
        while i < self.n - 2 and s >= xs[i + 1]:
            i += 1
        self.i = i
        x0, x1 = xs[i], xs[i + 1]
        y0, y1 = self.ys[i], self.ys[i + 1]
        return y0 + (y1 - y0) * (s - x0) / (x1 - x0)


DIVERGENCE_LIMIT = 20.0  # m of lateral error before the run is abandoned


def simulate_lap(
    track,
    speed,
    grid,
    params: VehicleParams,
    sim: SimConfig,
    learned,
    iteration: int = 0,
    noise_seed: int = 0,
) -> LapRecord:
    """Integrate one closed-loop lap and sample the tracking error.

    The learned steering is given per learning sample and applied as a
    distance-interpolated lookup; the vehicle speed follows the profile
    exactly.  Errors are recorded at the end of each of the grid's n samples.
    Gaussian noise of sim.sensor_noise_std is added to the recorded errors
    when enabled, from a generator seeded with noise_seed.
    """
    learned = np.asarray(learned, dtype=float)
    if learned.shape != (grid.n,):
        raise ValueError(f"learned input must have length {grid.n}")
    ratio = grid.sample_time / sim.inner_dt
    substeps = int(round(ratio))
    if substeps < 1 or abs(ratio - substeps) > 1e-9:
        raise ValueError("inner_dt must divide the learning sample time evenly")

    kappa_at = _Interp1(track.stations, track.curvature, wrap=track.lap_length)
    speed_at = _Interp1(speed.stations, speed.speed, wrap=track.lap_length)
    learned_at = _Interp1(grid.distances, learned)

    m, i_z = params.m, params.i_z
    a, b = params.a, params.b
    c_f, c_r = params.c_f, params.c_r
    mu, k_p, x_la = params.mu, params.k_p, params.x_la
    f_zf, f_zr = params.f_zf, params.f_zr
    use_ff = sim.include_feedforward
    wheelbase = a + b
    understeer = m / wheelbase * (b / c_f - a / c_r)
    fiala = sim.tire_model == "fiala"
    if not fiala and sim.tire_model != "linear":
        raise ValueError(f"unknown tire model {sim.tire_model!r}")
    sat_f = math.atan(3.0 * mu * f_zf / c_f)
    sat_r = math.atan(3.0 * mu * f_zr / c_r)
    tan, _abs = math.tan, abs

    def rates(e, dpsi, r, beta, s):
        kap = kappa_at(s)
        ux = speed_at(s)
        delta = -k_p * (e + x_la * dpsi) + learned_at(s)
        if use_ff:
            delta += kap * wheelbase + kap * ux * ux * understeer
        af = beta + a * r / ux - delta
        ar = beta - b * r / ux
        if fiala:
            if af > sat_f:
                fyf = -mu * f_zf
            elif af < -sat_f:
                fyf = mu * f_zf
            else:
                t = tan(af)
                fyf = (
                    -c_f * t
                    + c_f * c_f / (3.0 * mu * f_zf) * _abs(t) * t
                    - c_f**3 / (27.0 * mu * mu * f_zf * f_zf) * t**3
                )
            if ar > sat_r:
                fyr = -mu * f_zr
            elif ar < -sat_r:
                fyr = mu * f_zr
            else:
                t = tan(ar)
                fyr = (
                    -c_r * t
                    + c_r * c_r / (3.0 * mu * f_zr) * _abs(t) * t
                    - c_r**3 / (27.0 * mu * mu * f_zr * f_zr) * t**3
                )
        else:
            fyf = -c_f * af
            fyr = -c_r * ar
        return (
            ux * (beta + dpsi),
            r - ux * kap,
            (a * fyf - b * fyr) / i_z,
            (fyf + fyr) / (m * ux) - r,
            ux,
        )

    dt = sim.inner_dt
    e = dpsi = r = beta = s = 0.0
    errors = np.empty(grid.n)
    for k in range(grid.n):
        for _ in range(substeps):
            k1 = rates(e, dpsi, r, beta, s)
            k2 = rates(
                e + 0.5 * dt * k1[0],
                dpsi + 0.5 * dt * k1[1],
                r + 0.5 * dt * k1[2],
                beta + 0.5 * dt * k1[3],
                s + 0.5 * dt * k1[4],
            )
            k3 = rates(
                e + 0.5 * dt * k2[0],
                dpsi + 0.5 * dt * k2[1],
                r + 0.5 * dt * k2[2],
                beta + 0.5 * dt * k2[3],
                s + 0.5 * dt * k2[4],
            )
            k4 = rates(
                e + dt * k3[0],
                dpsi + dt * k3[1],
                r + dt * k3[2],
                beta + dt * k3[3],
                s + dt * k3[4],
            )
            e += dt / 6.0 * (k1[0] + 2.0 * (k2[0] + k3[0]) + k4[0])
            dpsi += dt / 6.0 * (k1[1] + 2.0 * (k2[1] + k3[1]) + k4[1])
            r += dt / 6.0 * (k1[2] + 2.0 * (k2[2] + k3[2]) + k4[2])
            beta += dt / 6.0 * (k1[3] + 2.0 * (k2[3] + k3[3]) + k4[3])
            s += dt / 6.0 * (k1[4] + 2.0 * (k2[4] + k3[4]) + k4[4])
            if e > DIVERGENCE_LIMIT or e < -DIVERGENCE_LIMIT:
                raise DivergenceError(
                    f"|e| exceeded {DIVERGENCE_LIMIT} m at sample {k}"
                )
        errors[k] = e

    if sim.sensor_noise_std > 0.0:
        rng = np.random.default_rng(noise_seed)
        errors = errors + rng.normal(0.0, sim.sensor_noise_std, grid.n)
    return LapRecord.from_errors(errors, learned, iteration)
