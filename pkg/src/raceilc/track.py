"""Racing-line curvature and speed profiles, and the learning-sample time grid.

A track is described by curvature versus distance along the racing line.
Profiles are stored at discrete stations and sampled by linear interpolation
with wraparound, so a lap is a closed circuit.  Speed profiles either come
from the track file or are generated with a friction-circle limit, and the
time grid maps the controller's fixed sample clock onto distance along the
lap by integrating ds/dt = Ux(s).

Track CSV format: header ``s_m,kappa_1pm`` or ``s_m,kappa_1pm,speed_mps``,
one row per station, comma separated, ``.`` decimal point.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from importlib import resources
from typing import Optional

import numpy as np

GRID_SUBSTEPS = 20  # RK4 substeps per controller sample when integrating s(t)


class TrackFormatError(ValueError):
    """Raised when a track file cannot be parsed."""


@dataclass(frozen=True)
class TrackProfile:
    """Curvature (1/m) versus distance (m) along one closed lap."""

    stations: np.ndarray
    curvature: np.ndarray
    lap_length: float

    def __post_init__(self):
        stations = np.asarray(self.stations, dtype=float)
        curvature = np.asarray(self.curvature, dtype=float)
        object.__setattr__(self, "stations", stations)
        object.__setattr__(self, "curvature", curvature)
        if stations.size < 2:
            raise ValueError("track needs at least 2 stations")
        if stations.shape != curvature.shape:
            raise ValueError("stations and curvature must have equal length")
        if stations[0] != 0.0:
            raise ValueError("first station must be 0")
        if np.any(np.diff(stations) <= 0.0):
            raise ValueError("stations must be strictly increasing")
        if stations[-1] != self.lap_length:
            raise ValueError("last station must equal lap_length")
        if not np.all(np.isfinite(curvature)):
            raise ValueError("curvature must be finite at every station")

    @classmethod
    def from_arrays(cls, stations, curvature) -> "TrackProfile":
        stations = np.asarray(stations, dtype=float)
        return cls(stations, np.asarray(curvature, dtype=float), float(stations[-1]))


@dataclass(frozen=True)
class SpeedProfile:
    """Speed Ux(s) (m/s) at the stations of an owning TrackProfile."""

    stations: np.ndarray
    speed: np.ndarray

    def __post_init__(self):
        stations = np.asarray(self.stations, dtype=float)
        speed = np.asarray(self.speed, dtype=float)
        object.__setattr__(self, "stations", stations)
        object.__setattr__(self, "speed", speed)
        if stations.shape != speed.shape:
            raise ValueError("stations and speed must have equal length")
        if not np.all(np.isfinite(speed)) or np.any(speed <= 0.0):
            raise ValueError("speed must be finite and positive at every station")


@dataclass(frozen=True)
class TimeGrid:
    """Learning-sample clock mapped onto the lap.

    Arrays hold sample starts k = 0 .. n-1: times[k] = k*sample_time,
    distances[k] = s(t_k), speeds[k] = Ux(s(t_k)).  n is the smallest sample
    count whose total travel covers the lap, so the final sample may extend
    past the finish line.
    """

    sample_time: float
    n: int
    times: np.ndarray
    distances: np.ndarray
    speeds: np.ndarray


def _values(profile) -> np.ndarray:
    if isinstance(profile, TrackProfile):
        return profile.curvature
    if isinstance(profile, SpeedProfile):
        return profile.speed
    raise TypeError(f"cannot sample a {type(profile).__name__}")


def sample_at_distance(profile, s):
    """Linear interpolation at distance s, wrapping modulo the lap length.

    Accepts a scalar or an array of distances.
    """
    stations = profile.stations
    lap = stations[-1]
    s_mod = np.asarray(s, dtype=float) % lap
    out = np.interp(s_mod, stations, _values(profile))
    return float(out) if np.isscalar(s) or np.ndim(s) == 0 else out


def load_track(path) -> tuple[TrackProfile, Optional[SpeedProfile]]:
    """Read a track CSV.  Returns (track, speed) with speed None when the
    file has no speed column."""
    stations, kappas, speeds = [], [], []
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise TrackFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:2] != ["s_m", "kappa_1pm"]:
            raise TrackFormatError(f"{path}: expected header s_m,kappa_1pm[,speed_mps]")
        has_speed = len(header) >= 3 and header[2] == "speed_mps"
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                stations.append(float(row[0]))
                kappas.append(float(row[1]))
                if has_speed:
                    speeds.append(float(row[2]))
            except (ValueError, IndexError) as exc:
                raise TrackFormatError(f"{path}:{i}: malformed row {row!r}") from exc
    track = TrackProfile.from_arrays(stations, kappas)
    speed = SpeedProfile(track.stations, np.array(speeds)) if has_speed else None
    return track, speed


def _format_float(x: float) -> str:
    return repr(float(x))


def track_csv_text(track: TrackProfile, speed: Optional[SpeedProfile] = None) -> str:
    """Serialize profiles to the track CSV format (deterministic bytes)."""
    lines = []
    if speed is None:
        lines.append("s_m,kappa_1pm")
        for s, k in zip(track.stations, track.curvature):
            lines.append(f"{_format_float(s)},{_format_float(k)}")
    else:
        if not np.array_equal(speed.stations, track.stations):
            raise ValueError("speed profile stations do not match track stations")
        lines.append("s_m,kappa_1pm,speed_mps")
        for s, k, u in zip(track.stations, track.curvature, speed.speed):
            lines.append(f"{_format_float(s)},{_format_float(k)},{_format_float(u)}")
    return "\n".join(lines) + "\n"


def save_track(path, track: TrackProfile, speed: Optional[SpeedProfile] = None) -> None:
    with open(path, "w", newline="") as f:
        f.write(track_csv_text(track, speed))


# ---------------------------------------------------------------------------
# Synthetic circuit

# Segments of half a lap: (kappa_start, kappa_end, length).  Curvature varies
# linearly with distance inside a segment (straights, arcs, clothoids).  The
# second half repeats the first, which closes the circuit by 180-degree
# rotational symmetry; each half turns the heading by exactly pi.
_BLEND = 15.0
_K60 = 1.0 / 60.0
_K80 = 1.0 / 80.0
_HALF_LAP_SEGMENTS = (
    (0.0, 0.0, 500.0),
    # clothoid-blended chicane, net heading change zero
    (0.0, 0.02, 40.0),
    (0.02, 0.02, 30.0),
    (0.02, -0.02, 80.0),
    (-0.02, -0.02, 30.0),
    (-0.02, 0.0, 40.0),
    (0.0, 0.0, 250.0),
    # 90-degree left arc, radius 60, clothoid entry/exit
    (0.0, _K60, _BLEND),
    (_K60, _K60, math.pi / 2 / _K60 - _BLEND),
    (_K60, 0.0, _BLEND),
    (0.0, 0.0, 250.0),
    # 90-degree left arc, radius 80, clothoid entry/exit
    (0.0, _K80, _BLEND),
    (_K80, _K80, math.pi / 2 / _K80 - _BLEND),
    (_K80, 0.0, _BLEND),
)


def synthetic_track(station_spacing: float = 2.0) -> TrackProfile:
    """Deterministic closed test circuit, roughly 3 km per lap.

    Two straights, four constant-radius arcs and two clothoid-blended
    chicanes; curvature is exactly piecewise linear in distance so linear
    interpolation between the emitted stations reproduces it without error.
    """
    stations = [0.0]
    kappas = [_HALF_LAP_SEGMENTS[0][0]]
    s = 0.0
    for k0, k1, length in _HALF_LAP_SEGMENTS + _HALF_LAP_SEGMENTS:
        nsub = max(1, int(math.ceil(length / station_spacing)))
        for i in range(1, nsub + 1):
            frac = i / nsub
            stations.append(s + length * frac)
            kappas.append(k0 + (k1 - k0) * frac)
        s += length
    return TrackProfile.from_arrays(stations, kappas)


def bundled_track_path():
    """Path of the synthetic track CSV shipped with the package."""
    return resources.files("raceilc").joinpath("assets/synthetic_track.csv")


# ---------------------------------------------------------------------------
# Speed profile generation

def _circle_ok(u0: float, u1: float, k_mid: float, ds: float, limit: float) -> bool:
    # midpoint combined-acceleration check between consecutive stations
    u_mid = 0.5 * (u0 + u1)
    a_lat = k_mid * u_mid * u_mid
    a_lon = (u1 * u1 - u0 * u0) / (2.0 * ds)
    return a_lat * a_lat + a_lon * a_lon <= limit * limit


def _bisect_speed(lo: float, hi: float, feasible) -> float:
    # largest speed in [lo, hi] with feasible(speed); feasible(lo) must hold
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def generate_speed_profile(
    track: TrackProfile, accel_limit: float, v_max: float
) -> SpeedProfile:
    """Friction-circle speed profile over a closed lap.

    Speeds are first capped pointwise by the lateral limit
    sqrt(accel_limit/|kappa|) and by v_max, then forward and backward passes
    (with wraparound, since the lap is a circuit) cut speed wherever the
    combined lateral/longitudinal acceleration between consecutive stations
    would exceed accel_limit.
    """
    if accel_limit <= 0.0:
        raise ValueError("accel_limit must be positive")
    if v_max <= 0.0:
        raise ValueError("v_max must be positive")
    s = track.stations
    kappa = track.curvature
    lap = track.lap_length
    # the final station is the wrap of station 0, so run the circular passes
    # over the m unique stations and copy the result back at the end
    m = s.size - 1
    # |kappa| floored so the cap never exceeds v_max
    k_floor = np.maximum(np.abs(kappa), accel_limit / (v_max * v_max))
    u = np.sqrt(accel_limit / k_floor)[:m]
    u[0] = min(u[0], math.sqrt(accel_limit / k_floor[-1]))

    def step(i: int) -> tuple[int, float, float]:
        j = (i + 1) % m
        ds = s[i + 1] - s[i]  # s[m] == lap closes the loop
        k_mid = 0.5 * (kappa[i] + kappa[i + 1])
        return j, ds, k_mid

    for _ in range(50):
        worst = 0.0
        for i in range(m):  # forward: acceleration limit
            j, ds, k_mid = step(i)
            if u[j] > u[i] and not _circle_ok(u[i], u[j], k_mid, ds, accel_limit):
                new = _bisect_speed(
                    u[i], u[j], lambda x: _circle_ok(u[i], x, k_mid, ds, accel_limit)
                )
                worst = max(worst, u[j] - new)
                u[j] = new
        for i in range(m - 1, -1, -1):  # backward: braking limit
            j, ds, k_mid = step(i)
            if u[i] > u[j] and not _circle_ok(u[i], u[j], k_mid, ds, accel_limit):
                new = _bisect_speed(
                    u[j], u[i], lambda x: _circle_ok(x, u[j], k_mid, ds, accel_limit)
                )
                worst = max(worst, u[i] - new)
                u[i] = new
        if worst < 1e-12:
            break
    u = np.append(u, u[0])
    if not np.all(np.isfinite(u)) or np.any(u <= 0.0):
        raise ValueError("infeasible speed profile: a station forces Ux <= 0")
    return SpeedProfile(s, u)


def scale_profile(speed: SpeedProfile, factor: float) -> SpeedProfile:
    """Multiply every speed by factor; combined acceleration scales by factor**2."""
    if factor <= 0.0:
        raise ValueError("factor must be positive")
    return replace(speed, speed=speed.speed * factor)


# ---------------------------------------------------------------------------
# Time grid

def advance_distance(speed: SpeedProfile, s: float, duration: float, substeps: int) -> float:
    """Integrate ds/dt = Ux(s) from s over duration with fixed-step RK4."""
    h = duration / substeps
    for _ in range(substeps):
        k1 = sample_at_distance(speed, s)
        k2 = sample_at_distance(speed, s + 0.5 * h * k1)
        k3 = sample_at_distance(speed, s + 0.5 * h * k2)
        k4 = sample_at_distance(speed, s + h * k3)
        s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return s


def build_time_grid(track: TrackProfile, speed: SpeedProfile, ts: float) -> TimeGrid:
    """Lay the controller sample clock over one lap.

    n is the number of whole samples needed for the integrated distance to
    reach the lap length (the last sample may overrun the finish line).
    """
    if ts <= 0.0:
        raise ValueError("sample time must be positive")
    if not np.array_equal(speed.stations, track.stations):
        raise ValueError("speed profile stations do not match track stations")
    lap = track.lap_length
    distances = [0.0]
    s = 0.0
    # 1e-6 m slack so an exact integer lap count is not pushed to n+1 samples
    # by roundoff in the integrator
    while s < lap - 1e-6:
        s = advance_distance(speed, s, ts, GRID_SUBSTEPS)
        distances.append(s)
    starts = np.array(distances[:-1])
    n = starts.size
    return TimeGrid(
        sample_time=ts,
        n=n,
        times=np.arange(n) * ts,
        distances=starts,
        speeds=np.array([sample_at_distance(speed, si) for si in starts]),
    )


def truncate_grid(grid: TimeGrid, n: int) -> TimeGrid:
    """First n samples of a grid, as a window onto the start of the lap."""
    if not 1 <= n <= grid.n:
        raise ValueError(f"window must lie in [1, {grid.n}]")
    return TimeGrid(
        sample_time=grid.sample_time,
        n=n,
        times=grid.times[:n],
        distances=grid.distances[:n],
        speeds=grid.speeds[:n],
    )
