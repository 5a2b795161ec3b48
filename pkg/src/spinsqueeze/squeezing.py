"""Kitagawa-Ueda squeezing parameter, optimal angle, and the storage functional.

All quantities derive from first and (symmetrized) second moments of the
collective spin.  The azimuth of the mean spin is recovered with a two-argument
arctangent so the full [0, 2pi) range is covered; a bare arccos of
<Jx>/|J_perp| cannot distinguish the sign of <Jy>.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SpinMoments",
    "SqueezingRecord",
    "StorageResult",
    "MeanSpinDegenerateError",
    "UndefinedAngleError",
    "mean_spin_direction",
    "squeezing_record_from_moments",
    "squeezing_parameter",
    "optimal_angle",
    "xi2_to_db",
    "storage_integral",
    "xi2_floor_events",
]

MEAN_SPIN_TOL = 1e-9
XI2_FLOOR = 1e-12


class MeanSpinDegenerateError(ValueError):
    """|<J>| is numerically zero; the transverse frame is undefined."""


class UndefinedAngleError(ValueError):
    """(A, B) = (0, 0); the optimal squeezing angle is undefined."""


class _FloorCounter:
    """Counts how often xi^2 had to be floored before taking the log."""

    def __init__(self):
        self.count = 0

    def bump(self, n: int = 1):
        self.count += n

    def reset(self):
        self.count = 0


xi2_floor_events = _FloorCounter()


@dataclass(frozen=True)
class SpinMoments:
    """First moments <J_a> and symmetrized second moments <(J_a J_b + J_b J_a)/2>."""

    jx: float
    jy: float
    jz: float
    jxx: float
    jyy: float
    jzz: float
    jxy: float
    jxz: float
    jyz: float
    photon: float = 0.0
    a_re: float = 0.0
    a_im: float = 0.0

    @property
    def first(self) -> np.ndarray:
        return np.array([self.jx, self.jy, self.jz])

    @property
    def second(self) -> np.ndarray:
        """Symmetric 3x3 matrix of symmetrized second moments."""
        return np.array([
            [self.jxx, self.jxy, self.jxz],
            [self.jxy, self.jyy, self.jyz],
            [self.jxz, self.jyz, self.jzz],
        ])


@dataclass(frozen=True)
class SqueezingRecord:
    """Squeezing diagnostics of one state: mean-spin frame, moments, xi^2, phi_opt."""

    theta: float
    phi: float
    A: float
    B: float
    C: float
    xi2: float
    xi2_db: float
    phi_opt: float


@dataclass(frozen=True)
class StorageResult:
    """Integrated squeezing S = -10 int log10 xi^2(t) dt and the squeezing lifetime."""

    S: float
    t_cross: float
    t_max_used: float
    convention: str


def mean_spin_direction(moments) -> tuple[float, float]:
    """Polar/azimuthal angles of <J>.  Accepts SpinMoments or a 3-vector."""
    v = moments.first if hasattr(moments, "first") else np.asarray(moments, dtype=float)
    norm = np.linalg.norm(v)
    if norm <= MEAN_SPIN_TOL:
        raise MeanSpinDegenerateError(f"|<J>| = {norm:.3e} below {MEAN_SPIN_TOL}")
    theta = np.arccos(np.clip(v[2] / norm, -1.0, 1.0))
    if np.hypot(v[0], v[1]) <= MEAN_SPIN_TOL * norm:
        phi = 0.0  # polar: azimuth by convention
    else:
        phi = float(np.arctan2(v[1], v[0])) % (2 * np.pi)
    return float(theta), phi


def optimal_angle(A: float, B: float) -> float:
    """Optimal squeezing angle phi_opt in the (n1, n2) transverse plane."""
    r = np.hypot(A, B)
    if r == 0.0:
        raise UndefinedAngleError("A = B = 0, squeezing direction undefined")
    base = 0.5 * np.arccos(np.clip(-A / r, -1.0, 1.0))
    return float(base) if B <= 0 else float(np.pi - base)


def xi2_to_db(xi2: float) -> float:
    """10 log10(xi^2); non-positive inputs are floored at 1e-12 and counted."""
    if xi2 <= 0.0:
        xi2_floor_events.bump()
        xi2 = XI2_FLOOR
    return 10.0 * np.log10(xi2)


def squeezing_record_from_moments(moments: SpinMoments, n_spins: int) -> SqueezingRecord:
    """Build the full squeezing record from collective-spin moments.

    n1 = (-sin phi, cos phi, 0) and n2 = (-cos theta cos phi, -cos theta sin phi,
    sin theta) span the plane transverse to the mean spin; then
    C = <J_n1^2 + J_n2^2>, A = <J_n1^2 - J_n2^2>, B = <{J_n1, J_n2}>, and
    xi^2 = (2/N)(C - sqrt(A^2 + B^2)).
    """
    theta, phi = mean_spin_direction(moments)
    st, ct = np.sin(theta), np.cos(theta)
    sp, cp = np.sin(phi), np.cos(phi)
    n1 = np.array([-sp, cp, 0.0])
    n2 = np.array([-ct * cp, -ct * sp, st])

    sec = moments.second
    v11 = n1 @ sec @ n1       # <J_n1^2>
    v22 = n2 @ sec @ n2       # <J_n2^2>
    v12 = n1 @ sec @ n2       # <{J_n1, J_n2}>/2

    C = v11 + v22
    A = v11 - v22
    B = 2.0 * v12
    xi2 = (2.0 / n_spins) * (C - np.hypot(A, B))
    # isotropic transverse variance (exact for N=1 and ideal CSS): any angle
    # is optimal, report 0 by convention instead of propagating the error
    phi_opt = optimal_angle(A, B) if np.hypot(A, B) > 0.0 else 0.0
    return SqueezingRecord(theta=theta, phi=phi, A=float(A), B=float(B), C=float(C),
                           xi2=float(xi2), xi2_db=xi2_to_db(xi2), phi_opt=phi_opt)


def squeezing_parameter(state, spin_ops=None, n_spins: int | None = None) -> SqueezingRecord:
    """Squeezing record of a state or of precomputed moments.

    `state` may be a SpinMoments (then n_spins is required), a DensityMatrix,
    a raw density matrix on a pure spin space, or a spin state vector.  For
    matrix/vector input the moments are taken with dense spin operators.
    """
    if isinstance(state, SpinMoments):
        if n_spins is None:
            raise ValueError("n_spins required with SpinMoments input")
        return squeezing_record_from_moments(state, n_spins)

    from . import hilbert
    from .dynamics import spin_moments_from_spin_state

    if isinstance(state, hilbert.DensityMatrix):
        from .dynamics import EmbeddedOps
        ops = EmbeddedOps.for_space(state.space)
        moments = ops.moments_density(state.matrix)
        return squeezing_record_from_moments(moments, state.space.n_spins)

    arr = np.asarray(state)
    if arr.ndim == 1:
        n = arr.shape[0] - 1
    elif arr.ndim == 2 and arr.shape[0] == arr.shape[1]:
        n = arr.shape[0] - 1
    else:
        raise ValueError(f"unsupported state shape {arr.shape}")
    if n_spins is not None:
        n = n_spins
    moments = spin_moments_from_spin_state(arr, n)
    return squeezing_record_from_moments(moments, n)


def _as_time_series(trajectory) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(trajectory, tuple):
        times, xi2 = trajectory
        return np.asarray(times, dtype=float), np.asarray(xi2, dtype=float)
    return np.asarray(trajectory.times, dtype=float), np.asarray(trajectory.xi2, dtype=float)


def storage_integral(trajectory, convention: str = "lifetime") -> StorageResult:
    """Trapezoidal S = -10 int_0^T log10 xi^2(t) dt.

    convention='lifetime' (default): the upper limit is the first time after
    the global xi^2 minimum where xi^2 returns to 1 (linearly interpolated);
    if it never does, t_max is used.  convention='full': integrate to t_max,
    negative contributions included.  t_cross is reported either way.
    """
    times, xi2 = _as_time_series(trajectory)
    if times.size == 0:
        raise ValueError("empty trajectory")
    if convention not in ("lifetime", "full"):
        raise ValueError(f"unknown convention {convention!r}")

    floored = xi2 <= 0.0
    if floored.any():
        xi2_floor_events.bump(int(floored.sum()))
        xi2 = np.where(floored, XI2_FLOOR, xi2)
    integrand = -10.0 * np.log10(xi2)

    # first xi^2 >= 1 crossing after the global minimum
    i_min = int(np.argmin(xi2))
    t_cross = float(times[-1])
    crossed = False
    for i in range(i_min + 1, times.size):
        if xi2[i] >= 1.0:
            if xi2[i] > 1.0 and xi2[i - 1] < 1.0:
                frac = (1.0 - xi2[i - 1]) / (xi2[i] - xi2[i - 1])
                t_cross = float(times[i - 1] + frac * (times[i] - times[i - 1]))
            else:
                t_cross = float(times[i])
            crossed = True
            break

    if convention == "full" or not crossed:
        t_used = float(times[-1])
        S = float(np.trapezoid(integrand, times))
    else:
        t_used = t_cross
        mask = times <= t_cross
        t_part = np.append(times[mask], t_cross)
        y_part = np.append(integrand[mask], 0.0)  # integrand vanishes at the crossing
        S = float(np.trapezoid(y_part, t_part))

    return StorageResult(S=S, t_cross=t_cross, t_max_used=t_used, convention=convention)
