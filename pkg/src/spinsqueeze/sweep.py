"""Constant-amplitude control scans: min xi^2(t) as a function of zeta.

Each grid point is one full evolution (unitary when noiseless, master
equation otherwise); points are independent and run in a process pool,
merged back in grid order so results are deterministic regardless of
scheduling.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np

from . import dynamics, hilbert
from .dynamics import ControlSignal, ModelParams

__all__ = ["SweepResult", "sweep_constant", "find_zeta_min", "constant_trajectory"]


@dataclass(frozen=True)
class SweepResult:
    zeta_grid: np.ndarray
    min_xi2: np.ndarray
    t_min: np.ndarray
    noisy: bool

    @property
    def min_xi2_db(self) -> np.ndarray:
        return 10.0 * np.log10(self.min_xi2)

    @property
    def best(self) -> tuple[float, float, float]:
        """(zeta_min, min xi^2, t at min); ties broken toward smaller |zeta|."""
        return find_zeta_min(self)

    def to_csv(self, path):
        db = self.min_xi2_db
        with open(path, "w") as f:
            f.write("zeta,min_xi2,min_xi2_db,t_min\n")
            for i in range(len(self.zeta_grid)):
                f.write(f"{float(self.zeta_grid[i])!r},{float(self.min_xi2[i])!r},"
                        f"{float(db[i])!r},{float(self.t_min[i])!r}\n")

    @classmethod
    def from_csv(cls, path, noisy: bool = True) -> "SweepResult":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(zeta_grid=data[:, 0], min_xi2=data[:, 1], t_min=data[:, 3],
                   noisy=noisy)


def constant_trajectory(zeta: float, params: ModelParams, t_final: float,
                        noisy: bool, dt_ctrl: float = 0.5,
                        record_every: float = 0.1,
                        y_target: float = dynamics.DEFAULT_Y_TARGET,
                        theta: float = np.pi / 2, phi: float = np.pi / 2):
    """One constant-control run from the standard initial state."""
    control = ControlSignal.constant(zeta, t_final=t_final, dt_ctrl=dt_ctrl)
    if noisy:
        rho0 = hilbert.initial_state(params, theta, phi)
        return dynamics.evolve(rho0, control, params, t_final,
                               record_every=record_every, y_target=y_target)
    psi0 = hilbert.initial_state_vector(params.space, theta, phi)
    return dynamics.evolve_unitary(psi0, control, params.noiseless, t_final,
                                   record_every=record_every, y_target=y_target)


def _sweep_worker(args):
    zeta, params, t_final, noisy, dt_ctrl, record_every, y_target = args
    try:
        traj = constant_trajectory(zeta, params, t_final, noisy, dt_ctrl,
                                   record_every, y_target)
    except Exception as exc:
        raise RuntimeError(f"sweep point zeta={zeta} failed: {exc}") from exc
    return traj.min_xi2, traj.t_min


def sweep_constant(zeta_grid, params: ModelParams, t_final: float, noisy: bool,
                   dt_ctrl: float = 0.5, record_every: float = 0.1,
                   y_target: float = dynamics.DEFAULT_Y_TARGET,
                   processes: int | None = None) -> SweepResult:
    """min_t xi^2 over t in (0, t_final] for every zeta on the grid."""
    grid = np.asarray(list(zeta_grid), dtype=float)
    if grid.size == 0:
        raise ValueError("empty zeta grid")
    jobs = [(float(z), params, t_final, noisy, dt_ctrl, record_every, y_target)
            for z in grid]
    if processes is None:
        processes = min(len(jobs), os.cpu_count() or 1)
    if processes <= 1 or len(jobs) == 1:
        results = [_sweep_worker(j) for j in jobs]
    else:
        with get_context("fork").Pool(processes) as pool:
            results = pool.map(_sweep_worker, jobs, chunksize=1)
    mins = np.array([r[0] for r in results])
    tmins = np.array([r[1] for r in results])
    return SweepResult(zeta_grid=grid, min_xi2=mins, t_min=tmins, noisy=noisy)


def find_zeta_min(sweep: SweepResult) -> tuple[float, float, float]:
    """Grid argmin of min xi^2 as (zeta_min, min_xi2, t_min).

    Exact ties are resolved toward smaller |zeta|.
    """
    if sweep.zeta_grid.size == 0:
        raise ValueError("empty sweep")
    i = min(range(sweep.zeta_grid.size),
            key=lambda k: (sweep.min_xi2[k], abs(sweep.zeta_grid[k]), sweep.zeta_grid[k]))
    return (float(sweep.zeta_grid[i]), float(sweep.min_xi2[i]), float(sweep.t_min[i]))
