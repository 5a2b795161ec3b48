"""Four-step combined control: constant prefix, learned time-varying tail.

Step 1 locates the best constant amplitude zeta_min and a regime around it.
Step 2 builds, for candidate constant values zeta_c, a stitched control that
holds zeta_c until the time its own xi^2 minimum occurs, then copies the
remainder of a previously learned full time-varying control.  Step 3 scans
the regime for the stitch point zeta_opt maximizing the integrated squeezing
S.  Step 4 re-learns the tail of the zeta_opt stitch with the RL agent,
starting from the state the constant prefix prepared.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np

from . import ddpg, hilbert, sweep
from .dynamics import ControlSignal, ModelParams, evolve, evolve_unitary
from .squeezing import storage_integral

__all__ = [
    "StitchedControl",
    "CombinedResult",
    "choose_regime",
    "stitch_control",
    "optimize_stitched",
    "learn_tail",
    "combined_pipeline",
    "PipelineConfig",
]


@dataclass(frozen=True)
class StitchedControl:
    zeta_c: float
    t_min: float                 # switch time, snapped down to the control grid
    tail: ControlSignal          # copied time-varying segment on (t_min, T]
    assembled: ControlSignal


@dataclass
class CombinedResult:
    zeta_opt: float
    S_by_zeta: dict
    final_control: ControlSignal | None
    S_c: float
    lifetime: float
    zeta_min: float = np.nan
    regime: tuple = ()
    stitched_by_zeta: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)
    tv_control: ControlSignal | None = None
    tail_log: object = None

    def scan_to_csv(self, path):
        with open(path, "w") as f:
            f.write("zeta_c,S\n")
            for z in sorted(self.S_by_zeta):
                f.write(f"{float(z)!r},{float(self.S_by_zeta[z])!r}\n")


def choose_regime(zeta_min: float, half_width: float = 0.5) -> tuple[float, float]:
    """Scan window [zeta_min - w, zeta_min + w] around the constant-control optimum."""
    if half_width <= 0:
        raise ValueError("half_width must be > 0")
    return (zeta_min - half_width, zeta_min + half_width)


def _is_noisy(params: ModelParams) -> bool:
    return params.kappa > 0.0 or params.gamma > 0.0


def stitch_control(zeta_c: float, full_tv: ControlSignal, params: ModelParams,
                   t_min: float | None = None,
                   record_every: float = 0.1) -> StitchedControl:
    """Constant zeta_c until its own xi^2 minimum time, then the copied tv tail.

    t_min may be passed in (e.g. from a sweep over the same grid) to skip the
    constant-control evolution; it is snapped down to the control grid either
    way so the assembled control stays piecewise constant on one grid.
    """
    if abs(full_tv.t0) > 1e-12:
        raise ValueError("full time-varying control must start at t = 0")
    horizon = full_tv.t_end
    dt_ctrl = full_tv.dt_ctrl
    if t_min is None:
        traj = sweep.constant_trajectory(zeta_c, params, horizon, _is_noisy(params),
                                         dt_ctrl=dt_ctrl, record_every=record_every)
        i_rec = 1 + int(np.argmin(traj.xi2[1:]))
        if i_rec == len(traj.times) - 1:
            raise ValueError(
                f"xi^2 under constant zeta_c={zeta_c} is still decreasing at the "
                f"horizon; no interior minimum to stitch at")
        t_min = float(traj.times[i_rec])
    i_switch = int(np.floor(t_min / dt_ctrl + 1e-9))
    i_switch = min(i_switch, full_tv.n_bins - 1)
    t_switch = i_switch * dt_ctrl
    tail = ControlSignal(t0=t_switch, dt_ctrl=dt_ctrl,
                         values=full_tv.values[i_switch:])
    assembled = ControlSignal(t0=0.0, dt_ctrl=dt_ctrl,
                              values=(zeta_c,) * i_switch + tail.values)
    return StitchedControl(zeta_c=zeta_c, t_min=t_switch, tail=tail,
                           assembled=assembled)


def _stitch_worker(args):
    zeta_c, full_tv, params, t_min, record_every, convention = args
    try:
        st = stitch_control(zeta_c, full_tv, params, t_min=t_min,
                            record_every=record_every)
        traj, storage = ddpg.evaluate(st.assembled, params, _is_noisy(params),
                                      record_every=record_every,
                                      convention=convention)
        return (zeta_c, st, float(storage.S), None)
    except Exception as exc:
        return (zeta_c, None, np.nan, f"{exc}")


def optimize_stitched(regime: tuple[float, float], step: float,
                      full_tv: ControlSignal, params: ModelParams,
                      t_min_by_zeta: dict | None = None,
                      record_every: float = 0.1, convention: str = "lifetime",
                      processes: int | None = None) -> CombinedResult:
    """Scan stitched controls over the regime; argmax S, ties toward smaller |zeta_c|."""
    if step <= 0:
        raise ValueError("step must be > 0")
    lo, hi = regime
    n = int(round((hi - lo) / step))
    grid = [round(lo + i * step, 12) for i in range(n + 1)]
    jobs = []
    for z in grid:
        t_min = None
        if t_min_by_zeta is not None:
            key = min(t_min_by_zeta, key=lambda k: abs(k - z))
            if abs(key - z) < 1e-9:
                t_min = t_min_by_zeta[key]
        jobs.append((z, full_tv, params, t_min, record_every, convention))
    if processes is None:
        processes = min(len(jobs), os.cpu_count() or 1)
    if processes <= 1 or len(jobs) == 1:
        results = [_stitch_worker(j) for j in jobs]
    else:
        with get_context("fork").Pool(processes) as pool:
            results = pool.map(_stitch_worker, jobs, chunksize=1)

    S_by_zeta, stitched, skipped = {}, {}, []
    for zeta_c, st, S, err in results:
        if err is not None:
            skipped.append((zeta_c, err))
            continue
        S_by_zeta[zeta_c] = S
        stitched[zeta_c] = st
    if not S_by_zeta:
        raise RuntimeError(f"every stitch in {regime} failed: {skipped}")
    zeta_opt = min(S_by_zeta, key=lambda z: (-S_by_zeta[z], abs(z), z))
    best = stitched[zeta_opt]
    traj, storage = ddpg.evaluate(best.assembled, params, _is_noisy(params),
                                  record_every=record_every, convention=convention)
    return CombinedResult(zeta_opt=float(zeta_opt), S_by_zeta=S_by_zeta,
                          final_control=best.assembled, S_c=float(storage.S),
                          lifetime=float(storage.t_cross), regime=regime,
                          stitched_by_zeta=stitched, skipped=skipped,
                          tv_control=full_tv)


def prefix_state(zeta_c: float, t_switch: float, params: ModelParams,
                 dt_ctrl: float):
    """State prepared by the constant prefix at the switch time."""
    noisy = _is_noisy(params)
    if t_switch <= 0:
        return (hilbert.initial_state(params).matrix if noisy
                else hilbert.initial_state_vector(params.space))
    control = ControlSignal.constant(zeta_c, t_final=t_switch, dt_ctrl=dt_ctrl)
    if noisy:
        rho0 = hilbert.initial_state(params)
        traj = evolve(rho0, control, params, t_switch)
        return traj.final_state.matrix
    psi0 = hilbert.initial_state_vector(params.space)
    traj = evolve_unitary(psi0, control, params.noiseless, t_switch)
    return traj.final_state


def learn_tail(zeta_opt: float, params: ModelParams, agent_config: ddpg.AgentConfig,
               full_tv: ControlSignal, t_min: float | None = None,
               train_params: ModelParams | None = None):
    """Step 4: re-learn the tail of the zeta_opt stitch with the agent.

    Returns (combined ControlSignal, StitchedControl, TrainingLog|None);
    with episodes=0 the unlearned stitched control is returned unchanged.
    train_params may lower the Fock cutoff for the training episodes only
    (the returned control is re-evaluated on `params` by callers).
    """
    st = stitch_control(zeta_opt, full_tv, params, t_min=t_min)
    if agent_config.episodes == 0:
        return st.assembled, st, None
    horizon = full_tv.t_end
    dt_ctrl = full_tv.dt_ctrl
    n_tail = st.tail.n_bins
    tail_cfg = ddpg.AgentConfig(**{**_cfg_dict(agent_config),
                                   "steps_per_episode": n_tail})
    tp = train_params or params
    state = prefix_state(zeta_opt, st.t_min, tp, dt_ctrl)
    log = ddpg.train(tp, tail_cfg, start_state=state, t_start=st.t_min,
                     horizon=horizon, noisy=_is_noisy(tp))
    if log.best_control is None:
        return st.assembled, st, log
    combined = ControlSignal(
        t0=0.0, dt_ctrl=dt_ctrl,
        values=(zeta_opt,) * int(round(st.t_min / dt_ctrl)) + log.best_control.values)
    return combined, st, log


def _cfg_dict(cfg: ddpg.AgentConfig) -> dict:
    from dataclasses import asdict
    return asdict(cfg)


@dataclass(frozen=True)
class PipelineConfig:
    sweep_lo: float = -1.0
    sweep_hi: float = 1.0
    sweep_step: float = 0.01
    horizon: float = 100.0
    dt_ctrl: float = 1.0
    regime_half_width: float = 0.5
    regime_step: float = 0.01
    record_every: float = 0.1
    convention: str = "lifetime"
    processes: int | None = None


def combined_pipeline(params: ModelParams, agent_config: ddpg.AgentConfig,
                      pipe: PipelineConfig = PipelineConfig(),
                      full_tv: ControlSignal | None = None,
                      sweep_result: sweep.SweepResult | None = None,
                      train_params: ModelParams | None = None,
                      verbose: bool = False) -> CombinedResult:
    """End-to-end Steps 1-4.  A pre-trained full tv control and a pre-computed
    constant sweep may be injected; otherwise they are produced here.
    train_params (e.g. a reduced Fock cutoff) applies to the RL episodes only;
    every reported S/lifetime is evaluated on `params`."""
    noisy = _is_noisy(params)
    k = int(round(pipe.horizon / pipe.dt_ctrl))
    if abs(k * pipe.dt_ctrl - pipe.horizon) > 1e-9:
        raise ValueError("horizon must be a multiple of dt_ctrl")

    # Step 1: constant-control scan
    if sweep_result is None:
        grid = np.round(np.arange(pipe.sweep_lo, pipe.sweep_hi + pipe.sweep_step / 2,
                                  pipe.sweep_step), 12)
        sweep_result = sweep.sweep_constant(grid, params, pipe.horizon, noisy,
                                            dt_ctrl=pipe.dt_ctrl,
                                            record_every=pipe.record_every,
                                            processes=pipe.processes)
    zeta_min, _, _ = sweep.find_zeta_min(sweep_result)
    regime = choose_regime(zeta_min, pipe.regime_half_width)
    if verbose:
        print(f"step 1: zeta_min = {zeta_min}, regime = {regime}", flush=True)

    # full time-varying control (input to Step 2)
    if full_tv is None:
        tv_cfg = ddpg.AgentConfig(**{**_cfg_dict(agent_config),
                                     "steps_per_episode": k})
        tv_log = ddpg.train(train_params or params, tv_cfg, horizon=pipe.horizon,
                            noisy=noisy, verbose=verbose)
        full_tv = tv_log.best_control
    if abs(full_tv.dt_ctrl - pipe.dt_ctrl) > 1e-12 or full_tv.n_bins != k:
        raise ValueError("full tv control grid does not match the pipeline grid")

    # Steps 2-3: stitched-control scan
    t_min_by_zeta = {float(z): float(t) for z, t in
                     zip(sweep_result.zeta_grid, sweep_result.t_min)}
    result = optimize_stitched(regime, pipe.regime_step, full_tv, params,
                               t_min_by_zeta=t_min_by_zeta,
                               record_every=pipe.record_every,
                               convention=pipe.convention,
                               processes=pipe.processes)
    result.zeta_min = zeta_min
    if verbose:
        print(f"step 3: zeta_opt = {result.zeta_opt}, stitched S = {result.S_c}",
              flush=True)

    # Step 4: learn the tail; keep the copied tail if learning failed to beat it
    S_stitched = result.S_c
    stitched_control = result.final_control
    combined, st, log = learn_tail(result.zeta_opt, params, agent_config, full_tv,
                                   t_min=t_min_by_zeta.get(result.zeta_opt),
                                   train_params=train_params)
    traj, storage = ddpg.evaluate(combined, params, noisy,
                                  record_every=pipe.record_every,
                                  convention=pipe.convention)
    if storage.S >= S_stitched:
        result.final_control = combined
        result.S_c = float(storage.S)
        result.lifetime = float(storage.t_cross)
    else:
        result.final_control = stitched_control
        _, storage0 = ddpg.evaluate(stitched_control, params, noisy,
                                    record_every=pipe.record_every,
                                    convention=pipe.convention)
        result.S_c = float(storage0.S)
        result.lifetime = float(storage0.t_cross)
    result.tail_log = log
    if verbose:
        print(f"step 4: combined S = {result.S_c} (stitched was {S_stitched}), "
              f"lifetime = {result.lifetime}", flush=True)
    return result
