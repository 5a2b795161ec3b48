"""Experiment orchestration: config files in, CSV artifacts + manifest out.

Every experiment is described by a JSON config (strictly validated; unknown
keys are rejected with their path).  Artifacts land in
<out_root>/<name-or-hash>/ together with a manifest recording the resolved
config, its hash, the package version and wall time.  A rerun with an
identical resolved config is served from the existing directory (runs are
deterministic given their seed), so reruns are idempotent and manifests can
be replayed byte-for-byte; pass force=True to recompute.
"""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import __version__, combined, ddpg, effective, hilbert, squeezing, sweep
from .dynamics import ControlSignal, ModelParams, evolve, evolve_unitary
from .squeezing import storage_integral

__all__ = ["ConfigError", "ExperimentConfig", "run", "n_scan", "gamma_scan",
           "angle_track", "output_root", "RUN_KINDS"]

RUN_KINDS = ("sweep", "train", "combine", "validate-effective", "trajectory",
             "n-scan", "gamma-scan", "angle-track")

ENV_OUT_ROOT = "SPINSQUEEZE_RESULTS"


class ConfigError(ValueError):
    """Malformed experiment configuration (reported with the offending path)."""


def output_root(explicit: str | None = None) -> str:
    return explicit or os.environ.get(ENV_OUT_ROOT) or "results"


def _check_keys(d: dict, allowed, path: str):
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} at '{path}' "
                          f"(allowed: {sorted(allowed)})")


def _dataclass_from(d: dict, cls, path: str):
    names = {f.name for f in fields(cls)}
    _check_keys(d, names, path)
    try:
        kw = dict(d)
        for f in fields(cls):
            if f.name in kw and isinstance(kw[f.name], list):
                kw[f.name] = tuple(kw[f.name])
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value at '{path}': {exc}") from exc


_SECTION_KEYS = {
    "sweep": {"lo", "hi", "step", "t_final", "dt_ctrl", "noisy", "record_every",
              "extra_zetas"},
    "trajectory": {"zeta", "t_final", "dt_ctrl", "noisy", "record_every",
                   "control_csv", "theta", "phi", "y_target", "dt"},
    "effective": {"zeta", "t_final", "record_every", "dressed", "convention",
                  "zeta_range"},
    "train": {"horizon", "noisy", "train_fock_cutoff"},
    "combine": {"tv_control_csv", "sweep_csv", "train_fock_cutoff"},
    "pipeline": None,  # PipelineConfig fields
    "n_scan": {"n_list", "t_final", "lo", "hi", "step", "fock_cutoff"},
    "gamma_scan": {"gammas", "control_csv", "t_final", "record_every"},
    "angle_track": {"tv_noiseless_csv", "tv_noisy_csv", "combined_csv",
                    "record_every", "noisy_t_final", "noiseless_t_final"},
}

_TOP_KEYS = {"kind", "name", "seed", "model", "agent", "processes", "out_root",
             *_SECTION_KEYS}


@dataclass
class ExperimentConfig:
    kind: str
    name: str
    seed: int | None
    model: ModelParams
    agent: ddpg.AgentConfig | None
    sections: dict
    processes: int | None
    out_root: str | None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be an object")
        _check_keys(raw, _TOP_KEYS, "$")
        kind = raw.get("kind")
        if kind not in RUN_KINDS:
            raise ConfigError(f"unknown kind {kind!r} at '$.kind' "
                              f"(allowed: {list(RUN_KINDS)})")
        model = _dataclass_from(raw.get("model", {}), ModelParams, "$.model")
        seed = raw.get("seed")
        agent = None
        if "agent" in raw or kind in ("train", "combine"):
            agent_d = dict(raw.get("agent", {}))
            if kind in ("train", "combine"):
                if seed is None:
                    raise ConfigError(f"'$.seed' is mandatory for kind={kind}")
                agent_d.setdefault("seed", seed)
            agent = _dataclass_from(agent_d, ddpg.AgentConfig, "$.agent")
        sections = {}
        for key, allowed in _SECTION_KEYS.items():
            if key in raw:
                sec = raw[key]
                if allowed is None:
                    sections[key] = asdict(_dataclass_from(
                        sec, combined.PipelineConfig, f"$.{key}"))
                else:
                    _check_keys(sec, allowed, f"$.{key}")
                    sections[key] = dict(sec)
        name = raw.get("name") or ""
        return cls(kind=kind, name=name, seed=seed, model=model, agent=agent,
                   sections=sections, processes=raw.get("processes"),
                   out_root=raw.get("out_root"))

    def resolved(self) -> dict:
        out = {
            "kind": self.kind,
            "name": self.name,
            "seed": self.seed,
            "model": asdict(self.model),
            "agent": asdict(self.agent) if self.agent else None,
            "sections": self.sections,
        }
        return out

    @property
    def digest(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _load_config(path_or_dict) -> ExperimentConfig:
    if isinstance(path_or_dict, dict):
        raw = path_or_dict
    else:
        with open(path_or_dict) as f:
            raw = json.load(f)
    if "resolved_config" in raw:  # replaying a manifest
        inner = raw["resolved_config"]
        raw = {k: v for k, v in {
            "kind": inner["kind"], "name": inner["name"], "seed": inner["seed"],
            "model": inner["model"], "agent": inner["agent"],
            **inner["sections"]}.items() if v is not None}
    return ExperimentConfig.from_dict(raw)


def _grid(lo, hi, step):
    n = int(round((hi - lo) / step))
    return np.round(np.linspace(lo, hi, n + 1), 12)


def _write_fidelity_csv(path, times, fids):
    with open(path, "w") as f:
        f.write("t,fidelity\n")
        for t, v in zip(times, fids):
            f.write(f"{float(t)!r},{float(v)!r}\n")


def _summary(path, data):
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True, default=float)


# ---------------------------------------------------------------- run kinds

def _run_sweep(cfg: ExperimentConfig, outdir: str) -> dict:
    s = cfg.sections.get("sweep", {})
    grid = _grid(s.get("lo", -5.0), s.get("hi", 5.0), s.get("step", 0.01))
    extra = s.get("extra_zetas", [])
    noisy = s.get("noisy", cfg.model.kappa > 0 or cfg.model.gamma > 0)
    t_final = s.get("t_final", 100.0 if noisy else 50.0)
    res = sweep.sweep_constant(
        list(grid) + list(extra), cfg.model, t_final, noisy,
        dt_ctrl=s.get("dt_ctrl", 0.5), record_every=s.get("record_every", 0.1),
        processes=cfg.processes)
    res.to_csv(os.path.join(outdir, "sweep.csv"))
    zeta_min, min_xi2, t_min = sweep.find_zeta_min(res)
    summary = {"zeta_min": zeta_min, "min_xi2": min_xi2,
               "min_xi2_db": 10 * np.log10(min_xi2), "t_min": t_min,
               "noisy": noisy, "t_final": t_final}
    _summary(os.path.join(outdir, "summary.json"), summary)
    return summary


def _eval_and_dump(control, params, noisy, outdir, prefix, record_every=0.1):
    traj, st_life = ddpg.evaluate(control, params, noisy, record_every=record_every)
    st_full = storage_integral(traj, "full")
    traj.to_csv(os.path.join(outdir, f"{prefix}_trajectory.csv"))
    traj.to_json(os.path.join(outdir, f"{prefix}_trajectory.json"))
    return traj, {"S_lifetime": st_life.S, "S_full": st_full.S,
                  "t_cross": st_life.t_cross,
                  "min_xi2": traj.min_xi2,
                  "min_xi2_db": 10 * np.log10(traj.min_xi2),
                  "t_min": traj.t_min}


def _run_train(cfg: ExperimentConfig, outdir: str) -> dict:
    t = cfg.sections.get("train", {})
    noisy = t.get("noisy", cfg.model.kappa > 0 or cfg.model.gamma > 0)
    horizon = t.get("horizon", 100.0 if noisy else 50.0)
    train_model = cfg.model
    if "train_fock_cutoff" in t:
        # episodes run at a reduced cutoff; evaluation below stays at the
        # configured model (cutoff-convergence guard lives in the test suite)
        train_model = ModelParams(**{**asdict(cfg.model),
                                     "fock_cutoff": int(t["train_fock_cutoff"])})
    log = ddpg.train(train_model, cfg.agent, horizon=horizon, noisy=noisy)
    log.to_csv(os.path.join(outdir, "training_log.csv"))
    ddpg.save_checkpoint(os.path.join(outdir, "checkpoint.npz"), log)
    if log.best_control is None:
        raise RuntimeError("training produced no usable control")
    log.best_control.to_csv(os.path.join(outdir, "control.csv"))
    _, ev = _eval_and_dump(log.best_control, cfg.model, noisy, outdir, "eval")
    summary = {"noisy": noisy, "horizon": horizon,
               "best_episode": log.best_episode, "best_S_proxy": log.best_S,
               "episodes": cfg.agent.episodes, "failures": len(log.failures),
               "train_fock_cutoff": train_model.fock_cutoff, **ev}
    _summary(os.path.join(outdir, "summary.json"), summary)
    return summary


def _run_combine(cfg: ExperimentConfig, outdir: str) -> dict:
    pipe = combined.PipelineConfig(**cfg.sections.get("pipeline", {}))
    if cfg.processes is not None:
        pipe = combined.PipelineConfig(**{**asdict(pipe), "processes": cfg.processes})
    c = cfg.sections.get("combine", {})
    full_tv = (ControlSignal.from_csv(c["tv_control_csv"])
               if "tv_control_csv" in c else None)
    sweep_result = (sweep.SweepResult.from_csv(c["sweep_csv"])
                    if "sweep_csv" in c else None)
    train_params = None
    if "train_fock_cutoff" in c:
        train_params = ModelParams(**{**asdict(cfg.model),
                                      "fock_cutoff": int(c["train_fock_cutoff"])})
    res = combined.combined_pipeline(cfg.model, cfg.agent, pipe, full_tv=full_tv,
                                     sweep_result=sweep_result,
                                     train_params=train_params)
    res.scan_to_csv(os.path.join(outdir, "s_scan.csv"))
    res.tv_control.to_csv(os.path.join(outdir, "tv_control.csv"))
    res.final_control.to_csv(os.path.join(outdir, "combined_control.csv"))
    if res.tail_log is not None:
        ddpg.save_checkpoint(os.path.join(outdir, "tail_checkpoint.npz"), res.tail_log)
    noisy = cfg.model.kappa > 0 or cfg.model.gamma > 0
    _, ev_comb = _eval_and_dump(res.final_control, cfg.model, noisy, outdir, "combined")
    _, ev_tv = _eval_and_dump(res.tv_control, cfg.model, noisy, outdir, "tv")
    summary = {"zeta_min": res.zeta_min, "regime": list(res.regime),
               "zeta_opt": res.zeta_opt, "S_c": res.S_c, "lifetime": res.lifetime,
               "skipped": res.skipped, "combined": ev_comb, "tv": ev_tv}
    _summary(os.path.join(outdir, "summary.json"), summary)
    return summary


def _run_validate_effective(cfg: ExperimentConfig, outdir: str) -> dict:
    e = cfg.sections.get("effective", {})
    zeta = e.get("zeta", 2.569)
    t_final = e.get("t_final", 50.0)
    params = cfg.model
    times, fids = effective.validate_effective(
        zeta, params, t_final, record_every=e.get("record_every", 0.1),
        dressed=e.get("dressed", True), convention=e.get("convention", "amplitude"))
    _write_fidelity_csv(os.path.join(outdir, "fidelity.csv"), times, fids)
    m0 = effective.find_m0(params)
    zr = tuple(e.get("zeta_range", (-5.0, 5.0)))
    oat = effective.oat_condition_roots(m0, zr)
    tat = effective.tat_condition_roots(m0, zr)
    with open(os.path.join(outdir, "roots.csv"), "w") as f:
        f.write("kind,zeta\n")
        for r in oat:
            f.write(f"oat,{r!r}\n")
        for r in tat:
            f.write(f"tat,{r!r}\n")
    summary = {"zeta": zeta, "m0": m0, "min_fidelity": float(np.min(fids)),
               "fidelity_at_end": float(fids[-1]), "oat_roots": oat,
               "tat_roots": tat, "convention": e.get("convention", "amplitude"),
               "dressed": e.get("dressed", True)}
    _summary(os.path.join(outdir, "summary.json"), summary)
    return summary


def _run_trajectory(cfg: ExperimentConfig, outdir: str) -> dict:
    t = cfg.sections.get("trajectory", {})
    noisy = t.get("noisy", cfg.model.kappa > 0 or cfg.model.gamma > 0)
    t_final = t.get("t_final", 100.0 if noisy else 50.0)
    if "control_csv" in t:
        control = ControlSignal.from_csv(t["control_csv"], t.get("dt_ctrl"))
    else:
        control = ControlSignal.constant(t.get("zeta", 0.0), t_final=t_final,
                                         dt_ctrl=t.get("dt_ctrl", 0.5))
    theta = t.get("theta", np.pi / 2)
    phi = t.get("phi", np.pi / 2)
    kwargs = {"record_every": t.get("record_every", 0.1)}
    if t.get("y_target") is not None:
        kwargs["y_target"] = t["y_target"]
    if t.get("dt") is not None:
        kwargs["dt"] = t["dt"]
    if noisy:
        traj = evolve(hilbert.initial_state(cfg.model, theta, phi), control,
                      cfg.model, t_final, **kwargs)
    else:
        traj = evolve_unitary(hilbert.initial_state_vector(cfg.model.space, theta, phi),
                              control, cfg.model.noiseless, t_final, **kwargs)
    traj.to_csv(os.path.join(outdir, "trajectory.csv"))
    traj.to_json(os.path.join(outdir, "trajectory.json"))
    st_life = storage_integral(traj, "lifetime")
    st_full = storage_integral(traj, "full")
    summary = {"noisy": noisy, "t_final": t_final, "min_xi2": traj.min_xi2,
               "min_xi2_db": 10 * np.log10(traj.min_xi2), "t_min": traj.t_min,
               "S_lifetime": st_life.S, "S_full": st_full.S,
               "t_cross": st_life.t_cross}
    _summary(os.path.join(outdir, "summary.json"), summary)
    return summary


def n_scan(cfg: ExperimentConfig, outdir: str) -> dict:
    """Noiseless constant-vs-learned comparison as a function of N."""
    s = cfg.sections.get("n_scan", {})
    n_list = [int(n) for n in s.get("n_list", (2, 4, 6, 8))]
    t_final = s.get("t_final", 50.0)
    lo, hi, step = s.get("lo", -5.0), s.get("hi", 5.0), s.get("step", 0.05)
    rows = []
    for n in n_list:
        model = ModelParams(**{**asdict(cfg.model), "n_spins": n,
                               "kappa": 0.0, "gamma": 0.0,
                               **({"fock_cutoff": s["fock_cutoff"]}
                                  if "fock_cutoff" in s else {})})
        try:
            res = sweep.sweep_constant(_grid(lo, hi, step), model, t_final,
                                       noisy=False, processes=cfg.processes)
            zeta_cv, cv_min, t_cv = sweep.find_zeta_min(res)
            log = ddpg.train(model, cfg.agent, horizon=t_final, noisy=False)
            traj, _ = ddpg.evaluate(log.best_control, model, noisy=False)
            tv_min, t_tv = traj.min_xi2, traj.t_min
            i_cv = int(np.argmin(np.abs(traj.times - t_cv)))
            rows.append((n, zeta_cv, cv_min, t_cv, tv_min, t_tv,
                         float(traj.xi2[i_cv])))
        except Exception as exc:
            rows.append((n, np.nan, np.nan, np.nan, np.nan, np.nan, np.nan))
            print(f"n-scan: N={n} failed: {exc}", flush=True)
    with open(os.path.join(outdir, "n_scan.csv"), "w") as f:
        f.write("n_spins,zeta_cv,min_xi2_cv,t_cv,min_xi2_tv,t_tv,xi2_tv_at_t_cv\n")
        for row in rows:
            f.write(",".join(repr(float(x)) if i else str(int(x))
                             for i, x in enumerate(row)) + "\n")
    summary = {"n_list": n_list, "rows": [list(map(float, r)) for r in rows]}
    _summary(os.path.join(outdir, "summary.json"), summary)
    return summary


def gamma_scan(cfg: ExperimentConfig, outdir: str) -> dict:
    """Controlled vs uncontrolled squeezing across dephasing rates.

    The control defaults to a previously learned one (CSV path); it is
    re-evaluated, not re-trained, at each gamma.
    """
    s = cfg.sections.get("gamma_scan", {})
    gammas = [float(g) for g in s.get("gammas", (0.0, 0.005, 0.01, 0.02))]
    record_every = s.get("record_every", 0.1)
    control = ControlSignal.from_csv(s["control_csv"]) if "control_csv" in s else None
    t_final = s.get("t_final", control.t_end if control is not None else 100.0)
    rows = []
    for g in gammas:
        model = ModelParams(**{**asdict(cfg.model), "gamma": g})
        noisy = model.kappa > 0 or model.gamma > 0
        tag = f"gamma_{g:g}"
        try:
            ctrl0 = ControlSignal.constant(0.0, t_final=t_final,
                                           dt_ctrl=control.dt_ctrl if control else 0.5)
            traj0 = (evolve(hilbert.initial_state(model), ctrl0, model, t_final,
                            record_every=record_every) if noisy else
                     evolve_unitary(hilbert.initial_state_vector(model.space), ctrl0,
                                    model.noiseless, t_final, record_every=record_every))
            traj0.to_csv(os.path.join(outdir, f"{tag}_nocontrol.csv"))
            row = {"gamma": g, "S_no": storage_integral(traj0, "lifetime").S,
                   "min_xi2_no": traj0.min_xi2}
            if control is not None:
                trajc = (evolve(hilbert.initial_state(model), control, model,
                                control.t_end, record_every=record_every) if noisy else
                         evolve_unitary(hilbert.initial_state_vector(model.space),
                                        control, model.noiseless, control.t_end,
                                        record_every=record_every))
                trajc.to_csv(os.path.join(outdir, f"{tag}_controlled.csv"))
                row.update({"S_tv": storage_integral(trajc, "lifetime").S,
                            "min_xi2_tv": trajc.min_xi2})
            rows.append(row)
        except Exception as exc:
            rows.append({"gamma": g, "error": str(exc)})
            print(f"gamma-scan: gamma={g} failed: {exc}", flush=True)
    summary = {"gammas": gammas, "rows": rows}
    _summary(os.path.join(outdir, "summary.json"), summary)
    return summary


def angle_track(cfg: ExperimentConfig, outdir: str) -> dict:
    """Optimal-angle evolution for the learned/combined controls plus their
    flat reference angles (phi_opt at each run's xi^2 minimum)."""
    s = cfg.sections.get("angle_track", {})
    record_every = s.get("record_every", 0.1)
    series = {}
    refs = {}
    jobs = []
    if "tv_noiseless_csv" in s:
        jobs.append(("tv_noiseless", s["tv_noiseless_csv"], False))
    if "tv_noisy_csv" in s:
        jobs.append(("tv_noisy", s["tv_noisy_csv"], True))
    if "combined_csv" in s:
        jobs.append(("combined", s["combined_csv"], True))
    if not jobs:
        raise ConfigError("angle-track needs at least one control path")
    times_ref = None
    for name, path, noisy in jobs:
        if not os.path.exists(path):
            raise ConfigError(f"control file not found: {path}")
        control = ControlSignal.from_csv(path)
        model = cfg.model if noisy else cfg.model.noiseless
        traj, _ = ddpg.evaluate(control, model, noisy, record_every=record_every)
        series[name] = (traj.times, traj.phi_opt)
        i_min = 1 + int(np.argmin(traj.xi2[1:]))
        refs[name] = float(traj.phi_opt[i_min])
        times_ref = traj.times
    with open(os.path.join(outdir, "angle_track.csv"), "w") as f:
        names = list(series)
        f.write("t," + ",".join(f"phi_opt_{n}" for n in names)
                + "," + ",".join(f"ref_{n}" for n in names) + "\n")
        length = max(len(series[n][0]) for n in names)
        for i in range(length):
            row = []
            t_val = None
            for n in names:
                ts, ph = series[n]
                if i < len(ts):
                    t_val = ts[i] if t_val is None else t_val
                    row.append(repr(float(ph[i])))
                else:
                    row.append("")
            f.write(f"{float(t_val)!r}," + ",".join(row) + ","
                    + ",".join(repr(refs[n]) for n in names) + "\n")
    summary = {"refs": refs, "series": {n: len(series[n][0]) for n in series}}
    _summary(os.path.join(outdir, "summary.json"), summary)
    return summary


_RUNNERS = {
    "sweep": _run_sweep,
    "train": _run_train,
    "combine": _run_combine,
    "validate-effective": _run_validate_effective,
    "trajectory": _run_trajectory,
    "n-scan": n_scan,
    "gamma-scan": gamma_scan,
    "angle-track": angle_track,
}


def run(config, out_root: str | None = None, force: bool = False) -> dict:
    """Execute one experiment config (path, dict, or manifest path).

    Returns the manifest dict.  If an identical run already exists under the
    output root it is reused; on failure partial outputs are removed.
    """
    cfg = _load_config(config)
    root = output_root(out_root or cfg.out_root)
    name = cfg.name or f"{cfg.kind}-{cfg.digest[:12]}"
    outdir = os.path.join(root, name)
    manifest_path = os.path.join(outdir, "manifest.json")

    if os.path.exists(manifest_path) and not force:
        with open(manifest_path) as f:
            manifest = json.load(f)
        if manifest.get("config_hash") == cfg.digest and all(
                os.path.exists(os.path.join(outdir, p))
                for p in manifest.get("outputs", [])):
            return manifest

    if os.path.exists(outdir):
        shutil.rmtree(outdir)
    os.makedirs(outdir)
    t0 = time.time()
    try:
        summary = _RUNNERS[cfg.kind](cfg, outdir)
    except Exception:
        shutil.rmtree(outdir, ignore_errors=True)
        raise
    outputs = sorted(p for p in os.listdir(outdir))
    manifest = {
        "schema": "spinsqueeze.manifest/1",
        "config_hash": cfg.digest,
        "resolved_config": cfg.resolved(),
        "version": __version__,
        "wall_time_s": time.time() - t0,
        "outputs": outputs,
        "outdir": outdir,
        "summary": summary,
    }
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True, default=float)
    return manifest
