import numpy as np
import pytest

from spinsqueeze import combined, ddpg, sweep
from spinsqueeze.dynamics import ControlSignal, ModelParams


def small_params(**kw):
    defaults = dict(n_spins=2, fock_cutoff=3)
    defaults.update(kw)
    return ModelParams(**defaults)


def make_tv(horizon=4.0, dt_ctrl=0.5, seed=0, lo=-0.5, hi=0.5):
    rng = np.random.default_rng(seed)
    n = int(round(horizon / dt_ctrl))
    return ControlSignal(0.0, dt_ctrl, tuple(rng.uniform(lo, hi, n)))


def test_choose_regime():
    assert combined.choose_regime(-0.25, 0.5) == (-0.75, 0.25)
    lo, hi = combined.choose_regime(-0.25)
    assert lo < 0.09 < hi  # default width covers the small positive optima
    with pytest.raises(ValueError):
        combined.choose_regime(0.0, 0.0)


def test_stitch_degenerate_prefix_is_full_tv():
    p = small_params()
    tv = make_tv()
    st = combined.stitch_control(0.3, tv, p, t_min=0.0)
    assert st.assembled == tv
    assert st.t_min == 0.0


def test_stitch_is_bin_exact():
    p = small_params()
    tv = make_tv(horizon=4.0, dt_ctrl=0.5)
    st = combined.stitch_control(-0.2, tv, p, t_min=1.72)
    # 1.72 snaps down to 1.5 -> three constant bins
    assert st.t_min == 1.5
    assert st.assembled.values[:3] == (-0.2, -0.2, -0.2)
    assert st.assembled.values[3:] == tv.values[3:]
    assert st.tail.t0 == 1.5
    assert st.assembled.n_bins == tv.n_bins


def test_stitch_finds_interior_minimum():
    # strong dephasing kills the squeezing early, leaving an interior minimum
    p = small_params(kappa=0.05, gamma=0.1)
    tv = make_tv(horizon=6.0, dt_ctrl=0.5)
    st = combined.stitch_control(0.5, tv, p)
    assert 0.0 <= st.t_min < 6.0
    k = int(round(st.t_min / 0.5))
    assert st.assembled.values[:k] == (0.5,) * k
    assert st.assembled.values[k:] == tv.values[k:]


def test_stitch_errors_without_interior_minimum():
    p = small_params(kappa=0.0, gamma=0.0)
    tv = make_tv(horizon=1.0, dt_ctrl=0.5)
    # far too short for the squeezing minimum: xi^2 still decreasing at the end
    with pytest.raises(ValueError, match="zeta_c=0.5"):
        combined.stitch_control(0.5, tv, p)


def test_prefix_consistency_bit_exact():
    p = small_params()
    tv = make_tv(horizon=4.0, dt_ctrl=0.5, seed=3)
    st = combined.stitch_control(0.4, tv, p, t_min=2.0)
    traj_st, _ = ddpg.evaluate(st.assembled, p, noisy=True)
    traj_const = sweep.constant_trajectory(0.4, p, 4.0, noisy=True)
    n_shared = np.sum(traj_st.times <= 2.0 + 1e-12)
    assert np.array_equal(traj_st.xi2[:n_shared], traj_const.xi2[:n_shared])
    assert np.array_equal(traj_st.times[:n_shared], traj_const.times[:n_shared])


def test_optimize_stitched_single_point_and_audit():
    p = small_params()
    tv = make_tv(horizon=4.0, dt_ctrl=0.5, seed=4)
    res = combined.optimize_stitched((0.3, 0.3), 0.1, tv, p,
                                     t_min_by_zeta={0.3: 1.5}, processes=1)
    assert res.zeta_opt == 0.3
    assert set(res.S_by_zeta) == {0.3}
    # audit: the recorded S is re-derivable by an independent evaluate call
    st = combined.stitch_control(0.3, tv, p, t_min=1.5)
    _, storage = ddpg.evaluate(st.assembled, p, noisy=True)
    assert res.S_by_zeta[0.3] == pytest.approx(storage.S, abs=1e-12)


def test_optimize_stitched_skips_failures():
    p = small_params()
    tv = make_tv(horizon=4.0, dt_ctrl=0.5, seed=5)
    # zeta grid point with a forced bad t_min hint is fine; instead force one
    # failing point by restricting the horizon via a barely-too-short t_min map
    res = combined.optimize_stitched((0.2, 0.4), 0.2, tv, p,
                                     t_min_by_zeta={0.2: 1.0, 0.4: 2.0},
                                     processes=1)
    assert set(res.S_by_zeta) == {0.2, 0.4}
    assert res.skipped == []
    assert res.zeta_opt in (0.2, 0.4)


def test_learn_tail_noop_with_zero_episodes():
    p = small_params()
    tv = make_tv(horizon=4.0, dt_ctrl=0.5, seed=6)
    cfg = ddpg.AgentConfig(episodes=0)
    control, st, log = combined.learn_tail(0.3, p, cfg, tv, t_min=1.5)
    assert log is None
    assert control == st.assembled


def test_learn_tail_trains_on_the_tail_only():
    p = small_params()
    tv = make_tv(horizon=3.0, dt_ctrl=0.5, seed=7)
    cfg = ddpg.AgentConfig(episodes=4, warmup_episodes=2, batch_size=4, seed=1,
                           action_low=-0.5, action_high=0.5)
    control, st, log = combined.learn_tail(0.2, p, cfg, tv, t_min=1.0)
    assert control.n_bins == tv.n_bins
    assert control.values[:2] == (0.2, 0.2)
    assert log.t_start == 1.0
    assert log.config.steps_per_episode == 4  # (3.0 - 1.0) / 0.5


def test_combined_pipeline_small_end_to_end():
    p = small_params()
    cfg = ddpg.AgentConfig(episodes=3, warmup_episodes=3, batch_size=8, seed=2,
                           action_low=-0.5, action_high=0.5, steps_per_episode=8)
    pipe = combined.PipelineConfig(sweep_lo=-0.4, sweep_hi=0.4, sweep_step=0.2,
                                   horizon=4.0, dt_ctrl=0.5,
                                   regime_half_width=0.2, regime_step=0.2,
                                   processes=1)
    res = combined.combined_pipeline(p, cfg, pipe)
    assert res.final_control.n_bins == 8
    assert np.isfinite(res.S_c)
    assert res.regime[0] <= res.zeta_opt <= res.regime[1]
    # determinism: the same seeds give an identical result
    res2 = combined.combined_pipeline(p, cfg, pipe)
    assert res2.zeta_opt == res.zeta_opt
    assert res2.final_control == res.final_control
    assert res2.S_c == pytest.approx(res.S_c, abs=0.0)


def test_combined_pipeline_noiseless_degrades_gracefully():
    p = small_params(kappa=0.0, gamma=0.0)
    cfg = ddpg.AgentConfig(episodes=2, warmup_episodes=2, batch_size=8, seed=3,
                           action_low=-0.5, action_high=0.5)
    pipe = combined.PipelineConfig(sweep_lo=-0.2, sweep_hi=0.2, sweep_step=0.2,
                                   horizon=4.0, dt_ctrl=0.5,
                                   regime_half_width=0.2, regime_step=0.2,
                                   processes=1)
    res = combined.combined_pipeline(p, cfg, pipe)
    assert np.isfinite(res.S_c)
