import numpy as np
import pytest

from spinsqueeze import sweep
from spinsqueeze.dynamics import ModelParams


def small_params(**kw):
    defaults = dict(n_spins=2, fock_cutoff=3)
    defaults.update(kw)
    return ModelParams(**defaults)


def test_sweep_determinism_with_duplicates():
    p = small_params(kappa=0.0, gamma=0.0)
    res = sweep.sweep_constant([0.4, 0.4, -0.4], p, 4.0, noisy=False, processes=1)
    assert res.min_xi2[0] == res.min_xi2[1]
    assert res.t_min[0] == res.t_min[1]


def test_sweep_pool_matches_serial():
    p = small_params(kappa=0.0, gamma=0.0)
    grid = [-0.5, 0.0, 0.5]
    serial = sweep.sweep_constant(grid, p, 4.0, noisy=False, processes=1)
    pooled = sweep.sweep_constant(grid, p, 4.0, noisy=False, processes=2)
    assert np.array_equal(serial.min_xi2, pooled.min_xi2)
    assert np.array_equal(serial.t_min, pooled.t_min)


def test_grid_refinement_monotonicity():
    p = small_params(kappa=0.0, gamma=0.0)
    coarse = sweep.sweep_constant(np.linspace(-1, 1, 5), p, 4.0, noisy=False,
                                  processes=1)
    fine = sweep.sweep_constant(np.linspace(-1, 1, 9), p, 4.0, noisy=False,
                                processes=1)
    assert fine.best[1] <= coarse.best[1] + 1e-12


def test_min_xi2_bounds_and_noise_ordering():
    p = small_params()
    noisy = sweep.sweep_constant([0.0, 0.5], p, 4.0, noisy=True, processes=1)
    clean = sweep.sweep_constant([0.0, 0.5], p, 4.0, noisy=False, processes=1)
    assert np.all(noisy.min_xi2 >= 0.0)
    assert np.all(clean.min_xi2 >= 0.0)
    assert np.all(noisy.min_xi2 >= clean.min_xi2 - 1e-6)


def test_find_zeta_min_single_and_ties():
    res = sweep.SweepResult(zeta_grid=np.array([0.7]), min_xi2=np.array([0.5]),
                            t_min=np.array([2.0]), noisy=False)
    assert sweep.find_zeta_min(res) == (0.7, 0.5, 2.0)
    tied = sweep.SweepResult(zeta_grid=np.array([-0.4, 0.2, 0.4]),
                             min_xi2=np.array([0.3, 0.3, 0.3]),
                             t_min=np.array([1.0, 2.0, 3.0]), noisy=False)
    assert sweep.find_zeta_min(tied)[0] == 0.2
    with pytest.raises(ValueError):
        sweep.sweep_constant([], small_params(), 1.0, noisy=False)


def test_failure_propagates_with_offending_zeta():
    p = small_params()
    with pytest.raises(RuntimeError, match="zeta=0.5"):
        # horizon not a multiple of the control grid -> evolve() rejects it
        sweep.sweep_constant([0.5], p, 4.3, noisy=True, processes=1)


def test_sweep_csv(tmp_path):
    p = small_params(kappa=0.0, gamma=0.0)
    res = sweep.sweep_constant([0.0, 0.3], p, 2.0, noisy=False, processes=1)
    path = tmp_path / "sweep.csv"
    res.to_csv(path)
    rows = path.read_text().splitlines()
    assert rows[0] == "zeta,min_xi2,min_xi2_db,t_min"
    assert len(rows) == 3
    loaded = np.loadtxt(path, delimiter=",", skiprows=1)
    assert np.allclose(loaded[:, 0], res.zeta_grid)
    assert np.allclose(loaded[:, 2], 10 * np.log10(res.min_xi2))
