import csv
import logging

import numpy as np
import pytest

from qlidar.errors import (
    ConfigError,
    HomodyneConditionError,
    NumericalError,
    ResolutionError,
    )
from qlidar.modes import (
    ModeParams,
    TimeGrid,
    default_grid,
    discretize_envelopes,
    )
from qlidar.receiver import (
    ReceiverSetup,
    covariance_matrix,
    export_csv,
    factor_covariance,
    invert_mode_covariance_first_order,
    lo_overlap,
    mean_vector,
    mode_basis_covariance,
    sample_traces,
    time_bin_stats,
    )
from qlidar.state import (
    StateSpec,
    coherent_probe,
    default_basis,
    standard_probe,
    )


PARAMS = ModeParams()
GRID = default_grid(PARAMS)


def setup(spec, **kwargs):
    return default_basis(spec, PARAMS), ReceiverSetup(GRID, **kwargs)


@pytest.mark.parametrize(
    "kwargs",
    [{},
     {"kappa": 0.4},
     {"delta_theta": 0.3},
     {"delta_omega": 0.05, "delta_theta": -0.2, "kappa": 0.8},
     ])
def test_covariance_symmetric_psd(kwargs):
    spec = standard_probe(10)
    stats = time_bin_stats(spec, *setup(spec, **kwargs))
    stats.check()
    assert (100,) == stats.mu.shape
    assert (100, 100) == stats.sigma.shape


def test_coherent_covariance_is_shot_noise():
    spec = coherent_probe(20)
    stats = time_bin_stats(spec, *setup(spec, delta_theta=0.4))
    np.testing.assert_array_equal(stats.sigma, np.eye(100) / (2 * GRID.dt))
    stats.check(floor=1 / (2 * GRID.dt))


def test_vacuum():
    spec = StateSpec()
    stats = time_bin_stats(spec, *setup(spec))
    np.testing.assert_array_equal(stats.mu, np.zeros(100))
    np.testing.assert_array_equal(stats.sigma, np.eye(100) / (2 * GRID.dt))


def test_loss_is_affine():
    spec = standard_probe(10)
    sigma = {kappa: covariance_matrix(spec, *setup(spec, kappa=kappa,
                                                   delta_theta=0.1))
             for kappa in (0.0, 0.3, 1.0)}
    np.testing.assert_allclose(sigma[0.3], 0.7 * sigma[0.0] + 0.3 * sigma[1.0],
                               rtol=1e-12, atol=1e-12)


def test_mean_scales_with_kappa():
    spec = standard_probe(10)
    full = mean_vector(spec, *setup(spec))
    lossy = mean_vector(spec, *setup(spec, kappa=0.25))
    np.testing.assert_allclose(lossy, 0.5 * full, rtol=1e-12, atol=1e-14)


def test_coherent_mean():
    spec = coherent_probe(4)
    mu = mean_vector(spec, *setup(spec))
    env = discretize_envelopes(default_basis(spec, PARAMS), GRID)[0]
    np.testing.assert_allclose(mu, 2 * np.sqrt(2) * env / np.sqrt(GRID.dt))


def test_mode_basis_matches_time_bins():
    spec = standard_probe(10)
    basis, rx = setup(spec)
    u = discretize_envelopes(basis, GRID)
    projected = u @ covariance_matrix(spec, basis, rx) @ u.T
    tilde = mode_basis_covariance(spec, basis, rx).sigma_tilde
    np.testing.assert_allclose(projected, tilde, atol=1e-6 * np.max(tilde))


def test_mode_basis_first_order_in_detuning():
    spec = standard_probe(10)
    basis, rx = setup(spec, delta_omega=2e-3)
    u = discretize_envelopes(basis, GRID)
    projected = u @ covariance_matrix(spec, basis, rx) @ u.T
    stats = mode_basis_covariance(spec, basis, rx)
    scale = np.max(stats.diagonal)
    assert np.max(np.abs(stats.off_diagonal)) > 1e-3 * scale
    np.testing.assert_allclose(projected, stats.sigma_tilde,
                               atol=1e-4 * scale)


def test_lo_overlap_matches_time_bins():
    spec = standard_probe(10)
    basis, rx = setup(spec, delta_omega=0.03, delta_theta=0.2)
    u = discretize_envelopes(basis, GRID)
    beat = np.exp(1j * (rx.delta_omega * GRID.times + rx.delta_theta))
    # corners of the truncated basis miss the coupling beyond it
    np.testing.assert_allclose(((u * beat) @ u.T)[:5, :5],
                               lo_overlap(basis, rx)[:5, :5], atol=1e-6)
    np.testing.assert_allclose(lo_overlap(basis, ReceiverSetup(GRID)),
                               np.eye(basis.size), atol=1e-14)


def test_first_order_inverse():
    spec = standard_probe(10)
    stats = mode_basis_covariance(spec, *setup(spec, delta_omega=1e-4))
    product = invert_mode_covariance_first_order(stats) @ stats.sigma_tilde
    np.testing.assert_allclose(product, np.eye(len(product)), atol=1e-3)


def test_homodyne_condition():
    spec = standard_probe(10)
    mode_basis_covariance(spec, *setup(spec, delta_omega=0.01))
    with pytest.raises(HomodyneConditionError):
        mode_basis_covariance(spec, *setup(spec, delta_omega=0.1))


def test_phase_step_guard():
    spec = coherent_probe(1)
    with pytest.raises(ResolutionError):
        mean_vector(spec, *setup(spec, delta_omega=3.0))


@pytest.mark.parametrize(
    "kwargs",
    [{"kappa": 1.5},
     {"kappa": -0.1},
     {"delta_omega": float("nan")},
     ])
def test_receiver_invalid(kwargs):
    with pytest.raises(ConfigError):
        ReceiverSetup(GRID, **kwargs)


def test_factor_covariance_jitter(caplog):
    with caplog.at_level(logging.WARNING, logger="qlidar"):
        chol = factor_covariance(np.ones((3, 3)))
    assert "jitter" in caplog.text
    np.testing.assert_allclose(chol @ chol.T, np.ones((3, 3)), atol=1e-9)


def test_factor_covariance_failure():
    with pytest.raises(NumericalError):
        factor_covariance(-np.eye(2))


def test_sample_traces_deterministic():
    spec = standard_probe(5)
    stats = time_bin_stats(spec, *setup(spec))
    first = sample_traces(stats, 2500, seed=7)
    again = sample_traces(stats, 2500, seed=7, jobs=3)
    np.testing.assert_array_equal(first, again)
    assert (2500, 100) == first.shape
    assert not np.array_equal(first, sample_traces(stats, 2500, seed=8))


def test_sample_traces_moments():
    spec = coherent_probe(30)
    stats = time_bin_stats(spec, *setup(spec))
    traces = sample_traces(stats, 4000, seed=1)
    np.testing.assert_allclose(traces.mean(axis=0), stats.mu, atol=0.15)
    np.testing.assert_allclose(traces.var(axis=0), 1 / (2 * GRID.dt),
                               rtol=0.15)


def test_sample_traces_needs_repetitions():
    spec = coherent_probe(1)
    with pytest.raises(ConfigError):
        sample_traces(time_bin_stats(spec, *setup(spec)), 0, seed=0)


def test_export_csv(tmp_path):
    grid = TimeGrid(t_start=-10.0, dt=0.25, n_bins=81)
    spec = standard_probe(3)
    stats = time_bin_stats(spec, default_basis(spec, PARAMS),
                           ReceiverSetup(grid))
    export_csv(stats, grid, tmp_path / "out")

    with open(tmp_path / "out" / "mean.csv") as f:
        rows = list(csv.reader(f))
    assert ["index", "t", "mu"] == rows[0]
    assert 82 == len(rows)
    assert float(rows[1][1]) == -10.0
    assert float(rows[41][2]) == stats.mu[40]

    with open(tmp_path / "out" / "cov.csv") as f:
        rows = list(csv.reader(f))
    assert ["i", "j", "value"] == rows[0]
    assert 1 + 81 * 82 // 2 == len(rows)
    i, j, value = rows[5]
    assert float(value) == stats.sigma[int(i), int(j)]
