import cmath
import math

import numpy as np
import pytest

from qlidar.benchmarks import heterodyne_receiver
from qlidar.errors import ConfigError
from qlidar.fim import (
    InfoMatrix,
    TargetModel,
    analytic_homodyne_fim,
    crb,
    default_steps,
    displacement_dominant_crb,
    fit_trace,
    gaussian_fim,
    mle_verify,
    numeric_fim,
    squeezing_gain,
    )
from qlidar.modes import ModeParams, default_grid
from qlidar.receiver import ReceiverSetup
from qlidar.state import (
    STANDARD_VARIANTS,
    ModeOccupation,
    StateSpec,
    coherent_probe,
    default_basis,
    resource_budget,
    squeezing_for_photons,
    standard_probe,
    )


PARAMS = ModeParams()
GRID = default_grid(PARAMS)


def homodyne(spec, params=PARAMS, **kwargs):
    basis = default_basis(spec, params)
    return analytic_homodyne_fim(
        spec, basis, ReceiverSetup(default_grid(params), **kwargs))


def heterodyne_coherent(n_photons):
    return TargetModel.at_truth(coherent_probe(n_photons), PARAMS,
                                heterodyne_receiver())


@pytest.mark.parametrize("n_photons", [1e3, 1e4])
def test_heisenberg_scaling(n_photons):
    spec = standard_probe(n_photons)
    budget = resource_budget(spec, default_basis(spec, PARAMS))
    bound = crb(homodyne(spec))
    assert "ok" == bound.status
    ratio = bound.var_tau * budget.delta_omega ** 2 * n_photons ** 2
    assert 0.98 <= ratio <= 1.02


def test_heisenberg_ratio_at_hundred_photons():
    spec = standard_probe(100)
    budget = resource_budget(spec, default_basis(spec, PARAMS))
    ratio = crb(homodyne(spec)).var_tau * budget.delta_omega ** 2 * 1e4
    assert ratio == pytest.approx(0.962, abs=0.01)


def test_theta_decouples():
    fim = homodyne(standard_probe(100))
    scale = np.max(np.abs(fim.entries))
    assert abs(fim["tau", "theta"]) < 1e-9 * scale
    assert abs(fim["omega", "theta"]) < 1e-9 * scale
    fim.validate()


def test_sigma_scaling():
    spec = standard_probe(100)
    unit = crb(homodyne(spec))
    wide = crb(homodyne(spec, ModeParams(sigma=2.0)))
    assert wide.var_tau == pytest.approx(unit.var_tau / 4, rel=1e-9)
    assert wide.var_omega == pytest.approx(unit.var_omega * 4, rel=1e-9)


@pytest.mark.parametrize(
    ["spec", "kwargs"],
    [(standard_probe(100), {}),
     (standard_probe(100), {"kappa": 0.6}),
     (standard_probe(30, f_sq=0.5), {}),
     (standard_probe(60, variant="mirrored"), {"delta_theta": 0.02}),
     (standard_probe(50), {"delta_omega": 0.02}),
     (standard_probe(50), {"delta_omega": -0.01, "delta_theta": 0.01}),
     (standard_probe(20), {"delta_omega": 0.03, "kappa": 0.7}),
     ])
def test_analytic_matches_time_bins(spec, kwargs):
    basis = default_basis(spec, PARAMS)
    rx = ReceiverSetup(GRID, **kwargs)
    analytic = crb(analytic_homodyne_fim(spec, basis, rx))
    numeric = crb(numeric_fim(TargetModel(spec, basis, rx)))
    assert numeric.var_tau == pytest.approx(analytic.var_tau, rel=5e-3)
    assert numeric.var_omega == pytest.approx(analytic.var_omega, rel=5e-3)


def test_analytic_cross_terms_under_detuning():
    spec = StateSpec((ModeOccupation(0, 0j, 1.0, 0.0),
                      ModeOccupation(1, 0j, 1.0, -math.pi / 2)))
    basis = default_basis(spec, PARAMS)
    rx = ReceiverSetup(GRID, delta_omega=0.01)
    analytic = analytic_homodyne_fim(spec, basis, rx).entries
    numeric = numeric_fim(TargetModel(spec, basis, rx)).entries
    np.testing.assert_allclose(analytic, numeric,
                               atol=5e-3 * np.max(np.abs(numeric)))
    # detuning couples the carrier phase to the frequency
    assert 0.0 != analytic[1, 2]


def test_heterodyne_coherent():
    bound = crb(numeric_fim(heterodyne_coherent(100), check_steps=False))
    # Delta_T = 1, Delta_omega = 1/2
    assert bound.var_tau == pytest.approx(1 / (2 * 0.25 * 100), rel=0.01)
    assert bound.var_omega == pytest.approx(1 / (2 * 100), rel=0.01)


def test_vacuum_has_no_information():
    fim = homodyne(StateSpec())
    np.testing.assert_array_equal(fim.entries, np.zeros((3, 3)))
    bound = crb(fim)
    assert "singular" == bound.status
    assert ("tau", "omega", "theta") == bound.flagged
    assert math.isinf(bound.var_tau)


@pytest.mark.parametrize("sigma", [1.0, 1.5])
def test_coherent_mode_one(sigma):
    spec = coherent_probe(40, n=1)
    fim = homodyne(spec, ModeParams(sigma=sigma))
    assert fim["tau", "tau"] == pytest.approx(3 * sigma ** 2 * 40)
    bound = crb(fim)
    assert "singular" == bound.status
    assert "omega" in bound.flagged
    assert bound.var_tau == pytest.approx(1 / (3 * sigma ** 2 * 40))
    assert math.isinf(bound.var_omega)


@pytest.mark.parametrize("kappa", [0.5, 1.0])
def test_displacement_dominant(kappa):
    r = squeezing_for_photons(10)
    angles = STANDARD_VARIANTS["standard"]
    alpha = 1e3 * cmath.exp(-0.25j * math.pi)
    spec = StateSpec(tuple(
        ModeOccupation(n, alpha if n == 1 else 0j, r, phi)
        for n, phi in enumerate(angles)))
    budget = resource_budget(spec, default_basis(spec, PARAMS))
    bound = crb(homodyne(spec, kappa=kappa))
    approx = displacement_dominant_crb(budget.n_coh, budget.n_sq, kappa,
                                       budget.delta_t, budget.delta_omega)
    assert bound.var_tau == pytest.approx(approx.var_tau, rel=0.05)
    assert bound.var_omega == pytest.approx(approx.var_omega, rel=0.05)


def test_displacement_dominant_without_light():
    assert "singular" == displacement_dominant_crb(0, 1.0, 1.0, 1, 1).status
    assert math.isinf(displacement_dominant_crb(10, 1.0, 0, 1, 1).var_tau)


def test_squeezing_gain():
    assert 1.0 == squeezing_gain(0)
    # three modes of ten photons each
    r = squeezing_for_photons(10)
    assert squeezing_gain(30) == pytest.approx(math.exp(2 * r))


def test_displacement_dominant_without_squeezing():
    bound = displacement_dominant_crb(100, 0, 1.0, 2.0, 0.5)
    assert bound.var_tau == pytest.approx(9 / (16 * 0.25 * 100))
    assert bound.var_omega == pytest.approx(9 / (16 * 4 * 100))


def test_crb_full_inverse():
    f = np.array([[4.0, 1.0, 0.0],
                  [1.0, 2.0, 0.0],
                  [0.0, 0.0, 1.0]])
    bound = crb(InfoMatrix(f))
    assert "ok" == bound.status
    assert bound.var_tau == pytest.approx(2 / 7)
    assert bound.var_omega == pytest.approx(4 / 7)
    assert bound.product == pytest.approx(8 / 49)


def test_crb_singular_and_pseudo():
    fim = InfoMatrix(np.diag([2.0, 0.0, 1.0]))
    bound = crb(fim)
    assert "singular" == bound.status
    assert ("omega",) == bound.flagged
    assert bound.var_tau == pytest.approx(0.5)
    assert math.isinf(bound.var_omega)
    pseudo = fim.crb(pseudo=True)
    assert "pseudo" == pseudo.status
    assert pseudo.var_omega == pytest.approx(0.0)


def test_info_matrix_shape():
    with pytest.raises(ConfigError):
        InfoMatrix(np.eye(2))
    fim = InfoMatrix(np.eye(3))
    assert {"labels": ["tau", "omega", "theta"],
            "entries": np.eye(3).tolist(),
            "step_unstable": False} == fim.to_dict()


def test_gaussian_fim():
    dmu = np.array([[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]])
    dsigma = np.zeros((3, 2, 2))
    dsigma[2] = np.eye(2)
    f = gaussian_fim(dmu, dsigma, 2 * np.eye(2))
    np.testing.assert_allclose(f, np.diag([0.5, 2.0, 0.25]))


def test_default_steps():
    steps = default_steps(ModeParams(tau=3.0, sigma=2.0))
    np.testing.assert_allclose(steps, [3e-4, 2e-4, 1e-4])


def test_numeric_fim_invalid_steps():
    spec = coherent_probe(10)
    model = TargetModel.at_truth(spec, PARAMS, ReceiverSetup(GRID))
    with pytest.raises(ConfigError):
        numeric_fim(model, steps=[1e-4, 0.0, 1e-4])


def test_model_detunes_with_omega():
    spec = coherent_probe(10)
    model = TargetModel.at_truth(spec, PARAMS, ReceiverSetup(GRID))
    basis, rx = model.setup_at([0.1, 5.2, 0.3])
    assert 0.1 == basis.params.tau
    assert rx.delta_omega == pytest.approx(-0.2)
    assert rx.delta_theta == pytest.approx(-0.3)
    np.testing.assert_array_equal(model.truth, [0.0, 5.0, 0.0])


def test_fit_noiseless_trace():
    model = heterodyne_coherent(50)
    fim = numeric_fim(model, check_steps=False)
    scale = np.sqrt(np.diag(fim.inverse()))
    trace = model.mean(model.truth)
    fit = fit_trace(model, trace, model.truth + 0.3 * scale, scale)
    assert fit is not None
    np.testing.assert_allclose(fit, model.truth, atol=1e-3 * scale.min())


def test_fit_searches_start_grid():
    model = heterodyne_coherent(50)
    fim = numeric_fim(model, check_steps=False)
    scale = np.sqrt(np.diag(fim.inverse()))
    target = model.truth + scale * np.array([4.0, -4.0, 0.0])
    trace = model.mean(target)
    fit = fit_trace(model, trace, model.truth, scale)
    assert fit is not None
    np.testing.assert_allclose(fit, target, atol=1e-3 * scale.min())


def test_mle_pooled_repetitions():
    model = heterodyne_coherent(50)
    single = crb(numeric_fim(model, check_steps=False))
    report = mle_verify(model, 200, seed=3, jobs=2, repetitions=4)
    assert (200, 4, 0) == (report.trials, report.repetitions,
                           report.dropped)
    assert report.crb_tau == pytest.approx(single.var_tau / 4)
    assert 0.6 <= report.ratio_tau <= 1.6
    assert 0.6 <= report.ratio_omega <= 1.6


def test_mle_reaches_bound():
    report = mle_verify(heterodyne_coherent(50), 200, seed=3, jobs=2)
    assert 200 == report.trials
    assert 0 == report.dropped
    assert 0.6 <= report.ratio_tau <= 1.6
    assert 0.6 <= report.ratio_omega <= 1.6


def test_mle_deterministic():
    model = heterodyne_coherent(50)
    assert (mle_verify(model, 100, seed=11)
            == mle_verify(model, 100, seed=11, jobs=3))


def test_mle_needs_trials():
    with pytest.raises(ConfigError):
        mle_verify(heterodyne_coherent(50), 99, seed=0)
    with pytest.raises(ConfigError):
        mle_verify(heterodyne_coherent(50), 100, seed=0, repetitions=0)
