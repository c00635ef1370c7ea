import math

import numpy as np
import pytest

from amsizer.gp import GpHyper, gp_fit, gp_predict, kernel
from amsizer.optimizer import expected_improvement


def _oracle_predict(xtr, ytr, xq, hyper):
    """Direct-inversion GP posterior, written independently of gp.py."""
    ls2 = hyper.lengthscale ** 2

    def k(a, b):
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(-1)
        return hyper.signal_var * np.exp(-0.5 * d2 / ls2)

    prior = ytr.mean()
    kmat = k(xtr, xtr) + hyper.noise_var * np.eye(len(xtr))
    kinv = np.linalg.inv(kmat)
    ks = k(xq, xtr)
    mean = prior + ks @ kinv @ (ytr - prior)
    var = hyper.signal_var - np.einsum("ij,jk,ik->i", ks, kinv, ks)
    return mean, np.maximum(var, 0.0)


def test_gp_matches_direct_inversion_oracle():
    rng = np.random.default_rng(42)
    hyper = GpHyper()
    for _ in range(20):
        d = int(rng.integers(1, 7))
        xtr = rng.random((5, d))
        ytr = rng.normal(size=5)
        xq = rng.random((10, d))
        model = gp_fit(xtr, ytr, hyper)
        mean, var = gp_predict(model, xq)
        mean_o, var_o = _oracle_predict(xtr, ytr, xq, hyper)
        assert np.max(np.abs(mean - mean_o)) < 1e-8
        assert np.max(np.abs(var - var_o)) < 1e-8


def test_single_point_interpolation():
    model = gp_fit(np.array([[0.5]]), np.array([3.0]))
    mean, var = gp_predict(model, np.array([[0.5]]))
    assert mean[0] == pytest.approx(3.0, abs=1e-6)
    assert var[0] == pytest.approx(1e-6, rel=0.01)


def test_far_field_reverts_to_prior():
    xtr = np.random.default_rng(1).random((5, 2)) * 0.1
    ytr = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
    model = gp_fit(xtr, ytr)
    # >= 10 lengthscales away from every training point
    mean, var = gp_predict(model, np.array([[3.0, 3.0]]))
    assert mean[0] == pytest.approx(ytr.mean(), abs=0.01)
    assert var[0] == pytest.approx(1.0, rel=0.01)


def test_sine_midpoint_rmse():
    xtr = np.linspace(0.0, 1.0, 5)[:, None]
    ytr = np.sin(2 * np.pi * xtr[:, 0])
    model = gp_fit(xtr, ytr)
    xq = (np.linspace(0.0, 1.0, 5)[:-1] + 0.125)[:, None]
    mean, _ = gp_predict(model, xq)
    truth = np.sin(2 * np.pi * xq[:, 0])
    rmse = float(np.sqrt(np.mean((mean - truth) ** 2)))
    assert rmse <= 0.1


def test_duplicate_points_survive_via_jitter():
    xtr = np.array([[0.3], [0.3], [0.3]])
    ytr = np.array([1.0, 1.0, 1.0])
    model = gp_fit(xtr, ytr, GpHyper(noise_var=0.0))
    mean, var = gp_predict(model, np.array([[0.3]]))
    assert mean[0] == pytest.approx(1.0, abs=1e-5)
    assert var[0] >= 0.0


def test_training_point_accuracy_many():
    rng = np.random.default_rng(7)
    xtr = rng.random((12, 3))
    ytr = rng.normal(size=12)
    model = gp_fit(xtr, ytr)
    mean, var = gp_predict(model, xtr)
    # noise 1e-6 allows small deviations from exact interpolation
    assert np.max(np.abs(mean - ytr)) < 1e-3
    assert np.all(var >= 0.0)


def test_kernel_basics():
    h = GpHyper()
    k = kernel(np.array([[0.0]]), np.array([[0.0]]), h)
    assert k[0, 0] == pytest.approx(1.0)
    k2 = kernel(np.array([[0.0]]), np.array([[0.2]]), h)
    assert k2[0, 0] == pytest.approx(math.exp(-0.5))


def test_gp_fit_validates():
    import amsizer.gp as gp

    with pytest.raises(gp.GpError):
        gp_fit(np.empty((0, 2)), np.array([]))
    with pytest.raises(gp.GpError):
        gp_fit(np.array([[0.0]]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        GpHyper(lengthscale=0.0)


# ---------------------------------------------------------------------------
# expected improvement

def test_ei_degenerate_zero():
    assert expected_improvement(np.array([1.0]), np.array([0.0]), 1.0)[0] == 0.0
    assert expected_improvement(np.array([0.5]), np.array([0.0]), 1.0)[0] == 0.0


def test_ei_sigma_zero_positive_gain():
    assert expected_improvement(np.array([2.0]), np.array([0.0]), 1.0)[0] == pytest.approx(1.0)


def test_ei_at_the_mean():
    ei = expected_improvement(np.array([1.0]), np.array([1.0]), 1.0)[0]
    assert ei == pytest.approx(0.3989, abs=1e-4)


def test_ei_monotone_in_sigma():
    sigmas = np.linspace(0.01, 3.0, 50)
    ei = expected_improvement(
        np.full(50, 0.5), sigmas ** 2, 1.0
    )
    assert np.all(np.diff(ei) > 0)
    assert np.all(ei >= 0)
