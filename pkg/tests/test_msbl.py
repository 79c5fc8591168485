import numpy as np
import pytest

from mpcsbl.bench import nmse
from mpcsbl.datagen import GenSpec, gen_instance
from mpcsbl.model import Hyperparameters, ProblemInstance
from mpcsbl.msbl import MsblConfig, msbl_posterior, run_msbl
from mpcsbl.solver import posterior_fast


def test_zero_data():
    rng = np.random.default_rng(0)
    inst = ProblemInstance(phi=rng.standard_normal((6, 12)), y_mat=np.zeros((6, 2)))
    report = run_msbl(inst)
    assert np.all(report.x_hat == 0.0)


@pytest.mark.parametrize("seed", range(4))
def test_posterior_matches_uncoupled_solver(seed):
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal((5, 9))
    y = rng.standard_normal((5, 3))
    gamma = rng.uniform(0.1, 3.0, 9)
    mean, diag_cov, fit_trace = msbl_posterior(phi, y, gamma, 4.0)
    stats = posterior_fast(
        ProblemInstance(phi=phi, y_mat=y),
        Hyperparameters(alpha=1.0 / gamma, beta=0.0, b2=np.eye(3), lam=4.0))
    np.testing.assert_allclose(mean, stats.mean, atol=1e-8)
    for j in range(3):
        np.testing.assert_allclose(diag_cov, stats.row_cov[:, j, j], atol=1e-8)
    assert 3 * fit_trace == pytest.approx(stats.residual_trace, abs=1e-8)


def test_recovers_scattered_rows():
    errs = []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        phi = rng.standard_normal((25, 50))
        x = np.zeros((50, 3))
        x[rng.choice(50, size=8, replace=False)] = rng.standard_normal((8, 3))
        inst = ProblemInstance(phi=phi, y_mat=phi @ x, truth=x)
        report = run_msbl(inst, MsblConfig(noise_learning=False, lambda_init=1e8))
        errs.append(nmse(report.x_hat, x))
    assert np.median(errs) < 1e-3


def test_pruned_rows_are_exactly_zero():
    spec = GenSpec(m=20, n=40, l=2, k=6, num_blocks=3, seed=3)
    inst, support, *_ = gen_instance(spec)
    report = run_msbl(inst, MsblConfig(noise_learning=False, lambda_init=1e8,
                                       gamma_floor=1e-6))
    pruned = report.hyper.alpha >= 1e12
    assert pruned.any()
    assert np.all(report.x_hat[pruned] == 0.0)
    assert not pruned[support].any()


def _scalar_sbl(phi, y, lam, iters):
    gamma = np.ones(phi.shape[1])
    for _ in range(iters):
        cov = np.linalg.inv(lam * phi.T @ phi + np.diag(1.0 / gamma))
        mu = lam * cov @ phi.T @ y
        gamma = mu ** 2 + np.diag(cov)
    cov = np.linalg.inv(lam * phi.T @ phi + np.diag(1.0 / gamma))
    return lam * cov @ phi.T @ y, gamma


def test_single_vector_matches_scalar_sbl():
    rng = np.random.default_rng(5)
    phi = rng.standard_normal((8, 14))
    y = phi[:, [2, 9]] @ np.array([1.5, -0.8]) + 0.1 * rng.standard_normal(8)
    report = run_msbl(ProblemInstance(phi=phi, y_mat=y),
                      MsblConfig(max_iter=10, tol=1e-300, noise_learning=False,
                                 lambda_init=20.0))
    mu, gamma = _scalar_sbl(phi, y, 20.0, 10)
    np.testing.assert_allclose(report.x_hat[:, 0], mu, rtol=1e-7, atol=1e-12)
    np.testing.assert_allclose(1.0 / report.hyper.alpha, gamma, rtol=1e-7)


def test_noise_learning_tracks_true_level():
    spec = GenSpec(m=60, n=80, l=5, k=8, num_blocks=4, snr_db=15.0, seed=2)
    inst, _, _, sigma2 = gen_instance(spec)
    report = run_msbl(inst)
    assert 0.3 < report.hyper.lam * sigma2 < 3.0
