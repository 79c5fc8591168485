"""Randomised consistency checks behind ``mpcsbl selfcheck``.

Each check compares a production code path against a slower independent
computation on small random problems and returns ``(name, passed, detail)``.
"""

import numpy as np

from .model import Hyperparameters, ProblemInstance, build_row_precision
from .solver import (
    _b2_stationary,
    posterior_dense,
    posterior_fast,
    row_second_moments,
    update_alpha,
    update_lambda,
    weighted_traces,
)


def random_spd(rng, l):
    a = rng.standard_normal((l, l))
    return a @ a.T + 0.1 * np.eye(l)


def random_problem(rng, max_n=12, max_m=8, max_l=4, beta=None):
    n = int(rng.integers(2, max_n + 1))
    m = int(rng.integers(1, max_m + 1))
    l = int(rng.integers(1, max_l + 1))
    inst = ProblemInstance(phi=rng.standard_normal((m, n)),
                           y_mat=rng.standard_normal((m, l)))
    if beta is None:
        beta = float(rng.choice([0.0, 0.5, 1.0]))
    hyper = Hyperparameters(
        alpha=np.exp(rng.uniform(np.log(0.1), np.log(10.0), n)),
        beta=beta, b2=random_spd(rng, l),
        lam=float(np.exp(rng.uniform(np.log(0.1), np.log(100.0)))))
    return inst, hyper


def fast_dense_gap(inst, hyper):
    a = posterior_fast(inst, hyper)
    b = posterior_dense(inst, hyper)
    return max(np.abs(a.mean - b.mean).max(),
               np.abs(a.row_cov - b.row_cov).max(),
               abs(a.residual_trace - b.residual_trace))


def check_fast_vs_dense(rng, count=200, tol=1e-8):
    worst = 0.0
    for _ in range(count):
        worst = max(worst, fast_dense_gap(*random_problem(rng)))
    return "fast E-step == dense E-step", bool(worst <= tol), f"max abs gap {worst:.2e}"


def expected_log_prior(b2, alpha, beta, second_moment):
    """``L/2 log|B1| + N/2 log|B2| - tr(kron(B2, B1) <x x^T>)/2`` on the full
    column-stacked second moment."""
    n = len(alpha)
    l = b2.shape[0]
    b1 = np.diag(build_row_precision(alpha, beta))
    _, logdet_b2 = np.linalg.slogdet(b2)
    return (0.5 * l * np.sum(np.log(np.diag(b1))) + 0.5 * n * logdet_b2
            - 0.5 * np.trace(np.kron(b2, b1) @ second_moment))


def b2_gradient(b2, alpha, beta, second_moment, h=1e-6):
    """Central differences of :func:`expected_log_prior` over the free
    entries of a symmetric ``b2``."""
    l = b2.shape[0]
    grads = []
    for a in range(l):
        for c in range(a, l):
            e = np.zeros((l, l))
            e[a, c] = e[c, a] = 1.0
            up = expected_log_prior(b2 + h * e, alpha, beta, second_moment)
            dn = expected_log_prior(b2 - h * e, alpha, beta, second_moment)
            grads.append((up - dn) / (2 * h))
    return np.array(grads)


def check_b2_stationarity(rng, count=50, tol=1e-5):
    worst = 0.0
    for _ in range(count):
        inst, hyper = random_problem(rng)
        stats = posterior_dense(inst, hyper)
        mu = stats.mean.ravel(order="F")
        # full NL x NL second moment from the dense reference
        n, l = inst.n, inst.l
        b = build_row_precision(hyper.alpha, hyper.beta)
        prec = (hyper.lam * np.kron(np.eye(l), inst.phi.T @ inst.phi)
                + np.kron(hyper.b2, np.diag(b)))
        second = np.outer(mu, mu) + np.linalg.inv(prec)
        b2 = _b2_stationary(row_second_moments(stats), hyper.alpha,
                            hyper.beta, jitter=0.0)
        g = b2_gradient(b2, hyper.alpha, hyper.beta, second)
        worst = max(worst, np.abs(g).max())
    return "B2 update is stationary", bool(worst < tol), f"max |grad| {worst:.2e}"


def check_alpha_identity(rng, count=50, tol=1e-12):
    worst = 0.0
    for _ in range(count):
        inst, hyper = random_problem(rng)
        omegas = row_second_moments(posterior_fast(inst, hyper))
        phi_w = weighted_traces(omegas, hyper.b2, hyper.beta)
        alpha = update_alpha(omegas, hyper.b2, hyper.beta, inst.l, np.inf)
        gap = np.abs(alpha * phi_w / (1.5 * inst.l) - 1.0).max()
        worst = max(worst, gap)
    return "alpha * phi == 3L/2", bool(worst <= tol), f"max rel gap {worst:.2e}"


def check_lambda_maximizes(rng, count=50):
    ok = True
    for _ in range(count):
        inst, hyper = random_problem(rng)
        stats = posterior_dense(inst, hyper)
        lam = update_lambda(inst, stats, np.inf)
        resid = inst.y_mat - inst.phi @ stats.mean
        expected = float(np.sum(resid ** 2)) + stats.residual_trace

        def q(x):
            return 0.5 * inst.m * inst.l * np.log(x) - 0.5 * x * expected

        ok &= q(lam) > q(lam * (1 + 1e-3)) and q(lam) > q(lam * (1 - 1e-3))
    return "lambda update maximises Q", bool(ok), ""


def run_all(seed=0, count=200):
    rng = np.random.default_rng(seed)
    return [
        check_fast_vs_dense(rng, count),
        check_b2_stationarity(rng, max(count // 4, 1)),
        check_alpha_identity(rng, max(count // 4, 1)),
        check_lambda_maximizes(rng, max(count // 4, 1)),
    ]
