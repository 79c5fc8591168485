"""Pattern-coupled sparse Bayesian learning for MMV problems (EM solver).

The E-step has two interchangeable paths:

* :func:`posterior_dense` builds the full ``NL x NL`` posterior precision and
  inverts it.  It is the reference used for testing and small problems.
* :func:`posterior_fast` diagonalises ``B2`` so the posterior splits into ``L``
  independent ``N``-dimensional problems, one per eigenvector of ``B2``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy import linalg as sla

from .model import (
    ALPHA_MIN,
    Hyperparameters,
    NumericalError,
    PosteriorStats,
    ProblemInstance,
    SolverConfig,
    build_row_precision,
    coupled_sum,
)

log = logging.getLogger(__name__)

TraceEntry = Tuple[float, float, float, float]


@dataclass
class SolverReport:
    """Result of one solver run.

    ``trace`` holds one ``(rel_change, lam, alpha_min, alpha_max)`` tuple per
    iteration.  For the MSBL baseline the alpha columns report ``1/gamma``
    over the rows that are still active.
    """

    x_hat: np.ndarray
    hyper: Hyperparameters
    iterations: int
    converged: bool
    trace: List[TraceEntry] = field(default_factory=list)


def _cholesky_with_jitter(a, jitter, what):
    try:
        return sla.cho_factor(a, lower=True, check_finite=False)
    except sla.LinAlgError:
        pass
    bump = jitter * max(np.trace(a) / a.shape[0], 1e-300)
    try:
        return sla.cho_factor(a + bump * np.eye(a.shape[0]), lower=True,
                              check_finite=False)
    except sla.LinAlgError as exc:
        raise NumericalError(f"{what} is numerically singular") from exc


def posterior_dense(inst: ProblemInstance, hyper: Hyperparameters,
                    jitter: float = 1e-10) -> PosteriorStats:
    """Reference E-step on the full column-stacked ``NL x NL`` system."""
    phi, y = inst.phi, inst.y_mat
    n, l = inst.n, inst.l
    lam = hyper.lam
    gram = phi.T @ phi
    b = hyper.row_precision()
    prec = lam * np.kron(np.eye(l), gram) + np.kron(hyper.b2, np.diag(b))
    factor = _cholesky_with_jitter(prec, jitter, "posterior precision")
    sigma = sla.cho_solve(factor, np.eye(n * l), check_finite=False)
    sigma = 0.5 * (sigma + sigma.T)
    rhs = lam * (phi.T @ y).ravel(order="F")
    mu = sla.cho_solve(factor, rhs, check_finite=False)

    # sigma4[a, i, b, j] = Cov(X[i, a], X[j, b])
    sigma4 = sigma.reshape(l, n, l, n)
    row_cov = np.einsum("aibi->iab", sigma4)
    residual_trace = float(np.einsum("aiaj,ji->", sigma4, gram))
    return PosteriorStats(mean=mu.reshape(l, n).T, row_cov=row_cov,
                          residual_trace=max(residual_trace, 0.0))


def posterior_fast(inst: ProblemInstance, hyper: Hyperparameters,
                   jitter: float = 1e-10) -> PosteriorStats:
    """E-step through the eigendecomposition of ``B2``.

    With ``B2 = U diag(d) U^T`` and ``Y~ = Y U`` the rotated columns are
    independent with covariance ``C_l = (lam Phi^T Phi + d_l B1)^{-1}``.
    When ``M < N`` each ``C_l`` is applied through the Woodbury identity so
    only ``M x M`` factorisations are needed.
    """
    phi, y = inst.phi, inst.y_mat
    m, n, l = inst.m, inst.n, inst.l
    lam = hyper.lam
    d, u = np.linalg.eigh(hyper.b2)
    if d.min() <= 0:
        raise NumericalError("b2 has a non-positive eigenvalue")
    y_rot = y @ u
    b = hyper.row_precision()

    mean_rot = np.empty((n, l))
    diag_c = np.empty((n, l))
    residual_trace = 0.0
    if m < n:
        for j in range(l):
            gamma = 1.0 / (d[j] * b)
            kmat = (phi * gamma) @ phi.T
            kmat[np.diag_indices(m)] += 1.0 / lam
            factor = _cholesky_with_jitter(kmat, jitter, "marginal covariance")
            w = sla.cho_solve(factor, np.column_stack([y_rot[:, j], phi]),
                              check_finite=False)
            s = np.einsum("mn,mn->n", phi, w[:, 1:])
            mean_rot[:, j] = gamma * (phi.T @ w[:, 0])
            diag_c[:, j] = np.maximum(gamma - gamma * gamma * s, 0.0)
            # tr(Phi C Phi^T) = tr(K^{-1} Phi Gamma Phi^T) / lam
            residual_trace += float(np.dot(gamma, s)) / lam
    else:
        gram = phi.T @ phi
        pty = phi.T @ y_rot
        for j in range(l):
            prec = lam * gram
            prec[np.diag_indices(n)] += d[j] * b
            factor = _cholesky_with_jitter(prec, jitter, "posterior precision")
            c = sla.cho_solve(factor, np.eye(n), check_finite=False)
            mean_rot[:, j] = lam * (c @ pty[:, j])
            diag_c[:, j] = np.diag(c)
            residual_trace += float(np.sum(gram * c))

    mean = mean_rot @ u.T
    row_cov = np.einsum("ak,bk,ik->iab", u, u, diag_c)
    return PosteriorStats(mean=mean, row_cov=row_cov,
                          residual_trace=max(residual_trace, 0.0))


def row_second_moments(stats: PosteriorStats) -> np.ndarray:
    """``Omega_i = mu_i mu_i^T + Sigma_i`` for every row, shape (N, L, L)."""
    mu = np.asarray(stats.mean)
    return np.einsum("ia,ib->iab", mu, mu) + np.asarray(stats.row_cov)


def weighted_traces(omegas, b2, beta):
    """``phi_i = (tr(B2 Om_i) + beta tr(B2 Om_{i-1}) + beta tr(B2 Om_{i+1}))/2``
    with zero moments outside the signal."""
    t = np.einsum("ab,iba->i", np.asarray(b2), np.asarray(omegas))
    return 0.5 * coupled_sum(t, beta)


def update_alpha(omegas, b2, beta, L, alpha_max=1e12):
    """Set each ``alpha_i`` to the upper end ``3L / (2 phi_i)`` of its
    feasible interval, clamped to ``[ALPHA_MIN, alpha_max]``."""
    phi_w = weighted_traces(omegas, b2, beta)
    with np.errstate(divide="ignore"):
        alpha = np.where(phi_w > 0, 1.5 * L / np.where(phi_w > 0, phi_w, 1.0),
                         np.inf)
    return np.clip(alpha, ALPHA_MIN, alpha_max)


def _b2_stationary(omegas, alpha, beta, jitter):
    omegas = np.asarray(omegas)
    n, l, _ = omegas.shape
    b = build_row_precision(alpha, beta)
    s = np.einsum("i,iab->ab", b, omegas) / n
    if not np.all(np.isfinite(s)):
        raise NumericalError("B2 update: weighted second moment is not finite")
    s = 0.5 * (s + s.T)
    s[np.diag_indices(l)] += jitter * np.trace(s) / l
    factor = _cholesky_with_jitter(s, jitter, "B2 update moment")
    b2 = sla.cho_solve(factor, np.eye(l), check_finite=False)
    return 0.5 * (b2 + b2.T)


def update_b2(omegas, alpha, beta, jitter=1e-10):
    """Stationary point of the expected log prior in ``B2``, normalised to
    trace ``L``.

    The unnormalised solution is ``((1/N) sum_i b_i Omega_i)^{-1}`` where
    ``b`` is the coupled row precision.
    """
    b2 = _b2_stationary(omegas, alpha, beta, jitter)
    return b2 * (b2.shape[0] / np.trace(b2))


def update_lambda(inst: ProblemInstance, stats: PosteriorStats,
                  lambda_max=1e12):
    """Noise precision maximising the expected log likelihood:
    ``ML / (||Y - Phi mean||_F^2 + residual_trace)``."""
    resid = inst.y_mat - inst.phi @ stats.mean
    denom = float(np.sum(resid * resid)) + stats.residual_trace
    numer = inst.m * inst.l
    if denom <= numer / lambda_max:
        return float(lambda_max)
    return numer / denom


def initial_lambda(y_mat, lambda_init, lambda_max):
    if lambda_init != "auto":
        return float(lambda_init)
    var = float(np.var(y_mat))
    if var <= 100.0 / lambda_max:
        return float(lambda_max)
    return max(100.0 / var, 1.0)


def _relative_change(new, old):
    return float(np.linalg.norm(new - old) / max(np.linalg.norm(old), 1e-12))


def e_step(inst, hyper, cfg):
    """Posterior with the path chosen by ``cfg.dense_cutoff``.

    The fast path falls back to the dense one if it fails numerically.
    """
    if inst.n * inst.l <= cfg.dense_cutoff:
        return posterior_dense(inst, hyper, cfg.jitter)
    try:
        return posterior_fast(inst, hyper, cfg.jitter)
    except NumericalError:
        log.debug("fast E-step failed, retrying on the dense path")
        return posterior_dense(inst, hyper, cfg.jitter)


def run_em(inst: ProblemInstance, cfg: SolverConfig) -> SolverReport:
    """Run the pattern-coupled EM iteration until the posterior mean settles.

    Each iteration updates ``alpha``, ``B2`` and (optionally) ``lam`` from
    the current posterior, then recomputes the posterior.
    """
    l = inst.l
    hyper = Hyperparameters(
        alpha=np.full(inst.n, cfg.alpha_init), beta=cfg.beta, b2=np.eye(l),
        lam=initial_lambda(inst.y_mat, cfg.lambda_init, cfg.lambda_max))
    try:
        stats = e_step(inst, hyper, cfg)
    except NumericalError as exc:
        raise NumericalError(str(exc), iteration=0) from exc

    trace: List[TraceEntry] = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        try:
            omegas = row_second_moments(stats)
            alpha = update_alpha(omegas, hyper.b2, cfg.beta, l, cfg.alpha_max)
            b2 = hyper.b2
            if cfg.learn_b2:
                b2 = update_b2(omegas, alpha, cfg.beta, cfg.jitter)
            lam = hyper.lam
            if cfg.noise_learning:
                lam = update_lambda(inst, stats, cfg.lambda_max)
            hyper = Hyperparameters(alpha=alpha, beta=cfg.beta, b2=b2, lam=lam)
            new_stats = e_step(inst, hyper, cfg)
        except NumericalError as exc:
            raise NumericalError(str(exc), iteration=it) from exc

        change = _relative_change(new_stats.mean, stats.mean)
        stats = new_stats
        trace.append((change, hyper.lam, float(alpha.min()),
                      float(alpha.max())))
        if change < cfg.tol:
            converged = True
            break

    return SolverReport(x_hat=stats.mean, hyper=hyper, iterations=it,
                        converged=converged, trace=trace)
