"""EM-based MSBL baseline: independent row variances, no pattern coupling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import linalg as sla

from .model import Hyperparameters, NumericalError, ProblemInstance
from .solver import SolverReport, _cholesky_with_jitter, initial_lambda


@dataclass(frozen=True)
class MsblConfig:
    max_iter: int = 500
    tol: float = 1e-6
    gamma_floor: float = 1e-10
    noise_learning: bool = True
    lambda_init: Union[float, str] = "auto"
    lambda_max: float = 1e12
    jitter: float = 1e-10

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0 or not self.gamma_floor > 0:
            raise ValueError("tol and gamma_floor must be > 0")
        if self.lambda_init != "auto" and not float(self.lambda_init) > 0:
            raise ValueError("lambda_init must be > 0 or 'auto'")


def msbl_posterior(phi, y_mat, gamma, lam, jitter=1e-10):
    """Posterior mean, diagonal of the shared row covariance and
    ``tr(Phi Sigma_x Phi^T)`` for prior row variances ``gamma``.

    Uses the ``M x M`` form ``Sigma_x = G - G Phi^T (I/lam + Phi G Phi^T)^{-1} Phi G``.
    """
    m = phi.shape[0]
    kmat = (phi * gamma) @ phi.T
    kmat[np.diag_indices(m)] += 1.0 / lam
    factor = _cholesky_with_jitter(kmat, jitter, "MSBL marginal covariance")
    w = sla.cho_solve(factor, np.column_stack([y_mat, phi]), check_finite=False)
    l = y_mat.shape[1]
    s = np.einsum("mn,mn->n", phi, w[:, l:])
    mean = gamma[:, None] * (phi.T @ w[:, :l])
    diag_cov = np.maximum(gamma - gamma * gamma * s, 0.0)
    fit_trace = float(np.dot(gamma, s)) / lam
    return mean, diag_cov, fit_trace


def run_msbl(inst: ProblemInstance, cfg: MsblConfig = MsblConfig()) -> SolverReport:
    """Classic EM-MSBL.

    Rows whose variance drops below ``cfg.gamma_floor`` are pruned (their
    ``gamma`` is set to exactly zero and stays there), so the corresponding
    rows of the estimate are exactly zero.
    """
    phi, y = inst.phi, inst.y_mat
    m, n, l = inst.m, inst.n, inst.l
    gamma = np.ones(n)
    lam = initial_lambda(y, cfg.lambda_init, cfg.lambda_max)

    def posterior(it):
        try:
            return msbl_posterior(phi, y, gamma, lam, cfg.jitter)
        except NumericalError as exc:
            raise NumericalError(str(exc), iteration=it) from exc

    mean, diag_cov, fit_trace = posterior(0)
    trace = []
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        gamma = np.sum(mean * mean, axis=1) / l + diag_cov
        gamma[gamma < cfg.gamma_floor] = 0.0
        if cfg.noise_learning:
            resid = y - phi @ mean
            denom = float(np.sum(resid * resid)) + l * fit_trace
            lam = (cfg.lambda_max if denom <= m * l / cfg.lambda_max
                   else m * l / denom)
        new_mean, diag_cov, fit_trace = posterior(it)
        change = float(np.linalg.norm(new_mean - mean)
                       / max(np.linalg.norm(mean), 1e-12))
        mean = new_mean
        active = gamma[gamma > 0]
        if active.size:
            trace.append((change, lam, float(1.0 / active.max()),
                          float(1.0 / active.min())))
        else:
            trace.append((change, lam, float("inf"), float("inf")))
        if change < cfg.tol:
            converged = True
            break

    # report gamma as alpha = 1/gamma (pruned rows at the cap)
    with np.errstate(divide="ignore"):
        alpha = np.where(gamma > 0, 1.0 / np.where(gamma > 0, gamma, 1.0), 1e12)
    hyper = Hyperparameters(alpha=np.clip(alpha, 1e-10, 1e12), beta=0.0,
                            b2=np.eye(l), lam=lam)
    return SolverReport(x_hat=mean, hyper=hyper, iterations=it,
                        converged=converged, trace=trace)
