"""Domain types and prior construction for the pattern-coupled MMV model.

Conventions
-----------
``X`` is ``N x L`` (rows are coefficients, columns are measurement vectors).
Whenever ``X`` is vectorised it is **column-stacked**: entry ``X[i, l]`` sits
at position ``i + l * N``.  Under this convention the prior precision of
``vec(X)`` is ``kron(B2, B1)`` and the likelihood Gram term is
``kron(I_L, Phi.T @ Phi)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

ALPHA_MIN = 1e-10


class NumericalError(ArithmeticError):
    """Raised when a matrix that must be SPD/invertible is not.

    ``iteration`` is filled in by the EM driver when the failure happens
    inside the solver loop.
    """

    def __init__(self, message, iteration=None):
        self.iteration = iteration
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)


def _as_finite_matrix(a, name):
    a = np.array(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


@dataclass(frozen=True)
class ProblemInstance:
    """Sensing matrix ``phi`` (M x N), measurements ``y_mat`` (M x L) and
    an optional ground truth ``truth`` (N x L) used only for scoring."""

    phi: np.ndarray
    y_mat: np.ndarray
    truth: Optional[np.ndarray] = None

    def __post_init__(self):
        phi = _as_finite_matrix(self.phi, "phi")
        y = _as_finite_matrix(self.y_mat, "y_mat")
        if phi.shape[0] != y.shape[0]:
            raise ValueError(
                f"phi has {phi.shape[0]} rows but y_mat has {y.shape[0]}")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "y_mat", y)
        if self.truth is not None:
            truth = _as_finite_matrix(self.truth, "truth")
            if truth.shape != (phi.shape[1], y.shape[1]):
                raise ValueError(
                    f"truth has shape {truth.shape}, expected "
                    f"{(phi.shape[1], y.shape[1])}")
            object.__setattr__(self, "truth", truth)

    @property
    def m(self) -> int:
        return self.phi.shape[0]

    @property
    def n(self) -> int:
        return self.phi.shape[1]

    @property
    def l(self) -> int:  # noqa: E743
        return self.y_mat.shape[1]


@dataclass(frozen=True)
class Hyperparameters:
    """Row controls ``alpha``, coupling ``beta``, column precision ``b2``
    and noise precision ``lam``."""

    alpha: np.ndarray
    beta: float
    b2: np.ndarray
    lam: float

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float).ravel()
        if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
            raise ValueError("alpha entries must be finite and > 0")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        b2 = _as_finite_matrix(self.b2, "b2")
        if b2.shape[0] != b2.shape[1]:
            raise ValueError(f"b2 must be square, got {b2.shape}")
        scale = max(np.abs(b2).max(), 1e-300)
        if np.abs(b2 - b2.T).max() > 1e-12 * scale:
            raise ValueError("b2 is not symmetric")
        if np.linalg.eigvalsh(b2).min() <= 0:
            raise NumericalError("b2 is not positive definite")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError(f"lam must be finite and > 0, got {self.lam}")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "b2", b2)
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "lam", float(self.lam))

    def row_precision(self) -> np.ndarray:
        return build_row_precision(self.alpha, self.beta)


@dataclass(frozen=True)
class PosteriorStats:
    """Posterior summary of ``X``.

    ``mean`` is N x L, ``row_cov`` is an ``(N, L, L)`` stack holding the
    covariance of each row of ``X``, and ``residual_trace`` is
    ``tr(kron(I_L, Phi.T Phi) @ Sigma)``.
    """

    mean: np.ndarray
    row_cov: np.ndarray
    residual_trace: float


@dataclass(frozen=True)
class SolverConfig:
    beta: float = 1.0
    max_iter: int = 500
    tol: float = 1e-6
    alpha_init: float = 1.0
    lambda_init: Union[float, str] = "auto"
    alpha_max: float = 1e12
    lambda_max: float = 1e12
    jitter: float = 1e-10
    noise_learning: bool = True
    # NL at or below which the E-step uses the dense reference path
    dense_cutoff: int = 600
    learn_b2: bool = True

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if not self.alpha_max > self.alpha_init > 0:
            raise ValueError("need alpha_max > alpha_init > 0")
        if self.lambda_init != "auto" and not float(self.lambda_init) > 0:
            raise ValueError("lambda_init must be > 0 or 'auto'")
        if not self.lambda_max > 0 or not self.jitter > 0:
            raise ValueError("lambda_max and jitter must be > 0")


def build_row_precision(alpha, beta):
    """Diagonal of ``B1``: ``alpha[n] + beta*alpha[n-1] + beta*alpha[n+1]``.

    Out-of-range neighbours count as zero.

    >>> build_row_precision([1.0, 1.0, 1.0], 1.0)
    array([2., 3., 2.])
    """
    alpha = np.asarray(alpha, dtype=float).ravel()
    if not np.all(np.isfinite(alpha)):
        raise ValueError("alpha contains non-finite entries")
    b = alpha.copy()
    b[1:] += beta * alpha[:-1]
    b[:-1] += beta * alpha[1:]
    return b


def coupled_sum(values, beta):
    """``v[i] + beta*v[i-1] + beta*v[i+1]`` with zero padding.

    Same neighbour stencil as :func:`build_row_precision`; the EM step uses it
    on the weighted traces of the row second moments.
    """
    values = np.asarray(values, dtype=float)
    out = values.copy()
    out[1:] += beta * values[:-1]
    out[:-1] += beta * values[1:]
    return out


def log_prior(x_mat, alpha, beta, b2):
    """Normalised log density of ``X`` under the pattern-coupled prior.

    Parameters
    ----------
    x_mat : ndarray, shape (N, L)
    alpha : ndarray, shape (N,)
    beta : float
    b2 : ndarray, shape (L, L)
        Must be symmetric positive definite.

    Returns
    -------
    float
        ``L/2 log|B1| + N/2 log|B2| - NL/2 log(2 pi) - tr(X^T B1 X B2)/2``
    """
    x_mat = np.asarray(x_mat, dtype=float)
    if x_mat.ndim == 1:
        x_mat = x_mat[:, None]
    n, l = x_mat.shape
    b = build_row_precision(alpha, beta)
    b2 = np.asarray(b2, dtype=float)
    try:
        chol = np.linalg.cholesky(b2)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("b2 is not positive definite") from exc
    logdet_b2 = 2.0 * np.sum(np.log(np.diag(chol)))
    quad = np.sum((b[:, None] * x_mat) * (x_mat @ b2))
    return (0.5 * l * np.sum(np.log(b)) + 0.5 * n * logdet_b2
            - 0.5 * n * l * np.log(2 * np.pi) - 0.5 * quad)
