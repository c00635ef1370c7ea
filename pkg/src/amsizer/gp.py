"""Gaussian-process regression with a squared-exponential kernel.

Fixed hyperparameters, no marginal-likelihood fitting: inputs are
normalized to the unit cube by the caller, where a lengthscale of 0.2
is a reasonable default at desk-scale dimensionality.  The prior mean
is the mean of the training targets, so predictions far from all data
revert to the average observed value rather than zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

JITTER_LADDER = (1e-10, 1e-8, 1e-6)


class GpError(RuntimeError):
    pass


@dataclass(frozen=True)
class GpHyper:
    lengthscale: float = 0.2
    signal_var: float = 1.0
    noise_var: float = 1e-6

    def __post_init__(self):
        if self.lengthscale <= 0 or self.signal_var <= 0 or self.noise_var < 0:
            raise ValueError("lengthscale and signal_var must be > 0, noise_var >= 0")


@dataclass(frozen=True)
class GpModel:
    x: np.ndarray  # (n, d), unit cube
    y: np.ndarray  # (n,)
    prior_mean: float
    chol: np.ndarray  # lower Cholesky factor of K + noise*I (+ jitter)
    alpha: np.ndarray  # (K + noise*I)^-1 (y - prior_mean)
    hyper: GpHyper


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # ||a_i - b_j||^2 without forming the full difference tensor
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    d2 = aa + bb - 2.0 * (a @ b.T)
    return np.maximum(d2, 0.0)


def kernel(a: np.ndarray, b: np.ndarray, hyper: GpHyper) -> np.ndarray:
    d2 = _sq_dists(np.atleast_2d(a), np.atleast_2d(b))
    return hyper.signal_var * np.exp(-0.5 * d2 / (hyper.lengthscale ** 2))


def gp_fit(points: np.ndarray, values: np.ndarray, hyper: GpHyper | None = None) -> GpModel:
    """Exact GP regression; escalates diagonal jitter if Cholesky fails."""
    hyper = hyper or GpHyper()
    x = np.atleast_2d(np.asarray(points, dtype=float))
    y = np.asarray(values, dtype=float).ravel()
    if len(x) == 0:
        raise GpError("need at least one training point")
    if len(x) != len(y):
        raise GpError(f"{len(x)} points but {len(y)} values")
    prior_mean = float(np.mean(y))
    k = kernel(x, x, hyper)
    k[np.diag_indices_from(k)] += hyper.noise_var
    chol = None
    for jitter in (0.0,) + JITTER_LADDER:
        try:
            chol = scipy.linalg.cholesky(
                k + jitter * np.eye(len(x)), lower=True, check_finite=False
            )
            break
        except scipy.linalg.LinAlgError:
            continue
    if chol is None:
        raise GpError(
            f"kernel matrix not positive definite even with jitter {JITTER_LADDER[-1]:g}"
        )
    resid = y - prior_mean
    alpha = scipy.linalg.cho_solve((chol, True), resid, check_finite=False)
    return GpModel(x=x, y=y, prior_mean=prior_mean, chol=chol, alpha=alpha, hyper=hyper)


def gp_predict(model: GpModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior (mean, latent variance) at query points (m, d) -> (m,), (m,)."""
    xq = np.atleast_2d(np.asarray(x, dtype=float))
    k_star = kernel(xq, model.x, model.hyper)  # (m, n)
    mean = model.prior_mean + k_star @ model.alpha
    v = scipy.linalg.solve_triangular(
        model.chol, k_star.T, lower=True, check_finite=False
    )
    var = model.hyper.signal_var - np.sum(v * v, axis=0)
    return mean, np.maximum(var, 0.0)
