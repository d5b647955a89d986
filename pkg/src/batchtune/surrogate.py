"""Gaussian-process regression on unit-cube encoded points.

Isotropic squared-exponential kernel, targets standardised inside the model.
States are immutable; :func:`fit_gp` and :func:`hallucinate` return new ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular

LENGTH_SCALE_GRID = (0.05, 0.1, 0.2, 0.4, 0.8)
DEFAULT_LENGTH_SCALE = 0.2
DEFAULT_NOISE = 1e-6
JITTER_REL = 1e-6
JITTER_GROWTH = 10.0
JITTER_RETRIES = 3
_STD_FLOOR = 1e-12


class NumericalError(ArithmeticError):
    """Cholesky factorisation failed even after jitter escalation."""


@dataclass(frozen=True)
class KernelParams:
    length_scale: float = DEFAULT_LENGTH_SCALE
    signal_variance: float = 1.0
    noise_variance: float = DEFAULT_NOISE

    def __post_init__(self) -> None:
        if not self.length_scale > 0:
            raise ValueError(f"length_scale must be > 0, got {self.length_scale}")
        if not self.signal_variance > 0:
            raise ValueError(f"signal_variance must be > 0, got {self.signal_variance}")
        if not self.noise_variance >= 0:
            raise ValueError(f"noise_variance must be >= 0, got {self.noise_variance}")


def kernel_eval(k: KernelParams, a, b) -> float:
    """Squared-exponential covariance between two encoded points."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d2 = float(np.sum((a - b) ** 2))
    return k.signal_variance * math.exp(-d2 / (2.0 * k.length_scale**2))


def kernel_matrix(k: KernelParams, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    sq = (
        np.sum(A**2, axis=1)[:, None]
        + np.sum(B**2, axis=1)[None, :]
        - 2.0 * A @ B.T
    )
    np.maximum(sq, 0.0, out=sq)
    return k.signal_variance * np.exp(-sq / (2.0 * k.length_scale**2))


@dataclass(frozen=True, eq=False)
class GPState:
    """Posterior state of a fitted GP.

    ``z`` holds standardised targets for every row of ``X``; the trailing
    ``hallucinated_count`` rows are pseudo-observations and are excluded from
    ``y_raw`` and from the standardisation constants.
    """

    X: np.ndarray
    y_raw: np.ndarray
    z: np.ndarray
    y_mean: float
    y_std: float
    kernel: KernelParams
    jitter: float
    chol: np.ndarray
    alpha: np.ndarray
    hallucinated_count: int = 0

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int | None:
        return self.X.shape[1] if self.X.ndim == 2 and self.X.shape[0] else None

    @property
    def effective_noise(self) -> float:
        return self.kernel.noise_variance + self.jitter


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _standardize(y: np.ndarray) -> tuple[float, float]:
    if y.size == 0:
        return 0.0, 1.0
    mean = float(np.mean(y))
    if y.size < 2:
        return mean, 1.0
    std = float(np.std(y))
    return mean, (std if std >= _STD_FLOOR else 1.0)


def _factor(k: KernelParams, X: np.ndarray) -> tuple[np.ndarray, float]:
    K = kernel_matrix(k, X, X)
    jitter = JITTER_REL * k.signal_variance
    for attempt in range(JITTER_RETRIES + 1):
        try:
            L = cholesky(K + (k.noise_variance + jitter) * np.eye(len(X)), lower=True)
            return L, jitter
        except LinAlgError:
            if attempt == JITTER_RETRIES:
                break
            jitter *= JITTER_GROWTH
    raise NumericalError(f"Cholesky failed with jitter up to {jitter:g}")


def fit_gp(X, y, k: KernelParams | None = None) -> GPState:
    """Fit a GP to observations; an empty dataset yields the prior."""
    k = k or KernelParams()
    y = np.asarray(y, dtype=float).reshape(-1)
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        X = X.reshape(0, X.shape[1] if X.ndim == 2 else 0)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"X must be (n, d) with n == len(y); got {X.shape} and {y.shape}")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    y_mean, y_std = _standardize(y)
    z = (y - y_mean) / y_std
    if len(y):
        L, jitter = _factor(k, X)
        alpha = cho_solve((L, True), z)
    else:
        L, jitter, alpha = np.zeros((0, 0)), JITTER_REL * k.signal_variance, np.zeros(0)
    return GPState(
        X=_frozen(X), y_raw=_frozen(y), z=_frozen(z), y_mean=y_mean, y_std=y_std,
        kernel=k, jitter=jitter, chol=_frozen(L), alpha=_frozen(alpha),
    )


def _check_dim(g: GPState, Xq: np.ndarray) -> None:
    if g.n and Xq.shape[1] != g.X.shape[1]:
        raise ValueError(f"dimension mismatch: state has d={g.X.shape[1]}, query has d={Xq.shape[1]}")


def posterior_many(g: GPState, Xq) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised posterior mean and latent variance at rows of ``Xq``."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    _check_dim(g, Xq)
    sf = g.kernel.signal_variance
    if g.n == 0:
        return np.full(len(Xq), g.y_mean), np.full(len(Xq), sf * g.y_std**2)
    Ks = kernel_matrix(g.kernel, Xq, g.X)
    mean = g.y_mean + g.y_std * (Ks @ g.alpha)
    v = solve_triangular(g.chol, Ks.T, lower=True, check_finite=False)
    var = g.y_std**2 * (sf - np.sum(v * v, axis=0))
    return mean, np.maximum(var, 0.0)


def posterior(g: GPState, x) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("posterior expects a single point; use posterior_many for batches")
    m, v = posterior_many(g, x[None, :])
    return float(m[0]), float(v[0])


def log_marginal_likelihood(g: GPState) -> float:
    """Exact LML of the standardised targets under the regularised kernel."""
    n = g.n
    if n == 0:
        return 0.0
    return float(
        -0.5 * g.z @ g.alpha
        - np.sum(np.log(np.diag(g.chol)))
        - 0.5 * n * math.log(2.0 * math.pi)
    )


def select_kernel_params(X, y) -> KernelParams:
    """Pick the grid length scale with the highest log marginal likelihood.

    Ties go to the smaller length scale. Returns defaults when there are
    fewer than two observations or the targets are constant.
    """
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(y) < 2 or float(np.std(y)) < _STD_FLOOR:
        return KernelParams()
    best, best_lml = None, -math.inf
    for ls in LENGTH_SCALE_GRID:
        k = KernelParams(length_scale=ls, signal_variance=1.0, noise_variance=DEFAULT_NOISE)
        try:
            lml = log_marginal_likelihood(fit_gp(X, y, k))
        except NumericalError:
            continue
        if lml > best_lml:
            best, best_lml = k, lml
    return best or KernelParams()


def hallucinate(g: GPState, x) -> GPState:
    """Add a pseudo-observation at ``x`` whose target is the current mean.

    The zero residual leaves the posterior mean unchanged everywhere while
    shrinking variance around ``x``. The Cholesky factor is extended by one
    row instead of being recomputed, and because the pseudo-target equals
    ``ks @ alpha`` the augmented system is solved exactly by ``[alpha, 0]``.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if g.n and x.shape[0] != g.X.shape[1]:
        raise ValueError(f"dimension mismatch: state has d={g.X.shape[1]}, point has d={x.shape[0]}")
    k = g.kernel
    diag = k.signal_variance + g.effective_noise
    if g.n == 0:
        z_new = 0.0
        L = np.array([[math.sqrt(diag)]])
    else:
        ks = kernel_matrix(k, x[None, :], g.X)[0]
        z_new = float(ks @ g.alpha)
        ell = solve_triangular(g.chol, ks, lower=True, check_finite=False)
        d2 = max(diag - float(ell @ ell), g.effective_noise * 1e-6)
        n = g.n
        L = np.zeros((n + 1, n + 1))
        L[:n, :n] = g.chol
        L[n, :n] = ell
        L[n, n] = math.sqrt(d2)
    X = np.vstack([g.X.reshape(g.n, -1) if g.n else np.zeros((0, x.shape[0])), x[None, :]])
    z = np.append(g.z, z_new)
    alpha = np.append(g.alpha, 0.0)
    return GPState(
        X=_frozen(X), y_raw=g.y_raw, z=_frozen(z), y_mean=g.y_mean, y_std=g.y_std,
        kernel=k, jitter=g.jitter, chol=_frozen(L), alpha=_frozen(alpha),
        hallucinated_count=g.hallucinated_count + 1,
    )
