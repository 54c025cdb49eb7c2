"""Conditional autoregressive (CAR) outcome model on a network.

The response splits into a treatment effect, covariate effects and a
correlated disturbance:

    y_i = x_i * theta + f_i' beta + delta_i,      f_i = (1, z_i')'

with delta ~ MVN(0, sigma2 * R^{ -1}) and precision kernel

    R(rho) = D - rho * W

for degree diagonal D and adjacency W.  R is positive definite whenever
every degree is at least one and 0 <= rho < 1.  The heterogeneous variant
uses R = D - P W P with P = diag(sqrt(rho_i)).

Note the rho = 0 corner: the model then has independent disturbances with
variances sigma2 / m_i, not a common sigma2.  The code follows R(0) = D
literally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import linalg, sparse

from .designs import as_sign_vector
from .errors import DataError, NotPositiveDefiniteError, RankError
from .graph import CovariateMatrix, Network

__all__ = [
    "CarParams",
    "HeteroCarParams",
    "PrecisionFactor",
    "FitResult",
    "NetworkSpectrum",
    "precision_matrix",
    "factor_precision",
    "sample_noise",
    "sample_outcomes",
    "fit_gls",
    "network_spectrum",
    "fit_profile_ml",
]

RHO_MAX_DEFAULT = 0.99


@dataclass(frozen=True)
class CarParams:
    """Homogeneous CAR parameters.

    rho is the common neighbor-correlation coefficient in [0, 1); sigma2
    the disturbance scale; theta the treatment effect; beta the covariate
    coefficients including the intercept (None means all zero).
    """

    rho: float
    sigma2: float = 1.0
    theta: float = 1.0
    beta: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0.0 <= self.rho < 1.0:
            raise DataError(f"rho must lie in [0, 1), got {self.rho}")
        if self.sigma2 <= 0.0:
            raise DataError(f"sigma2 must be positive, got {self.sigma2}")


@dataclass(frozen=True)
class HeteroCarParams:
    """Node-specific correlation coefficients rho_i in [0, 1)."""

    rho: np.ndarray
    sigma2: float = 1.0
    theta: float = 1.0
    beta: Optional[np.ndarray] = None

    def __post_init__(self):
        arr = np.asarray(self.rho, dtype=np.float64).ravel()
        if arr.size == 0 or arr.min() < 0.0 or arr.max() >= 1.0:
            raise DataError("every rho_i must lie in [0, 1)")
        if self.sigma2 <= 0.0:
            raise DataError(f"sigma2 must be positive, got {self.sigma2}")
        object.__setattr__(self, "rho", arr)


def precision_matrix(net: Network, params: Union[CarParams, HeteroCarParams, float]) -> sparse.csr_array:
    """Sparse precision kernel: D - rho W, or D - P W P for node-specific rho."""
    if isinstance(params, (int, float)):
        params = CarParams(rho=float(params))
    D = sparse.diags_array(net.degrees.astype(np.float64), format="csr")
    if isinstance(params, HeteroCarParams):
        if params.rho.size != net.n:
            raise DataError(
                f"rho vector length {params.rho.size} does not match n={net.n}"
            )
        P = sparse.diags_array(np.sqrt(params.rho), format="csr")
        return (D - P @ net.adjacency @ P).tocsr()
    return (D - params.rho * net.adjacency).tocsr()


@dataclass(frozen=True, eq=False)
class PrecisionFactor:
    """Cholesky factorization R = L L' of a precision kernel.

    Solves and log-determinants go through the triangular factor; no
    explicit inverse is ever formed.
    """

    lower: np.ndarray

    @property
    def n(self) -> int:
        return self.lower.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve R v = b."""
        y = linalg.solve_triangular(self.lower, b, lower=True)
        return linalg.solve_triangular(self.lower, y, lower=True, trans="T")

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))

    def sample(self, rng: np.random.Generator, sigma2: float = 1.0) -> np.ndarray:
        """One MVN(0, sigma2 R^{-1}) draw: solve L' v = eps for standard normal eps."""
        eps = rng.standard_normal(self.n)
        v = linalg.solve_triangular(self.lower, eps, lower=True, trans="T")
        return math.sqrt(sigma2) * v


def factor_precision(net: Network, params: Union[CarParams, HeteroCarParams, float]) -> PrecisionFactor:
    """Factor the precision kernel for the given correlation parameters."""
    iso = net.isolated_nodes
    if iso.size:
        raise NotPositiveDefiniteError(
            f"precision kernel is singular: isolated nodes {iso[:5].tolist()}"
            f"{'...' if iso.size > 5 else ''} have zero degree"
        )
    R = precision_matrix(net, params).toarray()
    try:
        L = linalg.cholesky(R, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"precision kernel is not positive definite: {exc}") from None
    return PrecisionFactor(lower=L)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_noise(factor: PrecisionFactor, sigma2: float, seed) -> np.ndarray:
    """One correlated disturbance draw from a prebuilt factor."""
    return factor.sample(_rng(seed), sigma2)


def sample_outcomes(
    net: Network,
    cov: CovariateMatrix,
    x,
    params: Union[CarParams, HeteroCarParams],
    seed,
    factor: Optional[PrecisionFactor] = None,
) -> np.ndarray:
    """Draw y = x theta + F beta + delta under the CAR model.

    Args:
        x: +/-1 assignment vector.
        seed: int seed or numpy Generator; one standard-normal vector is
            consumed per call, so equal seeds give equal draws regardless
            of the parameter variant.
        factor: optional prebuilt factorization of the matching precision
            kernel, for repeated draws on one network.
    """
    xv = as_sign_vector(x)
    if cov.n != net.n or xv.size != net.n:
        raise DataError("network, covariates and design must agree on n")
    beta = params.beta
    if beta is None:
        beta = np.zeros(cov.p + 1)
    beta = np.asarray(beta, dtype=np.float64).ravel()
    if beta.size != cov.p + 1:
        raise DataError(f"beta must have length p+1={cov.p + 1}, got {beta.size}")
    if factor is None:
        factor = factor_precision(net, params)
    delta = factor.sample(_rng(seed), params.sigma2)
    return params.theta * xv + cov.values @ beta + delta


@dataclass(frozen=True, eq=False)
class FitResult:
    """Estimates from a CAR model fit.

    beta_hat includes the intercept coefficient in position 0.  rho_hat is
    the value used by the fit: the caller-supplied one for fixed-rho GLS,
    the maximizer for profile likelihood.  var_theta is the model-based
    variance of theta_hat; loglik the Gaussian log likelihood at the
    reported parameters.
    """

    theta_hat: float
    beta_hat: np.ndarray
    rho_hat: float
    sigma2_hat: float
    var_theta: float
    loglik: float
    method: str

    def __repr__(self) -> str:
        return (
            f"FitResult(method={self.method!r}, theta_hat={self.theta_hat:.6g}, "
            f"rho_hat={self.rho_hat:.6g}, sigma2_hat={self.sigma2_hat:.6g})"
        )


def _design_matrix(cov: CovariateMatrix, xv: np.ndarray) -> np.ndarray:
    X = np.column_stack([xv, cov.values])
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankError(
            "design matrix [x F] is rank deficient; the assignment lies in the covariate span"
        )
    return X


def fit_gls(net: Network, cov: CovariateMatrix, x, y: np.ndarray, rho: float) -> FitResult:
    """Generalized least squares at a fixed correlation coefficient.

    Estimates (theta, beta) jointly; sigma2 by the ML divisor n.
    """
    xv = as_sign_vector(x)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != net.n or cov.n != net.n or xv.size != net.n:
        raise DataError("network, covariates, design and outcomes must agree on n")
    X = _design_matrix(cov, xv)
    factor = factor_precision(net, rho)
    R = precision_matrix(net, rho)
    RX = R @ X
    M = X.T @ RX
    b = RX.T @ y
    try:
        cM, lowM = linalg.cho_factor(M)
    except linalg.LinAlgError:
        raise RankError("X' R X is numerically singular") from None
    gamma = linalg.cho_solve((cM, lowM), b)
    resid = y - X @ gamma
    n = net.n
    sigma2 = float(resid @ (R @ resid)) / n
    if sigma2 <= 0.0:
        sigma2 = np.finfo(float).tiny
    Minv_00 = float(linalg.cho_solve((cM, lowM), np.eye(X.shape[1])[:, 0])[0])
    loglik = -0.5 * n * math.log(2.0 * math.pi) + 0.5 * factor.logdet() - 0.5 * n * math.log(
        sigma2
    ) - 0.5 * n
    return FitResult(
        theta_hat=float(gamma[0]),
        beta_hat=gamma[1:].copy(),
        rho_hat=float(rho),
        sigma2_hat=sigma2,
        var_theta=sigma2 * Minv_00,
        loglik=loglik,
        method="gls",
    )


@dataclass(frozen=True, eq=False)
class NetworkSpectrum:
    """Eigenvalues of the degree-normalized adjacency, for fast log determinants.

    With S = D^{-1/2} W D^{-1/2} = U diag(lam) U', every kernel in the
    family satisfies log|D - rho W| = sum log m_i + sum log(1 - rho lam_i),
    so a single symmetric eigendecomposition prices the whole rho grid.
    """

    eigenvalues: np.ndarray
    logdet_degrees: float

    def logdet(self, rho: float) -> float:
        vals = 1.0 - rho * self.eigenvalues
        if np.any(vals <= 0.0):
            raise NotPositiveDefiniteError(f"kernel loses positive definiteness at rho={rho}")
        return self.logdet_degrees + float(np.sum(np.log(vals)))


def network_spectrum(net: Network) -> NetworkSpectrum:
    iso = net.isolated_nodes
    if iso.size:
        raise NotPositiveDefiniteError(
            f"spectrum undefined: isolated nodes {iso[:5].tolist()} have zero degree"
        )
    d = net.degrees.astype(np.float64)
    inv_sqrt = 1.0 / np.sqrt(d)
    S = net.adjacency.toarray() * inv_sqrt[:, None] * inv_sqrt[None, :]
    lam = np.linalg.eigvalsh(S)
    return NetworkSpectrum(eigenvalues=lam, logdet_degrees=float(np.sum(np.log(d))))


_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


def fit_profile_ml(
    net: Network,
    cov: CovariateMatrix,
    x,
    y: np.ndarray,
    rho_max: float = RHO_MAX_DEFAULT,
    grid_step: float = 0.01,
    tol: float = 1e-5,
    spectrum: Optional[NetworkSpectrum] = None,
) -> FitResult:
    """Maximize the profile likelihood over rho in [0, rho_max].

    A grid scan with the given step locates the maximizer's neighborhood;
    golden-section refinement narrows it to width tol.  The returned rho
    never scores below any grid point.

    Args:
        spectrum: optional precomputed network_spectrum(net), reused across
            fits on the same network.
    """
    xv = as_sign_vector(x)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != net.n or cov.n != net.n or xv.size != net.n:
        raise DataError("network, covariates, design and outcomes must agree on n")
    if not 0.0 < rho_max < 1.0:
        raise DataError(f"rho_max must lie in (0, 1), got {rho_max}")
    X = _design_matrix(cov, xv)
    if spectrum is None:
        spectrum = network_spectrum(net)
    n = net.n
    D = net.degrees.astype(np.float64)
    W = net.adjacency
    DX = X * D[:, None]
    WX = W @ X
    G_D = X.T @ DX
    G_W = X.T @ WX
    h_D = DX.T @ y
    h_W = WX.T @ y
    q_D = float(y @ (D * y))
    q_W = float(y @ (W @ y))

    def score(rho: float) -> float:
        M = G_D - rho * G_W
        b = h_D - rho * h_W
        try:
            gamma = np.linalg.solve(M, b)
        except np.linalg.LinAlgError:
            return -np.inf
        sigma2 = (q_D - rho * q_W - b @ gamma) / n
        if sigma2 <= 0.0:
            # Residual variance can only cancel to zero when y sits in the
            # span of [x F]; treat such points as unusable.
            return -np.inf
        return 0.5 * spectrum.logdet(rho) - 0.5 * n * math.log(sigma2)

    grid = np.arange(0.0, rho_max + 1e-12, grid_step)
    grid[-1] = min(grid[-1], rho_max)
    scores = np.array([score(r) for r in grid])
    k = int(np.argmax(scores))
    best_rho, best_score = float(grid[k]), float(scores[k])

    lo = max(0.0, grid[k] - grid_step)
    hi = min(rho_max, grid[k] + grid_step)
    a, b_ = lo, hi
    c = b_ - _GOLDEN * (b_ - a)
    d_ = a + _GOLDEN * (b_ - a)
    fc, fd = score(c), score(d_)
    while b_ - a > tol:
        if fc >= fd:
            b_, d_, fd = d_, c, fc
            c = b_ - _GOLDEN * (b_ - a)
            fc = score(c)
        else:
            a, c, fc = c, d_, fd
            d_ = a + _GOLDEN * (b_ - a)
            fd = score(d_)
        for r, s in ((c, fc), (d_, fd)):
            if s > best_score:
                best_rho, best_score = float(r), float(s)

    rho_hat = best_rho
    M = G_D - rho_hat * G_W
    bvec = h_D - rho_hat * h_W
    gamma = np.linalg.solve(M, bvec)
    sigma2 = float(q_D - rho_hat * q_W - bvec @ gamma) / n
    if sigma2 <= 0.0:
        sigma2 = float(np.finfo(float).tiny)
    var_theta = sigma2 * float(np.linalg.solve(M, np.eye(M.shape[0])[:, 0])[0])
    loglik = (
        -0.5 * n * math.log(2.0 * math.pi)
        + 0.5 * spectrum.logdet(rho_hat)
        - 0.5 * n * math.log(sigma2)
        - 0.5 * n
    )
    return FitResult(
        theta_hat=float(gamma[0]),
        beta_hat=gamma[1:].copy(),
        rho_hat=rho_hat,
        sigma2_hat=sigma2,
        var_theta=var_theta,
        loglik=loglik,
        method="profile_ml",
    )
