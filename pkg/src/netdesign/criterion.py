"""Design criterion for the treatment-effect precision under the CAR model.

For a kernel R = D - rho W and covariates F (intercept included), the
precision of the GLS treatment-effect estimate at unit noise scale is the
quadratic form x' K x with

    K = R - R F (F' R F)^{-1} F' R.

It splits into three interpretable pieces,

    x' K x = m - rho * x' W x - x' R F (F' R F)^{-1} F' R x
           = total_degree - network_term - imbalance_term,

so maximizing precision means sending the network term negative (cutting
edges between arms) while keeping the kernel-weighted covariate imbalance
small.  Everything here works off a thin factored form (B = R F and the
Cholesky factor of F' R F); the dense n-by-n K is only materialized by
k_matrix for diagnostics and tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse
from scipy.sparse.linalg import ArpackNoConvergence, eigsh
from scipy.special import ndtri

from .car import precision_matrix
from .designs import as_sign_vector
from .errors import (
    DataError,
    DegenerateDesignError,
    EigenSolverError,
    NotPositiveDefiniteError,
    RankError,
)
from .graph import CovariateMatrix, Network

__all__ = [
    "CriterionBreakdown",
    "CriterionEvaluator",
    "evaluate",
    "k_matrix",
    "balanced_moment_c",
    "expected_precision_matrix",
    "expected_precision",
    "expected_breakdown",
    "pip",
    "quadform_correlation",
    "RobustnessScatter",
    "robustness_scatter",
    "GapDiagnostics",
    "surrogate_gap_diagnostics",
    "concavity_probe",
]


@dataclass(frozen=True)
class CriterionBreakdown:
    """Decomposition of the precision x' K x at one rho.

    precision = total_degree - network_term - imbalance_term; variance is
    sigma2 / precision (inf when the design is degenerate).
    """

    precision: float
    network_term: float
    imbalance_term: float
    total_degree: float
    variance: float
    rho: float
    sigma2: float = 1.0

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "network_term": self.network_term,
            "imbalance_term": self.imbalance_term,
            "total_degree": self.total_degree,
            "variance": self.variance,
            "rho": self.rho,
            "sigma2": self.sigma2,
        }


class CriterionEvaluator:
    """Factored criterion forms for repeated designs on one (net, F, rho).

    Attributes (read-only by convention):
        net, cov, rho: the instance.
        W: sparse adjacency; m: total degree.
        B: R F (n-by-(p+1)); H: La^{-1} B' for the Cholesky factor La of
            F' R F, so imbalance_term(x) = ||H x||^2.
    """

    def __init__(self, net: Network, cov: CovariateMatrix, rho: float):
        if not 0.0 <= rho < 1.0:
            raise DataError(f"rho must lie in [0, 1), got {rho}")
        if cov.n != net.n:
            raise DataError(f"covariate rows ({cov.n}) do not match node count ({net.n})")
        iso = net.isolated_nodes
        if iso.size:
            raise NotPositiveDefiniteError(
                f"criterion undefined: isolated nodes {iso[:5].tolist()} have zero degree"
            )
        self.net = net
        self.cov = cov
        self.rho = float(rho)
        self.W = net.adjacency
        self.m = float(net.m)
        R = precision_matrix(net, rho)
        self.B = R @ cov.values
        A = cov.values.T @ self.B
        try:
            self._La = linalg.cholesky(A, lower=True)
        except linalg.LinAlgError:
            raise RankError("F' R F is not positive definite; check covariate rank") from None
        self.H = linalg.solve_triangular(self._La, self.B.T, lower=True)

    def network_term(self, x) -> float:
        xv = as_sign_vector(x)
        return self.rho * float(xv @ (self.W @ xv))

    def imbalance_term(self, x) -> float:
        xv = as_sign_vector(x)
        v = self.H @ xv
        return float(v @ v)

    def breakdown(self, x, sigma2: float = 1.0) -> CriterionBreakdown:
        xv = as_sign_vector(x)
        if xv.size != self.net.n:
            raise DataError(f"design length {xv.size} does not match n={self.net.n}")
        t1 = self.network_term(xv)
        t2 = self.imbalance_term(xv)
        t = self.m - t1 - t2
        var = sigma2 / t if t > 0 else math.inf
        return CriterionBreakdown(
            precision=t,
            network_term=t1,
            imbalance_term=t2,
            total_degree=self.m,
            variance=var,
            rho=self.rho,
            sigma2=sigma2,
        )

    def precision(self, x) -> float:
        return self.breakdown(x).precision

    # Moments over uniformly random balanced designs: E[x x'] has unit
    # diagonal and constant off-diagonal c, so E[x' M x] needs only tr(M)
    # and 1' M 1.
    def expected_terms(self) -> tuple:
        c = balanced_moment_c(self.net.n)
        e_t1 = self.rho * c * self.m  # tr(W) = 0
        h_frob = float(np.sum(self.H * self.H))
        h_ones = self.H @ np.ones(self.net.n)
        e_t2 = h_frob + c * (float(h_ones @ h_ones) - h_frob)
        return e_t1, e_t2


def evaluate(net: Network, cov: CovariateMatrix, x, rho: float, sigma2: float = 1.0) -> CriterionBreakdown:
    """One-shot criterion breakdown; build a CriterionEvaluator for sweeps."""
    return CriterionEvaluator(net, cov, rho).breakdown(x, sigma2=sigma2)


def k_matrix(net: Network, cov: CovariateMatrix, rho: float) -> np.ndarray:
    """Dense precision kernel K = R - R F (F' R F)^{-1} F' R.

    Symmetric by construction (the correction is assembled as H' H).
    Intended for diagnostics and small-n work; quadratic memory.
    """
    ev = CriterionEvaluator(net, cov, rho)
    R = precision_matrix(net, rho).toarray()
    return R - ev.H.T @ ev.H


def balanced_moment_c(n: int) -> float:
    """Off-diagonal second moment E[x_i x_j] of a uniform balanced design.

    Equals -1/(n-1) for even n (arm sums exactly zero) and -1/n for odd n.
    """
    if n < 2:
        raise DataError(f"need n >= 2, got {n}")
    return -1.0 / (n - 1) if n % 2 == 0 else -1.0 / n


def expected_precision_matrix(n: int) -> np.ndarray:
    """Dense E[x x'] over uniform balanced designs: unit diagonal, constant c off it."""
    c = balanced_moment_c(n)
    C = np.full((n, n), c)
    np.fill_diagonal(C, 1.0)
    return C


def expected_precision(net: Network, cov: CovariateMatrix, rho: float) -> float:
    """E[x' K x] over uniform balanced designs, via tr(K C) = tr K + c(1'K1 - tr K).

    Computed from the factored forms; the dense K and C never appear.
    """
    ev = CriterionEvaluator(net, cov, rho)
    e_t1, e_t2 = ev.expected_terms()
    return ev.m - e_t1 - e_t2


def expected_breakdown(net: Network, cov: CovariateMatrix, rho: float) -> CriterionBreakdown:
    """Expected decomposition under uniform balanced designs (same identity)."""
    ev = CriterionEvaluator(net, cov, rho)
    e_t1, e_t2 = ev.expected_terms()
    t = ev.m - e_t1 - e_t2
    return CriterionBreakdown(
        precision=t,
        network_term=e_t1,
        imbalance_term=e_t2,
        total_degree=ev.m,
        variance=1.0 / t if t > 0 else math.inf,
        rho=rho,
    )


def pip(net: Network, cov: CovariateMatrix, x0, rho_t: float) -> float:
    """Percentage increase in precision of x0 over a random balanced design.

    1 - E[x' K x] / (x0' K x0), both sides at the true correlation rho_t.
    Raises DegenerateDesignError when x0 carries (numerically) no precision.
    """
    ev = CriterionEvaluator(net, cov, rho_t)
    t0 = ev.breakdown(x0).precision
    if t0 < 1e-10 * max(1.0, ev.m):
        raise DegenerateDesignError(
            f"design precision {t0:.3e} is degenerate; PIP undefined"
        )
    e_t1, e_t2 = ev.expected_terms()
    return 1.0 - (ev.m - e_t1 - e_t2) / t0


def _as_dense_symmetric(mat, name: str) -> np.ndarray:
    arr = mat.toarray() if sparse.issparse(mat) else np.asarray(mat, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DataError(f"{name} must be a square matrix")
    scale = max(1.0, float(np.max(np.abs(arr))))
    if np.max(np.abs(arr - arr.T)) > 1e-8 * scale:
        raise DataError(f"{name} must be symmetric")
    return arr


def quadform_correlation(a, b) -> float:
    """Exact correlation of x'Ax and x'Bx over iid +/-1 assignment vectors.

    Only off-diagonal entries matter: the correlation is the cosine of the
    strict upper triangles,
        sum_{i<j} a_ij b_ij / sqrt(sum a_ij^2) / sqrt(sum b_ij^2).
    """
    A = _as_dense_symmetric(a, "a")
    B = _as_dense_symmetric(b, "b")
    if A.shape != B.shape:
        raise DataError(f"shape mismatch: {A.shape} vs {B.shape}")
    iu = np.triu_indices(A.shape[0], k=1)
    ua, ub = A[iu], B[iu]
    na, nb = float(ua @ ua), float(ub @ ub)
    if na == 0.0 or nb == 0.0:
        raise DataError("quadratic form has no off-diagonal mass; correlation undefined")
    return float(ua @ ub) / math.sqrt(na * nb)


@dataclass(frozen=True, eq=False)
class RobustnessScatter:
    """Paired criterion values of iid designs at a working and a true rho."""

    rho0: float
    rho: float
    precision_at_rho0: np.ndarray
    precision_at_rho: np.ndarray
    sample_correlation: float


def robustness_scatter(
    net: Network,
    cov: CovariateMatrix,
    rho0: float,
    rho: float,
    n_designs: int,
    seed: int,
) -> RobustnessScatter:
    """Scatter of x'K(rho0)x against x'K(rho)x over random iid designs.

    Duplicate designs are redrawn so the sample always has variation.
    """
    if n_designs < 2:
        raise DataError(f"need at least 2 designs, got {n_designs}")
    rng = np.random.default_rng(seed)
    seen = set()
    designs = []
    attempts = 0
    while len(designs) < n_designs:
        x = rng.integers(0, 2, size=net.n) * 2.0 - 1.0
        key = x.tobytes()
        attempts += 1
        if key in seen:
            if attempts > 1000 * n_designs:
                raise DataError("could not draw enough distinct designs")
            continue
        seen.add(key)
        designs.append(x)
    ev0 = CriterionEvaluator(net, cov, rho0)
    ev1 = CriterionEvaluator(net, cov, rho)
    t0 = np.array([ev0.breakdown(x).precision for x in designs])
    t1 = np.array([ev1.breakdown(x).precision for x in designs])
    if t0.std() == 0.0 or t1.std() == 0.0:
        raise DataError("criterion values show no variation; correlation undefined")
    corr = float(np.corrcoef(t0, t1)[0, 1])
    return RobustnessScatter(
        rho0=rho0,
        rho=rho,
        precision_at_rho0=t0,
        precision_at_rho=t1,
        sample_correlation=corr,
    )


def _eig_extremes(net: Network, rho0: float) -> tuple:
    """(lam_max, lam_min) of D - rho0 W and max |lam| of W, to 1e-6 relative.

    Lanczos iterations on the sparse operators; dense fallback below the
    size where ARPACK is usable.
    """
    R = precision_matrix(net, rho0).tocsc()
    W = net.adjacency
    n = net.n
    if n < 20:
        vals = np.linalg.eigvalsh(R.toarray())
        wvals = np.linalg.eigvalsh(W.toarray())
        return float(vals[-1]), float(vals[0]), float(np.max(np.abs(wvals)))
    # Fixed start vector: ARPACK otherwise seeds from global numpy state,
    # which would make repeated runs differ in the last few bits.  Drawn
    # from a frozen generator so it is generic for structured graphs too.
    v0 = np.random.default_rng(0).standard_normal(n)
    try:
        lam_max = float(
            eigsh(R, k=1, which="LA", tol=1e-6, v0=v0, return_eigenvectors=False)[0]
        )
        # Shift-invert around zero converges fast on the smallest
        # eigenvalue of a positive definite operator.
        lam_min = float(
            eigsh(R, k=1, sigma=0.0, which="LM", tol=1e-6, v0=v0,
                  return_eigenvectors=False)[0]
        )
        lam_w = float(
            eigsh(W, k=1, which="LM", tol=1e-6, v0=v0, return_eigenvectors=False)[0]
        )
    except ArpackNoConvergence as exc:
        raise EigenSolverError(f"eigenvalue iteration did not converge: {exc}") from None
    return lam_max, lam_min, abs(lam_w)


@dataclass(frozen=True, eq=False)
class GapDiagnostics:
    """How much the fixed-rho surrogate criterion overstates the prior mean.

    gap_estimate: T(x, rho0) minus the mean of T(x, rho) over the prior
        draws.  second_derivative_term is the leading-order expansion of
        that gap and is always nonnegative; bound_a and bound_b are closed
        upper bounds (bound_b at the stored alpha).
    """

    gap_estimate: float
    second_derivative_term: float
    bound_a: float
    bound_b: float
    alpha: float
    rho0: float
    var_rho: float
    _prefactor: float = 0.0
    _total_degree: float = 0.0

    def bound_b_at(self, alpha: float) -> float:
        """Recompute bound_b for another tail level without refactoring."""
        if not 0.0 < alpha < 1.0:
            raise DataError(f"alpha must lie in (0, 1), got {alpha}")
        m = self._total_degree
        return (m + ndtri(1.0 - alpha) * math.sqrt(m)) * self._prefactor


def surrogate_gap_diagnostics(
    net: Network,
    cov: CovariateMatrix,
    x,
    rho0: float,
    prior_samples,
    alpha: float = 0.05,
) -> GapDiagnostics:
    """Estimate and bound the surrogate gap T(x, rho0) - E_rho T(x, rho).

    The second-derivative term uses the residual vector
    s = [I - F (F'RF)^{-1} F' R] x at rho0:
        0.5 * d^2/drho^2 imbalance_term = s' W F (F'RF)^{-1} F' W s,
    scaled by the prior variance.  bound_a scales with
    min(n * lam_max(R), (1 + rho0) m); bound_b replaces that factor with
    m + z_{1-alpha} sqrt(m), valid for designs respecting the connection
    cap at level alpha.
    """
    samples = np.asarray(prior_samples, dtype=np.float64).ravel()
    if samples.size == 0:
        raise DataError("prior_samples must be non-empty")
    if samples.min() < 0.0 or samples.max() >= 1.0:
        raise DataError("prior samples must lie in [0, 1)")
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha must lie in (0, 1), got {alpha}")
    xv = as_sign_vector(x)
    ev0 = CriterionEvaluator(net, cov, rho0)
    t_at_rho0 = ev0.breakdown(xv).precision
    t_mean = float(
        np.mean([CriterionEvaluator(net, cov, r).breakdown(xv).precision for r in samples])
    )
    var_rho = float(np.var(samples))

    # Residual of x after kernel-weighted projection onto the covariates.
    F = cov.values
    Rx = precision_matrix(net, rho0) @ xv
    coef = linalg.cho_solve((ev0._La, True), F.T @ Rx)
    s = xv - F @ coef
    Ws = net.adjacency @ s
    u = F.T @ Ws
    half = linalg.solve_triangular(ev0._La, u, lower=True)
    second = float(half @ half) * var_rho

    lam_max, lam_min, lam_w = _eig_extremes(net, rho0)
    m = float(net.m)
    pref = (lam_w**2) * var_rho / (lam_min**2)
    bound_a = min(net.n * lam_max, (1.0 + rho0) * m) * pref
    bound_b = (m + ndtri(1.0 - alpha) * math.sqrt(m)) * pref
    return GapDiagnostics(
        gap_estimate=t_at_rho0 - t_mean,
        second_derivative_term=second,
        bound_a=bound_a,
        bound_b=bound_b,
        alpha=alpha,
        rho0=rho0,
        var_rho=var_rho,
        _prefactor=pref,
        _total_degree=m,
    )


def concavity_probe(net: Network, cov: CovariateMatrix, x, rho_grid) -> np.ndarray:
    """Second central differences of rho -> T(x, rho) on a uniform grid.

    The precision is concave in rho on (0, 1), so every entry should be
    nonpositive up to roundoff.  The grid must be strictly inside (0, 1),
    uniform, with step at most 0.01.
    """
    grid = np.asarray(rho_grid, dtype=np.float64).ravel()
    if grid.size < 3:
        raise DataError("need at least 3 grid points for second differences")
    if grid.min() <= 0.0 or grid.max() >= 1.0:
        raise DataError("rho grid must lie strictly inside (0, 1)")
    steps = np.diff(grid)
    if steps.min() <= 0.0 or np.max(np.abs(steps - steps[0])) > 1e-12:
        raise DataError("rho grid must be strictly increasing and uniform")
    if steps[0] > 0.01 + 1e-12:
        raise DataError(f"grid step must be at most 0.01, got {steps[0]}")
    xv = as_sign_vector(x)
    t = np.array([CriterionEvaluator(net, cov, r).breakdown(xv).precision for r in grid])
    return t[2:] - 2.0 * t[1:-1] + t[:-2]
