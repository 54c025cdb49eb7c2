"""Assignment solvers for the hybrid design problem.

The hybrid problem minimizes the kernel-weighted covariate imbalance

    x' R F (F' R F)^{-1} F' R x,      R = D - rho0 W,

over +/-1 assignments subject to arm balance (|sum x| <= 1) and a
connection cap x' W x <= q, where q = sqrt(m) * z_alpha pins the standard
normal lower tail: under iid assignment x'Wx / sqrt(m) is asymptotically
standard normal, so the cap demands a cross-arm edge surplus that random
designs only reach with probability about alpha.  The covariate-only
variant drops the cap and weights imbalance by (F'F)^{-1} instead.

All solvers work off the factored form H = La^{-1} B' (objective
||H x||^2) cached on the problem; no n-by-n dense kernel is formed.  A
swap move exchanges one node from each arm, so balance is invariant; its
objective delta costs O(p) and its constraint delta O(1) given the
maintained vectors.  Reported objectives are recomputed by a fresh pass
over the returned design, never copied from solver bookkeeping.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import ndtri

from .criterion import CriterionEvaluator
from .designs import Design, as_sign_vector
from .errors import DataError, RankError
from .graph import CovariateMatrix, Network

__all__ = [
    "RELAXATION_LADDER",
    "quantile_cap",
    "HybridProblem",
    "hybrid_problem",
    "no_network_problem",
    "SolveReport",
    "random_balanced_design",
    "random_iid_design",
    "solve_exact",
    "solve_local",
    "solve_annealing",
    "AnnealingSchedule",
    "solve",
    "solve_no_network",
]

RELAXATION_LADDER = (0.001, 0.005, 0.01, 0.05, 0.1, 0.5)

_FEAS_TOL = 1e-9
_TIE_REL = 1e-10


def _cap_value(m: float, alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha must lie in (0, 1), got {alpha}")
    if m <= 0:
        raise DataError("connection cap undefined on an edgeless network")
    return math.sqrt(m) * float(ndtri(alpha))


def quantile_cap(net: Network, alpha: float) -> float:
    """Connection cap q = sqrt(m) * z_alpha (lower-tail standard normal quantile).

    Small alpha gives a strongly negative cap, forcing many cross-arm
    edges.
    """
    return _cap_value(float(net.m), alpha)


@dataclass(frozen=True, eq=False)
class HybridProblem:
    """Factored minimization instance shared by every solver.

    objective(x) = ||H x||^2; the cap applies to x' W x when W is present.
    psi holds the squared column norms of H, used by incremental moves.
    """

    n: int
    H: np.ndarray
    psi: np.ndarray
    W: Optional[object]
    cap: Optional[float]
    m: float
    rho0: Optional[float]
    alpha: Optional[float]
    kind: str

    def objective(self, x) -> float:
        v = self.H @ as_sign_vector(x)
        return float(v @ v)

    def constraint_value(self, x) -> Optional[float]:
        if self.W is None:
            return None
        xv = as_sign_vector(x)
        return float(xv @ (self.W @ xv))

    def is_feasible(self, x, cap: Optional[float] = None) -> bool:
        xv = as_sign_vector(x)
        if abs(float(xv.sum())) > 1.0 + 1e-12:
            return False
        if self.W is None:
            return True
        q = self.cap if cap is None else cap
        return self.constraint_value(xv) <= q + _FEAS_TOL


def hybrid_problem(
    net: Network, cov: CovariateMatrix, rho0: float, alpha: float
) -> HybridProblem:
    """Kernel-weighted imbalance objective with the level-alpha connection cap."""
    ev = CriterionEvaluator(net, cov, rho0)
    cap = quantile_cap(net, alpha)
    H = np.ascontiguousarray(ev.H)
    return HybridProblem(
        n=net.n,
        H=H,
        psi=np.einsum("ij,ij->j", H, H),
        W=net.adjacency,
        cap=cap,
        m=float(net.m),
        rho0=float(rho0),
        alpha=float(alpha),
        kind="network",
    )


def no_network_problem(cov: CovariateMatrix) -> HybridProblem:
    """Plain Mahalanobis imbalance x' F (F'F)^{-1} F' x, balance only."""
    F = cov.values
    A = F.T @ F
    try:
        La = linalg.cholesky(A, lower=True)
    except linalg.LinAlgError:
        raise RankError("F'F is not positive definite; check covariate rank") from None
    H = np.ascontiguousarray(linalg.solve_triangular(La, F.T, lower=True))
    return HybridProblem(
        n=cov.n,
        H=H,
        psi=np.einsum("ij,ij->j", H, H),
        W=None,
        cap=None,
        m=0.0,
        rho0=None,
        alpha=None,
        kind="covariate_only",
    )


@dataclass(frozen=True, eq=False)
class SolveReport:
    """What a solver found and how.

    objective and constraint_value are recomputed by a fresh evaluation
    pass on the returned design.  optimal is True when an exact search
    completed, False when it was truncated by the time budget, None for
    heuristics.  relaxations_applied lists the ladder levels tried after
    the requested alpha; alpha is the level in force for the reported
    design.  wall_time stays in memory only, keeping serialized output
    byte-reproducible.
    """

    design: Optional[Design]
    objective: float
    constraint_value: Optional[float]
    feasible: bool
    optimal: Optional[bool]
    method: str
    iterations: int
    restarts: int
    seed: Optional[int]
    alpha: Optional[float]
    alpha_requested: Optional[float]
    relaxations_applied: tuple
    rho0: Optional[float]
    n: int
    wall_time: float = field(repr=False, default=0.0)

    def to_record(self) -> dict:
        return {
            "n": self.n,
            "design": (
                "".join("+" if v > 0 else "-" for v in self.design.x)
                if self.design is not None
                else ""
            ),
            "objective": self.objective,
            "constraint_value": self.constraint_value,
            "feasible": self.feasible,
            "optimal": self.optimal,
            "method": self.method,
            "iterations": self.iterations,
            "restarts": self.restarts,
            "seed": self.seed,
            "alpha": self.alpha,
            "alpha_requested": self.alpha_requested,
            "relaxations_applied": list(self.relaxations_applied),
            "rho0": self.rho0,
        }


def random_balanced_design(n: int, seed) -> Design:
    """Uniform assignment with arm sizes ceil(n/2) / floor(n/2).

    For odd n the sign of the larger arm is a fair coin.
    """
    if n < 2:
        raise DataError(f"need n >= 2, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = n // 2
    if n % 2 == 1 and rng.random() < 0.5:
        k += 1
    x = -np.ones(n)
    x[rng.choice(n, size=k, replace=False)] = 1.0
    return Design(x)


def random_iid_design(n: int, seed) -> Design:
    if n < 1:
        raise DataError(f"need n >= 1, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return Design(rng.integers(0, 2, size=n) * 2.0 - 1.0)


def _canonical(x: np.ndarray) -> np.ndarray:
    """Quotient the global sign flip: force the first coordinate positive."""
    return x if x[0] > 0 else -x


def _feas_cap(cap: float) -> float:
    return cap + _FEAS_TOL


def _report(
    problem: HybridProblem,
    x: Optional[np.ndarray],
    *,
    feasible: bool,
    optimal: Optional[bool],
    method: str,
    iterations: int,
    restarts: int,
    seed: Optional[int],
    alpha_used: Optional[float],
    relaxations: tuple,
    started: float,
) -> SolveReport:
    if x is None:
        obj, cval, design = math.inf, None, None
    else:
        design = Design(_canonical(np.asarray(x, dtype=np.float64)))
        obj = problem.objective(design.x)
        cval = problem.constraint_value(design.x)
    return SolveReport(
        design=design,
        objective=obj,
        constraint_value=cval,
        feasible=feasible,
        optimal=optimal,
        method=method,
        iterations=iterations,
        restarts=restarts,
        seed=seed,
        alpha=alpha_used,
        alpha_requested=problem.alpha,
        relaxations_applied=relaxations,
        rho0=problem.rho0,
        n=problem.n,
        wall_time=time.perf_counter() - started,
    )


def _ladder_schedule(problem: HybridProblem, relax: bool):
    """(alpha, cap) pairs to try: the requested level, then the ladder above it."""
    if problem.W is None:
        return [(None, None)]
    levels = [(problem.alpha, problem.cap)]
    if relax:
        for a in RELAXATION_LADDER:
            if a > (problem.alpha or 0.0) + 1e-15:
                levels.append((a, _cap_value(problem.m, a)))
    return levels


# ---------------------------------------------------------------------------
# Exact search: exhaustive scan to n = 16, branch and bound to n = 30.


def _enumerate_exact(problem: HybridProblem, cap: Optional[float]):
    """Exhaustive scan over the sign-flip quotient, in lexicographic order.

    Row index equals the lexicographic rank of the tail bits (-1 before
    +1), so the first index attaining the minimum is the canonical
    tie-break winner.
    """
    n = problem.n
    count = 1 << (n - 1)
    shifts = np.arange(n - 2, -1, -1, dtype=np.uint32)
    bits = (np.arange(count, dtype=np.uint32)[:, None] >> shifts[None, :]) & 1
    X = np.empty((count, n))
    X[:, 0] = 1.0
    X[:, 1:] = bits * 2.0 - 1.0
    mask = np.abs(X.sum(axis=1)) <= 1.0 + 1e-12
    if problem.W is not None:
        Wd = problem.W.toarray()
        cvals = np.einsum("ij,ij->i", X @ Wd, X)
        mask &= cvals <= _feas_cap(cap)
    if not mask.any():
        return None, int(count)
    V = X @ problem.H.T
    obj = np.einsum("ij,ij->i", V, V)
    obj = np.where(mask, obj, np.inf)
    best = float(obj.min())
    tie = _TIE_REL * max(1.0, best)
    idx = int(np.flatnonzero(obj <= best + tie)[0])
    return X[idx].copy(), int(count)


def _bnb_exact(problem: HybridProblem, cap: Optional[float], deadline: Optional[float]):
    """Depth-first branch and bound in lexicographic order, x_0 fixed to +1.

    Objective bound: ||H x|| can shrink by at most the summed norms of the
    unassigned columns, so max(0, ||v|| - rad)^2 lower-bounds every
    completion.  Constraint bound: each edge with an unassigned endpoint
    contributes at least -2.  Balance prunes by the exact parity argument.
    Returns (best_x, nodes_visited, truncated).
    """
    n = problem.n
    hcols = np.ascontiguousarray(problem.H.T)  # row i = column i of H
    norms = np.sqrt(problem.psi)
    rad = np.zeros(n + 1)
    rad[:n] = np.cumsum(norms[::-1])[::-1]

    if problem.W is not None:
        Wd = problem.W.toarray()
        capv = _feas_cap(cap)
        undetermined = np.zeros(n + 1)
        iu, ju = np.nonzero(np.triu(Wd))
        for b in ju:
            undetermined[: b + 1] += 1.0
    else:
        Wd = None
        capv = math.inf
        undetermined = np.zeros(n + 1)

    state = {
        "best_obj": math.inf,
        "best_x": None,
        "from_dfs": False,
        "nodes": 0,
        "truncated": False,
    }
    primer = _local_core(problem, cap, restarts=4, seed=0, deadline=deadline)
    if primer[0] is not None:
        state["best_x"] = _canonical(primer[0]).copy()
        state["best_obj"] = primer[1]

    x = np.zeros(n)
    x[0] = 1.0

    def rec(depth: int, v: np.ndarray, psum: float, cpart: float) -> None:
        if state["truncated"]:
            return
        state["nodes"] += 1
        if (
            deadline is not None
            and state["nodes"] % 1024 == 0
            and time.perf_counter() > deadline
        ):
            state["truncated"] = True
            return
        k = n - depth
        apsum = abs(psum)
        if apsum > k + 1:
            return
        if (int(apsum) + k) % 2 == 0 and apsum > k:
            return
        if Wd is not None and cpart - 2.0 * undetermined[depth] > capv:
            return
        nv = float(np.linalg.norm(v))
        lb = max(0.0, nv - rad[depth]) ** 2
        tie = _TIE_REL * max(1.0, min(state["best_obj"], 1e300))
        if state["from_dfs"]:
            if lb >= state["best_obj"] - tie:
                return
        elif lb > state["best_obj"] + tie:
            return
        if depth == n:
            obj = nv * nv
            if obj < state["best_obj"] - tie or (
                not state["from_dfs"] and obj <= state["best_obj"] + tie
            ):
                state["best_obj"] = obj
                state["best_x"] = x.copy()
                state["from_dfs"] = True
            return
        row = Wd[depth, :depth] if Wd is not None else None
        for sign in (-1.0, 1.0):
            x[depth] = sign
            dc = 2.0 * sign * float(row @ x[:depth]) if Wd is not None else 0.0
            rec(depth + 1, v + sign * hcols[depth], psum + sign, cpart + dc)
            if state["truncated"]:
                break
        x[depth] = 0.0

    rec(1, hcols[0].copy(), 1.0, 0.0)
    return state["best_x"], state["nodes"], state["truncated"]


def solve_exact(
    problem: HybridProblem,
    time_budget: Optional[float] = None,
    relax: bool = True,
) -> SolveReport:
    """Provably optimal assignment for n up to 30.

    Exhaustive scan of the sign-flip quotient up to n = 16, branch and
    bound above.  Ties resolve to the lexicographically smallest design
    with x_0 = +1.  With relax=True an infeasible cap is retried up the
    alpha ladder; otherwise infeasibility is reported as such.
    """
    if problem.n > 30:
        raise DataError(f"exact search is limited to n <= 30, got n={problem.n}")
    started = time.perf_counter()
    deadline = None if time_budget is None else started + time_budget
    relaxations = []
    for alpha, cap in _ladder_schedule(problem, relax):
        if alpha is not None and problem.alpha is not None and alpha != problem.alpha:
            relaxations.append(alpha)
        if problem.n <= 16:
            best_x, nodes = _enumerate_exact(problem, cap)
            truncated = False
        else:
            best_x, nodes, truncated = _bnb_exact(problem, cap, deadline)
        if best_x is not None:
            return _report(
                problem,
                best_x,
                feasible=True,
                optimal=not truncated,
                method="exact",
                iterations=nodes,
                restarts=0,
                seed=None,
                alpha_used=alpha,
                relaxations=tuple(relaxations),
                started=started,
            )
        if truncated:
            break
    return _report(
        problem,
        None,
        feasible=False,
        optimal=not truncated if problem.W is not None else True,
        method="exact",
        iterations=0,
        restarts=0,
        seed=None,
        alpha_used=None,
        relaxations=tuple(relaxations),
        started=started,
    )


# ---------------------------------------------------------------------------
# Local search: balanced-pair swaps, best improvement, multistart.


def _row_update(W, wx: np.ndarray, node: int, delta: float) -> None:
    lo, hi = W.indptr[node], W.indptr[node + 1]
    wx[W.indices[lo:hi]] += delta * W.data[lo:hi]


def _repair(problem: HybridProblem, cap: float, x: np.ndarray):
    """Greedy swaps that lower x'Wx until it meets the cap; balance preserved."""
    W = problem.W
    wx = W @ x
    c = float(x @ wx)
    capv = _feas_cap(cap)
    iters = 0
    while c > capv:
        plus = np.flatnonzero(x > 0)
        minus = np.flatnonzero(x < 0)
        s = x * wx
        best_dc, best_pair = -1e-12, None
        for lo in range(0, plus.size, 64):
            P = plus[lo : lo + 64]
            wblk = W[P][:, minus].toarray()
            dc = -4.0 * (s[P][:, None] + s[minus][None, :] + 2.0 * wblk)
            k = int(np.argmin(dc))
            val = float(dc.flat[k])
            if val < best_dc:
                best_dc = val
                best_pair = (int(P[k // minus.size]), int(minus[k % minus.size]))
        if best_pair is None:
            return False, x, iters
        i, j = best_pair
        x[i], x[j] = -1.0, 1.0
        _row_update(W, wx, i, -2.0)
        _row_update(W, wx, j, 2.0)
        c += best_dc
        iters += 1
        if iters % 64 == 0:
            wx = W @ x
            c = float(x @ wx)
    return True, x, iters


def _descend(
    problem: HybridProblem,
    cap: Optional[float],
    x: np.ndarray,
    deadline: Optional[float] = None,
):
    """Best-improvement swap descent on the objective, feasibility preserved."""
    H, psi, W = problem.H, problem.psi, problem.W
    v = H @ x
    obj = float(v @ v)
    if W is not None:
        wx = W @ x
        c = float(x @ wx)
        capv = _feas_cap(cap)
    iters = 0
    while True:
        if deadline is not None and time.perf_counter() > deadline:
            break
        plus = np.flatnonzero(x > 0)
        minus = np.flatnonzero(x < 0)
        if plus.size == 0 or minus.size == 0:
            break
        a = v @ H
        if W is not None:
            s = x * wx
        tol_imp = 1e-10 * max(1.0, obj)
        best_delta, best_pair, best_dc = -tol_imp, None, 0.0
        for lo in range(0, plus.size, 64):
            P = plus[lo : lo + 64]
            G = H[:, P].T @ H[:, minus]
            delta = -4.0 * (a[P][:, None] - a[minus][None, :]) + 4.0 * (
                psi[P][:, None] - 2.0 * G + psi[minus][None, :]
            )
            if W is not None:
                wblk = W[P][:, minus].toarray()
                dc = -4.0 * (s[P][:, None] + s[minus][None, :] + 2.0 * wblk)
                delta = np.where(c + dc <= capv, delta, np.inf)
            k = int(np.argmin(delta))
            val = float(delta.flat[k])
            if val < best_delta:
                best_delta = val
                best_pair = (int(P[k // minus.size]), int(minus[k % minus.size]))
                if W is not None:
                    best_dc = float(dc.flat[k])
        if best_pair is None:
            break
        i, j = best_pair
        x[i], x[j] = -1.0, 1.0
        v += -2.0 * H[:, i] + 2.0 * H[:, j]
        obj += best_delta
        if W is not None:
            _row_update(W, wx, i, -2.0)
            _row_update(W, wx, j, 2.0)
            c += best_dc
        iters += 1
        if iters % 64 == 0:
            v = H @ x
            obj = float(v @ v)
            if W is not None:
                wx = W @ x
                c = float(x @ wx)
    return x, float(problem.objective(x)), iters


def _local_core(
    problem: HybridProblem,
    cap: Optional[float],
    restarts: int,
    seed: int,
    deadline: Optional[float] = None,
):
    """Multistart repair-then-descend; returns (best_x or None, best_obj, iterations)."""
    rng = np.random.default_rng(seed)
    best_x, best_obj = None, math.inf
    total_iters = 0
    for _ in range(restarts):
        # One scalar draw per restart keeps the seed stream a prefix of any
        # longer run, so more restarts can only improve the result.
        child_seed = int(rng.integers(0, 2**63 - 1))
        if deadline is not None and time.perf_counter() > deadline:
            break
        x = random_balanced_design(problem.n, child_seed).x.copy()
        if problem.W is not None:
            ok, x, rep_iters = _repair(problem, cap, x)
            total_iters += rep_iters
            if not ok:
                continue
        x, obj, iters = _descend(problem, cap, x, deadline)
        total_iters += iters
        if obj < best_obj - 1e-15:
            best_x, best_obj = x.copy(), obj
    return best_x, best_obj, total_iters


def solve_local(
    problem: HybridProblem,
    restarts: int = 32,
    seed: int = 0,
    time_budget: Optional[float] = None,
    relax: bool = True,
) -> SolveReport:
    """Multistart best-improvement swap descent.

    Each restart draws a balanced design, repairs it into the cap region
    by greedy constraint-lowering swaps, then descends on the objective.
    If every restart fails to reach feasibility the alpha ladder applies.
    """
    if restarts < 1:
        raise DataError(f"need at least 1 restart, got {restarts}")
    started = time.perf_counter()
    deadline = None if time_budget is None else started + time_budget
    relaxations = []
    total_iters = 0
    for level, (alpha, cap) in enumerate(_ladder_schedule(problem, relax)):
        if level > 0:
            relaxations.append(alpha)
        level_seed = seed if level == 0 else np.random.default_rng((seed, level)).integers(
            0, 2**63 - 1
        )
        best_x, _, iters = _local_core(problem, cap, restarts, int(level_seed), deadline)
        total_iters += iters
        if best_x is not None:
            return _report(
                problem,
                best_x,
                feasible=True,
                optimal=None,
                method="local",
                iterations=total_iters,
                restarts=restarts,
                seed=seed,
                alpha_used=alpha,
                relaxations=tuple(relaxations),
                started=started,
            )
        if deadline is not None and time.perf_counter() > deadline:
            break
    return _report(
        problem,
        None,
        feasible=False,
        optimal=None,
        method="local",
        iterations=total_iters,
        restarts=restarts,
        seed=seed,
        alpha_used=None,
        relaxations=tuple(relaxations),
        started=started,
    )


# ---------------------------------------------------------------------------
# Simulated annealing with a quadratic cap penalty.


@dataclass(frozen=True)
class AnnealingSchedule:
    """Geometric cooling schedule.

    t0=None picks the initial temperature from the spread of sampled move
    deltas; t0=0 degenerates to randomized descent.  The penalty weight
    multiplies by penalty_growth at any temperature reset that ends with
    the cap still violated.
    """

    t0: Optional[float] = None
    cooling: float = 0.92
    n_temps: int = 80
    moves_per_temp: Optional[int] = None
    penalty0: float = 1.0
    penalty_growth: float = 10.0


def _anneal_core(
    problem: HybridProblem,
    cap: Optional[float],
    schedule: AnnealingSchedule,
    rng: np.random.Generator,
    deadline: Optional[float],
):
    n = problem.n
    H, psi, W = problem.H, problem.psi, problem.W
    x = random_balanced_design(n, rng).x.copy()
    v = H @ x
    obj = float(v @ v)
    if W is not None:
        wx = W @ x
        c = float(x @ wx)
        capv = _feas_cap(cap)
    mu = schedule.penalty0
    moves = schedule.moves_per_temp or max(4 * n, 64)
    accepted = 0
    # Track the best feasible point along the whole trajectory; the final
    # state of a cooled chain is often worse than its best excursion.
    best_x, best_obj = None, math.inf
    if W is None or c <= capv:
        best_x, best_obj = x.copy(), obj

    def viol(cval: float) -> float:
        return max(0.0, cval - cap) if W is not None else 0.0

    def propose():
        while True:
            i = int(rng.integers(n))
            if x[i] > 0:
                break
        while True:
            j = int(rng.integers(n))
            if x[j] < 0:
                break
        return i, j

    if schedule.t0 is None:
        # Calibrate from the magnitude of a few sampled move deltas.
        probe = []
        for _ in range(32):
            i, j = propose()
            dv = -2.0 * H[:, i] + 2.0 * H[:, j]
            probe.append(abs(2.0 * float(v @ dv) + float(dv @ dv)))
        t0 = max(1e-9, 2.0 * float(np.mean(probe)))
    else:
        t0 = schedule.t0

    temps = [t0 * schedule.cooling**k for k in range(schedule.n_temps)]
    for t in temps:
        if deadline is not None and time.perf_counter() > deadline:
            break
        for _ in range(moves):
            i, j = propose()
            dv = -2.0 * H[:, i] + 2.0 * H[:, j]
            d_obj = 2.0 * float(v @ dv) + float(dv @ dv)
            if W is not None:
                w_ij = 0.0
                lo, hi = W.indptr[i], W.indptr[i + 1]
                cols = W.indices[lo:hi]
                pos = np.searchsorted(cols, j)
                if pos < cols.size and cols[pos] == j:
                    w_ij = float(W.data[lo:hi][pos])
                dc = -4.0 * (x[i] * wx[i] + x[j] * wx[j] + 2.0 * w_ij)
                d_pen = mu * (viol(c + dc) ** 2 - viol(c) ** 2)
            else:
                dc = 0.0
                d_pen = 0.0
            d_total = d_obj + d_pen
            if d_total <= 0.0 or (t > 0.0 and rng.random() < math.exp(-d_total / t)):
                x[i], x[j] = -1.0, 1.0
                v += dv
                obj += d_obj
                if W is not None:
                    _row_update(W, wx, i, -2.0)
                    _row_update(W, wx, j, 2.0)
                    c += dc
                accepted += 1
                if accepted % 1024 == 0:
                    v = H @ x
                    obj = float(v @ v)
                    if W is not None:
                        wx = W @ x
                        c = float(x @ wx)
                if (W is None or c <= capv) and obj < best_obj - 1e-12:
                    best_x, best_obj = x.copy(), obj
        if W is not None and c > capv:
            mu *= schedule.penalty_growth
    return (best_x if best_x is not None else x), accepted


def solve_annealing(
    problem: HybridProblem,
    schedule: Optional[AnnealingSchedule] = None,
    seed: int = 0,
    time_budget: Optional[float] = None,
    relax: bool = True,
) -> SolveReport:
    """Penalized annealing over balanced swaps, polished by local descent.

    The cap enters as mu * max(0, x'Wx - q)^2; mu escalates whenever a
    temperature ends in violation.  The final point is repaired if needed
    and passed through the descent used by solve_local; only genuinely
    feasible finals are reported feasible.
    """
    schedule = schedule or AnnealingSchedule()
    started = time.perf_counter()
    deadline = None if time_budget is None else started + time_budget
    relaxations = []
    total_iters = 0
    for level, (alpha, cap) in enumerate(_ladder_schedule(problem, relax)):
        if level > 0:
            relaxations.append(alpha)
        rng = np.random.default_rng(seed if level == 0 else (seed, level))
        x, accepted = _anneal_core(problem, cap, schedule, rng, deadline)
        total_iters += accepted
        if problem.W is not None and not problem.is_feasible(x, cap):
            ok, x, rep_iters = _repair(problem, cap, x)
            total_iters += rep_iters
            if not ok:
                continue
        x, _, iters = _descend(problem, cap, x, deadline)
        total_iters += iters
        return _report(
            problem,
            x,
            feasible=True,
            optimal=None,
            method="annealing",
            iterations=total_iters,
            restarts=1,
            seed=seed,
            alpha_used=alpha,
            relaxations=tuple(relaxations),
            started=started,
        )
    return _report(
        problem,
        None,
        feasible=False,
        optimal=None,
        method="annealing",
        iterations=total_iters,
        restarts=1,
        seed=seed,
        alpha_used=None,
        relaxations=tuple(relaxations),
        started=started,
    )


def solve(
    problem: HybridProblem,
    method: str = "auto",
    seed: int = 0,
    restarts: int = 32,
    schedule: Optional[AnnealingSchedule] = None,
    time_budget: Optional[float] = None,
    relax: bool = True,
) -> SolveReport:
    """Dispatch: exact to n = 16, local search to n = 2000, annealing above."""
    if method == "auto":
        if problem.n <= 16:
            method = "exact"
        elif problem.n <= 2000:
            method = "local"
        else:
            method = "annealing"
    if method == "exact":
        return solve_exact(problem, time_budget=time_budget, relax=relax)
    if method == "local":
        return solve_local(
            problem, restarts=restarts, seed=seed, time_budget=time_budget, relax=relax
        )
    if method == "annealing":
        return solve_annealing(
            problem, schedule=schedule, seed=seed, time_budget=time_budget, relax=relax
        )
    raise DataError(f"unknown method {method!r}; use auto, exact, local or annealing")


def solve_no_network(cov: CovariateMatrix, method: str = "auto", **kwargs) -> SolveReport:
    """Balance-only Mahalanobis minimization over the same move set."""
    return solve(no_network_problem(cov), method=method, **kwargs)
