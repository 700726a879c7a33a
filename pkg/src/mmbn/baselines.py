"""Comparison trainers: max-margin Markov networks and conditional likelihood.

The Markov-network trainer solves

    min 1/2 ||v||^2 + C sum(xi)   s.t.  Delta v >= delta - xi_i,

through the barrier engine in its ball form (``||w|| <= 1``, maximize the
margin ``gamma``).  A ball-form solution with per-example slacks ``eps`` maps
back by ``v = w / gamma`` and ``xi = eps / gamma``.  Matching the two sets of
stationarity conditions gives the constant the ball problem with penalty ``B``
actually solves for:

    C = B gamma / (1 - B gamma^2 sum(eps)),

which reduces to ``B gamma`` only when every slack is zero.  ``solve_m3n``
finds the ``B`` that reproduces a requested ``C`` by a scalar root search.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize
import scipy.special

from . import barrier
from .barrier import BarrierConfig, Solution
from .dataset import DiscreteDataset
from .errors import MMBNError, NotNormalized
from .margin import MarginProblem
from .network import NetworkStructure, class_grid_positions, feature_indices, is_normalized, log_prob

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- M3N


@dataclass
class M3NSolution:
    """Both forms of a Markov-network solution.

    ``w``, ``xi`` and ``objective`` refer to the norm-penalized problem;
    ``ball`` is the underlying barrier solution (``||ball.w|| <= 1``) for
    penalty ``B``.  ``C`` is the constant actually achieved.
    """

    w: np.ndarray
    xi: np.ndarray
    objective: float
    C: float
    B: float
    ball: Solution
    converged: bool

    @property
    def gamma(self) -> float:
        return self.ball.gamma


#: The ball problem's objective scales with B, which is small for small C, so
#: the Markov-network solver follows the path four decades further.
M3N_CONFIG = BarrierConfig(outer_iters=11)


def effective_c(solution: Solution, B: float) -> float:
    """Penalty constant of the norm-penalized problem solved by a ball solution."""
    denom = 1.0 - B * solution.gamma**2 * float(np.sum(solution.eps))
    return B * solution.gamma / denom if denom > 0 else np.inf


def m3n_objective(v: np.ndarray, xi: np.ndarray, C: float) -> float:
    return 0.5 * float(v @ v) + C * float(np.sum(xi))


def _ball_solve(problem: MarginProblem, structure: NetworkStructure, B: float, config: BarrierConfig) -> Solution:
    return barrier.solve(problem.with_reg(B), structure, config, "euclidean_ball")


def _exact_slacks(problem: MarginProblem, v: np.ndarray) -> np.ndarray:
    xi = np.zeros(problem.n_examples)
    np.maximum.at(xi, problem.example, problem.margin - problem.delta @ v)
    return xi


def zero_is_optimal(problem: MarginProblem, tol: float = 1e-9) -> bool:
    """Whether ``v = 0`` solves the norm-penalized problem.

    The quadratic has zero gradient at the origin, so this holds for every
    ``C`` at once exactly when zero minimizes the summed hinge losses, i.e.
    when multipliers on each example's worst rows, summing to one per
    example, cancel in ``Delta^T alpha``.
    """
    worst = np.full(problem.n_examples, -np.inf)
    np.maximum.at(worst, problem.example, problem.margin)
    act = np.flatnonzero(problem.margin >= worst[problem.example] - tol)
    d, t = problem.n_features, problem.n_examples
    mat = np.zeros((d + t, len(act)))
    mat[:d] = problem.delta[act].toarray().T
    mat[d + problem.example[act], np.arange(len(act))] = 1.0
    rhs = np.concatenate([np.zeros(d), np.ones(t)])
    _, resid = scipy.optimize.nnls(mat, rhs, maxiter=50 * max(1, len(act)))
    return bool(resid <= tol * np.sqrt(t))


def solve_m3n(problem: MarginProblem, structure: NetworkStructure, C: float,
              config: BarrierConfig = M3N_CONFIG, rtol: float = 1e-8, max_expand: int = 40) -> M3NSolution:
    """Solve the norm-penalized soft-margin problem for constant ``C``."""
    if not C > 0:
        raise ValueError("C must be positive")
    if problem.n_examples < 1:
        raise ValueError("problem has no examples")
    if zero_is_optimal(problem):
        # The ball constraint is then inactive for every B and the penalty
        # mapping degenerates; the answer is known in closed form.
        sol = _ball_solve(problem, structure, C, config)
        v = np.zeros(problem.n_features)
        xi = _exact_slacks(problem, v)
        return M3NSolution(w=v, xi=xi, objective=m3n_objective(v, xi, C), C=float(C), B=float(C), ball=sol,
                           converged=sol.converged)
    cache: dict[float, Solution] = {}

    def gap(log_b: float) -> float:
        if log_b not in cache:
            cache[log_b] = _ball_solve(problem, structure, float(np.exp(log_b)), config)
        return float(np.log(effective_c(cache[log_b], float(np.exp(log_b))))) - np.log(C)

    lo = hi = float(np.log(C))
    g_lo = g_hi = gap(lo)
    step = np.log(10.0)
    for _ in range(max_expand):
        if g_lo <= 0 <= g_hi:
            break
        if g_lo > 0:
            hi, g_hi = lo, g_lo
            lo -= step
            g_lo = gap(lo)
        else:
            lo, g_lo = hi, g_hi
            hi += step
            g_hi = gap(hi)
    else:
        raise MMBNError(f"could not bracket the ball penalty for C = {C}")
    if g_lo == 0:
        log_b = lo
    elif g_hi == 0:
        log_b = hi
    else:
        log_b = scipy.optimize.brentq(gap, lo, hi, xtol=1e-12, rtol=rtol)
    gap(log_b)
    sol, B = cache[log_b], float(np.exp(log_b))
    v, xi = sol.w / sol.gamma, sol.eps / sol.gamma
    return M3NSolution(w=v, xi=xi, objective=m3n_objective(v, xi, C), C=effective_c(sol, B), B=B,
                       ball=sol, converged=sol.converged)


def _kkt_at(problem: MarginProblem, v, xi, C, slack, active_tol) -> dict[str, float]:
    act = np.flatnonzero(slack <= active_tol)
    d, t = problem.n_features, problem.n_examples
    mat = np.zeros((d + t, len(act)))
    mat[:d] = problem.delta[act].toarray().T
    mat[d + problem.example[act], np.arange(len(act))] = 1.0
    rhs = np.concatenate([v, np.full(t, float(C))])
    alpha, resid = scipy.optimize.nnls(mat, rhs, maxiter=50 * max(1, len(act)))
    return {
        "primal": float(max(0.0, np.max(-slack))),
        "stationarity": float(resid),
        "complementarity": float(np.max(np.abs(alpha * slack[act]))) if len(act) else 0.0,
    }


def m3n_kkt_residuals(problem: MarginProblem, v: np.ndarray, xi: np.ndarray, C: float,
                      active_tols=(1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)) -> dict[str, float]:
    """Optimality residuals of ``(v, xi)`` for the norm-penalized problem.

    For each tolerance, multipliers are fitted by nonnegative least squares
    on the rows whose slack is within it (rows with ``Delta = 0`` and
    ``delta = 0`` carry ``xi >= 0``).  The candidate active set with the
    smallest worst residual is reported, as primal violation, stationarity
    and complementarity.
    """
    v, xi = np.asarray(v, float), np.asarray(xi, float)
    slack = problem.delta @ v - problem.margin + xi[problem.example]
    best = None
    for tol in active_tols:
        r = _kkt_at(problem, v, xi, C, slack, tol)
        if best is None or max(r.values()) < max(best.values()):
            best = r
    return best


# ---------------------------------------------------------------- MCL


@dataclass(frozen=True)
class MclConfig:
    max_iters: int = 500
    grad_tol: float = 1e-6
    l2_strength: float = 0.0
    step_init: float = 1.0
    step_grow: float = 2.0
    step_max: float = 1e4
    ls_shrink: float = 0.5
    ls_alpha: float = 1e-4

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.l2_strength < 0:
            raise ValueError("l2_strength must be nonnegative")
        if not 0 < self.ls_shrink < 1 or not 0 < self.ls_alpha < 0.5:
            raise ValueError("bad line-search parameters")


@dataclass
class MclResult:
    w: np.ndarray
    objective: float
    iters: int
    converged: bool
    history: list[float] = field(default_factory=list)


def softmax_params(structure: NetworkStructure, omega: np.ndarray) -> np.ndarray:
    """Normalized log-weights ``w = omega - logsumexp(column)``."""
    starts, col = structure.column_starts, structure.feature_column
    top = np.maximum.reduceat(omega, starts)
    lse = np.log(np.add.reduceat(np.exp(omega - top[col]), starts)) + top
    return omega - lse[col]


class ConditionalLikelihood:
    """``sum_i log P(y_i | x_i)`` of the softmax-parameterized network."""

    def __init__(self, structure: NetworkStructure, data: DiscreteDataset, l2_strength: float = 0.0):
        if len(data) < 1:
            raise ValueError("dataset is empty")
        self.structure = structure
        self.l2 = float(l2_strength)
        grid = structure.class_grid
        x = np.repeat(data.rows[:, None, :], len(grid), axis=1)
        x[:, :, list(structure.class_vars)] = grid[None, :, :]
        self.idx = feature_indices(structure, x, structure.class_families)  # (T, M, K)
        self.true_pos = class_grid_positions(structure, data.labels)

    def _scores(self, w):
        return w[self.idx].sum(axis=-1)

    def value(self, omega: np.ndarray) -> float:
        w = softmax_params(self.structure, omega)
        s = self._scores(w)
        t = len(s)
        ll = s[np.arange(t), self.true_pos] - scipy.special.logsumexp(s, axis=1)
        return float(ll.sum()) - 0.5 * self.l2 * float(omega @ omega)

    def value_and_grad(self, omega: np.ndarray) -> tuple[float, np.ndarray]:
        st = self.structure
        w = softmax_params(st, omega)
        s = self._scores(w)
        t, m, k = self.idx.shape
        lse = scipy.special.logsumexp(s, axis=1)
        f = float((s[np.arange(t), self.true_pos] - lse).sum()) - 0.5 * self.l2 * float(omega @ omega)
        p = np.exp(s - lse[:, None])
        d = st.n_features
        g_w = np.bincount(self.idx[np.arange(t), self.true_pos].ravel(), minlength=d).astype(float)
        g_w -= np.bincount(self.idx.ravel(), weights=np.repeat(p.ravel(), k), minlength=d)
        theta = np.exp(w)
        col_sum = np.add.reduceat(g_w, st.column_starts)
        g = g_w - theta * col_sum[st.feature_column] - self.l2 * omega
        return f, g


def solve_mcl(structure: NetworkStructure, data: DiscreteDataset, config: MclConfig = MclConfig(),
              omega0: np.ndarray | None = None) -> MclResult:
    """Gradient ascent with backtracking on the conditional log-likelihood.

    Each search starts from a Barzilai-Borwein step and backtracks until the
    Armijo condition holds, so accepted steps never decrease the objective.

    The softmax parameterization keeps every iterate normalized.  CPTs
    outside the class families do not affect the objective and stay at
    their starting values (uniform by default).
    """
    obj = ConditionalLikelihood(structure, data, config.l2_strength)
    omega = np.zeros(structure.n_features) if omega0 is None else np.array(omega0, float)
    f, g = obj.value_and_grad(omega)
    history = [f]
    step, converged, it = config.step_init, False, 0
    for it in range(config.max_iters):
        gg = float(g @ g)
        if np.sqrt(gg) <= config.grad_tol:
            converged = True
            break
        t = step
        while True:
            trial = omega + t * g
            f_new = obj.value(trial)
            if f_new >= f + config.ls_alpha * t * gg:
                break
            t *= config.ls_shrink
            if t < 1e-16:
                break
        if not f_new >= f + config.ls_alpha * t * gg:
            log.debug("mcl line search stalled at iteration %d", it)
            break
        g_old = g
        omega = trial
        f, g = obj.value_and_grad(omega)
        history.append(f)
        # Barzilai-Borwein trial step for the next search, capped growth.
        dg = g_old - g
        curv = float(dg @ g_old)
        bb = t * gg / curv if curv > 0 else np.inf
        step = float(np.clip(bb, config.step_init * 1e-6, min(t * config.step_grow**4, config.step_max)))
    else:
        it = config.max_iters
    if not converged:
        converged = bool(np.linalg.norm(g) <= config.grad_tol)
    if not converged:
        log.info("mcl stopped after %d iterations with |grad| = %.3g", it, np.linalg.norm(g))
    return MclResult(softmax_params(structure, omega), f, it, converged, history)


def joint_log_likelihood(structure: NetworkStructure, w: np.ndarray, data: DiscreteDataset) -> float:
    """``sum_i log P(x_i, y_i)`` under normalized parameters."""
    if not is_normalized(structure, w):
        raise NotNormalized("joint likelihood needs normalized parameters")
    return float(np.sum(log_prob(structure, w, data.rows)))
