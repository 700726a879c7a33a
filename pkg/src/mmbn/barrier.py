"""Path-following log-barrier solver for the relaxed soft-margin problem.

Minimizes ``1/(2 gamma^2) + B * sum(eps)`` over ``(w, gamma, eps)`` subject to

* ``Delta(i, y) w - gamma delta(i, y) + eps_i >= 0`` for every row,
* ``sum_a exp(w_jab) <= 1`` for every CPT column (``subnormalization``), or
  ``w.w <= 1`` (``euclidean_ball``, the Markov-network baseline),
* ``gamma >= 0``, and, for the subnormalization set, ``w >= w_floor``.

Each constraint ``g(z) >= 0`` is replaced by ``-mu log g(z)``; Newton's method
minimizes the barrier function for a decreasing sequence of ``mu``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Literal

import numpy as np
import scipy.linalg

from .errors import InfeasiblePoint, LinearSolveFailure, NoFeasibleStart
from .margin import MarginProblem
from .network import NetworkStructure

log = logging.getLogger(__name__)

ConstraintSet = Literal["subnormalization", "euclidean_ball"]


@dataclass(frozen=True)
class BarrierConfig:
    mu_initial: float = 1.0
    mu_shrink: float = 10.0
    outer_iters: int = 7
    newton_tol: float = 1e-8
    max_newton_iters: int = 20
    ls_shrink: float = 0.5
    ls_alpha: float = 1e-4
    w_floor: float = -30.0
    # Relative Newton-decrement stop; see damped_newton.
    decrement_tol: float = 1e-14
    # Starting margin for initial_point.
    gamma_init: float = 1.0
    # Optional early stop once (#constraints * mu) drops below this.
    gap_tol: float | None = None
    # Multiplicity of the ball barrier -log(1 - w.w); None means one copy
    # per weight.  A single copy lets the iterates pin themselves to the
    # sphere, where tangential steps shrink to nothing.
    ball_weight: float | None = None

    def __post_init__(self):
        if not self.mu_initial > 0:
            raise ValueError("mu_initial must be positive")
        if not self.mu_shrink > 1:
            raise ValueError("mu_shrink must exceed 1")
        if self.outer_iters < 1 or self.max_newton_iters < 0:
            raise ValueError("iteration counts must be positive")
        if not self.w_floor < 0:
            raise ValueError("w_floor must be negative")
        if not 0 < self.ls_shrink < 1 or not 0 < self.ls_alpha < 0.5:
            raise ValueError("bad line-search parameters")
        if self.ball_weight is not None and not self.ball_weight > 0:
            raise ValueError("ball_weight must be positive")


@dataclass
class SolverState:
    w: np.ndarray
    gamma: float
    eps: np.ndarray
    mu: float


@dataclass
class Solution:
    w: np.ndarray
    gamma: float
    eps: np.ndarray
    objective: float
    margin_residuals: np.ndarray
    norm_residuals: np.ndarray
    outer_iters: int
    newton_iters: list[int]
    converged: bool
    mu: float
    report: list[dict] = field(default_factory=list)

    @property
    def max_margin_violation(self) -> float:
        return float(np.max(-self.margin_residuals)) if len(self.margin_residuals) else -np.inf

    @property
    def max_norm_residual(self) -> float:
        return float(np.max(self.norm_residuals)) if len(self.norm_residuals) else -np.inf


class BarrierFunction:
    """Barrier objective over the packed vector ``z = (w, gamma, eps)``."""

    def __init__(self, problem: MarginProblem, structure: NetworkStructure, mu: float,
                 constraint_set: ConstraintSet = "subnormalization", w_floor: float | None = None,
                 ball_weight: float = 1.0):
        if constraint_set not in ("subnormalization", "euclidean_ball"):
            raise ValueError(f"unknown constraint set {constraint_set!r}")
        if structure.n_features != problem.n_features:
            raise ValueError("problem and structure disagree on the number of features")
        self.problem = problem
        self.structure = structure
        self.mu = float(mu)
        self.constraint_set = constraint_set
        self.w_floor = w_floor if constraint_set == "subnormalization" else None
        self.ball_weight = float(ball_weight)
        d, t = problem.n_features, problem.n_examples
        self.n_w, self.n_eps = d, t
        self.size = d + 1 + t
        # Margin slacks are linear: s = A z.
        a = np.zeros((problem.n_rows, self.size))
        a[:, :d] = problem.delta.toarray()
        a[:, d] = -problem.margin
        a[np.arange(problem.n_rows), d + 1 + problem.example] = 1.0
        self.A = a
        self.starts = structure.column_starts
        self.col = structure.feature_column
        self.same_col = self.col[:, None] == self.col[None, :]

    @property
    def n_constraints(self) -> int:
        n = self.problem.n_rows + 1
        if self.constraint_set == "subnormalization":
            n += self.structure.n_columns
            if self.w_floor is not None:
                n += self.n_w
        else:
            n += self.ball_weight
        return n

    def pack(self, w, gamma, eps) -> np.ndarray:
        return np.concatenate([np.asarray(w, float), [float(gamma)], np.asarray(eps, float)])

    def unpack(self, z):
        d = self.n_w
        return z[:d], float(z[d]), z[d + 1:]

    def slacks(self, z) -> dict[str, np.ndarray]:
        w, gamma, _ = self.unpack(z)
        out = {"margin": self.A @ z, "gamma": np.array([gamma])}
        if self.constraint_set == "subnormalization":
            with np.errstate(over="ignore"):
                out["norm"] = 1.0 - np.add.reduceat(np.exp(w), self.starts)
            if self.w_floor is not None:
                out["floor"] = w - self.w_floor
        else:
            out["norm"] = np.array([1.0 - w @ w])
        return out

    def _weight(self, key: str) -> float:
        return self.ball_weight if key == "norm" and self.constraint_set == "euclidean_ball" else 1.0

    def feasible(self, z) -> bool:
        return all(np.all(s > 0) for s in self.slacks(z).values())

    def true_objective(self, z) -> float:
        _, gamma, eps = self.unpack(z)
        return 0.5 / gamma**2 + self.problem.reg * float(np.sum(eps))

    def value(self, z) -> float:
        """Barrier objective; +inf outside the strict interior."""
        _, gamma, eps = self.unpack(z)
        if not gamma > 0:
            return np.inf
        sl = self.slacks(z)
        if not all(np.all(s > 0) for s in sl.values()):
            return np.inf
        barrier = sum(self._weight(k) * float(np.sum(np.log(s))) for k, s in sl.items())
        return self.true_objective(z) - self.mu * barrier

    def derivatives(self, z) -> tuple[float, np.ndarray, np.ndarray]:
        f = self.value(z)
        if not np.isfinite(f):
            raise InfeasiblePoint("point is not strictly feasible")
        mu, d = self.mu, self.n_w
        w, gamma, _ = self.unpack(z)
        g = np.zeros(self.size)
        g[d] = -1.0 / gamma**3 - mu / gamma
        g[d + 1:] = self.problem.reg
        h = np.zeros((self.size, self.size))
        h[d, d] = 3.0 / gamma**4 + mu / gamma**2

        s = self.A @ z
        g -= mu * (self.A.T @ (1.0 / s))
        scaled = self.A / s[:, None]
        h += mu * (scaled.T @ scaled)

        hw = h[:d, :d]
        if self.constraint_set == "subnormalization":
            e = np.exp(w)
            u = 1.0 - np.add.reduceat(e, self.starts)
            v = e / u[self.col]
            g[:d] += mu * v
            hw += mu * (np.diag(v) + np.where(self.same_col, np.outer(v, v), 0.0))
            if self.w_floor is not None:
                q = w - self.w_floor
                g[:d] -= mu / q
                hw[np.diag_indices(d)] += mu / q**2
        else:
            u = 1.0 - w @ w
            mb = mu * self.ball_weight
            g[:d] += 2.0 * mb * w / u
            hw += mb * (2.0 * np.eye(d) / u + 4.0 * np.outer(w, w) / u**2)
        return f, g, h


def _ball_weight(config: BarrierConfig, problem: MarginProblem) -> float:
    return float(problem.n_features) if config.ball_weight is None else float(config.ball_weight)


def _newton_direction(h: np.ndarray, g: np.ndarray) -> np.ndarray:
    # Barrier Hessians mix curvatures of wildly different size; factor the
    # Jacobi-scaled matrix so conditioning reflects the coupling only.
    diag = np.diag(h)
    if not np.all(diag > 0):
        raise LinearSolveFailure("Hessian has a nonpositive diagonal")
    scale = 1.0 / np.sqrt(diag)
    hs = h * scale[:, None] * scale[None, :]
    for attempt in range(4):
        reg = 0.0 if attempt == 0 else 1e-10 * 10 ** (attempt - 1)
        try:
            factor = scipy.linalg.cho_factor(hs + reg * np.eye(len(g)) if reg else hs, check_finite=True)
        except (np.linalg.LinAlgError, ValueError):
            continue
        return -scale * scipy.linalg.cho_solve(factor, scale * g)
    raise LinearSolveFailure("Hessian factorization failed after diagonal regularization")


def damped_newton(value: Callable[[np.ndarray], float],
                  derivatives: Callable[[np.ndarray], tuple[float, np.ndarray, np.ndarray]],
                  x0: np.ndarray, tol: float = 1e-8, max_iters: int = 20,
                  shrink: float = 0.5, alpha: float = 1e-4,
                  decrement_tol: float = 1e-14) -> tuple[np.ndarray, int, bool]:
    """Newton's method with backtracking on a convex function.

    ``value`` must return +inf outside the domain, which makes the
    backtracking loop reject any step leaving it.  Stops when
    ``||grad|| <= tol`` or when half the squared Newton decrement falls below
    ``decrement_tol * max(1, |f|)``, i.e. when the predicted decrease is
    under the floating-point resolution of ``f``.  Returns the final point,
    the number of accepted steps and whether a stopping test was met.
    """
    x = np.array(x0, dtype=float)
    f, g, h = derivatives(x)
    iters = 0
    while True:
        if np.linalg.norm(g) <= tol:
            return x, iters, True
        step = _newton_direction(h, g)
        slope = float(g @ step)
        if -0.5 * slope <= decrement_tol * max(1.0, abs(f)):
            return x, iters, True
        if iters >= max_iters:
            return x, iters, False
        t = 1.0
        while True:
            f_new = value(x + t * step)
            if f_new <= f + alpha * t * slope:
                break
            t *= shrink
            if t < 1e-14:
                return x, iters, False
        x = x + t * step
        iters += 1
        f, g, h = derivatives(x)


def barrier_objective(state: SolverState, problem: MarginProblem, structure: NetworkStructure,
                      constraint_set: ConstraintSet = "subnormalization", w_floor: float | None = None) -> float:
    fn = BarrierFunction(problem, structure, state.mu, constraint_set, w_floor)
    f = fn.value(fn.pack(state.w, state.gamma, state.eps))
    if not np.isfinite(f):
        raise InfeasiblePoint("barrier argument is not positive")
    return f


def barrier_gradient_hessian(state: SolverState, problem: MarginProblem, structure: NetworkStructure,
                             constraint_set: ConstraintSet = "subnormalization",
                             w_floor: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradient and Hessian over the packed (w, gamma, eps) vector."""
    fn = BarrierFunction(problem, structure, state.mu, constraint_set, w_floor)
    _, g, h = fn.derivatives(fn.pack(state.w, state.gamma, state.eps))
    return g, h


def initial_point(problem: MarginProblem, structure: NetworkStructure, config: BarrierConfig = BarrierConfig(),
                  constraint_set: ConstraintSet = "subnormalization") -> SolverState:
    """A strictly feasible start with every margin slack at least 1."""
    if constraint_set == "subnormalization":
        w = -np.log(np.repeat(np.asarray(structure.arities, float) + 1.0,
                              np.asarray(structure.arities) * np.asarray(structure.n_configs)))
    else:
        w = np.zeros(structure.n_features)
    gamma = config.gamma_init
    need = gamma * problem.margin - problem.delta @ w
    worst = np.full(problem.n_examples, -np.inf)
    np.maximum.at(worst, problem.example, need)
    eps = np.maximum(0.0, worst) + 1.0
    eps[~np.isfinite(eps)] = 1.0
    state = SolverState(w, gamma, eps, config.mu_initial)
    fn = BarrierFunction(problem, structure, config.mu_initial, constraint_set, config.w_floor, _ball_weight(config, problem))
    if not fn.feasible(fn.pack(w, gamma, eps)):
        raise NoFeasibleStart("constructed start is not strictly feasible")
    return state


def newton_solve(state: SolverState, problem: MarginProblem, structure: NetworkStructure,
                 config: BarrierConfig = BarrierConfig(),
                 constraint_set: ConstraintSet = "subnormalization") -> tuple[SolverState, int, bool]:
    """Minimize the barrier function at fixed ``state.mu``."""
    fn = BarrierFunction(problem, structure, state.mu, constraint_set, config.w_floor, _ball_weight(config, problem))
    z0 = fn.pack(state.w, state.gamma, state.eps)
    if not fn.feasible(z0):
        raise InfeasiblePoint("Newton start is not strictly feasible")
    z, iters, ok = damped_newton(fn.value, fn.derivatives, z0, config.newton_tol, config.max_newton_iters,
                                 config.ls_shrink, config.ls_alpha, config.decrement_tol)
    w, gamma, eps = fn.unpack(z)
    return SolverState(w.copy(), gamma, eps.copy(), state.mu), iters, ok


def solve(problem: MarginProblem, structure: NetworkStructure, config: BarrierConfig = BarrierConfig(),
          constraint_set: ConstraintSet = "subnormalization", start: SolverState | None = None) -> Solution:
    """Run the mu schedule, warm-starting each Newton run from the last."""
    if problem.n_examples < 1:
        raise ValueError("problem has no examples")
    state = start if start is not None else initial_point(problem, structure, config, constraint_set)
    state = replace(state, mu=config.mu_initial)
    report, counts, ok = [], [], False
    for k in range(config.outer_iters):
        state, iters, ok = newton_solve(state, problem, structure, config, constraint_set)
        fn = BarrierFunction(problem, structure, state.mu, constraint_set, config.w_floor, _ball_weight(config, problem))
        z = fn.pack(state.w, state.gamma, state.eps)
        sl = fn.slacks(z)
        counts.append(iters)
        report.append({
            "mu": state.mu,
            "newton_iters": iters,
            "objective": fn.true_objective(z),
            "max_margin_violation": float(np.max(-sl["margin"])),
            "max_norm_residual": float(np.max(-sl["norm"])),
            "converged": ok,
        })
        log.debug("outer %d: %s", k, report[-1])
        if config.gap_tol is not None and fn.n_constraints * state.mu < config.gap_tol:
            break
        if k + 1 < config.outer_iters:
            state = replace(state, mu=state.mu / config.mu_shrink)
    return make_solution(problem, structure, state, constraint_set, config, report, counts, ok)


def make_solution(problem, structure, state, constraint_set, config, report, counts, ok) -> Solution:
    fn = BarrierFunction(problem, structure, state.mu, constraint_set, config.w_floor, _ball_weight(config, problem))
    z = fn.pack(state.w, state.gamma, state.eps)
    sl = fn.slacks(z)
    if constraint_set == "subnormalization":
        norm_res = -sl["norm"]
    else:
        norm_res = np.array([state.w @ state.w - 1.0])
    return Solution(w=state.w, gamma=state.gamma, eps=state.eps, objective=fn.true_objective(z),
                    margin_residuals=sl["margin"], norm_residuals=norm_res, outer_iters=len(counts),
                    newton_iters=counts, converged=ok, mu=state.mu, report=report)


def format_report(solution: Solution) -> str:
    lines = [f"{'outer':>5} {'mu':>9} {'newton':>6} {'objective':>14} {'max_margin_viol':>16} {'max_norm_res':>14}"]
    for k, r in enumerate(solution.report):
        lines.append(f"{k:5d} {r['mu']:9.2e} {r['newton_iters']:6d} {r['objective']:14.8g} "
                     f"{r['max_margin_violation']:16.3e} {r['max_norm_residual']:14.3e}")
    return "\n".join(lines)
