"""Outer Newton-MR drivers with inexact Hessians and their complexity constants."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Callable, List, Optional

import numpy as np

from .core import HessianOperator, NumericalFailure, OracleCounter
from .linesearch import LineSearchFailure, LineSearchParams, backtrack, forward_backtrack
from .minres import MinresOutcome, Tag, minres_solve
from .problems import FiniteSumProblem, Problem, noisy_hessian, subsampled_hessian


class TerminationReason(str, Enum):
    FIRST_ORDER_OPTIMAL = "first_order_optimal"
    SECOND_ORDER_OPTIMAL = "second_order_optimal"
    BUDGET_EXHAUSTED = "budget_exhausted"
    STEP_TOO_SMALL = "step_too_small"
    NUMERICAL_FAILURE = "numerical_failure"


class StepTag(str, Enum):
    SOL = "SOL"
    NPC = "NPC"
    NPC_CERTIFICATE = "NPC_certificate"
    NONE = "none"


@dataclass
class SolverConfig:
    """Tolerances, line-search parameters and budgets.

    Attributes
    ----------
    eps_g, eps_H : float
        First- and second-order tolerances in (0, 1].
    eta : float
        Inexactness tolerance. Use :meth:`with_theta` for ``eta = theta*sqrt(eps_g)``.
    eps_noise : float
        Declared bound on ``||E||``; must be below ``eps_H`` for the
        second-order driver.
    lipschitz_g : float, optional
        Gradient Lipschitz constant used for the certificate cap. When None
        the cap is ``d``.
    record_minres_trace : bool
        Keep MINRES traces (for ``lambda_min(T_t)`` diagnostics).
    """

    eps_g: float = 1e-8
    eps_H: float = 1e-2
    eta: float = 0.01
    eps_noise: float = 0.0
    ls: LineSearchParams = field(default_factory=LineSearchParams)
    max_outer_iters: int = 10_000
    max_oracle_calls: float = 1e6
    p: float = 0.01
    seed: Optional[int] = 0
    lipschitz_g: Optional[float] = None
    max_minres_iter: Optional[int] = None
    record_minres_trace: bool = False

    def __post_init__(self):
        if not 0 < self.eps_g <= 1:
            raise ValueError("eps_g must lie in (0, 1]")
        if not 0 < self.eps_H <= 1:
            raise ValueError("eps_H must lie in (0, 1]")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.eps_noise < 0:
            raise ValueError("eps_noise must be nonnegative")
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if self.max_outer_iters < 1 or self.max_oracle_calls <= 0:
            raise ValueError("budgets must be positive")

    @classmethod
    def with_theta(cls, theta: float, eps_g: float = 1e-8, **kw) -> "SolverConfig":
        return cls(eps_g=eps_g, eta=theta * math.sqrt(eps_g), **kw)


@dataclass
class IterationRecord:
    k: int
    f: float
    grad_norm: float
    step_tag: str
    alpha: float
    inner_iters: int
    cumulative_oracle: Fraction


@dataclass
class SolverResult:
    x: np.ndarray
    records: List[IterationRecord]
    reason: TerminationReason
    counter: OracleCounter
    message: str = ""

    def __iter__(self):
        return iter((self.x, self.records, self.reason))

    @property
    def f(self):
        return self.records[-1].f

    @property
    def grad_norm(self):
        return self.records[-1].grad_norm


# Hessian sources: callables (problem, x, rng) -> HessianOperator, sampled
# once per outer iteration and frozen for the inner solve.

def exact_hessian(problem: Problem, x, rng) -> HessianOperator:
    return problem.hessian_operator(x)


class SubsampledHessian:
    def __init__(self, fraction: float):
        if not 0 < fraction <= 1:
            raise ValueError("fraction must lie in (0, 1]")
        self.fraction = fraction

    def __call__(self, problem: FiniteSumProblem, x, rng):
        return subsampled_hessian(problem, x, self.fraction, rng)


class NoisyHessian:
    def __init__(self, epsilon: float):
        self.epsilon = epsilon

    def __call__(self, problem: Problem, x, rng):
        return noisy_hessian(problem.hessian_dense(x), self.epsilon, rng)


def unit_sphere_sample(d: int, rng) -> np.ndarray:
    """Uniform draw on the unit sphere; zero draws are redrawn."""
    while True:
        z = rng.standard_normal(d)
        n = np.linalg.norm(z)
        if n > 0:
            return z / n


def sign(v: float) -> float:
    """Sign with the tie broken to +1."""
    return -1.0 if v < 0 else 1.0


class _Run:
    """Shared state for one driver invocation."""

    def __init__(self, problem, hessian_source, config, monitor):
        self.problem = problem
        self.source = hessian_source or exact_hessian
        self.cfg = config
        self.monitor = monitor
        self.rng = np.random.default_rng(config.seed)
        self.counter = OracleCounter()
        self.records: List[IterationRecord] = []
        self.x = np.array(problem.x0, dtype=np.float64)

    def f(self, x):
        return float(self.problem.value(x))

    def record(self, k, f, gnorm, tag, alpha, inner):
        self.records.append(IterationRecord(k, f, gnorm, str(tag.value), float(alpha), int(inner),
                                            self.counter.weighted_total))

    def budget_hit(self):
        return self.counter.weighted_total >= Fraction(self.cfg.max_oracle_calls)

    def newton_step(self, k, f_k, g, gnorm):
        """One Alg-4 step from ``self.x``; returns (tag, alpha, f_new, inner)."""
        cfg = self.cfg
        op = self.source(self.problem, self.x, self.rng)
        out = minres_solve(op, g, cfg.eta, max_iter=cfg.max_minres_iter or op.dimension,
                           counter=self.counter, trace=cfg.record_minres_trace)
        d = out.direction
        slope = float(g @ d)
        if out.tag is Tag.NPC:
            tag = StepTag.NPC
            if not slope < 0:
                raise LineSearchFailure("NPC direction is not a descent direction")
            res = forward_backtrack(self.f, self.x, d, slope, cfg.ls.rho_N, cfg.ls,
                                    self.counter, f_cur=f_k)
        else:
            tag = StepTag.SOL
            if not slope < 0:
                raise LineSearchFailure("MINRES step is not a descent direction")
            res = backtrack(self.f, self.x, d, slope, cfg.ls.rho_S, cfg.ls,
                            self.counter, f_cur=f_k)
        self._emit(k, g, d, res, out, op, tag, f_k)
        return tag, res, d, out

    def _emit(self, k, g, d, res, out, op, tag, f_k):
        if self.monitor is not None:
            self.monitor(dict(k=k, x=self.x.copy(), g=g, f=f_k, d=d, alpha=res.alpha,
                              f_new=res.f_new, outcome=out, op=op, tag=tag,
                              truncated=res.truncated))


def _drive(problem, hessian_source, config, monitor, second_order):
    run = _Run(problem, hessian_source, config, monitor)
    cfg = run.cfg
    d = run.x.shape[0]
    message = ""
    k = 0
    f_k = gnorm = float("nan")
    try:
        f_k = run.f(run.x)
        run.counter.add_function()
        while True:
            g = np.asarray(problem.gradient(run.x), dtype=np.float64)
            run.counter.add_gradient()
            gnorm = float(np.linalg.norm(g))
            if not (np.isfinite(gnorm) and np.isfinite(f_k)):
                raise NumericalFailure("non-finite objective or gradient")
            if gnorm <= cfg.eps_g and not second_order:
                run.record(k, f_k, gnorm, StepTag.NONE, 0.0, 0)
                reason = TerminationReason.FIRST_ORDER_OPTIMAL
                break
            if run.budget_hit() or k >= cfg.max_outer_iters:
                run.record(k, f_k, gnorm, StepTag.NONE, 0.0, 0)
                reason = TerminationReason.BUDGET_EXHAUSTED
                break
            if gnorm > cfg.eps_g:
                tag, res, dvec, out = run.newton_step(k, f_k, g, gnorm)
            else:
                cert = _certificate_step(run, k, f_k, g, d)
                if cert is None:
                    reason = TerminationReason.SECOND_ORDER_OPTIMAL
                    break
                tag, res, dvec, out = cert
            run.record(k, f_k, gnorm, tag, res.alpha, out.iterations)
            run.x = run.x + res.alpha * dvec
            f_k = res.f_new
            k += 1
    except LineSearchFailure as exc:
        run.record(k, f_k, gnorm, StepTag.NONE, 0.0, 0)
        reason, message = TerminationReason.STEP_TOO_SMALL, str(exc)
    except NumericalFailure as exc:
        reason, message = TerminationReason.NUMERICAL_FAILURE, str(exc)
    return SolverResult(run.x, run.records, reason, run.counter, message)


def _certificate_step(run: _Run, k, f_k, g, d):
    """Randomized curvature certificate; None means terminate as optimal."""
    cfg = run.cfg
    op = run.source(run.problem, run.x, run.rng)
    shift = 0.5 * (cfg.eps_H - cfg.eps_noise)
    shifted = op.shifted(shift)
    gt = unit_sphere_sample(d, run.rng)
    if cfg.lipschitz_g is not None:
        T_L = certificate_iteration_bound(cfg.lipschitz_g, cfg.eps_H, d, cfg.p)
    else:
        T_L = d
    out = minres_solve(shifted, gt, 0.0, max_iter=T_L, counter=run.counter,
                       trace=cfg.record_minres_trace)
    if out.tag is not Tag.NPC:
        gnorm = float(np.linalg.norm(g))
        run.record(k, f_k, gnorm, StepTag.NONE, 0.0, out.iterations)
        if run.monitor is not None:
            run.monitor(dict(k=k, x=run.x.copy(), g=g, f=f_k, d=None, alpha=0.0,
                             f_new=f_k, outcome=out, op=op, tag=StepTag.NONE,
                             certificate=True, shift=shift))
        return None
    r = out.direction
    rnorm = float(np.linalg.norm(r))
    dvec = -sign(float(g @ r)) * r / rnorm
    # <r, (Hbar + shift I) r> = -phi^2 c gamma, so no extra product is needed
    curv = out.curvature / (rnorm * rnorm) - shift
    if not curv < 0:
        raise LineSearchFailure("certificate direction has nonnegative curvature")
    res = forward_backtrack(run.f, run.x, dvec, curv, cfg.ls.rho_N, cfg.ls, run.counter,
                            f_cur=f_k, curvature=True)
    if run.monitor is not None:
        run.monitor(dict(k=k, x=run.x.copy(), g=g, f=f_k, d=dvec, alpha=res.alpha,
                         f_new=res.f_new, outcome=out, op=op, tag=StepTag.NPC_CERTIFICATE,
                         certificate=True, shift=shift, curvature=curv,
                         truncated=res.truncated))
    return StepTag.NPC_CERTIFICATE, res, dvec, out


def newton_mr_first_order(problem: Problem, hessian_source: Optional[Callable] = None,
                          config: Optional[SolverConfig] = None,
                          monitor: Optional[Callable] = None) -> SolverResult:
    """Newton-MR with an inexact Hessian, stopping at ``||g|| <= eps_g``.

    Parameters
    ----------
    problem : Problem
        Supplies ``value``, ``gradient`` and the starting point ``x0``.
    hessian_source : callable, optional
        ``(problem, x, rng) -> HessianOperator``; default exact Hessian.
    config : SolverConfig, optional
    monitor : callable, optional
        Receives a dict per step (``x, g, d, alpha, f, f_new, outcome, op,
        tag``) for instrumentation.

    Returns
    -------
    SolverResult
        Unpacks as ``(x_final, records, reason)``.
    """
    config = config or SolverConfig()
    if not config.eta > 0:
        raise ValueError("the first-order driver needs eta > 0")
    return _drive(problem, hessian_source, config, monitor, second_order=False)


def newton_mr_second_order(problem: Problem, hessian_source: Optional[Callable] = None,
                           config: Optional[SolverConfig] = None,
                           monitor: Optional[Callable] = None) -> SolverResult:
    """Second-order variant: at small gradients, certify or escape curvature.

    When ``||g|| <= eps_g`` a random unit vector drives MINRES on
    ``Hbar + (eps_H - eps_noise)/2 I`` with ``eta = 0`` for at most ``T_L``
    iterations. Anything but NPC terminates as second-order optimal; NPC
    yields a unit escape direction searched under the curvature rule.
    """
    config = config or SolverConfig()
    if not config.eta > 0:
        raise ValueError("the second-order driver needs eta > 0")
    if not config.eps_noise < config.eps_H:
        raise ValueError("eps_noise must be smaller than eps_H")
    return _drive(problem, hessian_source, config, monitor, second_order=True)


def certificate_iteration_bound(L_g_est: float, eps_H: float, d: int, p: float) -> int:
    """``T_L = min(ceil(sqrt(L_g/eps_H) * log(2.75 d / p^2) + 1), d)``."""
    if L_g_est <= 0 or eps_H <= 0 or d < 1 or not 0 < p < 1:
        raise ValueError("invalid certificate bound inputs")
    val = math.sqrt(L_g_est / eps_H) * math.log(2.75 * d / p ** 2) + 1
    return int(min(math.ceil(val), d))


@dataclass(frozen=True)
class DescentConstants:
    c0: float
    c1: float
    c2: float
    c3: float
    c4: float
    kappa: float

    def __iter__(self):
        return iter((self.c0, self.c1, self.c2, self.c3, self.c4, self.kappa))


def theoretical_descent_constants(L_g, L_H, sigma, theta, rho_S, rho_N, omega,
                                  eps_noise: float = 0.0) -> DescentConstants:
    """Worst-case per-step descent constants of the first/second-order analysis.

    Returns
    -------
    DescentConstants
        ``c0 = 2 sigma / ((1 + theta L_g) + sqrt((1 + theta L_g)^2 + 2 sigma^2 L_H))``,
        ``c1 = rho_S sigma (3 (1 - 2 rho_S) sigma / (2 L_H))^2``,
        ``c2 = rho_S sigma c0^2``,
        ``c3 = rho_N omega^(3/2) sqrt(3 (1 - rho_N) / L_H)``,
        ``c4 = 9 rho_N (3 - rho_N)^2 / (4 (4 L_H)^2)``,
        ``kappa = (L_g + eps_noise) / sigma``.
    """
    if min(L_g, L_H, sigma, rho_S, rho_N, omega) <= 0 or theta < 0:
        raise ValueError("constants need positive inputs")
    if not rho_S < 0.5 or not rho_N <= 1:
        raise ValueError("need rho_S < 1/2 and rho_N <= 1")
    a = 1.0 + theta * L_g
    c0 = 2.0 * sigma / (a + math.sqrt(a * a + 2.0 * sigma ** 2 * L_H))
    c1 = rho_S * sigma * (3.0 * (1.0 - 2.0 * rho_S) * sigma / (2.0 * L_H)) ** 2
    c2 = rho_S * sigma * c0 ** 2
    c3 = rho_N * omega ** 1.5 * math.sqrt(3.0 * (1.0 - rho_N) / L_H)
    c4 = 9.0 * rho_N * (3.0 - rho_N) ** 2 / (4.0 * (4.0 * L_H) ** 2)
    kappa = (L_g + eps_noise) / sigma
    return DescentConstants(c0, c1, c2, c3, c4, kappa)


def first_order_iteration_bound(f0, f_star, eps_g, consts: DescentConstants) -> float:
    """``K = (f0 - f*) eps_g^(-3/2) / min(c1, c2, c3)``."""
    return (f0 - f_star) * eps_g ** -1.5 / min(consts.c1, consts.c2, consts.c3)


def minres_iteration_bounds(L_g, mu, nu, sigma, eta, d):
    """Worst-case MINRES iterations to detect NPC (``T_N``) and inexactness (``T_S``).

    Raises
    ------
    ValueError
        If ``nu`` or ``eta`` lie outside the admissible ranges (the log
        arguments would be nonpositive).
    """
    if min(L_g, mu, nu, sigma, eta) <= 0 or d < 1:
        raise ValueError("inputs must be positive")
    if not 16 * L_g ** 4 / ((4 * L_g ** 2 + eta ** 2) * sigma ** 2) < nu <= 1:
        raise ValueError("nu outside (16 L^4 / ((4 L^2 + eta^2) sigma^2), 1]")
    if not 4 * L_g ** 2 > sigma ** 2 or not eta > 2 * L_g * math.sqrt(4 * L_g ** 2 - sigma ** 2) / sigma:
        raise ValueError("eta must exceed 2 L sqrt(4 L^2 - sigma^2) / sigma")
    arg_n = 2 * (L_g + mu) * (4 * L_g ** 2 - nu * sigma ** 2) / (mu * nu * sigma ** 2)
    gap = eta ** 2 / (4 * L_g ** 2 + eta ** 2) - (1 - nu * sigma ** 2 / (4 * L_g ** 2))
    if arg_n <= 0 or gap <= 0:
        raise ValueError("log argument nonpositive")
    t_n = math.ceil(math.sqrt(2 * (L_g + mu) / mu) / 4 * math.log(arg_n) + 1)
    t_s = math.ceil(math.sqrt(L_g / mu) / 2 * math.log(4 / gap) + 1)
    return min(max(t_n, 1), d), min(t_s, d)


def pl_rate_gap(mu, L_g, sigma, eta, beta, eps_noise=0.0) -> float:
    """``1 - q`` for :func:`pl_rate_bound`, computed without cancellation."""
    if min(mu, L_g, sigma, eta) <= 0 or not 0 < beta < 1:
        raise ValueError("rate inputs must be positive with 0 < beta < 1")
    kappa = (L_g + eps_noise) / sigma
    es = eta / sigma
    m = min(1.0 / (kappa ** 2 * (es + kappa) ** 2), es ** 2 / (kappa ** 2 + es ** 2))
    return 4.0 * mu * beta * (1.0 - beta) / L_g * m


def pl_rate_bound(mu, L_g, sigma, eta, beta, eps_noise=0.0) -> float:
    """Per-iteration contraction factor ``q`` guaranteed for PL objectives.

    ``q = 1 - (4 mu beta (1 - beta) / L_g) * min(1 / (kappa^2 (eta/sigma + kappa)^2),
    (eta/sigma)^2 / (kappa^2 + (eta/sigma)^2))`` with ``kappa = (L_g + eps)/sigma``.
    """
    return 1.0 - pl_rate_gap(mu, L_g, sigma, eta, beta, eps_noise)
