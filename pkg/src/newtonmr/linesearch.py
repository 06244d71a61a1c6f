"""Armijo backtracking and forward/backward tracking line-searches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import OracleCounter


class LineSearchFailure(RuntimeError):
    """Backtracking ran out of trials without satisfying the acceptance rule."""


@dataclass(frozen=True)
class LineSearchParams:
    rho_S: float = 1e-4
    rho_N: float = 1e-4
    h: float = 0.5
    alpha_init: float = 1.0
    max_backtracks: int = 60
    max_forwards: int = 60

    def __post_init__(self):
        if not 0 < self.rho_S < 0.5:
            raise ValueError("rho_S must lie in (0, 1/2)")
        if not 0 < self.rho_N < 1:
            raise ValueError("rho_N must lie in (0, 1)")
        if not 0 < self.h < 1:
            raise ValueError("h must lie in (0, 1)")
        if not self.alpha_init > 0:
            raise ValueError("alpha_init must be positive")
        if self.max_backtracks < 1 or self.max_forwards < 1:
            raise ValueError("trial budgets must be positive")


@dataclass
class LineSearchResult:
    alpha: float
    f_new: float
    evaluations: int
    truncated: bool = False

    def __iter__(self):
        # allows ``alpha, f_new = backtrack(...)``
        return iter((self.alpha, self.f_new))


def armijo_holds(f_trial, f_cur, alpha, dir_dot_grad, rho) -> bool:
    """``f_trial <= f_cur + rho * alpha * <g, d>``."""
    return f_trial <= f_cur + rho * alpha * dir_dot_grad


def curvature_linesearch_holds(f_trial, f_cur, alpha, dir_Hbar_dir, rho_N) -> bool:
    """``f_trial <= f_cur + rho_N * alpha^2 * <d, Hbar d> / 2``."""
    return f_trial <= f_cur + 0.5 * rho_N * alpha * alpha * dir_Hbar_dir


def _make_rule(f_cur, rho, slope, curvature):
    def rule(ft, a):
        if curvature:
            ok = curvature_linesearch_holds(ft, f_cur, a, slope, rho)
            needed = 0.5 * rho * a * a * slope
        else:
            ok = armijo_holds(ft, f_cur, a, slope, rho)
            needed = rho * a * slope
        # below float resolution of f the rule degenerates to f_trial <= f_cur;
        # demand strict decrease so the iterates cannot stall in place
        if ok and f_cur + needed == f_cur:
            return ft < f_cur
        return ok
    return rule


def _trial(f_oracle, x, d, alpha, counter):
    ft = float(f_oracle(x + alpha * d))
    if counter is not None:
        counter.add_function()
    # a NaN trial value simply fails the rule
    return ft if np.isfinite(ft) else np.inf


def backtrack(f_oracle: Callable, x, d, dir_dot_grad, rho, params: LineSearchParams,
              counter: Optional[OracleCounter] = None, f_cur=None, alpha0=1.0,
              curvature: bool = False) -> LineSearchResult:
    """Largest ``alpha = alpha0 * h^j`` passing the acceptance rule.

    Parameters
    ----------
    f_oracle : callable
        Objective ``f(x)``; one function call is charged per trial.
    dir_dot_grad : float
        ``<g, d>`` (or ``<d, Hbar d>`` when ``curvature`` is set); must be
        negative.
    f_cur : float, optional
        ``f(x)``; evaluated (and charged) if not supplied.
    curvature : bool
        Use the curvature rule instead of Armijo.

    Raises
    ------
    LineSearchFailure
        If ``max_backtracks`` shrinks do not produce an acceptable step.
    """
    if not dir_dot_grad < 0:
        raise ValueError("line-search needs a strictly negative slope")
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    evals = 0
    if f_cur is None:
        f_cur = _trial(f_oracle, x, d, 0.0, counter)
        evals += 1
    rule = _make_rule(f_cur, rho, dir_dot_grad, curvature)
    alpha = alpha0
    for _ in range(params.max_backtracks + 1):
        ft = _trial(f_oracle, x, d, alpha, counter)
        evals += 1
        if rule(ft, alpha):
            return LineSearchResult(alpha, ft, evals)
        alpha *= params.h
    raise LineSearchFailure(f"no acceptable step after {params.max_backtracks} backtracks")


def forward_backtrack(f_oracle: Callable, x, d, dir_dot_grad, rho, params: LineSearchParams,
                      counter: Optional[OracleCounter] = None, f_cur=None,
                      curvature: bool = False) -> LineSearchResult:
    """Expand from ``alpha_init`` while the rule holds, else backtrack.

    Returns the last accepted step. If ``max_forwards`` expansions all pass,
    the last one is returned with ``truncated=True``.
    """
    if not dir_dot_grad < 0:
        raise ValueError("line-search needs a strictly negative slope")
    x = np.asarray(x, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    evals = 0
    if f_cur is None:
        f_cur = _trial(f_oracle, x, d, 0.0, counter)
        evals += 1
    rule = _make_rule(f_cur, rho, dir_dot_grad, curvature)
    alpha = params.alpha_init
    ft = _trial(f_oracle, x, d, alpha, counter)
    evals += 1
    if not rule(ft, alpha):
        res = backtrack(f_oracle, x, d, dir_dot_grad, rho, params, counter, f_cur,
                        alpha0=alpha * params.h, curvature=curvature)
        res.evaluations += evals
        return res
    for _ in range(params.max_forwards):
        trial = alpha / params.h
        f_next = _trial(f_oracle, x, d, trial, counter)
        evals += 1
        if not rule(f_next, trial):
            return LineSearchResult(alpha, ft, evals)
        alpha, ft = trial, f_next
    return LineSearchResult(alpha, ft, evals, truncated=True)
