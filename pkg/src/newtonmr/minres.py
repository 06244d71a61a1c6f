"""MINRES with inline inexactness and nonpositive-curvature tests.

The recurrence follows the Lanczos/Givens formulation where both exit
conditions reduce to scalar tests on quantities the iteration already has:

* inexactness: ``phi_{t-1} * hypot(gamma_t^(1), delta_{t+1}^(1))
  <= eta * sqrt(phi_0^2 - phi_{t-1}^2)``, which is ``||H r|| <= eta ||H s||``;
* curvature: ``c_{t-1} * gamma_t^(1) >= 0``, which is ``<r, H r> <= 0``
  because ``<r_{t-1}, H r_{t-1}> = -phi_{t-1}^2 c_{t-1} gamma_t^(1)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional

import numpy as np
import scipy.linalg

from .core import HessianOperator, NumericalFailure, OracleCounter, apply

# beta_{t+1} <= BREAKDOWN_TOL * ||H||_est counts as a Lanczos breakdown
BREAKDOWN_TOL = 1e-13
# c*gamma within NPC_TIE_TOL * ||H||_est of zero counts as zero curvature
NPC_TIE_TOL = 1e-12


class Tag(str, Enum):
    SOL = "SOL"
    NPC = "NPC"
    EXHAUSTED = "EXHAUSTED"


@dataclass
class MinresState:
    """Scalars and vectors of one MINRES iteration.

    During iteration ``t`` the fields hold ``phi_prev = phi_{t-1}``,
    ``c = c_{t-1}``, ``s = s_{t-1}``, ``gamma1 = gamma_t^(1)`` and
    ``delta1 = delta_{t+1}^(1)``, which is what the two exit tests read.
    """

    t: int
    phi0: float
    phi_prev: float
    tau: float = 0.0
    c: float = -1.0
    s: float = 0.0
    alpha_tilde: float = 0.0
    beta_tilde: float = 0.0
    beta_next: float = 0.0
    delta1: float = 0.0
    delta2: float = 0.0
    gamma1: float = 0.0
    gamma2: float = 0.0
    eps_next: float = 0.0
    anorm: float = 0.0
    v_prev: Optional[np.ndarray] = None
    v_cur: Optional[np.ndarray] = None
    w_prev2: Optional[np.ndarray] = None
    w_prev: Optional[np.ndarray] = None
    w_cur: Optional[np.ndarray] = None
    sol: Optional[np.ndarray] = None
    res: Optional[np.ndarray] = None


@dataclass
class TraceRecord:
    t: int
    phi: float
    alpha_tilde: float
    beta_next: float
    npc_flag: bool
    curvature_sign: float
    lambda_min_Tt: float = float("nan")


@dataclass
class MinresOutcome:
    """Result of :func:`minres_solve`.

    Attributes
    ----------
    direction : ndarray
        ``s_{t-1}`` for SOL, ``r_{t-1}`` for NPC, the last iterate otherwise.
    tag : Tag
    iterations : int
        MINRES iteration ``t`` at which the exit test fired.
    hvps : int
        Operator applications performed.
    trace : list of TraceRecord, optional
    curvature : float
        ``<r, Hbar r>`` from the scalar identity at an NPC exit.
    anorm : float
        Running estimate of ``||Hbar||`` from the Lanczos scalars.
    diag, offdiag : list of float
        Lanczos tridiagonal entries seen so far.
    """

    direction: np.ndarray
    tag: Tag
    iterations: int
    hvps: int
    phi: float
    anorm: float
    curvature: float = float("nan")
    trace: Optional[List[TraceRecord]] = None
    diag: List[float] = field(default_factory=list)
    offdiag: List[float] = field(default_factory=list)
    iterates: Optional[List[np.ndarray]] = None
    residuals: Optional[List[np.ndarray]] = None

    def krylov_sigma(self) -> float:
        """``min lambda_min(T_t)`` over iterations before the exit test fired.

        The row of the exit iteration is excluded: a SOL or NPC exit at ``t``
        returns a vector from ``K_{t-1}``. Needs ``trace=True``; NaN when no
        earlier row exists.
        """
        if self.trace is None:
            raise ValueError("outcome was produced without a trace")
        last = self.iterations if self.tag is not Tag.EXHAUSTED else self.iterations + 1
        vals = [r.lambda_min_Tt for r in self.trace if r.t < last]
        return float(min(vals)) if vals else float("nan")


def check_inexactness(state: MinresState, eta: float) -> bool:
    """Scalar form of the sub-problem inexactness test.

    The right side must be strictly positive, so ``eta = 0`` never fires
    here and ``s_0 = 0`` is never declared a solution.
    """
    lhs = state.phi_prev * math.hypot(state.gamma1, state.delta1)
    rhs = eta * math.sqrt(max(state.phi0 ** 2 - state.phi_prev ** 2, 0.0))
    return rhs > 0.0 and lhs <= rhs


def check_npc(state: MinresState) -> bool:
    """Scalar form of the nonpositive-curvature test ``c_{t-1} gamma_t^(1) >= 0``.

    Values within a relative ``NPC_TIE_TOL`` of zero are zero-curvature ties
    and are classified as NPC.
    """
    return state.c * state.gamma1 >= -NPC_TIE_TOL * state.anorm


def minres_solve(op: HessianOperator, g, eta: float, max_iter: Optional[int] = None,
                 counter: Optional[OracleCounter] = None, trace: bool = False,
                 npc_exit: bool = True, keep_iterates: bool = False) -> MinresOutcome:
    """Approximately solve ``Hbar s = -g`` with curvature detection.

    Parameters
    ----------
    op : HessianOperator
    g : array_like
        Right-hand side (the gradient), nonzero.
    eta : float
        Inexactness tolerance, ``eta >= 0``.
    max_iter : int, optional
        Iteration cap, default ``op.dimension``.
    counter : OracleCounter, optional
        Charged once per operator application.
    trace : bool
        Record per-iteration scalars and ``lambda_min(T_t)``.
    npc_exit : bool
        When False the curvature test is skipped (plain MINRES).
    keep_iterates : bool
        Store every ``s_t`` and ``r_t`` (testing only).

    Returns
    -------
    MinresOutcome
    """
    g = np.asarray(g, dtype=np.float64)
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    d = op.dimension
    if max_iter is None:
        max_iter = d
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    phi0 = float(np.linalg.norm(g))
    if not phi0 > 0:
        if np.isfinite(phi0):
            raise ValueError("minres_solve requires a nonzero right-hand side")
        raise NumericalFailure("non-finite right-hand side")

    st = MinresState(t=0, phi0=phi0, phi_prev=phi0, beta_tilde=phi0)
    r = -g
    v = r / phi0
    v_prev = np.zeros(d)
    s = np.zeros(d)
    w_prev = np.zeros(d)
    w_prev2 = np.zeros(d)
    eps_cur = 0.0
    records = [] if trace else None
    diag: List[float] = []
    offdiag: List[float] = []
    iterates = [s.copy()] if keep_iterates else None
    residuals = [r.copy()] if keep_iterates else None

    def outcome(direction, tag, t, hvps, curvature=float("nan")):
        return MinresOutcome(direction=direction, tag=tag, iterations=t, hvps=hvps,
                             phi=st.phi_prev, anorm=st.anorm, curvature=curvature,
                             trace=records,
                             diag=diag, offdiag=offdiag, iterates=iterates,
                             residuals=residuals)

    for t in range(1, max_iter + 1):
        st.t = t
        q = apply(op, v, counter)
        alpha = float(v @ q)
        q = q - st.beta_tilde * v_prev - alpha * v
        beta_next = float(np.linalg.norm(q))
        if not (math.isfinite(alpha) and math.isfinite(beta_next)):
            raise NumericalFailure("non-finite Lanczos scalar", trace=records)
        diag.append(alpha)
        st.alpha_tilde = alpha
        st.beta_next = beta_next
        st.anorm = max(st.anorm, math.sqrt(st.beta_tilde ** 2 * (t > 1) + alpha ** 2 + beta_next ** 2))

        c_prev, s_prev = st.c, st.s
        delta2 = c_prev * st.delta1 + s_prev * alpha
        gamma1 = s_prev * st.delta1 - c_prev * alpha
        eps_next = s_prev * beta_next
        delta1_next = -c_prev * beta_next
        st.delta2, st.gamma1, st.eps_next = delta2, gamma1, eps_next
        st.delta1 = delta1_next

        sol_fires = check_inexactness(st, eta)
        npc_fires = npc_exit and not sol_fires and check_npc(st)
        if trace:
            lam = float(scipy.linalg.eigvalsh_tridiagonal(np.array(diag), np.array(offdiag))[0]) \
                if len(diag) > 1 else diag[0]
            records.append(TraceRecord(t=t, phi=st.phi_prev, alpha_tilde=alpha,
                                       beta_next=beta_next, npc_flag=bool(npc_fires),
                                       curvature_sign=-c_prev * gamma1,
                                       lambda_min_Tt=lam))
        if sol_fires:
            return outcome(s, Tag.SOL, t, t)
        if npc_fires:
            return outcome(r, Tag.NPC, t, t, -st.phi_prev ** 2 * c_prev * gamma1)

        gamma2 = math.hypot(gamma1, beta_next)
        st.gamma2 = gamma2
        breakdown = beta_next <= BREAKDOWN_TOL * st.anorm
        if gamma2 != 0.0:
            c = gamma1 / gamma2
            sn = beta_next / gamma2
            tau = c * st.phi_prev
            phi = sn * st.phi_prev
            w = (v - delta2 * w_prev - eps_cur * w_prev2) / gamma2
            s = s + tau * w
            if not breakdown:
                v_next = q / beta_next
                r = sn * sn * r - phi * c * v_next
            else:
                v_next = None
                r = sn * sn * r
        else:
            c, sn, tau, phi = 0.0, 1.0, 0.0, st.phi_prev
            w = np.zeros(d)
            v_next = None if breakdown else q / beta_next
        if not np.all(np.isfinite(s)):
            raise NumericalFailure("non-finite MINRES iterate", trace=records)

        st.c, st.s, st.tau = c, sn, tau
        st.phi_prev = phi
        w_prev2, w_prev = w_prev, w
        eps_cur = eps_next
        if keep_iterates:
            iterates.append(s.copy())
            residuals.append(r.copy())

        if breakdown:
            # The Krylov space is invariant; s_t is Krylov-optimal. With
            # gamma2 != 0 the residual vanishes, so the test at t+1 holds.
            if eta > 0 and gamma2 != 0.0:
                return outcome(s, Tag.SOL, t + 1, t)
            return outcome(s, Tag.EXHAUSTED, t, t)
        offdiag.append(beta_next)
        st.beta_tilde = beta_next
        v_prev, v = v, v_next

    return outcome(s, Tag.EXHAUSTED, max_iter, max_iter)


def krylov_oracle_solve(H_dense, g, t: int, return_grade: bool = False):
    """Dense reference: ``argmin_{s in K_t(H, g)} ||H s + g||``.

    Builds an orthonormal Krylov basis by Arnoldi with full
    reorthogonalization and solves the small least-squares problem. If the
    grade of ``g`` is below ``t`` the basis is truncated at the grade.
    """
    H = np.asarray(H_dense, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    d = g.shape[0]
    gnorm = np.linalg.norm(g)
    if gnorm == 0:
        return (np.zeros(d), 0) if return_grade else np.zeros(d)
    scale = max(np.linalg.norm(H, 2), 1.0)
    basis = [g / gnorm]
    while len(basis) < min(t, d):
        w = H @ basis[-1]
        wnorm0 = np.linalg.norm(w)
        for _ in range(2):
            for b in basis:
                w -= (b @ w) * b
        wnorm = np.linalg.norm(w)
        if wnorm <= 1e-10 * max(wnorm0, scale * 1e-3):
            break
        basis.append(w / wnorm)
    V = np.column_stack(basis)
    y, *_ = np.linalg.lstsq(H @ V, -g, rcond=None)
    s = V @ y
    return (s, V.shape[1]) if return_grade else s


def lanczos_min_eig_trace(op: HessianOperator, g, max_iter: Optional[int] = None,
                          counter: Optional[OracleCounter] = None, eta: float = 0.0):
    """``[(t, lambda_min(T_t)), ...]`` along the MINRES run until NPC or exit."""
    out = minres_solve(op, g, eta, max_iter=max_iter, counter=counter, trace=True)
    return [(rec.t, rec.lambda_min_Tt) for rec in out.trace]


TRACE_COLUMNS = ("t", "phi_t", "alpha_tilde", "beta_next", "npc_flag", "lambda_min_Tt")


def write_trace_csv(path, records: List[TraceRecord]):
    """Dump a MINRES trace with 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for rec in records:
            w.writerow([rec.t, f"{rec.phi:.17g}", f"{rec.alpha_tilde:.17g}",
                        f"{rec.beta_next:.17g}", int(rec.npc_flag),
                        f"{rec.lambda_min_Tt:.17g}"])
