"""Operators, oracle accounting and the additive Hessian noise contract."""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

FUNCTION_COST = Fraction(1)
GRADIENT_COST = Fraction(2)
HVP_COST = Fraction(4)


class NumericalFailure(RuntimeError):
    """Raised when a NaN or Inf shows up in solver state."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


def check_finite(v, what="vector"):
    """Raise :class:`NumericalFailure` if ``v`` has non-finite entries."""
    if not np.all(np.isfinite(v)):
        raise NumericalFailure(f"non-finite values in {what}")
    return v


def worker_count():
    """Worker cap for chunk-parallel reductions, from ``NEWTONMR_THREADS``."""
    raw = os.environ.get("NEWTONMR_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"NEWTONMR_THREADS must be an integer, got {raw!r}")
    return max(n, 1)


class OracleCounter:
    """Thread-safe tally of function, gradient and Hessian-vector calls.

    The weighted total counts a function value as 1, a gradient as 2 and a
    Hessian-vector product as 4 times the sample fraction of the operator.
    Totals are kept as exact fractions.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self.function_calls = 0
        self.gradient_calls = 0
        self.hvp_calls = 0
        self.hvp_weight = Fraction(0)

    def add_function(self, n=1):
        with self._lock:
            self.function_calls += n

    def add_gradient(self, n=1):
        with self._lock:
            self.gradient_calls += n

    def add_hvp(self, cost, n=1):
        cost = Fraction(cost)
        with self._lock:
            self.hvp_calls += n
            self.hvp_weight += cost * n

    def merge(self, other: "OracleCounter"):
        """Fold the tallies of another counter (e.g. a worker's) into this one."""
        with self._lock:
            self.function_calls += other.function_calls
            self.gradient_calls += other.gradient_calls
            self.hvp_calls += other.hvp_calls
            self.hvp_weight += other.hvp_weight

    @property
    def weighted_total(self) -> Fraction:
        return (FUNCTION_COST * self.function_calls
                + GRADIENT_COST * self.gradient_calls
                + self.hvp_weight)

    def __repr__(self):
        return (f"OracleCounter(F={self.function_calls}, G={self.gradient_calls}, "
                f"HVP={self.hvp_calls}, total={self.weighted_total})")


@dataclass(frozen=True)
class NoiseSpec:
    """Declared spectral-norm bound on the Hessian noise ``E``."""

    epsilon: float
    construction: str = "explicit_random"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.construction not in ("subsample", "explicit_random"):
            raise ValueError(f"unknown construction {self.construction!r}")


class HessianOperator:
    """Matrix-free symmetric operator ``v -> Hbar v``.

    Parameters
    ----------
    matvec : callable
        Deterministic map from a length-``dimension`` array to another.
    dimension : int
    cost_per_apply : Fraction, optional
        Oracle calls charged per application. Defaults to 4.
    kind : str
        One of ``"exact"``, ``"subsampled"``, ``"noisy"``, ``"shifted"``.
    params : dict, optional
        Kind-specific metadata (``fraction``, ``epsilon``, ``shift``...).
    dense : ndarray, optional
        Dense matrix, when cheaply available, for diagnostics.
    """

    def __init__(self, matvec: Callable[[np.ndarray], np.ndarray], dimension: int,
                 cost_per_apply=HVP_COST, kind: str = "exact",
                 params: Optional[dict] = None, dense: Optional[np.ndarray] = None):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self._matvec = matvec
        self.dimension = int(dimension)
        self.cost_per_apply = Fraction(cost_per_apply)
        if self.cost_per_apply < 0:
            raise ValueError("cost_per_apply must be nonnegative")
        self.kind = kind
        self.params = dict(params or {})
        self._dense = dense

    def matvec(self, v):
        """Apply without charging any counter."""
        return self._matvec(np.asarray(v, dtype=np.float64))

    def to_dense(self):
        """Materialize the operator (diagnostic scale only)."""
        if self._dense is not None:
            return np.array(self._dense, dtype=np.float64)
        eye = np.eye(self.dimension)
        return np.column_stack([self.matvec(eye[:, j]) for j in range(self.dimension)])

    def shifted(self, shift: float) -> "HessianOperator":
        """Return ``Hbar + shift * I`` at the same cost."""
        base = self
        dense = None if self._dense is None else self._dense + shift * np.eye(self.dimension)
        return HessianOperator(lambda v: base.matvec(v) + shift * v, self.dimension,
                               self.cost_per_apply, kind="shifted",
                               params={"base": base, "shift": shift}, dense=dense)

    def __repr__(self):
        return f"HessianOperator(d={self.dimension}, kind={self.kind!r}, cost={self.cost_per_apply})"


def dense_operator(H, cost_per_apply=HVP_COST, kind="exact", params=None) -> HessianOperator:
    """Wrap a dense symmetric matrix."""
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("H must be square")
    return HessianOperator(lambda v: H @ v, H.shape[0], cost_per_apply, kind, params, dense=H)


def identity_operator(d: int) -> HessianOperator:
    return dense_operator(np.eye(d))


def apply(op: HessianOperator, v, counter: Optional[OracleCounter] = None):
    """Apply ``op`` to ``v`` and charge ``op.cost_per_apply`` to ``counter``."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != op.dimension:
        raise ValueError(f"dimension mismatch: operator is {op.dimension}, vector has shape {v.shape}")
    out = op.matvec(v)
    if counter is not None:
        counter.add_hvp(op.cost_per_apply)
    return check_finite(out, "operator output")


def spectral_norm_estimate(op: HessianOperator, iters: int = 100, seed=None) -> float:
    """Power-iteration lower estimate of ``||Hbar||`` (diagnostics only).

    Runs power iteration on ``Hbar`` and returns the Rayleigh-type quantity
    ``||Hbar v||`` for the final unit iterate, which never exceeds the norm.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(op.dimension)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(iters):
        w = op.matvec(v)
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        v = w / est
    return est


def symmetry_defect(op: HessianOperator, n_probes: int = 100, seed=None) -> float:
    """Largest relative ``|<u,Hv> - <v,Hu>|`` over random probe pairs."""
    rng = np.random.default_rng(seed)
    scale = max(spectral_norm_estimate(op, 30, rng), np.finfo(float).tiny)
    worst = 0.0
    for _ in range(n_probes):
        u = rng.standard_normal(op.dimension)
        v = rng.standard_normal(op.dimension)
        gap = abs(u @ op.matvec(v) - v @ op.matvec(u))
        worst = max(worst, gap / (np.linalg.norm(u) * np.linalg.norm(v) * scale))
    return worst
