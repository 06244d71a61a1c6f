"""Objectives with analytic derivatives and Hessian operator constructors."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from fractions import Fraction
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .core import HVP_COST, HessianOperator, dense_operator, worker_count

# fixed row-chunk size so reductions do not depend on the worker count
CHUNK_ROWS = 4096


class Problem:
    """Smooth objective with value, gradient and Hessian-vector products.

    Subclasses implement :meth:`value`, :meth:`gradient` and :meth:`hvp`.
    ``x0`` is the default starting point, ``f_star`` the optimal value when
    known.
    """

    d: int
    x0: np.ndarray
    f_star: Optional[float] = None
    lipschitz_hessian: Optional[float] = None

    def value(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def hvp(self, x, v) -> np.ndarray:
        raise NotImplementedError

    def hessian_dense(self, x) -> np.ndarray:
        eye = np.eye(self.d)
        H = np.column_stack([self.hvp(x, eye[:, j]) for j in range(self.d)])
        return 0.5 * (H + H.T)

    def hessian_operator(self, x) -> HessianOperator:
        x = np.array(x, dtype=np.float64)
        return HessianOperator(lambda v: self.hvp(x, v), self.d, HVP_COST, kind="exact")


class QuadraticProblem(Problem):
    """``f(x) = x'Qx/2 + b'x`` with a dense symmetric ``Q``."""

    def __init__(self, Q, b=None, x0=None, f_star=None):
        self.Q = np.asarray(Q, dtype=np.float64)
        self.d = self.Q.shape[0]
        self.b = np.zeros(self.d) if b is None else np.asarray(b, dtype=np.float64)
        self.x0 = np.zeros(self.d) if x0 is None else np.asarray(x0, dtype=np.float64)
        self.f_star = f_star
        self.lipschitz_hessian = 0.0

    def value(self, x):
        return float(0.5 * x @ (self.Q @ x) + self.b @ x)

    def gradient(self, x):
        return self.Q @ x + self.b

    def hvp(self, x, v):
        return self.Q @ v

    def hessian_dense(self, x):
        return self.Q.copy()


class CosineQuadratic(Problem):
    """``x'Ax/2 + b'x + sum_i w_i cos(x_i)``.

    The Hessian is ``A - diag(w * cos(x))`` and is Lipschitz with constant
    ``max |w_i|``.
    """

    def __init__(self, A, b, w, x0):
        self.A = np.asarray(A, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.w = np.asarray(w, dtype=np.float64)
        self.d = self.A.shape[0]
        self.x0 = np.asarray(x0, dtype=np.float64)
        self.lipschitz_hessian = float(np.max(np.abs(self.w)))

    def value(self, x):
        return float(0.5 * x @ (self.A @ x) + self.b @ x + self.w @ np.cos(x))

    def gradient(self, x):
        return self.A @ x + self.b - self.w * np.sin(x)

    def hvp(self, x, v):
        return self.A @ v - self.w * np.cos(x) * v

    def hessian_dense(self, x):
        return self.A - np.diag(self.w * np.cos(x))


class QuarticSaddle(Problem):
    """``x'Ax/2 + sum_i x_i^4 / 4``; strict saddle at 0 when ``A`` is indefinite."""

    def __init__(self, A, x0):
        self.A = np.asarray(A, dtype=np.float64)
        self.d = self.A.shape[0]
        self.x0 = np.asarray(x0, dtype=np.float64)

    def value(self, x):
        return float(0.5 * x @ (self.A @ x) + 0.25 * np.sum(x ** 4))

    def gradient(self, x):
        return self.A @ x + x ** 3

    def hvp(self, x, v):
        return self.A @ v + 3.0 * x * x * v

    def hessian_dense(self, x):
        return self.A + np.diag(3.0 * x * x)


class Dataset:
    """Features ``A`` (dense or CSR, n x d) and binary labels ``b``."""

    def __init__(self, features, labels):
        if sp.issparse(features):
            features = sp.csr_matrix(features, dtype=np.float64)
            finite = np.all(np.isfinite(features.data))
        else:
            features = np.asarray(features, dtype=np.float64)
            if features.ndim != 2:
                raise ValueError("features must be a 2-D array")
            finite = np.all(np.isfinite(features))
        labels = np.asarray(labels, dtype=np.float64)
        if features.shape[0] != labels.shape[0]:
            raise ValueError("row count does not match label count")
        if not finite:
            raise ValueError("feature values must be finite")
        self.features = features
        self.labels = labels

    @property
    def n(self):
        return self.features.shape[0]

    @property
    def d(self):
        return self.features.shape[1]


def _weighted_gram_apply(A, weights, v, rows=None):
    """``A_S' (weights_S * (A_S v))`` summed over row chunks in fixed order."""
    if rows is not None:
        A = A[rows]
        weights = weights[rows]
    n = A.shape[0]
    starts = list(range(0, n, CHUNK_ROWS))

    def chunk(i):
        Ac = A[i:i + CHUNK_ROWS]
        return Ac.T @ (weights[i:i + CHUNK_ROWS] * (Ac @ v))

    workers = min(worker_count(), len(starts))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(chunk, starts))
    else:
        parts = [chunk(i) for i in starts]
    out = parts[0]
    for p in parts[1:]:
        out = out + p
    return np.asarray(out).ravel()


class FiniteSumProblem(Problem):
    """``f(x) = (1/n) sum_i loss(<a_i, x>, b_i) + lam * sum_j x_j^2/(1+x_j^2)``.

    Parameters
    ----------
    dataset : Dataset
    loss : {"logistic", "nls"}
    reg : float
        Weight of the nonconvex regularizer.
    x0 : ndarray, optional
    """

    def __init__(self, dataset: Dataset, loss: str, reg: float = 0.0, x0=None):
        if loss not in ("logistic", "nls"):
            raise ValueError(f"unknown loss {loss!r}")
        self.data = dataset
        self.A = dataset.features
        self.b = dataset.labels
        self.loss = loss
        self.reg = float(reg)
        self.n = dataset.n
        self.d = dataset.d
        self.x0 = np.zeros(self.d) if x0 is None else np.asarray(x0, dtype=np.float64)

    def _z(self, x):
        return np.asarray(self.A @ x).ravel()

    def sample_values(self, x):
        z = self._z(x)
        if self.loss == "logistic":
            # softplus(z) - b z rewritten so large margins do not cancel
            return (1.0 - self.b) * np.logaddexp(0.0, z) + self.b * np.logaddexp(0.0, -z)
        return (expit(z) - self.b) ** 2

    def sample_gradients(self, x):
        """Dense ``n x d`` matrix of per-sample gradients (small problems)."""
        z = self._z(x)
        A = self.A.toarray() if sp.issparse(self.A) else self.A
        return self._dz(z)[:, None] * A + self._reg_grad(x)[None, :]

    def _dz(self, z):
        s = expit(z)
        if self.loss == "logistic":
            return s - self.b
        return 2.0 * (s - self.b) * s * (1.0 - s)

    def _d2z(self, z):
        s = expit(z)
        sp1 = s * (1.0 - s)
        if self.loss == "logistic":
            return sp1
        return 2.0 * (sp1 * sp1 + (s - self.b) * sp1 * (1.0 - 2.0 * s))

    def _reg_value(self, x):
        return self.reg * float(np.sum(x * x / (1.0 + x * x)))

    def _reg_grad(self, x):
        return self.reg * 2.0 * x / (1.0 + x * x) ** 2

    def _reg_diag(self, x):
        x2 = x * x
        return self.reg * (2.0 - 6.0 * x2) / (1.0 + x2) ** 3

    def value(self, x):
        return float(np.mean(self.sample_values(x))) + self._reg_value(x)

    def gradient(self, x):
        z = self._z(x)
        return np.asarray(self.A.T @ self._dz(z)).ravel() / self.n + self._reg_grad(x)

    def hvp(self, x, v, rows=None):
        """Hessian-vector product, optionally restricted to sample ``rows``."""
        z = self._z(x)
        w = self._d2z(z)
        m = self.n if rows is None else len(rows)
        return _weighted_gram_apply(self.A, w, v, rows) / m + self._reg_diag(x) * v

    def hessian_operator(self, x) -> HessianOperator:
        x = np.array(x, dtype=np.float64)
        w = self._d2z(self._z(x))
        rd = self._reg_diag(x)
        A, n = self.A, self.n
        return HessianOperator(lambda v: _weighted_gram_apply(A, w, v) / n + rd * v,
                               self.d, HVP_COST, kind="exact")


def logistic_problem(dataset: Dataset, reg: float = 0.0) -> FiniteSumProblem:
    """Binary logistic regression in the numerically stable softplus form."""
    return FiniteSumProblem(dataset, "logistic", reg)


def nls_problem(dataset: Dataset, reg: float = 0.0) -> FiniteSumProblem:
    """Per-sample squared sigmoid residual ``(1/n) sum (s(<a_i,x>) - b_i)^2``."""
    return FiniteSumProblem(dataset, "nls", reg)


def subsampled_hessian(problem: FiniteSumProblem, x, fraction: float, rng) -> HessianOperator:
    """Hessian of a uniform sample drawn without replacement, frozen per call.

    ``|S| = max(1, round(fraction * n))`` and the cost per product is
    ``4 |S| / n``. A full sample returns the exact operator.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    n = problem.n
    m = min(max(1, int(round(fraction * n))), n)
    if m == n:
        return problem.hessian_operator(x)
    rows = np.sort(rng.choice(n, size=m, replace=False))
    x = np.array(x, dtype=np.float64)
    w = problem._d2z(problem._z(x))
    rd = problem._reg_diag(x)
    A = problem.A
    return HessianOperator(lambda v: _weighted_gram_apply(A, w, v, rows) / m + rd * v,
                           problem.d, HVP_COST * Fraction(m, n), kind="subsampled",
                           params={"fraction": Fraction(m, n), "rows": rows})


def random_orthogonal(d, rng):
    """Haar-distributed orthogonal matrix via QR with sign correction."""
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    return Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))


def noise_matrix(d, epsilon, rng):
    """``epsilon * W diag(+-1) W'``, whose spectral norm is exactly ``epsilon``."""
    W = random_orthogonal(d, rng)
    signs = rng.choice(np.array([-1.0, 1.0]), size=d)
    E = epsilon * (W * signs) @ W.T
    return 0.5 * (E + E.T)


def noisy_hessian(H_dense, epsilon: float, rng) -> HessianOperator:
    """Operator for ``H + E`` with a fresh random ``E``, ``||E|| = epsilon``."""
    H = np.asarray(H_dense, dtype=np.float64)
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if epsilon == 0:
        return dense_operator(H)
    E = noise_matrix(H.shape[0], epsilon, rng)
    return dense_operator(H + E, kind="noisy", params={"epsilon": epsilon, "E": E})


def example2_instance(epsilon: float, seed=0, d: int = 30, n_neg: int = 2):
    """Dense ``(Hbar, E, g)`` with ``Hbar = V D V' + epsilon W D_pm W'``.

    ``D`` holds ``d - n_neg`` draws from U(0, 10) and ``n_neg`` from U(-1, 0).
    Everything except ``epsilon`` is fixed by ``seed``, so sweeping
    ``epsilon`` changes only the noise magnitude.
    """
    rng = np.random.default_rng(seed)
    D = np.concatenate([rng.uniform(0, 10, d - n_neg), rng.uniform(-1, 0, n_neg)])
    V = random_orthogonal(d, rng)
    W = random_orthogonal(d, rng)
    signs = rng.choice(np.array([-1.0, 1.0]), size=d)
    g = rng.standard_normal(d)
    H = (V * D) @ V.T
    E = epsilon * (W * signs) @ W.T
    H = 0.5 * (H + H.T)
    E = 0.5 * (E + E.T)
    return H + E, E, g


def pl_quadratic(d: int, mu: float, L_g: float, seed=None) -> QuadraticProblem:
    """Strongly convex quadratic with spectrum log-spaced in ``[mu, L_g]``."""
    if not 0 < mu <= L_g:
        raise ValueError("need 0 < mu <= L_g")
    rng = np.random.default_rng(seed)
    lam = np.geomspace(L_g, mu, d) if d > 1 else np.array([mu])
    Q = random_orthogonal(d, rng) if d > 1 else np.ones((1, 1))
    H = (Q * lam) @ Q.T
    H = 0.5 * (H + H.T)
    x0 = rng.standard_normal(d)
    return QuadraticProblem(H, x0=x0, f_star=0.0)


def gaussian_blobs(n: int = 2000, d: int = 50, m: float = 1.0, seed=None) -> Dataset:
    """Two unit-covariance Gaussian classes with means ``+-m * 1/sqrt(d)``."""
    rng = np.random.default_rng(seed)
    labels = (np.arange(n) % 2).astype(np.float64)
    rng.shuffle(labels)
    means = np.where(labels[:, None] > 0, m, -m) / np.sqrt(d)
    X = means + rng.standard_normal((n, d))
    return Dataset(X, labels)


def finite_difference_gradcheck(problem: Problem, x, h_step: float = 1e-5) -> float:
    """Max coordinate error of the analytic gradient against central differences.

    The error is scaled by ``max(||g||_inf, 1)``.
    """
    x = np.asarray(x, dtype=np.float64)
    g = problem.gradient(x)
    num = np.empty_like(g)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h_step
        num[i] = (problem.value(x + e) - problem.value(x - e)) / (2 * h_step)
    return float(np.max(np.abs(num - g)) / max(np.max(np.abs(g)), 1.0))


def finite_difference_hvpcheck(problem: Problem, x, v, h_step: float = 1e-5) -> float:
    """Relative error of ``hvp(x, v)`` against differenced gradients."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    hv = problem.hvp(x, v)
    num = (problem.gradient(x + h_step * v) - problem.gradient(x - h_step * v)) / (2 * h_step)
    return float(np.linalg.norm(num - hv) / max(np.linalg.norm(hv), 1.0))


def parse_label_rule(rule: str) -> Callable[[float], float]:
    """``"sign"``, ``"parity"`` or ``"threshold:c"`` to a label map onto {0, 1}."""
    if rule == "sign":
        return lambda y: 1.0 if y > 0 else 0.0
    if rule in ("parity", "parity_of_integer_label"):
        def parity(y):
            if y != int(y):
                raise ValueError(f"parity rule needs integer labels, got {y}")
            return float(int(y) % 2)
        return parity
    if rule.startswith("threshold"):
        _, _, c = rule.partition(":")
        if not c:
            raise ValueError("threshold rule needs a value, e.g. threshold:0.5")
        c = float(c)
        return lambda y: 1.0 if y > c else 0.0
    raise ValueError(f"unknown label rule {rule!r}")


def load_dataset(path, label_rule: str = "sign", n_features: Optional[int] = None) -> Dataset:
    """Read a LIBSVM-format text file (``label idx:val ...``, 1-based indices).

    Raises
    ------
    ValueError
        On an empty file, a malformed line or a repeated index; the message
        carries the 1-based line number.
    """
    mapper = parse_label_rule(label_rule)
    labels, rows, cols, vals = [], [], [], []
    max_col = 0
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                y = float(parts[0])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: bad label {parts[0]!r}")
            seen = set()
            r = len(labels)
            for tok in parts[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    j = int(idx)
                    v = float(val)
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: malformed feature {tok!r}")
                if not sep or j < 1:
                    raise ValueError(f"{path}:{lineno}: malformed feature {tok!r}")
                if j in seen:
                    raise ValueError(f"{path}:{lineno}: duplicate feature index {j}")
                if not np.isfinite(v):
                    raise ValueError(f"{path}:{lineno}: non-finite value {tok!r}")
                seen.add(j)
                rows.append(r)
                cols.append(j - 1)
                vals.append(v)
                max_col = max(max_col, j)
            try:
                labels.append(mapper(y))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}")
    if not labels:
        raise ValueError(f"{path}: empty dataset")
    d = max_col if n_features is None else n_features
    if max_col > d:
        raise ValueError(f"{path}: feature index {max_col} exceeds n_features={d}")
    X = sp.csr_matrix((vals, (rows, cols)), shape=(len(labels), d))
    return Dataset(X, np.array(labels))
