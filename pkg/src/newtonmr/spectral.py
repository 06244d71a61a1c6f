"""Dense spectral diagnostics: g-relevant spectra, perturbation checks, MINRES studies.

Index conventions follow the mathematical statements: eigenvalues are sorted
in decreasing order and the index maps ``Phi`` and its left inverse use
1-based indices.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import dense_operator
from .minres import Tag, minres_solve
from .problems import example2_instance

MAX_DENSE_DIM = 500
GROUP_TOL = 1e-9
RELEVANCE_TOL = 1e-10


def sorted_eigh(H):
    """Eigenpairs of a symmetric matrix, eigenvalues in decreasing order."""
    H = np.asarray(H, dtype=np.float64)
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    return w[::-1], V[:, ::-1]


@dataclass
class GRelevantSpectrum:
    """Distinct g-relevant eigenvalues of ``H`` and their index map.

    Attributes
    ----------
    distinct_relevant : ndarray
        ``zeta_1 > ... > zeta_phi``.
    phi_plus, phi_zero, phi_minus : int
    phi_map : list of int
        1-based ``Phi(k)`` into ``full_spectrum``.
    full_spectrum : ndarray
        All eigenvalues, decreasing.
    relevant_basis : ndarray
        ``d x phi``; column ``k`` is the unit eigenvector of ``zeta_k``
        carrying the whole projection of ``g`` on that eigenspace.
    groups : list of (start, stop)
        0-based half-open index ranges of the eigenvalue groups.
    relevant_groups : list of int
        Group number of each ``zeta_k``.
    """

    distinct_relevant: np.ndarray
    phi_plus: int
    phi_zero: int
    phi_minus: int
    phi_map: List[int]
    full_spectrum: np.ndarray
    relevant_basis: np.ndarray
    groups: List[tuple] = field(default_factory=list)
    relevant_groups: List[int] = field(default_factory=list)
    eigenvectors: Optional[np.ndarray] = None

    @property
    def phi(self):
        return len(self.distinct_relevant)


def _group(evals, tol):
    groups = []
    start = 0
    for i in range(1, len(evals) + 1):
        if i == len(evals) or evals[i - 1] - evals[i] > tol:
            groups.append((start, i))
            start = i
    return groups


def g_relevant_spectrum(H_dense, g, relevance_tol: float = RELEVANCE_TOL,
                        group_tol: float = GROUP_TOL) -> GRelevantSpectrum:
    """Partition the spectrum of ``H`` into g-relevant and non-relevant parts.

    Eigenvalues within ``group_tol * ||H||`` are merged into one distinct
    value; an eigenspace is relevant when the projection of ``g`` on it
    exceeds ``relevance_tol * ||g||``.
    """
    H = np.asarray(H_dense, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if H.shape[0] > MAX_DENSE_DIM:
        raise ValueError(f"dense diagnostics are capped at d={MAX_DENSE_DIM}")
    gnorm = np.linalg.norm(g)
    if gnorm == 0:
        raise ValueError("g must be nonzero")
    evals, V = sorted_eigh(H)
    hnorm = max(abs(evals[0]), abs(evals[-1]))
    tol = group_tol * hnorm
    groups = _group(evals, tol)
    zetas, phi_map, basis, rel_groups = [], [], [], []
    n_plus = n_zero = n_minus = 0
    for gi, (a, b) in enumerate(groups):
        proj = V[:, a:b] @ (V[:, a:b].T @ g)
        pn = np.linalg.norm(proj)
        if pn <= relevance_tol * gnorm:
            continue
        zeta = float(np.mean(evals[a:b]))
        if abs(zeta) <= tol:
            zeta = 0.0
            n_zero += 1
            phi_map.append(b)
        elif zeta > 0:
            n_plus += 1
            phi_map.append(b)
        else:
            n_minus += 1
            phi_map.append(a + 1)
        zetas.append(zeta)
        basis.append(proj / pn)
        rel_groups.append(gi)
    B = np.column_stack(basis) if basis else np.zeros((H.shape[0], 0))
    return GRelevantSpectrum(np.array(zetas), n_plus, n_zero, n_minus, phi_map, evals, B,
                             groups, rel_groups, V)


def phi_left_inverse(spec: GRelevantSpectrum, j: int) -> Optional[int]:
    """1-based ``k`` with ``zeta_k = zeta~_j`` if ``zeta~_j`` is relevant, else None."""
    d = len(spec.full_spectrum)
    if not 1 <= j <= d:
        raise ValueError(f"index {j} outside 1..{d}")
    for k, gi in enumerate(spec.relevant_groups, 1):
        a, b = spec.groups[gi]
        if a < j <= b:
            return k
    return None


def nonzero_relevant_projector(spec: GRelevantSpectrum, which: Sequence[int]):
    """Projector onto the relevant eigenvectors with 1-based indices ``which``."""
    if not which:
        return np.zeros((spec.relevant_basis.shape[0],) * 2)
    U = spec.relevant_basis[:, [k - 1 for k in which]]
    return U @ U.T


@dataclass
class DavisKahanResult:
    lhs: float
    rhs: float
    holds: bool
    orientation: str
    gap: float

    def __iter__(self):
        return iter((self.lhs, self.rhs, self.holds))


def davis_kahan_check(H, E, i: int, orientation: str = "top", tol: float = 1e-10) -> DavisKahanResult:
    """Compare ``||U_i U_i' - S_i S_i'||`` with ``2 ||E|| / delta_i``.

    ``orientation="top"`` uses the leading ``i`` eigenvectors and
    ``delta_i = zeta~_i - zeta~_{i+1}`` (``zeta~_{d-1} - zeta~_d`` for
    ``i = d``) and needs ``lambda~_i > 0``. ``"bottom"`` is the mirrored
    statement for the trailing eigenvectors ``i..d`` with gap
    ``zeta~_{i-1} - zeta~_i`` and needs ``lambda~_i < 0``.
    """
    H = np.asarray(H, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    d = H.shape[0]
    if not 1 <= i <= d:
        raise ValueError(f"index {i} outside 1..{d}")
    zeta, S = sorted_eigh(H)
    lam, U = sorted_eigh(H + E)
    if orientation == "top":
        if not lam[i - 1] > 0:
            raise ValueError("top orientation needs a positive eigenvalue at index i")
        gap = zeta[i - 1] - zeta[i] if i < d else zeta[d - 2] - zeta[d - 1]
        cols = slice(0, i)
    elif orientation == "bottom":
        if not lam[i - 1] < 0:
            raise ValueError("bottom orientation needs a negative eigenvalue at index i")
        gap = zeta[i - 2] - zeta[i - 1] if i > 1 else zeta[0] - zeta[1]
        cols = slice(i - 1, d)
    else:
        raise ValueError(f"unknown orientation {orientation!r}")
    if not gap > 0:
        raise ValueError("zero spectral gap: the bound is vacuous")
    Us, Ss = U[:, cols], S[:, cols]
    lhs = float(np.linalg.norm(Us @ Us.T - Ss @ Ss.T, 2))
    rhs = 2.0 * float(np.linalg.norm(E, 2)) / gap
    return DavisKahanResult(lhs, rhs, lhs <= rhs + tol, orientation, gap)


def weyl_check(H, E) -> float:
    """Largest displacement ``max_i |lambda~_i - zeta~_i|`` of the sorted spectra."""
    zeta = np.linalg.eigvalsh(np.asarray(H, dtype=np.float64))
    lam = np.linalg.eigvalsh(np.asarray(H, dtype=np.float64) + np.asarray(E, dtype=np.float64))
    return float(np.max(np.abs(lam - zeta)))


def krylov_sigma(H, g, max_iter=None) -> float:
    """Smallest ``lambda_min(T_t)`` seen by MINRES (``eta = 0``) before it exits."""
    out = minres_solve(dense_operator(H), g, 0.0, max_iter=max_iter, trace=True)
    return out.krylov_sigma()


def null_space_regularity_check(H, g, sigma, eps_noise, L_g):
    """``(||S S' g||, (sigma - eps)/L_g * ||g||)`` for the nonzero relevant part."""
    spec = g_relevant_spectrum(H, g)
    idx = [k for k, z in enumerate(spec.distinct_relevant, 1) if z != 0.0]
    P = nonzero_relevant_projector(spec, idx)
    return float(np.linalg.norm(P @ g)), (sigma - eps_noise) / L_g * float(np.linalg.norm(g))


@dataclass
class TransferReport:
    hypothesis_ok: bool
    message: str
    epsilon: float
    case: str = ""
    index: Optional[int] = None
    eigen_margin: float = float("nan")
    projection_margin: float = float("nan")
    projection_margin_alt: float = float("nan")
    holds: bool = False


def assumption5_transfer_check(H, g, E, mu, nu, delta, sigma, L_g, case: str = "ii",
                               k: Optional[int] = None, l: Optional[int] = None,
                               tol: float = 1e-12) -> TransferReport:
    """Check that the large-eigenvalue condition on ``H`` carries over to ``H + E``.

    The hypothesis ``||E|| <= min(mu, sqrt(nu) delta sigma / (2 (sqrt(nu) delta + 4 L_g)))``
    and the condition on ``H`` (indices ``k``/``l``, 1-based into the distinct
    relevant spectrum, with gap ``delta``) are verified first. Then the
    relevant spectrum of ``H + E`` is searched for indices meeting
    ``lambda >= mu - eps`` and the projection bound with factor
    ``nu sigma^2 / (4 L_g^2)``. The margin under the ``nu sigma^2 / (4 L_g)``
    reading is reported as ``projection_margin_alt``.
    """
    H = np.asarray(H, dtype=np.float64)
    E = np.asarray(E, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    eps = float(np.linalg.norm(E, 2))
    sq = math.sqrt(nu)
    bound = min(mu, sq * delta * sigma / (2.0 * (sq * delta + 4.0 * L_g)))
    if eps > bound + tol:
        return TransferReport(False, f"noise {eps:.3g} exceeds admissible {bound:.3g}", eps, case)

    spec = g_relevant_spectrum(H, g)
    P_all = nonzero_relevant_projector(
        spec, [i for i, z in enumerate(spec.distinct_relevant, 1) if z != 0.0])
    base = float(np.linalg.norm(P_all @ g)) ** 2
    zt = spec.full_spectrum
    d = len(zt)

    def pos_ok(kk):
        if not 1 <= kk <= spec.phi_plus:
            return False
        j = spec.phi_map[kk - 1]
        gap_ok = j == d or zt[j - 1] - zt[j] >= delta - tol
        return spec.distinct_relevant[kk - 1] >= mu - tol and gap_ok

    def neg_ok(ll):
        first = spec.phi_plus + spec.phi_zero + 1
        if not first <= ll <= spec.phi:
            return False
        j = spec.phi_map[ll - 1]
        gap_ok = j == 1 or zt[j - 2] - zt[j - 1] >= delta - tol
        return abs(spec.distinct_relevant[ll - 1]) >= mu - tol and gap_ok

    def proj(which):
        return float(np.linalg.norm(nonzero_relevant_projector(spec, which) @ g)) ** 2

    first_neg = spec.phi_plus + spec.phi_zero + 1
    if case == "ii":
        ok = k is not None and pos_ok(k) and proj(list(range(1, k + 1))) >= nu * base - tol
    elif case == "iii":
        ok = l is not None and neg_ok(l) and proj(list(range(l, spec.phi + 1))) >= nu * base - tol
    elif case == "i":
        ok = (k is not None and l is not None and pos_ok(k) and neg_ok(l)
              and proj(list(range(1, k + 1)) + list(range(l, spec.phi + 1))) >= nu * base - tol)
    else:
        raise ValueError(f"unknown case {case!r}")
    if not ok:
        return TransferReport(False, "condition on H does not hold for the given indices", eps, case)

    bar = g_relevant_spectrum(H + E, g)
    lam = bar.distinct_relevant
    P_bar = nonzero_relevant_projector(
        bar, [i for i, z in enumerate(lam, 1) if z != 0.0])
    base_bar = float(np.linalg.norm(P_bar @ g)) ** 2
    factor = nu * sigma ** 2 / (4.0 * L_g ** 2)
    factor_alt = nu * sigma ** 2 / (4.0 * L_g)
    bneg = bar.phi_plus + bar.phi_zero + 1

    def bproj(which):
        return float(np.linalg.norm(nonzero_relevant_projector(bar, which) @ g)) ** 2

    candidates = []
    if case in ("ii", "i"):
        for i in range(1, bar.phi_plus + 1):
            if lam[i - 1] >= mu - eps - tol:
                p = bproj(list(range(1, i + 1)))
                candidates.append(("ii", i, lam[i - 1] - (mu - eps), p - factor * base_bar,
                                   p - factor_alt * base_bar))
    if case in ("iii", "i"):
        for j in range(bneg, bar.phi + 1):
            if abs(lam[j - 1]) >= mu - eps - tol:
                p = bproj(list(range(j, bar.phi + 1)))
                candidates.append(("iii", j, abs(lam[j - 1]) - (mu - eps), p - factor * base_bar,
                                   p - factor_alt * base_bar))
    if case == "i":
        for i in range(1, bar.phi_plus + 1):
            for j in range(bneg, bar.phi + 1):
                if min(lam[i - 1], abs(lam[j - 1])) >= mu - eps - tol:
                    p = bproj(list(range(1, i + 1)) + list(range(j, bar.phi + 1)))
                    candidates.append(("i", (i, j), min(lam[i - 1], abs(lam[j - 1])) - (mu - eps),
                                       p - factor * base_bar, p - factor_alt * base_bar))
    if not candidates:
        return TransferReport(True, "no index of H + E meets the eigenvalue bound", eps, case)
    best = max(candidates, key=lambda c: c[3])
    return TransferReport(True, "ok" if best[3] >= -tol else "projection bound fails", eps,
                          best[0], best[1], best[2], best[3], best[4], best[3] >= -tol)


# closed forms for the 2x2 examples

def example1_closed_forms(L_g, mu, eps):
    """Printed closed forms for ``Hbar = diag(L_g + eps, -mu + eps)``, ``g = -(1, 1)``."""
    return {
        "alpha1": (L_g - mu) / 2.0,
        "beta2": (L_g + mu) / 2.0,
        "curv_r0": (L_g - mu) / 2.0,
        "alpha2": (L_g - mu + 2.0 * eps) / 2.0,
        "curv_r1": (L_g - mu + 2.0 * eps) * (L_g + eps) * (-mu + eps)
        / ((L_g + eps) ** 2 + (-mu + eps) ** 2),
    }


def example3_relative_residual(L_g, mu, eps, h):
    """``||r_1|| / ||g||`` for ``Hbar = diag(L_g + eps, -mu + eps)``, ``g = -(1, h)``."""
    return (L_g + mu) * h / math.sqrt((1 + h * h) * ((L_g + eps) ** 2 + (-mu + eps) ** 2 * h * h))


def example3_npc_at_first(L_g, mu, eps, h):
    """True when the curvature test fires already at ``t = 1``."""
    if eps >= mu:
        return False
    return h * h > -(L_g + eps) / (-mu + eps)


def two_by_two_run(L_g, mu, eps, h=1.0):
    """MINRES on the 2x2 example with ``eta = 0``; returns the outcome with trace."""
    H = np.diag([L_g + eps, -mu + eps])
    g = -np.array([1.0, h])
    return minres_solve(dense_operator(H), g, 0.0, trace=True, keep_iterates=True)


def npc_relative_residual_study(config: Dict) -> List[tuple]:
    """Relative residual at the NPC exit across an ``epsilon`` grid.

    ``config`` keys: ``kind`` (``"example2"`` or ``"example3"``), ``epsilons``;
    for example2 ``seed`` and ``d``; for example3 ``L_g``, ``mu``, ``h``.

    Returns
    -------
    list of (epsilon, relative_residual, npc_iteration)
        ``relative_residual`` and ``npc_iteration`` are NaN and -1 when no
        NPC exit occurs.
    """
    rows = []
    for eps in config["epsilons"]:
        if config.get("kind", "example2") == "example3":
            out = two_by_two_run(config["L_g"], config["mu"], eps, config["h"])
            gnorm = math.hypot(1.0, config["h"])
        else:
            Hbar, _, g = example2_instance(eps, config.get("seed", 0), config.get("d", 30))
            out = minres_solve(dense_operator(Hbar), g, 0.0)
            gnorm = float(np.linalg.norm(g))
        if out.tag is Tag.NPC:
            rows.append((eps, float(np.linalg.norm(out.direction)) / gnorm, out.iterations))
        else:
            rows.append((eps, float("nan"), -1))
    return rows


def lambda_min_study(epsilons, seed=0, d: int = 30) -> List[tuple]:
    """``(epsilon, t, lambda_min(T_t))`` along MINRES on the random 30x30 construction."""
    rows = []
    for eps in epsilons:
        Hbar, _, g = example2_instance(eps, seed, d)
        out = minres_solve(dense_operator(Hbar), g, 0.0, trace=True)
        rows.extend((eps, rec.t, rec.lambda_min_Tt) for rec in out.trace)
    return rows


def pre_npc_lambda_min(epsilon, seed=0, d: int = 30) -> float:
    """``lambda_min(T_t)`` at the iteration before the NPC exit."""
    Hbar, _, g = example2_instance(epsilon, seed, d)
    out = minres_solve(dense_operator(Hbar), g, 0.0, trace=True)
    if out.tag is not Tag.NPC or out.iterations < 2:
        return float("nan")
    return out.trace[out.iterations - 2].lambda_min_Tt


def write_rows_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
