import csv

import numpy as np
import pytest

from newtonmr.core import NumericalFailure, OracleCounter, dense_operator, identity_operator
from newtonmr.minres import (Tag, krylov_oracle_solve, lanczos_min_eig_trace, minres_solve,
                             write_trace_csv)


def sym(rng, d):
    H = rng.standard_normal((d, d))
    return (H + H.T) / 2


def spd(rng, d, lo=0.5, hi=5.0):
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return Q @ np.diag(rng.uniform(lo, hi, d)) @ Q.T


def test_identity_returns_negative_gradient():
    g = np.array([1.0, -2.0, 0.5])
    out = minres_solve(identity_operator(3), g, 0.1)
    assert out.tag is Tag.SOL
    np.testing.assert_allclose(out.direction, -g, atol=1e-14)


def test_negative_identity_is_npc_at_first_iteration():
    g = np.array([1.0, 2.0])
    out = minres_solve(dense_operator(-np.eye(2)), g, 0.1)
    assert out.tag is Tag.NPC
    assert out.iterations == 1
    np.testing.assert_allclose(out.direction, -g)
    assert out.curvature == pytest.approx(-5.0)


def test_zero_curvature_classified_npc():
    H = np.diag([0.0, 0.0])
    out = minres_solve(dense_operator(H), np.array([1.0, 0.0]), 0.0)
    assert out.tag is Tag.NPC


def test_zero_gradient_rejected():
    with pytest.raises(ValueError):
        minres_solve(identity_operator(2), np.zeros(2), 0.1)
    with pytest.raises(NumericalFailure):
        minres_solve(identity_operator(2), np.array([np.nan, 1.0]), 0.1)
    with pytest.raises(ValueError):
        minres_solve(identity_operator(2), np.ones(2), -1.0)


def test_counter_charged_per_product():
    c = OracleCounter()
    out = minres_solve(dense_operator(spd(np.random.default_rng(0), 6)), np.ones(6), 0.0,
                       counter=c)
    assert c.hvp_calls == out.hvps


def test_oracle_identity_and_full_grade():
    rng = np.random.default_rng(1)
    g = rng.standard_normal(5)
    np.testing.assert_allclose(krylov_oracle_solve(np.eye(5), g, 1), -g, atol=1e-14)
    H = spd(rng, 5)
    np.testing.assert_allclose(krylov_oracle_solve(H, g, 5), -np.linalg.solve(H, g), atol=1e-10)


def test_oracle_truncates_at_grade():
    H = np.diag([1.0, 1.0, 2.0, 2.0])
    g = np.ones(4)
    s, grade = krylov_oracle_solve(H, g, 4, return_grade=True)
    assert grade == 2
    np.testing.assert_allclose(s, -np.linalg.solve(H, g), atol=1e-12)


def test_spd_iterates_match_oracle():
    rng = np.random.default_rng(2)
    H = spd(rng, 15)
    g = rng.standard_normal(15)
    out = minres_solve(dense_operator(H), g, 0.0, npc_exit=False, keep_iterates=True)
    for t, s in enumerate(out.iterates[1:], start=1):
        ref = krylov_oracle_solve(H, g, t)
        assert np.linalg.norm(s - ref) <= 1e-8 * (1 + np.linalg.norm(ref))


def test_residual_norms_monotone_and_consistent():
    rng = np.random.default_rng(3)
    for _ in range(20):
        d = int(rng.integers(3, 25))
        H = sym(rng, d)
        g = rng.standard_normal(d)
        out = minres_solve(dense_operator(H), g, 0.0, npc_exit=False, trace=True,
                           keep_iterates=True)
        norms = [np.linalg.norm(H @ s + g) for s in out.iterates]
        assert all(b <= a * (1 + 1e-10) + 1e-12 for a, b in zip(norms, norms[1:]))
        for rec in out.trace:
            assert rec.phi == pytest.approx(norms[rec.t - 1], rel=1e-8, abs=1e-10)


def test_scalar_curvature_matches_vector_form():
    rng = np.random.default_rng(4)
    for _ in range(100):
        d = 20
        H = sym(rng, d)
        g = rng.standard_normal(d)
        out = minres_solve(dense_operator(H), g, 0.0, npc_exit=False, trace=True,
                           keep_iterates=True)
        for rec in out.trace:
            r = out.residuals[rec.t - 1]
            explicit = r @ H @ r
            scalar = rec.curvature_sign * rec.phi ** 2
            assert abs(scalar - explicit) <= 1e-8 * max(1.0, np.linalg.norm(H, 2) * r @ r)


def test_scalar_exit_tests_match_vector_form():
    rng = np.random.default_rng(5)
    checked = 0
    for _ in range(100):
        d = 20
        H = sym(rng, d)
        g = rng.standard_normal(d)
        eta = float(rng.uniform(0.05, 2.0))
        full = minres_solve(dense_operator(H), g, eta, npc_exit=False, keep_iterates=True)
        out = minres_solve(dense_operator(H), g, eta)
        for t in range(1, out.iterations + 1):
            s, r = full.iterates[t - 1], full.residuals[t - 1]
            lhs, rhs = np.linalg.norm(H @ r), eta * np.linalg.norm(H @ s)
            curv = r @ H @ r
            margin = 1e-8 * np.linalg.norm(H, 2) * (np.linalg.norm(r) + np.linalg.norm(s)) ** 2
            if abs(lhs ** 2 - rhs ** 2) <= margin or abs(curv) <= margin:
                continue
            fired_sol = lhs < rhs
            fired_npc = curv <= 0
            if t < out.iterations:
                assert not fired_sol and not fired_npc
            elif out.tag is Tag.SOL:
                assert fired_sol
            elif out.tag is Tag.NPC:
                assert fired_npc and not fired_sol
            checked += 1
    assert checked > 100


def test_npc_residual_identity_and_lower_bound():
    rng = np.random.default_rng(6)
    seen = 0
    for _ in range(50):
        d = 15
        H = sym(rng, d)
        g = rng.standard_normal(d)
        eta = 0.5
        out = minres_solve(dense_operator(H), g, eta)
        if out.tag is not Tag.NPC:
            continue
        seen += 1
        r = out.direction
        assert r @ g == pytest.approx(-(r @ r), rel=1e-8)
        hn = np.linalg.norm(H, 2)
        assert r @ r >= eta ** 2 / (hn ** 2 + eta ** 2) * (g @ g) * (1 - 1e-10)
    assert seen > 10


def test_pre_npc_descent_and_positive_tridiagonal():
    rng = np.random.default_rng(7)
    for _ in range(30):
        d = 12
        H = sym(rng, d)
        g = rng.standard_normal(d)
        out = minres_solve(dense_operator(H), g, 0.0, trace=True, keep_iterates=True)
        for rec in out.trace:
            if rec.t < out.iterations:
                assert rec.lambda_min_Tt > 0
        for s in out.iterates[1:out.iterations]:
            assert s @ g < 0


def test_exhausted_at_max_iter():
    rng = np.random.default_rng(8)
    H = spd(rng, 10)
    out = minres_solve(dense_operator(H), rng.standard_normal(10), 0.0, max_iter=3)
    assert out.tag is Tag.EXHAUSTED
    assert out.iterations == 3


def test_lanczos_trace_first_entry():
    tr = lanczos_min_eig_trace(dense_operator(np.diag([3.0, 1.0])), np.ones(2) / np.sqrt(2))
    assert tr[0][0] == 1
    assert tr[0][1] == pytest.approx(2.0)


def test_write_trace_csv(tmp_path):
    rng = np.random.default_rng(9)
    out = minres_solve(dense_operator(sym(rng, 6)), rng.standard_normal(6), 0.0, trace=True)
    path = tmp_path / "trace.csv"
    write_trace_csv(path, out.trace)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "phi_t", "alpha_tilde", "beta_next", "npc_flag", "lambda_min_Tt"]
    assert len(rows) == len(out.trace) + 1
    assert float(rows[1][1]) == out.trace[0].phi
