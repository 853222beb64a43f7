import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import spd
from hodgelab import (ComplexError, ComplexOperator, DualNormProblem, GridSpec, InnerProductSpace,
                      MaterialField, build_derham, dual_norm, helmholtz2, projection_pair,
                      reduced_dual_norm_identity, sequence_compactness_diagnostics)
from hodgelab.dual_norms import isomorphism_report, reduced_dual_norm, tail_slope


def _svd_dual_norm(op, x):
    """sup_φ <x, A*φ>/|φ|_graph = |(I + ÂÂᵀ)^{-1/2} Â x̂| from the singular values."""
    gd = np.asarray(op.domain.gram.todense() if hasattr(op.domain.gram, "todense") else op.domain.gram)
    gc = np.asarray(op.codomain.gram.todense() if hasattr(op.codomain.gram, "todense") else op.codomain.gram)
    ld, lc = np.linalg.cholesky(gd), np.linalg.cholesky(gc)
    a = np.asarray(op.matrix.todense() if hasattr(op.matrix, "todense") else op.matrix)
    ahat = lc.T @ a @ np.linalg.inv(ld.T)
    u, s, vt = np.linalg.svd(ahat, full_matrices=False)
    c = vt @ (ld.T @ x)
    return math.sqrt(np.sum(s**2 / (1 + s**2) * c**2))


def _dense_op(rng, m, n, rank):
    a = rng.standard_normal((m, rank)) @ rng.standard_normal((rank, n))
    return ComplexOperator(a, InnerProductSpace(spd(rng, n)), InnerProductSpace(spd(rng, m)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6), st.integers(1, 6))
def test_dual_norm_matches_svd_oracle(seed, m, n):
    rng = np.random.default_rng(seed)
    op = _dense_op(rng, m, n, rng.integers(1, min(m, n) + 1))
    x = rng.standard_normal(n)
    p = DualNormProblem(op)
    assert dual_norm(p, x) == pytest.approx(_svd_dual_norm(op, x), rel=1e-8, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_dual_norm_bounded_by_norm(seed):
    rng = np.random.default_rng(seed)
    op = _dense_op(rng, 5, 4, 3)
    x = rng.standard_normal(4)
    assert DualNormProblem(op).dual_norm(x) <= op.domain.norm(x) * (1 + 1e-12)


def test_dual_norm_on_grid_matches_oracle():
    grid = GridSpec.box(3, "x1-lo")
    dr = build_derham(grid, MaterialField.random(grid, seed=3))
    for op in (dr.grad, dr.curl):
        p = DualNormProblem(op)
        x = np.random.default_rng(1).standard_normal(op.domain.dim)
        assert p.dual_norm(x) == pytest.approx(_svd_dual_norm(op, x), rel=1e-9)


def test_cg_solver_matches_direct():
    grid = GridSpec.box(4, "all-n")
    dr = build_derham(grid, MaterialField.random(grid, seed=5))
    x = np.random.default_rng(2).standard_normal(dr.spaces[1].dim)
    d = DualNormProblem(dr.curl, solver="direct").dual_norm(x)
    c = DualNormProblem(dr.curl, solver="cg").dual_norm(x)
    assert c == pytest.approx(d, rel=1e-9)


@pytest.mark.parametrize("name", ["grad", "curl"])
def test_reduced_identity_on_grid(name):
    grid = GridSpec.box(3, "x1-pair")
    dr = build_derham(grid, MaterialField.random(grid, seed=7))
    p = DualNormProblem(getattr(dr, name))
    rng = np.random.default_rng(11)
    for _ in range(10):
        ident = reduced_dual_norm_identity(p, rng.standard_normal(p.op.domain.dim))
        assert ident.rel_gap <= 1e-8


def test_dual_norm_vanishes_exactly_on_kernel():
    dr = build_derham(GridSpec.box(3, "all-n"))
    p = DualNormProblem(dr.curl)
    u = np.random.default_rng(0).standard_normal(dr.spaces[0].dim)
    g = dr.grad.apply(u)
    assert p.dual_norm(g) <= 1e-12 * dr.spaces[1].norm(g)
    x = np.random.default_rng(1).standard_normal(dr.spaces[1].dim)
    assert p.dual_norm(x) > 1e-3


def test_reduced_dual_norm_zero_operator():
    op = ComplexOperator(np.zeros((2, 3)), InnerProductSpace.euclidean(3), InnerProductSpace.euclidean(2))
    assert reduced_dual_norm(op, np.ones(3)) == 0.0
    assert DualNormProblem(op).dual_norm(np.ones(3)) == 0.0


def test_projection_pair_identities(rng):
    op = _dense_op(rng, 6, 5, 3)
    pp = projection_pair(op)
    for pi, g in ((pp.pi_range, op.codomain.gram), (pp.pi_range_adjoint, op.domain.gram)):
        assert np.abs(pi @ pi - pi).max() <= 1e-10
        assert np.abs(g @ pi - (g @ pi).T).max() <= 1e-10 * np.abs(g).max()
    x = rng.standard_normal(5)
    rest = x - pp.pi_range_adjoint @ x
    assert op.codomain.norm(op.apply(rest)) <= 1e-10 * op.norm * op.domain.norm(x)
    y = rng.standard_normal(6)
    # (I - π_R(A)) A = 0
    assert np.abs(op.matrix - pp.pi_range @ op.matrix).max() <= 1e-10 * np.abs(op.matrix).max()
    assert op.domain.norm(op.adjoint_apply(y - pp.pi_range @ y)) <= 1e-10 * op.norm * op.codomain.norm(y)


def test_isomorphism_condition_numbers(rng):
    op = _dense_op(rng, 6, 5, 4)
    rep = isomorphism_report(DualNormProblem(op))
    s = np.linalg.svd(op.normalized, compute_uv=False)[:4]
    assert rep.rank == 4
    assert rep.cond_reduced == pytest.approx(s[0] / s[-1], rel=1e-10)
    t = s / np.sqrt(1 + s**2)
    assert rep.cond_graph_dual == pytest.approx(t[0] / t[-1], rel=1e-8)
    assert rep.cond_graph_dual == pytest.approx(rep.cond_graph_dual_formula, rel=1e-8)
    assert rep.cond_graph_dual <= rep.cond_reduced


def test_compactness_bounds_and_slopes(rng):
    dr = build_derham(GridSpec.box(3, "all-t"))
    p = DualNormProblem(dr.grad)
    x0, y = rng.standard_normal(p.op.domain.dim), rng.standard_normal(p.op.domain.dim)
    ns = list(range(1, 13))
    diag = sequence_compactness_diagnostics(p, [x0 + y / n for n in ns], ns)
    assert diag.equivalent
    c = p.poincare_constant
    assert diag.lower_ratio >= 1 - 1e-10
    assert diag.upper_ratio <= math.sqrt(1 + c * c) * (1 + 1e-10)
    # Cauchy modulus of x0 + y/n from index k is |π y|(1/k - 1/12)
    py = p.op.domain.norm(helmholtz2(y, p.op, "domain", "dense").range)
    expected = [py * (1 / k - 1 / 12) for k in ns[:-1]]
    np.testing.assert_allclose(diag.modulus_projection, expected, rtol=1e-9)
    dy = p.dual_norm(y)
    np.testing.assert_allclose(diag.modulus_dual, [dy * (1 / k - 1 / 12) for k in ns[:-1]], rtol=1e-9)
    assert diag.slope_projection < -1
    assert len(diag.modulus_dual) == len(ns) - 1
    assert all(a >= b for a, b in zip(diag.modulus_projection, diag.modulus_projection[1:]))
    assert diag.to_dict()["upper_bound"] == pytest.approx(math.sqrt(1 + c * c))


def test_compactness_needs_two_members():
    dr = build_derham(GridSpec.box(2, "all-t"))
    with pytest.raises(ComplexError):
        sequence_compactness_diagnostics(DualNormProblem(dr.grad), [np.zeros(dr.spaces[0].dim)])


def test_tail_slope_cases():
    n = np.array([1, 2, 4, 8, 16], dtype=float)
    assert tail_slope(n, 3 * n**-2.0) == pytest.approx(-2.0)
    assert tail_slope(n, [1, 0, 0, 0, 0]) == -math.inf
    assert tail_slope(n, [1, 0.5, 0.2, 1e-17, 1e-17]) == -math.inf
    assert math.isnan(tail_slope(n, [1, 1, 0, 0, 1.0]))
    assert tail_slope([1, 2], [1.0, 0.5]) == pytest.approx(-1.0)
