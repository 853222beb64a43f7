"""Extended operators and their norms in the dual of the adjoint's graph space.

For ``A: H1 -> H2`` with adjoint ``A*``, the extension ``Ã x`` is the
functional ``φ ↦ <x, A*φ>`` on ``D(A*)`` with the graph norm
``sqrt(|φ|² + |A*φ|²)``.  Its norm is one SPD solve against the graph Gram
``G_graph = G2 + Bᵀ G1 B`` (``B`` the adjoint matrix).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _linalg
from .complex_core import (UNBOUNDED, ComplexError, ComplexOperator, _dense, _check_vec,
                           _to_json_constant, helmholtz2, spectral_report)

DIRECT_LIMIT = 60_000


class DualNormProblem:
    """Graph-Gram factorization for one operator, built once and reused."""

    def __init__(self, op: ComplexOperator, solver="auto"):
        self.op = op
        gd, gc = op.domain, op.codomain
        if gd.is_diagonal and gc.is_diagonal:
            a = sp.csr_matrix(op.matrix)
            gcd = sp.diags(gc.weights)
            # Bᵀ G1 B = G2 A G1⁻¹ Aᵀ G2
            self._w_matrix = (gcd @ a).tocsr()
            graph = (gcd + self._w_matrix @ sp.diags(1.0 / gd.weights) @ self._w_matrix.T).tocsc()
        else:
            b = op.adjoint.matrix
            b = _dense(b)
            g1, g2 = _dense(gd.gram), _dense(gc.gram)
            self._w_matrix = b.T @ g1
            graph = g2 + b.T @ g1 @ b
        self.graph = graph
        n = graph.shape[0]
        if solver == "auto":
            solver = "direct" if n <= DIRECT_LIMIT else "cg"
        self.solver = solver
        if n == 0:
            self._solve = lambda w: w
        elif not sp.issparse(graph):
            cf = sla.cho_factor(0.5 * (graph + graph.T))
            self._solve = lambda w: sla.cho_solve(cf, w)
        elif solver == "direct":
            lu = spla.splu(graph)
            self._solve = lu.solve
        else:
            diag = graph.diagonal()

            def _solve(w):
                x, relres, _ = _linalg.pcg(lambda v: graph @ v, w, diag=diag, rtol=1e-13)
                if relres > 1e-10:
                    raise _linalg.ConvergenceError("graph Gram CG did not converge", relres)
                return x

            self._solve = _solve

    def functional(self, x):
        """``w = Bᵀ G1 x``, the coefficient vector of ``Ã x``."""
        return self._w_matrix @ x

    def dual_norm(self, x):
        x = _check_vec(x, self.op.domain.dim, "dual_norm")
        w = self.functional(x)
        if not np.any(w):
            return 0.0
        return math.sqrt(max(float(w @ self._solve(w)), 0.0))

    @cached_property
    def spectral(self):
        return spectral_report(self.op, "dense")

    @property
    def poincare_constant(self):
        return self.spectral.poincare_constant


def dual_norm(problem, x):
    return problem.dual_norm(x)


@dataclass(frozen=True)
class DualNormIdentity:
    full: float
    reduced: float
    rel_gap: float

    def to_dict(self):
        return {"full": self.full, "reduced": self.reduced, "rel_gap": self.rel_gap}


def reduced_dual_norm(op, z):
    """Dual norm of the reduced extension applied to ``z ∈ R(A*)``.

    Test functions range over R(A) only, spanned by the left singular vectors
    mapped back to the codomain metric.
    """
    u, s, vt, r = op.dense_svd
    if r == 0:
        return 0.0
    q = op.codomain.from_normal(u[:, :r])
    bq = op.adjoint_apply(q)
    gram = np.eye(r) + bq.T @ op.domain.apply(bq)
    w = bq.T @ op.domain.apply(z)
    return math.sqrt(max(float(w @ sla.solve(gram, w, assume_a="pos")), 0.0))


def reduced_dual_norm_identity(problem, x):
    x = _check_vec(x, problem.op.domain.dim, "reduced_dual_norm_identity")
    full = problem.dual_norm(x)
    z = helmholtz2(x, problem.op, side="domain", backend="dense").range
    red = reduced_dual_norm(problem.op, z)
    scale = max(full, red)
    gap = abs(full - red) / scale if scale > 0 else 0.0
    return DualNormIdentity(full, red, gap)


@dataclass(frozen=True)
class ProjectionPair:
    pi_range: np.ndarray
    pi_range_adjoint: np.ndarray


def projection_pair(op):
    """Weighted-orthogonal projectors onto R(A) (codomain) and R(A*) (domain)."""
    u, s, vt, r = op.dense_svd
    ur, vr = u[:, :r], vt[:r].T
    gc, gd = op.codomain, op.domain
    pr = gc.from_normal(ur) @ gc.to_normal(ur).T
    pa = gd.from_normal(vr) @ gd.to_normal(vr).T
    return ProjectionPair(pr, pa)


@dataclass(frozen=True)
class IsomorphismReport:
    cond_reduced: float
    cond_graph_dual: float
    cond_graph_dual_formula: float
    rank: int

    def to_dict(self):
        return {"cond_reduced": self.cond_reduced, "cond_graph_dual": self.cond_graph_dual,
                "cond_graph_dual_formula": self.cond_graph_dual_formula, "rank": self.rank}


def isomorphism_report(problem):
    """Condition numbers of the reduced operator and of its extension.

    The extension is measured numerically: apply it to an orthonormal basis
    of R(A*) and take singular values in the graph-dual metric.  The formula
    value uses ``σ/sqrt(1+σ²)`` of the reduced operator's singular values.
    """
    op = problem.op
    u, s, vt, r = op.dense_svd
    if r == 0:
        return IsomorphismReport(math.inf, math.inf, math.inf, 0)
    z = op.domain.from_normal(vt[:r].T)
    w = problem.functional(z)
    g = _dense(problem.graph)
    chol = sla.cholesky(0.5 * (g + g.T), lower=True)
    t = sla.solve_triangular(chol, w, lower=True)
    sv = sla.svdvals(t)
    ext = s[:r] / np.sqrt(1 + s[:r] ** 2)
    return IsomorphismReport(float(s[0] / s[r - 1]), float(sv[0] / sv[r - 1]),
                             float(ext[0] / ext[-1]), int(r))


@dataclass(frozen=True)
class CompactnessDiagnostics:
    indices: tuple
    modulus_projection: tuple
    modulus_dual: tuple
    lower_ratio: float
    upper_ratio: float
    upper_bound: object
    equivalent: bool
    slope_projection: float
    slope_dual: float
    note: str = ("finite family: Cauchy moduli and tail slopes stand in for relative "
                 "compactness, which finitely many members cannot decide")

    def to_dict(self):
        return {"indices": list(self.indices),
                "modulus_projection": list(self.modulus_projection),
                "modulus_dual": list(self.modulus_dual),
                "lower_ratio": self.lower_ratio, "upper_ratio": self.upper_ratio,
                "upper_bound": _to_json_constant(self.upper_bound),
                "equivalent": self.equivalent,
                "slope_projection": _json_float(self.slope_projection),
                "slope_dual": _json_float(self.slope_dual), "note": self.note}


def _json_float(v):
    if math.isnan(v):
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return float(v)


def tail_slope(indices, values, floor=1e-13):
    """Least-squares slope of log(values) vs log(indices) over the tail.

    The tail is the last half of the points, but at least three of them.
    Returns -inf when every tail value sits below ``floor``, or when fewer
    than two are above it and the last is not (exact decay); nan when fewer
    than two values are above the floor otherwise.
    """
    idx = np.asarray(indices, dtype=float)
    val = np.asarray(values, dtype=float)
    k = len(idx)
    start = k - max(math.ceil(k / 2), min(3, k))
    ti, tv = idx[start:], val[start:]
    if np.all(tv <= floor):
        return -math.inf
    ok = (tv > floor) & (ti > 0)
    if ok.sum() < 2:
        # a tail ending at the floor has converged exactly
        return -math.inf if tv[-1] <= floor else math.nan
    slope = np.polyfit(np.log(ti[ok]), np.log(tv[ok]), 1)[0]
    return float(slope)


def _tail_moduli(dist):
    k = dist.shape[0]
    return [float(dist[i:, i:].max()) for i in range(k - 1)]


def sequence_compactness_diagnostics(problem, xs, indices=None):
    """Tail Cauchy moduli of ``π_{R(A*)} x_n`` (H1 norm) and of ``Ã x_n`` (dual norm).

    Entry k of a modulus is ``max |x_m - x_n|`` over ``m, n >= k``; the last
    index has no pair and is omitted.

    Both moduli bound each other: ``dual ≤ proj ≤ sqrt(1 + c_A²)·dual``.
    """
    xs = [np.asarray(x, dtype=float) for x in xs]
    if len(xs) < 2:
        raise ComplexError("compactness diagnostics need at least two vectors")
    if indices is None:
        indices = range(1, len(xs) + 1)
    indices = tuple(indices)
    op = problem.op
    z = [helmholtz2(x, op, side="domain").range for x in xs]
    k = len(xs)
    dp = np.zeros((k, k))
    dd = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            dp[i, j] = dp[j, i] = op.domain.norm(z[i] - z[j])
            dd[i, j] = dd[j, i] = problem.dual_norm(xs[i] - xs[j])
    mp, md = _tail_moduli(dp), _tail_moduli(dd)
    c = problem.poincare_constant
    bound = UNBOUNDED if c is UNBOUNDED else math.sqrt(1.0 + c * c)
    mask = dp > 0
    lower = float(np.min(dp[mask] / np.maximum(dd[mask], 1e-300))) if mask.any() else 1.0
    upper = float(np.max(dp[mask] / np.maximum(dd[mask], 1e-300))) if mask.any() else 1.0
    slack = 1e-8
    if mask.any():
        ok_lower = bool(np.all(dd <= dp * (1 + slack) + 1e-14))
        ok_upper = bound is UNBOUNDED or bool(np.all(dp <= bound * dd * (1 + slack) + 1e-14))
    else:
        ok_lower = bool(np.all(dd <= 1e-14))
        ok_upper = True
    return CompactnessDiagnostics(indices, tuple(mp), tuple(md), lower, upper, bound,
                                  ok_lower and ok_upper,
                                  tail_slope(indices[:-1], mp), tail_slope(indices[:-1], md))
