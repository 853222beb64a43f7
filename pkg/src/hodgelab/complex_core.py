"""Finite-dimensional Hilbert complexes.

Spaces carry an SPD Gram matrix, operators are plain matrices between two
spaces.  Adjoints, reduced operators, Helmholtz splittings, Poincare and
Maxwell constants and the cohomology of a complex are all computed exactly
(up to floating point) with either a dense SVD/eigendecomposition backend or
a sparse conjugate-gradient backend.

Internally most work happens in normalized coordinates ``x̂ = G^{1/2} x``, in
which the weighted inner product becomes the Euclidean one and the adjoint of
``Â = G_cod^{1/2} A G_dom^{-1/2}`` is simply ``Âᵀ``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _linalg

DENSE_LIMIT = 20_000
# above this size dense singular values come from the smaller Gram matrix
GRAM_ROUTE_MIN = 2_000
# relative singular-value floor for the Gram route (roundoff of σ² is ~1e-16)
GRAM_FLOOR = 1e-6


class ComplexError(ValueError):
    """Base class for structural errors in spaces, operators and complexes."""


class ComplexShapeError(ComplexError):
    pass


class ComplexPropertyError(ComplexError):
    pass


class NoReducedOperatorError(ComplexError):
    pass


class RangeError(ComplexError):
    """Right-hand side is not in the range of the operator."""

    def __init__(self, defect, norm):
        super().__init__(
            f"right-hand side has a component of norm {defect:.3e} outside the "
            f"range (|y| = {norm:.3e})")
        self.defect = defect


class Unbounded:
    """The constant +infinity, e.g. the Poincare constant of a zero operator."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "UNBOUNDED"

    def __reduce__(self):
        return (Unbounded, ())


UNBOUNDED = Unbounded()


def _to_json_constant(c):
    return "unbounded" if c is UNBOUNDED else float(c)


def _readonly(a):
    if isinstance(a, np.ndarray):
        a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# spaces and operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InnerProductSpace:
    """Finite-dimensional Hilbert space ``<x, y> = xᵀ G y``."""

    gram: object
    name: str = ""

    def __post_init__(self):
        g = self.gram
        weights = None
        dense = None
        if sp.issparse(g):
            g = sp.csr_matrix(g, dtype=float)
            if g.shape[0] != g.shape[1]:
                raise ComplexShapeError(f"gram of {self.name or 'space'} is not square: {g.shape}")
            off = g - sp.diags(g.diagonal())
            off.eliminate_zeros()
            if off.nnz == 0:
                weights = g.diagonal().copy()
            else:
                dense = g.toarray()
        else:
            dense = np.array(g, dtype=float, ndmin=2) if np.size(g) else np.zeros((0, 0))
            if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
                raise ComplexShapeError(f"gram of {self.name or 'space'} is not square: {dense.shape}")
            if not np.any(dense - np.diag(np.diag(dense))):
                weights = np.diag(dense).copy()
                dense = None

        if weights is not None:
            if not np.all(np.isfinite(weights)) or np.any(weights <= 0):
                raise ComplexError("gram must be positive definite")
            object.__setattr__(self, "gram", sp.diags(weights).tocsr())
            object.__setattr__(self, "_weights", _readonly(weights))
            object.__setattr__(self, "_sqrt", None)
            object.__setattr__(self, "_isqrt", None)
            return

        scale = np.abs(dense).max()
        if np.abs(dense - dense.T).max() > 1e-12 * scale:
            raise ComplexError("gram must be symmetric")
        dense = 0.5 * (dense + dense.T)
        lam, q = np.linalg.eigh(dense)
        if lam[0] <= 0:
            raise ComplexError(f"gram must be positive definite (min eigenvalue {lam[0]:.3e})")
        object.__setattr__(self, "gram", _readonly(dense))
        object.__setattr__(self, "_weights", None)
        object.__setattr__(self, "_sqrt", _readonly((q * np.sqrt(lam)) @ q.T))
        object.__setattr__(self, "_isqrt", _readonly((q / np.sqrt(lam)) @ q.T))

    @classmethod
    def euclidean(cls, dim, name=""):
        return cls(sp.identity(dim, format="csr"), name)

    @classmethod
    def diagonal(cls, weights, name=""):
        return cls(sp.diags(np.asarray(weights, dtype=float)).tocsr(), name)

    @property
    def dim(self):
        return self.gram.shape[0]

    @property
    def is_diagonal(self):
        return self._weights is not None

    @property
    def weights(self):
        return self._weights

    def apply(self, x):
        if self._weights is not None:
            return self._weights[:, None] * x if np.ndim(x) == 2 else self._weights * x
        return self.gram @ x

    def solve(self, y):
        if self._weights is not None:
            return y / self._weights[:, None] if np.ndim(y) == 2 else y / self._weights
        return sla.solve(self.gram, y, assume_a="pos")

    def inner(self, x, y):
        return float(np.dot(x, self.apply(y)))

    def norm(self, x):
        return math.sqrt(max(self.inner(x, x), 0.0))

    def to_normal(self, x):
        if self._weights is not None:
            s = np.sqrt(self._weights)
            return s[:, None] * x if np.ndim(x) == 2 else s * x
        return self._sqrt @ x

    def from_normal(self, xh):
        if self._weights is not None:
            s = np.sqrt(self._weights)
            return xh / s[:, None] if np.ndim(xh) == 2 else xh / s
        return self._isqrt @ xh

    def sqrt_matrix(self):
        if self._weights is not None:
            return sp.diags(np.sqrt(self._weights)).tocsr()
        return self._sqrt

    def inv_sqrt_matrix(self):
        if self._weights is not None:
            return sp.diags(1.0 / np.sqrt(self._weights)).tocsr()
        return self._isqrt


def _as_matrix(m):
    if sp.issparse(m):
        return sp.csr_matrix(m, dtype=float)
    a = np.array(m, dtype=float)
    if a.ndim != 2:
        raise ComplexShapeError(f"operator matrix must be 2-D, got shape {a.shape}")
    return _readonly(a)


def _mul(a, b):
    """Matrix product that keeps sparse results sparse."""
    out = a @ b
    if sp.issparse(out):
        return out.tocsr()
    return np.asarray(out)


def _dense(a):
    return a.toarray() if sp.issparse(a) else np.asarray(a)


@dataclass(frozen=True, eq=False)
class ComplexOperator:
    """Linear map ``domain -> codomain`` given by its matrix."""

    matrix: object
    domain: InnerProductSpace
    codomain: InnerProductSpace
    rank_tol: float = 1e-10
    name: str = "A"

    def __post_init__(self):
        m = _as_matrix(self.matrix)
        if m.shape != (self.codomain.dim, self.domain.dim):
            raise ComplexShapeError(
                f"{self.name}: matrix shape {m.shape} does not match "
                f"(codomain.dim, domain.dim) = {(self.codomain.dim, self.domain.dim)}")
        object.__setattr__(self, "matrix", m)

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def is_sparse(self):
        return sp.issparse(self.matrix)

    def apply(self, x):
        return self.matrix @ x

    def adjoint_apply(self, y):
        return self.domain.solve(self.matrix.T @ self.codomain.apply(y))

    @cached_property
    def adjoint(self):
        return ComplexOperator(adjoint_matrix(self), self.codomain, self.domain,
                               self.rank_tol, self.name + "*")

    @cached_property
    def normalized(self):
        """``G_cod^{1/2} A G_dom^{-1/2}``; sparse when grams are diagonal."""
        out = _mul(_mul(self.codomain.sqrt_matrix(), self.matrix), self.domain.inv_sqrt_matrix())
        return _readonly(out)

    @cached_property
    def dense_svd(self):
        """Thin SVD of the normalized matrix and the numerical rank."""
        a = _dense(self.normalized)
        if a.size == 0:
            m, n = a.shape
            return np.zeros((m, 0)), np.zeros(0), np.zeros((0, n)), 0
        u, s, vt = sla.svd(a, full_matrices=False, lapack_driver="gesdd")
        rank = int(np.sum(s > self.rank_tol * s[0])) if s[0] > 0 else 0
        return _readonly(u), _readonly(s), _readonly(vt), rank

    @cached_property
    def norm(self):
        """Operator norm in the weighted metrics."""
        return _linalg.largest_singular(self.normalized)

    def _iterative_ok(self):
        return self.domain.is_diagonal and self.codomain.is_diagonal


def adjoint_matrix(op):
    """Matrix ``B = G_dom⁻¹ Aᵀ G_cod`` of the Hilbert-space adjoint."""
    a = op.matrix
    if op.domain.is_diagonal and op.codomain.is_diagonal:
        b = sp.diags(1.0 / op.domain.weights) @ sp.csr_matrix(a).T @ sp.diags(op.codomain.weights)
        b = b.tocsr()
        return b if op.is_sparse else b.toarray()
    rhs = _dense(a).T @ _dense(op.codomain.gram)
    gd = _dense(op.domain.gram)
    return sla.solve(gd, rhs, assume_a="pos") if rhs.size else rhs


def zero_operator(domain, codomain, name="0"):
    return ComplexOperator(sp.csr_matrix((codomain.dim, domain.dim)), domain, codomain, name=name)


def _same_space(a, b):
    if a is b:
        return True
    if a.dim != b.dim:
        return False
    if a.is_diagonal and b.is_diagonal:
        return np.array_equal(a.weights, b.weights)
    return np.array_equal(_dense(a.gram), _dense(b.gram))


# ---------------------------------------------------------------------------
# complexes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class HilbertComplex:
    """Chain ``H_0 -> H_1 -> ... -> H_k`` of operators."""

    spaces: Sequence[InnerProductSpace]
    ops: Sequence[ComplexOperator]
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "spaces", tuple(self.spaces))
        object.__setattr__(self, "ops", tuple(self.ops))
        check_shapes(self.spaces, self.ops)

    def __len__(self):
        return len(self.ops)

    def operator_into(self, q):
        """The operator ending in slot ``q`` (zero map at the left end)."""
        if q == 0:
            return zero_operator(InnerProductSpace.euclidean(0), self.spaces[0], "0")
        return self.ops[q - 1]

    def operator_from(self, q):
        """The operator leaving slot ``q`` (zero map at the right end)."""
        if q == len(self.ops):
            return zero_operator(self.spaces[q], InnerProductSpace.euclidean(0), "0")
        return self.ops[q]

    def harmonic_basis(self, q, backend="auto"):
        key = ("harmonic", q, backend)
        if key not in self._cache:
            self._cache[key] = _readonly(
                harmonic_basis(self.operator_into(q), self.operator_from(q), backend=backend))
        return self._cache[key]


def check_shapes(spaces, ops):
    if len(spaces) != len(ops) + 1:
        raise ComplexShapeError(f"{len(ops)} operators need {len(ops) + 1} spaces, got {len(spaces)}")
    for i, op in enumerate(ops):
        if not _same_space(op.domain, spaces[i]):
            raise ComplexShapeError(f"ops[{i}] ({op.name}): domain does not match spaces[{i}]")
        if not _same_space(op.codomain, spaces[i + 1]):
            raise ComplexShapeError(f"ops[{i}] ({op.name}): codomain does not match spaces[{i + 1}]")
    for i in range(len(ops) - 1):
        if ops[i].codomain.dim != ops[i + 1].domain.dim:
            raise ComplexShapeError(
                f"ops[{i}] -> ops[{i + 1}] ({ops[i].name} -> {ops[i + 1].name}): codomain dim "
                f"{ops[i].codomain.dim} != domain dim {ops[i + 1].domain.dim}")


@dataclass(frozen=True)
class ComplexCheck:
    max_product_norm: float
    exact: bool
    pair_norms: tuple

    def to_dict(self):
        return {"max_product_norm": self.max_product_norm, "exact": self.exact,
                "pair_norms": list(self.pair_norms)}


def _product_norm(a0, a1):
    p = a1.matrix @ a0.matrix
    if sp.issparse(p):
        p = p.tocsr()
        p.eliminate_zeros()
        exact = p.nnz == 0
    else:
        p = np.asarray(p)
        exact = not np.any(p)
    if exact:
        return 0.0, True
    phat = _mul(_mul(a1.codomain.sqrt_matrix(), p), a0.domain.inv_sqrt_matrix())
    return _linalg.largest_singular(phat), False


def check_complex(cx):
    """Report whether every consecutive product ``A_{i+1} A_i`` vanishes."""
    ops = cx.ops if isinstance(cx, HilbertComplex) else tuple(cx)
    if not isinstance(cx, HilbertComplex):
        for i in range(len(ops) - 1):
            if ops[i].codomain.dim != ops[i + 1].domain.dim:
                raise ComplexShapeError(
                    f"ops[{i}] -> ops[{i + 1}] ({ops[i].name} -> {ops[i + 1].name}): codomain dim "
                    f"{ops[i].codomain.dim} != domain dim {ops[i + 1].domain.dim}")
    norms = []
    exact = True
    for a0, a1 in zip(ops[:-1], ops[1:]):
        nrm, ex = _product_norm(a0, a1)
        norms.append(nrm)
        exact = exact and ex
    return ComplexCheck(max(norms, default=0.0), exact, tuple(norms))


def _require_complex(a0, a1):
    if a0.codomain.dim != a1.domain.dim:
        raise ComplexShapeError(
            f"{a0.name} -> {a1.name}: codomain dim {a0.codomain.dim} != domain dim {a1.domain.dim}")
    nrm, exact = _product_norm(a0, a1)
    if not exact and nrm > 1e-12 * max(a0.norm * a1.norm, 1e-300):
        raise ComplexPropertyError(f"{a1.name}∘{a0.name} != 0 (norm {nrm:.3e})")


# ---------------------------------------------------------------------------
# spectra and constants
# ---------------------------------------------------------------------------


def resolve_backend(backend, *dims):
    if backend == "auto":
        return "dense" if max(dims, default=0) <= DENSE_LIMIT else "iterative"
    if backend not in ("dense", "iterative"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend


@dataclass(frozen=True)
class SpectralReport:
    rank: int
    kernel_dim: int
    poincare_constant: object
    singular_values: tuple
    backend: str = "dense"

    @property
    def unbounded(self):
        return self.poincare_constant is UNBOUNDED

    def to_dict(self):
        return {"rank": self.rank, "kernel_dim": self.kernel_dim,
                "poincare_constant": _to_json_constant(self.poincare_constant),
                "singular_values": [float(s) for s in self.singular_values],
                "backend": self.backend}


def _dense_singular_values(op):
    """Descending singular values of the normalized matrix and the cutoff used."""
    ahat = op.normalized
    m, n = ahat.shape
    if m == 0 or n == 0:
        return np.zeros(0), 0.0
    if min(m, n) <= GRAM_ROUTE_MIN or "dense_svd" in op.__dict__:
        s = op.dense_svd[1] if "dense_svd" in op.__dict__ else sla.svdvals(_dense(ahat))
        return s, op.rank_tol * (s[0] if s.size else 0.0)
    g = _mul(ahat.T, ahat) if n <= m else _mul(ahat, ahat.T)
    lam = np.linalg.eigvalsh(_dense(g))[::-1]
    s = np.sqrt(np.clip(lam, 0.0, None))
    return s, max(op.rank_tol, GRAM_FLOOR) * (s[0] if s.size else 0.0)


def spectral_report(op, backend="auto", kernel=None, cokernel=None):
    """Rank, kernel dimension and Poincare constant ``c_A = 1/σ_min``.

    The iterative backend only resolves the extreme singular values.  It
    works on ``ÂᵀÂ`` and needs ``kernel`` (a basis of N(A)) unless A is
    injective; alternatively pass ``cokernel`` (a basis of N(A*)) to work on
    ``ÂÂᵀ`` instead.
    """
    backend = resolve_backend(backend, *op.shape)
    n = op.domain.dim
    if backend == "dense":
        s, cut = _dense_singular_values(op)
        rank = int(np.sum(s > cut)) if s.size and s[0] > 0 else 0
        c = 1.0 / s[rank - 1] if rank else UNBOUNDED
        return SpectralReport(rank, n - rank, c, tuple(float(v) for v in s), "dense")

    if not op._iterative_ok():
        raise ComplexError("iterative backend needs diagonal grams")
    ahat = op.normalized
    if not sp.issparse(ahat):
        ahat = sp.csr_matrix(ahat)
    if cokernel is not None and kernel is None:
        side, space, basis = "codomain", op.codomain, cokernel
    else:
        side, space, basis = "domain", op.domain, kernel
    dim = space.dim
    if basis is not None:
        basis = np.asarray(basis, dtype=float).reshape(dim, -1)
    defl = None if basis is None or basis.shape[1] == 0 else space.to_normal(basis)
    kdim = 0 if defl is None else np.linalg.matrix_rank(defl)
    apply = _linalg.normal_apply(ahat, side)
    lam_max = _linalg.largest_eig(apply, dim)
    if lam_max <= 0.0:
        return SpectralReport(0, n, UNBOUNDED, (), "iterative")
    lam_min, _ = _linalg.smallest_eig(apply, dim, diag=_linalg.normal_diag(ahat, side), deflate=defl)
    s_max, s_min = math.sqrt(lam_max), math.sqrt(max(lam_min, 0.0))
    if s_min <= GRAM_FLOOR * s_max:
        raise ComplexError("operator is rank deficient on the chosen side; pass a kernel "
                           "basis or use the dense backend")
    rank = dim - kdim
    return SpectralReport(rank, n - rank, 1.0 / s_min, (s_max, s_min), "iterative")


@dataclass(frozen=True)
class DualityCheck:
    c_A: float
    c_Astar: float
    rel_gap: float

    def to_dict(self):
        return {"c_A": self.c_A, "c_Astar": self.c_Astar, "rel_gap": self.rel_gap}


def poincare_duality_check(op, backend="auto", kernel=None, cokernel=None):
    """Compute ``c_A`` and ``c_{A*}`` independently and compare them."""
    ra = spectral_report(op, backend, kernel=kernel, cokernel=cokernel)
    if ra.rank == 0:
        raise NoReducedOperatorError("no reduced operator: A has rank 0")
    rb = spectral_report(op.adjoint, backend, kernel=cokernel, cokernel=kernel)
    if rb.rank == 0:
        raise NoReducedOperatorError("no reduced operator: A* has rank 0")
    ca, cb = ra.poincare_constant, rb.poincare_constant
    return DualityCheck(float(ca), float(cb), float(abs(ca - cb) / ca))


# ---------------------------------------------------------------------------
# Helmholtz decompositions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HelmholtzPair:
    """``x = kernel + range`` for ``N(A) ⊕ R(A*)`` or ``N(A*) ⊕ R(A)``."""

    kernel: np.ndarray
    range: np.ndarray
    potential: np.ndarray
    residual: float


@dataclass(frozen=True)
class HelmholtzParts:
    range_prev: np.ndarray
    harmonic: np.ndarray
    range_next_adjoint: np.ndarray
    residual: float

    def to_dict(self):
        return {"range_prev": self.range_prev.tolist(), "harmonic": self.harmonic.tolist(),
                "range_next_adjoint": self.range_next_adjoint.tolist(), "residual": self.residual}


def _check_vec(x, dim, what):
    x = np.asarray(x, dtype=float)
    if x.shape != (dim,):
        raise ComplexShapeError(f"{what}: expected a vector of length {dim}, got shape {x.shape}")
    return x


def _range_projection_dense(op, yhat):
    """π_{R(Â)} ŷ and the min-norm ŷ-preimage, normalized coordinates."""
    u, s, vt, r = op.dense_svd
    coef = u[:, :r].T @ yhat
    return u[:, :r] @ coef, vt[:r].T @ (coef / s[:r])


def _corange_projection_dense(op, xhat):
    """π_{R(Âᵀ)} x̂ and the ŵ with Âᵀŵ = that projection."""
    u, s, vt, r = op.dense_svd
    coef = vt[:r] @ xhat
    return vt[:r].T @ coef, u[:, :r] @ (coef / s[:r])


def _sparse_normalized(op):
    if not op._iterative_ok():
        raise ComplexError("iterative backend needs diagonal grams")
    ahat = op.normalized
    return ahat if sp.issparse(ahat) else sp.csr_matrix(ahat)


def least_squares(op, y, backend="auto", rtol=1e-12):
    """A least-squares solution z of ``A z ≈ y`` (weighted metrics) and ``A z``.

    Dense: the minimal-norm solution from the SVD.  Iterative: CG on the
    normal equations ``ÂᵀÂ ẑ = Âᵀŷ`` started from zero.
    """
    y = _check_vec(y, op.codomain.dim, "least_squares")
    backend = resolve_backend(backend, *op.shape)
    yhat = op.codomain.to_normal(y)
    if backend == "dense":
        proj, zhat = _range_projection_dense(op, yhat)
        return op.domain.from_normal(zhat), op.codomain.from_normal(proj)
    ahat = _sparse_normalized(op)
    rhs = ahat.T @ yhat
    zhat, relres, _ = _linalg.pcg(_linalg.normal_apply(ahat, "domain"), rhs,
                                  diag=_linalg.normal_diag(ahat, "domain"), rtol=rtol)
    if relres > 1e3 * rtol:
        raise _linalg.ConvergenceError("normal-equation CG did not converge", relres)
    z = op.domain.from_normal(zhat)
    return z, op.apply(z)


def _corange_iterative(op, x, rtol=1e-12):
    ahat = _sparse_normalized(op)
    xhat = op.domain.to_normal(x)
    rhs = ahat @ xhat
    what, relres, _ = _linalg.pcg(_linalg.normal_apply(ahat, "codomain"), rhs,
                                  diag=_linalg.normal_diag(ahat, "codomain"), rtol=rtol)
    if relres > 1e3 * rtol:
        raise _linalg.ConvergenceError("normal-equation CG did not converge", relres)
    return op.domain.from_normal(ahat.T @ what), op.codomain.from_normal(what)


def helmholtz2(x, op, side="domain", backend="auto"):
    """Two-part orthogonal splitting.

    ``side='domain'``: ``x ∈ H_dom = N(A) ⊕ R(A*)``, potential w with A*w = range.
    ``side='codomain'``: ``x ∈ H_cod = N(A*) ⊕ R(A)``, potential z with Az = range.
    """
    backend = resolve_backend(backend, *op.shape)
    if side == "codomain":
        x = _check_vec(x, op.codomain.dim, "helmholtz2")
        z, rng = least_squares(op, x, backend)
        pot = z
    elif side == "domain":
        x = _check_vec(x, op.domain.dim, "helmholtz2")
        if backend == "dense":
            proj, what = _corange_projection_dense(op, op.domain.to_normal(x))
            rng = op.domain.from_normal(proj)
            pot = op.codomain.from_normal(what)
        else:
            rng, pot = _corange_iterative(op, x)
    else:
        raise ValueError(f"side must be 'domain' or 'codomain', not {side!r}")
    ker = x - rng
    space = op.codomain if side == "codomain" else op.domain
    return HelmholtzPair(ker, rng, pot, space.norm(x - ker - rng))


def _weighted_mgs(x, space, passes=2):
    """Modified Gram-Schmidt in the weighted metric, repeated ``passes`` times."""
    x = np.array(x, dtype=float)
    k = x.shape[1]
    keep = []
    for _ in range(passes):
        keep = []
        for j in range(k):
            v = x[:, j]
            for i in keep:
                v = v - space.inner(x[:, i], v) * x[:, i]
            nrm = space.norm(v)
            if nrm > 0:
                x[:, j] = v / nrm
                keep.append(j)
    return x[:, keep]


def hodge_laplacian(a0, a1):
    """Normalized ``Â₁ᵀÂ₁ + Â₀Â₀ᵀ`` on the middle space."""
    l1 = _mul(a1.normalized.T, a1.normalized)
    l0 = _mul(a0.normalized, a0.normalized.T)
    return l1 + l0


def harmonic_basis(a0, a1, backend="auto"):
    """H₁-orthonormal basis (columns) of ``N(A₁) ∩ N(A₀*)``."""
    _require_complex(a0, a1)
    space = a1.domain
    n = space.dim
    if n == 0:
        return np.zeros((0, 0))
    backend = resolve_backend(backend, n)
    lap = hodge_laplacian(a0, a1)
    tol = min(a0.rank_tol, a1.rank_tol)
    if backend == "dense":
        dl = _dense(lap)
        lam_max = np.linalg.norm(dl, 2) if n <= 64 else _linalg.largest_eig(lambda v: dl @ v, n)
        if lam_max == 0.0:
            yhat = np.eye(n)
        else:
            _, yhat = sla.eigh(dl, subset_by_value=(-np.inf, tol * lam_max), driver="evr")
    else:
        yhat = _harmonic_iterative(lap, n, tol)
    return _weighted_mgs(space.from_normal(yhat), space)


def _harmonic_iterative(lap, n, tol):
    lap = sp.csc_matrix(lap)
    lam_max = _linalg.largest_eig(lambda v: lap @ v, n)
    if lam_max == 0.0:
        return np.eye(n)
    thr = tol * lam_max
    shift = 1e-8 * lam_max
    lu = spla.splu((lap + shift * sp.identity(n, format="csc")).tocsc())
    inv = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
    k = 4
    while True:
        k = min(k, n - 1)
        vals, vecs = spla.eigsh(inv, k=k, which="LA", tol=1e-12,
                                v0=np.random.default_rng(12345).standard_normal(n))
        lam = 1.0 / vals - shift
        if np.sum(lam <= thr) < k or k == n - 1:
            return vecs[:, lam <= thr]
        k *= 2


def helmholtz3(x, a0, a1, backend="auto", basis=None):
    """Refined splitting ``H₁ = R(A₀) ⊕ N₀,₁ ⊕ R(A₁*)`` of x ∈ H₁."""
    _require_complex(a0, a1)
    space = a1.domain
    x = _check_vec(x, space.dim, "helmholtz3")
    if basis is None:
        basis = harmonic_basis(a0, a1, backend)
    _, rng = least_squares(a0, x, backend)
    harm = basis @ (basis.T @ space.apply(x)) if basis.size else np.zeros_like(x)
    rest = x - rng - harm
    return HelmholtzParts(rng, harm, rest, space.norm(x - (rng + harm + rest)))


@dataclass(frozen=True)
class MaxwellConstant:
    value: float
    trivial: bool
    harmonic_dim: int

    def to_dict(self):
        return {"value": self.value, "trivial": self.trivial, "harmonic_dim": self.harmonic_dim}


def maxwell_constant(a0, a1, backend="auto", basis=None):
    """Smallest c with ``|x| ≤ c (|A₁x| + |A₀*x|)`` on the complement of N₀,₁.

    Computed from the smallest positive eigenvalue of the Hodge-Laplacian
    form ``|A₁x|² + |A₀*x|²``; the root-sum-square bound it yields also holds
    for the sum form.  A vanishing form reports ``trivial=True`` with value 0.
    """
    _require_complex(a0, a1)
    n = a1.domain.dim
    backend = resolve_backend(backend, n)
    lap = hodge_laplacian(a0, a1)
    tol = min(a0.rank_tol, a1.rank_tol)
    if backend == "dense":
        lam = np.linalg.eigvalsh(_dense(lap)) if n else np.zeros(0)
        lam_max = lam[-1] if lam.size else 0.0
        pos = lam[lam > tol * lam_max] if lam_max > 0 else lam[:0]
        if pos.size == 0:
            return MaxwellConstant(0.0, True, n)
        return MaxwellConstant(1.0 / math.sqrt(pos[0]), False, n - pos.size)
    space = a1.domain
    if basis is None:
        basis = harmonic_basis(a0, a1, backend)
    lap = sp.csr_matrix(lap)
    if basis.shape[1] == n:
        return MaxwellConstant(0.0, True, n)
    defl = space.to_normal(basis) if basis.size else None
    lam, _ = _linalg.smallest_eig(lambda v: lap @ v, n, diag=lap.diagonal(), deflate=defl)
    return MaxwellConstant(1.0 / math.sqrt(lam), False, basis.shape[1])


# ---------------------------------------------------------------------------
# reduced operators
# ---------------------------------------------------------------------------


def solve_reduced(op, y, tol=1e-8, backend="auto"):
    """The unique ``x ∈ R(A*)`` with ``A x = y`` for ``y ∈ R(A)``.

    Raises :class:`RangeError` when y is farther than ``tol·|y|`` from R(A).
    On the dense backend the bound ``|x| ≤ c_A |y|`` is verified as well.
    """
    y = _check_vec(y, op.codomain.dim, "solve_reduced")
    backend = resolve_backend(backend, *op.shape)
    ynorm = op.codomain.norm(y)
    if ynorm == 0.0:
        return np.zeros(op.domain.dim)
    if backend == "dense":
        yhat = op.codomain.to_normal(y)
        proj, xhat = _range_projection_dense(op, yhat)
        defect = float(np.linalg.norm(yhat - proj))
        if defect > tol * ynorm:
            raise RangeError(defect, ynorm)
        x = op.domain.from_normal(xhat)
        _, s, _, r = op.dense_svd
        if op.domain.norm(x) > (1 + 1e-8) / s[r - 1] * ynorm:
            raise ArithmeticError("reduced inverse exceeds its Poincare bound")
        return x
    _, proj = least_squares(op, y, backend)
    defect = op.codomain.norm(y - proj)
    if defect > tol * ynorm:
        raise RangeError(defect, ynorm)
    ahat = _sparse_normalized(op)
    yhat = op.codomain.to_normal(proj)
    what, relres, _ = _linalg.pcg(_linalg.normal_apply(ahat, "codomain"), yhat,
                                  diag=_linalg.normal_diag(ahat, "codomain"))
    if relres > 1e-9:
        raise _linalg.ConvergenceError("CGNE did not converge", relres)
    return op.domain.from_normal(ahat.T @ what)
