"""Iterative kernels shared by the sparse backend.

Everything here works in *normalized* coordinates, i.e. on matrices of the
form ``G_cod^{1/2} A G_dom^{-1/2}`` where the metric has been absorbed, so the
normal matrices are plain symmetric positive semi-definite operators.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class ConvergenceError(RuntimeError):
    """An iterative solve stopped at its iteration cap."""

    def __init__(self, message, residual):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


def _diag_preconditioner(diag, n):
    if diag is None:
        return None
    d = np.asarray(diag, dtype=float).copy()
    d[d <= 0] = 1.0
    inv = 1.0 / d
    return spla.LinearOperator((n, n), matvec=lambda v: inv * v, dtype=float)


def pcg(apply, b, diag=None, rtol=1e-12, maxiter=None, x0=None, project=None):
    """Jacobi-preconditioned CG for a symmetric positive semi-definite operator.

    ``project`` (optional) is applied to the right-hand side and to the result;
    it is how kernels are deflated.  Returns ``(x, relres, iterations)`` where
    ``relres`` is the true relative residual ``|b - K x| / |b|``.
    """
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if project is not None:
        b = project(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0.0, 0
    if project is None:
        matvec = apply
    else:
        def matvec(v):
            return project(apply(project(v)))
    op = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
    count = [0]

    def _count(_):
        count[0] += 1

    if maxiter is None:
        maxiter = max(10 * n, 1000)
    x, _ = spla.cg(op, b, x0=x0, rtol=rtol, atol=0.0, maxiter=maxiter,
                   M=_diag_preconditioner(diag, n), callback=_count)
    if project is not None:
        x = project(x)
    relres = np.linalg.norm(b - matvec(x)) / bnorm
    return x, relres, count[0]


def normal_diag(ahat, side):
    """Diagonal of ``AᵀA`` (side='domain') or ``AAᵀ`` (side='codomain')."""
    sq = ahat.multiply(ahat) if sp.issparse(ahat) else ahat * ahat
    axis = 0 if side == "domain" else 1
    return np.asarray(sq.sum(axis=axis)).ravel()


def normal_apply(ahat, side):
    if side == "domain":
        return lambda v: ahat.T @ (ahat @ v)
    return lambda v: ahat @ (ahat.T @ v)


def deflator(basis):
    """Euclidean projector onto the orthogonal complement of ``basis`` columns."""
    if basis is None or basis.shape[1] == 0:
        return None
    q, _ = np.linalg.qr(basis)

    def project(v):
        return v - q @ (q.T @ v)

    return project


def largest_eig(apply, n, rtol=1e-10):
    """Largest eigenvalue of a symmetric PSD operator given by its action."""
    if n == 0:
        return 0.0
    if n <= 64:
        k = np.column_stack([apply(e) for e in np.eye(n)])
        return float(np.linalg.eigvalsh(0.5 * (k + k.T))[-1])
    op = spla.LinearOperator((n, n), matvec=apply, dtype=float)
    # fixed pseudo-random start: constants are often in the kernel
    v0 = np.random.default_rng(12345).standard_normal(n)
    val = spla.eigsh(op, k=1, which="LA", tol=rtol, v0=v0,
                     return_eigenvectors=False)
    return float(val[0])


def largest_singular(ahat):
    """Spectral norm of a (sparse or dense) matrix."""
    m, n = ahat.shape
    if m == 0 or n == 0:
        return 0.0
    if not sp.issparse(ahat) or min(m, n) <= 64:
        dense = ahat.toarray() if sp.issparse(ahat) else np.asarray(ahat)
        return float(np.linalg.norm(dense, 2))
    if n <= m:
        lam = largest_eig(normal_apply(ahat, "domain"), n)
    else:
        lam = largest_eig(normal_apply(ahat, "codomain"), m)
    return float(np.sqrt(max(lam, 0.0)))


def smallest_eig(apply, n, diag=None, deflate=None, rtol=1e-13,
                 maxiter=200, seed=0, solve_rtol=1e-12):
    """Smallest eigenpair of a symmetric PSD operator by inverse iteration.

    Each step solves the (deflated) system with preconditioned CG; the
    eigenvalue estimate is the Rayleigh quotient, which converges at twice
    the rate of the vector.  ``deflate`` is a basis of a subspace to exclude
    (typically a known kernel).
    """
    project = deflator(deflate)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    if project is not None:
        x = project(x)
    x /= np.linalg.norm(x)
    kx = apply(x)
    lam = float(x @ kx)
    for _ in range(maxiter):
        y, relres, _ = pcg(apply, x, diag=diag, rtol=solve_rtol,
                           x0=x / lam if lam > 0 else None, project=project)
        if relres > 1e-6:
            raise ConvergenceError("inner CG solve of inverse iteration failed", relres)
        ynorm = np.linalg.norm(y)
        if ynorm == 0.0 or not np.isfinite(ynorm):
            raise ConvergenceError("inverse iteration broke down", np.inf)
        x = y / ynorm
        kx = apply(x)
        new = float(x @ kx)
        if abs(new - lam) <= rtol * abs(new):
            lam = new
            break
        lam = new
    else:
        raise ConvergenceError("inverse iteration did not settle",
                               abs(new - lam) / max(abs(new), 1e-300))
    return lam, x
