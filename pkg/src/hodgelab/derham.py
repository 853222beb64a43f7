"""Staggered-grid de Rham complex on a box or a 3-torus.

Unknowns live on vertices (0-forms), edges (1-forms, one family per edge
direction), faces (2-forms, one family per normal direction) and cells
(3-forms).  Values are field proxies: an edge stores the tangential
component at its midpoint, a face the normal component at its center.  The
operators are incidence matrices divided by the mesh width of the
differencing axis, so ``curl @ grad`` and ``div @ curl`` vanish identically.

Tangential boundary conditions are imposed on whole box faces by deleting
every entity in the closure of a Γt face.  Mass matrices are diagonal: the
dual-cell volume of each entity (halved once per axis on which it sits on the
box boundary) times ε on edges and μ on faces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .complex_core import ComplexOperator, HilbertComplex, InnerProductSpace

FACES = ("x1_lo", "x1_hi", "x2_lo", "x2_hi", "x3_lo", "x3_hi")

PRESETS = {
    "all-t": FACES,
    "all-n": (),
    "x1-pair": ("x1_lo", "x1_hi"),
    "x2-pair": ("x2_lo", "x2_hi"),
    "x3-pair": ("x3_lo", "x3_hi"),
    "x1-lo": ("x1_lo",),
    "lo-corner": ("x1_lo", "x2_lo", "x3_lo"),
    "x1x2-pairs": ("x1_lo", "x1_hi", "x2_lo", "x2_hi"),
}

_BC_WORDS = {"t": "t", "tangential": "t", "n": "n", "normal": "n"}


class GridError(ValueError):
    pass


def _face_axis_side(face):
    return int(face[1]) - 1, face[3:]


@dataclass(frozen=True)
class GridSpec:
    """Box ``[0,L1]x[0,L2]x[0,L3]`` (or torus) with ``cells`` cells per axis.

    ``bc`` maps each of the six faces to ``'t'`` (Γt, tangential) or ``'n'``
    (Γn, normal); a preset name from :data:`PRESETS` is accepted too.
    """

    cells: tuple
    lengths: tuple = (1.0, 1.0, 1.0)
    topology: str = "box"
    bc: object = None

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        lengths = tuple(float(v) for v in self.lengths)
        if len(cells) != 3 or len(lengths) != 3:
            raise GridError("cells and lengths need three entries")
        if any(c <= 0 for c in cells):
            raise GridError(f"every axis needs at least one cell, got {cells}")
        if any(not v > 0 or not math.isfinite(v) for v in lengths):
            raise GridError(f"lengths must be positive, got {lengths}")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "lengths", lengths)
        if self.topology == "torus":
            if self.bc:
                raise GridError("a torus has no boundary conditions")
            object.__setattr__(self, "bc", ())
            return
        if self.topology != "box":
            raise GridError(f"topology must be 'box' or 'torus', not {self.topology!r}")
        object.__setattr__(self, "bc", _normalize_bc(self.bc))

    @classmethod
    def box(cls, cells, bc="all-t", lengths=(1.0, 1.0, 1.0)):
        if isinstance(cells, int):
            cells = (cells,) * 3
        return cls(cells, lengths, "box", bc)

    @classmethod
    def torus(cls, cells, lengths=(1.0, 1.0, 1.0)):
        if isinstance(cells, int):
            cells = (cells,) * 3
        return cls(cells, lengths, "torus")

    @property
    def periodic(self):
        return self.topology == "torus"

    @property
    def h(self):
        return tuple(L / N for L, N in zip(self.lengths, self.cells))

    @property
    def volume(self):
        return math.prod(self.lengths)

    @property
    def gamma_t(self):
        """Γt faces as ``(axis, 'lo'|'hi')`` pairs."""
        return tuple(_face_axis_side(f) for f, v in zip(FACES, self.bc) if v == "t")

    def bc_map(self):
        return dict(zip(FACES, self.bc))


def _normalize_bc(bc):
    if bc is None:
        raise GridError("box topology needs a boundary map covering all 6 faces")
    if isinstance(bc, str):
        if bc not in PRESETS:
            raise GridError(f"unknown boundary preset {bc!r}; known: {', '.join(PRESETS)}")
        return tuple("t" if f in PRESETS[bc] else "n" for f in FACES)
    if isinstance(bc, dict):
        missing = [f for f in FACES if f not in bc]
        extra = [f for f in bc if f not in FACES]
        if missing or extra:
            raise GridError(f"boundary map must cover exactly the faces {FACES}; "
                            f"missing {missing}, unknown {extra}")
        bc = tuple(bc[f] for f in FACES)
    bc = tuple(bc)
    if len(bc) != 6:
        raise GridError("boundary map needs 6 entries")
    out = []
    for v in bc:
        key = str(v).lower()
        if key not in _BC_WORDS:
            raise GridError(f"boundary value must be t/tangential or n/normal, not {v!r}")
        out.append(_BC_WORDS[key])
    return tuple(out)


# ---------------------------------------------------------------------------
# entity layout
# ---------------------------------------------------------------------------


def _extent(degree, family):
    """Axes along which an entity of the given family extends."""
    if degree == 0:
        return ()
    if degree == 1:
        return (family,)
    if degree == 2:
        return tuple(b for b in range(3) if b != family)
    return (0, 1, 2)


def _families(degree):
    return (None,) if degree in (0, 3) else (0, 1, 2)


@dataclass(frozen=True, eq=False)
class Family:
    degree: int
    axis: Optional[int]
    extent: tuple
    shape: tuple
    offset: int

    @property
    def size(self):
        return math.prod(self.shape)


@dataclass(frozen=True, eq=False)
class FormLayout:
    """Index map of one form degree: families of entities and the kept dofs."""

    grid: GridSpec
    degree: int
    families: tuple
    keep: np.ndarray

    @property
    def full_size(self):
        return sum(f.size for f in self.families)

    @property
    def size(self):
        return self.keep.size

    @cached_property
    def constrained_mask(self):
        mask = np.ones(self.full_size, dtype=bool)
        mask[self.keep] = False
        return mask

    def family_positions(self, fam):
        """Barycenters of a family's entities, shape ``fam.shape + (3,)``."""
        axes = []
        for b in range(3):
            j = np.arange(fam.shape[b], dtype=float)
            if b in fam.extent:
                j = j + 0.5
            axes.append(j * self.grid.h[b])
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def expand(self, x):
        """Constrained vector -> full layout (zeros on Γt entities)."""
        out = np.zeros(self.full_size)
        out[self.keep] = x
        return out


def _family_indices(shape):
    return np.meshgrid(*(np.arange(s) for s in shape), indexing="ij")


def _constrained(grid, fam):
    if grid.periodic:
        return np.zeros(fam.shape, dtype=bool)
    idx = _family_indices(fam.shape)
    mask = np.zeros(fam.shape, dtype=bool)
    for axis, side in grid.gamma_t:
        if axis in fam.extent:
            continue
        mask |= idx[axis] == (0 if side == "lo" else grid.cells[axis])
    return mask


@lru_cache(maxsize=64)
def layout(grid, degree):
    fams = []
    offset = 0
    for a in _families(degree):
        ext = _extent(degree, a)
        shape = tuple(n if (grid.periodic or b in ext) else n + 1
                      for b, n in enumerate(grid.cells))
        fams.append(Family(degree, a, ext, shape, offset))
        offset += math.prod(shape)
    fams = tuple(fams)
    masks = [_constrained(grid, f).ravel() for f in fams]
    keep = np.flatnonzero(~np.concatenate(masks))
    keep.setflags(write=False)
    return FormLayout(grid, degree, fams, keep)


def dof_counts(grid):
    return tuple(layout(grid, k).size for k in range(4))


def euler_characteristic_oracle(grid):
    """``χ(box) − χ(closure of Γt)`` from the 27-entity cube complex; 0 on a torus."""
    if grid.periodic:
        return 0
    coarse = GridSpec((1, 1, 1), topology="box", bc=grid.bc)
    chi = 0
    for k in range(4):
        lay = layout(coarse, k)
        chi += (-1) ** k * int(lay.constrained_mask.sum())
    return 1 - chi


# ---------------------------------------------------------------------------
# materials
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MaterialField:
    """Diagonal ε (edges) and μ (faces).

    Each of ``eps``/``mu`` is ``None`` (identity), a positive number, a
    callable ``f(x1, x2, x3)`` returning a scalar or a length-3 sequence
    (per-axis diagonal tensor), or a tuple of three arrays holding one weight
    per entity of the full edge/face family layouts.
    """

    eps: object = None
    mu: object = None

    @classmethod
    def random(cls, grid, low=0.1, high=10.0, seed=0):
        rng = np.random.default_rng(seed)
        eps = tuple(rng.uniform(low, high, f.shape) for f in layout(grid, 1).families)
        mu = tuple(rng.uniform(low, high, f.shape) for f in layout(grid, 2).families)
        return cls(eps, mu)

    def weights(self, grid, degree):
        spec = self.eps if degree == 1 else self.mu
        lay = layout(grid, degree)
        out = []
        for fam in lay.families:
            if spec is None:
                w = np.ones(fam.shape)
            elif callable(spec):
                pos = lay.family_positions(fam)
                val = spec(pos[..., 0], pos[..., 1], pos[..., 2])
                if isinstance(val, (tuple, list)):
                    val = val[fam.axis]
                w = np.broadcast_to(np.asarray(val, dtype=float), fam.shape).copy()
            elif np.isscalar(spec):
                w = np.full(fam.shape, float(spec))
            else:
                w = np.asarray(spec[fam.axis], dtype=float)
                if w.shape != fam.shape:
                    raise GridError(f"material weights for axis {fam.axis + 1} have shape "
                                    f"{w.shape}, expected {fam.shape}")
            if not np.all(np.isfinite(w)) or w.min() <= 0:
                raise GridError("material weights must be positive and finite")
            out.append(w.ravel())
        return np.concatenate(out)


# ---------------------------------------------------------------------------
# operators and masses
# ---------------------------------------------------------------------------


def _diff1d(n, periodic):
    if periodic:
        d = sp.coo_matrix((np.r_[-np.ones(n), np.ones(n)],
                           (np.r_[np.arange(n), np.arange(n)], np.r_[np.arange(n), (np.arange(n) + 1) % n])),
                          shape=(n, n))
        d = d.tocsr()
        d.sum_duplicates()
        d.eliminate_zeros()
        return d
    return sp.diags([-np.ones(n), np.ones(n)], [0, 1], shape=(n, n + 1), format="csr")


def _diff(src, dst, axis, periodic):
    mats = []
    for b in range(3):
        if b == axis:
            mats.append(_diff1d(dst.shape[b], periodic))
        else:
            if src.shape[b] != dst.shape[b]:
                raise AssertionError("family shapes disagree off the differencing axis")
            mats.append(sp.identity(src.shape[b], format="csr"))
    return sp.kron(mats[0], sp.kron(mats[1], mats[2], format="csr"), format="csr")


def _terms(degree):
    """(dst family, src family, differencing axis, sign) of the degree-k stencil."""
    if degree == 0:
        return [(a, None, a, 1) for a in range(3)]
    if degree == 1:
        out = []
        for a in range(3):
            b, c = (a + 1) % 3, (a + 2) % 3
            out += [(a, c, b, 1), (a, b, c, -1)]
        return out
    return [(None, a, a, 1) for a in range(3)]


def incidence(grid, degree, scaled=True):
    """Full (unconstrained) degree-k operator; ``scaled=False`` gives ±1 entries."""
    src, dst = layout(grid, degree), layout(grid, degree + 1)
    sfam = {f.axis: f for f in src.families}
    dfam = {f.axis: f for f in dst.families}
    blocks = [[None] * len(src.families) for _ in dst.families]
    dpos = {f.axis: i for i, f in enumerate(dst.families)}
    spos = {f.axis: i for i, f in enumerate(src.families)}
    for da, sa, axis, sign in _terms(degree):
        d = _diff(sfam[sa], dfam[da], axis, grid.periodic)
        scale = sign / grid.h[axis] if scaled else sign
        blocks[dpos[da]][spos[sa]] = scale * d
    for i, f in enumerate(dst.families):
        for j, g in enumerate(src.families):
            if blocks[i][j] is None:
                blocks[i][j] = sp.csr_matrix((f.size, g.size))
    out = sp.bmat(blocks, format="csr")
    out.eliminate_zeros()
    return out


def mass_diagonal(grid, degree, material=None):
    """Full-layout mass weights of degree-k forms."""
    lay = layout(grid, degree)
    vol = math.prod(grid.h)
    out = []
    for fam in lay.families:
        w = np.full(fam.shape, vol)
        if not grid.periodic:
            idx = _family_indices(fam.shape)
            for b in range(3):
                if b not in fam.extent:
                    w = np.where((idx[b] == 0) | (idx[b] == grid.cells[b]), 0.5 * w, w)
        out.append(w.ravel())
    w = np.concatenate(out)
    if material is not None and degree in (1, 2):
        w = w * material.weights(grid, degree)
    return w


_NAMES = ("grad", "curl", "div")


@dataclass(frozen=True, eq=False)
class DeRhamComplex:
    """``H0 --grad--> H1 --curl--> H2 --div--> H3`` with Γt dofs removed."""

    grid: GridSpec
    material: MaterialField
    hilbert: HilbertComplex
    layouts: tuple
    incidence: tuple
    full_ops: tuple

    @property
    def spaces(self):
        return self.hilbert.spaces

    @property
    def ops(self):
        return self.hilbert.ops

    @property
    def grad(self):
        return self.ops[0]

    @property
    def curl(self):
        return self.ops[1]

    @property
    def div(self):
        return self.ops[2]

    def harmonic_basis(self, q, backend="auto"):
        return self.hilbert.harmonic_basis(q, backend)

    def grad_kernel(self):
        """Basis of N(grad): constants when no face is tangential, else empty."""
        n = self.spaces[0].dim
        if self.grid.periodic or not self.grid.gamma_t:
            return np.ones((n, 1))
        return np.zeros((n, 0))

    def div_cokernel(self):
        """Basis of N(div*): constants when every face is tangential, else empty."""
        n = self.spaces[3].dim
        if self.grid.periodic or len(self.grid.gamma_t) == 6:
            return np.ones((n, 1))
        return np.zeros((n, 0))


def build_derham(grid, material=None, rank_tol=1e-10):
    material = material or MaterialField()
    lays = tuple(layout(grid, k) for k in range(4))
    spaces = []
    for k, lay in enumerate(lays):
        w = mass_diagonal(grid, k, material)[lay.keep]
        spaces.append(InnerProductSpace.diagonal(w, name=f"H{k}"))
    ops, ints, fulls = [], [], []
    for k in range(3):
        full = incidence(grid, k)
        fulls.append(full)
        rows, cols = lays[k + 1].keep, lays[k].keep
        ints.append(incidence(grid, k, scaled=False)[rows][:, cols])
        ops.append(ComplexOperator(full[rows][:, cols], spaces[k], spaces[k + 1],
                                   rank_tol=rank_tol, name=_NAMES[k]))
    return DeRhamComplex(grid, material, HilbertComplex(spaces, ops), lays, tuple(ints), tuple(fulls))


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_scalar(grid, f, constrained=True, degree=0):
    """Sample ``f(x1, x2, x3)`` at vertex (or cell, ``degree=3``) barycenters."""
    lay = layout(grid, degree)
    out = []
    for fam in lay.families:
        pos = lay.family_positions(fam)
        val = np.broadcast_to(np.asarray(f(pos[..., 0], pos[..., 1], pos[..., 2]), dtype=float), fam.shape)
        out.append(val.ravel())
    full = np.concatenate(out)
    return full[lay.keep] if constrained else full


def _sample_form(grid, F, degree, constrained):
    lay = layout(grid, degree)
    out = []
    for fam in lay.families:
        pos = lay.family_positions(fam)
        comp = F(pos[..., 0], pos[..., 1], pos[..., 2])[fam.axis]
        out.append(np.broadcast_to(np.asarray(comp, dtype=float), fam.shape).ravel())
    full = np.concatenate(out)
    return full[lay.keep] if constrained else full


def sample_vector(grid, F, constrained=True):
    """Sample ``F(x1, x2, x3) -> (F1, F2, F3)`` as an edge vector and a face vector.

    Edges take the component along the edge at its midpoint, faces the normal
    component at the face center.
    """
    return _sample_form(grid, F, 1, constrained), _sample_form(grid, F, 2, constrained)


def sample_edges(grid, F, constrained=True):
    return _sample_form(grid, F, 1, constrained)


def boundary_trace_check(grid, x):
    """Largest |x| over Γt edges.  ``x`` may be full-layout or constrained."""
    if grid.periodic:
        raise GridError("no boundary: the torus has no Γt edges")
    lay = layout(grid, 1)
    x = np.asarray(x, dtype=float)
    if x.shape == (lay.size,) and lay.size != lay.full_size:
        return {"gamma_t_residual": 0.0}
    if x.shape != (lay.full_size,):
        raise GridError(f"edge vector has length {x.size}; expected {lay.size} "
                        f"(constrained) or {lay.full_size} (full)")
    vals = np.abs(x[lay.constrained_mask])
    return {"gamma_t_residual": float(vals.max()) if vals.size else 0.0}


def dirichlet_poincare_1d(n_cells, length=1.0):
    """Closed-form Poincaré constant of the 1D difference operator, zero end values."""
    h = length / n_cells
    return h / (2.0 * math.sin(math.pi / (2 * n_cells)))


def box_dirichlet_poincare(grid):
    """Grad Poincaré constant for Γt = Γ and ε = 1: ``1/sqrt(Σ_a 1/c_a²)``."""
    return 1.0 / math.sqrt(sum(dirichlet_poincare_1d(n, L) ** -2
                               for n, L in zip(grid.cells, grid.lengths)))
