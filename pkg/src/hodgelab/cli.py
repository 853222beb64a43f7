"""Command-line driver.

Exit status: 0 when the run passes, 2 when an experiment fails (the report is
still written), 1 on configuration or structural errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from ._linalg import ConvergenceError
from .complex_core import (DENSE_LIMIT, ComplexError, check_complex, helmholtz3,
                           poincare_duality_check, resolve_backend, spectral_report)
from .config import COMMANDS, KINDS, ConfigError, load_config
from .derham import (FACES, GridError, box_dirichlet_poincare, build_derham,
                     dirichlet_poincare_1d, dof_counts, euler_characteristic_oracle)
from .divcurl import (default_dictionary, divcurl_experiment, gen_negative_control,
                      experiment_backend, gen_oscillatory_pair, homogenize_layered,
                      local_divcurl_experiment, worker_count)
from .dual_norms import (DualNormProblem, isomorphism_report, reduced_dual_norm_identity,
                         sequence_compactness_diagnostics)
from .mmio import read_operator, read_vector, write_matrix

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def write_json(path, report):
    text = json.dumps(_clean(report), sort_keys=True, indent=2, allow_nan=False) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def write_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def _grid_info(grid):
    info = {"cells": list(grid.cells), "lengths": list(grid.lengths), "topology": grid.topology,
            "dofs": list(dof_counts(grid))}
    if not grid.periodic:
        info["bc"] = dict(zip(FACES, grid.bc))
    return info


def _base(cfg, command, seed, backend, tolerances):
    return {"command": command, "config_sha256": cfg.sha256, "seed": seed,
            "backend": backend, "tolerances": tolerances, "grid": _grid_info(cfg.grid),
            "version": __version__}


def _vector_or_random(cfg, dim, seed):
    if cfg.input_vector:
        x = read_vector(cfg.input_vector)
        if x.shape != (dim,):
            raise ComplexError(f"input vector has length {x.size}, expected {dim}")
        return x
    return np.random.default_rng(seed).standard_normal(dim)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_spectral(cfg, args, seed, backend):
    tol = {"duality_rel_gap": 1e-8}
    if args.matrix:
        op = read_operator(args.matrix)
        b = resolve_backend(backend or "auto", *op.shape)
        if b == "iterative":
            raise ComplexError("Matrix Market input has no known kernel; use the dense backend")
        rep = spectral_report(op, b)
        out = {"command": "spectral", "matrix": os.path.basename(args.matrix), "seed": seed,
               "backend": b, "tolerances": tol, "version": __version__,
               "config_sha256": _file_hash(args.matrix)}
        kernel = cokernel = None
        dr = None
    else:
        dr = build_derham(cfg.grid, cfg.material)
        op = {"grad": dr.grad, "curl": dr.curl, "div": dr.div}[cfg.operator]
        b = resolve_backend(backend or "auto", *op.shape)
        kernel = cokernel = None
        if b == "iterative":
            if cfg.operator == "grad":
                kernel = dr.grad_kernel()
            elif cfg.operator == "div":
                cokernel = dr.div_cokernel()
            else:
                raise ComplexError("the iterative backend resolves grad and div only; "
                                   "use the dense backend for curl")
        rep = spectral_report(op, b, kernel=kernel, cokernel=cokernel)
        out = _base(cfg, "spectral", seed, b, tol)
        out["operator"] = cfg.operator
    out.update(rep.to_dict())
    passed = True
    if rep.rank > 0:
        dual = poincare_duality_check(op, b, kernel=kernel, cokernel=cokernel)
        out["duality"] = dual.to_dict()
        passed = dual.rel_gap <= tol["duality_rel_gap"]
    else:
        out["duality"] = None
    if dr is not None and cfg.operator == "grad" and not cfg.grid.periodic \
            and len(cfg.grid.gamma_t) == 6 and cfg.material.eps is None:
        per_axis = [dirichlet_poincare_1d(n, L) for n, L in zip(cfg.grid.cells, cfg.grid.lengths)]
        ref = box_dirichlet_poincare(cfg.grid)
        out["reference"] = {"closed_form_1d_per_axis": per_axis, "closed_form_box": ref,
                            "rel_err_box": abs(rep.poincare_constant - ref) / ref}
    out["pass"] = passed
    return out, None


def _file_hash(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def cmd_cohomology(cfg, args, seed, backend):
    dr = build_derham(cfg.grid, cfg.material)
    q = cfg.slot
    b = resolve_backend(backend or "auto", dr.spaces[q].dim)
    check = check_complex(dr.hilbert)
    basis = dr.harmonic_basis(q, b)
    dim = basis.shape[1]
    out = _base(cfg, "cohomology", seed, b, {"rank_tol": dr.grad.rank_tol})
    out.update({"slot": q, "dim_harmonic": dim, "complex_exact": check.exact})
    if q == 1:
        out["dim_N01"] = dim
    if b == "dense":
        into, leave = dr.hilbert.operator_into(q), dr.hilbert.operator_from(q)
        rank_in = spectral_report(into, "dense").rank if into.shape[1] else 0
        ker_out = dr.spaces[q].dim - (spectral_report(leave, "dense").rank if leave.shape[0] else 0)
        out["rank_oracle"] = ker_out - rank_in
        out["pass"] = bool(check.exact and out["rank_oracle"] == dim)
    else:
        out["pass"] = bool(check.exact)
    v, e, f, c = dof_counts(cfg.grid)
    out["euler"] = {"alternating_sum": v - e + f - c, "oracle": euler_characteristic_oracle(cfg.grid)}
    return out, None


def cmd_decompose(cfg, args, seed, backend):
    dr = build_derham(cfg.grid, cfg.material)
    q = cfg.slot
    a0, a1 = dr.ops[q - 1], dr.ops[q]
    b = resolve_backend(backend or "auto", a1.domain.dim)
    x = _vector_or_random(cfg, a1.domain.dim, seed)
    parts = helmholtz3(x, a0, a1, b)
    space = a1.domain
    comps = {"range_prev": parts.range_prev, "harmonic": parts.harmonic,
             "range_next_adjoint": parts.range_next_adjoint}
    xn = space.norm(x)
    names = list(comps)
    orth = {}
    for i in range(3):
        for j in range(i + 1, 3):
            orth[f"{names[i]}|{names[j]}"] = abs(space.inner(comps[names[i]], comps[names[j]])) / max(xn * xn, 1e-300)
    tol = {"orthogonality": 1e-10, "recomposition": 1e-10}
    out = _base(cfg, "decompose", seed, b, tol)
    out.update({"slot": q, "norm_x": xn,
                "norms": {k: space.norm(v) for k, v in comps.items()},
                "orthogonality": orth,
                "residual": parts.residual / max(xn, 1e-300),
                "input": "file" if cfg.input_vector else "random"})
    out["pass"] = bool(max(orth.values()) <= tol["orthogonality"]
                       and out["residual"] <= tol["recomposition"])
    return out, ("decompose_parts.mtx", np.column_stack(list(comps.values())))


def cmd_dualnorm(cfg, args, seed, backend):
    dr = build_derham(cfg.grid, cfg.material)
    op = {"grad": dr.grad, "curl": dr.curl, "div": dr.div}[cfg.operator]
    b = resolve_backend(backend or "auto", *op.shape)
    if b != "dense":
        raise ComplexError("the dual-norm suite needs the dense backend (dims <= %d)" % DENSE_LIMIT)
    problem = DualNormProblem(op)
    rng = np.random.default_rng(seed)
    gaps = [reduced_dual_norm_identity(problem, rng.standard_normal(op.domain.dim)).rel_gap
            for _ in range(100)]
    u, s, vt, r = op.dense_svd
    kern = op.domain.from_normal(vt[r:].T) if r < op.domain.dim else np.zeros((op.domain.dim, 0))
    kernel_norms = [problem.dual_norm(kern[:, i]) / op.domain.norm(kern[:, i]) for i in range(kern.shape[1])]
    x0, y = rng.standard_normal(op.domain.dim), rng.standard_normal(op.domain.dim)
    family = [x0 + y / n for n in range(1, 9)]
    diag = sequence_compactness_diagnostics(problem, family, range(1, 9))
    tol = {"identity_rel_gap": 1e-8, "kernel_dual_norm": 1e-12}
    out = _base(cfg, "dualnorm", seed, b, tol)
    out.update({"operator": cfg.operator, "identity_max_rel_gap": max(gaps),
                "kernel_dim": kern.shape[1],
                "kernel_max_dual_norm": max(kernel_norms, default=0.0),
                "isomorphism": isomorphism_report(problem).to_dict(),
                "compactness": diag.to_dict()})
    out["pass"] = bool(max(gaps) <= tol["identity_rel_gap"]
                       and out["kernel_max_dual_norm"] <= tol["kernel_dual_norm"] and diag.equivalent)
    return out, None


def _default_bump(grid):
    L = grid.lengths

    def bump(x1, x2, x3):
        out = np.ones(np.broadcast(x1, x2, x3).shape)
        for x, l in zip((x1, x2, x3), L):
            t = x / l
            out = out * np.where((t > 0.25) & (t < 0.75), np.sin(2 * np.pi * (t - 0.25)) ** 2, 0.0)
        return out

    return bump


def cmd_divcurl(cfg, args, seed, backend, kind=None):
    kind = kind or cfg.kind
    if kind == "homogenize":
        return cmd_homogenize(cfg, args, seed, backend)
    dr = build_derham(cfg.grid, cfg.material)
    b = experiment_backend(dr, backend or "auto")
    dictionary = default_dictionary(dr, cfg.order, cfg.dictionary or "sine")
    negative = kind == "negative-control"
    if negative:
        E, H = gen_negative_control(dr, cfg.n_list)
    else:
        E, H = gen_oscillatory_pair(dr, cfg.n_list)
    if kind == "local":
        phi = cfg.phi or _default_bump(cfg.grid)
        rep = local_divcurl_experiment(dr, E, H, phi, dictionary, cfg.tol, negative, b)
    else:
        rep = divcurl_experiment(dr, E, H, dictionary, cfg.tol, negative, b)
    out = _base(cfg, "divcurl", seed, b, {"tol": cfg.tol})
    out.update({"kind": kind, "dictionary": {"labels": list(dictionary.labels)},
                "report": rep.to_dict(), "volume": cfg.grid.volume})
    if negative:
        n = np.asarray(rep.indices, dtype=float)
        dn = np.asarray(rep.deriv_norm_H)
        ok = (n[:-1] > 0) & (dn[:-1] > 0)
        out["negative_control"] = {
            "half_volume": cfg.grid.volume / 2,
            "inner_product_over_half_volume": rep.inner_products[-1] / (cfg.grid.volume / 2),
            "max_abs_pairing_last": float(max(np.abs(rep.pairings_E[-1]).max(),
                                              np.abs(rep.pairings_H[-1]).max())),
            "div_growth_ratio": (dn[1:][ok] / dn[:-1][ok]).tolist(),
            "index_ratio": (n[1:][ok] / n[:-1][ok]).tolist()}
    out["pass"] = rep.passed
    return out, ("divcurl.csv", rep.csv_rows())


def cmd_homogenize(cfg, args, seed, backend):
    dr = build_derham(cfg.grid, cfg.material)
    b = experiment_backend(dr, backend or "auto")
    dictionary = default_dictionary(dr, cfg.order, cfg.dictionary or "polynomial")
    rep, theta = homogenize_layered(dr, cfg.theta_a, cfg.theta_b, cfg.n_list, cfg.theta_axis,
                                    cfg.source, dictionary, cfg.tol, b)
    out = _base(cfg, "homogenize", seed, b, {"tol": cfg.tol, "identity_rel_gap": 1e-12})
    out.update({"kind": "homogenize", "a": cfg.theta_a, "b": cfg.theta_b, "axis": cfg.theta_axis + 1,
                "effective_coefficient": theta, "report": rep.to_dict(),
                "dictionary": {"labels": list(dictionary.labels)}})
    out["pass"] = bool(rep.passed and max(rep.extra["identity_rel_gap"]) <= 1e-12)
    return out, ("homogenize.csv", rep.csv_rows())


def cmd_export(cfg, args, seed, backend):
    dr = build_derham(cfg.grid, cfg.material)
    files = {}
    for name, op in zip(("grad", "curl", "div"), dr.ops):
        files[f"{name}.mtx"] = op.matrix
    for k, space in enumerate(dr.spaces):
        files[f"mass{k}.mtx"] = space.gram
    out = _base(cfg, "export", seed, None, {})
    out["files"] = sorted(files)
    out["pass"] = True
    return out, ("__matrices__", files)


HANDLERS = {"spectral": cmd_spectral, "cohomology": cmd_cohomology, "decompose": cmd_decompose,
            "divcurl": cmd_divcurl, "homogenize": cmd_homogenize, "dualnorm": cmd_dualnorm,
            "export": cmd_export}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="hodgelab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {"spectral": "rank, kernel dimension and Poincare constant of grad/curl/div",
             "cohomology": "dimension of the harmonic space at one slot",
             "decompose": "three-part Helmholtz decomposition of a vector",
             "divcurl": "div-curl sequence experiment",
             "homogenize": "layered-coefficient homogenization run",
             "dualnorm": "dual-norm identity and compactness diagnostics",
             "export": "write operators and mass matrices as Matrix Market files"}
    for name in (*COMMANDS, "export"):
        s = sub.add_parser(name, help=helps[name])
        s.add_argument("--config", help="key-value run configuration")
        s.add_argument("--out", default=".", help="output directory (default: .)")
        s.add_argument("--seed", type=int, default=None, help="random seed (default: config or 0)")
        s.add_argument("--backend", choices=("dense", "iterative"), default=None)
        if name == "spectral":
            s.add_argument("--matrix", help="Matrix Market operator (Euclidean metrics)")
        if name == "divcurl":
            s.add_argument("--kind", choices=KINDS, default=None)
    return p


def run(args):
    cfg = None
    if args.config:
        cfg = load_config(args.config)
    elif not (args.command == "spectral" and getattr(args, "matrix", None)):
        raise ConfigError("--config is required")
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
    if seed < 0:
        raise ConfigError("--seed must be nonnegative")
    backend = args.backend or (cfg.backend if cfg else None)
    handler = HANDLERS[args.command]
    if args.command == "divcurl":
        report, extra = handler(cfg, args, seed, backend, kind=args.kind)
    else:
        report, extra = handler(cfg, args, seed, backend)
    os.makedirs(args.out, exist_ok=True)
    name = report["command"]
    write_json(os.path.join(args.out, f"{name}.json"), report)
    if extra is not None:
        fname, payload = extra
        if fname == "__matrices__":
            for f, m in payload.items():
                write_matrix(os.path.join(args.out, f), m)
        elif fname.endswith(".csv"):
            write_csv(os.path.join(args.out, fname), payload)
        else:
            write_matrix(os.path.join(args.out, fname), payload)
    return EXIT_OK if report["pass"] else EXIT_FAIL


def main(argv=None):
    args = build_parser().parse_args(argv)
    threads = os.environ.get("HODGELAB_THREADS")
    try:
        if threads:
            with threadpool_limits(limits=worker_count()):
                return run(args)
        return run(args)
    except (ConfigError, GridError, ComplexError, ConvergenceError, OSError, ValueError) as exc:
        print(f"hodgelab: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
