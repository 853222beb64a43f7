import json
import math
import shutil
import subprocess
import sys

import numpy as np
import pytest
import scipy.sparse as sp

from hodgelab.cli import main
from hodgelab.derham import dirichlet_poincare_1d
from hodgelab.mmio import read_matrix, read_operator, read_vector, write_matrix


def _cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _run(tmp_path, *argv):
    out = tmp_path / "out"
    code = main([*argv, "--out", str(out)])
    return code, out


def _report(out, name):
    return json.loads((out / f"{name}.json").read_text())


def test_spectral_grad_reference(tmp_path):
    cfg = _cfg(tmp_path, "cells = 8\nbc = all-t\n")
    code, out = _run(tmp_path, "spectral", "--config", cfg)
    rep = _report(out, "spectral")
    assert code == 0 and rep["pass"]
    c1 = dirichlet_poincare_1d(8)
    assert rep["reference"]["closed_form_1d_per_axis"] == [c1] * 3
    assert rep["poincare_constant"] == pytest.approx(c1 / math.sqrt(3), rel=1e-12)
    assert rep["duality"]["rel_gap"] <= 1e-8
    assert rep["tolerances"] == {"duality_rel_gap": 1e-8}
    assert len(rep["config_sha256"]) == 64 and rep["seed"] == 0 and rep["backend"] == "dense"


def test_spectral_iterative_grad_and_div(tmp_path):
    for op in ("grad", "div"):
        cfg = _cfg(tmp_path, f"cells = 6\nbc = all-t\nspectral.operator = {op}\n", f"{op}.cfg")
        code_i, out_i = _run(tmp_path, "spectral", "--config", cfg, "--backend", "iterative")
        it = _report(out_i, "spectral")
        code_d, out_d = _run(tmp_path, "spectral", "--config", cfg, "--backend", "dense")
        de = _report(out_d, "spectral")
        assert code_i == code_d == 0
        assert it["poincare_constant"] == pytest.approx(de["poincare_constant"], rel=1e-9)
    cfg = _cfg(tmp_path, "cells = 4\nbc = all-t\nspectral.operator = curl\n", "curl.cfg")
    assert _run(tmp_path, "spectral", "--config", cfg, "--backend", "iterative")[0] == 1


def test_export_and_matrix_round_trip(tmp_path):
    cfg = _cfg(tmp_path, "cells = 3\nbc = x1-lo\n")
    code, out = _run(tmp_path, "export", "--config", cfg)
    assert code == 0
    files = _report(out, "export")["files"]
    assert files == sorted(["grad.mtx", "curl.mtx", "div.mtx", "mass0.mtx", "mass1.mtx",
                            "mass2.mtx", "mass3.mtx"])
    g = read_matrix(str(out / "grad.mtx"))
    c = read_matrix(str(out / "curl.mtx"))
    assert (c @ g).count_nonzero() == 0
    code = main(["spectral", "--matrix", str(out / "grad.mtx"), "--out", str(tmp_path / "m")])
    rep = json.loads((tmp_path / "m" / "spectral.json").read_text())
    assert code == 0 and rep["matrix"] == "grad.mtx" and rep["kernel_dim"] == 0


def test_mmio_round_trip(tmp_path, rng):
    a = sp.random(7, 5, density=0.4, random_state=3) * np.pi
    write_matrix(str(tmp_path / "a.mtx"), a, comment="test")
    b = read_matrix(str(tmp_path / "a.mtx"))
    assert abs(b - a).max() == 0.0
    op = read_operator(str(tmp_path / "a.mtx"))
    assert op.shape == (7, 5) and op.domain.is_diagonal
    v = rng.standard_normal(6)
    write_matrix(str(tmp_path / "v.mtx"), v.reshape(-1, 1))
    np.testing.assert_array_equal(read_vector(str(tmp_path / "v.mtx")), v)
    np.savetxt(tmp_path / "v.txt", v, fmt="%.17g")
    np.testing.assert_array_equal(read_vector(str(tmp_path / "v.txt")), v)


def test_cohomology_torus(tmp_path):
    cfg = _cfg(tmp_path, "cells = 4\ntopology = torus\n")
    code, out = _run(tmp_path, "cohomology", "--config", cfg)
    rep = _report(out, "cohomology")
    assert code == 0
    assert rep["dim_N01"] == rep["rank_oracle"] == 3
    assert rep["euler"] == {"alternating_sum": 0, "oracle": 0}


def test_decompose_with_input_vector(tmp_path):
    x = np.random.default_rng(0).standard_normal(36)
    np.savetxt(tmp_path / "x.txt", x)
    cfg = _cfg(tmp_path, "cells = 3\nbc = all-t\ninput.vector = x.txt\n")
    code, out = _run(tmp_path, "decompose", "--config", cfg)
    rep = _report(out, "decompose")
    assert code == 0 and rep["input"] == "file"
    parts = read_matrix(str(out / "decompose_parts.mtx")).toarray()
    np.testing.assert_allclose(parts.sum(axis=1), x, atol=1e-10)
    bad = _cfg(tmp_path, "cells = 4\nbc = all-t\ninput.vector = x.txt\n", "bad.cfg")
    assert _run(tmp_path, "decompose", "--config", bad)[0] == 1


def test_dualnorm(tmp_path):
    cfg = _cfg(tmp_path, "cells = 3\nbc = all-n\ndualnorm.operator = curl\n")
    code, out = _run(tmp_path, "dualnorm", "--config", cfg)
    rep = _report(out, "dualnorm")
    assert code == 0
    assert rep["identity_max_rel_gap"] <= 1e-8
    assert rep["kernel_dim"] > 0 and rep["kernel_max_dual_norm"] <= 1e-12
    iso = rep["isomorphism"]
    assert iso["cond_graph_dual"] == pytest.approx(iso["cond_graph_dual_formula"], rel=1e-8)


DIVCURL = "cells = 16\nbc = x1-pair\nexperiment.n_list = 1, 2, 4\n"


@pytest.mark.parametrize("kind, code", [("oscillatory", 0), ("local", 0), ("negative-control", 2)])
def test_divcurl_kinds(tmp_path, kind, code):
    cfg = _cfg(tmp_path, DIVCURL)
    got, out = _run(tmp_path, "divcurl", "--config", cfg, "--kind", kind)
    rep = _report(out, "divcurl")
    assert got == code and rep["kind"] == kind
    rows = (out / "divcurl.csv").read_text().splitlines()
    assert rows[0] == "n,inner_product,max_weak_gap_E,max_weak_gap_H,deriv_norm_E,deriv_norm_H"
    assert len(rows) == 4
    if kind == "negative-control":
        nc = rep["negative_control"]
        assert nc["inner_product_over_half_volume"] == pytest.approx(1.0, rel=1e-2)
        np.testing.assert_allclose(nc["div_growth_ratio"], nc["index_ratio"], rtol=0.1)
        assert rep["report"]["hypothesis_ok"] is False


def test_homogenize(tmp_path):
    cfg = _cfg(tmp_path, "cells = 64, 1, 1\nbc = x1-pair\nexperiment.n_list = 2, 4, 8\n"
                         "experiment.tol = 1e-2\nhomogenize.a = 1\nhomogenize.b = 10\n")
    code, out = _run(tmp_path, "homogenize", "--config", cfg)
    rep = _report(out, "homogenize")
    assert code == 0
    assert rep["effective_coefficient"] == pytest.approx(20 / 11, rel=0.02)
    assert max(rep["report"]["identity_rel_gap"]) <= 1e-12


def test_config_errors_exit_1(tmp_path, capsys):
    cfg = _cfg(tmp_path, "cells = 4\nbc = all-t\nspectral.operator = rot\n")
    assert _run(tmp_path, "spectral", "--config", cfg)[0] == 1
    err = capsys.readouterr().err
    assert f"{cfg}:3:21:" in err and "expected one of" in err
    assert main(["spectral", "--out", str(tmp_path)]) == 1
    assert "--config is required" in capsys.readouterr().err
    assert _run(tmp_path, "spectral", "--config", str(tmp_path / "nope.cfg"))[0] == 1
    with pytest.raises(SystemExit):
        main(["spectral", "--backend", "gpu"])


def test_reports_are_byte_identical(tmp_path):
    cfg = _cfg(tmp_path, "cells = 8\nbc = x1-pair\nexperiment.n_list = 1, 2\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["divcurl", "--config", cfg, "--out", str(a)]) == 0
    assert main(["divcurl", "--config", cfg, "--out", str(b)]) == 0
    for name in ("divcurl.json", "divcurl.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_console_script():
    exe = shutil.which("hodgelab")
    cmd = [exe] if exe else [sys.executable, "-m", "hodgelab.cli"]
    res = subprocess.run([*cmd, "--version"], capture_output=True, text=True, check=True)
    assert res.stdout.strip().startswith("hodgelab ")
