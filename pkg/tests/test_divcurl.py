import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import coarse_grained_ratio, layered_bvp
from hodgelab import (ComplexError, GridSpec, MaterialField, build_derham, default_dictionary,
                      divcurl_experiment, gen_negative_control, gen_oscillatory_pair,
                      homogenize_layered, local_divcurl_experiment, sample_vector,
                      solve_dirichlet_laplace, weak_limit)
from hodgelab.derham import layout
from hodgelab.divcurl import (field_sequence, growth_exponent, homogenization_problem,
                              make_dictionary, pairings, reduced_1d_grid, richardson)


@pytest.fixture(scope="module")
def osc16():
    return build_derham(GridSpec.box(16, "x1-pair"))


# ---------------------------------------------------------------------------
# 1D oracles
# ---------------------------------------------------------------------------


def test_fine_grid_oracle_is_harmonic_mean():
    # independent of the package: the coarse-grained ratio tends to 2ab/(a+b)
    assert coarse_grained_ratio(8192, 256, 1.0, 10.0) == pytest.approx(20 / 11, rel=2e-3)


@pytest.mark.parametrize("n", [2, 8])
def test_dirichlet_solve_matches_tridiagonal_bvp(n):
    dr = build_derham(reduced_1d_grid(64))
    problem = homogenization_problem(dr, 1.0, 10.0)
    u = solve_dirichlet_laplace(problem, n)
    ref, _ = layered_bvp(64, n, 1.0, 10.0)
    # every lateral copy of the x1 line carries the 1D solution
    lay = layout(dr.grid, 0)
    full = lay.expand(u).reshape(lay.families[0].shape)
    for j in range(2):
        for k in range(2):
            np.testing.assert_allclose(full[:, j, k], ref, rtol=1e-8, atol=1e-8 * np.abs(ref).max())


def test_homogenization_reduced_run():
    dr = build_derham(reduced_1d_grid(256))
    rep, theta = homogenize_layered(dr, 1.0, 10.0, [2, 4, 8, 16])
    oracle = coarse_grained_ratio(8192, 256, 1.0, 10.0)
    assert abs(theta - oracle) <= 0.02 * oracle
    assert max(rep.extra["identity_rel_gap"]) <= 1e-12
    assert rep.extra["harmonic_mean"] == pytest.approx(20 / 11)
    assert rep.passed


def test_homogenization_problem_validation():
    dr = build_derham(reduced_1d_grid(12))
    with pytest.raises(ComplexError, match="multiple"):
        homogenization_problem(dr, 1, 2).cell_theta(5)
    with pytest.raises(ComplexError, match="positive"):
        homogenization_problem(dr, -1, 2)
    t = homogenization_problem(dr, 1, 2).cell_theta(3)
    np.testing.assert_array_equal(t, [1, 1, 2, 2] * 3)


# ---------------------------------------------------------------------------
# extrapolation and fits
# ---------------------------------------------------------------------------


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_richardson_exact_on_model(c0, c1, c2):
    n = np.array([1, 2, 4, 8, 16], dtype=float)
    v = c0 + c1 / n + c2 / n**2
    est = richardson(n, v)
    last, prev = v[-1], v[-2]
    if abs(c0 - last) <= 2 * abs(last - prev):
        assert est == pytest.approx(c0, abs=1e-9)
    else:
        assert est == last


def test_richardson_safeguard_and_degenerate():
    n = [1, 2, 4, 8]
    assert richardson(n, [1.0, 1e-3, 1e-9, 1e-17]) == 1e-17
    assert richardson([0], [3.0]) == 3.0
    assert richardson([0, 5], [3.0, 2.0]) == 2.0


def test_growth_exponent():
    n = [1, 2, 4, 8, 16]
    assert growth_exponent(n, [3.0 * k for k in n]) == pytest.approx(1.0)
    assert growth_exponent(n, [2.0] * 5) == pytest.approx(0.0, abs=1e-12)
    assert growth_exponent(n, [0.0] * 5) == 0.0


# ---------------------------------------------------------------------------
# dictionaries and weak limits
# ---------------------------------------------------------------------------


def test_dictionary_is_independent(osc16):
    d = default_dictionary(osc16, 3, "sine")
    assert d.size == len(d.labels) == d.entries.shape[1]
    assert np.linalg.cond(d.gram) < 1e8
    with pytest.raises(ComplexError):
        make_dictionary(osc16, [d.entries[:, 0], 2 * d.entries[:, 0]], ["a", "b"])
    with pytest.raises(ValueError):
        default_dictionary(osc16, 2, "wavelet")


def test_sine_pairings_vanish_by_quadrature(osc16):
    """Pairings of sin(2πn x1) e1 with the sine dictionary are zero beyond its bandwidth."""
    d = default_dictionary(osc16, 3, "sine")
    E, H = gen_oscillatory_pair(osc16, [2, 4])
    p = pairings(osc16, E, d)
    assert np.abs(p).max() <= 1e-12
    ph = pairings(osc16, H, d)
    assert np.abs(ph).max() <= 1e-3


def test_weak_limit_of_constant_sequence(osc16):
    d = default_dictionary(osc16, 2, "polynomial")
    x = d.entries @ np.arange(1, d.size + 1, dtype=float)
    seq = field_sequence(osc16, [1, 2, 3], [x, x, x], "E")
    wl = weak_limit(seq, d, osc16)
    np.testing.assert_allclose(wl.vector, x, atol=1e-10 * np.abs(x).max())
    assert wl.detected and not wl.undetected_labels


def test_weak_limit_flags_non_convergent_pairings(osc16):
    d = default_dictionary(osc16, 1, "sine")
    x = d.entries[:, 0]
    seq = field_sequence(osc16, [1, 2, 3], [x, -2 * x, 4 * x], "H")
    wl = weak_limit(seq, d, osc16)
    assert not wl.detected and d.labels[0] in wl.undetected_labels


def test_field_sequence_validation(osc16):
    with pytest.raises(ValueError):
        field_sequence(osc16, [1], [np.zeros(osc16.spaces[1].dim)], "X")
    with pytest.raises(ComplexError):
        field_sequence(osc16, [1, 2], [np.zeros(osc16.spaces[1].dim)], "E")
    with pytest.raises(ComplexError):
        field_sequence(osc16, [1], [np.zeros(3)], "E")
    with pytest.raises(ComplexError, match="N/4"):
        gen_oscillatory_pair(osc16, [1, 8])


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------


def test_replay_route_on_fixed_fields():
    """For a constant sequence the Helmholtz-split route returns <E, H> itself."""
    grid = GridSpec.box(6, "x1-lo")
    dr = build_derham(grid, MaterialField(lambda x1, x2, x3: 1 + x2))
    d = default_dictionary(dr, 2, "polynomial")
    rng = np.random.default_rng(3)
    e, h = d.entries @ rng.standard_normal(d.size), d.entries @ rng.standard_normal(d.size)
    E = field_sequence(dr, [1, 2, 4], [e] * 3, "E")
    H = field_sequence(dr, [1, 2, 4], [h] * 3, "H")
    rep = divcurl_experiment(dr, E, H, d, tol=1e-10)
    ip = dr.spaces[1].inner(e, h)
    assert rep.proof_limit == pytest.approx(ip, rel=1e-10)
    assert rep.proof_terms["gradient_term"] + rep.proof_terms["remainder_term"] == pytest.approx(ip, rel=1e-10)
    assert rep.gap <= 1e-10 * abs(ip) and rep.decay_order == math.inf and rep.passed


def test_oscillatory_experiment_passes(osc16):
    E, H = gen_oscillatory_pair(osc16, [1, 2, 4])
    d = default_dictionary(osc16, 3, "sine")
    rep = divcurl_experiment(osc16, E, H, d)
    assert rep.passed and rep.hypothesis_ok
    assert abs(rep.inner_products[-1]) <= 1e-12
    assert rep.replay_gap <= 1e-3
    assert max(rep.deriv_norm_E) <= 1e-12 and max(rep.deriv_norm_H) <= 1e-12
    d_ = rep.to_dict()
    assert d_["pass"] is True and d_["decay_order"] == "inf"
    assert rep.csv_rows()[0][0] == "n" and len(rep.csv_rows()) == 4


def test_negative_control_fails_hypothesis(osc16):
    E, H = gen_negative_control(osc16, [1, 2, 4])
    d = default_dictionary(osc16, 3, "sine")
    rep = divcurl_experiment(osc16, E, H, d, negative_control=True)
    vol = osc16.grid.volume
    assert rep.inner_products[-1] == pytest.approx(vol / 2, rel=1e-2)
    assert np.abs(rep.pairings_E[-1]).max() <= 1e-2
    assert rep.growth_H == pytest.approx(1.0, rel=0.1)
    ratios = np.array(rep.deriv_norm_H[1:]) / np.array(rep.deriv_norm_H[:-1])
    np.testing.assert_allclose(ratios, 2.0, rtol=0.1)
    assert not rep.hypothesis_ok and not rep.passed


def test_local_experiment(osc16):
    E, H = gen_oscillatory_pair(osc16, [1, 2, 4])
    d = default_dictionary(osc16, 3, "sine")

    def bump(x1, x2, x3):
        out = np.ones_like(x1)
        for x in (x1, x2, x3):
            out = out * np.where((x > 0.25) & (x < 0.75), np.sin(2 * np.pi * (x - 0.25)) ** 2, 0.0)
        return out

    rep = local_divcurl_experiment(osc16, E, H, bump, d)
    assert rep.passed
    assert rep.extra["phi_integral"] == pytest.approx(0.25**3, rel=1e-2)
    with pytest.raises(ComplexError, match="vanish"):
        local_divcurl_experiment(osc16, E, H, lambda x1, x2, x3: np.ones_like(x1), d)
    with pytest.raises(ComplexError, match="full-layout"):
        local_divcurl_experiment(osc16, E, H, np.ones(3), d)


def test_experiment_rejects_mismatched_sequences(osc16):
    E, H = gen_oscillatory_pair(osc16, [1, 2])
    E2, _ = gen_oscillatory_pair(osc16, [1, 4])
    d = default_dictionary(osc16, 1, "sine")
    with pytest.raises(ComplexError, match="same indices"):
        divcurl_experiment(osc16, E2, H, d)
    with pytest.raises(ComplexError, match="E-like"):
        divcurl_experiment(osc16, H, E, d)


def test_parallel_map_matches_serial(monkeypatch, osc16):
    E, H = gen_oscillatory_pair(osc16, [1, 2, 4])
    d = default_dictionary(osc16, 2, "sine")
    serial = divcurl_experiment(osc16, E, H, d).to_dict()
    monkeypatch.setenv("HODGELAB_THREADS", "3")
    parallel = divcurl_experiment(osc16, E, H, d).to_dict()
    assert serial == parallel


def test_curl_free_sample_has_no_curl():
    grid = GridSpec.box(5, "all-n")
    dr = build_derham(grid)
    e, _ = sample_vector(grid, lambda x1, x2, x3: (np.cos(x1), 0 * x1, 0 * x1))
    assert dr.spaces[2].norm(dr.curl.apply(e)) <= 1e-12
