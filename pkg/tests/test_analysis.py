import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _cases import coscos
from moserlab.analysis import (
    bernoulli_check,
    error_norm,
    ladder_part1,
    ladder_part2,
    lp_norm,
    norm,
    norm_ladder,
    region_measure,
    sup_norms,
    tail_functionals,
    trace_interpolation_fit,
    w1p_norm,
)
from moserlab.geometry import structured_rectangle_mesh
from moserlab.hypotheses import Exponents

MESH = structured_rectangle_mesh(1.0, 1.0, 16, 16)
X, Y = MESH.nodes[:, 0], MESH.nodes[:, 1]


@pytest.mark.parametrize("q", [1, 2, 3.5, 19, 21, 400])
def test_constant_field_norms(q):
    c = 2.5
    u = np.full(MESH.n_nodes, c)
    assert norm(MESH, u, q) == pytest.approx(c, rel=1e-12)
    assert norm(MESH, u, q, "boundary") == pytest.approx(c * 4 ** (1 / q), rel=1e-12)


def test_region_measures():
    assert region_measure(MESH) == pytest.approx(1.0)
    assert region_measure(MESH, "boundary") == pytest.approx(4.0)
    with pytest.raises(ValueError):
        region_measure(MESH, "interior")


def test_nodal_rule_oracle():
    # nodal rule on (I_h x)^2 with h = 1/16 gives 1/3 + h^2/6
    expected = math.sqrt(1 / 3 + 1 / (6 * 16**2))
    assert norm(MESH, X, 2, rule="nodal") == pytest.approx(expected, rel=1e-13)
    # x is its own interpolant, so a degree >= 2 rule is exact
    assert norm(MESH, X, 2, rule="degree5") == pytest.approx(math.sqrt(1 / 3), rel=1e-13)


def test_norm_argument_checks():
    with pytest.raises(ValueError):
        lp_norm(MESH, X, 0.5)
    with pytest.raises(ValueError):
        lp_norm(MESH, X, math.inf)
    with pytest.raises(ValueError):
        lp_norm(MESH, X[:-1], 2)
    assert lp_norm(MESH, np.zeros(MESH.n_nodes), 3) == -math.inf


def test_log_norm_survives_extreme_scale():
    u = 1e200 * X
    ln = lp_norm(MESH, u, 400, rule="nodal")
    assert ln == pytest.approx(math.log(1e200) + lp_norm(MESH, X, 400, rule="nodal"), rel=1e-14)


def test_w1p_examples():
    assert w1p_norm(MESH, np.full(MESH.n_nodes, 3.0), 2) == pytest.approx(3.0, rel=1e-12)
    assert w1p_norm(MESH, X, 2) == pytest.approx(math.sqrt(4 / 3), rel=1e-12)
    assert w1p_norm(MESH, -4 * X, 3) == pytest.approx(4 * w1p_norm(MESH, X, 3), rel=1e-12)
    with pytest.raises(ValueError):
        w1p_norm(MESH, X, 0.9)


def test_sup_norms():
    u = X * Y - 0.25
    dmax, bmax = sup_norms(MESH, u)
    assert dmax == pytest.approx(0.75) and bmax == pytest.approx(0.75)
    bump = np.where((X == 0.5) & (Y == 0.5), -7.0, 0.0)
    assert sup_norms(MESH, bump) == (7.0, 0.0)


def test_error_norm_of_interpolant_is_second_order():
    errs = []
    for n in (8, 16, 32):
        m = structured_rectangle_mesh(1, 1, n, n)
        errs.append(error_norm(m, coscos(m.nodes[:, 0], m.nodes[:, 1]), coscos))
    assert 3.8 < errs[0] / errs[1] < 4.2 and 3.8 < errs[1] / errs[2] < 4.2


@settings(max_examples=25, deadline=None)
@given(q=st.floats(1.0, 50.0), r=st.floats(1.0, 50.0))
def test_norms_monotone_in_exponent_on_unit_square(q, r):
    u = coscos(X, Y) + 0.3 * X
    lo, hi = sorted((q, r))
    assert lp_norm(MESH, u, lo) <= lp_norm(MESH, u, hi) + 1e-12


# ---------------------------------------------------------------- tails


def test_tail_at_zero_threshold_is_closed_form():
    u = coscos(X, Y)
    p, ps, pb = 2.0, 6.0, 4.0
    H, K = tail_functionals(MESH, u, p, 2, 0.0, 0.0, p_star=ps, p_boundary=pb)
    assert H == pytest.approx(math.exp((ps - p) * lp_norm(MESH, u, ps)), rel=1e-12)
    assert K == pytest.approx(math.exp((pb - p) * lp_norm(MESH, u, pb, "boundary")), rel=1e-12)


def test_tails_vanish_above_max_and_decrease():
    u = X + 0.5 * Y
    dmax, bmax = sup_norms(MESH, u)
    L = np.linspace(0, dmax**4, 11)
    H, K = tail_functionals(MESH, u, 2, 2, L, L, p_star=6, p_boundary=6)
    assert H.shape == (11,) and np.all(np.diff(H) <= 0) and H[-1] == 0.0
    assert np.all(np.diff(K) <= 0)


def test_tail_argument_checks():
    with pytest.raises(ValueError, match="unbounded"):
        tail_functionals(MESH, X, 2, 2, 0, 0)
    with pytest.raises(ValueError):
        tail_functionals(MESH, X, 3, 2, 0, 0, p_star=2.5, p_boundary=4)
    with pytest.raises(ValueError):
        tail_functionals(MESH, X, 2, 2, -1.0, 0, p_star=6, p_boundary=4)
    # p < N: exponents come from the dimension
    H, K = tail_functionals(MESH, X, 1.5, 2, 0.0, 0.0)
    assert H > 0 and K > 0


# ---------------------------------------------------------------- ladders


def test_ladder_part1_examples():
    assert ladder_part1(2, 3, 3) == pytest.approx([2.0, 8.0, 26.0])
    assert ladder_part1(1.5, 3, 2) == pytest.approx([1.0, 3.0])
    with pytest.raises(ValueError):
        ladder_part1(2, 2, 3)
    with pytest.raises(ValueError):
        ladder_part1(2, 3, 0)


def test_ladder_part2_examples():
    assert ladder_part2(1.0, 6.0, 3.0, 3) == pytest.approx([3.0, 7.0, 15.0])
    assert ladder_part2(1.0, 6.0, 3.0, 0) == []
    with pytest.raises(ValueError):
        ladder_part2(0.0, 6.0, 3.0, 2)
    with pytest.raises(ValueError):
        ladder_part2(1.0, 6.0, 6.0, 2)
    with pytest.raises(ValueError):
        ladder_part2(1.0, 6.0, 1.5, 2, p=2.0)


def test_norm_ladder_on_constant():
    exps = Exponents(2.0, 2, 4.0, 4.0)
    u = np.full(MESH.n_nodes, 1.5)
    dom = norm_ladder(MESH, u, exps, "domain")
    assert dom.alpha[-1] == 400.0
    assert np.allclose(dom.norms, 1.5, rtol=1e-12)
    assert dom.relative_gap == pytest.approx(0.0, abs=1e-12)
    bnd = norm_ladder(MESH, u, exps, "boundary")
    assert bnd.sup_estimate == pytest.approx(1.5 * 4 ** (1 / 400), rel=1e-12)
    # consecutive rungs grow by p*/q~
    a = np.array(dom.alpha)
    assert np.allclose(a[1:] / a[:-1], 4.0 / 3.0)


def test_relative_gap_shrinks_as_cap_grows():
    exps = Exponents(2.0, 2, 4.0, 4.0)
    u = coscos(X, Y)
    gaps = [norm_ladder(MESH, u, exps, "domain", alpha_cap=c).relative_gap for c in (25, 50, 100, 200, 400, 800)]
    assert all(b <= a + 1e-14 for a, b in zip(gaps, gaps[1:]))


def test_norm_ladder_below_first_rung_is_empty():
    exps = Exponents(2.0, 2, 4.0, 4.0)
    rep = norm_ladder(MESH, X, exps, "domain", alpha_cap=3.0)
    assert rep.alpha == [] and rep.sup_estimate is None and rep.relative_gap is None
    assert rep.to_csv() == "kappa,alpha,log_norm,norm\n"


def test_norm_ladder_csv_and_dict():
    exps = Exponents(2.0, 2, 4.0, 4.0)
    rep = norm_ladder(MESH, X + 1, exps, "domain", kappa0=1.0, alpha_cap=100)
    rows = rep.to_csv().strip().splitlines()
    assert rows[0] == "kappa,alpha,log_norm,norm" and len(rows) == len(rep.alpha) + 1
    assert rep.alpha[0] == pytest.approx(2 * 4 * 4 / 3) and rep.alpha[-1] <= 100
    d = rep.to_dict()
    assert d["kind"] == "domain" and d["sup_estimate"] == rep.norms[-1]
    with pytest.raises(ValueError):
        norm_ladder(MESH, X, Exponents(2.0, 2, 2.0, 2.0), "domain")


def test_bernoulli_check():
    assert bernoulli_check(0.0, 1.0) and bernoulli_check(3.0, 2.5) and bernoulli_check(1e-14, 1 + 1e-14)
    with pytest.raises(ValueError):
        bernoulli_check(-1.0, 2.0)
    with pytest.raises(ValueError):
        bernoulli_check(1.0, 0.5)


# ---------------------------------------------------------------- trace fit


EPS = [2.0**-k for k in range(8)]


def test_trace_fit_scale_invariant():
    fam = [np.ones(MESH.n_nodes), X, coscos(X, Y)]
    a = trace_interpolation_fit(MESH, 2.0, 2.0, fam, EPS)
    b = trace_interpolation_fit(MESH, 2.0, 2.0, [1e6 * s for s in fam], EPS)
    assert np.allclose(a.c_eps, b.c_eps, rtol=1e-10)
    assert a.c1 == pytest.approx(b.c1, rel=1e-10) and a.c2 == pytest.approx(b.c2, rel=1e-10, abs=1e-12)


def test_trace_fit_degenerate_family():
    rep = trace_interpolation_fit(MESH, 2.0, 2.0, [np.ones(MESH.n_nodes)], [100.0, 200.0])
    assert rep.holds and rep.c1 is None and "arbitrarily small" in rep.note


def test_trace_fit_argument_checks():
    with pytest.raises(ValueError):
        trace_interpolation_fit(MESH, 1.5, 1.2, [X], EPS)
    with pytest.raises(ValueError):
        trace_interpolation_fit(MESH, 1.5, 3.0, [X], EPS)  # q_hat must stay below p_* = 3
    with pytest.raises(ValueError):
        trace_interpolation_fit(MESH, 2.0, 2.0, [X], [])
    with pytest.raises(ValueError):
        trace_interpolation_fit(MESH, 2.0, 2.0, [np.zeros(MESH.n_nodes)], EPS)
