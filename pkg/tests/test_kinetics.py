import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdode import DomainError, ParameterError, builtin, expression_model
from rdode.kinetics import (DEFAULT_PARAMS, eval_f, eval_g, jacobian, load_model,
                            model_from_section)


def fd_jacobian(model, u, v, h=1e-5):
    rows = []
    for fun in (model.f, model.g):
        rows.append([(fun(u + h, v) - fun(u - h, v)) / (2 * h),
                     (fun(u, v + h) - fun(u, v - h)) / (2 * h)])
    return np.array(rows)


ALL_MODELS = ["gray_scott", "gierer_meinhardt", "carcinogenesis2"]


def test_gierer_meinhardt_vanishes_at_one_one():
    for p, q in [(2, 1), (3, 2), (1.5, 0.5)]:
        m = builtin("gierer_meinhardt", {"p": p, "q": q, "r": 2, "s": 0, "tau": 1})
        assert eval_f(m, 1.0, 1.0) == 0.0
        assert eval_g(m, 1.0, 1.0) == 0.0


@given(st.floats(0, 10))
def test_gray_scott_zero_branch(v):
    assert eval_f(builtin("gray_scott"), 0.0, v) == 0.0


def test_gray_scott_value_matches_symbolic_oracle():
    # oracle: sympy evaluation of -(B+k)u + u^2 v in exact rationals
    m = builtin("gray_scott", {"B": 0.04, "k": 0.06})
    assert eval_f(m, 0.5, 0.3) == pytest.approx(0.025, rel=1e-14)


def test_gray_scott_g_form():
    m = builtin("gray_scott", {"B": 0.04, "k": 0.06})
    u, v = 0.7, 0.2
    assert eval_g(m, u, v) == pytest.approx(-u * u * v + 0.04 * (1 - v), rel=1e-14)


def test_gierer_meinhardt_f_form():
    m = builtin("gierer_meinhardt", {"p": 2, "q": 1, "r": 2, "s": 0, "tau": 1})
    assert eval_f(m, 0.7, 1.3) == pytest.approx(-0.7 + 0.49 / 1.3, rel=1e-14)


def test_carcinogenesis_g_with_unit_rates():
    m = builtin("carcinogenesis2", {k: 1.0 for k in ("a", "d_c", "d_b", "d", "d_g")} | {"kappa0": 10})
    u, w = 1.3, 0.4
    assert eval_g(m, u, w) == pytest.approx(-w - u * u * w / 2 + 10, rel=1e-14)


@given(st.floats(0.05, 5))
def test_gray_scott_branch_fu(V):
    m = builtin("gray_scott", {"B": 0.04, "k": 0.06})
    assert jacobian(m, 0.1 / V, V)[0, 0] == pytest.approx(0.1, abs=1e-13)


@given(st.floats(0.1, 4), st.sampled_from([(2, 1), (3, 2), (2.5, 1.5)]))
def test_gierer_meinhardt_branch_fu(V, pq):
    p, q = pq
    m = builtin("gierer_meinhardt", {"p": p, "q": q, "r": 2, "s": 0, "tau": 0.3})
    U = V ** (q / (p - 1))
    assert jacobian(m, U, V)[0, 0] == pytest.approx(p - 1, rel=1e-12)


@pytest.mark.parametrize("name", ALL_MODELS)
def test_jacobian_matches_finite_differences(name, rng):
    m = builtin(name)
    pts = rng.uniform(0.2, 3.0, size=(1000, 2))
    J = m.jacobian(pts[:, 0], pts[:, 1])
    Jfd = np.moveaxis(fd_jacobian(m, pts[:, 0], pts[:, 1]), -1, 0)
    J = np.moveaxis(J, -1, 0)
    assert np.all(np.abs(J - Jfd) / (1 + np.abs(J)) < 1e-5)
    assert np.allclose(J, Jfd, rtol=1e-6, atol=1e-6)


@given(st.floats(0, 20))
def test_carcinogenesis_zero_branch(w):
    assert eval_f(builtin("carcinogenesis2"), 0.0, w) == 0.0


@settings(max_examples=200)
@given(st.floats(0.01, 5), st.floats(0.01, 5))
def test_reduced_carcinogenesis_matches_three_species(u, w):
    m3 = builtin("carcinogenesis3")
    m2 = m3.reduced()
    v = m3.quasi_steady_v(u, w)
    assert m3.rhs_u(u, v, w) == pytest.approx(m2.f(u, w), abs=1e-12)
    assert m3.rhs_w(u, v, w) == pytest.approx(m2.g(u, w), abs=1e-12)
    assert m3.rhs_v(u, v, w) == pytest.approx(0.0, abs=1e-12)


def test_three_species_w_equation():
    m3 = builtin("carcinogenesis3", {"a": 2, "d_c": 1, "d_b": 0.5, "d": 0.7, "d_g": 1.3,
                                     "kappa0": 2, "eps": 0.1})
    u, v, w = 0.8, 1.1, 0.6
    assert m3.rhs_w(u, v, w) == pytest.approx(-1.3 * w - u * u * w + 0.7 * v + 2, rel=1e-14)


def test_eps_max():
    m3 = builtin("carcinogenesis3")
    assert m3.eps_max == pytest.approx((1 + 1) / (2 * 1))


@pytest.mark.parametrize("params", [{"B": 0.1}, {"B": -1, "k": 0.1}, {"B": 0.0, "k": 0.1},
                                    {"B": math.nan, "k": 0.1}])
def test_gray_scott_bad_parameters(params):
    with pytest.raises(ParameterError):
        builtin("gray_scott", params)


def test_gierer_meinhardt_exponent_constraints():
    good = {"p": 2, "q": 1, "r": 2, "s": 0, "tau": 1}
    builtin("gierer_meinhardt", good)
    for bad in ({"p": 1.0}, {"s": -0.5}, {"q": 0}, {"r": -1}):
        with pytest.raises(ParameterError):
            builtin("gierer_meinhardt", good | bad)


def test_unknown_model():
    with pytest.raises(ParameterError):
        builtin("brusselator")


def test_domain_errors():
    with pytest.raises(DomainError):
        builtin("gierer_meinhardt").f(1.0, 0.0)
    with pytest.raises(DomainError):
        builtin("gray_scott").g(-0.1, 1.0)
    with pytest.raises(DomainError):
        builtin("carcinogenesis3").rhs_u(0.0, 0.0, 1.0)


def test_gierer_meinhardt_scaling_and_Q():
    m = builtin("gierer_meinhardt", {"p": 2, "q": 1, "r": 3, "s": 0.5, "tau": 0.25, "D": 2})
    assert m.diffusion == pytest.approx(8.0)
    assert m.Q == pytest.approx(2.5)


def test_expression_model_exact_derivatives():
    m = expression_model("-(B+k)*u + u^2*v", "-u**2*v + B*(1-v)", {"B": 0.04, "k": 0.06})
    gs = builtin("gray_scott", {"B": 0.04, "k": 0.06})
    for u, v in [(0.5, 0.3), (1.2, 0.7)]:
        assert m.f(u, v) == pytest.approx(gs.f(u, v), rel=1e-14)
        assert np.allclose(m.jacobian(u, v), gs.jacobian(u, v), rtol=1e-14)
    assert m.has_zero_branch


def test_expression_model_identity_and_arrays():
    m = expression_model("u - v", "0")
    assert np.allclose(m.jacobian(0.3, 2.0), [[1, -1], [0, 0]])
    assert m.g(np.zeros(3), np.ones(3)).shape == (3,)


@pytest.mark.parametrize("expr", ["sin(u)", "exp(v)", "u + w", "import os", "u < v"])
def test_expression_model_rejects(expr):
    with pytest.raises(ParameterError):
        expression_model(expr, "0")


def test_model_from_section_and_file(tmp_path):
    m = model_from_section({"name": "gray_scott", "B": "0.2"})
    assert m.params["B"] == 0.2 and m.params["k"] == DEFAULT_PARAMS["gray_scott"]["k"]
    with pytest.raises(ParameterError):
        model_from_section({"name": "gray_scott", "bogus": "1"})
    with pytest.raises(ParameterError):
        model_from_section({"name": "custom", "f": "u"})
    path = tmp_path / "m.ini"
    path.write_text("[model]\nname = custom\nf = a*u - v\ng = u - v\na = 2\nD = 0.5\n")
    cm = load_model(path)
    assert cm.diffusion == 0.5 and cm.f(1.0, 0.5) == pytest.approx(1.5)


def test_models_are_hashable_values():
    a, b = builtin("gray_scott"), builtin("gray_scott")
    assert a.params == b.params
    with pytest.raises(TypeError):
        a.params["B"] = 1.0
