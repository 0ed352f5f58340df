import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdode import builtin, expression_model
from rdode.grid import cell_centers, integrate
from rdode.profile1d import (BVPError, assemble_weak_profile, check_instability_conditions,
                             load_profile_csv, polish_profile, reduced_h, shoot_stationary,
                             solve_branch, touched_states, write_profile_csv, zero_branch)
from rdode.steady import touch_inequality

# frozen from the time-map quadrature oracle in tests/oracles/generate.py
CUBIC_TURNING_POINTS_L235 = (0.6983537511402366, 1.2297569021020167)
CUBIC_L_NEAR_ONSET = np.pi / np.sqrt(2) * 1.05
CUBIC_TURNING_POINTS_ONSET = (0.720218725844868, 1.217080517855082)

B, K = 0.1, 0.02


def test_gray_scott_branch_and_h(gray_scott, gs_problem):
    V = np.linspace(0.02, 1.0, 37)
    assert np.allclose(gs_problem.branch.k(V), (B + K) / V, rtol=1e-13)
    assert np.allclose(gs_problem(V), -B * V - (B + K) ** 2 / V + B, rtol=1e-12, atol=1e-14)


def test_gierer_meinhardt_branch_and_h():
    m = builtin("gierer_meinhardt", {"p": 3, "q": 2, "r": 3, "s": 0.5, "tau": 1})
    prob = reduced_h(solve_branch(m, (0.05, 3.0), seed_u=1.0))
    V = np.linspace(0.05, 3.0, 29)
    assert np.allclose(prob.branch.k(V), V ** (2 / 2), rtol=1e-12)
    Q = m.Q
    assert Q == pytest.approx(2.5)
    assert np.allclose(prob(V), -V + V**Q, rtol=1e-11, atol=1e-13)


def test_identity_branch():
    m = expression_model("u - v", "0")
    br = solve_branch(m, (-3, 4), seed_u=10.0)
    V = np.linspace(-3, 4, 11)
    assert np.allclose(br.k(V), V) and np.allclose(br.dk(V), 1.0)


def test_fold_truncates_branch():
    m = expression_model("u*u + v*v - 1", "0")
    br = solve_branch(m, (0.0, 1.5), seed_u=1.0, seed_v=0.0)
    assert br.fold is not None and abs(br.fold - 1.0) < 1.5 / 2000
    assert br.v_hi < 1.0
    with pytest.raises(ValueError):
        br.k(1.2)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0))
def test_branch_identity(t):
    for name, interval in [("gray_scott", (0.05, 1.0)), ("carcinogenesis2", (0.3, 6.0))]:
        m = builtin(name)
        br = solve_branch(m, interval, seed_u=1.0)
        V = br.v_lo + t * (br.v_hi - br.v_lo)
        U = br.k(V)
        fu, fv, _, _ = m.partials(U, V)
        assert abs(m.f(U, V)) < 1e-10
        assert abs(br.dk(V) * fu + fv) < 1e-8


def test_h_prime_matches_finite_differences(gs_problem, gm_problem):
    for prob, (a, b) in [(gs_problem, (0.05, 0.9)), (gm_problem, (0.1, 2.5))]:
        V = np.linspace(a, b, 50)
        e = 1e-6
        fd = (prob(V + e) - prob(V - e)) / (2 * e)
        assert np.allclose(prob.dh(V), fd, rtol=1e-6, atol=1e-8)


def test_touch_value_equals_h_prime(gs_problem, gray_scott):
    for vb in gs_problem.roots():
        from rdode.steady import classify_state
        st_ = classify_state(gray_scott, float(gs_problem.branch.k(vb)), float(vb))
        assert touch_inequality(st_) == pytest.approx(float(gs_problem.dh(vb)), abs=1e-10)


def test_cubic_profile_matches_time_map(gm_profiles):
    assert len(gm_profiles) == 2
    s_vals = sorted(p.s0 for p in gm_profiles)
    assert np.allclose(s_vals, CUBIC_TURNING_POINTS_L235, atol=1e-8)
    for p in gm_profiles:
        assert p.modes == 1
        assert p.V.min() < 1.0 < p.V.max()


def test_cubic_profile_near_onset(gm_problem):
    profiles = shoot_stationary(gm_problem, CUBIC_L_NEAR_ONSET, (0.02, 1.6), N=200)
    assert len(profiles) == 2 and all(p.modes == 1 for p in profiles)
    assert np.allclose(sorted(p.s0 for p in profiles), CUBIC_TURNING_POINTS_ONSET, atol=1e-8)


def test_short_domain_has_only_constants(gm_problem):
    # below the first bifurcation length pi/sqrt(h'(1)) only constants exist
    assert shoot_stationary(gm_problem, 2.0, (0.5, 1.3)) == []


def test_equilibrium_seed_is_discarded():
    h = lambda V: -V + V**3
    out = shoot_stationary(h, 2.0, (0.5, 1.5), n_scan=101)
    assert out == []


def test_escape_is_reported_not_raised():
    diag = {}
    out = shoot_stationary(lambda V: V * V, 5.0, (-10.0, -1.0), n_scan=64, diagnostics=diag)
    assert out == [] and diag["escaped"] > 0


def test_profiles_touch_a_root_with_positive_slope(gs_profiles, gm_profiles):
    for p in gs_profiles + gm_profiles:
        touched = touched_states(p)
        assert any(t.h_prime >= 0 and p.V.min() <= t.vbar <= p.V.max() for t in touched)
        assert any(t.positive for t in touched)


def test_profile_residuals(gs_profiles, gm_profiles):
    for p in gs_profiles + gm_profiles:
        assert p.residual() < 10 / p.N**2
        assert abs(p.integral_g()) < 1e-6 * p.L
        assert p.f_residual() < 1e-10


def test_spatial_order(gs_profile):
    errs = []
    for N in (100, 200, 400):
        q = polish_profile(gs_profile.resample(N))
        errs.append(np.max(np.abs(q.V - gs_profile.vfun(q.x))))
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(orders >= 1.8)


def test_refine_changes_by_second_order(gs_profile):
    p1 = polish_profile(gs_profile.resample(100))
    p2 = p1.refine()
    p3 = p2.refine()
    d1 = np.max(np.abs(p2.V - p2.vfun(p2.x)))
    d2 = np.max(np.abs(p3.V - p3.vfun(p3.x)))
    assert p2.N == 200 and p3.N == 400
    assert np.log2(d1 / d2) >= 1.8


def test_gray_scott_conditions(gs_profile):
    rep = check_instability_conditions(gs_profile)
    assert rep.lambda0 == pytest.approx(B + K, abs=1e-12)
    assert rep.Lambda0 == pytest.approx(B + K, abs=1e-12)
    assert rep.autocatalysis and rep.compensation and rep.n_compensation_violations == 0
    comp = gs_profile.fv * gs_profile.gu
    assert np.allclose(comp, -2 * gs_profile.U**3 * gs_profile.V, rtol=1e-12)
    assert rep.witness_x0 is not None and rep.unstable


def test_gierer_meinhardt_conditions(gm_profiles):
    p, q, r, s = 2, 1, 3, 0
    for prof in gm_profiles:
        rep = check_instability_conditions(prof)
        assert rep.lambda0 == pytest.approx(p - 1, abs=1e-10)
        assert rep.Lambda0 == pytest.approx(p - 1, abs=1e-10)
        want = -r * q * prof.U ** (p + r - 1) / prof.V ** (s + q + 1)
        assert np.allclose(prof.fv * prof.gu, want, rtol=1e-10)
        assert rep.compensation


def test_weak_profile(weak_profile):
    w = weak_profile
    x = w.x
    left, right = x < 5.0, x > 5.0
    assert np.all(w.U[left] == 0.0) and np.all(w.U[right] > 0.5)
    assert w.residual() < 1e-10
    assert abs(w.integral_g()) < 1e-6 * w.L
    # V is continuous: its jump across the switch is comparable to neighbouring increments
    i = np.flatnonzero(right)[0]
    dV = np.abs(np.diff(w.V))
    assert dV[i - 1] < 3 * max(dV[i - 2], dV[i])
    rep = check_instability_conditions(w)
    assert not rep.autocatalysis
    assert rep.autocatalysis_nonzero and rep.compensation_nonzero
    assert rep.lambda0 == pytest.approx(-1.0)
    assert rep.witness_x0 is not None and rep.witness_x0 > 5.0 and rep.unstable


def test_single_segment_weak_equals_shot(gs_profile, gs_problem, gray_scott):
    w = assemble_weak_profile([gs_problem.branch], [], gray_scott, gs_profile.L, gs_profile.N,
                              v_guess=gs_profile.V + 1e-3)
    assert np.max(np.abs(w.V - gs_profile.V)) < 1e-9


def test_weak_profile_rejects_bad_input(carcinogenesis):
    z = zero_branch(carcinogenesis, (0.3, 6.0))
    with pytest.raises(ValueError):
        assemble_weak_profile([z, z], [], carcinogenesis, 1.0, 10)
    with pytest.raises(ValueError):
        assemble_weak_profile([z, z], [2.0], carcinogenesis, 1.0, 10)
    with pytest.raises(ValueError):
        zero_branch(builtin("gierer_meinhardt"), (0.1, 1))


def test_bvp_divergence_is_reported(gs_problem, gray_scott):
    with pytest.raises(BVPError):
        assemble_weak_profile([gs_problem.branch], [], gray_scott, 8.0, 50, v_guess=5.0)


def test_profile_csv_round_trip(gs_profile, weak_profile, tmp_path):
    for prof in (gs_profile, weak_profile):
        path = write_profile_csv(prof, tmp_path / "p.csv")
        back = load_profile_csv(path, prof.model)
        assert np.array_equal(back.V, prof.V) and np.array_equal(back.U, prof.U)
        assert np.array_equal(back.x, prof.x) and np.array_equal(back.labels, prof.labels)
        assert np.array_equal(back.fu, prof.fu) and back.L == prof.L
        assert path.read_text().splitlines()[0] == "x,U,V,branch,f_u,f_v,g_u,g_v"
