import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rdode import builtin, expression_model
from rdode.evolve import (SaturationError, decay_experiment, default_initial_data, fit_growth,
                          growth_experiment, integrate_system, load_reduction_csv,
                          load_trace_csv, reduction_experiment, step_imex, step_three_species,
                          taylor_remainder_check, write_reduction_csv, write_snapshot_csv,
                          write_trace_csv)
from rdode.grid import cell_centers
from rdode.spectrum import compute_spectrum
from rdode.steady import classify_state


def test_constant_state_is_fixed_point(gray_scott):
    u, v = np.zeros(50), np.ones(50)
    un, vn = step_imex((u, v), gray_scott, 0.1, L=3.0)
    assert np.max(np.abs(un - u)) < 1e-12 and np.max(np.abs(vn - v)) < 1e-12


def test_profiles_are_fixed_points(gs_profile, gm_profiles, weak_profile):
    for p in [gs_profile, *gm_profiles, weak_profile]:
        un, vn = step_imex((p.U, p.V), p.model, 1e-4, D=p.D, L=p.L)
        assert max(np.max(np.abs(un - p.U)), np.max(np.abs(vn - p.V))) < 1e-8


def test_heat_mode_decay():
    m = expression_model("0", "0", diffusion=0.5)
    L, N = 2.0, 200
    x = cell_centers(L, N)
    tr = integrate_system(m, np.zeros(N), np.cos(np.pi * x / L), L, 1.0, 1e-3)
    rate = -np.polyfit(tr.times, np.log(tr.l2), 1)[0]
    assert rate == pytest.approx(0.5 * (np.pi / L) ** 2, rel=1e-2)


def test_temporal_order(gm_cubic):
    L, N = 2.0, 40
    x = cell_centers(L, N)
    u0, v0 = 1 + 0.2 * np.cos(np.pi * x / L), 1 + 0.1 * np.cos(2 * np.pi * x / L)

    def run(dt):
        u, v = u0, v0
        for _ in range(int(round(0.5 / dt))):
            u, v = step_imex((u, v), gm_cubic, dt, L=L)
        return np.concatenate([u, v])

    ref = run(1e-4 / 4)
    errs = [np.max(np.abs(run(dt) - ref)) for dt in (1e-2, 5e-3, 2.5e-3)]
    orders = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(orders >= 0.9)


def test_nonnegativity_preserved(gray_scott, rng):
    N = 64
    u, v = rng.uniform(0, 1, N), rng.uniform(0, 1, N)
    tr = integrate_system(gray_scott, u, v, 4.0, 5.0, 0.01, snapshot_every=50)
    for _, us, vs in tr.snapshots:
        assert us.min() >= -1e-12 and vs.min() >= -1e-12
        assert np.all(np.isfinite(us)) and np.all(np.isfinite(vs))


def test_zero_perturbation_is_flat(gs_profile):
    tr = growth_experiment(gs_profile, amplitude=0.0, T=5.0)
    assert np.max(tr.l2) < 1e-10 * 5.0


def test_growth_rate_matches_spectrum(gs_profile):
    pred = compute_spectrum(gs_profile).dominant
    tr = growth_experiment(gs_profile, amplitude=1e-4, predicted=pred)
    assert tr.rate > 0 and tr.r2 >= 0.995
    assert abs(tr.rate - pred) <= 0.25 * pred


def test_amplitude_doubling(gs_profile):
    a = growth_experiment(gs_profile, amplitude=1e-5, T=20.0, seed=3)
    b = growth_experiment(gs_profile, amplitude=2e-5, T=20.0, seed=3)
    i = np.searchsorted(a.times, 15.0)
    assert b.l2[i] / a.l2[i] == pytest.approx(2.0, rel=0.2)


def test_growth_rejects_large_amplitude(gs_profile):
    with pytest.raises(ValueError):
        growth_experiment(gs_profile, amplitude=1.0)


def test_saturation_is_reported(gs_profile):
    with pytest.raises(SaturationError):
        growth_experiment(gs_profile, amplitude=1e-4, saturation=1e-5)


def test_fit_growth_recovers_rate():
    t = np.linspace(0, 10, 101)
    y = 1e-6 * np.exp(0.3 * t)
    y[80:] = y[79]  # saturation plateau
    rate, window, r2 = fit_growth(t, y, ceiling=y[79])
    assert rate == pytest.approx(0.3, rel=1e-6) and window[1] <= t[80]
    assert fit_growth(t[:5], y[:5]) is None


def test_decay_rate_matches_jacobian():
    gm = builtin("gierer_meinhardt")
    s = classify_state(gm, 1.0, 1.0)
    J = np.array([[s.fu, s.fv], [s.gu, s.gv]])
    want = np.max(np.linalg.eigvals(J).real)
    assert want < 0
    tr = decay_experiment(gm, 1.0, 1.0, T=10.0, dt=1e-3)
    assert tr.rate == pytest.approx(want, rel=0.1)


def test_taylor_affine_model_vanishes():
    m = expression_model("2*u - v + 1", "u + 3*v - 2")
    from rdode.profile1d import profile_from_values
    x = cell_centers(1.0, 40)
    p = profile_from_values(m, x, np.ones(40), np.ones(40), 1.0)
    assert taylor_remainder_check(p, samples=20, amplitude=0.5) < 1e-13


def test_taylor_ratio_bounded_and_non_increasing(gs_profile):
    r = [taylor_remainder_check(gs_profile, amplitude=a, samples=100) for a in (4e-2, 2e-2, 1e-2)]
    assert all(np.isfinite(r)) and max(r) < 1e3
    assert r[0] >= r[1] >= r[2]


def test_taylor_remainder_is_quadratic(gs_profile):
    # ||N(w)||_2 / ||w||_2 = ratio * ||w||_inf, so it halves with the amplitude
    amps = np.array([4e-2, 2e-2, 1e-2])
    rel = np.array([a * taylor_remainder_check(gs_profile, amplitude=a, samples=20) for a in amps])
    assert np.allclose(rel[:-1] / rel[1:], 2.0, rtol=0.05)


def test_three_species_consistent_v_stays_near_manifold():
    m = builtin("carcinogenesis3", {**builtin("carcinogenesis3").params, "eps": 1e-3})
    x = cell_centers(1.0, 50)
    u, w = default_initial_data(x, 1.0)
    v = m.quasi_steady_v(u, w)
    for _ in range(10):
        u, v, w = step_three_species((u, v, w), m, 1e-3, 1.0)
    assert np.max(np.abs(v - m.quasi_steady_v(u, w))) < 1e-2


@pytest.fixture(scope="module")
def small_reduction():
    p = dict(builtin("carcinogenesis3").params)
    return reduction_experiment(p, [0.1, 0.05, 0.025], T=0.5, N=40, dt=1e-3)


def test_reduction_properties(small_reduction):
    r = small_reduction
    assert np.all(r.err_v0 == 0.0)
    assert r.u_bound_ok
    for e in (r.err_u, r.err_w, r.err_v_int):
        assert np.all(np.isfinite(e)) and np.all(np.diff(e) < 0)
    for s in (r.sup_u, r.sup_v, r.sup_w):
        assert s.max() / s.min() < 2
    assert 0.7 < r.slope_u < 1.3


def test_reduction_rejects_bad_eps():
    p = dict(builtin("carcinogenesis3").params)
    with pytest.raises(ValueError):
        reduction_experiment(p, [0.05, 0.1], T=0.1, N=10)
    with pytest.raises(ValueError):
        reduction_experiment(p, [5.0], T=0.1, N=10)


def test_reduction_threads_match_serial():
    p = dict(builtin("carcinogenesis3").params)
    a = reduction_experiment(p, [0.1, 0.05], T=0.1, N=20, dt=1e-3)
    b = reduction_experiment(p, [0.1, 0.05], T=0.1, N=20, dt=1e-3, threads=2)
    assert np.array_equal(a.err_u, b.err_u) and np.array_equal(a.err_v_int, b.err_v_int)


def test_csv_round_trips(gs_profile, small_reduction, tmp_path):
    tr = growth_experiment(gs_profile, amplitude=1e-4, T=10.0)
    back = load_trace_csv(write_trace_csv(tr, tmp_path / "t.csv"))
    assert np.array_equal(back.times, tr.times) and np.array_equal(back.l2, tr.l2)
    red = load_reduction_csv(write_reduction_csv(small_reduction, tmp_path / "r.csv"))
    assert np.array_equal(red["err_u"], small_reduction.err_u)
    assert red["slope_u"] == small_reduction.slope_u
    single = reduction_experiment(dict(builtin("carcinogenesis3").params), [0.1], T=0.1, N=10)
    path = write_reduction_csv(single, tmp_path / "one.csv")
    assert "slope_u=n/a" in path.read_text() and math.isnan(load_reduction_csv(path)["slope_u"])
    snap = write_snapshot_csv(gs_profile.x, {"u": gs_profile.U, "v": gs_profile.V}, tmp_path / "s.csv")
    assert snap.read_text().splitlines()[0] == "x,u,v"
