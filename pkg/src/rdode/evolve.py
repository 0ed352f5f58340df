"""IMEX time integration and the experiments built on it.

Two-species step (reaction explicit with Heun averaging, diffusion backward
Euler, all on the cell-centred Neumann grid)::

    u1 = u + dt f(u, v)               (I - dt D Lap) v1 = v + dt g(u, v)
    u' = u + dt/2 (f0 + f1)           (I - dt D Lap) v' = v + dt/2 (g0 + g1)

with ``f1, g1`` evaluated at ``(u1, v1)``. A discrete stationary profile is an
exact fixed point. The three-species step advances the fast variable with
the exact integrating factor ``exp(-(d_b + d) dt / eps)``, so it has no
stability restriction in ``eps`` and collapses to the two-species step for
the reduced model as ``eps -> 0``.
"""
from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import trapezoid

from .grid import cell_centers, integrate, solve_shifted
from .kinetics import Carcinogenesis3, DomainError, KineticModel, builtin

log = logging.getLogger(__name__)

__all__ = [
    "StepError",
    "SaturationError",
    "EvolutionTrace",
    "ReductionReport",
    "step_imex",
    "step_three_species",
    "integrate_system",
    "fit_growth",
    "growth_experiment",
    "decay_experiment",
    "taylor_remainder_check",
    "reduction_experiment",
    "write_trace_csv",
    "load_trace_csv",
    "write_reduction_csv",
    "load_reduction_csv",
    "write_snapshot_csv",
    "DT_FLOOR",
]

DT_FLOOR = 1e-12
R2_MIN = 0.995


class StepError(RuntimeError):
    """A step could not be completed even at the smallest allowed time step."""


class SaturationError(RuntimeError):
    """The deviation left the linear regime before a growth window was found."""


def _l2(a, L):
    return math.sqrt(integrate(np.square(a), L))


# --- two species ------------------------------------------------------------------------

def step_imex(state, model: KineticModel, dt: float, D: float | None = None,
              L: float = 1.0, N: int | None = None):
    """Advance ``(u, v)`` by one IMEX step of size dt."""
    u, v = state
    if N is not None and u.size != N:
        raise ValueError("state size does not match N")
    D = model.diffusion if D is None else D
    f0, g0 = model.f(u, v), model.g(u, v)
    u1 = u + dt * f0
    v1 = solve_shifted(v + dt * g0, dt * D, L)
    f1, g1 = model.f(u1, v1), model.g(u1, v1)
    un = u + 0.5 * dt * (f0 + f1)
    vn = solve_shifted(v + 0.5 * dt * (g0 + g1), dt * D, L)
    return un, vn


def _safe_step(stepper, state, dt):
    """One step of size dt, subdivided by halving if it produces NaN or leaves the domain."""
    try:
        out = stepper(state, dt)
        if all(np.all(np.isfinite(a)) for a in out):
            return out
    except DomainError:
        pass
    half = 0.5 * dt
    if half < DT_FLOOR:
        raise StepError(f"step rejected at dt={dt:g}")
    log.debug("halving dt to %g", half)
    return _safe_step(stepper, _safe_step(stepper, state, half), half)


@dataclass
class EvolutionTrace:
    """Time series from an integration.

    ``sup`` and ``l2`` are norms of the deviation ``(u - U, v - V)`` from the
    reference, combined as ``max`` of the two sup norms and the root of the
    summed squared L2 norms.
    """

    times: np.ndarray
    sup: np.ndarray
    l2: np.ndarray
    sup_u: np.ndarray
    sup_v: np.ndarray
    snapshots: list = field(default_factory=list, repr=False)
    x: np.ndarray | None = field(default=None, repr=False)
    rate: float = math.nan
    window: tuple[float, float] | None = None
    r2: float = math.nan
    predicted: float = math.nan
    note: str = ""


def integrate_system(model: KineticModel, u0, v0, L: float, T: float, dt: float,
                     reference=None, record_every: int = 1, snapshot_every: int = 0,
                     stop_sup: float | None = None) -> EvolutionTrace:
    """Integrate from ``(u0, v0)`` to time T, recording deviation norms.

    ``stop_sup`` ends the run once the sup-norm deviation exceeds it.
    """
    u, v = np.array(u0, dtype=float), np.array(v0, dtype=float)
    Ur, Vr = (np.zeros_like(u), np.zeros_like(v)) if reference is None else reference
    nsteps = int(round(T / dt))
    if nsteps < 1 or not math.isclose(nsteps * dt, T, rel_tol=1e-9):
        raise ValueError("T must be a positive multiple of dt")
    stepper = lambda s, h: step_imex(s, model, h, L=L)
    rows, snaps = [], []

    def record(t):
        du, dv = u - Ur, v - Vr
        su, sv = float(np.max(np.abs(du))), float(np.max(np.abs(dv)))
        rows.append((t, max(su, sv), math.sqrt(_l2(du, L) ** 2 + _l2(dv, L) ** 2), su, sv))

    record(0.0)
    if snapshot_every:
        snaps.append((0.0, u.copy(), v.copy()))
    for n in range(1, nsteps + 1):
        u, v = _safe_step(stepper, (u, v), dt)
        t = n * dt
        if n % record_every == 0 or n == nsteps:
            record(t)
        if snapshot_every and (n % snapshot_every == 0 or n == nsteps):
            snaps.append((t, u.copy(), v.copy()))
        if stop_sup is not None and rows[-1][1] > stop_sup:
            if rows[-1][0] != t:
                record(t)
            break
    arr = np.array(rows)
    return EvolutionTrace(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], snaps,
                          cell_centers(L, u.size))


def fit_growth(times, norms, ceiling: float | None = None, r2_min: float = R2_MIN,
               min_points: int = 10):
    """Longest window on which ``log(norm)`` is linear in t with R^2 >= r2_min.

    Only samples below ``ceiling`` are used. Returns ``(rate, (t0, t1), r2)``
    or None when no window qualifies.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(norms, dtype=float)
    ok = (y > 0) & np.isfinite(y)
    if ceiling is not None:
        below = y < ceiling
        stop = np.flatnonzero(~below)
        if stop.size:
            ok[stop[0]:] = False
    t, y = t[ok], np.log(y[ok])
    n = t.size
    if n < min_points:
        return None
    # candidate starts on a coarse lattice, longest first; ends at the last usable sample
    best = None
    starts = np.unique(np.linspace(0, n - min_points, min(60, n - min_points + 1)).astype(int))
    ends = np.unique(np.linspace(min_points - 1, n - 1, min(60, n - min_points + 1)).astype(int))
    for i in starts:
        for j in ends[::-1]:
            if j - i + 1 < min_points:
                break
            if best is not None and (t[j] - t[i]) <= best[1][1] - best[1][0]:
                break
            tt, yy = t[i:j + 1], y[i:j + 1]
            slope, icpt = np.polyfit(tt, yy, 1)
            ss = np.sum((yy - yy.mean()) ** 2)
            r2 = 1.0 - np.sum((yy - (slope * tt + icpt)) ** 2) / ss if ss > 0 else 1.0
            if r2 >= r2_min:
                best = (float(slope), (float(tt[0]), float(tt[-1])), float(r2))
                break
    return best


def _perturbation(x, L, probe_mode, rng):
    if probe_mode == "cosine":
        return np.cos(np.pi * x / L), np.cos(np.pi * x / L)
    if probe_mode == "random":
        return rng.uniform(-1, 1, x.size), rng.uniform(-1, 1, x.size)
    if probe_mode == "homogeneous":
        return np.ones_like(x), np.ones_like(x)
    raise ValueError(f"unknown probe mode {probe_mode!r}")


def growth_experiment(profile, model: KineticModel | None = None, amplitude: float = 1e-4,
                      T: float = 80.0, probe_mode: str = "random", dt: float = 0.05,
                      seed: int = 0, predicted: float | None = None,
                      saturation: float = 1e-2) -> EvolutionTrace:
    """Perturb a stationary profile and fit the exponential growth of ``||dev||_2``.

    The fit uses samples with sup-norm deviation below
    ``saturation * ||(U, V)||_inf``. ``predicted`` (e.g. the dominant rate
    from the spectrum module) is stored alongside for comparison.
    Raises :class:`SaturationError` when no linear window exists.
    """
    model = profile.model if model is None else model
    scale = max(np.max(np.abs(profile.U)), np.max(np.abs(profile.V)))
    if amplitude > 1e-3 * scale:
        raise ValueError("amplitude must not exceed 1e-3 of the profile sup norm")
    rng = np.random.default_rng(seed)
    pu, pv = _perturbation(profile.x, profile.L, probe_mode, rng)
    u0 = profile.U + amplitude * pu
    v0 = profile.V + amplitude * pv
    if model.nonnegative:
        u0, v0 = np.maximum(u0, 0.0), np.maximum(v0, 0.0)
    ceiling = saturation * scale
    tr = integrate_system(model, u0, v0, profile.L, T, dt, reference=(profile.U, profile.V),
                          stop_sup=2 * ceiling)
    tr.predicted = math.nan if predicted is None else float(predicted)
    if amplitude == 0:
        tr.rate, tr.note = 0.0, "zero perturbation"
        return tr
    keep = tr.sup < ceiling
    fit = fit_growth(tr.times[keep], tr.l2[keep])
    if fit is None:
        raise SaturationError("nonlinear regime too early; rerun with a smaller amplitude")
    tr.rate, tr.window, tr.r2 = fit
    return tr


def decay_experiment(model: KineticModel, ubar: float, vbar: float, amplitude: float = 1e-3,
                     T: float = 10.0, dt: float = 1e-3, L: float = 1.0, N: int = 16,
                     floor: float = 1e-11) -> EvolutionTrace:
    """Homogeneously perturb a constant state and fit the late-time decay rate.

    The fit is taken over the second half of the samples above ``floor`` so
    the slowest eigen-direction dominates.
    """
    x = cell_centers(L, N)
    U, V = np.full(N, ubar), np.full(N, vbar)
    tr = integrate_system(model, U + amplitude, V + amplitude, L, T, dt, reference=(U, V))
    ok = tr.l2 > floor
    t, y = tr.times[ok], tr.l2[ok]
    half = t.size // 2
    slope = np.polyfit(t[half:], np.log(y[half:]), 1)[0]
    tr.rate, tr.window = float(slope), (float(t[half]), float(t[-1]))
    tr.x = x
    return tr


def taylor_remainder_check(profile, model: KineticModel | None = None, samples: int = 100,
                           amplitude: float = 1e-2, seed: int = 0, return_all: bool = False):
    """Max over sampled w of ``||N(w)||_2 / (||w||_inf ||w||_2)``.

    ``N(w) = F(P + w) - F(P) - DF(P) w`` is the reaction remainder about the
    profile P (diffusion is linear and drops out). Directions come in
    antithetic pairs ``(w, -w)`` from a seeded generator and are scaled to
    ``||w||_inf = amplitude``, so equal seeds probe the same symmetric set of
    directions at every amplitude.
    """
    model = profile.model if model is None else model
    rng = np.random.default_rng(seed)
    U, V, L = profile.U, profile.V, profile.L
    f0, g0 = model.f(U, V), model.g(U, V)
    fu, fv, gu, gv = model.partials(U, V)
    ratios = np.empty(samples)
    for i in range(samples):
        if i % 2 == 0:
            du, dv = rng.uniform(-1, 1, U.size), rng.uniform(-1, 1, U.size)
            s = amplitude / max(np.max(np.abs(du)), np.max(np.abs(dv)))
            du, dv = s * du, s * dv
            wu, wv = du, dv
        else:
            wu, wv = -du, -dv
        if model.nonnegative:
            # keep the perturbed state admissible
            wu = np.maximum(wu, -U)
            wv = np.maximum(wv, -V)
        Nu = model.f(U + wu, V + wv) - f0 - (fu * wu + fv * wv)
        Nv = model.g(U + wu, V + wv) - g0 - (gu * wu + gv * wv)
        nN = math.sqrt(_l2(Nu, L) ** 2 + _l2(Nv, L) ** 2)
        winf = max(np.max(np.abs(wu)), np.max(np.abs(wv)))
        w2 = math.sqrt(_l2(wu, L) ** 2 + _l2(wv, L) ** 2)
        ratios[i] = nN / (winf * w2) if winf > 0 else 0.0
    return ratios if return_all else float(np.max(ratios))


# --- three species and the reduction experiment ------------------------------------------------

def step_three_species(state, model: Carcinogenesis3, dt: float, L: float):
    """One step of the eps-system; v uses the exact integrating factor."""
    u, v, w = state
    p = model.params
    S = p["d_b"] + p["d"]
    E = math.exp(-S * dt / model.eps)
    D = model.diffusion

    fu0 = model.rhs_u(u, v, w)
    fw0 = model.rhs_w(u, v, w)
    vq0 = model.quasi_steady_v(u, w)
    u1 = u + dt * fu0
    w1 = solve_shifted(w + dt * fw0, dt * D, L)
    v1 = v * E + vq0 * (1.0 - E)

    fu1 = model.rhs_u(u1, v1, w1)
    fw1 = model.rhs_w(u1, v1, w1)
    vq1 = model.quasi_steady_v(u1, w1)
    un = u + 0.5 * dt * (fu0 + fu1)
    wn = solve_shifted(w + 0.5 * dt * (fw0 + fw1), dt * D, L)
    vn = v * E + (1.0 - E) * 0.5 * (vq0 + vq1)
    return un, vn, wn


@dataclass
class ReductionReport:
    eps: np.ndarray
    err_u: np.ndarray
    err_w: np.ndarray
    err_v_int: np.ndarray
    err_v_int_layer: np.ndarray
    err_v0: np.ndarray
    slope_u: float
    slope_w: float
    slope_v: float
    slope_v_layer: float
    sup_u: np.ndarray
    sup_v: np.ndarray
    sup_w: np.ndarray
    u_bound_ok: bool
    T: float
    dt: float
    N: int


def _slope(eps, err):
    eps, err = np.asarray(eps), np.asarray(err)
    if eps.size < 2 or np.any(err <= 0):
        return math.nan
    return float(np.polyfit(np.log(eps), np.log(err), 1)[0])


def default_initial_data(x, L):
    return 1.0 + 0.5 * np.cos(np.pi * x / L), 1.0 + 0.3 * np.cos(2 * np.pi * x / L)


def reduction_experiment(params3, eps_list: Sequence[float], T: float = 2.0, N: int = 200,
                         dt: float = 1e-3, L: float = 1.0, u0=None, w0=None,
                         v0: str | np.ndarray = "consistent",
                         layer_factor: float = 10.0, threads: int = 1) -> ReductionReport:
    """Compare the eps-system with its quasi-steady reduction for each eps.

    ``v0 = "consistent"`` starts v on the slow manifold ``u0^2 w0 / (d_b + d)``;
    an array starts it arbitrarily and the v error then has an initial layer,
    which is why ``err_v_int_layer`` integrates only over ``t >= layer_factor * eps``.
    Runs for different eps are independent and may use ``threads`` workers.
    """
    eps_arr = np.asarray(eps_list, dtype=float)
    if eps_arr.size > 1 and np.any(np.diff(eps_arr) >= 0):
        raise ValueError("eps list must be strictly decreasing")
    base = {k: float(v) for k, v in dict(params3).items() if k != "eps"}
    nsteps = int(round(T / dt))
    if not math.isclose(nsteps * dt, T, rel_tol=1e-9):
        raise ValueError("T must be a multiple of dt")
    if isinstance(v0, str) and v0 != "consistent":
        raise ValueError("v0 must be 'consistent' or an array")
    x = cell_centers(L, N)
    du0, dw0 = default_initial_data(x, L)
    u0 = du0 if u0 is None else np.asarray(u0, dtype=float)
    w0 = dw0 if w0 is None else np.asarray(w0, dtype=float)

    m0 = builtin("carcinogenesis3", {**base, "eps": float(eps_arr[0])})
    red = m0.reduced()
    if np.any(eps_arr <= 0) or np.any(eps_arr >= m0.eps_max):
        raise ValueError(f"eps must lie in (0, {m0.eps_max:g})")

    # reduced trajectory once, on the common time grid
    ur, wr = u0.copy(), w0.copy()
    traj = [(ur, wr)]
    stepper = lambda s, h: step_imex(s, red, h, L=L)
    for _ in range(nsteps):
        ur, wr = _safe_step(stepper, (ur, wr), dt)
        traj.append((ur, wr))

    a_dc = base["a"] - base["d_c"]
    u0max = float(np.max(np.abs(u0)))

    def run(eps):
        model = builtin("carcinogenesis3", {**base, "eps": float(eps)})
        if dt > eps / 4:
            log.info("dt=%g exceeds eps/4 for eps=%g; the exponential v-substep keeps it stable",
                     dt, eps)
        u, w = u0.copy(), w0.copy()
        v = model.quasi_steady_v(u, w) if isinstance(v0, str) else np.asarray(v0, dtype=float).copy()
        eu = ew = su = sv = sw = 0.0
        bound_ok = True
        ev_t = np.empty(nsteps + 1)
        for n in range(nsteps + 1):
            if n:
                u, v, w = step_three_species((u, v, w), model, dt, L)
            uR, wR = traj[n]
            eu = max(eu, float(np.max(np.abs(u - uR))))
            ew = max(ew, float(np.max(np.abs(w - wR))))
            ev_t[n] = float(np.max(np.abs(v - model.quasi_steady_v(uR, wR))))
            umax = float(np.max(np.abs(u)))
            su, sv, sw = max(su, umax), max(sv, float(np.max(np.abs(v)))), max(sw, float(np.max(np.abs(w))))
            if umax > u0max * math.exp(a_dc * n * dt) * (1 + 1e-10) + 1e-12:
                bound_ok = False
        tt = np.arange(nsteps + 1) * dt
        late = tt >= layer_factor * eps
        vl = float(trapezoid(ev_t[late], tt[late])) if late.sum() > 1 else math.nan
        return dict(u=eu, w=ew, v=float(trapezoid(ev_t, tt)), vl=vl, v0=float(ev_t[0]),
                    su=su, sv=sv, sw=sw, ok=bound_ok)

    if threads > 1 and eps_arr.size > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, eps_arr))
    else:
        results = [run(e) for e in eps_arr]
    out = {k: [r[k] for r in results] for k in ("u", "w", "v", "vl", "v0", "su", "sv", "sw")}
    bound_ok = all(r["ok"] for r in results)
    arr = {k: np.array(v) for k, v in out.items()}
    return ReductionReport(eps_arr, arr["u"], arr["w"], arr["v"], arr["vl"], arr["v0"],
                           _slope(eps_arr, arr["u"]), _slope(eps_arr, arr["w"]),
                           _slope(eps_arr, arr["v"]), _slope(eps_arr, arr["vl"]),
                           arr["su"], arr["sv"], arr["sw"], bound_ok, T, dt, N)


# --- CSV ---------------------------------------------------------------------------------

_TRACE_COLUMNS = ["t", "dev_sup", "dev_l2", "dev_sup_u", "dev_sup_v"]


def _fmt(x):
    return "n/a" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def write_trace_csv(trace: EvolutionTrace, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(_TRACE_COLUMNS)
        for row in zip(trace.times, trace.sup, trace.l2, trace.sup_u, trace.sup_v):
            wr.writerow([repr(float(a)) for a in row])
        win = "n/a" if trace.window is None else f"{trace.window[0]!r},{trace.window[1]!r}"
        fh.write(f"# rate={_fmt(trace.rate)}\n# predicted={_fmt(trace.predicted)}\n"
                 f"# window={win}\n# r2={_fmt(trace.r2)}\n")
    return path


def _read_with_footer(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    meta = dict(ln[2:].split("=", 1) for ln in lines if ln.startswith("# ") and "=" in ln)
    rows = list(csv.reader([ln for ln in lines if not ln.startswith("#")]))
    return rows[0], [r for r in rows[1:] if r], meta


def _parse(x):
    return math.nan if x == "n/a" else float(x)


def load_trace_csv(path: str | Path) -> EvolutionTrace:
    header, rows, meta = _read_with_footer(path)
    if header != _TRACE_COLUMNS:
        raise ValueError(f"{path}: unexpected header {header}")
    a = np.array(rows, dtype=float).reshape(-1, len(_TRACE_COLUMNS))
    win = None if meta.get("window", "n/a") == "n/a" else tuple(map(float, meta["window"].split(",")))
    return EvolutionTrace(a[:, 0], a[:, 1], a[:, 2], a[:, 3], a[:, 4], window=win,
                          rate=_parse(meta.get("rate", "n/a")),
                          predicted=_parse(meta.get("predicted", "n/a")),
                          r2=_parse(meta.get("r2", "n/a")))


_RED_COLUMNS = ["eps", "err_u", "err_w", "err_v_int", "err_v_int_layer"]


def write_reduction_csv(report: ReductionReport, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(_RED_COLUMNS)
        for row in zip(report.eps, report.err_u, report.err_w, report.err_v_int,
                       report.err_v_int_layer):
            wr.writerow([_fmt(a) for a in row])
        fh.write(f"# slope_u={_fmt(report.slope_u)}\n# slope_w={_fmt(report.slope_w)}\n"
                 f"# slope_v={_fmt(report.slope_v)}\n# slope_v_layer={_fmt(report.slope_v_layer)}\n"
                 f"# T={report.T!r}\n# dt={report.dt!r}\n# N={report.N}\n")
    return path


def load_reduction_csv(path: str | Path) -> dict:
    """Columns as arrays plus footer slopes (NaN for ``n/a``)."""
    header, rows, meta = _read_with_footer(path)
    if header != _RED_COLUMNS:
        raise ValueError(f"{path}: unexpected header {header}")
    cols = {h: np.array([_parse(r[i]) for r in rows]) for i, h in enumerate(header)}
    for key in ("slope_u", "slope_w", "slope_v", "slope_v_layer"):
        cols[key] = _parse(meta[key])
    return cols


def write_snapshot_csv(x, fields: dict, path: str | Path) -> Path:
    path = Path(path)
    names = list(fields)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["x", *names])
        for i in range(len(x)):
            wr.writerow([repr(float(x[i]))] + [repr(float(fields[n][i])) for n in names])
    return path
