"""Constant steady states: root finding, kinetic/DDI classification, touch value.

Also holds the closed-form equilibria of the two-species carcinogenesis model
together with the stability verdict for them, and a vectorised sweep that
checks that verdict against plain 2x2 eigenvalue computations.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .kinetics import Carcinogenesis2, DomainError, KineticModel, ParameterError

log = logging.getLogger(__name__)

__all__ = [
    "ConstantState",
    "CarcinogenesisEquilibria",
    "classify_state",
    "classify_kinetic",
    "classify_ddi",
    "touch_inequality",
    "find_constant_states",
    "carcinogenesis_equilibria",
    "carcinogenesis_sweep",
    "SweepResult",
    "write_states_csv",
    "load_states_csv",
    "ROOT_TOL",
    "DEDUP_RADIUS",
    "MARGINAL_TOL",
]

ROOT_TOL = 1e-10
DEDUP_RADIUS = 1e-8
MARGINAL_TOL = 1e-8

STABLE, UNSTABLE, MARGINAL = "stable", "unstable", "marginal"


@dataclass(frozen=True)
class ConstantState:
    ubar: float
    vbar: float
    jac: np.ndarray = field(repr=False)
    trace: float
    det: float
    nondegenerate: tuple[bool, bool, bool]
    kinetic_class: str
    ddi: bool
    touch_value: float
    residual: float = 0.0

    @property
    def fu(self) -> float:
        return float(self.jac[0, 0])

    @property
    def fv(self) -> float:
        return float(self.jac[0, 1])

    @property
    def gu(self) -> float:
        return float(self.jac[1, 0])

    @property
    def gv(self) -> float:
        return float(self.jac[1, 1])

    @property
    def is_nondegenerate(self) -> bool:
        return all(self.nondegenerate)


def _as_jac(obj) -> np.ndarray:
    if isinstance(obj, ConstantState):
        return obj.jac
    jac = np.asarray(obj, dtype=float)
    if jac.shape != (2, 2):
        raise ValueError("expected a ConstantState or a 2x2 Jacobian")
    return jac


def classify_kinetic(state, tol: float = MARGINAL_TOL) -> str:
    """Kinetic (space-homogeneous) stability from trace and determinant."""
    jac = _as_jac(state)
    tr = jac[0, 0] + jac[1, 1]
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    if tr > tol or det < -tol:
        return UNSTABLE
    if tr < -tol and det > tol:
        return STABLE
    return MARGINAL


def classify_ddi(state, tol: float = MARGINAL_TOL) -> bool:
    """f_u > 0, trace < 0 and det > 0: kinetically stable yet destabilised by diffusion."""
    jac = _as_jac(state)
    tr = jac[0, 0] + jac[1, 1]
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    return bool(jac[0, 0] > tol and tr < -tol and det > tol)


def touch_inequality(state, tol: float = MARGINAL_TOL) -> float:
    """Return det J / f_u, i.e. h'(vbar) of the reduced scalar problem.

    NaN flags a degenerate state (f_u = 0) for which the value is undefined.
    """
    jac = _as_jac(state)
    fu = jac[0, 0]
    if abs(fu) <= tol:
        return math.nan
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    return float(det / fu)


def classify_state(model: KineticModel, u: float, v: float) -> ConstantState:
    jac = model.jacobian(u, v)
    tr = float(jac[0, 0] + jac[1, 1])
    det = float(jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0])
    nondeg = (abs(tr) > MARGINAL_TOL, abs(det) > MARGINAL_TOL, abs(jac[0, 0]) > MARGINAL_TOL)
    res = max(abs(float(model.f(u, v))), abs(float(model.g(u, v))))
    return ConstantState(float(u), float(v), jac, tr, det, nondeg, classify_kinetic(jac),
                         classify_ddi(jac), touch_inequality(jac), res)


def _newton(model, x0, box, maxiter=60):
    lo = np.array([box[0], box[2]])
    hi = np.array([box[1], box[3]])
    x = np.array(x0, dtype=float)

    def resid(z):
        return np.array([model.f(z[0], z[1]), model.g(z[0], z[1])], dtype=float)

    F = resid(x)
    for _ in range(maxiter):
        if np.max(np.abs(F)) <= ROOT_TOL:
            return x, F
        J = model.jacobian(x[0], x[1])
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return None, F
        if not np.all(np.isfinite(dx)):
            return None, F
        alpha, norm0 = 1.0, np.linalg.norm(F)
        while alpha > 1e-8:
            trial = np.clip(x + alpha * dx, lo, hi)
            try:
                Ft = resid(trial)
            except DomainError:
                Ft = None
            if Ft is not None and np.all(np.isfinite(Ft)) and np.linalg.norm(Ft) < norm0:
                break
            alpha *= 0.5
        else:
            return None, F
        if np.allclose(trial, x, rtol=0, atol=1e-16):
            break
        x, F = trial, Ft
    return (x, F) if np.max(np.abs(F)) <= ROOT_TOL else (None, F)


def find_constant_states(model: KineticModel, search_box: Sequence[float], grid: int = 64,
                         diagnostics: list | None = None) -> list[ConstantState]:
    """Locate all roots of (f, g) = 0 in ``search_box = (umin, umax, vmin, vmax)``.

    Newton is started from the centre and the corners of every grid cell on
    which both f and g change sign (or vanish) at the corners. Failed starts are logged and, when
    ``diagnostics`` is a list, appended to it.
    """
    umin, umax, vmin, vmax = map(float, search_box)
    if not (umax > umin and vmax > vmin):
        raise ValueError("search box must have positive extent")
    us = np.linspace(umin, umax, grid + 1)
    vs = np.linspace(vmin, vmax, grid + 1)
    UU, VV = np.meshgrid(us, vs, indexing="ij")
    F = model.f(UU, VV)
    G = model.g(UU, VV)

    def changes(Z):
        corners = np.stack([Z[:-1, :-1], Z[1:, :-1], Z[:-1, 1:], Z[1:, 1:]])
        return (corners.min(axis=0) <= 0) & (corners.max(axis=0) >= 0)

    cells = np.argwhere(changes(F) & changes(G))
    # centre first, then the corners: nearby roots can share a basin of attraction
    starts = []
    for i, j in cells:
        starts.append((0.5 * (us[i] + us[i + 1]), 0.5 * (vs[j] + vs[j + 1])))
        starts += [(us[i + a], vs[j + b]) for a in (0, 1) for b in (0, 1)]
    starts = list(dict.fromkeys(starts))
    roots: list[np.ndarray] = []
    for start in starts:
        x, Fx = _newton(model, start, (umin, umax, vmin, vmax))
        if x is None:
            log.debug("Newton did not converge from %s (|F|=%.3g)", start, np.max(np.abs(Fx)))
            if diagnostics is not None:
                diagnostics.append({"start": start, "residual": float(np.max(np.abs(Fx)))})
            continue
        if all(np.linalg.norm(x - r) > DEDUP_RADIUS for r in roots):
            roots.append(x)
    roots.sort(key=lambda r: (r[0], r[1]))
    return [classify_state(model, r[0], r[1]) for r in roots]


# --- carcinogenesis closed forms ----------------------------------------------

@dataclass(frozen=True)
class CarcinogenesisEquilibria:
    theta: float
    exists: bool
    w_minus: float
    w_plus: float
    u_minus: float
    u_plus: float
    beta: float
    fu: float
    minus_class: str
    plus_class: str
    exception_region: bool


_PKEYS = ("a", "d_c", "d_b", "d", "d_g", "kappa0")


def _closed_forms(a, dc, db, d, dg, k0):
    S = db + d
    theta = 4.0 * dg * (dc / (a - dc)) ** 2 * db * S
    exists = k0**2 > theta
    disc = np.sqrt(np.where(exists, k0**2 - theta, np.nan))
    w_m = (k0 - disc) / (2.0 * dg)
    w_p = (k0 + disc) / (2.0 * dg)
    c = dc / (a - dc) * S
    fu = dc / a * (a - dc)
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = fu / (fu - dg)
        # the equality case of the last condition is the trace = 0 boundary
        exception = (fu - dg > 0) & (beta / 2.0 <= 1.0) & (k0**2 <= beta**2 * theta / (4.0 * (beta - 1.0)))
    return dict(theta=theta, exists=exists, w_minus=w_m, w_plus=w_p, u_minus=c / w_m,
                u_plus=c / w_p, beta=beta, fu=fu, exception=exception & exists)


def _params_tuple(params):
    if isinstance(params, KineticModel):
        params = params.params
    try:
        vals = [float(params[k]) for k in _PKEYS]
    except KeyError as exc:
        raise ParameterError(f"missing carcinogenesis parameter {exc}") from None
    if any(v <= 0 for v in vals):
        raise ParameterError("carcinogenesis rates must be positive")
    if vals[0] <= vals[1]:
        raise ParameterError("closed-form equilibria need a > d_c")
    return vals


def carcinogenesis_equilibria(params) -> CarcinogenesisEquilibria:
    """Positive constant states of the reduced carcinogenesis model and their stability.

    (u+, w+) is always a saddle; (u-, w-) is stable except in the region
    fu > d_g, beta <= 2, kappa0^2 <= beta^2 Theta / (4 (beta - 1)).
    """
    cf = _closed_forms(*_params_tuple(params))
    exists = bool(cf["exists"])
    exc = bool(cf["exception"])
    nan = math.nan
    return CarcinogenesisEquilibria(
        theta=float(cf["theta"]), exists=exists,
        w_minus=float(cf["w_minus"]) if exists else nan,
        w_plus=float(cf["w_plus"]) if exists else nan,
        u_minus=float(cf["u_minus"]) if exists else nan,
        u_plus=float(cf["u_plus"]) if exists else nan,
        beta=float(cf["beta"]), fu=float(cf["fu"]),
        minus_class=(UNSTABLE if exc else STABLE) if exists else "none",
        plus_class=UNSTABLE if exists else "none",
        exception_region=exc,
    )


@dataclass(frozen=True)
class SweepResult:
    n: int
    n_exist: int
    n_exception: int
    plus_agree: int
    minus_agree: int
    max_residual: float

    @property
    def agreement(self) -> float:
        return (self.plus_agree + self.minus_agree) / (2.0 * self.n_exist)


def sample_carcinogenesis_params(n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Random parameter sets with a > d_c and two positive steady states.

    A third of the draws is steered into the neighbourhood of the exception
    region so that both verdicts for (u-, w-) are exercised.
    """
    lu = lambda lo, hi, size: np.exp(rng.uniform(np.log(lo), np.log(hi), size))
    dc = lu(0.05, 5.0, n)
    a = dc * (1.0 + lu(0.01, 20.0, n))
    db = lu(0.05, 5.0, n)
    d = lu(0.05, 5.0, n)
    fu = dc / a * (a - dc)
    dg = lu(0.05, 5.0, n)
    steer = rng.uniform(size=n) < 1.0 / 3.0
    # beta <= 2 needs d_g <= f_u / 2
    dg = np.where(steer, fu * rng.uniform(0.02, 0.5, n), dg)
    theta = 4.0 * dg * (dc / (a - dc)) ** 2 * db * (db + d)
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = fu / (fu - dg)
        upper = np.where(steer, beta**2 / (4.0 * (beta - 1.0)), 4.0)
    upper = np.clip(upper, 1.0 + 1e-6, 50.0)
    mult = np.where(steer, 1.0 + (upper - 1.0) * rng.uniform(0.0, 1.3, n), lu(1.0001, 50.0, n))
    mult = np.maximum(mult, 1.0 + 1e-6)
    k0 = np.sqrt(theta * mult)
    return dict(a=a, d_c=dc, d_b=db, d=d, d_g=dg, kappa0=k0)


def carcinogenesis_sweep(n: int = 10_000, seed: int = 0) -> SweepResult:
    """Compare the closed-form verdicts with eigenvalues of the model Jacobian."""
    rng = np.random.default_rng(seed)
    P = sample_carcinogenesis_params(n, rng)
    cf = _closed_forms(P["a"], P["d_c"], P["d_b"], P["d"], P["d_g"], P["kappa0"])
    ok = cf["exists"]
    P = {k: v[ok] for k, v in P.items()}
    cf = {k: (v[ok] if np.ndim(v) else v) for k, v in cf.items()}

    # one vectorised model whose parameters are arrays
    # array-valued parameters broadcast through the model formulas
    model = Carcinogenesis2("carcinogenesis2", {k: P[k] for k in _PKEYS})
    max_res = 0.0
    verdicts = []
    for u, w in ((cf["u_plus"], cf["w_plus"]), (cf["u_minus"], cf["w_minus"])):
        max_res = max(max_res, float(np.max(np.abs(model.f(u, w)))),
                      float(np.max(np.abs(model.g(u, w)))))
        fu, fv, gu, gv = model.partials(u, w)
        J = np.stack([np.stack([fu, fv], -1), np.stack([gu, gv], -1)], -2)
        growth = np.linalg.eigvals(J).real.max(axis=-1)
        verdicts.append(np.where(growth > 0, UNSTABLE, STABLE))
    plus_pred = np.full(ok.sum(), UNSTABLE)
    minus_pred = np.where(cf["exception"], UNSTABLE, STABLE)
    return SweepResult(n=n, n_exist=int(ok.sum()), n_exception=int(cf["exception"].sum()),
                       plus_agree=int(np.sum(verdicts[0] == plus_pred)),
                       minus_agree=int(np.sum(verdicts[1] == minus_pred)),
                       max_residual=max_res)


# --- CSV ----------------------------------------------------------------------

_COLUMNS = ["ubar", "vbar", "fu", "fv", "gu", "gv", "trace", "det", "kinetic_class", "ddi",
            "touch_value"]


def write_states_csv(states: Iterable[ConstantState], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(_COLUMNS)
        for s in states:
            wr.writerow([repr(s.ubar), repr(s.vbar), repr(s.fu), repr(s.fv), repr(s.gu),
                         repr(s.gv), repr(s.trace), repr(s.det), s.kinetic_class,
                         "true" if s.ddi else "false", repr(s.touch_value)])
    return path


def load_states_csv(path: str | Path) -> list[ConstantState]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames != _COLUMNS:
            raise ValueError(f"{path}: unexpected header {rd.fieldnames}")
        for row in rd:
            jac = np.array([[float(row["fu"]), float(row["fv"])],
                            [float(row["gu"]), float(row["gv"])]])
            tr, det = float(row["trace"]), float(row["det"])
            nondeg = (abs(tr) > MARGINAL_TOL, abs(det) > MARGINAL_TOL,
                      abs(jac[0, 0]) > MARGINAL_TOL)
            out.append(ConstantState(float(row["ubar"]), float(row["vbar"]), jac, tr, det, nondeg,
                                     row["kinetic_class"], row["ddi"] == "true",
                                     float(row["touch_value"])))
    return out
