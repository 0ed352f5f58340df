"""Non-constant stationary solutions on an interval [0, L].

A regular stationary solution satisfies ``f(U, V) = 0`` pointwise, so
``U = k(V)`` along a branch of the zero set of ``f``, and ``V`` solves the
scalar Neumann problem::

    D V'' + h(V) = 0,   V'(0) = V'(L) = 0,   h(V) = g(k(V), V).

Profiles are found by shooting on the initial value ``V(0)`` and then polished
as solutions of the finite-difference problem on a cell-centred grid, so that
they are exact fixed points of the discrete dynamics used elsewhere. Weak
profiles switch branch across prescribed points; ``V`` stays continuous and
only ``U`` jumps.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator
from scipy.linalg import solve_banded
from scipy.optimize import brentq

from .grid import apply_laplacian, cell_centers, integrate, laplacian_bands
from .kinetics import DomainError, KineticModel
from .steady import ConstantState, classify_state

log = logging.getLogger(__name__)

__all__ = [
    "FoldError",
    "ShootingError",
    "BVPError",
    "Branch",
    "ReducedProblem",
    "StationaryProfile",
    "ConditionReport",
    "TouchedState",
    "solve_branch",
    "zero_branch",
    "reduced_h",
    "reduced_h_prime",
    "shoot_stationary",
    "polish_profile",
    "profile_from_values",
    "assemble_weak_profile",
    "check_instability_conditions",
    "touched_states",
    "write_profile_csv",
    "load_profile_csv",
]

FOLD_TOL = 1e-8
CONST_TOL = 1e-6
SHOOT_TOL = 1e-10
N_SCAN = 512


class FoldError(RuntimeError):
    """Branch continuation reached a fold (f_u = 0) at its starting point."""


class ShootingError(RuntimeError):
    """The shooting scan could not be carried out."""


class BVPError(RuntimeError):
    """Damped Newton for the finite-difference boundary value problem diverged."""


# --- branches -------------------------------------------------------------------

def _newton_u(model, u, v, iters=8):
    for _ in range(iters):
        step = model.f(u, v) / model.partials(u, v)[0]
        u = u - step
        if np.all(np.abs(step) <= 1e-15 * (1.0 + np.abs(u))):
            break
    return u


@dataclass(frozen=True)
class Branch:
    """A branch ``U = k(V)`` of the zero set of f on ``[v_lo, v_hi]``.

    ``k`` interpolates a continuation table monotonically and then applies a
    few Newton steps in ``u``, so ``f(k(V), V)`` vanishes to roundoff.
    """

    model: KineticModel = field(repr=False)
    v_lo: float
    v_hi: float
    label: str = "branch"
    fold: float | None = None
    _table: tuple | None = field(default=None, repr=False, compare=False)
    _const: float | None = field(default=None, repr=False)
    _interp: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self._table is not None:
            object.__setattr__(self, "_interp", PchipInterpolator(*self._table))

    def _check(self, V):
        V = np.asarray(V, dtype=float)
        span = self.v_hi - self.v_lo
        if np.any(V < self.v_lo - 1e-12 * span) or np.any(V > self.v_hi + 1e-12 * span):
            raise ValueError(f"{self.label}: V outside branch interval [{self.v_lo}, {self.v_hi}]")
        return V

    def k(self, V):
        V = self._check(V)
        if self._const is not None:
            return np.full_like(V, self._const) if V.ndim else self._const * 1.0
        guess = self._interp(V)
        if V.ndim == 0:
            V, guess = float(V), float(guess)
        return _newton_u(self.model, guess, V)

    def dk(self, V):
        """k'(V) = -f_v / f_u along the branch."""
        V = self._check(V)
        U = self.k(V)
        fu, fv, _, _ = self.model.partials(U, V)
        return -fv / fu

    def __call__(self, V):
        return self.k(V)


def zero_branch(model: KineticModel, v_interval: Sequence[float]) -> Branch:
    """The branch U = 0, available when f(0, v) = 0 for all v."""
    if not model.has_zero_branch:
        raise ValueError(f"{model.name} has no zero branch")
    return Branch(model, float(v_interval[0]), float(v_interval[1]), "zero", None, None, 0.0)


def solve_branch(model: KineticModel, v_interval: Sequence[float], seed_u: float,
                 seed_v: float | None = None, n: int = 2001, label: str = "branch") -> Branch:
    """Tabulate U = k(V) by predictor-corrector continuation from ``(seed_u, seed_v)``.

    Continuation runs from ``seed_v`` (default: the middle of the interval)
    towards both ends. When f_u vanishes or the corrector fails, the branch is
    truncated there and the location is stored in ``Branch.fold``.
    """
    v_lo, v_hi = map(float, v_interval)
    if not v_hi > v_lo:
        raise ValueError("empty V-interval")
    v0 = 0.5 * (v_lo + v_hi) if seed_v is None else float(seed_v)
    u0 = float(seed_u)
    for _ in range(50):
        fu = model.partials(u0, v0)[0]
        if abs(fu) < FOLD_TOL:
            raise FoldError(f"f_u vanishes at the seed ({u0}, {v0})")
        step = model.f(u0, v0) / fu
        u0 -= step
        if abs(step) < 1e-14 * (1 + abs(u0)):
            break
    if abs(model.f(u0, v0)) > 1e-10:
        raise FoldError(f"no point of f = 0 found from seed u={seed_u} at V={v0}")

    grid = np.linspace(v_lo, v_hi, n)
    fold = None
    pieces = []
    for direction in (-1, 1):
        vs = grid[grid < v0][::-1] if direction < 0 else grid[grid > v0]
        vals, us = [], []
        u, v = u0, v0
        for vn in vs:
            fu, fv, _, _ = model.partials(u, v)
            un = u - fv / fu * (vn - v)
            ok = False
            for _ in range(30):
                try:
                    fun = model.partials(un, vn)[0]
                    res = model.f(un, vn)
                except DomainError:
                    break
                if abs(fun) < FOLD_TOL:
                    break
                un -= res / fun
                if abs(res) < 1e-13 * (1 + abs(un)):
                    ok = True
                    break
            if not ok or abs(model.partials(un, vn)[0]) < FOLD_TOL:
                # the fold lies between the last accepted point and vn
                fold = 0.5 * (v + vn)
                log.info("branch %s: fold near V=%g, truncated", label, fold)
                break
            u, v = un, vn
            vals.append(vn)
            us.append(un)
        pieces.append((vals, us))
    (vl, ul), (vr, ur) = pieces
    vt = np.array(vl[::-1] + [v0] + vr)
    ut = np.array(ul[::-1] + [u0] + ur)
    if vt.size < 2:
        raise FoldError("branch has no extent around the seed")
    return Branch(model, float(vt[0]), float(vt[-1]), label, fold, (vt, ut))


# --- reduced scalar problem -------------------------------------------------------

@dataclass(frozen=True)
class ReducedProblem:
    """h(V) = g(k(V), V) on a branch; callable as ``h(V)``."""

    model: KineticModel = field(repr=False)
    branch: Branch

    @property
    def interval(self):
        return self.branch.v_lo, self.branch.v_hi

    @property
    def D(self) -> float:
        return self.model.diffusion

    def __call__(self, V):
        return self.model.g(self.branch.k(V), V)

    def h(self, V):
        return self(V)

    def dh(self, V):
        """h'(V) = -(f_v / f_u) g_u + g_v at (k(V), V)."""
        U = self.branch.k(V)
        fu, fv, gu, gv = self.model.partials(U, np.asarray(V, dtype=float))
        return -(fv / fu) * gu + gv

    def roots(self, n: int = 4001) -> np.ndarray:
        """Zeros of h inside the branch interval, from a sign scan plus Brent."""
        lo, hi = self.interval
        vs = np.linspace(lo, hi, n)
        hs = self(vs)
        out = [vs[i] for i in np.flatnonzero(hs == 0)]
        for i in np.flatnonzero(hs[:-1] * hs[1:] < 0):
            out.append(brentq(lambda s: float(self(s)), vs[i], vs[i + 1], xtol=1e-15, rtol=1e-15))
        return np.array(sorted(out))


def reduced_h(branch: Branch, model: KineticModel | None = None) -> ReducedProblem:
    return ReducedProblem(model if model is not None else branch.model, branch)


def reduced_h_prime(problem: ReducedProblem, V):
    return problem.dh(V)


# --- stationary profiles ----------------------------------------------------------

@dataclass
class StationaryProfile:
    """Grid-sampled stationary solution on a cell-centred grid over [0, L].

    ``labels[i]`` indexes ``branches`` and tells which branch produced ``U[i]``.
    ``vfun``, when present, evaluates the underlying continuous solution and
    is used for exact resampling.
    """

    x: np.ndarray
    U: np.ndarray
    V: np.ndarray
    L: float
    D: float
    labels: np.ndarray
    branches: list = field(default_factory=list, repr=False)
    model: KineticModel | None = field(default=None, repr=False)
    s0: float = math.nan
    modes: int = 0
    kind: str = "regular"
    vfun: Callable | None = field(default=None, repr=False)
    fu: np.ndarray | None = field(default=None, repr=False)
    fv: np.ndarray | None = field(default=None, repr=False)
    gu: np.ndarray | None = field(default=None, repr=False)
    gv: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.model is not None and self.U is not None and self.fu is None:
            self.fu, self.fv, self.gu, self.gv = (np.asarray(a, dtype=float) * np.ones_like(self.V)
                                                  for a in self.model.partials(self.U, self.V))

    @property
    def N(self) -> int:
        return self.V.size

    @property
    def h_spacing(self) -> float:
        return self.L / self.N

    def residual(self) -> float:
        """Max-norm residual of D Lap_h V + g(U, V) on the grid."""
        g = self.model.g(self.U, self.V)
        return float(np.max(np.abs(self.D * apply_laplacian(self.V, self.L) + g)))

    def f_residual(self) -> float:
        return float(np.max(np.abs(self.model.f(self.U, self.V))))

    def integral_g(self) -> float:
        return integrate(self.model.g(self.U, self.V), self.L)

    def is_constant(self) -> bool:
        return float(np.ptp(self.V)) < CONST_TOL

    def resample(self, N: int) -> "StationaryProfile":
        """Sample the underlying solution on a grid of N cells."""
        x = cell_centers(self.L, N)
        if self.vfun is not None:
            V = np.asarray(self.vfun(x), dtype=float)
        else:
            V = PchipInterpolator(self.x, self.V, extrapolate=True)(x)
        labels = np.asarray(PchipInterpolator(self.x, self.labels.astype(float),
                                              extrapolate=True)(x).round(), dtype=int)
        labels = np.clip(labels, self.labels.min(), self.labels.max())
        return _lift(self.model, self.branches, x, V, labels, self.L, self.D, s0=self.s0,
                     modes=self.modes, kind=self.kind, vfun=self.vfun)

    def refine(self, N: int | None = None) -> "StationaryProfile":
        """Resample to N cells (default 2N) and polish on the new grid."""
        return polish_profile(self.resample(2 * self.N if N is None else N))


def _lift(model, branches, x, V, labels, L, D, **meta) -> StationaryProfile:
    U = np.empty_like(V)
    for i, br in enumerate(branches):
        m = labels == i
        if np.any(m):
            U[m] = br.k(V[m])
    return StationaryProfile(x=x, U=U, V=V, L=float(L), D=float(D), labels=labels,
                             branches=list(branches), model=model, **meta)


def profile_from_values(model: KineticModel, x, U, V, L: float, labels=None,
                        branches=None, kind: str = "given") -> StationaryProfile:
    """Wrap user-supplied grid values as a profile (no solve performed)."""
    V = np.asarray(V, dtype=float)
    labels = np.zeros(V.size, dtype=int) if labels is None else np.asarray(labels, dtype=int)
    return StationaryProfile(x=np.asarray(x, dtype=float), U=np.asarray(U, dtype=float), V=V,
                             L=float(L), D=model.diffusion, labels=labels,
                             branches=list(branches or []), model=model, kind=kind)


def _modes(dV) -> int:
    """Number of monotone laps: interior sign changes of V' plus one."""
    s = np.sign(dV[np.abs(dV) > 1e-9 * (1 + np.max(np.abs(dV)))])
    return int(np.count_nonzero(s[1:] != s[:-1])) + 1


def _scan(h, D, L, s_vals, interval, steps):
    """Vectorised RK4 for V'' = -h(V)/D; returns V'(L; s) with NaN on escape."""
    lo, hi = interval
    V = np.array(s_vals, dtype=float)
    W = np.zeros_like(V)
    alive = np.ones(V.size, dtype=bool)
    dt = L / steps

    def acc(Vx):
        out = np.full_like(Vx, np.nan)
        ok = alive & np.isfinite(Vx) & (Vx >= lo) & (Vx <= hi)
        if np.any(ok):
            out[ok] = -np.asarray(h(Vx[ok]), dtype=float) / D
        return out

    with np.errstate(over="ignore", invalid="ignore"):
        V, W = _rk4_loop(V, W, alive, acc, dt, steps)
    W[~alive] = np.nan
    return W


def _rk4_loop(V, W, alive, acc, dt, steps):
    for _ in range(steps):
        k1v, k1w = W, acc(V)
        k2v, k2w = W + 0.5 * dt * k1w, acc(V + 0.5 * dt * k1v)
        k3v, k3w = W + 0.5 * dt * k2w, acc(V + 0.5 * dt * k2v)
        k4v, k4w = W + dt * k3w, acc(V + dt * k3v)
        V = V + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        W = W + dt / 6.0 * (k1w + 2 * k2w + 2 * k3w + k4w)
        alive &= np.isfinite(V) & np.isfinite(W)
    return V, W


def _shoot(h, D, L, s, interval, dense=False):
    lo, hi = interval

    def rhs(t, y):
        return [y[1], -float(h(min(max(y[0], lo), hi))) / D]

    def leave(t, y):
        return min(y[0] - lo, hi - y[0])

    leave.terminal = True
    sol = solve_ivp(rhs, (0.0, L), [s, 0.0], method="DOP853", rtol=1e-12, atol=1e-13,
                    events=leave, dense_output=dense)
    if sol.status != 0 or sol.t[-1] < L:
        return None
    return sol


def shoot_stationary(h, L: float, v0_range: Sequence[float], n_modes: int | None = None, *,
                     D: float | None = None, N: int = 400, polish: bool = True,
                     n_scan: int = N_SCAN, scan_steps: int = 2000,
                     diagnostics: dict | None = None) -> list[StationaryProfile]:
    """Non-constant solutions of ``D V'' + h(V) = 0`` with Neumann ends.

    ``h`` is either a :class:`ReducedProblem` (profiles are lifted to ``U = k(V)``
    and carry the model) or a plain callable, in which case ``U`` is left as
    ``None``. Profiles are sampled on ``N`` cells; with ``polish`` they are
    then corrected to solve the finite-difference problem exactly.
    Returned profiles are sorted by lap count and then by ``V(0)``;
    ``n_modes`` keeps only those with at most that many laps.
    """
    reduced = h if isinstance(h, ReducedProblem) else None
    if D is None:
        D = reduced.D if reduced is not None else 1.0
    interval = reduced.interval if reduced is not None else (-np.inf, np.inf)
    a, b = map(float, v0_range)
    a, b = max(a, interval[0]), min(b, interval[1])
    if not b > a:
        raise ShootingError("shooting range does not meet the admissible V-interval")
    svals = np.linspace(a, b, n_scan)
    F = _scan(h, D, L, svals, interval, scan_steps)
    if diagnostics is not None:
        diagnostics.update(s=svals, dV_L=F, escaped=int(np.count_nonzero(np.isnan(F))))

    def target(s):
        sol = _shoot(h, D, L, s, interval)
        return math.nan if sol is None else float(sol.y[1, -1])

    found = []
    for i in np.flatnonzero(np.isfinite(F[:-1]) & np.isfinite(F[1:]) & (F[:-1] * F[1:] <= 0)):
        if F[i] == 0 and i > 0 and F[i - 1] * F[i] <= 0:
            continue
        s_lo, s_hi = svals[i], svals[i + 1]
        f_lo, f_hi = target(s_lo), target(s_hi)
        if not (np.isfinite(f_lo) and np.isfinite(f_hi)):
            continue
        if f_lo == 0:
            s = s_lo
        elif f_hi == 0:
            s = s_hi
        elif f_lo * f_hi < 0:
            s = brentq(target, s_lo, s_hi, xtol=1e-15, rtol=1e-15, maxiter=200)
        else:
            continue
        sol = _shoot(h, D, L, s, interval, dense=True)
        if sol is None:
            continue
        t = np.linspace(0.0, L, 2001)
        Vt, dVt = sol.sol(t)
        if abs(dVt[-1]) > SHOOT_TOL * (1 + np.max(np.abs(Vt))) * 1e3:
            log.debug("rejecting s=%g: V'(L)=%g", s, dVt[-1])
            continue
        if np.ptp(Vt) < CONST_TOL:
            continue
        if any(abs(s - p[0]) < 1e-8 for p in found):
            continue
        found.append((s, sol, _modes(dVt)))

    found.sort(key=lambda p: (p[2], p[0]))
    if n_modes is not None:
        found = [p for p in found if p[2] <= n_modes]
    x = cell_centers(L, N)
    out = []
    for s, sol, modes in found:
        vfun = (lambda xx, _sol=sol: _sol.sol(xx)[0])
        V = vfun(x)
        if reduced is not None:
            prof = _lift(reduced.model, [reduced.branch], x, V, np.zeros(N, dtype=int), L, D,
                         s0=s, modes=modes, kind="shot", vfun=vfun)
            if polish:
                try:
                    prof = polish_profile(prof)
                except BVPError as exc:
                    log.warning("profile from V(0)=%g kept unpolished: %s", s, exc)
        else:
            prof = StationaryProfile(x=x, U=None, V=V, L=float(L), D=float(D),
                                     labels=np.zeros(N, dtype=int), s0=s, modes=modes,
                                     kind="shot", vfun=vfun)
        out.append(prof)
    if not out:
        log.info("no non-constant profile found on [%g, %g] for L=%g", a, b, L)
    return out


# --- finite-difference boundary value problem ---------------------------------------

def _bvp_newton(hfun, dhfun, V0, L, D, tol=1e-12, maxiter=60):
    N = V0.size
    main, off = laplacian_bands(L, N)
    V = V0.copy()

    def resid(Vx):
        try:
            r = D * apply_laplacian(Vx, L) + hfun(Vx)
        except (ValueError, DomainError):
            return None
        return r if np.all(np.isfinite(r)) else None

    R = resid(V)
    if R is None:
        raise BVPError("initial guess outside the admissible region")
    scale = 1.0 + np.max(np.abs(V))
    for _ in range(maxiter):
        rn = np.max(np.abs(R))
        if rn <= tol * scale:
            return V
        ab = np.zeros((3, N))
        ab[0, 1:] = D * off
        ab[1] = D * main + dhfun(V)
        ab[2, :-1] = D * off
        try:
            dV = solve_banded((1, 1), ab, -R)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise BVPError(f"singular Jacobian: {exc}") from None
        alpha = 1.0
        while alpha > 1e-6:
            Vt = V + alpha * dV
            Rt = resid(Vt)
            if Rt is not None and np.max(np.abs(Rt)) < (1 - 1e-4 * alpha) * rn:
                break
            alpha *= 0.5
        else:
            if rn <= 1e3 * tol * scale:
                return V
            raise BVPError(f"line search failed at residual {rn:.3g}")
        V, R = Vt, Rt
    if np.max(np.abs(R)) <= 1e3 * tol * scale:
        return V
    raise BVPError(f"no convergence, residual {np.max(np.abs(R)):.3g}")


def _piecewise(branches, labels, model):
    problems = [ReducedProblem(model, br) for br in branches]
    masks = [labels == i for i in range(len(branches))]

    def hfun(V):
        out = np.empty_like(V)
        for p, m in zip(problems, masks):
            if np.any(m):
                out[m] = p(V[m])
        return out

    def dhfun(V):
        out = np.empty_like(V)
        for p, m in zip(problems, masks):
            if np.any(m):
                out[m] = p.dh(V[m])
        return out

    return hfun, dhfun


def polish_profile(profile: StationaryProfile, tol: float = 1e-12) -> StationaryProfile:
    """Newton-correct V so that D Lap_h V + h(V) = 0 holds on the grid."""
    hfun, dhfun = _piecewise(profile.branches, profile.labels, profile.model)
    V = _bvp_newton(hfun, dhfun, profile.V, profile.L, profile.D, tol=tol)
    out = _lift(profile.model, profile.branches, profile.x, V, profile.labels, profile.L,
                profile.D, s0=profile.s0, modes=profile.modes, kind=profile.kind,
                vfun=profile.vfun)
    return out


def assemble_weak_profile(branches: Sequence[Branch], switch_points: Sequence[float],
                          model: KineticModel, L: float, N: int, v_guess=None,
                          tol: float = 1e-12) -> StationaryProfile:
    """Solve for V with ``U = k_j(V)`` on the j-th segment between switch points.

    Segment j is ``[x_{j-1}, x_j)`` with ``x_{-1} = 0`` and the last segment
    ending at L; a cell belongs to the segment containing its centre.
    """
    if len(branches) != len(switch_points) + 1:
        raise ValueError("need exactly one more branch than switch points")
    sw = np.asarray(switch_points, dtype=float)
    if np.any(np.diff(sw) <= 0) or np.any(sw <= 0) or np.any(sw >= L):
        raise ValueError("switch points must increase strictly inside (0, L)")
    x = cell_centers(L, N)
    labels = np.searchsorted(sw, x, side="right")
    if v_guess is None:
        lo = max(br.v_lo for br in branches)
        hi = min(br.v_hi for br in branches)
        V0 = np.full(N, 0.5 * (lo + hi))
    else:
        V0 = np.broadcast_to(np.asarray(v_guess, dtype=float), (N,)).copy()
    hfun, dhfun = _piecewise(branches, labels, model)
    V = _bvp_newton(hfun, dhfun, V0, L, model.diffusion, tol=tol)
    return _lift(model, branches, x, V, labels, L, model.diffusion,
                 kind="weak" if len(branches) > 1 else "regular",
                 modes=_modes(np.diff(V)))


# --- conditions along a profile -------------------------------------------------------

@dataclass(frozen=True)
class ConditionReport:
    lambda0: float
    Lambda0: float
    autocatalysis: bool
    compensation: bool
    max_compensation: float
    n_compensation_violations: int
    lambda0_nonzero: float
    autocatalysis_nonzero: bool
    compensation_nonzero: bool
    witness_x0: float | None
    witness_fu: float | None
    unstable: bool


def check_instability_conditions(profile: StationaryProfile, model: KineticModel | None = None,
                                 osc_tol: float = 0.1) -> ConditionReport:
    """Pointwise autocatalysis (f_u > 0) and compensation (f_v g_u < 0) checks.

    ``*_nonzero`` fields restrict both tests to cells where U != 0, which is
    the relevant set for weak profiles of models with f(0, v) = 0. The
    witness is the cell maximising f_u among cells whose two neighbours lie on
    the same branch and where f_u varies by less than
    ``osc_tol * (1 + |f_u|)`` across the three cells.
    """
    if model is not None and model is not profile.model:
        profile = replace(profile, model=model, fu=None, fv=None, gu=None, gv=None)
        profile.__post_init__()
    fu, comp = profile.fu, profile.fv * profile.gu
    nz = profile.U != 0
    lam0 = float(np.min(fu))
    lam_nz = float(np.min(fu[nz])) if np.any(nz) else math.nan

    lab = profile.labels
    pad_f = np.concatenate(([fu[0]], fu, [fu[-1]]))
    pad_l = np.concatenate(([lab[0]], lab, [lab[-1]]))
    window = np.stack([pad_f[:-2], pad_f[1:-1], pad_f[2:]])
    osc = np.ptp(window, axis=0)
    same = (pad_l[:-2] == lab) & (pad_l[2:] == lab)
    cand = same & (osc < osc_tol * (1 + np.abs(fu))) & (fu > 0)
    if np.any(cand):
        i = int(np.argmax(np.where(cand, fu, -np.inf)))
        wx, wf = float(profile.x[i]), float(fu[i])
    else:
        wx = wf = None
    return ConditionReport(
        lambda0=lam0, Lambda0=float(np.max(fu)),
        autocatalysis=bool(lam0 > 0),
        compensation=bool(np.max(comp) < 0),
        max_compensation=float(np.max(comp)),
        n_compensation_violations=int(np.count_nonzero(comp >= 0)),
        lambda0_nonzero=lam_nz,
        autocatalysis_nonzero=bool(np.any(nz) and lam_nz > 0),
        compensation_nonzero=bool(np.any(nz) and np.max(comp[nz]) < 0),
        witness_x0=wx, witness_fu=wf,
        unstable=bool(lam0 > 0 or (np.any(nz) and lam_nz > 0) or wx is not None),
    )


@dataclass(frozen=True)
class TouchedState:
    vbar: float
    ubar: float
    h_prime: float
    marginal: bool
    state: ConstantState | None

    @property
    def positive(self) -> bool:
        return (not self.marginal) and self.h_prime > 0


def touched_states(profile: StationaryProfile, problem: ReducedProblem | None = None,
                   marginal_tol: float = 1e-8) -> list[TouchedState]:
    """All zeros of h inside [min V, max V], with h' and the full classification.

    Every one is reported; ``TouchedState.positive`` flags those satisfying
    h'(vbar) > 0, and zeros with |h'| below ``marginal_tol`` are marked
    marginal and never count as positive.
    """
    if problem is None:
        if len(profile.branches) != 1:
            raise ValueError("touched states need a single-branch profile or an explicit problem")
        problem = ReducedProblem(profile.model, profile.branches[0])
    vmin, vmax = float(np.min(profile.V)), float(np.max(profile.V))
    if profile.vfun is not None:
        fine = profile.vfun(np.linspace(0.0, profile.L, 4001))
        vmin, vmax = min(vmin, float(fine.min())), max(vmax, float(fine.max()))
    out = []
    for vb in problem.roots():
        if vmin - 1e-9 <= vb <= vmax + 1e-9:
            ub = float(problem.branch.k(vb))
            hp = float(problem.dh(vb))
            out.append(TouchedState(float(vb), ub, hp, abs(hp) < marginal_tol,
                                    classify_state(problem.model, ub, vb)))
    return out


# --- CSV ----------------------------------------------------------------------------

_COLUMNS = ["x", "U", "V", "branch", "f_u", "f_v", "g_u", "g_v"]


def write_profile_csv(profile: StationaryProfile, path: str | Path) -> Path:
    path = Path(path)
    names = [br.label for br in profile.branches]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(_COLUMNS)
        for i in range(profile.N):
            lab = int(profile.labels[i])
            wr.writerow([repr(float(profile.x[i])), repr(float(profile.U[i])),
                         repr(float(profile.V[i])), names[lab] if names else str(lab),
                         repr(float(profile.fu[i])), repr(float(profile.fv[i])),
                         repr(float(profile.gu[i])), repr(float(profile.gv[i]))])
        fh.write(f"# L={profile.L!r}\n# D={profile.D!r}\n# kind={profile.kind}\n"
                 f"# modes={profile.modes}\n# s0={profile.s0!r}\n")
    return path


def load_profile_csv(path: str | Path, model: KineticModel | None = None) -> StationaryProfile:
    """Read a profile CSV. Pointwise Jacobian fields are taken from the file."""
    rows, meta = [], {}
    with open(path, newline="", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    for ln in lines:
        if ln.startswith("# ") and "=" in ln:
            k, v = ln[2:].split("=", 1)
            meta[k.strip()] = v.strip()
    rd = csv.reader(body)
    header = next(rd)
    if header != _COLUMNS:
        raise ValueError(f"{path}: unexpected header {header}")
    rows = [r for r in rd if r]
    cols = list(zip(*rows))
    arr = {name: np.array(cols[i], dtype=float) for i, name in enumerate(_COLUMNS) if name != "branch"}
    names = list(dict.fromkeys(cols[3]))
    labels = np.array([names.index(b) for b in cols[3]], dtype=int)
    L = float(meta.get("L", arr["x"][-1] + arr["x"][0]))
    D = float(meta.get("D", model.diffusion if model is not None else 1.0))
    return StationaryProfile(x=arr["x"], U=arr["U"], V=arr["V"], L=L, D=D, labels=labels,
                             branches=[], model=model, s0=float(meta.get("s0", "nan")),
                             modes=int(meta.get("modes", 0)), kind=meta.get("kind", "loaded"),
                             fu=arr["f_u"], fv=arr["f_v"], gu=arr["g_u"], gv=arr["g_v"])
