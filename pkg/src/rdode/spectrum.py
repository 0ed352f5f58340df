"""Spectrum of the linearisation around a stationary profile.

With ``(phi, psi)`` perturbing ``(U, V)`` the linear operator is::

    lambda phi = f_u phi + f_v psi
    lambda psi = D psi'' + g_u phi + g_v psi,   psi'(0) = psi'(L) = 0.

The range of f_u along the profile, ``[lambda0, Lambda0]``, is essential
spectrum and is carried as an interval. Real eigenvalues below ``lambda0``
are found by eliminating ``phi``: ``lambda`` is an eigenvalue exactly when
``psi'' + q(x, lambda) psi = 0`` has a non-trivial Neumann solution, with::

    q(x, lambda) = (-g_u f_v / (f_u - lambda) + g_v - lambda) / D.

On the grid this holds exactly for the discrete operator, so the reduced
route and the dense ``2N x 2N`` eigensolve agree to solver precision.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np
from scipy.linalg import LinAlgError, cholesky, eigh, eigvals, eigvalsh_tridiagonal

from .grid import laplacian_bands, laplacian_dense
from .profile1d import StationaryProfile

__all__ = [
    "DiscreteLinearization",
    "SpectrumReport",
    "BracketError",
    "assemble_linearization",
    "essential_interval",
    "weighted_eigenvalues",
    "negative_count",
    "q_potential",
    "find_lambda_sequence",
    "dense_eigenvalues",
    "spectral_gap",
    "compute_spectrum",
    "constant_mode_eigenvalues",
    "write_spectrum_csv",
    "load_spectrum_csv",
    "write_spectrum_svg",
    "DENSE_MAX_N",
    "GAP_GUARD",
]

DENSE_MAX_N = 2000
GAP_GUARD = 1e-6
LAMBDA_TOL = 1e-10


class BracketError(RuntimeError):
    """No sign change of mu_n(q(lambda)) - 1 was found for the requested index."""


@dataclass(frozen=True)
class DiscreteLinearization:
    """Block matrix ``[[diag f_u, diag f_v], [diag g_u, D Lap_h + diag g_v]]``."""

    N: int
    L: float
    D: float
    fu: np.ndarray = field(repr=False)
    fv: np.ndarray = field(repr=False)
    gu: np.ndarray = field(repr=False)
    gv: np.ndarray = field(repr=False)

    @property
    def matrix(self) -> np.ndarray:
        N = self.N
        A = np.zeros((2 * N, 2 * N))
        idx = np.arange(N)
        A[idx, idx] = self.fu
        A[idx, N + idx] = self.fv
        A[N + idx, idx] = self.gu
        A[N:, N:] = self.D * laplacian_dense(self.L, N) + np.diag(self.gv)
        return A


def assemble_linearization(profile: StationaryProfile, model=None,
                           N: int | None = None) -> DiscreteLinearization:
    """Linearisation about ``profile``, resampled to N cells when N is given."""
    if N is not None and N != profile.N:
        profile = profile.resample(N)
        if model is not None:
            profile = _with_model(profile, model)
    elif model is not None and profile.model is not model:
        profile = _with_model(profile, model)
    return DiscreteLinearization(profile.N, profile.L, profile.D, profile.fu.copy(),
                                 profile.fv.copy(), profile.gu.copy(), profile.gv.copy())


def _with_model(profile, model):
    fu, fv, gu, gv = (np.asarray(a, dtype=float) * np.ones_like(profile.V)
                      for a in model.partials(profile.U, profile.V))
    profile.fu, profile.fv, profile.gu, profile.gv = fu, fv, gu, gv
    return profile


def _lin(obj) -> DiscreteLinearization:
    return obj if isinstance(obj, DiscreteLinearization) else assemble_linearization(obj)


def essential_interval(profile) -> tuple[float, float]:
    """``(min f_u, max f_u)`` over the grid."""
    fu = profile.fu
    return float(np.min(fu)), float(np.max(fu))


def dense_eigenvalues(lin) -> np.ndarray:
    """All eigenvalues of the 2N x 2N block matrix, sorted by descending real part."""
    lin = _lin(lin)
    if lin.N > DENSE_MAX_N:
        raise ValueError(f"dense eigensolve capped at N={DENSE_MAX_N}")
    ev = eigvals(lin.matrix)
    return ev[np.lexsort((-ev.imag, -ev.real))]


def constant_mode_eigenvalues(jac, D: float, L: float, N: int) -> np.ndarray:
    """Eigenvalues of the per-mode 2x2 blocks ``J - diag(0, D kappa_k)``.

    ``kappa_k`` are the eigenvalues of minus the discrete Neumann Laplacian.
    """
    jac = np.asarray(jac, dtype=float)
    kap = 4.0 / (L / N) ** 2 * np.sin(np.pi * np.arange(N) / (2 * N)) ** 2
    blocks = np.broadcast_to(jac, (N, 2, 2)).copy()
    blocks[:, 1, 1] -= D * kap
    ev = np.linalg.eigvals(blocks).ravel()
    return ev[np.lexsort((-ev.imag, -ev.real))]


# --- weighted problem psi'' + mu q psi = 0 ---------------------------------------------

def weighted_eigenvalues(q, L: float, count: int | None = None) -> np.ndarray:
    """Positive eigenvalues ``mu_1 < mu_2 < ...`` of ``Lap_h psi + mu q psi = 0``.

    Solved as the symmetric-definite pencil ``q psi = nu (K + t Q) psi`` with
    ``K = -Lap_h`` and a small shift t of the sign of ``sum q`` that makes
    ``K + t Q`` positive definite; then ``mu = 1/nu - t``. The eigenvalue
    ``mu_0 = 0`` of the constant mode is not reported.
    """
    q = np.asarray(q, dtype=float)
    if not np.any(q > 0):
        return np.empty(0)
    N = q.size
    K = -laplacian_dense(L, N)
    Q = np.diag(q)
    sq = q.sum()
    # roughly the constant-mode scale; halved until K + tQ factors
    t = math.copysign(1.0, sq if sq != 0 else 1.0) * (np.pi / L) ** 2 / (np.max(np.abs(q)) + 1e-300)
    for _ in range(80):
        B = K + t * Q
        try:
            cholesky(B, lower=True)
            break
        except LinAlgError:
            t *= 0.5
    else:
        raise LinAlgError("no positive definite shift found for the weighted problem")
    nu = eigh(Q, B, eigvals_only=True)
    big = np.abs(nu) > 1e-14 * np.max(np.abs(nu))
    mu = 1.0 / nu[big] - t
    scale = (np.pi / L) ** 2 / np.max(np.abs(q))
    mu = np.sort(mu[mu > 1e-9 * scale])
    return mu if count is None else mu[:count]


def negative_count(q, L: float) -> int:
    """Number of negative eigenvalues of ``-Lap_h - diag(q)`` (tridiagonal)."""
    q = np.asarray(q, dtype=float)
    main, off = laplacian_bands(L, q.size)
    d = -main - q
    e = -off
    ev = eigvalsh_tridiagonal(d, e, select="v", select_range=(-np.inf, 0.0))
    return int(ev.size)


def q_potential(lin, lam: float) -> np.ndarray:
    """The potential ``q(x, lambda)`` of the reduced problem, scaled by 1/D."""
    lin = _lin(lin)
    return (-lin.gu * lin.fv / (lin.fu - lam) + lin.gv - lam) / lin.D


def _count_below_one(lin, lam: float) -> int:
    """#{n >= 1 : 0 < mu_n(q(lambda)) < 1} by Sylvester inertia."""
    q = q_potential(lin, lam)
    return negative_count(q, lin.L) - int(q.sum() > 0)


def find_lambda_sequence(profile, model=None, count: int = 5, tol: float = LAMBDA_TOL,
                         n_start: int = 1, max_index: int | None = None,
                         skipped: list | None = None) -> np.ndarray:
    """Real eigenvalues ``lambda_n < lambda0`` solving ``mu_n(q(., lambda_n)) = 1``.

    Brackets come from the geometric sequence ``lambda0 - 10 lambda0 2^-j``;
    each is bisected to ``tol`` on the inertia predicate ``mu_n < 1``. The
    root returned for index n is the one nearest ``lambda0``, so the list
    increases towards ``lambda0``. Indices with no bracket are skipped and
    appended to ``skipped``.
    """
    lin = assemble_linearization(profile, model) if model is not None else _lin(profile)
    lam0 = float(np.min(lin.fu))
    if lam0 <= 0:
        raise ValueError("autocatalysis fails: lambda0 <= 0")
    if np.max(lin.fv * lin.gu) >= 0:
        raise ValueError("compensation fails: f_v g_u must be negative along the profile")
    max_index = lin.N if max_index is None else max_index

    deltas = [10.0 * lam0 * 0.5**j for j in range(200)]
    deltas = [d for d in deltas if d > 1e-13 * lam0]
    pts = np.array([lam0 - d for d in deltas])
    counts = np.array([_count_below_one(lin, p) for p in pts])

    out = []
    n = n_start
    while len(out) < count and n <= max_index:
        above = np.flatnonzero(counts < n)
        if above.size == 0:
            if skipped is not None:
                skipped.append(n)
            n += 1
            continue
        j = int(above[-1])
        if j == len(pts) - 1:
            break
        lo, hi = pts[j], pts[j + 1]
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if _count_below_one(lin, mid) >= n:
                hi = mid
            else:
                lo = mid
        out.append(0.5 * (lo + hi))
        n += 1
    if len(out) < count:
        raise BracketError(f"found only {len(out)} of {count} eigenvalues below lambda0")
    return np.array(out)


# --- gap and report -----------------------------------------------------------------

def spectral_gap(report_or_eigs, lambda0: float | None = None, Lambda0: float | None = None,
                 guard: float = GAP_GUARD):
    """Widest strip ``[mu, M]`` inside ``(0, top)`` free of eigenvalue real parts.

    ``top`` is ``lambda0`` when positive, otherwise the largest positive real
    part. Returns None when there is no spectrum with positive real part.
    """
    if isinstance(report_or_eigs, SpectrumReport):
        rep = report_or_eigs
        re = np.concatenate([np.real(rep.eigenvalues), np.asarray(rep.lambda_seq, dtype=float)])
        lambda0, Lambda0 = rep.lambda0, rep.Lambda0
    else:
        re = np.real(np.asarray(report_or_eigs, dtype=complex))
    if lambda0 is not None and lambda0 > 0:
        top = lambda0
    elif re.size and np.max(re) > 0:
        top = float(np.max(re))
    else:
        return None
    pts = np.unique(np.concatenate([[0.0, top], re[(re > 0) & (re < top)]]))
    widths = np.diff(pts)
    i = int(np.argmax(widths))
    mu, M = pts[i] + guard, pts[i + 1] - guard
    if not M > mu:
        return None
    return float(mu), float(M)


@dataclass
class SpectrumReport:
    lambda0: float
    Lambda0: float
    eigenvalues: np.ndarray
    lambda_seq: np.ndarray
    approaching: np.ndarray
    gap: tuple[float, float] | None
    unstable: bool
    dominant: float
    N: int
    skipped: list = field(default_factory=list)


def compute_spectrum(profile, model=None, count: int = 5, dense: bool = True,
                     window: float = 0.5) -> SpectrumReport:
    """Essential interval, dense eigenvalues, lambda_n sequence and gap.

    ``approaching`` lists dense real eigenvalues in ``(lambda0 - window*|lambda0|,
    lambda0)``. The lambda_n search runs only when autocatalysis and
    compensation hold; otherwise ``lambda_seq`` is empty.
    """
    lin = assemble_linearization(profile, model)
    lam0, Lam0 = float(np.min(lin.fu)), float(np.max(lin.fu))
    ev = dense_eigenvalues(lin) if dense and lin.N <= DENSE_MAX_N else np.empty(0, complex)
    skipped: list = []
    seq = np.empty(0)
    if lam0 > 0 and np.max(lin.fv * lin.gu) < 0:
        try:
            seq = find_lambda_sequence(lin, count=count, skipped=skipped)
        except BracketError:
            seq = np.empty(0)
    real = ev[np.abs(ev.imag) <= 1e-9 * (1 + np.abs(ev.real))].real
    approaching = np.sort(real[(real > lam0 - window * abs(lam0)) & (real < lam0)])
    dominant = max(float(np.max(ev.real)) if ev.size else -np.inf, Lam0)
    unstable = bool(Lam0 > 0 or (ev.size and np.max(ev.real) > 0))
    rep = SpectrumReport(lam0, Lam0, ev, seq, approaching, None, unstable, dominant, lin.N,
                         skipped)
    rep.gap = spectral_gap(rep)
    return rep


# --- output ---------------------------------------------------------------------------

_COLUMNS = ["re", "im", "method"]


def write_spectrum_csv(report: SpectrumReport, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(_COLUMNS)
        for z in report.eigenvalues:
            wr.writerow([repr(float(z.real)), repr(float(z.imag)), "dense"])
        for lam in report.lambda_seq:
            wr.writerow([repr(float(lam)), repr(0.0), "reduced"])
        gap = "none" if report.gap is None else f"{report.gap[0]!r},{report.gap[1]!r}"
        fh.write(f"# lambda0={report.lambda0!r}\n# Lambda0={report.Lambda0!r}\n"
                 f"# gap={gap}\n# unstable={str(report.unstable).lower()}\n"
                 f"# dominant={report.dominant!r}\n# N={report.N}\n")
    return path


def load_spectrum_csv(path: str | Path) -> SpectrumReport:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    meta = dict(ln[2:].split("=", 1) for ln in lines if ln.startswith("# ") and "=" in ln)
    rows = list(csv.reader([ln for ln in lines if not ln.startswith("#")]))
    if rows[0] != _COLUMNS:
        raise ValueError(f"{path}: unexpected header {rows[0]}")
    dense = np.array([complex(float(r[0]), float(r[1])) for r in rows[1:] if r and r[2] == "dense"])
    red = np.array([float(r[0]) for r in rows[1:] if r and r[2] == "reduced"])
    gap = None if meta["gap"] == "none" else tuple(float(s) for s in meta["gap"].split(","))
    lam0 = float(meta["lambda0"])
    real = dense[np.abs(dense.imag) <= 1e-9 * (1 + np.abs(dense.real))].real if dense.size else dense.real
    approaching = np.sort(real[(real > lam0 - 0.5 * abs(lam0)) & (real < lam0)])
    return SpectrumReport(lam0, float(meta["Lambda0"]), dense, red, approaching, gap,
                          meta["unstable"] == "true", float(meta["dominant"]), int(meta["N"]))


def write_spectrum_svg(report: SpectrumReport, path: str | Path, width: int = 640,
                       height: int = 400, title: str = "spectrum") -> Path:
    """Scatter of eigenvalues in the complex plane, essential interval as a bar
    on the real axis and the gap as a shaded vertical strip."""
    ev = np.asarray(report.eigenvalues, dtype=complex)
    re = np.concatenate([ev.real, report.lambda_seq, [report.lambda0, report.Lambda0, 0.0]])
    im = np.concatenate([ev.imag, [0.0]])
    # the plot focuses on the right half of the spectrum; far-left modes are clipped
    xmin = max(float(np.min(re)), report.lambda0 - 2.0 * max(abs(report.lambda0), 1e-3))
    xmax = max(float(np.max(re)), report.Lambda0)
    pad = 0.05 * (xmax - xmin or 1.0)
    xmin, xmax = xmin - pad, xmax + pad
    ymax = max(float(np.max(np.abs(im))), 1e-3 * (xmax - xmin)) * 1.1
    m = 40

    def X(a):
        return m + (a - xmin) / (xmax - xmin) * (width - 2 * m)

    def Y(b):
        return height / 2 - b / ymax * (height / 2 - m)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<title>{escape(title)}</title>',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>']
    if report.gap is not None:
        g0, g1 = report.gap
        parts.append(f'<rect x="{X(g0):.2f}" y="{m}" width="{max(X(g1) - X(g0), 0.5):.2f}" '
                     f'height="{height - 2 * m}" fill="#cfe8cf"/>')
    parts.append(f'<line x1="{m}" y1="{Y(0):.2f}" x2="{width - m}" y2="{Y(0):.2f}" '
                 f'stroke="black"/>')
    parts.append(f'<line x1="{X(0):.2f}" y1="{m}" x2="{X(0):.2f}" y2="{height - m}" '
                 f'stroke="black"/>')
    parts.append(f'<line x1="{X(report.lambda0):.2f}" y1="{Y(0):.2f}" '
                 f'x2="{max(X(report.Lambda0), X(report.lambda0) + 2):.2f}" y2="{Y(0):.2f}" '
                 f'stroke="#c00" stroke-width="5"/>')
    for z in ev:
        if xmin <= z.real <= xmax:
            parts.append(f'<circle cx="{X(z.real):.2f}" cy="{Y(z.imag):.2f}" r="2" fill="#236"/>')
    for lam in report.lambda_seq:
        parts.append(f'<circle cx="{X(lam):.2f}" cy="{Y(0):.2f}" r="4" fill="none" '
                     f'stroke="#e80"/>')
    parts.append(f'<text x="{m}" y="{m - 12}" font-size="12">lambda0={report.lambda0:.6g} '
                 f'Lambda0={report.Lambda0:.6g}</text>')
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return path
