"""Reaction nonlinearities for reaction-diffusion-ODE systems.

A two-component model couples a non-diffusing species ``u`` to a diffusing
species ``v``::

    u_t = f(u, v)
    v_t = D v_xx + g(u, v)

Every model exposes ``f``, ``g`` and their exact first partial derivatives.
All methods accept scalars or numpy arrays and broadcast.

Built-in families
-----------------
``gray_scott``        f = -(B+k) u + u^2 v,          g = -u^2 v + B (1 - v)
``gierer_meinhardt``  f = -u + u^p / v^q,            g = (-v + u^r / v^s) / tau
``carcinogenesis2``   f = (a u w / (S + u w) - d_c) u,  g = -d_g w - d_b/S u^2 w + kappa0
                      with S = d_b + d, the quasi-steady reduction of ``carcinogenesis3``.

For ``gierer_meinhardt`` the time scale ``tau`` of the inhibitor is folded into
the kinetics and the diffusion coefficient, so ``D = D_v / tau``.
"""
from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Callable, Mapping

import numpy as np

__all__ = [
    "DomainError",
    "ParameterError",
    "KineticModel",
    "GrayScott",
    "GiererMeinhardt",
    "Carcinogenesis2",
    "ExpressionModel",
    "ThreeSpeciesModel",
    "Carcinogenesis3",
    "builtin",
    "eval_f",
    "eval_g",
    "jacobian",
    "expression_model",
    "load_model",
    "model_from_section",
    "BUILTINS",
]

# negative values down to this are treated as roundoff in the admissible check
NEG_TOL = 1e-9


class DomainError(ValueError):
    """Evaluation outside the admissible region of a model."""


class ParameterError(ValueError):
    """Missing or invalid model parameter."""


def _frozen(params: Mapping[str, float]) -> Mapping[str, float]:
    return MappingProxyType({k: float(v) for k, v in params.items()})


@dataclass(frozen=True)
class KineticModel:
    """Base class: a pair (f, g) with exact Jacobian and a diffusion constant."""

    name: str
    params: Mapping[str, float]
    diffusion: float = 1.0
    nonnegative: bool = True

    def f(self, u, v):
        raise NotImplementedError

    def g(self, u, v):
        raise NotImplementedError

    def partials(self, u, v):
        """Return ``(f_u, f_v, g_u, g_v)`` evaluated at ``(u, v)``."""
        raise NotImplementedError

    def check_domain(self, u, v) -> None:
        if not self.nonnegative:
            return
        if isinstance(u, float) and isinstance(v, float):
            if u < -NEG_TOL or v < -NEG_TOL:
                raise DomainError(f"{self.name}: state outside the nonnegative orthant")
            return
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if np.any(u < -NEG_TOL) or np.any(v < -NEG_TOL):
            raise DomainError(f"{self.name}: state outside the nonnegative orthant")

    def rhs(self, u, v):
        return self.f(u, v), self.g(u, v)

    def jacobian(self, u, v) -> np.ndarray:
        fu, fv, gu, gv = self.partials(u, v)
        return np.array([[fu, fv], [gu, gv]], dtype=float)

    @property
    def has_zero_branch(self) -> bool:
        """True when f(0, v) = 0 for every v (Malthusian form f = r(u, v) u)."""
        return False

    def __getitem__(self, key: str) -> float:
        return self.params[key]


def _require(name: str, params: Mapping[str, float], keys, positive=True) -> None:
    for key in keys:
        if key not in params:
            raise ParameterError(f"{name}: missing parameter '{key}'")
        val = float(params[key])
        if not math.isfinite(val):
            raise ParameterError(f"{name}: parameter '{key}' is not finite")
        if positive and val <= 0:
            raise ParameterError(f"{name}: parameter '{key}' must be positive, got {val}")


@dataclass(frozen=True)
class GrayScott(KineticModel):
    def f(self, u, v):
        self.check_domain(u, v)
        bk = self.params["B"] + self.params["k"]
        return -bk * u + u * u * v

    def g(self, u, v):
        self.check_domain(u, v)
        B = self.params["B"]
        return -u * u * v + B * (1.0 - v)

    def partials(self, u, v):
        self.check_domain(u, v)
        B, k = self.params["B"], self.params["k"]
        fu = -(B + k) + 2.0 * u * v
        fv = u * u
        gu = -2.0 * u * v
        gv = -u * u - B
        return fu, fv, gu, gv

    @property
    def has_zero_branch(self) -> bool:
        return True


@dataclass(frozen=True)
class GiererMeinhardt(KineticModel):
    def check_domain(self, u, v) -> None:
        super().check_domain(u, v)
        if (v <= 0) if isinstance(v, float) else np.any(np.asarray(v) <= 0):
            raise DomainError("gierer_meinhardt: inhibitor v must be positive")

    def _uv(self, u, v):
        self.check_domain(u, v)
        # clip roundoff negatives so fractional powers stay real
        return np.maximum(u, 0.0), v

    def f(self, u, v):
        u, v = self._uv(u, v)
        p, q = self.params["p"], self.params["q"]
        return -u + u**p / v**q

    def g(self, u, v):
        u, v = self._uv(u, v)
        r, s, tau = self.params["r"], self.params["s"], self.params["tau"]
        return (-v + u**r / v**s) / tau

    def partials(self, u, v):
        u, v = self._uv(u, v)
        p, q = self.params["p"], self.params["q"]
        r, s, tau = self.params["r"], self.params["s"], self.params["tau"]
        fu = -1.0 + p * u ** (p - 1.0) / v**q
        fv = -q * u**p / v ** (q + 1.0)
        gu = r * u ** (r - 1.0) / v**s / tau
        gv = (-1.0 - s * u**r / v ** (s + 1.0)) / tau
        return fu, fv, gu, gv

    @property
    def Q(self) -> float:
        """Exponent of the reduced problem V'' - V + V^Q = 0."""
        p, q, r, s = (self.params[k] for k in "pqrs")
        return q * r / (p - 1.0) - s


@dataclass(frozen=True)
class Carcinogenesis2(KineticModel):
    """Two-species model of early carcinogenesis in variables (u, w)."""

    def _S(self):
        return self.params["d_b"] + self.params["d"]

    def check_domain(self, u, v) -> None:
        super().check_domain(u, v)
        if isinstance(u, float) and isinstance(v, float):
            if self._S() + u * v == 0:
                raise DomainError("carcinogenesis2: singular denominator S + u w = 0")
        elif np.any(self._S() + np.asarray(u) * np.asarray(v) == 0):
            raise DomainError("carcinogenesis2: singular denominator S + u w = 0")

    def f(self, u, w):
        self.check_domain(u, w)
        a, dc, S = self.params["a"], self.params["d_c"], self._S()
        return (a * u * w / (S + u * w) - dc) * u

    def g(self, u, w):
        self.check_domain(u, w)
        p = self.params
        S = self._S()
        return -p["d_g"] * w - p["d_b"] / S * u * u * w + p["kappa0"]

    def partials(self, u, w):
        self.check_domain(u, w)
        p = self.params
        a, dc, S = p["a"], p["d_c"], self._S()
        den = S + u * w
        fu = a * u * w / den - dc + a * u * w * S / den**2
        fv = a * u * u * S / den**2
        gu = -2.0 * p["d_b"] / S * u * w
        gv = -p["d_g"] - p["d_b"] / S * u * u
        return fu, fv, gu, gv

    @property
    def has_zero_branch(self) -> bool:
        return True


# --- expression-defined models ------------------------------------------------

_ALLOWED_NODES = None


def _check_grammar(expr) -> None:
    import sympy as sp

    global _ALLOWED_NODES
    if _ALLOWED_NODES is None:
        _ALLOWED_NODES = (sp.Add, sp.Mul, sp.Pow, sp.Symbol, sp.Number,
                          sp.core.numbers.NegativeOne, sp.core.numbers.Half)
    for node in sp.preorder_traversal(expr):
        if not isinstance(node, _ALLOWED_NODES):
            raise ParameterError(f"unsupported construct in kinetic expression: {node}")


@dataclass(frozen=True)
class ExpressionModel(KineticModel):
    """Model whose f and g are arithmetic expressions in ``u``, ``v`` and parameters.

    Only ``+ - * / **`` and numeric literals are accepted; derivatives are
    exact (symbolic).
    """

    f_expr: str = "0"
    g_expr: str = "0"
    _funcs: tuple = field(default=(), compare=False, repr=False)

    def _eval(self, i, u, v):
        self.check_domain(u, v)
        out = self._funcs[i](u, v)
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(u, v).shape) * 1.0

    def f(self, u, v):
        return self._eval(0, u, v)

    def g(self, u, v):
        return self._eval(1, u, v)

    def partials(self, u, v):
        return tuple(self._eval(i, u, v) for i in range(2, 6))

    @property
    def has_zero_branch(self) -> bool:
        vs = np.linspace(0.0, 10.0, 41)
        return bool(np.all(self.f(np.zeros_like(vs), vs) == 0.0))


def expression_model(f_expr: str, g_expr: str, params: Mapping[str, float] | None = None,
                     diffusion: float = 1.0, name: str = "custom",
                     nonnegative: bool = False) -> ExpressionModel:
    """Build a model from expression strings, e.g. ``expression_model("u - v", "0")``."""
    import sympy as sp
    from sympy.parsing.sympy_parser import parse_expr, standard_transformations

    params = dict(params or {})
    u, v = sp.symbols("u v", real=True)
    local = {"u": u, "v": v}
    for key in params:
        if key in ("u", "v"):
            raise ParameterError("parameter names 'u' and 'v' are reserved")
        local[key] = sp.Symbol(key, real=True)

    exprs = []
    for text in (f_expr, g_expr):
        try:
            expr = parse_expr(text.replace("^", "**"), local_dict=local, global_dict={
                "Integer": sp.Integer, "Float": sp.Float, "Rational": sp.Rational,
                "Symbol": sp.Symbol}, transformations=standard_transformations,
                evaluate=True)
        except Exception as exc:  # sympy raises a zoo of types here
            raise ParameterError(f"cannot parse kinetic expression {text!r}: {exc}") from exc
        free = {s.name for s in expr.free_symbols} - {"u", "v"}
        if free - set(params):
            raise ParameterError(f"undefined symbols {sorted(free - set(params))} in {text!r}")
        _check_grammar(expr)
        exprs.append(expr.subs({local[k]: val for k, val in params.items()}))

    fe, ge = exprs
    derivs = [sp.diff(fe, u), sp.diff(fe, v), sp.diff(ge, u), sp.diff(ge, v)]
    funcs = tuple(sp.lambdify((u, v), e, modules="numpy") for e in [fe, ge, *derivs])
    return ExpressionModel(name=name, params=_frozen(params), diffusion=float(diffusion),
                           nonnegative=nonnegative, f_expr=f_expr, g_expr=g_expr,
                           _funcs=funcs)


# --- three-species system -----------------------------------------------------

@dataclass(frozen=True)
class ThreeSpeciesModel:
    """Right-hand sides of a u/v/w system where v relaxes on the time scale eps."""

    name: str
    params: Mapping[str, float]
    eps: float
    diffusion: float = 1.0

    def rhs_u(self, u, v, w):
        raise NotImplementedError

    def rhs_v(self, u, v, w):
        """Right-hand side of ``eps * v_t``."""
        raise NotImplementedError

    def rhs_w(self, u, v, w):
        """Reaction part of the w equation (without diffusion)."""
        raise NotImplementedError


@dataclass(frozen=True)
class Carcinogenesis3(ThreeSpeciesModel):
    def _S(self):
        return self.params["d_b"] + self.params["d"]

    def rhs_u(self, u, v, w):
        p = self.params
        den = u + v
        if np.any(den == 0):
            raise DomainError("carcinogenesis3: u + v = 0")
        return (p["a"] * v / den - p["d_c"]) * u

    def rhs_v(self, u, v, w):
        return -self._S() * v + u * u * w

    def rhs_w(self, u, v, w):
        p = self.params
        return -p["d_g"] * w - u * u * w + p["d"] * v + p["kappa0"]

    def quasi_steady_v(self, u, w):
        """Fast-variable elimination v = u^2 w / (d_b + d)."""
        return u * u * w / self._S()

    def reduced(self) -> Carcinogenesis2:
        keys = ("a", "d_c", "d_b", "d", "d_g", "kappa0")
        return builtin("carcinogenesis2", {**{k: self.params[k] for k in keys},
                                           "D": self.diffusion})

    @property
    def eps_max(self) -> float:
        """Upper end of the admissible eps range (d_b + d) / (2 d_g)."""
        return self._S() / (2.0 * self.params["d_g"])


# --- registry -----------------------------------------------------------------

def _gray_scott(params):
    _require("gray_scott", params, ("B", "k"))
    D = params.get("D", 1.0)
    _require("gray_scott", {"D": D}, ("D",))
    return GrayScott("gray_scott", _frozen({k: params[k] for k in ("B", "k")}), float(D))


def _gierer_meinhardt(params):
    name = "gierer_meinhardt"
    _require(name, params, ("p", "q", "r", "tau"))
    _require(name, {"s": params.get("s", 0.0)}, ("s",), positive=False)
    s = float(params.get("s", 0.0))
    if float(params["p"]) <= 1.0:
        raise ParameterError(f"{name}: exponent p must exceed 1")
    if s < 0:
        raise ParameterError(f"{name}: exponent s must be nonnegative")
    Dv = float(params.get("D", 1.0))
    _require(name, {"D": Dv}, ("D",))
    p = {k: float(params[k]) for k in ("p", "q", "r", "tau")}
    p["s"] = s
    return GiererMeinhardt(name, _frozen(p), Dv / p["tau"])


_C_KEYS = ("a", "d_c", "d_b", "d", "d_g", "kappa0")


def _carcinogenesis2(params):
    _require("carcinogenesis2", params, _C_KEYS)
    D = float(params.get("D", 1.0))
    _require("carcinogenesis2", {"D": D}, ("D",))
    return Carcinogenesis2("carcinogenesis2", _frozen({k: params[k] for k in _C_KEYS}), D)


def _carcinogenesis3(params):
    _require("carcinogenesis3", params, _C_KEYS + ("eps",))
    D = float(params.get("D", 1.0))
    _require("carcinogenesis3", {"D": D}, ("D",))
    return Carcinogenesis3("carcinogenesis3", _frozen({k: params[k] for k in _C_KEYS}),
                           float(params["eps"]), D)


BUILTINS: dict[str, Callable] = {
    "gray_scott": _gray_scott,
    "gierer_meinhardt": _gierer_meinhardt,
    "carcinogenesis2": _carcinogenesis2,
    "carcinogenesis3": _carcinogenesis3,
}

# demonstration defaults; none of these values come from experiments in the literature
DEFAULT_PARAMS: dict[str, dict[str, float]] = {
    "gray_scott": {"B": 0.1, "k": 0.02},
    "gierer_meinhardt": {"p": 2.0, "q": 1.0, "r": 2.0, "s": 0.0, "tau": 0.1},
    "carcinogenesis2": {"a": 2.0, "d_c": 1.0, "d_b": 1.0, "d": 1.0, "d_g": 1.0, "kappa0": 4.0},
    "carcinogenesis3": {"a": 2.0, "d_c": 1.0, "d_b": 1.0, "d": 1.0, "d_g": 1.0, "kappa0": 4.0,
                        "eps": 0.05},
}


PARAM_KEYS: dict[str, tuple[str, ...]] = {
    "gray_scott": ("B", "k", "D"),
    "gierer_meinhardt": ("p", "q", "r", "s", "tau", "D"),
    "carcinogenesis2": _C_KEYS + ("D",),
    "carcinogenesis3": _C_KEYS + ("eps", "D"),
}


def builtin(name: str, params: Mapping[str, float] | None = None):
    """Instantiate a built-in model; ``params=None`` selects the demonstration defaults."""
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ParameterError(f"unknown model '{name}'; choose from {sorted(BUILTINS)}") from None
    merged = dict(DEFAULT_PARAMS[name]) if params is None else dict(params)
    return factory(merged)


def eval_f(model: KineticModel, u, v):
    out = model.f(u, v)
    return float(out) if np.ndim(out) == 0 else out


def eval_g(model: KineticModel, u, v):
    out = model.g(u, v)
    return float(out) if np.ndim(out) == 0 else out


def jacobian(model: KineticModel, u: float, v: float) -> np.ndarray:
    """2x2 matrix [[f_u, f_v], [g_u, g_v]] at a single point."""
    return model.jacobian(float(u), float(v))


# --- configuration ------------------------------------------------------------

def model_from_section(section: Mapping[str, str]):
    """Build a model from a flat ``key = value`` mapping (one config section).

    Recognised keys: ``name``, ``f``, ``g`` (expressions for ``name = custom``),
    ``nonnegative`` and any numeric parameter.
    """
    items = dict(section)
    name = items.pop("name", None)
    if name is None:
        raise ParameterError("model section needs a 'name'")
    f_expr = items.pop("f", None)
    g_expr = items.pop("g", None)
    nonneg = items.pop("nonnegative", "false").strip().lower() in ("1", "true", "yes")
    params = {}
    for key, val in items.items():
        try:
            params[key] = float(val)
        except ValueError:
            raise ParameterError(f"parameter '{key}' is not a number: {val!r}") from None
    if name == "custom":
        if f_expr is None or g_expr is None:
            raise ParameterError("custom model needs both 'f' and 'g' expressions")
        D = params.pop("D", 1.0)
        return expression_model(f_expr, g_expr, params, diffusion=D, nonnegative=nonneg)
    if f_expr is not None or g_expr is not None:
        raise ParameterError("expressions 'f'/'g' are only accepted for name = custom")
    if name in PARAM_KEYS:
        unknown = set(params) - set(PARAM_KEYS[name])
        if unknown:
            raise ParameterError(f"{name}: unknown parameter(s) {sorted(unknown)}")
    base = dict(DEFAULT_PARAMS.get(name, {}))
    base.update(params)
    return builtin(name, base)


def load_model(path: str | Path, section: str = "model"):
    cp = configparser.ConfigParser()
    cp.optionxform = str
    with open(path, encoding="utf-8") as fh:
        cp.read_file(fh)
    if section not in cp:
        raise ParameterError(f"{path}: no [{section}] section")
    return model_from_section(cp[section])
