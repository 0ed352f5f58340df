"""Command-line experiment runner.

Usage::

    rdode SUBCOMMAND --config FILE [--out DIR] [--svg] [--seed INT] [--threads INT]

Subcommands are ``steady``, ``shoot``, ``spectrum``, ``evolve``, ``reduce`` and
``report``. The config is an INI file; see ``docs/config.md`` for the schema.
Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import LinAlgError

from . import evolve, profile1d, spectrum, steady
from .kinetics import DomainError, ParameterError, model_from_section

log = logging.getLogger("rdode")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICS, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    """Invalid or incomplete experiment configuration."""


_NUMERIC_ERRORS = (profile1d.BVPError, profile1d.ShootingError, profile1d.FoldError,
                   spectrum.BracketError, evolve.StepError, evolve.SaturationError,
                   LinAlgError, DomainError, FloatingPointError)

# section -> key -> (type, default, constraint); default None means required when the section is used
_POS, _NONNEG, _ANY = "positive", "nonnegative", None
SCHEMA = {
    "domain": {"L": (float, 1.0, _POS), "N": (int, 400, _POS)},
    "search": {"umin": (float, 0.0, _ANY), "umax": (float, None, _ANY),
               "vmin": (float, 0.0, _ANY), "vmax": (float, None, _ANY),
               "grid": (int, 64, _POS)},
    "shoot": {"v_min": (float, None, _ANY), "v_max": (float, None, _ANY),
              "seed_u": (float, 1.0, _ANY), "branch_min": (float, math.nan, _ANY),
              "branch_max": (float, math.nan, _ANY), "n_modes": (int, 0, _NONNEG),
              "index": (int, 0, _NONNEG)},
    "spectrum": {"count": (int, 5, _POS), "profile": (str, "", _ANY),
                 "dense": (bool, True, _ANY)},
    "evolve": {"dt": (float, 0.05, _POS), "T": (float, 80.0, _POS),
               "amplitude": (float, 1e-4, _NONNEG), "probe": (str, "random", _ANY),
               "seed": (int, 0, _NONNEG)},
    "reduce": {"eps": (str, "0.1, 0.05, 0.025, 0.0125", _ANY), "T": (float, 2.0, _POS),
               "N": (int, 200, _POS), "dt": (float, 1e-3, _POS), "L": (float, 1.0, _POS),
               "v0": (str, "consistent", _ANY)},
    "output": {"dir": (str, "out", _ANY)},
}


@dataclass
class ExperimentConfig:
    model_section: dict
    sections: dict = field(default_factory=dict)
    present: set = field(default_factory=set)

    def get(self, section, key):
        return self.sections[section][key]

    def model(self):
        try:
            return model_from_section(self.model_section)
        except ParameterError as exc:
            raise ConfigError(str(exc)) from None


def _convert(section, key, raw, typ, constraint):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError
            val = low in ("true", "yes", "1")
        else:
            val = typ(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {typ.__name__}") from None
    if constraint == _POS and not val > 0:
        raise ConfigError(f"[{section}] {key} must be positive")
    if constraint == _NONNEG and not val >= 0:
        raise ConfigError(f"[{section}] {key} must be nonnegative")
    return val


def load_config(path: str | Path) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    unknown = set(cp.sections()) - set(SCHEMA) - {"model"}
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}")
    if "model" not in cp:
        raise ConfigError("config needs a [model] section")
    sections, present = {}, set(cp.sections())
    for name, keys in SCHEMA.items():
        raw = dict(cp[name]) if name in cp else {}
        extra = set(raw) - set(keys)
        if extra:
            raise ConfigError(f"[{name}] unknown key(s) {sorted(extra)}")
        vals = {}
        for key, (typ, default, constraint) in keys.items():
            if key in raw:
                vals[key] = _convert(name, key, raw[key], typ, constraint)
            elif default is None and name in present:
                raise ConfigError(f"[{name}] missing required key '{key}'")
            else:
                vals[key] = default
        sections[name] = vals
    return ExperimentConfig(dict(cp["model"]), sections, present)


# --- subcommands ------------------------------------------------------------------------

def _box(cfg):
    s = cfg.sections["search"]
    if "search" not in cfg.present:
        raise ConfigError("steady needs a [search] section")
    box = (s["umin"], s["umax"], s["vmin"], s["vmax"])
    if not (box[1] > box[0] and box[3] > box[2]):
        raise ConfigError("[search] box must have umax > umin and vmax > vmin")
    return box


def run_steady(cfg, out: Path, args) -> int:
    model = cfg.model()
    diag: list = []
    states = steady.find_constant_states(model, _box(cfg), grid=cfg.get("search", "grid"),
                                         diagnostics=diag)
    steady.write_states_csv(states, out / "states.csv")
    if not states:
        log.warning("no constant states in the search box")
    print(f"{len(states)} constant state(s) for {model.name}")
    for s in states:
        flag = " DDI" if s.ddi else ""
        print(f"  ubar={s.ubar:.10g} vbar={s.vbar:.10g} {s.kinetic_class}{flag} "
              f"det/f_u={s.touch_value:.6g}")
    if diag:
        print(f"  {len(diag)} Newton start(s) did not converge")
    if model.name == "carcinogenesis2":
        eq = steady.carcinogenesis_equilibria(model)
        if eq.exists:
            print(f"  closed forms: (u-,w-)=({eq.u_minus:.10g},{eq.w_minus:.10g}) {eq.minus_class}; "
                  f"(u+,w+)=({eq.u_plus:.10g},{eq.w_plus:.10g}) {eq.plus_class}")
        else:
            print(f"  closed forms: kappa0^2 <= Theta={eq.theta:.6g}, no positive states")
    return EXIT_OK


def _shoot(cfg):
    if "shoot" not in cfg.present:
        raise ConfigError("a [shoot] section is required")
    model = cfg.model()
    sh = cfg.sections["shoot"]
    L, N = cfg.get("domain", "L"), cfg.get("domain", "N")
    bmin = sh["v_min"] if math.isnan(sh["branch_min"]) else sh["branch_min"]
    bmax = sh["v_max"] if math.isnan(sh["branch_max"]) else sh["branch_max"]
    if not bmax > bmin or not sh["v_max"] > sh["v_min"]:
        raise ConfigError("[shoot] ranges must be increasing")
    branch = profile1d.solve_branch(model, (bmin, bmax), sh["seed_u"])
    prob = profile1d.reduced_h(branch, model)
    profiles = profile1d.shoot_stationary(prob, L, (sh["v_min"], sh["v_max"]),
                                          sh["n_modes"] or None, N=N)
    return model, prob, profiles


def run_shoot(cfg, out: Path, args) -> int:
    model, prob, profiles = _shoot(cfg)
    print(f"{len(profiles)} non-constant profile(s) for {model.name} on [0, {profiles[0].L if profiles else cfg.get('domain', 'L')}]")
    for i, p in enumerate(profiles):
        profile1d.write_profile_csv(p, out / f"profile_{i}.csv")
        touched = profile1d.touched_states(p, prob)
        pos = [t for t in touched if t.positive]
        cond = profile1d.check_instability_conditions(p)
        print(f"  [{i}] V(0)={p.s0:.10g} laps={p.modes} V in [{p.V.min():.6g}, {p.V.max():.6g}] "
              f"residual={p.residual():.2e}")
        print(f"      touched vbar: " + ", ".join(
            f"{t.vbar:.6g} (h'={t.h_prime:.4g}{', marginal' if t.marginal else ''})" for t in touched)
              + f"; {len(pos)} with h' > 0")
        print(f"      f_u range [{cond.lambda0:.6g}, {cond.Lambda0:.6g}] "
              f"autocatalysis={cond.autocatalysis} compensation={cond.compensation}")
    if not profiles:
        log.warning("no non-constant profile found; try a longer domain or a wider range")
    return EXIT_OK


def _profile_for_spectrum(cfg):
    path = cfg.get("spectrum", "profile")
    if path:
        model = cfg.model()
        try:
            prof = profile1d.load_profile_csv(path, model)
        except FileNotFoundError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        return model, prof
    if "shoot" not in cfg.present:
        raise ConfigError("spectrum needs [spectrum] profile = PATH or a [shoot] section")
    model, _, profiles = _shoot(cfg)
    idx = cfg.get("shoot", "index")
    if idx >= len(profiles):
        raise profile1d.ShootingError(f"profile index {idx} not available ({len(profiles)} found)")
    return model, profiles[idx]


def run_spectrum(cfg, out: Path, args) -> int:
    model, prof = _profile_for_spectrum(cfg)
    rep = spectrum.compute_spectrum(prof, model, count=cfg.get("spectrum", "count"),
                                    dense=cfg.get("spectrum", "dense"))
    spectrum.write_spectrum_csv(rep, out / "spectrum.csv")
    if args.svg:
        spectrum.write_spectrum_svg(rep, out / "spectrum.svg", title=f"{model.name} spectrum")
    print(f"lambda0={rep.lambda0!r} Lambda0={rep.Lambda0!r}")
    print("lambda_n: " + (", ".join(f"{x:.10g}" for x in rep.lambda_seq) or "none"))
    gap = "none" if rep.gap is None else f"[{rep.gap[0]:.6g}, {rep.gap[1]:.6g}]"
    print(f"gap={gap} unstable={rep.unstable} dominant={rep.dominant:.6g}")
    return EXIT_OK


def run_evolve(cfg, out: Path, args) -> int:
    model, prof = _profile_for_spectrum(cfg)
    ev = cfg.sections["evolve"]
    seed = ev["seed"] if args.seed is None else args.seed
    rep = spectrum.compute_spectrum(prof, model, count=1, dense=prof.N <= spectrum.DENSE_MAX_N)
    tr = evolve.growth_experiment(prof, model, amplitude=ev["amplitude"], T=ev["T"],
                                  probe_mode=ev["probe"], dt=ev["dt"], seed=seed,
                                  predicted=rep.dominant)
    evolve.write_trace_csv(tr, out / "trace.csv")
    win = "n/a" if tr.window is None else f"[{tr.window[0]:.4g}, {tr.window[1]:.4g}]"
    print(f"fitted rate={tr.rate:.6g}  predicted={tr.predicted:.6g}  window={win}  R2={tr.r2:.5f}")
    return EXIT_OK


def _eps_list(text):
    try:
        vals = [float(s) for s in text.replace(";", ",").split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"[reduce] eps: cannot parse {text!r}") from None
    if not vals:
        raise ConfigError("[reduce] eps is empty")
    return vals


def run_reduce(cfg, out: Path, args) -> int:
    if cfg.model_section.get("name") != "carcinogenesis3":
        raise ConfigError("reduce needs [model] name = carcinogenesis3")
    model = cfg.model()
    r = cfg.sections["reduce"]
    eps = _eps_list(r["eps"])
    N = r["N"]
    v0 = r["v0"].strip()
    if v0 != "consistent":
        try:
            v0 = np.full(N, float(v0))
        except ValueError:
            raise ConfigError("[reduce] v0 must be 'consistent' or a number") from None
    params = {**model.params, "D": model.diffusion}
    try:
        rep = evolve.reduction_experiment(params, eps, T=r["T"], N=N, dt=r["dt"], L=r["L"],
                                          v0=v0, threads=args.threads)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    evolve.write_reduction_csv(rep, out / "reduction.csv")
    fmt = lambda s: "n/a" if math.isnan(s) else f"{s:.4f}"
    for e, a, b, c, d in zip(rep.eps, rep.err_u, rep.err_w, rep.err_v_int, rep.err_v_int_layer):
        print(f"eps={e:<8g} err_u={a:.4e} err_w={b:.4e} int_v={c:.4e} int_v(t>=10eps)={d:.4e}")
    print(f"slopes: u={fmt(rep.slope_u)} w={fmt(rep.slope_w)} v={fmt(rep.slope_v)} "
          f"v(t>=10eps)={fmt(rep.slope_v_layer)}")
    return EXIT_OK


def run_report(cfg, out: Path, args) -> int:
    """Run every subcommand the config has sections for."""
    ran = []
    if "search" in cfg.present and cfg.model_section.get("name") != "carcinogenesis3":
        run_steady(cfg, out, args)
        ran.append("steady")
    if "shoot" in cfg.present:
        run_shoot(cfg, out, args)
        run_spectrum(cfg, out, args)
        ran += ["shoot", "spectrum"]
        if "evolve" in cfg.present:
            run_evolve(cfg, out, args)
            ran.append("evolve")
    if "reduce" in cfg.present:
        run_reduce(cfg, out, args)
        ran.append("reduce")
    if not ran:
        raise ConfigError("nothing to report: add [search], [shoot] or [reduce]")
    (out / "report.txt").write_text("ran: " + " ".join(ran) + "\n", encoding="utf-8")
    return EXIT_OK


COMMANDS = {"steady": run_steady, "shoot": run_shoot, "spectrum": run_spectrum,
            "evolve": run_evolve, "reduce": run_reduce, "report": run_report}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rdode", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="INI experiment file")
    ap.add_argument("--out", default=None, help="output directory (overrides [output] dir)")
    ap.add_argument("--svg", action="store_true", help="also write SVG plots")
    ap.add_argument("--seed", type=int, default=None, help="seed for random perturbations")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for independent runs")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        out = Path(args.out if args.out is not None else cfg.get("output", "dir"))
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICS
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
