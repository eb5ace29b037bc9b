"""``kl-gauss`` command-line front end.

Exit codes: 0 success (converged), 1 success without convergence,
2 configuration error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import config as C
from .errors import (
    InfiniteDivergenceError,
    InvalidArgumentError,
    KLGaussError,
    NotPositiveError,
    ResolutionError,
    UnsupportedMethodError,
)
from .interpolation import convexity_check, kappa_for_target
from .measures import log_normalizer_mc
from .optimize import convergence_certificate, minimize, minimize_mixture, multistart
from .parameterization import (
    assemble_covariance,
    feldman_hajek_report,
    form_bound_constants,
    precision_equivalence_check,
)
from .scenarios import (
    BIFURCATION_COLUMNS,
    FOLD_EPSILON,
    SEQUENCE_COLUMNS,
    bifurcation_sweep,
    critical_point_counts,
    find_crossover,
    max_resolved_index,
    mollifier_l2_sq,
    sequence_study,
)

EXIT_OK, EXIT_NOT_CONVERGED, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

SUBCOMMANDS = {
    "double-well": "double_well",
    "approximate": "approximate",
    "mixture": "mixture",
    "interpolate": "interpolate",
    "diagnose": "diagnose",
    "sequence-study": "sequence_study",
}

NUMERIC_ERRORS = (NotPositiveError, ResolutionError, InfiniteDivergenceError, UnsupportedMethodError, np.linalg.LinAlgError)


class ConfigError(Exception):
    """Configuration problems, reported as line items."""

    def __init__(self, items):
        super().__init__("; ".join(items))
        self.items = list(items)


# --------------------------------------------------------------------------
# serialisation
# --------------------------------------------------------------------------


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def render_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_cell(r[c]) for c in columns])
    return buf.getvalue()


def render_json(obj) -> str:
    return json.dumps(jsonable(obj), indent=2) + "\n"


def write_atomic(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def output_paths(out: str) -> dict:
    p = Path(out)
    if p.suffix == ".csv":
        stem = p.with_suffix("")
        return {
            "csv": p,
            "resolved": stem.parent / f"{stem.name}.resolved.json",
            "summary": stem.parent / f"{stem.name}.summary.json",
        }
    return {"csv": p / "results.csv", "resolved": p / "resolved_config.json", "summary": p / "summary.json"}


# --------------------------------------------------------------------------
# config loading
# --------------------------------------------------------------------------


def load_config(path, scenario, overrides, seed=None, eps_grid=None) -> C.RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError([f"config file not found: {path}"]) from None
        except json.JSONDecodeError as exc:
            raise ConfigError([f"config file is not valid JSON: {exc}"]) from None
        if not isinstance(raw, dict):
            raise ConfigError(["config file must hold a JSON object"])
    if scenario is not None:
        if raw.get("scenario", scenario) != scenario:
            raise ConfigError([f"config scenario {raw['scenario']!r} does not match subcommand {scenario!r}"])
        raw["scenario"] = scenario
    try:
        C.apply_overrides(raw, overrides)
    except InvalidArgumentError as exc:
        raise ConfigError([str(exc)]) from None
    if seed is not None:
        raw["seed"] = seed
    if eps_grid is not None:
        raw.setdefault("double_well", {})["eps_grid"] = eps_grid
    try:
        return C.RunConfig.model_validate(raw)
    except ValidationError as exc:
        items = []
        for e in exc.errors():
            loc = ".".join(str(x) for x in e["loc"]) or "<root>"
            items.append(f"{loc}: {e['msg']}")
        raise ConfigError(items) from None


# --------------------------------------------------------------------------
# scenarios
# --------------------------------------------------------------------------


def _prepare(cfg: C.RunConfig) -> dict:
    """Build every object the scenario needs; raises on precondition failures."""
    ctx: dict = {}
    if cfg.scenario == "double_well":
        ctx["grid"] = C.parse_eps_grid(cfg.double_well.eps_grid)
        return ctx
    basis = C.build_basis(cfg.basis)
    ctx["basis"] = basis
    if cfg.scenario == "sequence_study":
        sc = cfg.sequence_study
        if basis.kind != "bridge":
            raise InvalidArgumentError("sequence studies run on the bridge basis")
        limit = max_resolved_index(sc.family, basis)
        bad = [n for n in sc.n_list if n > limit or n < 1]
        if bad:
            raise ResolutionError(f"n values {bad} exceed the resolution limit n <= {limit} for this grid")
        return ctx
    ctx["target"] = C.build_target(cfg, basis)
    family = C.build_family(cfg.family, basis)
    ctx["family"] = family
    ctx["reg"] = C.build_regularization(cfg)
    ctx["opts"] = C.build_solve_options(cfg)
    inits = cfg.starts or [cfg.init]
    ctx["inits"] = [
        (C.build_mean(i.mean, basis), C.build_shift(family, basis, i.shift_value, i.shift_data)) for i in inits
    ]
    if cfg.scenario == "interpolate":
        ctx["endpoints"] = [
            assemble_covariance(C.build_shift(family, basis, e.shift_value, e.shift_data), C.build_mean(e.mean, basis), basis)
            for e in cfg.interpolate.endpoints
        ]
    if cfg.scenario == "mixture":
        mc = cfg.mixture
        K = mc.n_components
        weights = np.full(K, 1.0 / K) if mc.weights is None else np.asarray(mc.weights, dtype=float)
        if mc.means is None:
            means = [np.zeros(basis.mode_count) for _ in range(K)]
            offsets = np.linspace(-0.5, 0.5, K) if K > 1 else [0.0]
            for m, o in zip(means, offsets):
                m[0] = o
        else:
            means = [C.build_mean(m, basis) for m in mc.means]
        values = [0.0] * K if mc.shift_values is None else mc.shift_values
        if len(weights) != K or len(means) != K or len(values) != K:
            raise InvalidArgumentError("mixture weights, means and shift_values need one entry per component")
        ctx["mixture_init"] = {
            "weights": weights,
            "means": means,
            "shifts": [C.build_shift(family, basis, v) for v in values],
        }
    return ctx


def run_double_well(cfg, ctx):
    rows = bifurcation_sweep(ctx["grid"])
    counts = critical_point_counts(rows)
    distinct = sorted(set(counts.values()))
    summary = {
        "crossover_epsilon": find_crossover(),
        "fold_epsilon": FOLD_EPSILON,
        "epsilon_count": len(counts),
        "critical_point_counts": {str(k): sum(1 for v in counts.values() if v == k) for k in distinct},
        "count_note": "closed-form count: 5 critical points for eps < 1/6, 3 at eps = 1/6, 1 beyond",
    }
    return BIFURCATION_COLUMNS, rows, summary, True


TRACE_COLUMNS = ("iteration", "total", "gradient_norm", "margin", "mean_step", "shift_step")


def run_approximate(cfg, ctx):
    target, family, reg, opts = ctx["target"], ctx["family"], ctx["reg"], ctx["opts"]
    starts = []
    if cfg.starts:
        sols = multistart(target, family, ctx["inits"], reg, opts)
        best = sols[0]
        starts = [{"start_index": s.start_index, "total": s.objective.total, "converged": s.converged} for s in sols]
    else:
        best = minimize(target, family, ctx["inits"][0], reg, opts)
    rows = [r.__dict__ for r in best.trace]
    summary = best.summary()
    summary["mean"] = best.mean
    summary["shift"] = best.shift.to_dict()
    summary["feldman_hajek"] = feldman_hajek_report(best.shift, target.basis).as_dict()
    if len(best.tail) >= 3:
        summary["certificate"] = convergence_certificate(best.tail_measures(), best.measure()).as_dict()
    if starts:
        summary["distinct_solutions"] = starts
    return TRACE_COLUMNS, rows, summary, best.converged


def run_mixture(cfg, ctx):
    sol = minimize_mixture(
        ctx["target"], ctx["family"], cfg.mixture.n_components, ctx["mixture_init"], C.build_mixture_options(cfg)
    )
    summary = sol.summary()
    summary["means"] = sol.means
    summary["shifts"] = [s.to_dict() for s in sol.shifts]
    return ("iteration", "total", "gradient_norm"), sol.trace, summary, sol.converged


def run_interpolate(cfg, ctx):
    target = ctx["target"]
    kappa = cfg.interpolate.kappa
    if kappa is None:
        kappa = kappa_for_target(target)
    nu1, nu2 = ctx["endpoints"]
    rep = convexity_check(nu1, nu2, target, cfg.interpolate.t_grid, kappa, ctx["opts"].method)
    rows = [
        {"t": t, "curve": d, "chord": c, "margin": m} for t, d, c, m in zip(rep.t, rep.curve, rep.chord, rep.margins)
    ]
    summary = rep.as_dict()
    summary["inequality_holds"] = bool(rep.min_margin >= -1e-8)
    return ("t", "curve", "chord", "margin"), rows, summary, True


def run_diagnose(cfg, ctx):
    basis, target = ctx["basis"], ctx["target"]
    mean, shift = ctx["inits"][0]
    fh = feldman_hajek_report(shift, basis)
    n0 = max(1, basis.mode_count // 4)
    delta, K = form_bound_constants(shift, basis, n0)
    logz, se = log_normalizer_mc(target, cfg.diagnose.log_normalizer_samples, cfg.seed)
    summary = {
        "feldman_hajek": fh.as_dict(),
        "form_bound": {"n0": n0, "delta": delta, "K": K},
        "log_normalizer": {"estimate": logz, "standard_error": se},
    }
    if shift.variant == "multiplication":
        rep = precision_equivalence_check(shift.data, basis, cfg.diagnose.equivalence_samples, cfg.seed)
        summary["precision_equivalence"] = rep.as_dict()
    rows = [{"modes": k, "weighted_hs_norm": v} for k, v in fh.growth.items()]
    return ("modes", "weighted_hs_norm"), rows, summary, True


def run_sequence_study(cfg, ctx):
    sc = cfg.sequence_study
    rows = sequence_study(sc.family, sc.n_list, sc.delta, sc.r, ctx["basis"])
    kl = [r["kl_to_limit"] for r in rows]
    hs = [r["weighted_hs_norm"] for r in rows]
    reg = [r["regularized_norm"] for r in rows]
    summary = {
        "family": sc.family,
        "kl_decreasing": bool(all(b < a for a, b in zip(kl, kl[1:]))),
        "kl_last": kl[-1],
        "weighted_hs_variation": (max(hs) - min(hs)) / max(hs),
        "regularized_norm_range": [min(reg), max(reg)],
    }
    if sc.family == "mollifier":
        summary["l2_ratio_to_n_int_phi_sq"] = [r["l2_norm_sq"] / (r["n"] * mollifier_l2_sq()) for r in rows]
    return SEQUENCE_COLUMNS, rows, summary, all(r["regularized_converged"] for r in rows)


RUNNERS = {
    "double_well": run_double_well,
    "approximate": run_approximate,
    "mixture": run_mixture,
    "interpolate": run_interpolate,
    "diagnose": run_diagnose,
    "sequence_study": run_sequence_study,
}


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kl-gauss", description="Gaussian approximation by KL minimisation.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in list(SUBCOMMANDS) + ["validate"]:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--out", help="output directory, or a .csv path with sidecar JSON files")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="dotted-path override")
        sp.add_argument("--eps-grid", help="epsilon grid start:stop:step (double-well)")
    return p


def _err(msg: str):
    print(msg, file=sys.stderr)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    scenario = SUBCOMMANDS.get(args.command)
    if args.command == "validate" and args.config is None:
        _err("config error: validate needs --config")
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, scenario, args.set, args.seed, args.eps_grid)
    except ConfigError as exc:
        _err("config error:")
        for item in exc.items:
            _err(f"  - {item}")
        return EXIT_CONFIG

    if args.command == "validate":
        try:
            _prepare(cfg)
        except (KLGaussError, ValueError) as exc:
            _err(f"config error:\n  - {exc}")
            return EXIT_CONFIG
        print(render_json(cfg.model_dump()), end="")
        print("valid", file=sys.stderr)
        return EXIT_OK

    try:
        ctx = _prepare(cfg)
        columns, rows, summary, converged = RUNNERS[cfg.scenario](cfg, ctx)
    except NUMERIC_ERRORS as exc:
        _err(f"numeric failure: {exc}")
        return EXIT_NUMERIC
    except (InvalidArgumentError, ValueError) as exc:
        _err(f"config error:\n  - {exc}")
        return EXIT_CONFIG

    summary = {"scenario": cfg.scenario, "converged": bool(converged), **summary}
    paths = output_paths(args.out or f"klgauss-{cfg.scenario.replace('_', '-')}")
    write_atomic(paths["resolved"], render_json(cfg.model_dump()))
    write_atomic(paths["csv"], render_csv(columns, rows))
    write_atomic(paths["summary"], render_json(summary))
    print(f"wrote {paths['csv']}")
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
