"""Command line front end.

Five workflows: ``generate`` synthetic data from a named preset,
``discover`` an energy model from a data file, ``check-convexity`` for a
given expression, ``robustness`` sweeps noise levels, and ``export-fit``
evaluates a model against data for plotting.

Exit codes: 0 success, 2 usage or configuration problem, 3 data problem,
4 numerical failure. Progress streams to stderr; results go to files
plus a short summary on stdout.
"""

from __future__ import annotations

import argparse
import configparser
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .convexity import (
    EmptyRange,
    convexity_report,
    energy_surface,
    normalize_energy,
    report_text,
)
from .datagen import (
    DomainViolation,
    GenerationRanges,
    NoiseSpec,
    ParseError,
    SchemaError,
    UnknownModel,
    add_noise,
    classical_model,
    generate_synthetic,
    load_datasets,
    preset_names,
    write_datasets,
)
from .dsl import DslSyntaxError, format_constant, format_expr, parse_canonical, pretty_expr
from .evolution import (
    ConfigError,
    DataError,
    GPConfig,
    ParetoFront,
    evolve,
    score_front,
    select_best,
)
from .expr import DomainError, complexity as expr_complexity, form_match
from .mechanics import LoadingMode
from .objective import (
    DataBundle,
    EnergyModel,
    Parameterization,
    ZeroMaxStress,
    ZeroVariance,
    normalize_model,
    predict_stress_curve,
    prediction_loss,
    r_squared,
)

USAGE_ERROR, DATA_ERROR, NUMERICAL_ERROR = 2, 3, 4

_DATA_ERRORS = (SchemaError, ParseError, DomainViolation, DataError, OSError)
_USAGE_ERRORS = (UnknownModel, ConfigError, DslSyntaxError)
_NUMERICAL_ERRORS = (DomainError, ZeroMaxStress, ZeroVariance, EmptyRange)


@dataclass
class RunConfig:
    """Resolved command settings: parameterization, search overrides and
    reporting knobs. File values come first, flags override."""

    param: Parameterization = Parameterization.INVARIANT
    seed: int = 0
    weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    report_digits: int = 4
    gp_overrides: dict = None
    grammar_overrides: dict = None

    def build_gp(self) -> GPConfig:
        grammar = self.param.default_grammar()
        if self.grammar_overrides:
            grammar = replace(grammar, **self.grammar_overrides)
        cfg = GPConfig(grammar=grammar, param=self.param, seed=self.seed)
        if self.gp_overrides:
            for key, value in self.gp_overrides.items():
                if not hasattr(cfg, key):
                    raise ConfigError(f"unknown search setting {key!r}")
                setattr(cfg, key, value)
        cfg.validate()
        return cfg


_GP_INT_KEYS = (
    "workers", "populations", "population_size", "iterations", "tournament_size",
    "opt_restarts", "opt_max_evals", "migration_interval", "init_depth",
)
_GP_FLOAT_KEYS = (
    "crossover_prob", "constant_scale", "opt_prob", "opt_tol", "migration_fraction",
    "front_inject_prob", "parsimony_decay", "parsimony_scale",
)
_GRAMMAR_INT_KEYS = ("max_complexity", "max_depth")


def load_config_file(path: str) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"bad config file {path}: {exc}") from None
    run = RunConfig(gp_overrides={}, grammar_overrides={})
    for section in parser.sections():
        if section == "run":
            for key, value in parser.items("run"):
                if key == "parameterization":
                    run.param = _parse_param(value)
                elif key == "seed":
                    run.seed = int(value)
                elif key == "weights":
                    parts = [float(v) for v in value.split(",")]
                    if len(parts) != 3:
                        raise ConfigError("weights needs three comma-separated values")
                    run.weights = tuple(parts)
                elif key == "report_digits":
                    run.report_digits = int(value)
                else:
                    raise ConfigError(f"unknown key {key!r} in [run]")
        elif section == "gp":
            for key, value in parser.items("gp"):
                if key in _GP_INT_KEYS:
                    run.gp_overrides[key] = int(value)
                elif key in _GP_FLOAT_KEYS:
                    run.gp_overrides[key] = float(value)
                elif key in ("loss_floor", "stagnation"):
                    run.gp_overrides[key] = None if value.lower() == "none" else (
                        float(value) if key == "loss_floor" else int(value)
                    )
                else:
                    raise ConfigError(f"unknown key {key!r} in [gp]")
        elif section == "grammar":
            for key, value in parser.items("grammar"):
                if key in _GRAMMAR_INT_KEYS:
                    run.grammar_overrides[key] = int(value)
                elif key == "exponent_range":
                    lo, hi = (int(v) for v in value.split(","))
                    run.grammar_overrides["exponent_range"] = (lo, hi)
                else:
                    raise ConfigError(f"unknown key {key!r} in [grammar]")
        else:
            raise ConfigError(f"unknown section [{section}]")
    return run


def _parse_param(text: str) -> Parameterization:
    try:
        return Parameterization(text.strip().lower())
    except ValueError:
        raise ConfigError(
            f"unknown parameterization {text!r}; choose invariant, stretch or strain"
        ) from None


def _resolve_run(args) -> RunConfig:
    run = load_config_file(args.config) if getattr(args, "config", None) else RunConfig(
        gp_overrides={}, grammar_overrides={}
    )
    if getattr(args, "param", None):
        run.param = _parse_param(args.param)
    if getattr(args, "seed", None) is not None:
        run.seed = args.seed
    if getattr(args, "weights", None):
        parts = [float(v) for v in args.weights.split(",")]
        if len(parts) != 3:
            raise ConfigError("--weights needs three comma-separated values")
        run.weights = tuple(parts)
    for key in ("populations", "iterations", "population_size", "tournament_size", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            run.gp_overrides[key] = value
    if getattr(args, "loss_floor", None) is not None:
        run.gp_overrides["loss_floor"] = args.loss_floor
    if getattr(args, "stagnation", None) is not None:
        run.gp_overrides["stagnation"] = args.stagnation
    return run


def _apply_weights(bundle: DataBundle, weights) -> DataBundle:
    for ds, w in zip(bundle.sets(), weights):
        ds.weight = w if len(ds) else 0.0
    return bundle


def _parse_interval(text: str, name: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--{name} expects lo,hi") from None
    return lo, hi


# ---------------------------------------------------------------------------
# Subcommands


def cmd_generate(args) -> int:
    model = classical_model(args.model)
    kwargs = {}
    if args.tension:
        kwargs["tension"] = _parse_interval(args.tension, "tension")
    if args.compression:
        kwargs["compression"] = _parse_interval(args.compression, "compression")
    if args.shear:
        kwargs["shear"] = _parse_interval(args.shear, "shear")
    if args.points:
        kwargs["points"] = args.points
    try:
        ranges = GenerationRanges(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    bundle = generate_synthetic(model, ranges)
    if args.noise:
        bundle = add_noise(bundle, NoiseSpec(sigma=args.noise, seed=args.seed or 0))
    write_datasets(bundle, args.out)
    print(f"model: {pretty_expr(model.expr)}" + (
        f" + {model.offset:.4g}" if model.offset else ""
    ))
    print(f"wrote {sum(len(ds) for ds in bundle.sets())} rows to {args.out}")
    return 0


def _progress_printer(every: int = 10):
    def emit(record):
        if record.generation % every == 0 and record.island == 0:
            print(record.line(), file=sys.stderr)

    return emit


def _fit_lines(model: EnergyModel, bundle: DataBundle, resolution: int = 0):
    """Per-mode (controls, observed, predicted [, dense grid rows])."""
    out = {}
    for ds in bundle.sets():
        if not len(ds):
            continue
        pred = predict_stress_curve(model, ds)
        rows = list(zip(ds.controls, ds.stresses, pred))
        dense_rows = []
        if resolution > 1:
            lo, hi = float(ds.controls.min()), float(ds.controls.max())
            grid = np.linspace(lo, hi, resolution)
            probe = replace_dataset_controls(ds, grid)
            dense = predict_stress_curve(model, probe)
            dense_rows = list(zip(grid, dense))
        out[ds.mode.value] = (rows, dense_rows)
    return out


def replace_dataset_controls(ds, controls):
    from .objective import LoadingDataSet

    return LoadingDataSet(mode=ds.mode, controls=controls,
                          stresses=np.zeros_like(controls), weight=ds.weight)


def _write_fit_files(out_dir: Path, model: EnergyModel, bundle: DataBundle,
                     resolution: int) -> dict[str, float]:
    r2 = {}
    for mode, (rows, dense_rows) in _fit_lines(model, bundle, resolution).items():
        lines = ["control,observed,predicted"]
        for c, obs, pred in rows:
            lines.append(f"{format_constant(c)},{format_constant(obs)},{format_constant(pred)}")
        for c, pred in dense_rows:
            lines.append(f"{format_constant(c)},,{format_constant(pred)}")
        (out_dir / f"fit_{mode}.csv").write_text("\n".join(lines) + "\n")
        try:
            r2[mode] = r_squared([r[2] for r in rows], [r[1] for r in rows])
        except ZeroVariance:
            r2[mode] = float("nan")
    return r2


def _model_summary(model: EnergyModel, digits: int) -> list[str]:
    lines = [
        f"expression = {format_expr(model.expr)}",
        f"offset = {format_constant(model.offset)}",
        f"parameterization = {model.param.value}",
        f"pretty = {pretty_expr(model.expr, digits)}",
    ]
    if model.loss is not None:
        lines.append(f"loss = {model.loss:.6e}")
    if model.complexity is not None:
        lines.append(f"complexity = {model.complexity}")
    if model.score is not None:
        lines.append(f"score = {model.score:.6g}")
    return lines


def finalize_front(front: ParetoFront) -> list[EnergyModel]:
    """Normalized, scored front models ready for reporting."""
    return [normalize_model(m) for m in score_front(front)]


def cmd_discover(args) -> int:
    run = _resolve_run(args)
    bundle = _apply_weights(load_datasets(args.data), run.weights)
    for ds in bundle.sets():
        if ds.weight > 0.0 and not len(ds):
            raise DataError(f"mode {ds.mode.value} has no rows in {args.data}")
    cfg = run.build_gp()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    front = evolve(cfg, bundle, progress=_progress_printer())
    models = finalize_front(front)
    with open(out_dir / "front.csv", "w") as fh:
        fh.write("complexity,loss,score,expression\n")
        for m in models:
            fh.write(f"{m.complexity},{m.loss:.17e},{m.score:.17e},\"{format_expr(m.expr)}\"\n")
    best = normalize_model(select_best(front))
    r2 = _write_fit_files(out_dir, best, bundle, args.resolution)
    lines = _model_summary(best, run.report_digits)
    for mode, value in r2.items():
        lines.append(f"r2_{mode} = {value:.6f}")
    (out_dir / "best.txt").write_text("\n".join(lines) + "\n")
    report = convexity_report(best, bundle)
    (out_dir / "convexity.txt").write_text(report_text(report, run.report_digits))
    if report.surface is not None:
        (out_dir / "surface.csv").write_text(report.surface.to_csv())
    print(f"best: {pretty_expr(best.expr, run.report_digits)}")
    print(f"loss: {best.loss:.6e}  complexity: {best.complexity}")
    for mode, value in r2.items():
        print(f"r2[{mode}]: {value:.6f}")
    print(f"reports in {out_dir}")
    return 0


def _model_from_args(args) -> EnergyModel:
    if getattr(args, "best", None):
        fields = {}
        for line in Path(args.best).read_text().splitlines():
            if "=" in line:
                key, _, value = line.partition("=")
                fields[key.strip()] = value.strip()
        expr = parse_canonical(fields["expression"])
        param = _parse_param(fields.get("parameterization", "invariant"))
        offset = float(fields.get("offset", "0") or 0.0)
        return EnergyModel(expr=expr, param=param, offset=offset,
                           complexity=expr_complexity(expr, param.default_grammar()))
    param = _parse_param(args.param or "invariant")
    expr = parse_canonical(args.expr)
    return EnergyModel(expr=expr, param=param,
                       complexity=expr_complexity(expr, param.default_grammar()))


def cmd_check_convexity(args) -> int:
    model = _model_from_args(args)
    model = normalize_energy(model)
    lo, hi = _parse_interval(args.range, "range")
    bundle = load_datasets(args.data) if args.data else None
    report = convexity_report(model, bundle, surface_range=(lo, hi), steps=args.steps)
    surface = energy_surface(model, (lo, hi), (lo, hi), steps=args.steps,
                             constraint=args.constraint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "convexity.txt").write_text(report_text(report))
    (out_dir / "surface.csv").write_text(surface.to_csv())
    print(report_text(report), end="")
    print(f"surface minimum at {surface.argmin}")
    print(f"reports in {out_dir}")
    return 0


def cmd_robustness(args) -> int:
    run = _resolve_run(args)
    if args.model:
        target = classical_model(args.model)
    else:
        if not args.expr:
            raise ConfigError("robustness needs --model or --expr")
        target = EnergyModel(expr=parse_canonical(args.expr), param=run.param)
    run.param = target.param
    sigmas = [float(v) for v in args.sigmas.split(",")]
    seeds = [int(v) for v in args.seeds.split(",")]
    clean = generate_synthetic(target)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = ["sigma,seed,mse,expression,form_match"]
    for sigma in sigmas:
        for seed in seeds:
            noisy = add_noise(clean, NoiseSpec(sigma=sigma, seed=seed))
            _apply_weights(noisy, run.weights)
            run.seed = seed
            cfg = run.build_gp()
            front = evolve(cfg, noisy, progress=_progress_printer(50))
            best = normalize_model(select_best(front))
            mse = prediction_loss(best, noisy, check=False)
            match = form_match(best.expr, target.expr)
            rows.append(
                f"{format_constant(sigma)},{seed},{mse:.17e},"
                f"\"{format_expr(best.expr)}\",{int(match)}"
            )
            print(f"sigma={sigma:g} seed={seed} mse={mse:.3e} form_match={match}")
    (out_dir / "robustness.csv").write_text("\n".join(rows) + "\n")
    print(f"table in {out_dir / 'robustness.csv'}")
    return 0


def cmd_export_fit(args) -> int:
    model = _model_from_args(args)
    bundle = load_datasets(args.data)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    r2 = _write_fit_files(out_dir, model, bundle, args.resolution)
    for mode, value in r2.items():
        print(f"r2[{mode}]: {value:.6f}")
    print(f"curves in {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hypersr",
        description="Discover and audit hyperelastic strain energy functions from "
                    "multi-mode stress data.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write synthetic data for a named preset model")
    g.add_argument("--model", required=True, help=f"one of: {', '.join(preset_names())}")
    g.add_argument("--out", required=True)
    g.add_argument("--noise", type=float, default=0.0, help="relative noise level")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--points", type=int, default=None, help="points per mode (default 50)")
    g.add_argument("--tension", help="stretch window lo,hi (default 1.0,1.1)")
    g.add_argument("--compression", help="stretch window lo,hi (default 0.9,1.0)")
    g.add_argument("--shear", help="shear window lo,hi (default 0.0,0.2)")
    g.set_defaults(func=cmd_generate)

    d = sub.add_parser("discover", help="run the symbolic search on a data file")
    d.add_argument("--data", required=True)
    d.add_argument("--param", choices=[p.value for p in Parameterization])
    d.add_argument("--config", help="settings file (ini-style sections)")
    d.add_argument("--out", default="discover-out")
    d.add_argument("--seed", type=int, default=None)
    d.add_argument("--populations", type=int, default=None)
    d.add_argument("--iterations", type=int, default=None)
    d.add_argument("--population-size", dest="population_size", type=int, default=None)
    d.add_argument("--tournament-size", dest="tournament_size", type=int, default=None)
    d.add_argument("--workers", type=int, default=None)
    d.add_argument("--loss-floor", dest="loss_floor", type=float, default=None)
    d.add_argument("--stagnation", type=int, default=None)
    d.add_argument("--weights", help="per-mode loss weights wt,wc,ws")
    d.add_argument("--resolution", type=int, default=200, help="dense curve points")
    d.set_defaults(func=cmd_discover)

    c = sub.add_parser("check-convexity", help="audit one expression")
    c.add_argument("--expr", help="energy expression in the text form")
    c.add_argument("--best", help="best.txt from a discover run")
    c.add_argument("--param", choices=[p.value for p in Parameterization])
    c.add_argument("--range", default="0.9,1.1", help="stretch window lo,hi")
    c.add_argument("--steps", type=int, default=101)
    c.add_argument("--constraint", choices=["incompressible", "plane-strain"],
                   default="incompressible")
    c.add_argument("--data", help="optional data file for evaluation states")
    c.add_argument("--out", default="convexity-out")
    c.set_defaults(func=cmd_check_convexity)

    r = sub.add_parser("robustness", help="noise sweep against a target model")
    r.add_argument("--model", help=f"preset name ({', '.join(preset_names())})")
    r.add_argument("--expr", help="target expression instead of a preset")
    r.add_argument("--param", choices=[p.value for p in Parameterization])
    r.add_argument("--sigmas", required=True, help="comma-separated noise levels")
    r.add_argument("--seeds", default="0", help="comma-separated seeds")
    r.add_argument("--config")
    r.add_argument("--out", default="robustness-out")
    r.add_argument("--populations", type=int, default=None)
    r.add_argument("--iterations", type=int, default=None)
    r.add_argument("--population-size", dest="population_size", type=int, default=None)
    r.add_argument("--loss-floor", dest="loss_floor", type=float, default=None)
    r.add_argument("--stagnation", type=int, default=None)
    r.add_argument("--weights")
    r.set_defaults(func=cmd_robustness)

    e = sub.add_parser("export-fit", help="predicted curves and fit quality for a model")
    e.add_argument("--expr")
    e.add_argument("--best")
    e.add_argument("--param", choices=[p.value for p in Parameterization])
    e.add_argument("--data", required=True)
    e.add_argument("--out", default="fit-out")
    e.add_argument("--resolution", type=int, default=200)
    e.set_defaults(func=cmd_export_fit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except _DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return DATA_ERROR
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return NUMERICAL_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR


if __name__ == "__main__":
    sys.exit(main())
