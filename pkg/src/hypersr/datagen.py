"""Ground-truth presets, synthetic multi-mode data generation, seeded
noise injection and the CSV exchange format.

CSV schema: header ``mode,control,stress``; ``mode`` is one of ``ut``,
``uc``, ``ss``; ``control`` is the stretch for the uniaxial modes and the
shear amount for ``ss``; floats are printed with full round-trip
precision and LF line endings. Rows may interleave modes; a missing mode
loads as an empty, zero-weight dataset.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .dsl import format_constant, parse_canonical
from .mechanics import LoadingMode
from .objective import DataBundle, EnergyModel, LoadingDataSet, Parameterization, predict_stress_curve


class UnknownModel(ValueError):
    pass


class SchemaError(ValueError):
    pass


class ParseError(ValueError):
    pass


class DomainViolation(ValueError):
    pass


_PRESETS: dict[str, tuple[str, Parameterization, float]] = {
    # name -> (expression text, parameterization, energy offset)
    "gent": ("1.9 * ln1m(1.2 * (I1 - 3))", Parameterization.INVARIANT, 0.0),
    "ogden": ("0.01 * l^-18", Parameterization.STRETCH, -0.03),
    "demiray": ("1.66 * exp(0.88 * (I1 - 3))", Parameterization.INVARIANT, -1.66),
    "holzapfel": ("5.6 * exp(3 * square((I1 - 3)))", Parameterization.INVARIANT, -5.6),
    "mooney-rivlin": (
        "0.87*(I1 - 3) + 0.86*square((I1 - 3)) + 0.98*(I2 - 3) + 0.43*square((I2 - 3))",
        Parameterization.INVARIANT,
        0.0,
    ),
    # evaluatable baseline formula from a neural-network fit, for comparison runs
    "nn-baseline": (
        "0.552*(I2 - 3) + 2.858*ln1m(2.483*square((I2 - 3)))",
        Parameterization.INVARIANT,
        0.0,
    ),
    # the noise-robustness target: a stiff exponential in the second invariant
    "exp-i2": ("0.017 * exp(27.91 * (I2 - 3))", Parameterization.INVARIANT, -0.017),
}


def preset_names() -> tuple[str, ...]:
    return tuple(_PRESETS)


def classical_model(name: str) -> EnergyModel:
    """A named ground-truth energy with its published constants."""
    try:
        text, param, offset = _PRESETS[name]
    except KeyError:
        raise UnknownModel(f"unknown model {name!r}; choose from {', '.join(_PRESETS)}") from None
    expr = parse_canonical(text)
    from .expr import complexity as _complexity

    return EnergyModel(
        expr=expr,
        param=param,
        offset=offset,
        complexity=_complexity(expr, param.default_grammar()),
    )


@dataclass(frozen=True)
class GenerationRanges:
    """Sampling windows for synthetic data.

    Endpoints at the reference state (stretch 1, shear 0) are excluded
    from the generated controls, so tension samples lie in (1, hi],
    compression in [lo, 1) and shear in (0, hi].
    """

    tension: tuple[float, float] = (1.0, 1.1)
    compression: tuple[float, float] = (0.9, 1.0)
    shear: tuple[float, float] = (0.0, 0.2)
    points: int = 50

    def __post_init__(self):
        if self.points < 2:
            raise ValueError("need at least two points per mode")
        if not (1.0 <= self.tension[0] < self.tension[1]):
            raise ValueError("tension window must lie in [1, inf)")
        if not (0.0 < self.compression[0] < self.compression[1] <= 1.0):
            raise ValueError("compression window must lie in (0, 1]")
        if not (0.0 <= self.shear[0] < self.shear[1]):
            raise ValueError("shear window must lie in [0, inf)")


def _controls(lo: float, hi: float, n: int, drop: str) -> np.ndarray:
    grid = np.linspace(lo, hi, n + 1)
    return grid[1:] if drop == "lo" else grid[:-1]


def generate_synthetic(model: EnergyModel, ranges: GenerationRanges | None = None) -> DataBundle:
    """Noiseless stress data for the three loading modes."""
    r = ranges or GenerationRanges()
    sets = {}
    for mode, (lo, hi), drop in (
        (LoadingMode.UNIAXIAL_TENSION, r.tension, "lo"),
        (LoadingMode.UNIAXIAL_COMPRESSION, r.compression, "hi"),
        (LoadingMode.SIMPLE_SHEAR, r.shear, "lo"),
    ):
        controls = _controls(lo, hi, r.points, drop)
        ds = LoadingDataSet(mode=mode, controls=controls, stresses=np.zeros_like(controls))
        ds.stresses = predict_stress_curve(model, ds)
        sets[mode.value] = ds
    return DataBundle(ut=sets["ut"], uc=sets["uc"], ss=sets["ss"])


@dataclass(frozen=True)
class NoiseSpec:
    """Relative Gaussian perturbation: each mode receives i.i.d. noise
    with standard deviation ``sigma`` times its peak stress magnitude."""

    sigma: float
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


def add_noise(bundle: DataBundle, spec: NoiseSpec) -> DataBundle:
    """Perturb stresses; controls and sizes are untouched, the generator
    is seeded so the result is reproducible."""
    if spec.sigma == 0.0:
        return DataBundle(*(
            LoadingDataSet(ds.mode, ds.controls.copy(), ds.stresses.copy(), ds.weight)
            for ds in bundle.sets()
        ))
    rng = np.random.default_rng(spec.seed)
    out = []
    for ds in bundle.sets():
        sigma_k = spec.sigma * ds.max_stress
        noisy = ds.stresses + rng.normal(0.0, sigma_k, size=len(ds))
        out.append(LoadingDataSet(ds.mode, ds.controls.copy(), noisy, ds.weight))
    return DataBundle(*out)


# ---------------------------------------------------------------------------
# CSV exchange

_HEADER = "mode,control,stress"
_MODES = {m.value: m for m in LoadingMode}


def dump_datasets(bundle: DataBundle) -> str:
    buf = io.StringIO()
    buf.write(_HEADER + "\n")
    for ds in bundle.sets():
        for c, s in zip(ds.controls, ds.stresses):
            buf.write(f"{ds.mode.value},{format_constant(c)},{format_constant(s)}\n")
    return buf.getvalue()


def write_datasets(bundle: DataBundle, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(dump_datasets(bundle))


def _validate_control(mode: LoadingMode, control: float, line: int) -> None:
    if mode is LoadingMode.UNIAXIAL_TENSION and control <= 1.0:
        raise DomainViolation(f"line {line}: tension stretch must exceed 1, got {control}")
    if mode is LoadingMode.UNIAXIAL_COMPRESSION and not (0.0 < control < 1.0):
        raise DomainViolation(f"line {line}: compression stretch must lie in (0, 1), got {control}")
    if mode is LoadingMode.SIMPLE_SHEAR and control < 0.0:
        raise DomainViolation(f"line {line}: shear amount must be non-negative, got {control}")


def parse_datasets(text: str) -> DataBundle:
    lines = text.splitlines()
    if not lines or lines[0].strip() != _HEADER:
        raise SchemaError(f"expected header {_HEADER!r}")
    rows: dict[str, list[tuple[float, float]]] = {m: [] for m in _MODES}
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ParseError(f"line {ln}: expected 3 columns, found {len(parts)}")
        tag = parts[0].strip()
        if tag not in _MODES:
            raise SchemaError(f"line {ln}: unknown mode tag {tag!r}")
        try:
            control = float(parts[1])
            stress = float(parts[2])
        except ValueError as exc:
            raise ParseError(f"line {ln}: {exc}") from None
        _validate_control(_MODES[tag], control, ln)
        rows[tag].append((control, stress))
    sets = {}
    for tag, mode in _MODES.items():
        data = rows[tag]
        controls = np.array([c for c, _ in data], dtype=float)
        stresses = np.array([s for _, s in data], dtype=float)
        weight = 1.0 if len(data) else 0.0
        sets[tag] = LoadingDataSet(mode=mode, controls=controls, stresses=stresses, weight=weight)
    return DataBundle(ut=sets["ut"], uc=sets["uc"], ss=sets["ss"])


def load_datasets(path) -> DataBundle:
    with open(path, "r") as fh:
        return parse_datasets(fh.read())
