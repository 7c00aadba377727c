"""Post-discovery admissibility audits: Hessian positive definiteness of
the energy in the principal stretches, energy surfaces under an
incompressibility or plane-strain constraint, coercivity along
deformation paths, and reference-state normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .expr import DomainError, evaluate, evaluate_masked, fast_derivative
from .mechanics import kinematics_shear, kinematics_uniaxial
from .objective import (
    EnergyModel,
    DataBundle,
    Parameterization,
    consistency_mu,
    constraint_check,
    normalize_model,
    psi_at_reference,
    psi_at_stretches,
)

normalize_energy = normalize_model


class EmptyRange(ValueError):
    pass


def hessian_diagonal(model: EnergyModel, stretches) -> tuple[float, float, float]:
    """Second energy derivatives along each principal direction at a
    stretch triple.

    Requires a stretch- or strain-parameterized model with the additive
    per-direction structure, for which these are exactly the Hessian
    eigenvalues (all off-diagonal entries vanish).
    """
    if model.param is Parameterization.INVARIANT:
        raise ValueError("Hessian diagonals apply to stretch or strain models")
    l1, l2, l3 = (np.asarray(x, dtype=float) for x in stretches)
    shift = 0.0 if model.param is Parameterization.STRETCH else -1.0
    if model.is_per_direction:
        var = model.param.single_variables[0]
        fpp = fast_derivative(fast_derivative(model.expr, var), var)
        return tuple(evaluate(fpp, {var: x + shift}) for x in (l1, l2, l3))
    names = model.param.full_variables
    bindings = {n: x + shift for n, x in zip(names, (l1, l2, l3))}
    return tuple(
        evaluate(fast_derivative(fast_derivative(model.expr, n), n), bindings) for n in names
    )


def _brain_regime_states(points: int = 25) -> list[tuple[float, float, float]]:
    """Fallback evaluation triples spanning moderate tension, compression
    and shear when no dataset is supplied."""
    states = []
    for lam in np.linspace(1.0, 1.1, points):
        states.append((lam, lam**-0.5, lam**-0.5))
    for lam in np.linspace(0.9, 1.0, points):
        states.append((lam, lam**-0.5, lam**-0.5))
    for gamma in np.linspace(0.0, 0.2, points):
        root = np.sqrt(4.0 + gamma**2)
        states.append(((gamma + root) / 2.0, (-gamma + root) / 2.0, 1.0))
    return states


def _bundle_states(bundle: DataBundle) -> list[tuple[float, float, float]]:
    states = []
    for ds in bundle.sets():
        if not len(ds):
            continue
        kin = (kinematics_uniaxial if ds.mode.is_uniaxial else kinematics_shear)(ds.controls)
        l1, l2, l3 = kin.stretches
        states.extend(zip(np.atleast_1d(l1), np.atleast_1d(l2), np.atleast_1d(l3)))
    return states


@dataclass
class ConvexityReport:
    """Aggregated admissibility diagnostics for one model."""

    diagonals: np.ndarray | None  # per evaluated point, the three second derivatives
    min_det: float | None
    min_eigenvalues: tuple[float, float, float] | None
    positive_definite: bool | None
    structural_convex: bool | None  # invariant models: non-negative constants
    grid_convex: bool
    first_failure: tuple[float, float] | None
    coercivity: str
    consistency_mu: float | None
    normalization_residual: float
    flagged_points: int
    surface: "EnergySurface | None" = None

    @property
    def convex(self) -> bool:
        """The convexity verdict proper: Hessian positive definiteness for
        stretch/strain models; the structural certificate plus the sampled
        surface for invariant ones (the constrained surface of a convex
        stretch model may still curve both ways, so for those the grid
        sweep is reported but does not gate the verdict)."""
        if self.positive_definite is not None:
            return self.positive_definite
        return bool(self.structural_convex) and self.grid_convex


@dataclass
class EnergySurface:
    """Energy sampled over a rectangular grid of in-plane stretches."""

    l1: np.ndarray
    l2: np.ndarray
    psi: np.ndarray
    flags: np.ndarray  # True where the model left its domain
    constraint: str
    argmin: tuple[float, float]

    def to_csv(self) -> str:
        lines = ["lambda1,lambda2,psi,flag"]
        for i, a in enumerate(self.l1):
            for j, b in enumerate(self.l2):
                val = self.psi[i, j]
                lines.append(
                    f"{a!r},{b!r},{'' if self.flags[i, j] else repr(float(val))},{int(self.flags[i, j])}"
                )
        return "\n".join(lines) + "\n"


def energy_surface(model: EnergyModel, l1_range=(0.9, 1.1), l2_range=(0.9, 1.1),
                   steps: int = 101, constraint: str = "incompressible") -> EnergySurface:
    """Sample the energy over in-plane principal stretches.

    Under ``incompressible`` the out-of-plane stretch is 1/(l1*l2); under
    ``plane-strain`` it is held at 1. Domain failures are flagged rather
    than raised, and the grid minimum is located over the clean cells.
    """
    if steps < 2 or l1_range[0] >= l1_range[1] or l2_range[0] >= l2_range[1]:
        raise EmptyRange("need an increasing range and at least two steps")
    if min(l1_range[0], l2_range[0]) <= 0.0:
        raise EmptyRange("stretches must be positive")
    if constraint not in ("incompressible", "plane-strain"):
        raise ValueError(f"unknown constraint {constraint!r}")
    l1 = np.linspace(l1_range[0], l1_range[1], steps)
    l2 = np.linspace(l2_range[0], l2_range[1], steps)
    L1, L2 = np.meshgrid(l1, l2, indexing="ij")
    L3 = 1.0 / (L1 * L2) if constraint == "incompressible" else np.ones_like(L1)
    psi, ok = _psi_grid(model, L1, L2, L3)
    flags = ~ok
    masked = np.where(ok, psi, np.inf)
    i, j = np.unravel_index(int(np.argmin(masked)), masked.shape)
    return EnergySurface(
        l1=l1, l2=l2, psi=psi, flags=flags, constraint=constraint,
        argmin=(float(l1[i]), float(l2[j])),
    )


def _psi_grid(model: EnergyModel, L1, L2, L3):
    if model.param is Parameterization.INVARIANT:
        I1 = L1**2 + L2**2 + L3**2
        I2 = (L1 * L2) ** 2 + (L2 * L3) ** 2 + (L1 * L3) ** 2
        vals, ok = evaluate_masked(model.expr, {"u1": I1 - 3.0, "u2": I2 - 3.0})
        return vals + model.offset, ok
    triple = (L1, L2, L3) if model.param is Parameterization.STRETCH else (L1 - 1, L2 - 1, L3 - 1)
    if model.is_per_direction:
        var = model.param.single_variables[0]
        total, ok = None, None
        for t in triple:
            v, o = evaluate_masked(model.expr, {var: t})
            total = v if total is None else total + v
            ok = o if ok is None else ok & o
        return total + model.offset, ok
    names = model.param.full_variables
    vals, ok = evaluate_masked(model.expr, dict(zip(names, triple)))
    return vals + model.offset, ok


def grid_convexity(surface: EnergySurface) -> tuple[bool, tuple[float, float] | None]:
    """Discrete convexity of the sampled surface: at every interior clean
    point the finite-difference Hessian must be positive semidefinite
    (within floating tolerance). Returns the verdict and the first
    failing grid point."""
    psi, flags = surface.psi, surface.flags
    h1 = surface.l1[1] - surface.l1[0]
    h2 = surface.l2[1] - surface.l2[0]
    scale = np.nanmax(np.abs(np.where(flags, np.nan, psi))) if np.any(~flags) else 1.0
    tol = 1e-8 * max(1.0, float(scale))
    for i in range(1, len(surface.l1) - 1):
        for j in range(1, len(surface.l2) - 1):
            window = flags[i - 1 : i + 2, j - 1 : j + 2]
            if window.any():
                continue
            fxx = (psi[i + 1, j] - 2 * psi[i, j] + psi[i - 1, j]) / h1**2
            fyy = (psi[i, j + 1] - 2 * psi[i, j] + psi[i, j - 1]) / h2**2
            fxy = (psi[i + 1, j + 1] - psi[i + 1, j - 1] - psi[i - 1, j + 1] + psi[i - 1, j - 1]) / (
                4 * h1 * h2
            )
            if fxx < -tol or fxx * fyy - fxy * fxy < -tol * max(1.0, abs(fxx) + abs(fyy)):
                return False, (float(surface.l1[i]), float(surface.l2[j]))
    return True, None


def coercivity_check(model: EnergyModel, path) -> str:
    """Whether the energy keeps growing toward the end of a deformation
    path; ``path`` is a sequence of principal stretch triples ordered by
    increasing deformation. Returns ``"increasing"`` or ``"violated"``.

    Energies with a locking point leave their domain at finite
    deformation after blowing up; the path is truncated at the first
    domain failure and the growth test applies to what survives."""
    values: list[float] = []
    for l1, l2, l3 in path:
        try:
            v = float(psi_at_stretches(model, l1, l2, l3))
        except DomainError:
            break
        if not np.isfinite(v):
            break
        values.append(v)
    if len(values) < max(2, len(path) // 4):
        return "violated"
    tail = np.asarray(values[int(len(values) * 0.75):])
    if len(tail) < 2:
        tail = np.asarray(values[-2:])
    if not np.all(np.diff(tail) > 0.0):
        return "violated"
    return "increasing"


def equibiaxial_path(t_end: float, points: int = 40) -> list[tuple[float, float, float]]:
    """Equal in-plane stretches from the reference toward ``t_end`` under
    incompressibility."""
    ts = np.linspace(1.0, t_end, points)
    return [(t, t, 1.0 / (t * t)) for t in ts]


def convexity_report(model: EnergyModel, bundle: DataBundle | None = None,
                     surface_range=(0.9, 1.1), steps: int = 101) -> ConvexityReport:
    """Full audit of one model.

    Stretch and strain models get analytic Hessian diagnostics at the
    evaluation states (dataset-induced triples when data is given, a
    moderate-deformation fallback grid otherwise). Every model gets a
    surface-grid convexity verdict, coercivity spot checks along
    equibiaxial paths and the reference normalization residual.
    """
    states = _bundle_states(bundle) if bundle is not None else _brain_regime_states()
    diagonals = None
    min_det = None
    min_eigs = None
    positive = None
    flagged = 0
    if model.param is not Parameterization.INVARIANT:
        rows = []
        for triple in states:
            try:
                rows.append([float(v) for v in hessian_diagonal(model, triple)])
            except DomainError:
                flagged += 1
        if rows:
            diagonals = np.asarray(rows)
            dets = diagonals.prod(axis=1)
            min_det = float(dets.min())
            min_eigs = tuple(float(v) for v in diagonals.min(axis=0))
            positive = bool((diagonals > 0.0).all())
    surface = energy_surface(model, surface_range, surface_range, steps=steps)
    grid_ok, first_fail = grid_convexity(surface)
    flagged += int(surface.flags.sum())
    coercivity = "increasing"
    for t_end in (surface_range[1] + 0.5, max(0.4, surface_range[0] - 0.35)):
        if coercivity_check(model, equibiaxial_path(t_end)) == "violated":
            coercivity = "violated"
            break
    try:
        residual = psi_at_reference(model)
    except DomainError:
        residual = float("nan")
    mu = None
    if model.param is Parameterization.STRAIN:
        mu = consistency_mu(model)
    structural = None
    if model.param is Parameterization.INVARIANT:
        structural = bool(constraint_check(model))
    return ConvexityReport(
        diagonals=diagonals,
        min_det=min_det,
        min_eigenvalues=min_eigs,
        positive_definite=positive,
        structural_convex=structural,
        grid_convex=grid_ok,
        first_failure=first_fail,
        coercivity=coercivity,
        consistency_mu=mu,
        normalization_residual=float(residual),
        flagged_points=flagged,
        surface=surface,
    )


def report_text(report: ConvexityReport, digits: int = 4) -> str:
    """Tabular text rendering of a report."""

    def fmt(v):
        if v is None:
            return "n/a"
        if isinstance(v, (tuple, list)):
            return ", ".join(f"{x:.{digits}g}" for x in v)
        if isinstance(v, float):
            return f"{v:.{digits}g}"
        return str(v)

    rows = [
        ("min(det[H])", fmt(report.min_det)),
        ("min(d2Psi/dl1^2)", fmt(report.min_eigenvalues[0] if report.min_eigenvalues else None)),
        ("min(d2Psi/dl2^2)", fmt(report.min_eigenvalues[1] if report.min_eigenvalues else None)),
        ("min(d2Psi/dl3^2)", fmt(report.min_eigenvalues[2] if report.min_eigenvalues else None)),
        ("positive definite", fmt(report.positive_definite)),
        ("structural convex", fmt(report.structural_convex)),
        ("grid convex", fmt(report.grid_convex)),
        ("first failure", fmt(report.first_failure)),
        ("coercivity", report.coercivity),
        ("consistency mu", fmt(report.consistency_mu)),
        ("Psi(reference)", fmt(report.normalization_residual)),
        ("flagged points", str(report.flagged_points)),
        ("convex", fmt(report.convex)),
    ]
    width = max(len(r[0]) for r in rows)
    return "\n".join(f"{name:<{width}}  {value}" for name, value in rows) + "\n"
