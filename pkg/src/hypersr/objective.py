"""Candidate energy models: stress prediction, the normalized multi-mode
loss, parsimony penalty, admissibility gates and fit metrics.

A model stores the energy density as an expression tree plus an additive
offset. Three variable conventions exist, one per parameterization:

* invariant models use the shifted invariants ``u1 = I1 - 3``,
  ``u2 = I2 - 3`` so the reference state sits at the origin;
* stretch models are per-direction terms ``f(l)`` in a single variable,
  the total energy being ``f(l1) + f(l2) + f(l3)`` (full three-variable
  trees over ``l1, l2, l3`` are also accepted, e.g. from parsed text);
* strain models follow the same convention in ``e`` (or ``e1, e2, e3``),
  with ``e_i = l_i - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .expr import (
    Constant,
    DomainError,
    Expr,
    Grammar,
    evaluate,
    fast_derivative,
    invariant_grammar,
    monomials,
    nodes,
    strain_grammar,
    stretch_grammar,
    variables_of,
)
from .mechanics import (
    InvariantDerivs,
    KinematicState,
    LoadingMode,
    PrincipalDerivs,
    kinematics_for,
    stress_for,
)


class ZeroMaxStress(ValueError):
    pass


class ZeroVariance(ValueError):
    pass


class Parameterization(Enum):
    INVARIANT = "invariant"
    STRETCH = "stretch"
    STRAIN = "strain"

    @property
    def single_variables(self) -> tuple[str, ...]:
        return {"invariant": ("u1", "u2"), "stretch": ("l",), "strain": ("e",)}[self.value]

    @property
    def full_variables(self) -> tuple[str, ...]:
        return {
            "invariant": ("u1", "u2"),
            "stretch": ("l1", "l2", "l3"),
            "strain": ("e1", "e2", "e3"),
        }[self.value]

    def default_grammar(self) -> Grammar:
        return {
            "invariant": invariant_grammar,
            "stretch": stretch_grammar,
            "strain": strain_grammar,
        }[self.value]()


@dataclass
class LoadingDataSet:
    """One loading mode's (control, stress) samples.

    Controls are stretches for the uniaxial modes and shear amounts for
    simple shear; the reference value (1 or 0) is allowed. Stresses are
    nominal, in any consistent unit.
    """

    mode: LoadingMode
    controls: np.ndarray
    stresses: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        self.controls = np.asarray(self.controls, dtype=float)
        self.stresses = np.asarray(self.stresses, dtype=float)
        if self.controls.shape != self.stresses.shape or self.controls.ndim != 1:
            raise ValueError("controls and stresses must be 1-d arrays of equal length")
        if self.weight < 0:
            raise ValueError("weight must be non-negative")
        if len(self.controls):
            if self.mode is LoadingMode.UNIAXIAL_TENSION and np.any(self.controls < 1.0):
                raise ValueError("tension controls must satisfy stretch >= 1")
            if self.mode is LoadingMode.UNIAXIAL_COMPRESSION and (
                np.any(self.controls <= 0.0) or np.any(self.controls > 1.0)
            ):
                raise ValueError("compression controls must lie in (0, 1]")
            if self.mode is LoadingMode.SIMPLE_SHEAR and np.any(self.controls < 0.0):
                raise ValueError("shear controls must be non-negative")

    def __len__(self) -> int:
        return len(self.controls)

    @property
    def max_stress(self) -> float:
        return float(np.max(np.abs(self.stresses))) if len(self) else 0.0


@dataclass
class DataBundle:
    """The three-mode training bundle."""

    ut: LoadingDataSet
    uc: LoadingDataSet
    ss: LoadingDataSet

    def __post_init__(self):
        for name, mode in (("ut", LoadingMode.UNIAXIAL_TENSION),
                           ("uc", LoadingMode.UNIAXIAL_COMPRESSION),
                           ("ss", LoadingMode.SIMPLE_SHEAR)):
            if getattr(self, name).mode is not mode:
                raise ValueError(f"dataset in slot {name!r} has the wrong mode")

    def sets(self) -> tuple[LoadingDataSet, LoadingDataSet, LoadingDataSet]:
        return (self.ut, self.uc, self.ss)


@dataclass(frozen=True)
class EnergyModel:
    """An energy density candidate: tree, parameterization and offset.

    ``offset`` is an additive constant (it never affects stresses); the
    normalization step sets it so the energy vanishes at the reference
    state. ``complexity`` is the weighted node count of the tree,
    ``loss`` the normalized multi-mode error once evaluated, ``score``
    the selection metric once the front is scored.
    """

    expr: Expr
    param: Parameterization
    offset: float = 0.0
    loss: float | None = None
    complexity: int | None = None
    score: float | None = None
    found_at: int = 0

    def __post_init__(self):
        allowed = set(self.param.single_variables) | set(self.param.full_variables)
        used = variables_of(self.expr)
        if not used <= allowed:
            raise ValueError(f"variables {sorted(used - allowed)} not allowed for {self.param.value}")
        if self.param is not Parameterization.INVARIANT and used & set(
            self.param.single_variables
        ) and used & (set(self.param.full_variables)):
            raise ValueError("cannot mix per-direction and full-form variables")

    @property
    def is_per_direction(self) -> bool:
        """True when a stretch/strain tree is a single-variable term summed
        over the three principal directions."""
        if self.param is Parameterization.INVARIANT:
            return False
        return not (variables_of(self.expr) & set(self.param.full_variables))


def psi_at_stretches(model: EnergyModel, l1, l2, l3):
    """Energy density at an arbitrary principal-stretch triple."""
    l1, l2, l3 = (np.asarray(x, dtype=float) for x in (l1, l2, l3))
    if model.param is Parameterization.INVARIANT:
        I1 = l1**2 + l2**2 + l3**2
        I2 = (l1 * l2) ** 2 + (l2 * l3) ** 2 + (l1 * l3) ** 2
        return evaluate(model.expr, {"u1": I1 - 3.0, "u2": I2 - 3.0}) + model.offset
    triple = (l1, l2, l3) if model.param is Parameterization.STRETCH else (l1 - 1.0, l2 - 1.0, l3 - 1.0)
    if model.is_per_direction:
        var = model.param.single_variables[0]
        total = sum(evaluate(model.expr, {var: t}) for t in triple)
        return total + model.offset
    names = model.param.full_variables
    return evaluate(model.expr, dict(zip(names, triple))) + model.offset


def psi_at_reference(model: EnergyModel) -> float:
    return float(psi_at_stretches(model, 1.0, 1.0, 1.0))


def derivative_bundle(model: EnergyModel, state: KinematicState):
    """Evaluate the symbolic energy derivatives at a state."""
    if model.param is Parameterization.INVARIANT:
        b = {"u1": state.I1 - 3.0, "u2": state.I2 - 3.0}
        return InvariantDerivs(
            dI1=evaluate(fast_derivative(model.expr, "u1"), b),
            dI2=evaluate(fast_derivative(model.expr, "u2"), b),
        )
    l1, l2, _ = state.stretches
    x1, x2 = (l1, l2) if model.param is Parameterization.STRETCH else (l1 - 1.0, l2 - 1.0)
    if model.is_per_direction:
        var = model.param.single_variables[0]
        d = fast_derivative(model.expr, var)
        return PrincipalDerivs(d1=evaluate(d, {var: x1}), d2=evaluate(d, {var: x2}))
    n1, n2, n3 = model.param.full_variables
    l3 = state.stretches[2]
    x3 = l3 if model.param is Parameterization.STRETCH else l3 - 1.0
    b = {n1: x1, n2: x2, n3: x3}
    return PrincipalDerivs(
        d1=evaluate(fast_derivative(model.expr, n1), b),
        d2=evaluate(fast_derivative(model.expr, n2), b),
    )


def _state_of(data: LoadingDataSet) -> KinematicState:
    state = getattr(data, "_state", None)
    if state is None or state.control is not data.controls:
        state = kinematics_for(data.mode, data.controls)
        data._state = state
    return state


def predict_stress_curve(model: EnergyModel, data: LoadingDataSet) -> np.ndarray:
    """Predicted nominal stress at each control value of the dataset.

    Raises :class:`DomainError` when the candidate leaves its domain at
    any point; callers map that to an infinite loss.
    """
    state = _state_of(data)
    derivs = derivative_bundle(model, state)
    return np.asarray(stress_for(data.mode, state, derivs), dtype=float)


def predict_bundle(model: EnergyModel, bundle: DataBundle) -> dict[str, np.ndarray]:
    """Predictions for every weighted mode at once.

    The derivative expressions are evaluated over the modes' points
    concatenated into one column, which is the hot loop of the search."""
    sets = [ds for ds in bundle.sets() if ds.weight > 0.0 and len(ds)]
    if not sets:
        return {}
    states = [_state_of(ds) for ds in sets]
    sizes = [len(ds) for ds in sets]
    splits = np.cumsum(sizes)[:-1]
    if model.param is Parameterization.INVARIANT:
        u1 = np.concatenate([s.I1 - 3.0 for s in states])
        u2 = np.concatenate([s.I2 - 3.0 for s in states])
        b = {"u1": u1, "u2": u2}
        d1 = np.split(np.broadcast_to(evaluate(fast_derivative(model.expr, "u1"), b), u1.shape), splits)
        d2 = np.split(np.broadcast_to(evaluate(fast_derivative(model.expr, "u2"), b), u1.shape), splits)
        bundles = [InvariantDerivs(a, b2) for a, b2 in zip(d1, d2)]
    elif model.is_per_direction:
        var = model.param.single_variables[0]
        shift = 0.0 if model.param is Parameterization.STRETCH else -1.0
        xs = np.concatenate(
            [s.stretches[0] + shift for s in states] + [s.stretches[1] + shift for s in states]
        )
        d = fast_derivative(model.expr, var)
        vals = np.broadcast_to(evaluate(d, {var: xs}), xs.shape)
        half = len(xs) // 2
        d1 = np.split(vals[:half], splits)
        d2 = np.split(vals[half:], splits)
        bundles = [PrincipalDerivs(a, b2) for a, b2 in zip(d1, d2)]
    else:
        bundles = [derivative_bundle(model, s) for s in states]
    return {
        ds.mode.value: np.asarray(stress_for(ds.mode, s, dv), dtype=float)
        for ds, s, dv in zip(sets, states, bundles)
    }


def normalized_mse(predictions: dict[str, np.ndarray], bundle: DataBundle) -> float:
    """Multi-mode loss: per mode, the mean squared error of stresses
    normalized by that mode's peak experimental magnitude, weighted and
    summed over modes. Scale-invariant per mode by construction."""
    total = 0.0
    for ds in bundle.sets():
        if ds.weight == 0.0:
            continue
        if len(ds) == 0:
            raise ValueError(f"weighted mode {ds.mode.value} has no data")
        pmax = ds.max_stress
        if pmax == 0.0:
            raise ZeroMaxStress(f"mode {ds.mode.value} has all-zero stresses")
        pred = np.asarray(predictions[ds.mode.value], dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            total += ds.weight * float(np.mean(((ds.stresses - pred) / pmax) ** 2))
    return total


@dataclass
class ParsimonyState:
    """Exponentially decayed population counts per complexity level,
    feeding the multiplicative loss penalty."""

    decay: float = 0.95
    scale: float = 1.0
    counts: dict[int, float] = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 < self.decay < 1.0):
            raise ValueError("decay must lie in (0, 1)")

    def update(self, complexities) -> None:
        for c in self.counts:
            self.counts[c] *= self.decay
        for c in complexities:
            self.counts[c] = self.counts.get(c, 0.0) + 1.0
        for c in [c for c, v in self.counts.items() if v < 1e-12]:
            del self.counts[c]

    def frec(self, complexity: int) -> float:
        total = sum(self.counts.values())
        if total <= 0.0:
            return 0.0
        return self.scale * self.counts.get(complexity, 0.0) / total


def penalized_loss(pred_loss: float, complexity: int, state: ParsimonyState) -> float:
    """Inflate the prediction loss by exp(frec) at the tree's complexity."""
    return pred_loss * math.exp(state.frec(complexity))


@dataclass(frozen=True)
class ConstraintCheck:
    ok: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


def constraint_check(model: EnergyModel, grammar: Grammar | None = None) -> ConstraintCheck:
    """Admissibility gate applied before a candidate is scored.

    Invariant trees must carry non-negative constants only (each term is
    then a convex non-decreasing function of the invariants). Stretch
    trees must reduce to a sum of power terms ``c * l^a`` with positive
    coefficients and in-range nonzero integer exponents; a constant term
    is allowed since it carries no stress. Strain trees must yield a
    positive small-strain shear modulus.
    """
    grammar = grammar or model.param.default_grammar()
    if model.param is Parameterization.INVARIANT:
        for n in nodes(model.expr):
            if isinstance(n, Constant) and n.value < 0.0:
                raise_reason = f"negative constant {n.value!r}"
                return ConstraintCheck(False, raise_reason)
        return ConstraintCheck(True)
    if model.param is Parameterization.STRETCH:
        terms = monomials(model.expr)
        if terms is None:
            return ConstraintCheck(False, "not a sum of power terms")
        lo, hi = grammar.exponent_range
        for coeff, powers in terms:
            if not powers:
                continue  # additive constant, no stress contribution
            if len(powers) != 1:
                return ConstraintCheck(False, "mixed-variable power term")
            _, alpha = powers[0]
            if alpha == 0 or not (lo <= alpha <= hi):
                return ConstraintCheck(False, f"exponent {alpha} out of range")
            if coeff <= 0.0:
                return ConstraintCheck(False, f"non-positive stiffness coefficient {coeff!r}")
        return ConstraintCheck(True)
    # strain: consistency with linear elasticity at small strains
    mu = consistency_mu(model)
    if mu is None:
        return ConstraintCheck(False, "shear modulus undefined at the reference state")
    if not mu > 0.0:
        return ConstraintCheck(False, f"non-positive shear modulus {mu:.6g}")
    return ConstraintCheck(True)


def consistency_mu(model: EnergyModel) -> float | None:
    """Small-strain shear modulus of a strain model,
    ``mu = (f''(0) + f'(0)) / 2`` for per-direction terms."""
    if model.param is not Parameterization.STRAIN:
        raise ValueError("consistency modulus applies to strain models")
    try:
        if model.is_per_direction:
            var = model.param.single_variables[0]
            d1 = fast_derivative(model.expr, var)
            d2 = fast_derivative(d1, var)
            zero = {var: 0.0}
            return 0.5 * (float(evaluate(d2, zero)) + float(evaluate(d1, zero)))
        n1, n2, _ = model.param.full_variables
        zero = {n: 0.0 for n in model.param.full_variables}
        d1 = fast_derivative(model.expr, n1)
        d11 = fast_derivative(d1, n1)
        d12 = fast_derivative(d1, n2)
        return 0.5 * (
            float(evaluate(d11, zero)) - float(evaluate(d12, zero)) + float(evaluate(d1, zero))
        )
    except DomainError:
        return None


def prediction_loss(model: EnergyModel, bundle: DataBundle, grammar: Grammar | None = None,
                    check: bool = True) -> float:
    """Normalized loss of a candidate; +inf on any rejection.

    Rejections cover constraint failures, domain errors at any data point
    and non-evaluability at the reference state, so the search loop never
    sees an exception from a pathological tree.
    """
    if check and not constraint_check(model, grammar):
        return math.inf
    try:
        preds = predict_bundle(model, bundle)
        loss = normalized_mse(preds, bundle)
    except DomainError:
        return math.inf
    if not math.isfinite(loss):
        return math.inf
    return loss


def r_squared(predictions, observations) -> float:
    """Coefficient of determination; requires at least two observations
    with nonzero variance."""
    obs = np.asarray(observations, dtype=float)
    pred = np.asarray(predictions, dtype=float)
    if obs.size < 2:
        raise ZeroVariance("need at least two observations")
    ss_tot = float(np.sum((obs - obs.mean()) ** 2))
    if ss_tot == 0.0:
        raise ZeroVariance("observations have zero variance")
    ss_res = float(np.sum((obs - pred) ** 2))
    return 1.0 - ss_res / ss_tot


def normalize_model(model: EnergyModel) -> EnergyModel:
    """Shift the energy so it vanishes at the reference state; stresses
    are untouched since the shift is constant."""
    ref = psi_at_reference(model)
    return replace(model, offset=model.offset - ref)
