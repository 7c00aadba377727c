"""Genetic-programming search over energy expressions.

Island populations evolve in lockstep generations: tournament selection,
subtree crossover, five mutation kinds, derivative-free constant
optimization, ring migration and a global accuracy-complexity front.
Everything is driven by per-island seeded generators, so a fixed seed
reproduces a run bit for bit regardless of host.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

import numpy as np
from scipy.optimize import minimize, nnls

from .expr import (
    parameterize,
    Binary,
    Constant,
    DomainError,
    Expr,
    Grammar,
    Unary,
    Variable,
    check_constraints,
    complexity,
    constant_slots,
    monomials,
    simplify,
    with_constants,
)
from .objective import (
    DataBundle,
    EnergyModel,
    Parameterization,
    ParsimonyState,
    penalized_loss,
    predict_bundle,
    prediction_loss,
)


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


DEFAULT_MUTATION_WEIGHTS = {
    "operator": 1.0,
    "constant": 2.0,
    "scale": 1.0,
    "insert": 1.0,
    "replace": 0.8,
    "delete": 0.6,
}


@dataclass
class GPConfig:
    """Search settings; the defaults match the reference setup, scaled
    runs override ``populations``/``iterations``.

    ``loss_floor`` and ``stagnation`` are optional early stops: the run
    ends once the best loss reaches the floor, or after that many
    generations without improvement of the best loss.
    """

    grammar: Grammar
    param: Parameterization
    workers: int = 6
    populations: int = 18
    population_size: int = 33
    iterations: int = 1000
    tournament_size: int = 8
    mutation_weights: dict[str, float] = field(
        default_factory=lambda: dict(DEFAULT_MUTATION_WEIGHTS)
    )
    crossover_prob: float = 0.2
    constant_scale: float = 0.3
    opt_prob: float = 0.1
    opt_restarts: int = 2
    opt_max_evals: int = 300
    opt_tol: float = 1e-10
    migration_interval: int = 50
    migration_fraction: float = 0.1
    front_inject_prob: float = 0.05
    seed: int = 0
    parsimony_decay: float = 0.95
    parsimony_scale: float = 1.0
    init_depth: int = 3
    loss_floor: float | None = None
    stagnation: int | None = None

    def validate(self) -> None:
        for name in ("workers", "populations", "population_size", "iterations",
                     "tournament_size", "opt_restarts", "opt_max_evals",
                     "migration_interval", "init_depth"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < (0 if name == "iterations" else 1):
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name in ("crossover_prob", "opt_prob", "migration_fraction", "front_inject_prob"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {v!r}")
        if not (0.0 < self.parsimony_decay < 1.0):
            raise ConfigError("parsimony_decay must lie in (0, 1)")
        if self.constant_scale < 0 or self.parsimony_scale < 0:
            raise ConfigError("scales must be non-negative")
        if not self.mutation_weights or min(self.mutation_weights.values()) < 0:
            raise ConfigError("mutation weights must be non-negative, at least one positive")
        unknown = set(self.mutation_weights) - set(DEFAULT_MUTATION_WEIGHTS)
        if unknown:
            raise ConfigError(f"unknown mutation kinds {sorted(unknown)}")


# ---------------------------------------------------------------------------
# Random trees


def _random_constant(grammar: Grammar, rng: random.Random) -> Constant:
    value = math.exp(rng.uniform(math.log(0.05), math.log(3.0)))
    if grammar.allow_negative_constants and rng.random() < 0.5:
        value = -value
    return Constant(value)


def _random_exponent(grammar: Grammar, rng: random.Random) -> int:
    lo, hi = grammar.exponent_range
    k = 0
    while k == 0:
        k = rng.randint(lo, hi)
    return k


def _grow(grammar: Grammar, rng: random.Random, budget: int) -> Expr:
    ops = sorted(grammar.unary_ops) + sorted(grammar.binary_ops)
    if budget <= 1 or not ops or rng.random() < 0.3:
        if rng.random() < 0.6:
            return Variable(rng.choice(grammar.variables))
        return _random_constant(grammar, rng)
    op = rng.choice(ops)
    if op in grammar.unary_ops:
        return Unary(op, _grow(grammar, rng, budget - 1))
    if op == "pow_int":
        base = _grow(grammar, rng, budget - 1)
        return Binary(op, base, Constant(float(_random_exponent(grammar, rng))))
    return Binary(op, _grow(grammar, rng, budget - 1), _grow(grammar, rng, budget - 1))


def random_tree(grammar: Grammar, rng: random.Random, max_depth: int = 3) -> Expr:
    """A grammar-valid random tree grown to a small depth."""
    for _ in range(64):
        tree = _grow(grammar, rng, max_depth)
        if check_constraints(tree, grammar):
            return tree
    return Variable(grammar.variables[0])


# ---------------------------------------------------------------------------
# Variation operators

_EXPONENT_CHILD = object()


def _paths(expr: Expr, skip_exponents: bool = True) -> list[tuple[int, ...]]:
    """Pre-order paths to every node; ``pow_int`` exponent constants are
    excluded since they are structural, not free subtrees."""
    out: list[tuple[int, ...]] = []

    def rec(e: Expr, path: tuple[int, ...]):
        out.append(path)
        if isinstance(e, Unary):
            rec(e.child, path + (0,))
        elif isinstance(e, Binary):
            rec(e.left, path + (0,))
            if not (skip_exponents and e.op == "pow_int"):
                rec(e.right, path + (1,))

    rec(expr, ())
    return out


def _get(expr: Expr, path: tuple[int, ...]) -> Expr:
    for step in path:
        expr = expr.child if isinstance(expr, Unary) else (expr.left if step == 0 else expr.right)
    return expr


def _set(expr: Expr, path: tuple[int, ...], new: Expr) -> Expr:
    if not path:
        return new
    if isinstance(expr, Unary):
        return Unary(expr.op, _set(expr.child, path[1:], new))
    if path[0] == 0:
        return Binary(expr.op, _set(expr.left, path[1:], new), expr.right)
    return Binary(expr.op, expr.left, _set(expr.right, path[1:], new))


def _clamp_exponent(grammar: Grammar, k: int) -> int:
    lo, hi = grammar.exponent_range
    k = max(lo, min(hi, k))
    if k == 0:
        k = 1 if hi >= 1 else -1
    return k


def _mutate_once(expr: Expr, grammar: Grammar, rng: random.Random, kind: str,
                 scale: float) -> Expr | None:
    paths = _paths(expr)
    if kind == "operator":
        op_paths = [p for p in paths if isinstance(_get(expr, p), (Unary, Binary))]
        if not op_paths:
            return None
        path = rng.choice(op_paths)
        node = _get(expr, path)
        if isinstance(node, Unary):
            choices = sorted(grammar.unary_ops - {node.op})
            if not choices:
                return None
            return _set(expr, path, Unary(rng.choice(choices), node.child))
        choices = sorted(grammar.binary_ops - {node.op})
        rng.shuffle(choices)
        for op in choices:
            if op == "pow_int":
                # only possible when the right operand already is a constant
                if isinstance(node.right, Constant):
                    k = _clamp_exponent(grammar, round(node.right.value) or 1)
                    return _set(expr, path, Binary(op, node.left, Constant(float(k))))
                continue
            return _set(expr, path, Binary(op, node.left, node.right))
        return None
    if kind == "constant":
        const_paths = [p for p in paths if isinstance(_get(expr, p), Constant)]
        exp_paths = _exponent_paths(expr)
        if not const_paths and not exp_paths:
            return None
        pool = const_paths + exp_paths
        path = pool[rng.randrange(len(pool))]
        node = _get(expr, path)
        if path in exp_paths:
            step = rng.choice((-3, -2, -1, 1, 2, 3))
            k = _clamp_exponent(grammar, round(node.value) + step)
            return _set(expr, path, Constant(float(k)))
        value = node.value * math.exp(scale * rng.gauss(0.0, 1.0))
        if grammar.allow_negative_constants and rng.random() < 0.1:
            value = -value
        if not grammar.allow_negative_constants:
            value = max(value, 0.0)
        return _set(expr, path, Constant(value))
    if kind == "scale":
        # wrap a subtree in a constant multiple; the optimizer tunes it later
        path = rng.choice(paths)
        node = _get(expr, path)
        factor = math.exp(0.5 * rng.gauss(0.0, 1.0))
        return _set(expr, path, Binary("*", Constant(factor), node))
    if kind == "insert":
        path = rng.choice(paths)
        node = _get(expr, path)
        options: list[Expr] = [Unary(op, node) for op in sorted(grammar.unary_ops)]
        for op in sorted(grammar.binary_ops):
            if op == "pow_int":
                options.append(Binary(op, node, Constant(float(_random_exponent(grammar, rng)))))
            else:
                leaf = _random_constant(grammar, rng) if rng.random() < 0.5 else Variable(rng.choice(grammar.variables))
                options.append(Binary(op, node, leaf) if rng.random() < 0.5 else Binary(op, leaf, node))
        if not options:
            return None
        return _set(expr, path, rng.choice(options))
    if kind == "replace":
        path = rng.choice(paths)
        return _set(expr, path, random_tree(grammar, rng, max_depth=3))
    # delete: splice an operator node out, keeping one child
    op_paths = [p for p in paths if isinstance(_get(expr, p), (Unary, Binary))]
    if not op_paths:
        return None
    path = rng.choice(op_paths)
    node = _get(expr, path)
    if isinstance(node, Unary):
        keep = node.child
    elif node.op == "pow_int":
        keep = node.left
    else:
        keep = node.left if rng.random() < 0.5 else node.right
    return _set(expr, path, keep)


def _exponent_paths(expr: Expr) -> list[tuple[int, ...]]:
    out = []

    def rec(e: Expr, path):
        if isinstance(e, Unary):
            rec(e.child, path + (0,))
        elif isinstance(e, Binary):
            rec(e.left, path + (0,))
            if e.op == "pow_int" and isinstance(e.right, Constant):
                out.append(path + (1,))
            else:
                rec(e.right, path + (1,))

    rec(expr, ())
    return out


def mutate(expr: Expr, grammar: Grammar, rng: random.Random,
           weights: dict[str, float] | None = None, scale: float = 0.3,
           retries: int = 20) -> Expr:
    """One random edit: operator swap, constant perturbation, node
    insertion, subtree replacement or subtree deletion. The result always
    satisfies the grammar; after ``retries`` failed draws the input comes
    back unchanged."""
    weights = weights or DEFAULT_MUTATION_WEIGHTS
    kinds = sorted(weights)
    kind_weights = [weights[k] for k in kinds]
    for _ in range(retries):
        kind = rng.choices(kinds, weights=kind_weights)[0]
        candidate = _mutate_once(expr, grammar, rng, kind, scale)
        if candidate is None:
            continue
        if check_constraints(candidate, grammar):
            return candidate
    return expr


def crossover(a: Expr, b: Expr, rng: random.Random, grammar: Grammar | None = None,
              retries: int = 20) -> tuple[Expr, Expr]:
    """Swap uniformly chosen subtrees between two parents; offspring that
    break the grammar are retried, then the parents come back unchanged."""
    for _ in range(retries):
        pa = rng.choice(_paths(a))
        pb = rng.choice(_paths(b))
        sa, sb = _get(a, pa), _get(b, pb)
        ca, cb = _set(a, pa, sb), _set(b, pb, sa)
        if grammar is None or (check_constraints(ca, grammar) and check_constraints(cb, grammar)):
            return ca, cb
    return a, b


def tournament_select(population: list[EnergyModel], k: int, rng: random.Random,
                      state: ParsimonyState | None = None) -> EnergyModel:
    """Draw ``k`` members uniformly with replacement and return the one
    with the lowest penalized loss."""
    return population[_tournament_index(population, k, rng, state)]


def _tournament_index(population: list[EnergyModel], k: int, rng: random.Random,
                      state: ParsimonyState | None) -> int:
    state = state or ParsimonyState()
    best_i = -1
    best_key = None
    for _ in range(k):
        i = rng.randrange(len(population))
        m = population[i]
        key = (penalized_loss(m.loss, m.complexity, state), m.complexity, m.found_at, i)
        if best_key is None or key < best_key:
            best_i, best_key = i, key
    return best_i


# ---------------------------------------------------------------------------
# Constant optimization


def optimize_constants(expr: Expr, objective: Callable[[Expr], float],
                       rng: random.Random | None = None, positive: bool = False,
                       restarts: int = 2, max_evals: int = 150,
                       tol: float = 1e-12) -> Expr:
    """Fit the tree's constants to the objective with a Nelder-Mead
    simplex, best of a few restarts; integer power exponents are left to
    the discrete search. Positive-constrained constants are optimized in
    log space. The returned tree is never worse than the input."""
    theta0 = np.array(constant_slots(expr), dtype=float)
    if theta0.size == 0:
        return expr
    rng = rng or random.Random(0)
    use_log = positive and np.all(theta0 > 0.0)

    def decode(theta: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(theta) if use_log else theta

    def fun(theta: np.ndarray) -> float:
        values = decode(theta)
        if not np.all(np.isfinite(values)):
            return math.inf
        return objective(with_constants(expr, values))

    x0_base = np.log(theta0) if use_log else theta0
    best_loss = objective(expr)
    best_values = None
    for attempt in range(max(1, restarts)):
        if attempt == 0:
            x0 = x0_base
        else:
            jitter = np.array([rng.gauss(0.0, 0.5) for _ in theta0])
            x0 = x0_base + jitter if use_log else x0_base * np.exp(jitter)
        result = minimize(
            fun,
            x0,
            method="Nelder-Mead",
            options={"maxfev": max_evals, "fatol": 0.0, "xatol": tol, "disp": False},
        )
        if math.isfinite(result.fun) and result.fun < best_loss:
            best_loss = float(result.fun)
            best_values = decode(np.asarray(result.x, dtype=float))
    if best_values is None:
        return expr
    return with_constants(expr, best_values)


# ---------------------------------------------------------------------------
# Exact coefficient refit for polynomial candidates

_MAX_REFIT_TERMS = 8


def _power_tree(var: str, k: int, grammar: Grammar) -> Expr:
    v = Variable(var)
    if k == 1:
        return v
    if "pow_int" in grammar.binary_ops:
        return Binary("pow_int", v, Constant(float(k)))
    if k == 3 and "cube" in grammar.unary_ops:
        return Unary("cube", v)
    out = v
    for _ in range(k - 1):
        out = Binary("*", out, v)
    return out


def _term_tree(powers, grammar: Grammar) -> Expr:
    parts = [_power_tree(var, k, grammar) for var, k in powers]
    out = parts[0]
    for p in parts[1:]:
        out = Binary("*", out, p)
    return out


def refit_polynomial(expr: Expr, bundle: DataBundle, grammar: Grammar,
                     param: Parameterization) -> Expr | None:
    """Exact coefficient fit for a candidate that is a sum of power terms.

    Stress is linear in each monomial coefficient, so the loss-optimal
    coefficients solve a (weighted) least-squares problem; grammars that
    restrict coefficients to be positive use a non-negative solve, whose
    exact zeros also prune redundant terms. Returns the refitted canonical
    polynomial, or None when the candidate is not a polynomial."""
    terms = monomials(expr)
    if terms is None:
        return None
    signature = sorted({p for _, p in terms if p})
    if not signature or len(signature) > _MAX_REFIT_TERMS:
        return None
    lo, hi = grammar.exponent_range
    if any(k == 0 or not (lo <= k <= hi) for powers in signature for _, k in powers):
        return None
    scales = []
    targets = []
    for ds in bundle.sets():
        if ds.weight <= 0.0 or not len(ds):
            continue
        factor = math.sqrt(ds.weight / len(ds)) / ds.max_stress
        scales.append((ds.mode.value, factor))
        targets.append(ds.stresses * factor)
    if not targets:
        return None
    b = np.concatenate(targets)
    columns = []
    try:
        for powers in signature:
            preds = predict_bundle(EnergyModel(expr=_term_tree(powers, grammar), param=param), bundle)
            columns.append(np.concatenate([preds[mode] * f for mode, f in scales]))
    except DomainError:
        return None
    a = np.column_stack(columns)
    if not np.all(np.isfinite(a)):
        return None

    def solve(mat):
        if grammar.allow_negative_constants:
            return np.linalg.lstsq(mat, b, rcond=None)[0]
        return nnls(mat, b)[0]

    coef = solve(a)
    # a term contributing machine noise relative to the data is spurious
    norm_b = float(np.linalg.norm(b)) or 1.0
    keep = [
        j for j, c in enumerate(coef)
        if math.isfinite(c) and abs(c) * float(np.linalg.norm(a[:, j])) > 1e-9 * norm_b
    ]
    if not keep:
        return None
    if len(keep) < len(signature):
        coef_kept = solve(a[:, keep])
        signature = [signature[j] for j in keep]
        coef = coef_kept
    out: Expr | None = None
    for c, powers in zip(coef, signature):
        if c == 0.0 or not math.isfinite(c):
            continue
        term = _term_tree(powers, grammar)
        if c != 1.0:
            term = Binary("*", Constant(float(c)), term)
        out = term if out is None else Binary("+", out, term)
    return out


# ---------------------------------------------------------------------------
# Accuracy-complexity front


@dataclass
class ParetoFront:
    """Best model seen per complexity level, pruned so loss strictly
    decreases as complexity grows."""

    entries: dict[int, EnergyModel] = field(default_factory=dict)

    def would_enter(self, complexity_value: int, loss: float) -> bool:
        if not math.isfinite(loss):
            return False
        return not any(
            c <= complexity_value and m.loss <= loss for c, m in self.entries.items()
        )

    def threshold(self, complexity_value: int) -> float:
        """The loss a candidate of this complexity has to beat."""
        losses = [m.loss for c, m in self.entries.items() if c <= complexity_value]
        return min(losses) if losses else math.inf

    def consider(self, model: EnergyModel) -> bool:
        if not self.would_enter(model.complexity, model.loss):
            return False
        self.entries[model.complexity] = model
        for c in [c for c, m in self.entries.items()
                  if c > model.complexity and m.loss >= model.loss]:
            del self.entries[c]
        return True

    def models(self) -> list[EnergyModel]:
        return [self.entries[c] for c in sorted(self.entries)]

    def best(self) -> EnergyModel:
        if not self.entries:
            raise ValueError("empty front")
        return self.entries[max(self.entries)]

    def __len__(self) -> int:
        return len(self.entries)


def score_front(front: ParetoFront | list[EnergyModel]) -> list[EnergyModel]:
    """Attach selection scores: minus the slope of log loss against
    complexity, taken between adjacent front entries; the first entry
    scores zero."""
    models = front.models() if isinstance(front, ParetoFront) else sorted(
        front, key=lambda m: m.complexity
    )
    scored = []
    for i, m in enumerate(models):
        if i == 0:
            scored.append(replace(m, score=0.0))
            continue
        prev = models[i - 1]
        dlog = math.log(max(m.loss, 1e-300)) - math.log(max(prev.loss, 1e-300))
        scored.append(replace(m, score=-dlog / (m.complexity - prev.complexity)))
    return scored


def select_best(front: ParetoFront | list[EnergyModel]) -> EnergyModel:
    """The reported model: among entries whose loss is within a factor
    1.5 of the most accurate one, take the highest score; ties fall to
    the simpler, earlier model."""
    scored = score_front(front)
    if not scored:
        raise ValueError("empty front")
    min_loss = min(m.loss for m in scored)
    eligible = [m for m in scored if m.loss <= 1.5 * min_loss]
    return min(eligible, key=lambda m: (-m.score, m.complexity, m.found_at))


# ---------------------------------------------------------------------------
# Main loop


@dataclass(frozen=True)
class ProgressRecord:
    generation: int
    island: int
    best_loss: float
    front_size: int

    def line(self) -> str:
        return (
            f"generation={self.generation} island={self.island} "
            f"best_loss={self.best_loss:.6e} front_size={self.front_size}"
        )


def init_population(config: GPConfig, rng: random.Random,
                    loss_fn: Callable[[Expr], float]) -> list[EnergyModel]:
    """Random grammar-valid trees with their losses evaluated."""
    population = []
    for _ in range(config.population_size):
        tree = simplify(random_tree(config.grammar, rng, config.init_depth))
        if not check_constraints(tree, config.grammar):
            tree = Variable(config.grammar.variables[0])
        population.append(_make_model(tree, config, loss_fn, generation=0))
    return population


def _make_model(tree: Expr, config: GPConfig, loss_fn: Callable[[Expr], float],
                generation: int) -> EnergyModel:
    return EnergyModel(
        expr=tree,
        param=config.param,
        loss=loss_fn(tree),
        complexity=complexity(tree, config.grammar),
        found_at=generation,
    )


def evolve(config: GPConfig, bundle: DataBundle,
           progress: Callable[[ProgressRecord], None] | None = None) -> ParetoFront:
    """Run the island search and return the accuracy-complexity front.

    Deterministic for a fixed seed: every island draws from its own
    seeded stream and reductions happen in island order.
    """
    config.validate()
    for ds in bundle.sets():
        if ds.weight > 0.0 and (len(ds) == 0 or ds.max_stress == 0.0):
            raise DataError(f"mode {ds.mode.value} is weighted but has no usable data")

    grammar, param = config.grammar, config.param

    def loss_fn(tree: Expr) -> float:
        return prediction_loss(EnergyModel(expr=tree, param=param), bundle, grammar)

    positive = not grammar.allow_negative_constants
    rngs = [random.Random(f"{config.seed}:{i}") for i in range(config.populations)]
    parsimony = ParsimonyState(decay=config.parsimony_decay, scale=config.parsimony_scale)
    front = ParetoFront()

    def try_refit(model: EnergyModel) -> EnergyModel | None:
        """Exact polynomial coefficient fit; None when not applicable."""
        if model.complexity > 40:
            return None
        poly = refit_polynomial(model.expr, bundle, grammar, param)
        if poly is None:
            return None
        poly = simplify(poly)
        if not check_constraints(poly, grammar):
            return model
        better = _make_model(poly, config, loss_fn, model.found_at)
        if better.loss <= model.loss or not math.isfinite(model.loss):
            return better
        return model

    polished: dict[Expr, float] = {}

    def offer(model: EnergyModel, rng: random.Random) -> None:
        threshold = front.threshold(model.complexity)
        enters = front.would_enter(model.complexity, model.loss)
        # in the precision regime, a candidate landing near the front is
        # usually the right family with untuned constants; polish it
        near = (
            math.isfinite(model.loss)
            and threshold < 1e-4
            and model.loss <= 3e2 * threshold
        )
        # a sign-rejected polynomial can be rescued by the constrained fit
        rescue = not math.isfinite(model.loss) and rng.random() < 0.15
        if not (enters or near or rescue):
            return
        refitted = try_refit(model)
        if refitted is not None:
            front.consider(refitted)
            return
        if not (enters or (near and model.complexity <= 14)):
            return
        shape, _ = parameterize(model.expr)
        seen = polished.get(shape)
        if seen is not None and model.loss >= seen and not enters:
            return
        # marginal front improvements do not warrant a deep polish
        major = enters and (model.loss < 0.3 * threshold or near)
        restarts = config.opt_restarts if major else 1
        budget = config.opt_max_evals if major else max(40, config.opt_max_evals // 4)
        tuned = optimize_constants(
            model.expr, loss_fn, rng, positive=positive,
            restarts=restarts, max_evals=budget, tol=config.opt_tol,
        )
        if tuned is not model.expr:
            tuned = simplify(tuned)
            if check_constraints(tuned, grammar):
                better = _make_model(tuned, config, loss_fn, model.found_at)
                if better.loss <= model.loss:
                    model = better
        if seen is None or model.loss < seen:
            polished[shape] = model.loss
        front.consider(model)

    def pick_parent(pop: list[EnergyModel], rng: random.Random) -> int:
        i = _tournament_index(pop, config.tournament_size, rng, parsimony)
        if config.opt_prob > 0.0 and rng.random() < config.opt_prob:
            winner = pop[i]
            better = try_refit(winner)
            if better is None:
                tuned = optimize_constants(
                    winner.expr, loss_fn, rng, positive=positive,
                    restarts=1, max_evals=max(30, config.opt_max_evals // 4),
                    tol=config.opt_tol,
                )
                if tuned is not winner.expr:
                    tuned = simplify(tuned)
                    if check_constraints(tuned, grammar):
                        better = _make_model(tuned, config, loss_fn, winner.found_at)
            if better is not None and better.loss < winner.loss:
                pop[i] = better
        return i

    islands = []
    for i, rng in enumerate(rngs):
        pop = init_population(config, rng, loss_fn)
        for m in pop:
            offer(m, rng)
        islands.append(pop)
    parsimony.update(m.complexity for pop in islands for m in pop)

    best_loss = min(m.loss for pop in islands for m in pop)
    stale = 0
    for gen in range(1, config.iterations + 1):
        for i, rng in enumerate(rngs):
            pop = islands[i]
            elite = min(pop, key=lambda m: (m.loss, m.complexity, m.found_at))
            children: list[Expr] = []
            while len(children) < config.population_size:
                if rng.random() < config.crossover_prob:
                    ia = pick_parent(pop, rng)
                    ib = pick_parent(pop, rng)
                    ca, cb = crossover(pop[ia].expr, pop[ib].expr, rng, grammar)
                    children.append(ca)
                    if len(children) < config.population_size:
                        children.append(cb)
                else:
                    ia = pick_parent(pop, rng)
                    children.append(
                        mutate(pop[ia].expr, grammar, rng,
                               config.mutation_weights, config.constant_scale)
                    )
            newpop = [
                _make_model(simplify(ch), config, loss_fn, gen) for ch in children
            ]
            if front.entries and config.front_inject_prob > 0.0:
                # keep every represented complexity alive as mutation stock:
                # re-seed slots with perturbed front members
                stock = front.models()
                for j in range(len(newpop)):
                    if rng.random() < config.front_inject_prob:
                        seed_expr = stock[rng.randrange(len(stock))].expr
                        child = simplify(mutate(seed_expr, grammar, rng,
                                                config.mutation_weights,
                                                config.constant_scale))
                        newpop[j] = _make_model(child, config, loss_fn, gen)
                        offer(newpop[j], rng)
            worst = max(range(len(newpop)),
                        key=lambda j: (newpop[j].loss, newpop[j].complexity))
            newpop[worst] = elite
            for m in newpop:
                offer(m, rng)
            islands[i] = newpop
        parsimony.update(m.complexity for pop in islands for m in pop)

        gen_best = min(m.loss for pop in islands for m in pop)
        if front:
            gen_best = min(gen_best, front.best().loss)
        if progress is not None:
            for i, pop in enumerate(islands):
                progress(ProgressRecord(
                    generation=gen,
                    island=i,
                    best_loss=min(m.loss for m in pop),
                    front_size=len(front),
                ))

        # noise-level wiggle does not count as progress for the patience stop
        if gen_best < best_loss * (1.0 - 1e-3):
            best_loss = gen_best
            stale = 0
        else:
            best_loss = min(best_loss, gen_best)
            stale += 1
        if config.loss_floor is not None and best_loss <= config.loss_floor:
            break
        if config.stagnation is not None and stale >= config.stagnation:
            break

        if config.migration_interval and gen % config.migration_interval == 0 and len(islands) > 1:
            _migrate(islands, config)

    return front




def _migrate(islands: list[list[EnergyModel]], config: GPConfig) -> None:
    """Ring migration: each island's top slice replaces the worst slice
    of its right neighbor; built from pre-migration snapshots so the
    outcome does not depend on island order."""
    count = max(1, round(config.migration_fraction * config.population_size))
    tops = [
        sorted(pop, key=lambda m: (m.loss, m.complexity, m.found_at))[:count]
        for pop in islands
    ]
    for i, top in enumerate(tops):
        target = islands[(i + 1) % len(islands)]
        order = sorted(range(len(target)),
                       key=lambda j: (target[j].loss, target[j].complexity),
                       reverse=True)
        for slot, migrant in zip(order, top):
            target[slot] = migrant
