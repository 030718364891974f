"""Exponential-family gradient boosting for multinomial, Poisson, and
Gaussian relational targets.

Each target predicate gets one boosted regression function per natural
parameter: K class functions for multinomial targets (softmax link), one
log-rate function for Poisson counts, and a mean plus a directly modeled
standard deviation for Gaussian targets.  Gradient steps fit one tree per
function per iteration; the step size eta multiplies leaf contributions.

For mixed boolean-numeric parents the prediction is (log-)linear in the
continuous parent values with tree-valued coefficients over the discrete
context; see :class:`MixedParentModel`.

Per-example gradient generation reads only immutable state and can run in
parallel; iterations are sequential.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

from .logic import Atom, Constant, ExampleSet, FactBase, ParseError, PredicateSignature, Schema
from .regtree import (
    Leaf,
    RegressionExample,
    RegressionTree,
    TreeConfig,
    evaluate,
    fit_tree,
    parse_tree,
    serialize_tree,
)

EXP_CLAMP = 40.0
SIGMA_FLOOR = 1e-3


@dataclass(frozen=True)
class Multinomial:
    classes: int

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("multinomial needs K >= 2")


@dataclass(frozen=True)
class Poisson:
    pass


@dataclass(frozen=True)
class Gaussian:
    pass


DistributionKind = Union[Multinomial, Poisson, Gaussian]


def _clamped_exp(x: float) -> float:
    return math.exp(min(max(x, -EXP_CLAMP), EXP_CLAMP))


# ---------------------------------------------------------------------------
# gradient and likelihood formulas
# ---------------------------------------------------------------------------


def multinomial_prob(psis: list) -> list:
    """Softmax of the class scores; shift invariant, sums to one."""
    m = max(psis)
    exps = [math.exp(p - m) for p in psis]
    z = sum(exps)
    return [e / z for e in exps]


def multinomial_gradient(true_class: int, probs: list) -> list:
    """Component j is I(j = true_class) - p_j; components sum to zero."""
    if not 0 <= true_class < len(probs):
        raise ValueError("true_class out of range")
    return [(1.0 if j == true_class else 0.0) - p for j, p in enumerate(probs)]


def multinomial_ll(true_class: int, psis: list) -> float:
    m = max(psis)
    return psis[true_class] - m - math.log(sum(math.exp(p - m) for p in psis))


def poisson_gradient(y: int, psi: float) -> float:
    """y - e^psi, the log-likelihood gradient in the log-rate."""
    if y < 0:
        raise ValueError("counts are non-negative")
    return y - _clamped_exp(psi)


def poisson_ll(y: int, psi: float) -> float:
    """y psi - e^psi - ln y!"""
    if y < 0:
        raise ValueError("counts are non-negative")
    return y * psi - _clamped_exp(psi) - math.lgamma(y + 1)


def gaussian_gradients(y: float, mu: float, sigma: float) -> tuple:
    """(d/dmu, d/dsigma) of the Gaussian log-density at y."""
    if sigma < SIGMA_FLOOR:
        raise ValueError(f"sigma below floor {SIGMA_FLOOR}")
    r = y - mu
    return r / sigma ** 2, r * r / sigma ** 3 - 1.0 / sigma


def gaussian_ll(y: float, mu: float, sigma: float) -> float:
    if sigma < SIGMA_FLOOR:
        raise ValueError(f"sigma below floor {SIGMA_FLOOR}")
    return -0.5 * math.log(2.0 * math.pi) - math.log(sigma) \
        - (y - mu) ** 2 / (2.0 * sigma ** 2)


def mixed_softmax_prob(intercepts: list, coeffs: list, x_values: list,
                       k: int) -> float:
    """Softmax probability of class k with scores linear in the parents.

    ``coeffs[k][j]`` multiplies ``x_values[j]`` in class k's score.
    """
    if any(len(c) != len(x_values) for c in coeffs):
        raise ValueError("coefficient lists do not align with x_values")
    scores = [b + sum(x * w for x, w in zip(x_values, row))
              for b, row in zip(intercepts, coeffs)]
    return multinomial_prob(scores)[k]


def mixed_poisson_rate(intercept: float, coeffs: list, x_values: list) -> float:
    """e^(psi0 + sum_j x_j psi_j) with the exponent clamped."""
    if len(coeffs) != len(x_values):
        raise ValueError("coefficient list does not align with x_values")
    return _clamped_exp(intercept + sum(x * w for x, w in zip(x_values, coeffs)))


def mixed_gaussian_mean(intercept: float, coeffs: list, x_values: list) -> float:
    """psi0 + sum_j x_j psi_j."""
    if len(coeffs) != len(x_values):
        raise ValueError("coefficient list does not align with x_values")
    return intercept + sum(x * w for x, w in zip(x_values, coeffs))


# ---------------------------------------------------------------------------
# boosted hybrid models
# ---------------------------------------------------------------------------


@dataclass
class HybridConfig:
    iterations: int = 20
    tree: TreeConfig = field(default_factory=TreeConfig)
    eta_multinomial: float = 1.0
    eta_poisson: float = 0.5
    eta_mu: float = 1.0
    eta_sigma: float = 0.5
    sigma0: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.sigma0 < SIGMA_FLOOR:
            raise ValueError("sigma0 below floor")


@dataclass
class HybridModel:
    """Per-function tree lists for one target predicate.

    functions: multinomial targets use keys ``class=k``; Poisson uses
    ``rate``; Gaussian uses ``mu`` and ``sigma``.  Leaf contributions are
    already scaled by the step size at training time.
    """

    target: PredicateSignature
    kind: DistributionKind
    functions: dict
    eta: float
    sigma0: float = 1.0

    def _psi(self, key: str, atom: Atom, db: FactBase) -> float:
        return sum(evaluate(t, atom, db) for t in self.functions[key])

    def class_probs(self, atom: Atom, db: FactBase) -> list:
        if not isinstance(self.kind, Multinomial):
            raise ValueError("not a multinomial model")
        psis = [self._psi(f"class={k}", atom, db) for k in range(self.kind.classes)]
        return multinomial_prob(psis)

    def rate(self, atom: Atom, db: FactBase) -> float:
        if not isinstance(self.kind, Poisson):
            raise ValueError("not a Poisson model")
        return _clamped_exp(self._psi("rate", atom, db))

    def mu_sigma(self, atom: Atom, db: FactBase) -> tuple:
        if not isinstance(self.kind, Gaussian):
            raise ValueError("not a Gaussian model")
        mu = self._psi("mu", atom, db)
        sigma = max(SIGMA_FLOOR, self.sigma0 + self._psi("sigma", atom, db))
        return mu, sigma

    def prob_of_truth(self, atom: Atom, value, db: FactBase) -> float:
        """Probability (density for Gaussian) of the observed value."""
        if isinstance(self.kind, Multinomial):
            return self.class_probs(atom, db)[value]
        if isinstance(self.kind, Poisson):
            lam = self.rate(atom, db)
            return math.exp(value * math.log(lam) - lam - math.lgamma(value + 1))
        mu, sigma = self.mu_sigma(atom, db)
        return math.exp(gaussian_ll(value, mu, sigma))


def kind_for(target: PredicateSignature) -> DistributionKind:
    if target.kind == "multiclass":
        return Multinomial(target.classes)
    if target.kind == "count":
        return Poisson()
    if target.kind == "continuous":
        return Gaussian()
    raise ValueError(f"{target.name} is boolean; use the rfgb learner")


def _fit_scaled(regs: list, db: FactBase, modes: list, config: HybridConfig,
                eta: float) -> RegressionTree:
    tree = fit_tree(regs, db, modes, config.tree)

    def scale(node):
        if isinstance(node, Leaf):
            node.value *= eta
        else:
            scale(node.yes)
            scale(node.no)

    scale(tree.root)
    return tree


def train_hybrid(dataset: dict, db: FactBase, modes: list,
                 config: Optional[HybridConfig] = None,
                 on_iteration: Optional[Callable[[str, int, float], None]] = None) -> dict:
    """Boost one HybridModel per target predicate in `dataset`.

    `dataset` maps predicate name to its ExampleSet; the distribution is
    dispatched from each target's declared value kind.
    """
    config = config or HybridConfig()
    models = {}
    for name in sorted(dataset):
        examples = dataset[name]
        if not examples.entries:
            raise ValueError(f"no examples for target {name}")
        target = examples.target
        kind = kind_for(target)
        atoms = [a for a, _ in examples.entries]
        values = [v for _, v in examples.entries]
        if isinstance(kind, Multinomial):
            model = HybridModel(target, kind,
                                {f"class={k}": [] for k in range(kind.classes)},
                                config.eta_multinomial)
            psis = [[0.0] * kind.classes for _ in atoms]
            for m in range(config.iterations):
                probs = [multinomial_prob(row) for row in psis]
                for k in range(kind.classes):
                    regs = [RegressionExample(a, (1.0 if values[i] == k else 0.0) - probs[i][k])
                            for i, a in enumerate(atoms)]
                    tree = _fit_scaled(regs, db, modes, config, config.eta_multinomial)
                    model.functions[f"class={k}"].append(tree)
                    for i, a in enumerate(atoms):
                        psis[i][k] += evaluate(tree, a, db)
                if on_iteration is not None:
                    ll = sum(multinomial_ll(values[i], psis[i]) for i in range(len(atoms)))
                    on_iteration(name, m + 1, ll)
        elif isinstance(kind, Poisson):
            model = HybridModel(target, kind, {"rate": []}, config.eta_poisson)
            psis = [0.0] * len(atoms)
            for m in range(config.iterations):
                regs = [RegressionExample(a, poisson_gradient(values[i], psis[i]))
                        for i, a in enumerate(atoms)]
                tree = _fit_scaled(regs, db, modes, config, config.eta_poisson)
                model.functions["rate"].append(tree)
                for i, a in enumerate(atoms):
                    psis[i] += evaluate(tree, a, db)
                if on_iteration is not None:
                    ll = sum(poisson_ll(values[i], psis[i]) for i in range(len(atoms)))
                    on_iteration(name, m + 1, ll)
        else:
            model = HybridModel(target, kind, {"mu": [], "sigma": []},
                                config.eta_mu, sigma0=config.sigma0)
            mus = [0.0] * len(atoms)
            sigmas = [config.sigma0] * len(atoms)
            for m in range(config.iterations):
                mu_regs = [RegressionExample(
                    a, gaussian_gradients(values[i], mus[i], sigmas[i])[0])
                    for i, a in enumerate(atoms)]
                mu_tree = _fit_scaled(mu_regs, db, modes, config, config.eta_mu)
                model.functions["mu"].append(mu_tree)
                for i, a in enumerate(atoms):
                    mus[i] += evaluate(mu_tree, a, db)
                # sigma gradients use the just-updated means; stale means
                # inflate the squared residuals and blow sigma up
                sg_regs = [RegressionExample(
                    a, gaussian_gradients(values[i], mus[i], sigmas[i])[1])
                    for i, a in enumerate(atoms)]
                sg_tree = _fit_scaled(sg_regs, db, modes, config, config.eta_sigma)
                model.functions["sigma"].append(sg_tree)
                for i, a in enumerate(atoms):
                    # project back to the floor after each boosting step
                    sigmas[i] = max(SIGMA_FLOOR, sigmas[i] + evaluate(sg_tree, a, db))
                if on_iteration is not None:
                    ll = sum(gaussian_ll(values[i], mus[i], sigmas[i])
                             for i in range(len(atoms)))
                    on_iteration(name, m + 1, ll)
        models[name] = model
    return models


# ---------------------------------------------------------------------------
# mixed boolean-numeric parents
# ---------------------------------------------------------------------------


@dataclass
class MixedParentModel:
    """Tree-valued coefficients over the discrete context, one list per
    continuous parent plus an intercept list.

    The continuous parents are predicates whose fact payload, looked up at
    the target atom's arguments, supplies x_j.  For multinomial targets the
    coefficient and intercept lists are per class: ``functions[(k, j)]``
    with j = 0 the intercept and j >= 1 the parents in order.
    """

    target: PredicateSignature
    kind: DistributionKind
    parents: list
    functions: dict
    sigma0: float = 1.0
    sigma_trees: list = field(default_factory=list)

    def parent_values(self, atom: Atom, db: FactBase) -> list:
        xs = []
        for p in self.parents:
            v = db.lookup(p, atom.args)
            if v is None:
                raise ValueError(f"no {p} fact for {atom}")
            xs.append(float(v))
        return xs

    def _coeff(self, key, atom: Atom, db: FactBase) -> float:
        return sum(evaluate(t, atom, db) for t in self.functions[key])

    def predict(self, atom: Atom, db: FactBase):
        """Class probabilities, rate, or (mu, sigma) depending on the kind."""
        xs = self.parent_values(atom, db)
        if isinstance(self.kind, Multinomial):
            intercepts = [self._coeff((k, 0), atom, db) for k in range(self.kind.classes)]
            coeffs = [[self._coeff((k, j + 1), atom, db) for j in range(len(self.parents))]
                      for k in range(self.kind.classes)]
            return [mixed_softmax_prob(intercepts, coeffs, xs, k)
                    for k in range(self.kind.classes)]
        if isinstance(self.kind, Poisson):
            coeffs = [self._coeff((0, j + 1), atom, db) for j in range(len(self.parents))]
            return mixed_poisson_rate(self._coeff((0, 0), atom, db), coeffs, xs)
        coeffs = [self._coeff((0, j + 1), atom, db) for j in range(len(self.parents))]
        mu = mixed_gaussian_mean(self._coeff((0, 0), atom, db), coeffs, xs)
        sigma = max(SIGMA_FLOOR,
                    self.sigma0 + sum(evaluate(t, atom, db) for t in self.sigma_trees))
        return mu, sigma


def train_mixed(examples: ExampleSet, db: FactBase, modes: list, parents: list,
                config: Optional[HybridConfig] = None) -> MixedParentModel:
    """Fit a MixedParentModel: one coefficient tree per parent per iteration.

    The gradient for coefficient function psi_j is the chain rule through
    the (log-)linear link: the distribution residual times x_j (x_0 = 1 for
    the intercept).  Coefficients fitted earlier in the same iteration feed
    the residuals of later ones through the current model state.
    """
    config = config or HybridConfig()
    target = examples.target
    kind = kind_for(target)
    n_classes = kind.classes if isinstance(kind, Multinomial) else 1
    model = MixedParentModel(
        target, kind, list(parents),
        {(k, j): [] for k in range(n_classes) for j in range(len(parents) + 1)},
        sigma0=config.sigma0)
    atoms = [a for a, _ in examples.entries]
    values = [v for _, v in examples.entries]
    xs = [model.parent_values(a, db) for a in atoms]

    def residual(i):
        if isinstance(kind, Multinomial):
            probs = model.predict(atoms[i], db)
            return [(1.0 if values[i] == k else 0.0) - probs[k]
                    for k in range(n_classes)]
        if isinstance(kind, Poisson):
            return [values[i] - model.predict(atoms[i], db)]
        mu, sigma = model.predict(atoms[i], db)
        return [(values[i] - mu) / sigma ** 2]

    eta = {Multinomial: config.eta_multinomial, Poisson: config.eta_poisson,
           Gaussian: config.eta_mu}[type(kind)]
    for _ in range(config.iterations):
        for k in range(n_classes):
            for j in range(len(parents) + 1):
                regs = []
                for i, a in enumerate(atoms):
                    xj = 1.0 if j == 0 else xs[i][j - 1]
                    regs.append(RegressionExample(a, residual(i)[k] * xj))
                tree = _fit_scaled(regs, db, modes, config, eta)
                model.functions[(k, j)].append(tree)
        if isinstance(kind, Gaussian):
            regs = []
            for i, a in enumerate(atoms):
                mu, sigma = model.predict(atoms[i], db)
                regs.append(RegressionExample(a, gaussian_gradients(values[i], mu, sigma)[1]))
            model.sigma_trees.append(_fit_scaled(regs, db, modes, config, config.eta_sigma))
    return model


# ---------------------------------------------------------------------------
# trajectory aggregation
# ---------------------------------------------------------------------------

BOOL_AGGREGATORS = ("indicator", "count")
NUM_AGGREGATORS = ("min", "max", "mean", "latest")


def aggregate_trajectories(trajectories: list, schema: Schema, target: str,
                           bool_agg: str = "indicator", num_agg: str = "mean"):
    """Flatten trajectories into static facts plus a count-valued target.

    The target value is the number of times the target stream turns true;
    the other streams are aggregated over the stretch before the first
    target occurrence (the whole trajectory when there is none).  Boolean
    streams aggregate with indicator/count into ``<name>_ind`` or
    ``<name>_cnt``; numeric streams with min/max/mean/latest into
    ``<name>_<agg>``; discrete-valued streams keep their latest value in
    ``<name>_latest``.

    Returns (FactBase, ExampleSet) over the derived schema.
    """
    if bool_agg not in BOOL_AGGREGATORS:
        raise ValueError(f"bool_agg must be one of {BOOL_AGGREGATORS}")
    if num_agg not in NUM_AGGREGATORS:
        raise ValueError(f"num_agg must be one of {NUM_AGGREGATORS}")
    if target not in schema:
        raise ValueError(f"unknown target predicate {target!r}")
    target_sig = schema.get(target)
    if not target_sig.temporal or target_sig.kind != "boolean":
        raise ValueError("the aggregation target must be a boolean temporal predicate")

    derived = Schema()
    out_target = PredicateSignature(f"{target}_count", target_sig.arity - 1, "count")
    derived.add(out_target)
    names: dict = {}
    for sig in schema:
        if sig.name == target or not sig.temporal:
            continue
        arity = sig.arity - 1
        if sig.kind == "boolean":
            if bool_agg == "indicator":
                names[sig.name] = PredicateSignature(f"{sig.name}_ind", arity, "boolean")
            else:
                names[sig.name] = PredicateSignature(f"{sig.name}_cnt", arity, "count")
        elif sig.kind == "continuous":
            names[sig.name] = PredicateSignature(f"{sig.name}_{num_agg}", arity, "continuous")
        else:
            names[sig.name] = PredicateSignature(
                f"{sig.name}_latest", arity, sig.kind, sig.classes)
        derived.add(names[sig.name])

    facts, entries = [], []
    for traj in trajectories:
        streams: dict = {}
        for ev in traj.events:
            streams.setdefault(ev.stream(), []).append(ev)
        target_key = (target, (Constant(traj.entity),))
        target_events = streams.get(target_key, [])
        hits = [e.time for e in target_events if e.value is True]
        cutoff = hits[0] if hits else traj.horizon
        entries.append((Atom(out_target, target_key[1]), len(hits)))
        for key, events in streams.items():
            if key == target_key:
                continue
            sig = schema.get(key[0])
            window = [e for e in events if e.time <= cutoff]
            out_sig = names[sig.name]
            if sig.kind == "boolean":
                n_true = sum(1 for e in window if e.value is True)
                if bool_agg == "indicator":
                    if n_true:
                        facts.append(Atom(out_sig, key[1], True))
                else:
                    facts.append(Atom(out_sig, key[1], n_true))
            elif sig.kind == "continuous":
                values = [e.value for e in window]
                if not values:
                    continue
                agg = {"min": min, "max": max,
                       "mean": lambda v: sum(v) / len(v),
                       "latest": lambda v: v[-1]}[num_agg]
                facts.append(Atom(out_sig, key[1], float(agg(values))))
            else:
                if window:
                    facts.append(Atom(out_sig, key[1], window[-1].value))
    return FactBase(derived, facts), ExampleSet(out_target, entries)


# ---------------------------------------------------------------------------
# model files
# ---------------------------------------------------------------------------


def _kind_token(kind: DistributionKind) -> str:
    if isinstance(kind, Multinomial):
        return f"multinomial:{kind.classes}"
    return "poisson" if isinstance(kind, Poisson) else "gaussian"


def serialize_hybrid(model: HybridModel) -> str:
    lines = [f"model hybrid target={model.target.name}/{model.target.arity} "
             f"kind={_kind_token(model.kind)} eta={model.eta!r}"
             + (f" sigma0={model.sigma0!r}" if isinstance(model.kind, Gaussian) else "")]
    for key in sorted(model.functions):
        lines.append(f"function {key}")
        for i, tree in enumerate(model.functions[key]):
            lines.append(f"tree {i}")
            lines.append(serialize_tree(tree).rstrip("\n"))
    return "\n".join(lines) + "\n"


def parse_hybrid(text: str, schema: Schema) -> HybridModel:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("model hybrid "):
        raise ParseError("not a hybrid model file", 1)
    header = dict(tok.split("=", 1) for tok in lines[0].split()[2:])
    name, arity = header["target"].split("/")
    if name not in schema:
        raise ParseError(f"model target {name!r} not in schema", 1)
    target = schema.get(name)
    if target.arity != int(arity):
        raise ParseError("model target arity does not match schema", 1)
    token = header["kind"]
    if token.startswith("multinomial:"):
        kind: DistributionKind = Multinomial(int(token.split(":")[1]))
    elif token == "poisson":
        kind = Poisson()
    elif token == "gaussian":
        kind = Gaussian()
    else:
        raise ParseError(f"unknown distribution kind {token!r}", 1)
    model = HybridModel(target, kind, {}, float(header["eta"]),
                        sigma0=float(header.get("sigma0", "1.0")))
    current: Optional[str] = None
    block: list = []

    def flush():
        if current is not None and block:
            model.functions[current].append(
                parse_tree("\n".join(block), schema, target))
            block.clear()

    for raw in lines[1:]:
        if raw.startswith("function "):
            flush()
            current = raw[len("function "):].strip()
            model.functions.setdefault(current, [])
        elif raw.startswith("tree "):
            flush()
        elif raw.strip():
            block.append(raw)
    flush()
    return model
