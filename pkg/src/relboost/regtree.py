"""Relational regression-tree induction over gradient-valued examples.

The base learner of every boosting variant in this package.  A tree is
grown greedy best-first: keep a beam of expandable leaves, repeatedly pop
the leaf with the worst (largest) residual score, enumerate candidate node
tests from the mode declarations, and install the best-scoring one.  Node
tests are short conjunctions of literals appended to the clause accumulated
along the path, and evaluation takes the succeeds branch exactly when the
extended clause is satisfiable (existential semantics over the groundings
of path variables).

Fitted trees are immutable; candidate scoring only reads the fact base, so
one node expansion can score candidates from parallel workers.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field
from typing import Optional

from .logic import (
    Atom,
    Cmp,
    Constant,
    FactBase,
    Literal,
    ModeDeclaration,
    ParseError,
    PredicateSignature,
    Schema,
    Variable,
    parse_literal_list,
    solutions,
)


@dataclass
class RegressionExample:
    """One gradient-valued training example.

    ``db`` optionally overrides the shared fact base, which is how segment
    contexts (one snapshot per example) are fitted.
    """

    target: Atom
    gradient: float
    weight: float = 1.0
    db: Optional[FactBase] = None

    def __post_init__(self):
        if not self.target.is_ground():
            raise ValueError(f"example target {self.target} is not ground")
        if self.gradient != self.gradient or self.gradient in (float("inf"), float("-inf")):
            raise ValueError("gradient must be finite")


@dataclass(frozen=True)
class NodeTest:
    """Literals appended to the path clause; may introduce fresh variables."""

    literals: tuple

    def text(self) -> str:
        return ", ".join(str(l) for l in self.literals)


@dataclass
class Leaf:
    value: float


@dataclass
class Inner:
    test: NodeTest
    yes: object
    no: object


@dataclass
class RegressionTree:
    """Root-to-leaf paths are well-moded clauses; leaves carry regression values."""

    target: PredicateSignature
    root: object

    def head_vars(self) -> list:
        return [Variable(f"V{i}") for i in range(self.target.arity)]

    def leaf_count(self) -> int:
        def count(node):
            if isinstance(node, Leaf):
                return 1
            return count(node.yes) + count(node.no)
        return count(self.root)


@dataclass
class TreeConfig:
    max_leaves: int = 8
    max_new_literals_per_node: int = 2
    max_fresh_variables: int = 6
    min_examples_per_leaf: int = 1
    max_thresholds: int = 8

    def __post_init__(self):
        if self.max_leaves < 2:
            raise ValueError("max_leaves must be at least 2")


# ---------------------------------------------------------------------------
# scoring
# ---------------------------------------------------------------------------


def _weighted_sse(examples: list) -> float:
    """Weighted sum of squared errors about the weighted mean gradient."""
    total_w = sum(e.weight for e in examples)
    if total_w <= 0.0:
        return 0.0
    mean = sum(e.weight * e.gradient for e in examples) / total_w
    return sum(e.weight * (e.gradient - mean) ** 2 for e in examples)


def _weighted_mean(examples: list) -> float:
    total_w = sum(e.weight for e in examples)
    if total_w <= 0.0:
        return 0.0
    return sum(e.weight * e.gradient for e in examples) / total_w


def _seed_for(example: RegressionExample) -> dict:
    return {Variable(f"V{i}"): arg for i, arg in enumerate(example.target.args)}


def score_split(parent_examples: list, test: NodeTest, db: FactBase) -> float:
    """Score of splitting the examples by `test` as if at the tree root.

    The score is the summed weighted SSE of the two children about their
    means; lower is better, and splitting a pure node cannot improve on the
    parent SSE.
    """
    yes, no = [], []
    for ex in parent_examples:
        base = ex.db if ex.db is not None else db
        if next(solutions(test.literals, _seed_for(ex), base), None) is not None:
            yes.append(ex)
        else:
            no.append(ex)
    return _weighted_sse(yes) + _weighted_sse(no)


# ---------------------------------------------------------------------------
# candidate enumeration
# ---------------------------------------------------------------------------


def _value_variants(pred: PredicateSignature, dbs: list, max_thresholds: int) -> list:
    """Value constraints worth testing for one predicate."""
    if pred.kind == "boolean":
        return [None]
    if pred.kind == "multiclass":
        return [None] + list(range(pred.classes))
    observed = sorted({v for db in dbs for v in db.observed_values(pred.name)})
    if len(observed) > max_thresholds:
        step = (len(observed) - 1) / max_thresholds
        observed = [observed[round(step * (i + 1))] for i in range(max_thresholds)]
        observed = sorted(set(observed))
    # ">= min" is implied by existence, so thresholds start above it
    return [None] + [Cmp(">=", float(v)) for v in observed[1:]]


def _mode_literals(mode: ModeDeclaration, bound_vars: list, fresh_start: int,
                   dbs: list, max_thresholds: int) -> list:
    """All literals for one mode given the path's bound variables.

    Returns (literal, fresh_vars_introduced) pairs.
    """
    choice_lists = []
    for pos, flag in enumerate(mode.arg_modes):
        if flag == "+":
            if not bound_vars:
                return []
            choice_lists.append([("var", v) for v in bound_vars])
        elif flag == "-":
            choice_lists.append([("fresh", pos)])
        else:  # '#'
            consts = sorted({c.symbol for db in dbs
                             for c in db.observed_constants(mode.pred.name, pos)})
            if not consts:
                return []
            choice_lists.append([("const", Constant(s)) for s in consts])
    out = []
    values = _value_variants(mode.pred, dbs, max_thresholds)
    for combo in itertools.product(*choice_lists):
        args, fresh, n = [], [], fresh_start
        for kind, payload in combo:
            if kind == "fresh":
                v = Variable(f"V{n}")
                n += 1
                fresh.append(v)
                args.append(v)
            else:
                args.append(payload)
        for value in values:
            out.append((Literal(Atom(mode.pred, tuple(args), value)), tuple(fresh)))
    return out


def enumerate_tests(bound_vars: list, fresh_start: int, modes: list, dbs: list,
                    config: TreeConfig, path_texts: frozenset) -> list:
    """Candidate NodeTests at a node, deterministic and duplicate free.

    Single literals, plus (when allowed) two-literal chains where the
    second literal consumes a variable introduced by the first.
    """
    singles = []
    for mode in modes:
        for lit, fresh in _mode_literals(mode, bound_vars, fresh_start, dbs,
                                         config.max_thresholds):
            if str(lit) in path_texts:
                continue
            singles.append((lit, fresh))
    tests = {}
    budget = config.max_fresh_variables
    used = fresh_start - len(bound_vars)  # fresh vars already on the path
    for lit, fresh in singles:
        if used + len(fresh) > budget:
            continue
        t = NodeTest((lit,))
        tests.setdefault(t.text(), t)
        if config.max_new_literals_per_node < 2 or not fresh:
            continue
        inner_vars = bound_vars + list(fresh)
        for mode in modes:
            for lit2, fresh2 in _mode_literals(mode, inner_vars,
                                               fresh_start + len(fresh), dbs,
                                               config.max_thresholds):
                if used + len(fresh) + len(fresh2) > budget:
                    continue
                if not any(v in fresh for v in lit2.atom.variables()):
                    continue  # chain must consume a freshly introduced variable
                if str(lit2) == str(lit) or str(lit2) in path_texts:
                    continue
                t2 = NodeTest((lit, lit2))
                tests.setdefault(t2.text(), t2)
    return [tests[k] for k in sorted(tests)]


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def _extend_bindings(substs: list, literals: tuple, db: FactBase) -> list:
    """Distinct full groundings of `literals` reachable from any binding."""
    out, seen = [], set()
    for theta in substs:
        for ext in solutions(literals, theta, db):
            key = tuple(sorted((v.name, c.symbol) for v, c in ext.items()))
            if key not in seen:
                seen.add(key)
                out.append(ext)
    return out


@dataclass
class _GrowLeaf:
    created: int
    rows: list                   # (example, live bindings) pairs
    bound_vars: list
    fresh_used: int
    path_texts: frozenset
    sse: float = field(init=False)

    def __post_init__(self):
        self.sse = _weighted_sse([ex for ex, _ in self.rows])


def _score_candidate(args):
    leaf, test, shared_db = args
    yes, no = [], []
    for ex, substs in leaf.rows:
        base = ex.db if ex.db is not None else shared_db
        ext = _extend_bindings(substs, test.literals, base)
        if ext:
            yes.append((ex, ext))
        else:
            no.append((ex, substs))
    return yes, no


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get("RELBOOST_THREADS", "1")))
    except ValueError:
        return 1


def fit_tree(examples: list, db: FactBase, modes: list,
             config: Optional[TreeConfig] = None) -> RegressionTree:
    """Fit a relational regression tree to gradient-valued examples.

    Growth is greedy best-first under `config`; each leaf's value is the
    weighted mean gradient of the examples routed to it.  A root with no
    improving candidate yields a single-leaf tree.
    """
    if not examples:
        raise ValueError("cannot fit a tree to an empty example list")
    config = config or TreeConfig()
    target = examples[0].target.pred
    for ex in examples:
        if ex.target.pred != target:
            raise ValueError("examples mix target predicates")
    head_vars = [Variable(f"V{i}") for i in range(target.arity)]
    dbs = []
    seen_db_ids = set()
    for ex in examples:
        base = ex.db if ex.db is not None else db
        if base is not None and id(base) not in seen_db_ids:
            seen_db_ids.add(id(base))
            dbs.append(base)

    root_leaf = _GrowLeaf(0, [(ex, [_seed_for(ex)]) for ex in examples],
                          list(head_vars), 0, frozenset())
    beam = [root_leaf]
    finished = []
    n_created = 1
    n_leaves = 1
    links: dict = {}  # leaf object -> (parent leaf, test, branch) for assembly
    structure: dict = {id(root_leaf): None}

    while beam and n_leaves < config.max_leaves:
        # pop the worst leaf: largest SSE, ties to the oldest
        beam.sort(key=lambda l: (-l.sse, l.created))
        leaf = beam.pop(0)
        if leaf.sse <= 0.0:
            finished.append(leaf)
            continue
        candidates = enumerate_tests(leaf.bound_vars,
                                     target.arity + leaf.fresh_used,
                                     modes, dbs, config, leaf.path_texts)
        best = None
        if candidates:
            workers = _worker_count()
            if workers > 1:
                from concurrent.futures import ThreadPoolExecutor
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    routed = list(pool.map(_score_candidate,
                                           ((leaf, t, db) for t in candidates)))
            else:
                routed = [_score_candidate((leaf, t, db)) for t in candidates]
            for test, (yes, no) in zip(candidates, routed):
                if len(yes) < config.min_examples_per_leaf:
                    continue
                if len(no) < config.min_examples_per_leaf:
                    continue
                score = (_weighted_sse([ex for ex, _ in yes])
                         + _weighted_sse([ex for ex, _ in no]))
                if score >= leaf.sse - 1e-12:
                    continue
                key = (score, test.text())
                if best is None or key < best[0]:
                    best = (key, test, yes, no)
        if best is None:
            finished.append(leaf)
            continue
        _, test, yes_rows, no_rows = best
        fresh = [v for lit in test.literals for v in lit.atom.variables()
                 if v not in leaf.bound_vars]
        fresh = list(dict.fromkeys(fresh))
        new_texts = leaf.path_texts | {str(l) for l in test.literals}
        yes_leaf = _GrowLeaf(n_created, yes_rows, leaf.bound_vars + fresh,
                             leaf.fresh_used + len(fresh), new_texts)
        no_leaf = _GrowLeaf(n_created + 1, no_rows, list(leaf.bound_vars),
                            leaf.fresh_used, leaf.path_texts)
        n_created += 2
        n_leaves += 1
        structure[id(leaf)] = (test, yes_leaf, no_leaf)
        structure.setdefault(id(yes_leaf), None)
        structure.setdefault(id(no_leaf), None)
        beam.extend([yes_leaf, no_leaf])

    finished.extend(beam)

    def build(leaf_or_root):
        entry = structure.get(id(leaf_or_root))
        if entry is None:
            return Leaf(_weighted_mean([ex for ex, _ in leaf_or_root.rows]))
        test, yes_leaf, no_leaf = entry
        return Inner(test, build(yes_leaf), build(no_leaf))

    return RegressionTree(target, build(root_leaf))


def evaluate(tree: RegressionTree, target: Atom, db: FactBase) -> float:
    """Regression value of one ground target atom under the tree.

    Pure in (tree, target, db): walks from the root taking the succeeds
    branch exactly when the accumulated path clause extended with the
    node's test is satisfiable.
    """
    if target.pred.name != tree.target.name or target.pred.arity != tree.target.arity:
        raise ValueError(f"{target} does not match tree target {tree.target.name}")
    substs = [{Variable(f"V{i}"): arg for i, arg in enumerate(target.args)}]
    node = tree.root
    while isinstance(node, Inner):
        ext = _extend_bindings(substs, node.test.literals, db)
        if ext:
            substs = ext
            node = node.yes
        else:
            node = node.no
    return node.value


# ---------------------------------------------------------------------------
# serialization: preorder node listing, bit-exact round trip
# ---------------------------------------------------------------------------


def serialize_tree(tree: RegressionTree) -> str:
    lines = []

    def number(node, next_id):
        my_id = next_id
        if isinstance(node, Leaf):
            return {id(node): my_id}, next_id + 1
        ids = {id(node): my_id}
        yes_ids, next_id = number(node.yes, next_id + 1)
        no_ids, next_id = number(node.no, next_id)
        ids.update(yes_ids)
        ids.update(no_ids)
        return ids, next_id

    ids, _ = number(tree.root, 0)

    def emit(node):
        if isinstance(node, Leaf):
            lines.append(f"leaf {ids[id(node)]} value={node.value!r}")
        else:
            lines.append(f'node {ids[id(node)]} test "{node.test.text()}" '
                         f"yes={ids[id(node.yes)]} no={ids[id(node.no)]}")
            emit(node.yes)
            emit(node.no)

    emit(tree.root)
    return "\n".join(lines) + "\n"


def parse_tree(text: str, schema: Schema, target: PredicateSignature) -> RegressionTree:
    import re as _re

    node_re = _re.compile(r'node (\d+) test "(.*)" yes=(\d+) no=(\d+)\Z')
    leaf_re = _re.compile(r"leaf (\d+) value=(\S+)\Z")
    specs: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        raw = raw.strip()
        if not raw:
            continue
        m = node_re.match(raw)
        if m:
            nid, test_text, yes, no = m.groups()
            literals = tuple(parse_literal_list(test_text, schema))
            specs[int(nid)] = ("node", NodeTest(literals), int(yes), int(no))
            continue
        m = leaf_re.match(raw)
        if m:
            specs[int(m.group(1))] = ("leaf", float(m.group(2)))
            continue
        raise ParseError(f"bad tree line {raw!r}", lineno)
    if 0 not in specs:
        raise ParseError("tree has no root node 0")

    def build(nid):
        spec = specs.get(nid)
        if spec is None:
            raise ParseError(f"dangling node id {nid}")
        if spec[0] == "leaf":
            return Leaf(spec[1])
        _, test, yes, no = spec
        return Inner(test, build(yes), build(no))

    return RegressionTree(target, build(0))
