"""Two-slice dynamic network structure scoring and greedy search.

Variables are observed in paired consecutive slices.  A structure has
intra-slice arcs among the slice t+1 copies (kept acyclic) and inter-slice
arcs from slice t to slice t+1 (always forward in time, self-links
allowed).  Three decomposable family scores are provided: penalized
log-likelihood with the BIC penalty, the Bayesian-Dirichlet marginal
likelihood, and a mutual-information test score.  Natural logarithms
throughout.

Scoring requires complete discrete data; missing-value handling is a
dataset-preparation concern.  Candidate moves read a shared family-score
cache and could be scored in parallel; the climb itself is sequential.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from statistics import NormalDist
from typing import Optional, Union

import numpy as np

from .logic import ParseError


@dataclass
class DiscreteDataset:
    """N paired-slice samples of n discrete variables.

    `rows` has shape (N, 2n): the first n columns are slice t, the last n
    are slice t+1.  States of variable i are 0..arities[i]-1.
    """

    names: list
    arities: list
    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        n = len(self.names)
        if len(self.arities) != n:
            raise ValueError("names and arities differ in length")
        if self.rows.ndim != 2 or self.rows.shape[1] != 2 * n:
            raise ValueError("rows must have 2n columns")
        for i, r in enumerate(self.arities):
            if r < 1:
                raise ValueError("arities must be positive")
            for col in (i, n + i):
                bad = (self.rows[:, col] < 0) | (self.rows[:, col] >= r)
                if bad.any():
                    raise ValueError(f"state out of range for {self.names[i]}")

    @property
    def n_vars(self) -> int:
        return len(self.names)

    @property
    def n_samples(self) -> int:
        return self.rows.shape[0]

    def column(self, ref: tuple) -> np.ndarray:
        """('t', j) is slice t of variable j; ('t1', j) is slice t+1."""
        kind, j = ref
        return self.rows[:, j] if kind == "t" else self.rows[:, self.n_vars + j]


def parse_dataset(text: str) -> DiscreteDataset:
    """Header ``vars: name:arity, ...`` then one CSV sample per line."""
    lines = [l.strip() for l in text.splitlines()]
    lines = [l for l in lines if l and not l.startswith("%")]
    if not lines or not lines[0].startswith("vars:"):
        raise ParseError("dataset needs a 'vars:' header", 1)
    names, arities = [], []
    for tok in lines[0][len("vars:"):].split(","):
        m = re.match(r"\s*([a-z][A-Za-z0-9_]*)\s*:\s*([0-9]+)\s*\Z", tok)
        if not m:
            raise ParseError(f"bad variable declaration {tok!r}", 1)
        names.append(m.group(1))
        arities.append(int(m.group(2)))
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 2 * len(names):
            raise ParseError(f"expected {2 * len(names)} values", lineno)
        try:
            rows.append([int(p) for p in parts])
        except ValueError:
            raise ParseError("states must be integers", lineno)
    try:
        return DiscreteDataset(names, arities, np.array(rows, dtype=np.int64))
    except ValueError as exc:
        raise ParseError(str(exc))


def serialize_dataset(data: DiscreteDataset) -> str:
    header = "vars: " + ", ".join(f"{n}:{r}" for n, r in zip(data.names, data.arities))
    lines = [header] + [",".join(str(v) for v in row) for row in data.rows]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# structures
# ---------------------------------------------------------------------------


@dataclass
class TwoSliceNetwork:
    """Arc sets by variable index; intra arcs must stay acyclic."""

    names: list
    arities: list
    intra: set          # (i, j): slice t+1 arc i -> j
    inter: set          # (i, j): slice t of i -> slice t+1 of j

    def __post_init__(self):
        self.intra = set(self.intra)
        self.inter = set(self.inter)
        if self._has_cycle():
            raise ValueError("intra-slice arcs form a cycle")

    def _has_cycle(self) -> bool:
        n = len(self.names)
        color = [0] * n

        def visit(u) -> bool:
            color[u] = 1
            for (a, b) in self.intra:
                if a == u:
                    if color[b] == 1 or (color[b] == 0 and visit(b)):
                        return True
            color[u] = 2
            return False

        return any(color[u] == 0 and visit(u) for u in range(n))

    def parents(self, i: int) -> tuple:
        """Sorted parent refs of slice t+1 variable i."""
        refs = [("t", a) for (a, b) in self.inter if b == i]
        refs += [("t1", a) for (a, b) in self.intra if b == i]
        return tuple(sorted(refs))

    def copy(self) -> "TwoSliceNetwork":
        return TwoSliceNetwork(self.names, self.arities, set(self.intra), set(self.inter))


def serialize_network(net: TwoSliceNetwork) -> str:
    lines = ["vars: " + ", ".join(f"{n}:{r}" for n, r in zip(net.names, net.arities))]
    for a, b in sorted(net.intra):
        lines.append(f"intra {net.names[a]}->{net.names[b]}")
    for a, b in sorted(net.inter):
        lines.append(f"inter {net.names[a]}=>{net.names[b]}")
    return "\n".join(lines) + "\n"


def parse_network(text: str) -> TwoSliceNetwork:
    lines = [l.strip() for l in text.splitlines() if l.strip()]
    if not lines or not lines[0].startswith("vars:"):
        raise ParseError("network needs a 'vars:' header", 1)
    names, arities = [], []
    for tok in lines[0][len("vars:"):].split(","):
        name, arity = tok.strip().split(":")
        names.append(name.strip())
        arities.append(int(arity))
    index = {n: i for i, n in enumerate(names)}
    intra, inter = set(), set()
    for lineno, line in enumerate(lines[1:], start=2):
        m = re.match(r"intra\s+(\w+)->(\w+)\Z", line)
        if m:
            intra.add((index[m.group(1)], index[m.group(2)]))
            continue
        m = re.match(r"inter\s+(\w+)=>(\w+)\Z", line)
        if m:
            inter.add((index[m.group(1)], index[m.group(2)]))
            continue
        raise ParseError(f"bad network line {line!r}", lineno)
    return TwoSliceNetwork(names, arities, intra, inter)


# ---------------------------------------------------------------------------
# score kinds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BIC:
    pass


@dataclass(frozen=True)
class BDe:
    ess: float = 1.0

    def __post_init__(self):
        if self.ess <= 0:
            raise ValueError("equivalent sample size must be positive")


@dataclass(frozen=True)
class MIT:
    alpha: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")


ScoreKind = Union[BIC, BDe, MIT]


def family_counts(data: DiscreteDataset, i: int, parents: tuple) -> np.ndarray:
    """Counts matrix of shape (q_i, r_i): parent configuration by child state.

    Parent configurations are mixed-radix over the parents in the given
    order, first parent most significant.
    """
    r = data.arities[i]
    child = data.column(("t1", i))
    q = 1
    for ref in parents:
        q *= data.arities[ref[1]]
    config = np.zeros(data.n_samples, dtype=np.int64)
    for ref in parents:
        config = config * data.arities[ref[1]] + data.column(ref)
    counts = np.zeros((q, r), dtype=np.int64)
    np.add.at(counts, (config, child), 1)
    return counts


def _xlogy(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y, dtype=float)
    mask = x > 0
    out[mask] = x[mask] * np.log(y[mask])
    return out


def family_loglik(data: DiscreteDataset, i: int, parents: tuple) -> float:
    """Maximum-likelihood family log-likelihood: sum D_ijk ln(D_ijk / D_ij)."""
    counts = family_counts(data, i, parents).astype(float)
    row = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.divide(counts, row, out=np.ones_like(counts), where=row > 0)
    return float(_xlogy(counts, ratio).sum())


def bic_penalty(q_i: int, r_i: int, n_samples: float) -> float:
    """q_i (r_i - 1) / 2 * ln N."""
    return q_i * (r_i - 1) / 2.0 * math.log(n_samples)


def bde_family_score(counts: np.ndarray, ess: float) -> float:
    """Dirichlet marginal log-likelihood with alpha_ijk = ess / (q_i r_i)."""
    counts = np.asarray(counts, dtype=float)
    q, r = counts.shape
    a_ijk = ess / (q * r)
    a_ij = ess / q
    total = 0.0
    for j in range(q):
        d_ij = counts[j].sum()
        total += math.lgamma(a_ij) - math.lgamma(a_ij + d_ij)
        for k in range(r):
            total += math.lgamma(a_ijk + counts[j, k]) - math.lgamma(a_ijk)
    return total


def mutual_information(counts: np.ndarray) -> float:
    """Empirical MI between child and joint parent, from a counts matrix."""
    counts = np.asarray(counts, dtype=float)
    n = counts.sum()
    if n == 0:
        return 0.0
    pj = counts.sum(axis=1, keepdims=True) / n
    pk = counts.sum(axis=0, keepdims=True) / n
    p = counts / n
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.divide(p, pj * pk, out=np.ones_like(p), where=p > 0)
    return float(_xlogy(p, ratio).sum())


def _gammainc_p(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x), series or continued
    fraction depending on the regime (Numerical Recipes style)."""
    if x < 0 or a <= 0:
        raise ValueError("bad arguments to P(a, x)")
    if x == 0.0:
        return 0.0
    lg = math.lgamma(a)
    if x < a + 1.0:
        term = 1.0 / a
        total = term
        n = a
        for _ in range(500):
            n += 1.0
            term *= x / n
            total += term
            if abs(term) < abs(total) * 1e-15:
                break
        return total * math.exp(-x + a * math.log(x) - lg)
    # Lentz continued fraction for Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 500):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return 1.0 - h * math.exp(-x + a * math.log(x) - lg)


def chi2_quantile(alpha: float, df: int) -> float:
    """Chi-square quantile: Wilson-Hilferty start, Newton-refined.

    The cube-root normal approximation alone drifts past 1e-3 relative
    error below roughly ten degrees of freedom; two or three Newton steps
    on the CDF keep the error under 1e-3 for all df <= 100.
    """
    if df < 1:
        raise ValueError("degrees of freedom must be positive")
    z = NormalDist().inv_cdf(alpha)
    c = 2.0 / (9.0 * df)
    x = df * (1.0 - c + z * math.sqrt(c)) ** 3
    a = df / 2.0
    for _ in range(3):
        x = max(x, 1e-12)
        f = _gammainc_p(a, x / 2.0) - alpha
        pdf = math.exp((a - 1.0) * math.log(x / 2.0) - x / 2.0
                       - math.lgamma(a)) / 2.0
        if pdf <= 0.0:
            break
        x -= f / pdf
    return x


def _mit_df_schedule(data: DiscreteDataset, i: int, parents: tuple) -> list:
    """Degrees of freedom per parent, parents taken in arity-descending order.

    The j-th parent contributes (r_i - 1)(r_j - 1) * prod of the arities of
    the parents ordered before it.
    """
    r_i = data.arities[i]
    rs = sorted((data.arities[ref[1]] for ref in parents), reverse=True)
    dfs, acc = [], 1
    for j, r_parent in enumerate(rs):
        dfs.append((r_i - 1) * (r_parent - 1) * acc)
        acc *= r_parent
    return dfs


def mit_family_score(data: DiscreteDataset, i: int, parents: tuple,
                     alpha: float) -> float:
    """2N I(X_i, PA_i) minus the summed chi-square quantiles; 0 if no parents."""
    if not parents:
        return 0.0
    counts = family_counts(data, i, parents)
    score = 2.0 * data.n_samples * mutual_information(counts)
    for df in _mit_df_schedule(data, i, parents):
        score -= chi2_quantile(alpha, df)
    return score


def family_score(data: DiscreteDataset, i: int, parents: tuple,
                 kind: ScoreKind) -> float:
    if isinstance(kind, BIC):
        q = 1
        for ref in parents:
            q *= data.arities[ref[1]]
        return family_loglik(data, i, parents) - bic_penalty(
            q, data.arities[i], data.n_samples)
    if isinstance(kind, BDe):
        return bde_family_score(family_counts(data, i, parents), kind.ess)
    return mit_family_score(data, i, parents, kind.alpha)


def score_network(net: TwoSliceNetwork, data: DiscreteDataset,
                  kind: ScoreKind) -> float:
    """Sum of family scores; decomposable over the slice t+1 families."""
    return sum(family_score(data, i, net.parents(i), kind)
               for i in range(data.n_vars))


# ---------------------------------------------------------------------------
# greedy hill climbing
# ---------------------------------------------------------------------------

_EPS = 1e-9


def _moves(net: TwoSliceNetwork, max_parents: int) -> list:
    n = len(net.names)
    moves = []
    for i in range(n):
        for j in range(n):
            if (i, j) in net.inter:
                moves.append(("del-inter", i, j))
            else:
                moves.append(("add-inter", i, j))
            if i == j:
                continue
            if (i, j) in net.intra:
                moves.append(("del-intra", i, j))
                moves.append(("rev-intra", i, j))
            else:
                moves.append(("add-intra", i, j))
    return sorted(moves)


def _apply(net: TwoSliceNetwork, move: tuple) -> Optional[TwoSliceNetwork]:
    kind, i, j = move
    out = net.copy()
    if kind == "add-inter":
        out.inter.add((i, j))
    elif kind == "del-inter":
        out.inter.discard((i, j))
    elif kind == "add-intra":
        out.intra.add((i, j))
    elif kind == "del-intra":
        out.intra.discard((i, j))
    else:  # rev-intra
        out.intra.discard((i, j))
        out.intra.add((j, i))
    if out._has_cycle():
        return None
    return out


def hill_climb(data: DiscreteDataset, kind: ScoreKind, max_parents: int = 3,
               on_step=None) -> TwoSliceNetwork:
    """Greedy structure search from the empty network.

    Applies the best strictly improving single-arc move (intra add, delete,
    reverse; inter add, delete) until a local optimum; intra acyclicity and
    the per-family parent cap are enforced, and ties break on the
    lexicographically smallest move.
    """
    if max_parents < 1:
        raise ValueError("max_parents must be at least 1")
    net = TwoSliceNetwork(data.names, data.arities, set(), set())
    cache: dict = {}

    def fam(i, parents):
        key = (i, parents)
        if key not in cache:
            cache[key] = family_score(data, i, parents, kind)
        return cache[key]

    score = sum(fam(i, net.parents(i)) for i in range(data.n_vars))
    step = 0
    while True:
        best = None
        for move in _moves(net, max_parents):
            candidate = _apply(net, move)
            if candidate is None:
                continue
            if any(len(candidate.parents(i)) > max_parents
                   for i in range(data.n_vars)):
                continue
            delta = 0.0
            for i in range(data.n_vars):
                old_p, new_p = net.parents(i), candidate.parents(i)
                if old_p != new_p:
                    delta += fam(i, new_p) - fam(i, old_p)
            if delta > _EPS and (best is None or (-delta, move) < (-best[0], best[1])):
                best = (delta, move, candidate)
        if best is None:
            return net
        delta, move, net = best
        score += delta
        step += 1
        if on_step is not None:
            on_step(step, move, score)
