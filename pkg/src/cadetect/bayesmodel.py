"""Binary Bayesian networks with Dirichlet (Beta) parameter posteriors.

Every node is binary. A node's conditional table is indexed by its parent
configuration ``j = sum(x[parents[t]] << t)``, i.e. the first listed parent
is the least significant bit. Each configuration keeps a pseudo-count pair
``alpha[j] = (alpha_false, alpha_true)`` and an observed-count pair
``counts[j] = (N_false, N_true)``; with conjugate priors the posterior is
again Dirichlet and learning is pure counting.

Probabilities of a single new case are obtained by integrating the
parameters out, which for independent Dirichlet posteriors collapses to the
product of the local posterior means ``(N_jk + alpha_jk) / (N_j + alpha_j)``.
"""

from __future__ import annotations

import heapq
import shlex
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit, gammaln

from .dataset import AttributeSchema, CaseRecord, Dataset, DatasetError

DEFAULT_PRIOR_STRENGTH = 1.0
DEFAULT_MAX_PARENTS = 4


class StructureError(ValueError):
    """Invalid network structure or structure file."""


def _config_index(X: np.ndarray, parents: Sequence[int]) -> np.ndarray:
    if not parents:
        return np.zeros(X.shape[0], dtype=np.int64)
    bits = np.left_shift(1, np.arange(len(parents), dtype=np.int64))
    return X[:, list(parents)].astype(np.int64) @ bits


@dataclass(frozen=True)
class NetworkStructure:
    parents: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        parents = tuple(tuple(int(p) for p in ps) for ps in self.parents)
        object.__setattr__(self, "parents", parents)
        m = len(parents)
        for child, ps in enumerate(parents):
            if len(set(ps)) != len(ps):
                raise StructureError(f"node {child} lists a parent twice")
            for p in ps:
                if p == child:
                    raise StructureError(f"node {child} is its own parent")
                if not 0 <= p < m:
                    raise StructureError(f"node {child} has out-of-range parent {p}")
        self.topological_order()  # raises on cycles

    @property
    def n_nodes(self) -> int:
        return len(self.parents)

    @property
    def max_in_degree(self) -> int:
        return max((len(ps) for ps in self.parents), default=0)

    def children(self, node: int) -> tuple[int, ...]:
        return tuple(c for c, ps in enumerate(self.parents) if node in ps)

    def edges(self) -> list[tuple[int, int]]:
        return [(p, c) for c, ps in enumerate(self.parents) for p in ps]

    def topological_order(self) -> tuple[int, ...]:
        """Kahn's algorithm, smallest ready index first."""
        m = len(self.parents)
        indeg = [len(ps) for ps in self.parents]
        kids = [[] for _ in range(m)]
        for c, ps in enumerate(self.parents):
            for p in ps:
                kids[p].append(c)
        ready = [i for i in range(m) if indeg[i] == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            node = heapq.heappop(ready)
            order.append(node)
            for c in kids[node]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    heapq.heappush(ready, c)
        if len(order) != m:
            raise StructureError("structure contains a directed cycle")
        return tuple(order)

    @classmethod
    def empty(cls, n_nodes: int) -> "NetworkStructure":
        return cls(tuple(() for _ in range(n_nodes)))


@dataclass(frozen=True, eq=False)
class DirichletTable:
    alpha: np.ndarray   # (2**n_parents, 2) float, > 0
    counts: np.ndarray  # (2**n_parents, 2) int, >= 0

    def __post_init__(self):
        if self.alpha.shape != self.counts.shape or self.alpha.ndim != 2 or self.alpha.shape[1] != 2:
            raise ValueError("alpha and counts must both have shape (configs, 2)")
        rows = self.alpha.shape[0]
        if rows & (rows - 1):
            raise ValueError("number of parent configurations must be a power of two")
        if not np.all(self.alpha > 0):
            raise ValueError("pseudo-counts must be positive")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")
        self.alpha.setflags(write=False)
        self.counts.setflags(write=False)

    @property
    def n_configs(self) -> int:
        return self.alpha.shape[0]

    def posterior_mean(self) -> np.ndarray:
        """``P(node = true | configuration)`` for each configuration."""
        post = self.alpha + self.counts
        return post[:, 1] / post.sum(axis=1)

    def log_predictive(self) -> np.ndarray:
        """Elementwise ``log((N_jk + a_jk) / (N_j + a_j))``, shape (configs, 2)."""
        post = self.alpha + self.counts
        return np.log(post) - np.log(post.sum(axis=1, keepdims=True))


@dataclass(frozen=True, eq=False)
class BayesNetModel:
    structure: NetworkStructure
    tables: tuple[DirichletTable, ...]
    schema: AttributeSchema

    def __post_init__(self):
        if self.structure.n_nodes != self.schema.arity or len(self.tables) != self.schema.arity:
            raise ValueError("structure, tables and schema disagree on node count")
        for node, (ps, table) in enumerate(zip(self.structure.parents, self.tables)):
            if table.n_configs != 2 ** len(ps):
                raise ValueError(f"table for node {node} has wrong number of configurations")

    def predictive_probability(self, record: CaseRecord) -> float:
        return predictive_probability(self, record)

    def log_joint(self, X: np.ndarray) -> np.ndarray:
        """Log of the parameter-averaged probability of each full row of ``X``."""
        X = np.asarray(X, dtype=np.uint8)
        total = np.zeros(X.shape[0])
        for node, ps in enumerate(self.structure.parents):
            lp = self.tables[node].log_predictive()
            total += lp[_config_index(X, ps), X[:, node]]
        return total


def naive_bayes_structure(schema: AttributeSchema) -> NetworkStructure:
    """Target as the lone root; every context attribute hangs off it."""
    t = schema.target_index
    return NetworkStructure(tuple(() if i == t else (t,) for i in range(schema.arity)))


def _tally(X: np.ndarray, child: int, parents: Sequence[int]) -> np.ndarray:
    idx = _config_index(X, parents) * 2 + X[:, child]
    return np.bincount(idx, minlength=2 ** (len(parents) + 1)).reshape(-1, 2)


def fit_parameters(structure: NetworkStructure, training: Dataset,
                   prior_strength: float = DEFAULT_PRIOR_STRENGTH) -> BayesNetModel:
    """Count sufficient statistics under uniform pseudo-counts ``prior_strength``."""
    if prior_strength <= 0:
        raise ValueError("prior_strength must be positive")
    if structure.n_nodes != training.schema.arity:
        raise ValueError("structure and training schema disagree on node count")
    X = training.matrix()
    tables = []
    for child, ps in enumerate(structure.parents):
        counts = _tally(X, child, ps).astype(np.int64)
        alpha = np.full(counts.shape, float(prior_strength))
        tables.append(DirichletTable(alpha, counts))
    return BayesNetModel(structure, tuple(tables), training.schema)


def _target_log_scores(model: BayesNetModel, X: np.ndarray) -> np.ndarray:
    """``log J(a)`` for a in {false, true} restricted to factors touching the target.

    Factors not mentioning the target cancel in the conditional, so only
    the target's own family and its children's families are summed.
    Returns shape (n, 2).
    """
    t = model.schema.target_index
    nodes = (t, *model.structure.children(t))
    out = np.zeros((X.shape[0], 2))
    for a in (0, 1):
        Xa = X.copy()
        Xa[:, t] = a
        for node in nodes:
            lp = model.tables[node].log_predictive()
            out[:, a] += lp[_config_index(Xa, model.structure.parents[node]), Xa[:, node]]
    return out


def predictive_probabilities(model: BayesNetModel, X: np.ndarray) -> np.ndarray:
    """Vectorised :func:`predictive_probability` over the rows of ``X``."""
    X = np.asarray(X, dtype=np.uint8)
    if X.ndim != 2 or X.shape[1] != model.schema.arity:
        raise ValueError(f"expected rows of arity {model.schema.arity}")
    scores = _target_log_scores(model, X)
    own = X[:, model.schema.target_index].astype(bool)
    diff = np.where(own, scores[:, 1] - scores[:, 0], scores[:, 0] - scores[:, 1])
    return expit(diff)


def predictive_probability(model: BayesNetModel, record: CaseRecord) -> float:
    """Probability of the record's own target value given all its other values."""
    if len(record.values) != model.schema.arity:
        raise ValueError(
            f"record has {len(record.values)} values, model arity is {model.schema.arity}"
        )
    X = np.array([record.values], dtype=np.uint8)
    return float(predictive_probabilities(model, X)[0])


def family_log_score(X: np.ndarray, child: int, parents: Sequence[int],
                     prior_strength: float = DEFAULT_PRIOR_STRENGTH) -> float:
    counts = _tally(X, child, parents)
    a = float(prior_strength)
    n_j = counts.sum(axis=1)
    return float(
        np.sum(gammaln(2 * a) - gammaln(2 * a + n_j))
        + np.sum(gammaln(a + counts) - gammaln(a))
    )


def log_marginal_likelihood(structure: NetworkStructure, data: Dataset,
                            prior_strength: float = DEFAULT_PRIOR_STRENGTH) -> float:
    """Closed-form log marginal likelihood, summed over node families."""
    if prior_strength <= 0:
        raise ValueError("prior_strength must be positive")
    X = data.matrix()
    return float(sum(
        family_log_score(X, child, ps, prior_strength)
        for child, ps in enumerate(structure.parents)
    ))


_ADD, _DELETE, _REVERSE = 0, 1, 2


def _reaches(kids: list[set[int]], src: int, dst: int, skip: tuple[int, int] | None = None) -> bool:
    stack, seen = [src], {src}
    while stack:
        node = stack.pop()
        for c in kids[node]:
            if skip is not None and (node, c) == skip:
                continue
            if c == dst:
                return True
            if c not in seen:
                seen.add(c)
                stack.append(c)
    return False


def learn_structure(data: Dataset, max_parents: int = DEFAULT_MAX_PARENTS,
                    prior_strength: float = DEFAULT_PRIOR_STRENGTH) -> NetworkStructure:
    """Greedy hill climbing over add/delete/reverse moves from the empty graph.

    Each step takes the move with the largest strictly positive score gain;
    equal gains go to the smallest ``(child, parent, kind)`` key with
    add < delete < reverse. Moves are keyed by the edge ``parent -> child``
    as it exists (delete, reverse) or would exist (add).
    """
    if len(data) == 0:
        raise ValueError("cannot learn a structure from an empty dataset")
    if max_parents < 0:
        raise ValueError("max_parents must be nonnegative")
    X = data.matrix()
    m = data.schema.arity
    cache: dict[tuple[int, tuple[int, ...]], float] = {}

    def score(child, pa):
        key = (child, tuple(sorted(pa)))
        if key not in cache:
            cache[key] = family_log_score(X, child, key[1], prior_strength)
        return cache[key]

    parents = [set() for _ in range(m)]
    kids = [set() for _ in range(m)]
    current = [score(i, ()) for i in range(m)]

    while True:
        best_gain, best_move = 0.0, None
        for child in range(m):
            for parent in range(m):
                if parent == child:
                    continue
                if parent not in parents[child]:
                    if len(parents[child]) >= max_parents or _reaches(kids, child, parent):
                        continue
                    gain = score(child, parents[child] | {parent}) - current[child]
                    if gain > best_gain:
                        best_gain, best_move = gain, (child, parent, _ADD)
                    continue
                dropped = score(child, parents[child] - {parent}) - current[child]
                if dropped > best_gain:
                    best_gain, best_move = dropped, (child, parent, _DELETE)
                if len(parents[parent]) >= max_parents:
                    continue
                if _reaches(kids, parent, child, skip=(parent, child)):
                    continue
                gain = dropped + score(parent, parents[parent] | {child}) - current[parent]
                if gain > best_gain:
                    best_gain, best_move = gain, (child, parent, _REVERSE)
        if best_move is None:
            break
        child, parent, kind = best_move
        if kind == _ADD:
            parents[child].add(parent)
            kids[parent].add(child)
        else:
            parents[child].discard(parent)
            kids[parent].discard(child)
            if kind == _REVERSE:
                parents[parent].add(child)
                kids[child].add(parent)
        current[child] = score(child, parents[child])
        current[parent] = score(parent, parents[parent])

    return NetworkStructure(tuple(tuple(sorted(ps)) for ps in parents))


def sample_from_model(model: BayesNetModel, n: int, seed: int,
                      id_prefix: str = "c") -> Dataset:
    """Forward-sample ``n`` complete records using posterior-mean parameters.

    Records get ids ``{id_prefix}00001`` etc.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    rng = np.random.default_rng(seed)
    m = model.schema.arity
    X = np.zeros((n, m), dtype=np.uint8)
    for node in model.structure.topological_order():
        theta = model.tables[node].posterior_mean()
        u = rng.random(n)
        X[:, node] = u < theta[_config_index(X, model.structure.parents[node])]
    width = max(5, len(str(n)))
    records = [
        CaseRecord(tuple(bool(v) for v in row), case_id=f"{id_prefix}{i + 1:0{width}d}")
        for i, row in enumerate(X)
    ]
    return Dataset(model.schema, records, _matrix=X)


def model_from_probabilities(structure: NetworkStructure, schema: AttributeSchema,
                             theta: Sequence[np.ndarray], concentration: float = 1.0) -> BayesNetModel:
    """Prior-only model whose posterior means equal ``theta[node][config]``.

    ``theta[node]`` is ``P(node = true | configuration)``; values must lie
    strictly inside (0, 1).
    """
    tables = []
    for node, ps in enumerate(structure.parents):
        th = np.asarray(theta[node], dtype=float)
        if th.shape != (2 ** len(ps),) or np.any(th <= 0) or np.any(th >= 1):
            raise ValueError(f"theta for node {node} must have {2 ** len(ps)} entries in (0, 1)")
        alpha = concentration * np.column_stack([1 - th, th])
        tables.append(DirichletTable(alpha, np.zeros(alpha.shape, dtype=np.int64)))
    return BayesNetModel(structure, tuple(tables), schema)


def random_network(schema: AttributeSchema, max_parents: int, seed: int,
                   strength: float = 1.0, target_children: int | None = None) -> BayesNetModel:
    """Seeded random network over ``schema`` for synthetic experiments.

    Nodes are placed in a random order with the target third, so it can
    have up to two parents and many children. Every later node picks up to
    ``max_parents`` earlier parents, and ``target_children`` of them
    (default: half of the nodes after the target) are forced to include the
    target. Table entries are drawn from ``Beta(strength, strength)`` and
    clipped to [0.02, 0.98]; small ``strength`` gives near-deterministic
    dependencies.
    """
    rng = np.random.default_rng(seed)
    m = schema.arity
    t = schema.target_index
    others = [i for i in range(m) if i != t]
    rng.shuffle(others)
    pos = min(2, m - 1)
    order = others[:pos] + [t] + others[pos:]
    after = order[pos + 1:]
    if target_children is None:
        target_children = len(after) // 2
    forced = set(rng.choice(after, size=min(target_children, len(after)), replace=False).tolist()) if after else set()

    parents: list[tuple[int, ...]] = [()] * m
    for rank, node in enumerate(order):
        earlier = order[:rank]
        if not earlier or max_parents == 0:
            continue
        k = int(rng.integers(1, min(max_parents, len(earlier)) + 1))
        chosen = []
        if node in forced:
            chosen.append(t)
        pool = [e for e in earlier if e not in chosen]
        extra = max(0, k - len(chosen))
        if extra and pool:
            chosen += rng.choice(pool, size=min(extra, len(pool)), replace=False).tolist()
        parents[node] = tuple(sorted(int(c) for c in chosen))
    structure = NetworkStructure(tuple(parents))
    theta = [
        np.clip(rng.beta(strength, strength, size=2 ** len(ps)), 0.02, 0.98)
        for ps in structure.parents
    ]
    return model_from_probabilities(structure, schema, theta, concentration=1.0)


def format_structure(structure: NetworkStructure, schema: AttributeSchema) -> str:
    """One line per node: ``child <- parent parent ...`` (shell-quoted names)."""
    if structure.n_nodes != schema.arity:
        raise StructureError("structure and schema disagree on node count")
    lines = []
    for child, ps in enumerate(structure.parents):
        names = " ".join(shlex.quote(schema.attributes[p]) for p in ps)
        lines.append(f"{shlex.quote(schema.attributes[child])} <- {names}".rstrip())
    return "\n".join(lines) + "\n"


def parse_structure(text: str, schema: AttributeSchema) -> NetworkStructure:
    parents: dict[int, tuple[int, ...]] = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            tokens = shlex.split(line)
        except ValueError as exc:
            raise StructureError(f"line {line_no}: {exc}") from None
        if len(tokens) < 2 or tokens[1] != "<-":
            raise StructureError(f"line {line_no}: expected 'child <- parents...'")
        try:
            child = schema.index(tokens[0])
            ps = tuple(schema.index(name) for name in tokens[2:])
        except DatasetError as exc:
            raise StructureError(f"line {line_no}: {exc}") from None
        if child in parents:
            raise StructureError(f"line {line_no}: node {tokens[0]!r} listed twice")
        parents[child] = ps
    missing = [schema.attributes[i] for i in range(schema.arity) if i not in parents]
    if missing:
        raise StructureError(f"structure file lacks lines for: {', '.join(missing)}")
    return NetworkStructure(tuple(parents[i] for i in range(schema.arity)))
