"""Independent reference implementations shared by the test modules."""

import itertools
import math
from fractions import Fraction

from cadetect.bayesmodel import BayesNetModel, DirichletTable, NetworkStructure
from cadetect.dataset import AttributeSchema


def config_of(x, parents):
    return sum(x[p] << t for t, p in enumerate(parents))


def oracle_joint(model, x):
    """Product of local parameter-averaged factors, in plain floats."""
    p = 1.0
    for node, ps in enumerate(model.structure.parents):
        tab = model.tables[node]
        j = config_of(x, ps)
        num = tab.alpha[j, x[node]] + tab.counts[j, x[node]]
        den = tab.alpha[j].sum() + tab.counts[j].sum()
        p *= num / den
    return p


def oracle_conditional(model, x):
    """p(target = x[t] | rest) by enumerating the whole joint table."""
    m = model.schema.arity
    t = model.schema.target_index
    table = {y: oracle_joint(model, y) for y in itertools.product((0, 1), repeat=m)}
    assert math.isclose(sum(table.values()), 1.0, rel_tol=1e-12)
    flipped = tuple(1 - v if i == t else v for i, v in enumerate(x))
    return table[tuple(x)] / (table[tuple(x)] + table[flipped])


def oracle_prequential(structure, rows, a):
    """Product of one-step-ahead predictive probabilities with dict counts."""
    counts = {}
    prob = 1.0
    for x in rows:
        for node, ps in enumerate(structure.parents):
            j = config_of(x, ps)
            c = counts.setdefault((node, j), [0, 0])
            prob *= (c[x[node]] + a) / (c[0] + c[1] + 2 * a)
        for node, ps in enumerate(structure.parents):
            counts[(node, config_of(x, ps))][x[node]] += 1
    return prob


def random_structure(rng, m, max_parents=3):
    order = rng.permutation(m)
    parents = [()] * m
    for rank, node in enumerate(order):
        k = int(rng.integers(0, min(max_parents, rank) + 1))
        parents[node] = tuple(sorted(rng.choice(order[:rank], size=k, replace=False).tolist())) if k else ()
    return NetworkStructure(tuple(parents))


def random_model(rng, m):
    structure = random_structure(rng, m)
    schema = AttributeSchema(tuple(f"v{i}" for i in range(m)), int(rng.integers(0, m)))
    tables = tuple(
        DirichletTable(rng.uniform(0.1, 3.0, size=(2 ** len(ps), 2)),
                       rng.integers(0, 25, size=(2 ** len(ps), 2)))
        for ps in structure.parents
    )
    return BayesNetModel(structure, tables, schema)


def mann_whitney(scores):
    """Exact P(anomaly score < normal score) with ties counted half."""
    anom = [p for p, g in scores if g]
    norm = [p for p, g in scores if not g]
    wins = sum(Fraction(1) if a < b else Fraction(1, 2) if a == b else Fraction(0)
               for a in anom for b in norm)
    return wins / (len(anom) * len(norm))
