"""Exit criteria for the package, one test (or test group) per criterion.

Run with ``pytest tests/test_acceptance.py -v``; a PASS/FAIL line per
criterion is printed in the terminal summary.
"""

import itertools
import math
import time

import numpy as np
import pytest

from cadetect.bayesmodel import (
    NetworkStructure,
    learn_structure,
    log_marginal_likelihood,
    model_from_probabilities,
    predictive_probability,
    random_network,
    sample_from_model,
)
from cadetect.dataset import ANOMALOUS, NORMAL, AttributeSchema, CaseRecord, Dataset, port_schema
from cadetect.pipeline import (
    INDETERMINATE,
    NAIVE_BAYES,
    POP_ALL,
    POP_MAHALANOBIS,
    POP_WEIGHTED,
    STANDARD_CONFIGS,
    DetectionConfig,
    detect_case,
    inject_anomalies,
    leave_one_out,
    roc_auc,
    select_eval_cases,
    write_report,
)
from cadetect.similarity import MAHALANOBIS, WEIGHTED_MAHALANOBIS, MetricConfig, distance, neighborhood_check
from oracles import mann_whitney, oracle_conditional, oracle_prequential, random_model, random_structure


def rows_dataset(rows):
    m = len(rows[0])
    schema = AttributeSchema(tuple(f"v{i}" for i in range(m)), 0)
    return Dataset(schema, [CaseRecord(tuple(r)) for r in rows])


# 1 ---------------------------------------------------------------------------

@pytest.mark.acceptance("C1", "predictive probability equals brute-force enumeration (200 models, 1e-12, <10 s)")
def test_c1_prediction_oracle(record):
    rng = np.random.default_rng(101)
    worst = 0.0
    start = time.perf_counter()
    for _ in range(200):
        m = int(rng.integers(1, 6))
        model = random_model(rng, m)
        for x in itertools.product((0, 1), repeat=m):
            got = predictive_probability(model, CaseRecord(x))
            worst = max(worst, abs(got - oracle_conditional(model, x)))
    elapsed = time.perf_counter() - start
    record(f"max err {worst:.1e}, {elapsed:.2f} s")
    assert worst <= 1e-12
    assert elapsed < 10


# 2 ---------------------------------------------------------------------------

@pytest.mark.acceptance("C2", "marginal likelihood equals prequential product (100 datasets, 1e-9 rel); [1,1,0] = 1/12")
def test_c2_scoring_oracle(record):
    rng = np.random.default_rng(202)
    worst = 0.0
    for _ in range(100):
        m = int(rng.integers(1, 5))
        n = int(rng.integers(0, 21))
        structure = random_structure(rng, m)
        a = float(rng.choice([0.5, 1.0, 2.0]))
        rows = [tuple(int(v) for v in r) for r in rng.integers(0, 2, size=(n, m))]
        data = Dataset(AttributeSchema(tuple(f"v{i}" for i in range(m)), 0), [CaseRecord(r) for r in rows])
        got = math.exp(log_marginal_likelihood(structure, data, a))
        want = oracle_prequential(structure, rows, a)
        worst = max(worst, abs(got - want) / want)
    single = log_marginal_likelihood(NetworkStructure.empty(1), rows_dataset([[1], [1], [0]]))
    record(f"max rel err {worst:.1e}, single-node err {abs(single - math.log(1 / 12)):.1e}")
    assert worst <= 1e-9
    assert abs(single - math.log(1 / 12)) <= 1e-12


# 3 ---------------------------------------------------------------------------

@pytest.mark.acceptance("C3", "metric identities on 1000 pairs (1e-9); symmetry and zero exact")
def test_c3_metric_identities(record):
    rng = np.random.default_rng(303)
    worst = 0.0
    for _ in range(1000):
        dim = int(rng.integers(1, 19))
        a, b = rng.normal(size=dim), rng.normal(size=dim)
        if rng.random() < 0.5:
            a, b = (rng.random(dim) < 0.5).astype(float), (rng.random(dim) < 0.5).astype(float)
        A = rng.normal(size=(dim, dim))
        g = A @ A.T + dim * np.eye(dim)
        eu = MetricConfig.euclidean(dim)
        maha_i = MetricConfig(MAHALANOBIS, np.eye(dim), np.ones(dim))
        maha = MetricConfig(MAHALANOBIS, g, np.ones(dim))
        w_one = MetricConfig(WEIGHTED_MAHALANOBIS, g, np.ones(dim))
        w_any = MetricConfig(WEIGHTED_MAHALANOBIS, g, rng.uniform(0, 1, dim))
        worst = max(worst,
                    abs(distance(maha_i, a, b) - distance(eu, a, b)),
                    abs(distance(w_one, a, b) - distance(maha, a, b)))
        for metric in (eu, maha_i, maha, w_one, w_any):
            assert distance(metric, a, b) == distance(metric, b, a)
            assert distance(metric, a, a) == 0.0
    record(f"max identity err {worst:.1e}")
    assert worst <= 1e-9


# 4 ---------------------------------------------------------------------------

def score_sets(n):
    rng = np.random.default_rng(n)
    grid = [0.05, 0.1, 0.2, 0.3, 0.5]
    yield [i / (n + 1) for i in range(1, n + 1)]
    yield [0.5] * n
    yield [grid[i // 2 % 5] for i in range(n)]
    yield [grid[i // 3 % 5] for i in range(n)]
    for _ in range(2):
        yield rng.choice(grid, size=n).tolist()


@pytest.mark.acceptance("C4", "roc_auc equals exact Mann-Whitney on every labeling of score sets up to size 10 (<30 s)")
def test_c4_auc_exhaustive(record):
    checked = 0
    start = time.perf_counter()
    for n in range(2, 11):
        for scores in score_sets(n):
            for labels in itertools.product((True, False), repeat=n):
                if all(labels) or not any(labels):
                    continue
                labelled = list(zip(scores, labels))
                assert roc_auc(labelled, exact=True) == mann_whitney(labelled)
                checked += 1
    elapsed = time.perf_counter() - start
    record(f"{checked} labelings, {elapsed:.2f} s")
    assert elapsed < 30


# 5 ---------------------------------------------------------------------------

CHAIN = NetworkStructure(((), (0,), (1,), (2,)))


def chain_model():
    schema = AttributeSchema(("a", "b", "c", "d"), 0)
    theta = [np.array([0.5])] + [np.array([0.1, 0.9])] * 3
    return model_from_probabilities(CHAIN, schema, theta, concentration=1.0)


@pytest.mark.acceptance("C5", "learned structure scores at least the true 4-node chain in >= 18 of 20 seeds")
def test_c5_structure_recovery(record):
    model = chain_model()
    wins = 0
    for seed in range(20):
        data = sample_from_model(model, 2000, seed)
        learned = learn_structure(data)
        if log_marginal_likelihood(learned, data) >= log_marginal_likelihood(CHAIN, data):
            wins += 1
    record(f"{wins}/20 seeds")
    assert wins >= 18


# 6 and 8 ---------------------------------------------------------------------

SEED = 7
TIME_LIMIT = 300.0


def end_to_end(out_dir):
    generator = random_network(port_schema(), 3, SEED)
    data = inject_anomalies(sample_from_model(generator, 2287, SEED), generator, 0.05, SEED)
    eval_cases = data.subset(select_eval_cases(data, seed=SEED))
    results = {}
    for config in STANDARD_CONFIGS:
        start = time.perf_counter()
        report = leave_one_out(eval_cases, data, config)
        elapsed = time.perf_counter() - start
        paths = write_report(report, out_dir, f"{config.model_kind}-{config.population}-")
        results[(config.model_kind, config.population)] = (report, elapsed, paths)
    return eval_cases, results


@pytest.fixture(scope="session")
def first_run(tmp_path_factory):
    return end_to_end(tmp_path_factory.mktemp("run1"))


@pytest.fixture(scope="session")
def second_run(tmp_path_factory):
    return end_to_end(tmp_path_factory.mktemp("run2"))


@pytest.mark.acceptance("C6", "synthetic end-to-end: six configurations under 5 min, NB/all ROC >= 0.70, weighted >= NB/all - 0.05")
def test_c6_eval_set_shape(first_run):
    eval_cases, _ = first_run
    golds = [r.gold_label for r in eval_cases]
    assert len(eval_cases) == 100
    assert set(golds) == {ANOMALOUS, NORMAL}


@pytest.mark.acceptance("C6", "synthetic end-to-end: six configurations under 5 min, NB/all ROC >= 0.70, weighted >= NB/all - 0.05")
@pytest.mark.parametrize("config", STANDARD_CONFIGS, ids=lambda c: c.label)
def test_c6_configuration_runtime(first_run, config):
    report, elapsed, _ = first_run[1][(config.model_kind, config.population)]
    assert elapsed < TIME_LIMIT
    decided = len(report.scored_cases) - report.n_indeterminate
    assert decided > 0


@pytest.mark.acceptance("C6", "synthetic end-to-end: six configurations under 5 min, NB/all ROC >= 0.70, weighted >= NB/all - 0.05")
def test_c6_auc_targets(first_run, record):
    results = first_run[1]
    nb_all = results[(NAIVE_BAYES, POP_ALL)][0].auc_roc
    nb_weighted = results[(NAIVE_BAYES, POP_WEIGHTED)][0].auc_roc
    slowest = max(elapsed for _, elapsed, _ in results.values())
    summary = ", ".join(
        f"{k[0]}/{k[1]} {r.auc_roc:.3f}" for k, (r, _, _) in results.items()
    )
    record(f"{summary}; slowest {slowest:.1f} s")
    assert nb_all >= 0.70
    assert nb_weighted >= nb_all - 0.05


@pytest.mark.acceptance("C8", "two end-to-end runs give byte-identical report files")
def test_c8_determinism(first_run, second_run, record):
    a, b = first_run[1], second_run[1]
    compared = 0
    for key in a:
        for name, path in a[key][2].items():
            assert path.read_bytes() == b[key][2][name].read_bytes(), f"{key} {name}"
            compared += 1
    record(f"{compared} files identical")


# 7 ---------------------------------------------------------------------------

@pytest.mark.acceptance("C7", "far outlier is indeterminate, in-cluster query gets a verdict")
def test_c7_rejection_one_dimensional():
    X = np.array([0.0] * 10 + [1.0] * 10)[:, None]
    metric = MetricConfig.euclidean(1)
    far = neighborhood_check(X, [50.0], 5, metric)
    near = neighborhood_check(X, [0.0], 5, metric)
    assert not far.accepted
    assert near.accepted


@pytest.mark.acceptance("C7", "far outlier is indeterminate, in-cluster query gets a verdict")
@pytest.mark.parametrize("population", [POP_MAHALANOBIS, POP_WEIGHTED])
def test_c7_rejection_through_detection(population):
    rng = np.random.default_rng(0)
    records = []
    for i in range(30):
        context = [0] * 6
        context[i % 6] = 1
        records.append(CaseRecord((int(rng.integers(0, 2)), *context), case_id=f"r{i}"))
    schema = AttributeSchema(("t", *(f"c{i}" for i in range(6))), 0)
    repo = Dataset(schema, records)
    config = DetectionConfig(population=population, k=5)
    far = detect_case(repo, CaseRecord((1,) * 7, case_id="far"), config)
    near = detect_case(repo, CaseRecord((1, 0, 1, 0, 0, 0, 0), case_id="near"), config)
    assert far.status == INDETERMINATE and far.predictive_prob is None
    assert near.status in (ANOMALOUS, NORMAL) and near.predictive_prob is not None
