"""Per-case conditional anomaly detection and the leave-one-out harness.

A case is scored by its predictive probability: the probability, under a
model fitted to a reference population, of the target value it actually
has given its context. Smaller is more anomalous; a case is flagged when
the score is strictly below the detection threshold.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .bayesmodel import (
    DEFAULT_MAX_PARENTS,
    DEFAULT_PRIOR_STRENGTH,
    BayesNetModel,
    NetworkStructure,
    _config_index,
    fit_parameters,
    learn_structure,
    naive_bayes_structure,
    predictive_probabilities,
    predictive_probability,
)
from .dataset import ANOMALOUS, NORMAL, CaseRecord, Dataset
from .similarity import (
    DEFAULT_EPSILON,
    MAHALANOBIS,
    WEIGHTED_MAHALANOBIS,
    NeighborhoodError,
    NeighborhoodResult,
    build_metric,
    neighborhood_quality,
)

NAIVE_BAYES = "naive_bayes"
LEARNED_BBN = "learned_bbn"
MODEL_KINDS = (NAIVE_BAYES, LEARNED_BBN)

POP_ALL = "all"
POP_MAHALANOBIS = "mahalanobis_k"
POP_WEIGHTED = "weighted_mahalanobis_k"
POPULATIONS = (POP_ALL, POP_MAHALANOBIS, POP_WEIGHTED)
_METRIC_FOR = {POP_MAHALANOBIS: MAHALANOBIS, POP_WEIGHTED: WEIGHTED_MAHALANOBIS}

INDETERMINATE = "indeterminate"

DEFAULT_K = 40
DEFAULT_THRESHOLD = 0.05


class DetectionError(ValueError):
    """Detection or evaluation cannot proceed with the given inputs."""


class InjectionError(ValueError):
    def __init__(self, message: str, achievable: int):
        super().__init__(message)
        self.achievable = achievable


@dataclass(frozen=True)
class DetectionConfig:
    model_kind: str = NAIVE_BAYES
    population: str = POP_ALL
    k: int = DEFAULT_K
    threshold: float = DEFAULT_THRESHOLD
    prior_strength: float = DEFAULT_PRIOR_STRENGTH
    epsilon: float = DEFAULT_EPSILON
    fixed_structure: NetworkStructure | None = None
    max_parents: int = DEFAULT_MAX_PARENTS

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}")
        if self.population not in POPULATIONS:
            raise ValueError(f"population must be one of {POPULATIONS}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError("threshold must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.prior_strength <= 0 or self.epsilon <= 0:
            raise ValueError("prior_strength and epsilon must be positive")

    @property
    def label(self) -> str:
        return f"{self.model_kind}/{self.population}"


# The six model/population pairings compared in the evaluation.
STANDARD_CONFIGS = tuple(
    DetectionConfig(model_kind=m, population=p) for m in MODEL_KINDS for p in POPULATIONS
)


@dataclass(frozen=True)
class DetectionOutcome:
    case_id: str | None
    predictive_prob: float | None
    status: str
    neighborhood: NeighborhoodResult | None = None


def _exclude_query(repository: Dataset, query: CaseRecord) -> Dataset:
    keep = [
        i for i, r in enumerate(repository)
        if not (r is query or (query.case_id is not None and r.case_id == query.case_id))
    ]
    return repository if len(keep) == len(repository) else repository.subset(keep)


def detect_case(repository: Dataset, query: CaseRecord, config: DetectionConfig) -> DetectionOutcome:
    """Score ``query`` against ``repository`` (the query itself is never used).

    With a similarity population, the metric is estimated on the repository,
    the ``k`` best matches form the training set, and a neighbourhood that
    fails the distance check yields status ``indeterminate`` without a
    score. Neighbour indices refer to the repository with the query removed.
    """
    reference = _exclude_query(repository, query)
    if len(query.values) != reference.schema.arity:
        raise DetectionError("query arity does not match the repository schema")
    if config.model_kind == LEARNED_BBN:
        if config.fixed_structure is None:
            raise DetectionError("learned_bbn detection needs config.fixed_structure")
        structure = config.fixed_structure
    else:
        structure = naive_bayes_structure(reference.schema)

    hood = None
    training = reference
    if config.population != POP_ALL:
        if len(reference) < config.k + 1:
            raise DetectionError(
                f"repository has {len(reference)} usable records; k={config.k} needs {config.k + 1}"
            )
        metric = build_metric(_METRIC_FOR[config.population], reference, config.epsilon)
        try:
            hood = neighborhood_quality(reference, query, config.k, metric)
        except NeighborhoodError as exc:
            raise DetectionError(str(exc)) from None
        if not hood.accepted:
            return DetectionOutcome(query.case_id, None, INDETERMINATE, hood)
        training = reference.subset(hood.neighbor_indices)

    model = fit_parameters(structure, training, config.prior_strength)
    prob = predictive_probability(model, query)
    status = ANOMALOUS if prob < config.threshold else NORMAL
    return DetectionOutcome(query.case_id, prob, status, hood)


def loo_predictive_probabilities(structure: NetworkStructure, data: Dataset,
                                 prior_strength: float = DEFAULT_PRIOR_STRENGTH) -> np.ndarray:
    """Predictive probability of each record from a model fitted on all others.

    Equivalent to refitting once per record with population ``all``, but
    done by removing each record's own tally from the full counts.
    """
    X = data.matrix()
    n = X.shape[0]
    t = data.schema.target_index
    a0 = float(prior_strength)
    model = fit_parameters(structure, data, prior_strength)
    scores = np.zeros((n, 2))
    rows = np.arange(n)
    for node in (t, *structure.children(t)):
        ps = structure.parents[node]
        counts = model.tables[node].counts
        own_cfg = _config_index(X, ps)
        own_state = X[:, node]
        for a in (0, 1):
            Xa = X.copy()
            Xa[:, t] = a
            cfg = _config_index(Xa, ps)
            state = Xa[:, node]
            same_cfg = cfg == own_cfg
            n_cell = counts[cfg, state] - (same_cfg & (state == own_state))
            n_cfg = counts[cfg].sum(axis=1) - same_cfg
            scores[rows, a] += np.log(n_cell + a0) - np.log(n_cfg + 2 * a0)
    own = X[:, t].astype(bool)
    diff = np.where(own, scores[:, 1] - scores[:, 0], scores[:, 0] - scores[:, 1])
    return 1.0 / (1.0 + np.exp(-diff))


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------

def _split(scores: Iterable[tuple[float, object]]) -> tuple[np.ndarray, np.ndarray]:
    probs, labels = [], []
    for p, g in scores:
        probs.append(float(p))
        labels.append(g == ANOMALOUS if isinstance(g, str) else bool(g))
    return np.asarray(probs, dtype=float), np.asarray(labels, dtype=bool)


def operating_points(scores) -> list[tuple[float, int, int]]:
    """``(threshold, true_pos, false_pos)`` over the threshold sweep.

    The sweep runs over every distinct score plus the sentinels 0 and 1
    (and +inf if some score is >= 1), flagging scores strictly below the
    threshold. Labels may be booleans (True = anomalous) or gold-label
    strings.
    """
    probs, pos = _split(scores)
    grid = sorted(set(probs.tolist()) | {0.0, 1.0})
    if probs.size and probs.max() >= 1.0:
        grid.append(math.inf)
    p_sorted = np.sort(probs[pos])
    n_sorted = np.sort(probs[~pos])
    tp = np.searchsorted(p_sorted, grid, side="left")
    fp = np.searchsorted(n_sorted, grid, side="left")
    return [(g, int(a), int(b)) for g, a, b in zip(grid, tp, fp)]


def roc_curve(scores) -> list[tuple[float, float, float]]:
    """``(fpr, tpr, threshold)`` from (0, 0) to (1, 1)."""
    probs, pos = _split(scores)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DetectionError("ROC needs at least one anomalous and one normal case")
    return [(fp / n_neg, tp / n_pos, g) for g, tp, fp in operating_points(scores)]


def pr_curve(scores) -> list[tuple[float, float, float]]:
    """``(recall, precision, threshold)`` at every sweep point flagging something."""
    probs, pos = _split(scores)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise DetectionError("PR curve needs at least one anomalous case")
    return [
        (tp / n_pos, tp / (tp + fp), g)
        for g, tp, fp in operating_points(scores) if tp + fp > 0
    ]


def roc_auc(scores, exact: bool = False):
    """Trapezoidal ROC area; equals P(score_anom < score_norm) + P(tie)/2.

    With ``exact=True`` the area is returned as a :class:`~fractions.Fraction`.
    """
    probs, pos = _split(scores)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DetectionError("ROC AUC needs at least one anomalous and one normal case")
    pts = operating_points(scores)
    twice = sum((fp1 - fp0) * (tp1 + tp0) for (_, tp0, fp0), (_, tp1, fp1) in zip(pts, pts[1:]))
    area = Fraction(twice, 2 * n_pos * n_neg)
    return area if exact else float(area)


def _pr_fractions(scores) -> list[tuple[Fraction, Fraction]]:
    probs, pos = _split(scores)
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise DetectionError("PR AUC needs at least one anomalous case")
    pts = [
        (Fraction(tp, n_pos), Fraction(tp, tp + fp))
        for _, tp, fp in operating_points(scores) if tp + fp > 0
    ]
    return [(Fraction(0), pts[0][1]), *pts]


def pr_auc(scores, exact: bool = False):
    """Trapezoid over recall between consecutive achievable PR points.

    The curve starts at recall 0 with the precision of the first point.
    """
    pts = _pr_fractions(scores)
    area = sum(((r1 - r0) * (p0 + p1) / 2 for (r0, p0), (r1, p1) in zip(pts, pts[1:])), Fraction(0))
    return area if exact else float(area)


def pr_auc_step(scores) -> float:
    """Conservative PR area: each recall step at the lower of its two precisions."""
    pts = _pr_fractions(scores)
    return float(sum(((r1 - r0) * min(p0, p1) for (r0, p0), (r1, p1) in zip(pts, pts[1:])), Fraction(0)))


def prevalence_adjusted_precision(sensitivity: float, false_positive_rate: float,
                                  population_prior: float) -> float:
    """Precision re-estimated for an assumed anomaly prevalence."""
    for name, v in (("sensitivity", sensitivity), ("false_positive_rate", false_positive_rate),
                    ("population_prior", population_prior)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1]")
    hit = sensitivity * population_prior
    denom = hit + false_positive_rate * (1.0 - population_prior)
    if denom == 0:
        raise ValueError("no case would be flagged: precision undefined")
    return hit / denom


# ---------------------------------------------------------------------------
# leave-one-out evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    config: DetectionConfig
    scored_cases: list[tuple[str, float | None, str, str]]
    roc_points: list[tuple[float, float, float]] = field(default_factory=list)
    pr_points: list[tuple[float, float, float]] = field(default_factory=list)
    auc_roc: float = math.nan
    auc_pr: float = math.nan
    auc_pr_step: float = math.nan
    # indeterminate cases counted at their worst: anomalies never caught,
    # normals always flagged
    auc_roc_incl: float = math.nan
    auc_pr_incl: float = math.nan
    operating_table: list[tuple[float, float, float, float | None]] = field(default_factory=list)
    structure: NetworkStructure | None = None

    @property
    def n_indeterminate(self) -> int:
        return sum(1 for row in self.scored_cases if row[3] == INDETERMINATE)

    def summary_line(self) -> str:
        return (
            f"{self.config.label} auc_roc={self.auc_roc:.4f} auc_pr={self.auc_pr:.4f} "
            f"scored={len(self.scored_cases) - self.n_indeterminate} "
            f"indeterminate={self.n_indeterminate}"
        )


def _operating_table(scores) -> list[tuple[float, float, float, float | None]]:
    probs, pos = _split(scores)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    table = []
    for g, tp, fp in operating_points(scores):
        sens = tp / n_pos if n_pos else math.nan
        spec = 1.0 - fp / n_neg if n_neg else math.nan
        prec = tp / (tp + fp) if tp + fp else None
        table.append((g, sens, spec, prec))
    return table


def leave_one_out(eval_cases: Dataset, repository: Dataset, config: DetectionConfig) -> EvalReport:
    """Score each labelled eval case against the repository without it.

    For ``learned_bbn`` without a fixed structure, the structure is learned
    once on the repository minus every eval case and held fixed across
    folds. Indeterminate cases are left out of the curves and counted
    separately.
    """
    unlabeled = [r.case_id for r in eval_cases if r.gold_label is None]
    if unlabeled:
        raise DetectionError(f"{len(unlabeled)} eval case(s) lack a gold label, e.g. {unlabeled[0]!r}")
    if any(r.case_id is None for r in eval_cases):
        raise DetectionError("eval cases need case_ids to be matched against the repository")
    positions = {r.case_id: i for i, r in enumerate(repository) if r.case_id is not None}
    missing = [r.case_id for r in eval_cases if r.case_id not in positions]
    if missing:
        raise DetectionError(f"eval case {missing[0]!r} not found in the repository")

    if config.model_kind == LEARNED_BBN and config.fixed_structure is None:
        eval_pos = {positions[r.case_id] for r in eval_cases}
        train = repository.subset([i for i in range(len(repository)) if i not in eval_pos])
        structure = learn_structure(train, config.max_parents, config.prior_strength)
        config = replace(config, fixed_structure=structure)

    scored = []
    for rec in eval_cases:
        fold = repository.without(positions[rec.case_id])
        out = detect_case(fold, rec, config)
        scored.append((rec.case_id, out.predictive_prob, rec.gold_label, out.status))

    report = EvalReport(config=config, scored_cases=scored, structure=config.fixed_structure)
    decided = [(p, g) for _, p, g, s in scored if s != INDETERMINATE]
    if not decided:
        warnings.warn("every eval case was indeterminate; curves are empty", stacklevel=2)
        return report
    labels = {g for _, g in decided}
    if labels != {ANOMALOUS, NORMAL}:
        warnings.warn("scored eval cases contain a single gold class; AUCs undefined", stacklevel=2)
        return report

    report.roc_points = roc_curve(decided)
    report.pr_points = pr_curve(decided)
    report.auc_roc = roc_auc(decided)
    report.auc_pr = pr_auc(decided)
    report.auc_pr_step = pr_auc_step(decided)
    report.operating_table = _operating_table(decided)
    worst = [
        (p if s != INDETERMINATE else (2.0 if g == ANOMALOUS else -1.0), g)
        for _, p, g, s in scored
    ]
    report.auc_roc_incl = roc_auc(worst)
    report.auc_pr_incl = pr_auc(worst)
    return report


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_report(report: EvalReport, directory, prefix: str = "") -> dict[str, Path]:
    """Write curve, score, operating-table and summary CSVs; return their paths."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / f"{prefix}{name}.csv" for name in ("roc", "pr", "operating", "scores", "summary")}
    _write_csv(paths["roc"], ("threshold", "fpr", "tpr"),
               ((_fmt(t), _fmt(f), _fmt(s)) for f, s, t in report.roc_points))
    _write_csv(paths["pr"], ("threshold", "recall", "precision"),
               ((_fmt(t), _fmt(r), _fmt(p)) for r, p, t in report.pr_points))
    _write_csv(paths["operating"], ("threshold", "sensitivity", "specificity", "precision"),
               (tuple(_fmt(v) for v in row) for row in report.operating_table))
    _write_csv(paths["scores"], ("case_id", "prob", "gold", "status"),
               ((cid, _fmt(p), g, s) for cid, p, g, s in report.scored_cases))
    _write_csv(paths["summary"],
               ("auc_roc", "auc_pr", "auc_pr_step", "auc_roc_incl", "auc_pr_incl",
                "n_scored", "n_indeterminate"),
               [(_fmt(report.auc_roc), _fmt(report.auc_pr), _fmt(report.auc_pr_step),
                 _fmt(report.auc_roc_incl), _fmt(report.auc_pr_incl),
                 len(report.scored_cases) - report.n_indeterminate, report.n_indeterminate)])
    return paths


# ---------------------------------------------------------------------------
# synthetic gold labels
# ---------------------------------------------------------------------------

HIGH_CONFIDENCE = 0.9


def inject_anomalies(data: Dataset, model: BayesNetModel, fraction: float, seed: int) -> Dataset:
    """Flip the target of ``ceil(fraction * n)`` confidently predicted records.

    Candidates are records whose current target value has predictive
    probability above 0.9 under ``model``. Flipped records are labelled
    anomalous, every other record normal.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    n = len(data)
    need = math.ceil(round(fraction * n, 9))
    probs = predictive_probabilities(model, data.matrix()) if n else np.zeros(0)
    candidates = np.flatnonzero(probs > HIGH_CONFIDENCE)
    if candidates.size < need:
        raise InjectionError(
            f"only {candidates.size} record(s) are predicted with probability > "
            f"{HIGH_CONFIDENCE}; {need} requested",
            achievable=int(candidates.size),
        )
    rng = np.random.default_rng(seed)
    flip = set(rng.choice(candidates, size=need, replace=False).tolist())
    t = data.schema.target_index
    X = data.matrix().copy()
    records = []
    for i, rec in enumerate(data):
        if i in flip:
            values = list(rec.values)
            values[t] = not values[t]
            X[i, t] = values[t]
            records.append(CaseRecord(tuple(values), rec.case_id, ANOMALOUS))
        else:
            records.append(CaseRecord(rec.values, rec.case_id, NORMAL))
    return Dataset(data.schema, records, _matrix=X)


def select_eval_cases(data: Dataset, n_total: int = 100, n_flagged: int = 21,
                      threshold: float = DEFAULT_THRESHOLD, seed: int = 0,
                      prior_strength: float = DEFAULT_PRIOR_STRENGTH) -> list[int]:
    """Indices of an evaluation sample: screened cases plus a random remainder.

    Every record is screened with a Naive Bayes model fitted on all other
    records; up to ``n_flagged`` of those falling below ``threshold`` are
    drawn, and the rest of the ``n_total`` are drawn uniformly from the
    unflagged records. Returned indices are sorted.
    """
    if n_total > len(data):
        raise ValueError("n_total exceeds the dataset size")
    rng = np.random.default_rng(seed)
    probs = loo_predictive_probabilities(naive_bayes_structure(data.schema), data, prior_strength)
    flagged = np.flatnonzero(probs < threshold)
    take = min(n_flagged, flagged.size, n_total)
    chosen = rng.choice(flagged, size=take, replace=False).tolist() if take else []
    rest = np.setdiff1d(np.arange(len(data)), flagged)
    chosen += rng.choice(rest, size=n_total - take, replace=False).tolist()
    return sorted(int(i) for i in chosen)
