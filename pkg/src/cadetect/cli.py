"""Command-line entry point: ``cadetect <subcommand> [flags]``.

Exit status is 0 on success, 1 on usage errors and 2 on data errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from . import __version__
from .bayesmodel import (
    DEFAULT_MAX_PARENTS,
    DEFAULT_PRIOR_STRENGTH,
    StructureError,
    format_structure,
    learn_structure,
    parse_structure,
    random_network,
    sample_from_model,
)
from .dataset import (
    AttributeSchema,
    Dataset,
    DatasetError,
    attach_labels,
    parse_dataset,
    port_schema,
    serialize_dataset,
    serialize_labels,
)
from .pipeline import (
    DEFAULT_K,
    DEFAULT_THRESHOLD,
    LEARNED_BBN,
    NAIVE_BAYES,
    POP_ALL,
    POP_MAHALANOBIS,
    POP_WEIGHTED,
    STANDARD_CONFIGS,
    DetectionConfig,
    DetectionError,
    InjectionError,
    detect_case,
    inject_anomalies,
    leave_one_out,
    select_eval_cases,
    write_report,
)
from .similarity import DEFAULT_EPSILON, NeighborhoodError, rank_sum_weights

MODELS = {"nb": NAIVE_BAYES, "bbn": LEARNED_BBN}
POPULATIONS = {"all": POP_ALL, "mahalanobis": POP_MAHALANOBIS, "weighted": POP_WEIGHTED}
DEFAULT_TARGET = "Hospitalization"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _read(path: Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from None


def _load(path, target, labels=None) -> Dataset:
    try:
        data = parse_dataset(_read(path), target)
    except DatasetError as exc:
        raise DataError(f"{path}: {exc}") from None
    if labels is not None:
        try:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                data = attach_labels(data, _read(labels))
        except DatasetError as exc:
            raise DataError(f"{labels}: {exc}") from None
        for w in caught:
            print(f"warning: {labels}: {w.message}", file=sys.stderr)
    return data


def _load_structure(path, schema):
    try:
        return parse_structure(_read(path), schema)
    except StructureError as exc:
        raise DataError(f"{path}: {exc}") from None


def _config(args) -> DetectionConfig:
    return DetectionConfig(
        model_kind=MODELS[args.model],
        population=POPULATIONS[args.population],
        k=args.k,
        threshold=args.threshold,
        prior_strength=args.prior_strength,
        epsilon=args.epsilon,
        max_parents=args.max_parents,
    )


def _fmt_outcome(out) -> str:
    prob = "" if out.predictive_prob is None else repr(out.predictive_prob)
    line = f"case_id={out.case_id or ''} status={out.status} prob={prob}"
    hood = out.neighborhood
    if hood is not None:
        line += (
            f" accepted={str(hood.accepted).lower()} avg_distance={hood.target_avg_distance!r}"
            f" population_mean={hood.population_mean!r} population_std={hood.population_std!r}"
        )
    return line


def cmd_detect(args) -> int:
    data = _load(args.data, args.target)
    if (args.case_id is None) == (args.record is None):
        raise UsageError("detect: give exactly one of --case-id or --record")
    if args.case_id is not None:
        try:
            query = data[data.index_of(args.case_id)]
        except KeyError:
            raise DataError(f"{args.data}: no case with case_id {args.case_id!r}") from None
    else:
        cells = next(csv.reader(io.StringIO(args.record)), [])
        header = ",".join(data.schema.attributes)
        try:
            query = parse_dataset(f"{header}\n{','.join(cells)}\n", args.target)[0]
        except DatasetError as exc:
            raise DataError(f"--record: {exc}") from None
    config = _config(args)
    if config.model_kind == LEARNED_BBN:
        if args.structure:
            structure = _load_structure(args.structure, data.schema)
        else:
            reference = data.subset([i for i, r in enumerate(data) if r is not query])
            structure = learn_structure(reference, config.max_parents, config.prior_strength)
        config = replace(config, fixed_structure=structure)
    print(_fmt_outcome(detect_case(data, query, config)))
    return 0


def cmd_evaluate(args) -> int:
    data = _load(args.data, args.target, args.labels)
    eval_cases = data.subset([i for i, r in enumerate(data) if r.gold_label is not None])
    if len(eval_cases) == 0:
        raise DataError(f"{args.labels}: no labelled case matches the dataset")
    out = Path(args.out)
    structure = _load_structure(args.structure, data.schema) if args.structure else None
    if args.all_configs:
        configs = [
            replace(c, k=args.k, threshold=args.threshold, prior_strength=args.prior_strength,
                    epsilon=args.epsilon, max_parents=args.max_parents)
            for c in STANDARD_CONFIGS
        ]
    else:
        configs = [_config(args)]
    rows = []
    for config in configs:
        if config.model_kind == LEARNED_BBN and structure is not None:
            config = replace(config, fixed_structure=structure)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            report = leave_one_out(eval_cases, data, config)
        for w in caught:
            print(f"warning: {config.label}: {w.message}", file=sys.stderr)
        prefix = f"{config.model_kind}-{config.population}-" if args.all_configs else ""
        write_report(report, out, prefix)
        if config.model_kind == LEARNED_BBN and report.structure is not None:
            (out / f"{prefix}structure.txt").write_text(
                format_structure(report.structure, data.schema), encoding="utf-8")
        print(report.summary_line())
        rows.append((config.model_kind, config.population, repr(report.auc_pr), repr(report.auc_roc)))
    if args.all_configs:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("model", "population", "auc_pr", "auc_roc"))
        writer.writerows(rows)
        (out / "configs.csv").write_text(buf.getvalue(), encoding="utf-8")
    return 0


def cmd_learn_structure(args) -> int:
    data = _load(args.data, args.target, args.exclude_labels)
    if args.exclude_labels:
        data = data.subset([i for i, r in enumerate(data) if r.gold_label is None])
    if len(data) == 0:
        raise DataError(f"{args.data}: no records left to learn from")
    structure = learn_structure(data, args.max_parents, args.prior_strength)
    Path(args.out).write_text(format_structure(structure, data.schema), encoding="utf-8")
    print(f"wrote {args.out}: {len(structure.edges())} edges")
    return 0


def cmd_weights(args) -> int:
    data = _load(args.data, args.target)
    weights = rank_sum_weights(data)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("attribute", "weight"))
    writer.writerows((name, repr(float(w))) for name, w in zip(data.schema.context_names, weights.w))
    Path(args.out).write_text(buf.getvalue(), encoding="utf-8")
    print(f"wrote {args.out}: {len(weights.w)} weights")
    return 0


def _synth_schema(nodes: int) -> AttributeSchema:
    if nodes == 19:
        return port_schema()
    width = len(str(nodes - 1))
    return AttributeSchema((DEFAULT_TARGET, *(f"X{i:0{width}d}" for i in range(1, nodes))), 0)


def cmd_synth(args) -> int:
    if args.nodes < 1 or args.n < 0:
        raise UsageError("synth: --nodes must be >= 1 and --n >= 0")
    schema = _synth_schema(args.nodes)
    generator = random_network(schema, args.max_parents, args.seed, strength=args.strength)
    data = sample_from_model(generator, args.n, args.seed)
    out = Path(args.out)
    if args.structure_out:
        Path(args.structure_out).write_text(format_structure(generator.structure, schema), encoding="utf-8")
    if args.inject is None:
        out.write_text(serialize_dataset(data), encoding="utf-8")
        print(f"wrote {out}: {len(data)} records")
        return 0
    try:
        data = inject_anomalies(data, generator, args.inject, args.seed)
    except InjectionError as exc:
        raise DataError(f"synth: {exc} (achievable: {exc.achievable})") from None
    labelled = data
    if args.eval_size is not None:
        idx = set(select_eval_cases(data, n_total=args.eval_size, seed=args.seed))
        labelled = data.subset(sorted(idx))
    labels_out = Path(args.labels_out) if args.labels_out else out.with_name(out.stem + "_labels.csv")
    out.write_text(serialize_dataset(data), encoding="utf-8")
    labels_out.write_text(serialize_labels(labelled), encoding="utf-8")
    n_anom = sum(1 for r in labelled if r.gold_label == "anomalous")
    print(f"wrote {out}: {len(data)} records; {labels_out}: {len(labelled)} labels, {n_anom} anomalous")
    return 0


def cmd_inspect(args) -> int:
    data = _load(args.data, args.target, args.labels)
    schema = data.schema
    print(f"attributes: {schema.arity} (target: {schema.target})")
    for i, name in enumerate(schema.attributes):
        col = data.matrix()[:, i]
        mark = "*" if i == schema.target_index else " "
        print(f" {mark} {i:3d} {name}  true={int(col.sum())}")
    print(f"records: {len(data)}")
    with_ids = sum(1 for r in data if r.case_id is not None)
    print(f"with case_id: {with_ids}")
    if args.labels:
        n_anom = sum(1 for r in data if r.gold_label == "anomalous")
        n_norm = sum(1 for r in data if r.gold_label == "normal")
        print(f"labelled: {n_anom + n_norm} (anomalous={n_anom}, normal={n_norm})")
    return 0


def _add_data(p, labels=False):
    p.add_argument("--data", required=True, type=Path, help="dataset CSV")
    p.add_argument("--target", default=DEFAULT_TARGET, help="target attribute name")
    if labels:
        p.add_argument("--labels", type=Path, help="gold-label CSV (case_id,label)")


def _add_detection(p):
    p.add_argument("--model", choices=sorted(MODELS), default="nb")
    p.add_argument("--population", choices=list(POPULATIONS), default="all")
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--prior-strength", type=float, default=DEFAULT_PRIOR_STRENGTH)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--max-parents", type=int, default=DEFAULT_MAX_PARENTS)
    p.add_argument("--structure", type=Path, help="fixed structure file for --model bbn")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cadetect", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("detect", help="score one case")
    _add_data(p)
    p.add_argument("--case-id")
    p.add_argument("--record", help="comma-separated 0/1 values in schema order")
    _add_detection(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("evaluate", help="leave-one-out evaluation over labelled cases")
    _add_data(p)
    p.add_argument("--labels", type=Path, required=True)
    _add_detection(p)
    p.add_argument("--out", default="report", help="output directory")
    p.add_argument("--all-configs", action="store_true",
                   help="run all six model/population pairings")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("learn-structure", help="greedy structure search")
    _add_data(p)
    p.add_argument("--exclude-labels", type=Path,
                   help="leave out the cases listed in this label CSV")
    p.add_argument("--max-parents", type=int, default=DEFAULT_MAX_PARENTS)
    p.add_argument("--prior-strength", type=float, default=DEFAULT_PRIOR_STRENGTH)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn_structure)

    p = sub.add_parser("weights", help="rank-sum attribute weights")
    _add_data(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("synth", help="sample a synthetic dataset")
    p.add_argument("--nodes", type=int, default=19)
    p.add_argument("--n", type=int, default=2287)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-parents", type=int, default=3)
    p.add_argument("--strength", type=float, default=1.0,
                   help="Beta shape of random table entries (smaller = stronger dependencies)")
    p.add_argument("--inject", type=float, help="fraction of records to flip and label")
    p.add_argument("--eval-size", type=int, help="label only an evaluation sample of this size")
    p.add_argument("--out", required=True)
    p.add_argument("--labels-out")
    p.add_argument("--structure-out")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("inspect", help="print schema and counts")
    _add_data(p, labels=True)
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, StructureError, DetectionError, NeighborhoodError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
