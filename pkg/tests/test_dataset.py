import warnings

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cadetect.dataset import (
    PORT_CATEGORIES,
    AttributeSchema,
    CaseRecord,
    Dataset,
    DatasetError,
    UnknownCaseIdWarning,
    attach_labels,
    context_of,
    parse_dataset,
    port_schema,
    serialize_dataset,
)


def test_parse_basic():
    ds = parse_dataset("a,b,hosp\n1,0,1\n0,0,0\n", "hosp")
    assert len(ds) == 2
    assert ds.schema.target_index == 2
    assert ds[0].values == (True, False, True)
    assert ds[1].case_id is None


def test_parse_spellings_and_ids():
    ds = parse_dataset("case_id,a,b\nx1,TRUE,false\nx2, 0 ,True\n", "a")
    assert ds.schema.attributes == ("a", "b")
    assert [r.case_id for r in ds] == ["x1", "x2"]
    assert ds[0].values == (True, False)
    assert ds[1].values == (False, True)


def test_parse_from_stream(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("a,t\n1,0\n")
    with open(path) as fh:
        assert len(parse_dataset(fh, "t")) == 1


def test_ragged_row_reports_line():
    with pytest.raises(DatasetError, match="ragged row at line 3"):
        parse_dataset("a,b,hosp\n1,0,1\n1,0\n", "hosp")


def test_non_binary_value():
    with pytest.raises(DatasetError, match="non-binary value") as err:
        parse_dataset("a,b,hosp\n1,2,1\n", "hosp")
    assert "line 2, column 2" in str(err.value)


@pytest.mark.parametrize("text,target,message", [
    ("a,b\n1,0\n", "zzz", "unknown target"),
    ("a,a\n1,0\n", "a", "duplicate header"),
    ("", "a", "missing header"),
    ("case_id,a\nx,1\nx,0\n", "a", "duplicate case_id"),
    ("a,t\n1,\n", "t", "non-binary"),
])
def test_parse_errors(text, target, message):
    with pytest.raises(DatasetError, match=message):
        parse_dataset(text, target)


def test_schema_invariants():
    with pytest.raises(DatasetError):
        AttributeSchema(("a", "a"), 0)
    with pytest.raises(DatasetError):
        AttributeSchema(("a", ""), 0)
    with pytest.raises(DatasetError):
        AttributeSchema(("a", "b"), 2)
    with pytest.raises(DatasetError):
        Dataset(AttributeSchema(("a", "b"), 0), [CaseRecord((True,))])


def test_context_of():
    schema3 = AttributeSchema(("a", "b", "c"), 1)
    assert context_of(CaseRecord((1, 0, 1)), schema3) == (True, True)
    assert context_of(CaseRecord((1,)), AttributeSchema(("t",), 0)) == ()
    schema4 = AttributeSchema(("a", "b", "c", "d"), 0)
    assert context_of(CaseRecord((0, 0, 0, 0)), schema4) == (False, False, False)


def test_port_schema():
    schema = port_schema()
    assert schema.arity == 19
    assert schema.target == "Hospitalization"
    assert schema.attributes[schema.target_index] == "Hospitalization"
    assert len(schema.context_indices) == 18
    counts = {k: len(v) for k, v in PORT_CATEGORIES.items()}
    assert counts == {
        "target": 1,
        "demographic": 2,
        "co-existing illness": 5,
        "physical examination": 4,
        "lab and radiographic": 7,
    }
    # every attribute round-trips through a binary CSV
    header = ",".join(schema.attributes)
    ds = parse_dataset(header + "\n" + ",".join(["1"] * 19) + "\n", "Hospitalization")
    assert ds.schema == schema


LABELS_100 = "case_id,label\n" + "".join(
    f"c{i:03d},{'anomalous' if i < 23 else 'normal'}\n" for i in range(100)
)


def _hundred():
    text = "case_id,a,t\n" + "".join(f"c{i:03d},{i % 2},{(i // 2) % 2}\n" for i in range(100))
    return parse_dataset(text, "t")


def test_attach_labels_all_match():
    ds = _hundred()
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        labelled = attach_labels(ds, LABELS_100)
    assert all(r.gold_label is not None for r in labelled)
    assert sum(r.gold_label == "anomalous" for r in labelled) == 23
    assert [r.values for r in labelled] == [r.values for r in ds]


def test_attach_labels_empty_is_noop():
    ds = _hundred()
    assert attach_labels(ds, "") is ds


def test_attach_labels_bad_value():
    with pytest.raises(DatasetError, match="malformed label"):
        attach_labels(_hundred(), "c000,maybe\n")


def test_attach_labels_unknown_id_warns():
    with pytest.warns(UnknownCaseIdWarning, match="nobody"):
        labelled = attach_labels(_hundred(), "case_id,label\nc001,anomalous\nnobody,normal\n")
    assert labelled[1].gold_label == "anomalous"
    assert labelled[0].gold_label is None


@st.composite
def datasets(draw):
    arity = draw(st.integers(1, 6))
    names = [f"v{i}" for i in range(arity)]
    target = draw(st.integers(0, arity - 1))
    n = draw(st.integers(0, 15))
    with_ids = draw(st.booleans())
    rows = draw(st.lists(st.tuples(*[st.booleans()] * arity), min_size=n, max_size=n))
    records = [CaseRecord(r, case_id=f"id{i}" if with_ids else None) for i, r in enumerate(rows)]
    return Dataset(AttributeSchema(tuple(names), target), records)


@settings(max_examples=60, deadline=None)
@given(datasets())
def test_round_trip(ds):
    again = parse_dataset(serialize_dataset(ds), ds.schema.target)
    assert again == ds
    assert serialize_dataset(again) == serialize_dataset(ds)


@settings(max_examples=60, deadline=None)
@given(datasets())
def test_context_length(ds):
    for rec in ds:
        assert len(context_of(rec, ds.schema)) == ds.schema.arity - 1
    assert ds.context_matrix().shape == (len(ds), ds.schema.arity - 1)


def test_subset_and_matrix_are_read_only():
    ds = _hundred()
    sub = ds.subset([3, 1])
    assert [r.case_id for r in sub] == ["c003", "c001"]
    assert sub.matrix().tolist() == [[1, 1], [1, 0]]
    with pytest.raises(ValueError):
        sub.matrix()[0, 0] = 0
    assert len(ds.without(0)) == 99
