import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flexcf.dataset import (
    CATEGORICAL,
    CONTINUOUS,
    Condition,
    Dataset,
    DatasetError,
    EmptyFileError,
    EmptySplitError,
    FeatureSchema,
    FixtureFeature,
    FixtureSpec,
    NonBinaryLabelError,
    SchemaError,
    UnknownColumnError,
    UnparsableValueError,
    accident_spec,
    kfold_indices,
    load_csv,
    planted_spec,
    split,
    synthesize_fixture,
    write_csv,
)


def write_schema(path, columns):
    path.write_text(json.dumps({"columns": columns}))
    return path


@pytest.fixture
def color_schema(tmp_path):
    return write_schema(tmp_path / "schema.json", [
        {"name": "color", "role": "feature", "kind": "categorical"},
        {"name": "x", "role": "feature", "kind": "continuous"},
        {"name": "y", "role": "label"},
    ])


def test_three_row_csv(tmp_path, color_schema):
    csv = tmp_path / "d.csv"
    csv.write_text("color,x,y\nred,1.5,0\nblue,-2,1\nred,4,1\n")
    ds = load_csv(csv, color_schema)
    assert ds.n_features == 2
    assert ds.schema[0].categories == ("red", "blue")
    assert (ds.schema[1].range_min, ds.schema[1].range_max) == (-2.0, 4.0)
    assert ds.rows.tolist() == [[0, 1.5], [1, -2], [0, 4]]
    assert ds.labels.tolist() == [0, 1, 1]
    assert ds.label_name == "y"


def test_non_binary_label_names_row(tmp_path, color_schema):
    csv = tmp_path / "d.csv"
    csv.write_text("color,x,y\nred,1,0\nblue,2,2\n")
    with pytest.raises(NonBinaryLabelError, match="non-binary label at row 3"):
        load_csv(csv, color_schema)


def test_declared_range_widens_to_data(tmp_path):
    schema = write_schema(tmp_path / "s.json", [
        {"name": "x", "kind": "continuous", "range": [0, 100]},
        {"name": "y", "role": "label"},
    ])
    csv = tmp_path / "d.csv"
    csv.write_text("x,y\n5,0\n120,1\n")
    ds = load_csv(csv, schema)
    assert ds.schema[0].range_min == 0.0
    assert ds.schema[0].range_max == 120.0


def test_declared_categories_fix_order(tmp_path):
    schema = write_schema(tmp_path / "s.json", [
        {"name": "c", "kind": "ordinal", "categories": ["low", "mid", "high"]},
        {"name": "y", "role": "label"},
    ])
    csv = tmp_path / "d.csv"
    csv.write_text("c,y\nhigh,0\nlow,1\n")
    ds = load_csv(csv, schema)
    assert ds.rows[:, 0].tolist() == [2, 0]


def test_unknown_declared_category(tmp_path):
    schema = write_schema(tmp_path / "s.json", [
        {"name": "c", "kind": "categorical", "categories": ["a", "b"]},
        {"name": "y", "role": "label"},
    ])
    csv = tmp_path / "d.csv"
    csv.write_text("c,y\na,0\nz,1\n")
    with pytest.raises(DatasetError, match="'z'.*'c'.*row 3"):
        load_csv(csv, schema)


def test_unknown_column(tmp_path, color_schema):
    csv = tmp_path / "d.csv"
    csv.write_text("color,x,shade,y\nred,1,dark,0\n")
    with pytest.raises(UnknownColumnError, match="shade"):
        load_csv(csv, color_schema)


def test_missing_column(tmp_path, color_schema):
    csv = tmp_path / "d.csv"
    csv.write_text("color,y\nred,0\n")
    with pytest.raises(UnknownColumnError, match="'x'"):
        load_csv(csv, color_schema)


def test_unparsable_continuous(tmp_path, color_schema):
    csv = tmp_path / "d.csv"
    csv.write_text("color,x,y\nred,1,0\nblue,abc,1\n")
    with pytest.raises(UnparsableValueError, match="'abc'.*'x'.*row 3"):
        load_csv(csv, color_schema)


def test_empty_file(tmp_path, color_schema):
    csv = tmp_path / "d.csv"
    csv.write_text("")
    with pytest.raises(EmptyFileError):
        load_csv(csv, color_schema)
    csv.write_text("color,x,y\n")
    with pytest.raises(EmptyFileError):
        load_csv(csv, color_schema)


def test_rows_with_missing_cells_are_counted(tmp_path, color_schema, caplog):
    csv = tmp_path / "d.csv"
    csv.write_text("color,x,y\nred,1,0\n,2,1\nblue,,0\nblue,3,1\n")
    ds = load_csv(csv, color_schema)
    assert len(ds) == 2
    assert ds.n_rejected == 2
    assert "rejected 2" in caplog.text


def test_schema_without_label(tmp_path):
    schema = write_schema(tmp_path / "s.json", [{"name": "x", "kind": "continuous"}])
    csv = tmp_path / "d.csv"
    csv.write_text("x\n1\n")
    with pytest.raises(SchemaError, match="no label"):
        load_csv(csv, schema)


def test_feature_schema_invariants():
    with pytest.raises(SchemaError):
        FeatureSchema("c", CATEGORICAL, categories=("only",))
    with pytest.raises(SchemaError):
        FeatureSchema("c", CATEGORICAL, categories=("a", "a"))
    with pytest.raises(SchemaError):
        FeatureSchema("x", CONTINUOUS, range_min=1.0, range_max=1.0)
    with pytest.raises(SchemaError):
        FeatureSchema("x", "nominal", categories=("a", "b"))
    with pytest.raises(SchemaError):
        FeatureSchema("c", CATEGORICAL, categories=("a", "b")).range


def test_dataset_validates_codes_and_is_read_only():
    schema = (FeatureSchema("c", CATEGORICAL, categories=("a", "b")),)
    with pytest.raises(DatasetError):
        Dataset(schema, [[2.0]], [0])
    with pytest.raises(DatasetError):
        Dataset(schema, [[0.5]], [0])
    with pytest.raises(NonBinaryLabelError):
        Dataset(schema, [[0.0]], [3])
    ds = Dataset(schema, [[0.0], [1.0]], [0, 1])
    with pytest.raises(ValueError):
        ds.rows[0, 0] = 1.0


def test_split_sizes_and_determinism():
    ds = synthesize_fixture(planted_spec(n_rows=10), seed=0)
    a_train, a_test = split(ds, 0.8, seed=1)
    b_train, b_test = split(ds, 0.8, seed=1)
    assert (len(a_train), len(a_test)) == (8, 2)
    assert a_train.rows.tobytes() == b_train.rows.tobytes()
    assert a_test.labels.tobytes() == b_test.labels.tobytes()
    assert a_train.schema is ds.schema and a_test.schema is ds.schema
    # the parts partition the parent
    together = sorted(map(tuple, np.vstack([a_train.rows, a_test.rows]).tolist()))
    assert together == sorted(map(tuple, ds.rows.tolist()))


def test_split_degenerate():
    ds = synthesize_fixture(planted_spec(n_rows=1), seed=0)
    with pytest.raises(EmptySplitError, match="empty split"):
        split(ds, 0.8, seed=0)
    big = synthesize_fixture(planted_spec(n_rows=10), seed=0)
    for f in (0.0, 1.0, -0.1, 1.5):
        with pytest.raises(DatasetError):
            split(big, f, seed=0)


def test_kfold_partitions():
    folds = kfold_indices(23, 5, seed=4)
    assert len(folds) == 5
    assert sorted(np.concatenate(folds).tolist()) == list(range(23))


def test_planted_fixture_rule():
    ds = synthesize_fixture(FixtureSpec(
        (FixtureFeature("x0"), FixtureFeature("x1")), (Condition("x0", low=0.5),), n_rows=200), seed=7)
    assert len(ds) == 200
    assert np.array_equal(ds.labels, (ds.rows[:, 0] > 0.5).astype(int))
    again = synthesize_fixture(FixtureSpec(
        (FixtureFeature("x0"), FixtureFeature("x1")), (Condition("x0", low=0.5),), n_rows=200), seed=7)
    assert ds.fingerprint() == again.fingerprint()


def test_accident_fixture_shape():
    ds = synthesize_fixture(accident_spec(n_rows=500), seed=0)
    assert ds.n_features == 11
    assert all(not f.is_continuous for f in ds.schema)
    assert [len(f.categories) for f in ds.schema] == [5, 3, 7, 8, 6, 4, 9, 10, 13, 9, 20]
    assert 0 < ds.labels.mean() < 1


def test_fixture_rule_with_undeclared_feature():
    spec = FixtureSpec((FixtureFeature("x0"), FixtureFeature("x1"), FixtureFeature("x2")),
                       (Condition("x99", low=0.5),))
    with pytest.raises(SchemaError, match="x99"):
        synthesize_fixture(spec, seed=0)


def test_write_then_load_round_trip(tmp_path):
    ds = synthesize_fixture(accident_spec(n_rows=50), seed=2)
    write_csv(ds, tmp_path / "d.csv", tmp_path / "s.json")
    back = load_csv(tmp_path / "d.csv", tmp_path / "s.json")
    assert back.schema == ds.schema
    assert np.array_equal(back.rows, ds.rows)
    assert np.array_equal(back.labels, ds.labels)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["a", "b", "c d", "é"]),
                          st.floats(-1e6, 1e6, allow_nan=False)), min_size=1, max_size=20))
def test_encode_decode_round_trip(values):
    cats = ("a", "b", "c d", "é")
    xs = [v for _, v in values]
    schema = (FeatureSchema("c", CATEGORICAL, categories=cats),
              FeatureSchema("x", CONTINUOUS, range_min=min(xs) - 1, range_max=max(xs) + 1))
    ds = Dataset(schema, [[cats.index(c), v] for c, v in values], [0] * len(values))
    for row, (c, v) in zip(ds.rows, values):
        assert ds.decode_row(row) == [c, v]
        assert np.array_equal(ds.encode_row([c, v]), row)
