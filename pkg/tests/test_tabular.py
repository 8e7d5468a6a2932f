import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ctganru.exceptions import DataError, SchemaError, ConfigError
from ctganru.mode_norm import ModeModel
from ctganru.tabular import (
    Column,
    DataSchema,
    Dataset,
    TabularEncoder,
    decode_matrix,
    decode_row,
    dump_schema,
    encode_matrix,
    encode_row,
    encoded_length,
    encoding_layout,
    load_csv,
    load_schema,
    make_schema,
    split,
    write_csv,
)
from helpers import make_toy


def _two_col_schema():
    return make_schema(["speed"], {"severity": ["nFI", "FI"]}, label="severity")


def test_load_small_csv(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("severity,speed\nFI,1.5\nnFI,2\nnFI,-3e1\n")
    ds = load_csv(p, _two_col_schema())
    assert len(ds) == 3
    assert ds.column("speed").tolist() == [1.5, 2.0, -30.0]
    assert ds.class_counts() == {"nFI": 2, "FI": 1}


def test_unknown_category_reports_location(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("speed,severity\n1,FI\n2,Z\n")
    with pytest.raises(DataError) as info:
        load_csv(p, _two_col_schema())
    assert info.value.row == 3
    assert info.value.column == "severity"
    assert "'Z'" in str(info.value)


@pytest.mark.parametrize(
    "text, column",
    [
        ("speed\n1\n", "severity"),
        ("speed,severity\nabc,FI\n", "speed"),
        ("speed,severity\n,FI\n", "speed"),
        ("speed,severity\nnan,FI\n", "speed"),
    ],
)
def test_malformed_files_name_the_column(tmp_path, text, column):
    p = tmp_path / "d.csv"
    p.write_text(text)
    with pytest.raises(DataError) as info:
        load_csv(p, _two_col_schema())
    assert info.value.column == column


def test_empty_and_missing_files(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("")
    with pytest.raises(DataError):
        load_csv(p, _two_col_schema())
    p.write_text("speed,severity\n")
    with pytest.raises(DataError):
        load_csv(p, _two_col_schema())
    with pytest.raises(ConfigError):
        load_csv(tmp_path / "nope.csv", _two_col_schema())


def test_class_counts_at_full_scale(tmp_path):
    schema = _two_col_schema()
    y = np.zeros(157_080, dtype=int)
    y[:81] = 1
    ds = Dataset.from_columns(schema, {"speed": np.zeros(len(y)), "severity": y})
    p = tmp_path / "big.csv"
    write_csv(ds, p)
    assert load_csv(p, schema).class_counts() == {"nFI": 156_999, "FI": 81}


def test_csv_round_trip(tmp_path):
    ds = make_toy(50, seed=3)
    p = tmp_path / "t.csv"
    write_csv(ds, p)
    back = load_csv(p, ds.schema)
    assert np.allclose(back.values, ds.values, rtol=1e-8)


def test_schema_yaml_round_trip(tmp_path):
    schema = make_schema(["a", "b"], {"c": ["x", "y", "z"], "y": ["lo", "mid", "hi"]}, label="y", label_kind="ordered")
    dump_schema(schema, tmp_path / "s.yaml")
    assert load_schema(tmp_path / "s.yaml") == schema


@pytest.mark.parametrize(
    "build",
    [
        lambda: Column("a", "ordinal"),
        lambda: Column("a", "discrete", ("x",)),
        lambda: Column("a", "discrete", ("x", "x")),
        lambda: Column("a", "continuous", ("x",)),
        lambda: make_schema(["x"], {"y": ["0", "1"]}, label="z"),
        lambda: make_schema(["y"], {}, label="y"),
        lambda: make_schema([], {"y": ["0", "1", "2"]}, label="y"),
        lambda: make_schema([], {"y": ["0", "1"]}, label="y", label_kind="ordered"),
    ],
)
def test_invalid_schemas(build):
    with pytest.raises(SchemaError):
        build()


@pytest.mark.parametrize("n, frac, n_train", [(157_080, 0.7, 109_956), (906, 0.7, 634), (10, 0.5, 5)])
def test_split_sizes(n, frac, n_train):
    schema = _two_col_schema()
    ds = Dataset.from_columns(schema, {"speed": np.arange(n, dtype=float), "severity": np.zeros(n, dtype=int)})
    tr, te = split(ds, frac, seed=4)
    assert (len(tr), len(te)) == (n_train, n - n_train)
    assert set(tr.column("speed")).isdisjoint(te.column("speed"))


def test_split_is_deterministic():
    ds = make_toy(10)
    a1, b1 = split(ds, 0.5, seed=11)
    a2, b2 = split(ds, 0.5, seed=11)
    assert np.array_equal(a1.values, a2.values) and np.array_equal(b1.values, b2.values)


@pytest.mark.parametrize("frac", [0.0, 1.0, -0.2, 1.5])
def test_split_rejects_bad_fraction(frac):
    with pytest.raises(ConfigError):
        split(make_toy(10), frac, seed=0)


def _mm(k):
    return ModeModel(np.full(k, 1.0 / k), np.arange(k, dtype=float) * 10, np.ones(k))


def test_encoded_length_matches_layout():
    schema = make_schema(["u", "v"], {"c": list("abcd"), "y": ["0", "1"]}, label="y")
    models = {"u": _mm(3), "v": _mm(2)}
    assert encoded_length(schema, models) == 13
    assert encoding_layout(schema, models)[-1].stop == 13


def test_one_hot_for_discrete_only_schema():
    schema = make_schema([], {"c": list("abcd"), "y": ["0", "1"]}, label="y")
    vec = encode_row({"c": "c", "y": "0"}, {}, schema, np.random.default_rng(0))
    assert vec[:4].tolist() == [0, 0, 1, 0]


def test_single_mode_encoding_by_hand():
    schema = make_schema(["x"], {"y": ["0", "1"]}, label="y")
    models = {"x": ModeModel([1.0], [0.0], [1.0])}
    vec = encode_row({"x": 2.0, "y": 1}, models, schema, np.random.default_rng(0))
    # alpha = (2 - 0) / (4 * 1)
    assert vec.tolist() == [0.5, 1.0, 0.0, 1.0]
    assert decode_row(vec, models, schema) == {"x": 2.0, "y": 1}


def test_decode_uses_argmax_mode_and_clips_alpha():
    schema = make_schema(["x"], {"y": ["0", "1"]}, label="y")
    models = {"x": ModeModel([0.5, 0.5], [0.0, 10.0], [1.0, 2.0])}
    row = decode_row(np.array([0.25, 0.2, 0.8, 1.0, 0.0]), models, schema)
    assert row["x"] == pytest.approx(10.0 + 4 * 2.0 * 0.25)
    row = decode_row(np.array([3.0, 1.0, 0.0, 1.0, 0.0]), models, schema)
    assert row["x"] == pytest.approx(4.0)


def test_decode_rejects_wrong_width():
    schema = make_schema(["x"], {"y": ["0", "1"]}, label="y")
    with pytest.raises(ConfigError):
        decode_matrix(np.zeros((1, 3)), schema, {"x": _mm(1)})


@given(st.integers(0, 10_000))
def test_encoded_rows_are_well_formed(seed):
    ds = make_toy(30, seed=seed % 50)
    enc = TabularEncoder(max_modes=3, random_state=seed).fit(ds)
    mat = enc.transform(ds, rng=np.random.default_rng(seed))
    assert mat.shape == (30, enc.output_dim_)
    for seg in enc.layout_:
        block = mat[:, seg.start : seg.stop]
        if seg.kind == "alpha":
            assert np.all(np.abs(block) <= 1.0)
        else:
            assert np.all(block.sum(axis=1) == 1.0)
            assert set(np.unique(block)) <= {0.0, 1.0}


def test_encoder_round_trip_is_close():
    ds = make_toy(500, seed=2)
    enc = TabularEncoder(random_state=0).fit(ds)
    back = enc.inverse_transform(enc.transform(ds))
    assert np.array_equal(back.codes("a"), ds.codes("a"))
    # values more than 4 std from the sampled mode centre are clipped
    close = np.abs(back.column("x") - ds.column("x")) < 1e-9
    assert close.mean() > 0.95


def test_dataset_is_immutable_and_validates():
    ds = make_toy(5)
    with pytest.raises(AttributeError):
        ds.values = None
    with pytest.raises(ValueError):
        ds.values[0, 0] = 1.0
    with pytest.raises(DataError):
        Dataset(ds.schema, [[0.0, 2.0, 0.0]])
    with pytest.raises(DataError):
        Dataset.from_columns(ds.schema, {"x": [1.0], "a": ["r"], "y": ["0"]})


def test_dataset_helpers():
    ds = make_toy(40, seed=5)
    pos = ds.where_label(1)
    assert np.all(ds.take(pos).labels == 1)
    both = ds.concat(ds)
    assert len(both) == 80
    assert sum(ds.class_counts().values()) == 40
    recs = ds.records()
    assert recs[0]["a"] in ("p", "q")
    assert ds.with_column("x", np.zeros(40)).column("x").sum() == 0
