import numpy as np
import pandas as pd
import pytest

from crossadapt.data.csvio import load_csv, write_csv
from crossadapt.data.preprocess import UNK_INDEX, Vocabulary, compress, preprocess
from crossadapt.data.schema import ColumnKind, ColumnSpec, SampleBatch, SchemaConfig
from crossadapt.data.splits import (
    HistoryGrant,
    prepare_splits,
    split_temporal,
    task_rows,
    unclicked_rows,
)
from crossadapt.data.synthetic import (
    DriftPoint,
    SyntheticSpec,
    generate_stream,
    schema_for,
)
from crossadapt.errors import (
    DataError,
    HistoryAccessError,
    InputError,
    ParameterError,
    SchemaError,
)
from crossadapt.online.shift import ShiftSettings, compute_shift


def _make_samples(n: int) -> SampleBatch:
    return SampleBatch(
        categorical=np.zeros((n, 1), dtype=np.int64),
        numerical=np.zeros((n, 0)),
        label=np.arange(n) % 2,
        timestamp=np.arange(n, dtype=float),
    )


def _small_spec(**kw) -> SyntheticSpec:
    base = {"n_samples": 2000, "vocab_sizes": [6, 12, 25], "n_numerical": 2, "seed": 1}
    base.update(kw)
    return SyntheticSpec(**base)


def _schema(*cols, **kw) -> SchemaConfig:
    return SchemaConfig(columns=[ColumnSpec(name=n, kind=k) for n, k in cols], **kw)


def test_compress_rule():
    out = compress(np.array([8.0, 1024.0, 2.0, 1.5, -5.0, 0.0]))
    np.testing.assert_allclose(out, [3.0, 10.0, 2.0, 1.5, -5.0, 0.0])


def test_vocabulary_threshold():
    frame = pd.DataFrame({"c": ["a"] * 9 + ["b"] * 10 + ["c"] * 12, "y": 0, "ts": range(31)})
    schema = _schema(("c", ColumnKind.CATEGORICAL), ("y", ColumnKind.LABEL),
                     ("ts", ColumnKind.TIMESTAMP))
    vocab = Vocabulary.build(frame, schema)
    assert vocab.tokens["c"] == {"c": 1, "b": 2}
    assert vocab.size("c") == 3
    encoded = vocab.encode("c", pd.Series(["a", "b", "c", "never"]))
    assert list(encoded) == [UNK_INDEX, 2, 1, UNK_INDEX]


def test_per_column_threshold_override():
    frame = pd.DataFrame({"c": ["a"] * 3 + ["b"], "y": 0, "ts": range(4)})
    schema = SchemaConfig(
        columns=[
            ColumnSpec(name="c", kind=ColumnKind.CATEGORICAL, vocab_threshold=2),
            ColumnSpec(name="y", kind=ColumnKind.LABEL),
            ColumnSpec(name="ts", kind=ColumnKind.TIMESTAMP),
        ]
    )
    assert Vocabulary.build(frame, schema).tokens["c"] == {"a": 1}


def test_schema_validation():
    with pytest.raises(ValueError):
        _schema(("c", ColumnKind.CATEGORICAL), ("ts", ColumnKind.TIMESTAMP))
    with pytest.raises(ValueError):
        _schema(("c", ColumnKind.CATEGORICAL), ("y", ColumnKind.LABEL))
    ok = _schema(("c", ColumnKind.CATEGORICAL), ("y", ColumnKind.LABEL), temporal_row_order=True)
    assert ok.timestamp_name is None


def test_preprocess_without_timestamp_uses_row_order():
    frame = pd.DataFrame({"n": [8.0, 1.0, 1024.0], "y": [0, 1, 0]})
    schema = _schema(("n", ColumnKind.NUMERICAL), ("y", ColumnKind.LABEL),
                     temporal_row_order=True)
    batch, _ = preprocess(frame, schema)
    np.testing.assert_allclose(batch.numerical[:, 0], [3.0, 1.0, 10.0])
    np.testing.assert_allclose(batch.timestamp, [0.0, 1.0, 2.0])


@pytest.mark.parametrize(
    "n,ratio,expected",
    [
        (100_000, (4, 4, 1, 1), [40_000, 40_000, 10_000, 10_000]),
        (200_000, (10, 8, 1, 1), [100_000, 80_000, 10_000, 10_000]),
    ],
)
def test_split_sizes(n, ratio, expected):
    splits = split_temporal(_make_samples(n), ratio)
    assert list(splits.sizes().values()) == expected


def test_splits_are_ordered_and_contiguous():
    splits = split_temporal(_make_samples(1000))
    parts = [splits.hist(HistoryGrant.TEACHER), splits.train, splits.online, splits.test]
    for a, b in zip(parts, parts[1:]):
        assert a.timestamp.max() < b.timestamp.min()
    assert len(splits.teacher_data()) == 800


def test_history_is_withheld():
    splits = split_temporal(_make_samples(100))
    with pytest.raises(HistoryAccessError):
        splits.hist()
    assert len(splits.hist(HistoryGrant.FULL_RETRAIN)) == 40


def test_empty_history_blocks_full_retrain():
    splits = split_temporal(_make_samples(30), (0, 1, 1, 1))
    assert not splits.has_history
    assert len(splits.hist(HistoryGrant.TEACHER)) == 0
    with pytest.raises(DataError):
        splits.hist(HistoryGrant.FULL_RETRAIN)


def test_split_errors():
    with pytest.raises(DataError):
        split_temporal(_make_samples(5))
    with pytest.raises(ParameterError):
        split_temporal(_make_samples(50), (4, 4, 0, 1))


def test_generator_is_deterministic(tmp_path):
    spec = _small_spec()
    a = write_csv(generate_stream(spec), tmp_path / "a.csv")
    b = write_csv(generate_stream(spec), tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()
    assert spec.digest() == _small_spec().digest()
    other = generate_stream(_small_spec(seed=2))
    assert not other.equals(generate_stream(spec))


def test_generator_positive_rate():
    frame = generate_stream(_small_spec(n_samples=50_000, base_rate=0.03))
    assert abs(frame["label"].mean() - 0.03) < 0.005


def test_generator_rejects_bad_specs():
    with pytest.raises(ValueError):
        SyntheticSpec(vocab_sizes=[1, 4])
    with pytest.raises(ValueError):
        SyntheticSpec(drift=[DriftPoint(start_fraction=0.5), DriftPoint(start_fraction=0.4)])


def test_pcvr_stream_converts_only_after_click():
    spec = _small_spec(pcvr=True, base_rate=0.2, click_rate=0.3)
    frame = generate_stream(spec)
    assert "click" in frame.columns
    assert (frame["label"] <= frame["click"]).all()
    prepared = prepare_splits(frame, schema_for(spec))
    train = prepared.splits.train
    assert np.all(task_rows(train).click == 1)
    assert np.all(unclicked_rows(train).click == 0)
    assert len(task_rows(train)) + len(unclicked_rows(train)) == len(train)


def test_task_rows_without_clicks():
    batch = _make_samples(10)
    assert task_rows(batch) is batch
    assert len(unclicked_rows(batch)) == 0


def test_stationary_stream_has_low_shift():
    spec = _small_spec(n_samples=50_000, drift=[])
    batch, _ = preprocess(generate_stream(spec), schema_for(spec))
    report = compute_shift(batch, ShiftSettings())
    assert report.delta_shift < 0.01


def test_abrupt_drift_is_localised():
    spec = _small_spec(
        n_samples=20_000, drift=[DriftPoint(start_fraction=0.5, perturbation=2.0)]
    )
    frame = generate_stream(spec)
    batch, _ = preprocess(frame, schema_for(spec))
    report = compute_shift(batch, ShiftSettings(n_windows=10))
    assert report.max_pair == 4


def test_vocabulary_from_hist_and_train_only():
    spec = _small_spec(n_samples=1000)
    frame = generate_stream(spec)
    frame.loc[950, "C1"] = "late_token"
    prepared = prepare_splits(frame, schema_for(spec))
    assert "late_token" not in prepared.vocab.tokens["C1"]
    test = prepared.splits.test
    row = int(np.flatnonzero(test.timestamp == 950)[0])
    assert test.categorical[row, 0] == UNK_INDEX
    assert prepared.field_schema.categorical[0].vocab_size == prepared.vocab.size("C1")


def test_csv_round_trip(tmp_path):
    spec = _small_spec(n_samples=300)
    frame = generate_stream(spec)
    path = write_csv(frame, tmp_path / "stream.csv")
    loaded = load_csv(path, schema_for(spec))
    for name in spec.categorical_names:
        assert list(loaded[name]) == list(frame[name])
    for name in [*spec.numerical_names, "label", "ts"]:
        np.testing.assert_array_equal(loaded[name].to_numpy(), frame[name].to_numpy())


def test_csv_bad_row_strict_and_lenient(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("n,c,y,ts\n1,a,0,0\nxx,b,1,1\n3,c,0,2\n")
    cols = [("n", ColumnKind.NUMERICAL), ("c", ColumnKind.CATEGORICAL),
            ("y", ColumnKind.LABEL), ("ts", ColumnKind.TIMESTAMP)]
    with pytest.raises(DataError, match="line 3"):
        load_csv(path, _schema(*cols))
    lenient = load_csv(path, _schema(*cols, strict=False))
    assert list(lenient["c"]) == ["a", "c"]


def test_csv_label_must_be_binary(tmp_path):
    path = tmp_path / "label.csv"
    path.write_text("c,y,ts\na,2,0\n")
    with pytest.raises(DataError):
        load_csv(path, _schema(("c", ColumnKind.CATEGORICAL), ("y", ColumnKind.LABEL),
                               ("ts", ColumnKind.TIMESTAMP)))


def test_csv_missing_column_and_file(tmp_path):
    path = tmp_path / "short.csv"
    path.write_text("c,ts\na,0\n")
    schema = _schema(("c", ColumnKind.CATEGORICAL), ("y", ColumnKind.LABEL),
                     ("ts", ColumnKind.TIMESTAMP))
    with pytest.raises(SchemaError):
        load_csv(path, schema)
    with pytest.raises(InputError):
        load_csv(tmp_path / "absent.csv", schema)


def test_criteo_shaped_tab_file(tmp_path):
    nums = [f"I{i}" for i in range(1, 14)]
    cats = [f"C{i}" for i in range(1, 27)]
    header = ["label", *nums, *cats]
    rows = [
        [str(i % 2), *[str(i + j) for j in range(13)], *[f"{j:x}{i}" for j in range(26)]]
        for i in range(5)
    ]
    path = tmp_path / "criteo.tsv"
    path.write_text("\n".join("\t".join(r) for r in [header, *rows]) + "\n")
    schema = SchemaConfig(
        columns=[ColumnSpec(name="label", kind=ColumnKind.LABEL)]
        + [ColumnSpec(name=n, kind=ColumnKind.NUMERICAL) for n in nums]
        + [ColumnSpec(name=c, kind=ColumnKind.CATEGORICAL) for c in cats],
        delimiter="\t",
        temporal_row_order=True,
        vocab_threshold=1,
    )
    frame = load_csv(path, schema)
    batch, vocab = preprocess(frame, schema)
    assert batch.categorical.shape == (5, 26)
    assert batch.numerical.shape == (5, 13)
    assert vocab.size("C1") == 6
