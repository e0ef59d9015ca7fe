import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smart_testing.dataset import (
    ColumnKind,
    Dataset,
    DatasetError,
    DuplicateColumn,
    MissingFile,
    MissingTarget,
    MissingValue,
    NonBinaryTarget,
    RaggedRow,
    TypeOverrideError,
    describe,
    infer_kind,
    load_csv,
    make_categorical,
    make_numeric,
    split,
    split_indices,
    write_csv,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_four_columns_2000_rows(tmp_path):
    rng = np.random.default_rng(1)
    lines = ["age,psa,grade,mortality"]
    for _ in range(2000):
        lines.append(f"{rng.integers(40, 90)},{rng.random() * 20:.3f},{rng.integers(1, 6)},{rng.integers(0, 2)}")
    ds = load_csv(write(tmp_path / "p.csv", "\n".join(lines) + "\n"), target="mortality")
    assert ds.n_rows == 2000
    assert ds.column_names == ["age", "psa", "grade", "mortality"]
    assert ds.column("psa").kind is ColumnKind.NUMERIC
    assert ds.target_column == "mortality"


def test_duplicate_header(tmp_path):
    with pytest.raises(DuplicateColumn):
        load_csv(write(tmp_path / "d.csv", "age,age\n1,2\n"))


def test_percent_bands_are_categorical(tmp_path):
    ds = load_csv(write(tmp_path / "b.csv", "imd_band\n0-30%\n70-80%\n0-30%\n"))
    col = ds.column("imd_band")
    assert col.kind is ColumnKind.CATEGORICAL
    assert col.categories == ("0-30%", "70-80%")


@pytest.mark.parametrize(
    "text, error",
    [
        ("a,b\n1,2\n3\n", RaggedRow),
        ("a,b\n1,\n", MissingValue),
    ],
)
def test_load_errors(tmp_path, text, error):
    with pytest.raises(error):
        load_csv(write(tmp_path / "e.csv", text))


def test_missing_file_and_target(tmp_path):
    with pytest.raises(MissingFile):
        load_csv(tmp_path / "nope.csv")
    with pytest.raises(MissingTarget):
        load_csv(write(tmp_path / "t.csv", "a\n1\n"), target="y")


def test_missing_value_reports_location(tmp_path):
    with pytest.raises(MissingValue, match="line 3.*'b'"):
        load_csv(write(tmp_path / "m.csv", "a,b\n1,2\n3,NaN\n"))


def test_non_binary_target(tmp_path):
    with pytest.raises(NonBinaryTarget):
        load_csv(write(tmp_path / "n.csv", "a,y\n1,0\n2,2\n"), target="y")


def test_type_inference_precedence():
    assert infer_kind(["1", "0", "1"]) is ColumnKind.NUMERIC
    assert infer_kind(["Y", "N"]) is ColumnKind.BOOLEAN
    assert infer_kind(["true", "false"]) is ColumnKind.BOOLEAN
    assert infer_kind(["a", "1"]) is ColumnKind.CATEGORICAL


def test_overrides_and_sidecar(tmp_path):
    p = write(tmp_path / "s.csv", "code,y\n1,0\n2,1\n")
    assert load_csv(p, type_overrides={"code": "categorical"}).column("code").kind is ColumnKind.CATEGORICAL
    write(tmp_path / "s.csv.schema", "# kinds\ncode=categorical\n")
    assert load_csv(p).column("code").kind is ColumnKind.CATEGORICAL
    with pytest.raises(TypeOverrideError):
        load_csv(p, type_overrides={"nope": "numeric"})


def test_categorical_first_appearance_order():
    col = make_categorical("c", ["z", "a", "z", "m"])
    assert col.categories == ("z", "a", "m")


def test_describe_oulad_shape():
    names = ["gender", "region", "highest_education", "imd_band", "age_band", "num_of_prev_attempts",
             "studied_credits", "disability", "test", "group_0", "group_1", "group_2", "group_3", "group_4"]
    data = {n: ["a", "b"] for n in names}
    data["gender"] = ["M", "F"]
    ctx = describe(Dataset.from_dict(data), "predict course outcome")
    text = ctx.render()
    assert "The dataset contains 14 columns." in text
    assert "The columns are gender, region, highest_education" in text
    assert "('gender', ['M', 'F'])" in text
    assert ctx.column_names == names


def test_describe_numeric_summary_and_empty_prose():
    ds = Dataset("n", (make_numeric("x", np.arange(1, 101)),))
    ctx = describe(ds, "")
    s = ctx.column_summaries[0]
    assert (s.minimum, s.maximum, s.mean) == (1.0, 100.0, 50.5)
    assert ctx.render().startswith("The dataset contains 1 columns.")


def test_describe_empty_dataset_rejected():
    with pytest.raises(DatasetError):
        describe(Dataset("e", (make_numeric("x", []),)))


def test_split_example():
    ds = Dataset("s", (make_numeric("i", np.arange(100)),))
    train, test = split(ds, 0.2, 7)
    assert (train.n_rows, test.n_rows) == (80, 20)
    again = split(ds, 0.2, 7)
    assert train == again[0] and test == again[1]
    merged = np.sort(np.concatenate([train["i"], test["i"]]))
    assert np.array_equal(merged, np.arange(100))


@pytest.mark.parametrize("frac", [0.0, 1.0, -0.1, 1.5])
def test_split_fraction_bounds(frac):
    with pytest.raises(ValueError):
        split_indices(10, frac, 0)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(2, 500), frac=st.floats(0.01, 0.99), seed=st.integers(0, 2**32 - 1))
def test_split_is_partition(n, frac, seed):
    a, b = split_indices(n, frac, seed)
    assert len(a) >= 1 and len(b) >= 1
    assert len(np.intersect1d(a, b)) == 0
    assert len(a) + len(b) == n


cell_text = st.text(alphabet="abcxyz -_%", min_size=1, max_size=6).filter(lambda s: s.strip() == s and s not in ("nan",))


@settings(max_examples=100, deadline=None)
@given(
    nums=st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=30),
    data=st.data(),
)
def test_csv_round_trip(tmp_path_factory, nums, data):
    n = len(nums)
    cats = data.draw(st.lists(cell_text, min_size=n, max_size=n))
    codes = data.draw(st.lists(st.sampled_from(["1", "2", "10"]), min_size=n, max_size=n))
    flags = data.draw(st.lists(st.booleans(), min_size=n, max_size=n))
    ys = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    ds = Dataset.from_dict(
        {"x": nums, "c": cats, "code": codes, "f": flags, "y": ys},
        kinds={"code": "categorical", "f": "boolean"},
        target="y",
        name="rt",
    )
    path = tmp_path_factory.mktemp("rt") / "rt.csv"
    write_csv(ds, path)
    back = load_csv(path, target="y", name="rt")
    assert back == ds
    assert [c.kind for c in back.columns] == [c.kind for c in ds.columns]


def test_dataset_invariants():
    with pytest.raises(DatasetError):
        Dataset("bad", (make_numeric("a", [1, 2]), make_numeric("b", [1])))
    with pytest.raises(DatasetError):
        Dataset("bad", (make_numeric("a", [1]), make_numeric("a", [1])))
    ds = Dataset("ok", (make_numeric("a", [1, 2]),))
    assert ds.take([1])["a"].tolist() == [2.0]
