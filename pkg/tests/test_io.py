import numpy as np
import pytest

from duti.core import CLASSIFICATION, REGRESSION, Dataset, TrustedSet
from duti.io import (
    InputError,
    dense_delta,
    load_json,
    read_trusted_csv,
    read_training_csv,
    sparse_delta,
    write_trusted_csv,
    write_training_csv,
)


def test_csv_round_trip(tmp_path, rng):
    ds = Dataset(rng.normal(size=(5, 3)), rng.normal(size=5))
    tr = TrustedSet(rng.normal(size=(2, 3)), [0.5, -1.0], [3.0, 100.0])
    write_training_csv(tmp_path / "t.csv", ds)
    write_trusted_csv(tmp_path / "u.csv", tr)
    ds2 = read_training_csv(tmp_path / "t.csv")
    tr2 = read_trusted_csv(tmp_path / "u.csv")
    np.testing.assert_array_equal(ds2.features, ds.features)
    np.testing.assert_array_equal(ds2.labels, ds.labels)
    np.testing.assert_array_equal(tr2.confidences, tr.confidences)


@pytest.mark.parametrize("text, needle", [
    ("feature_0,feature_2,label\n1,2,0\n", "feature_1"),
    ("feature_0,label,extra\n1,0,3\n", "extra"),
    ("feature_0,label\n1,0,4\n", "line 2"),
    ("feature_0,label\n1,inf\n", "not finite"),
    ("", "empty"),
    ("feature_0,label\n", "no data"),
])
def test_malformed_csv(tmp_path, text, needle):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(InputError, match=needle):
        read_training_csv(p)


def test_classification_label_checks(tmp_path):
    p = tmp_path / "c.csv"
    p.write_text("feature_0,label\n0.1,1.5\n")
    with pytest.raises(InputError, match="line 2"):
        read_training_csv(p, CLASSIFICATION)
    p.write_text("feature_0,label\n0.1,3\n")
    with pytest.raises(InputError, match="outside"):
        read_training_csv(p, CLASSIFICATION, 2)


def test_sparse_delta_round_trip(rng):
    y = np.array([0, 2, 1, 1])
    D = np.eye(3)[y]
    D[1] = [0.2, 0.3, 0.5]
    enc = sparse_delta(D, y, CLASSIFICATION)
    assert enc["rows"] == [1]
    np.testing.assert_array_equal(dense_delta(enc, y, CLASSIFICATION, 3), D)
    d = np.array([0.0, 1.5, 0.0, -2.0])
    enc = sparse_delta(d, np.zeros(4), REGRESSION)
    assert enc["indices"] == [1, 3]
    np.testing.assert_array_equal(dense_delta(enc, np.zeros(4), REGRESSION), d)


def test_load_json_checks_schema_and_kind(tmp_path):
    p = tmp_path / "x.json"
    p.write_text('{"schema": "duti/1", "kind": "truth"}')
    assert load_json(p, "truth")["kind"] == "truth"
    with pytest.raises(InputError, match="expected"):
        load_json(p, "debug_report")
    p.write_text("{broken")
    with pytest.raises(InputError, match="line 1"):
        load_json(p, "truth")
