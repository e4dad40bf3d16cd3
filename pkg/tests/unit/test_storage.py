import hashlib
import json
import math

import numpy as np
import pandas as pd
import pytest

from blowup import storage


@pytest.fixture
def store(tmp_path):
    return storage.OutputStore(str(tmp_path / "out"))


@pytest.mark.storage
def test_csv_keeps_full_precision(store):
    """Floats are written with 17 significant digits so they reload bit-for-bit."""
    df = pd.DataFrame({"r": [0.1, 1.0 / 3.0], "w": [math.pi, 2.0]})
    name = store.write_csv("profile.csv", df)
    back = pd.read_csv(f"{store.output_dir}/{name}")
    assert back["w"].iloc[0] == math.pi
    assert back["r"].iloc[1] == 1.0 / 3.0
    with open(f"{store.output_dir}/{name}", "rb") as f:
        assert b"\r\n" not in f.read()


@pytest.mark.storage
def test_dat_has_commented_header(store):
    """.dat files carry a commented header and write NaN literally."""
    df = pd.DataFrame({"r": [0.0, 0.5], "u": [1.0, float("nan")]})
    store.write_dat("profile.dat", df)
    with open(f"{store.output_dir}/profile.dat", encoding="utf-8") as f:
        lines = f.read().splitlines()
    assert lines[0] == "# r u"
    assert lines[1].split() == ["0", "1"]
    assert lines[2].split()[1] == "nan"


@pytest.mark.storage
def test_manifest_records_sha256(store):
    """The manifest lists files sorted by path with their SHA-256."""
    store.write_csv("b.csv", pd.DataFrame({"x": [1, 2]}))
    store.write_json("a.json", {"k": 1})
    manifest = store.manifest()
    assert [entry["path"] for entry in manifest] == ["a.json", "b.csv"]
    with open(f"{store.output_dir}/b.csv", "rb") as f:
        expected = hashlib.sha256(f.read()).hexdigest()
    assert manifest[1]["sha256"] == expected
    assert manifest[1]["kind"] == "csv"


@pytest.mark.storage
def test_rewriting_a_file_replaces_its_manifest_entry(store):
    """Writing a file twice keeps one manifest entry."""
    store.write_csv("x.csv", pd.DataFrame({"x": [1]}))
    store.write_csv("x.csv", pd.DataFrame({"x": [1, 2, 3]}))
    assert len(store.manifest()) == 1


@pytest.mark.storage
def test_unrecorded_json_stays_out_of_the_manifest(store):
    """record=False keeps a file out of the manifest."""
    store.write_json("report.json", {"status": "ok"}, record=False)
    assert store.manifest() == []


@pytest.mark.storage
def test_jsonable_handles_non_finite_and_numpy_values():
    """jsonable converts numpy values and non-finite floats."""
    payload = {"bound": math.inf, "low": -np.inf, "missing": np.nan, "arr": np.array([1.0, 2.0]),
               "flag": np.bool_(True), "count": np.int64(3), 5: (1, None)}
    converted = storage.jsonable(payload)
    assert converted["bound"] == "inf" and converted["low"] == "-inf" and converted["missing"] == "nan"
    assert converted["arr"] == [1.0, 2.0]
    assert converted["flag"] is True and converted["count"] == 3
    assert converted["5"] == [1, None]
    json.dumps(converted, allow_nan=False)
