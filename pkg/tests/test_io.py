import json
import os

import numpy as np
import pytest

from lcns.io import RunManifest, atomic_write, csv_text, export_csv, read_csv, source_date


def test_empty_series_writes_header_only(tmp_path):
    p = tmp_path / "e.csv"
    export_csv(p, ("t", "E"), [])
    assert p.read_text() == "t,E\n"


def test_full_precision_roundtrip(tmp_path, rng):
    vals = rng.standard_normal((20, 3)) * 10.0 ** rng.integers(-300, 300, (20, 3))
    p = tmp_path / "v.csv"
    export_csv(p, ("a", "b", "c"), vals.tolist())
    header, rows = read_csv(p)
    assert header == ["a", "b", "c"]
    assert np.array_equal(np.array(rows, dtype=float), vals)


def test_csv_blank_for_none_and_row_length_checked():
    assert csv_text(("a", "b"), [(1, None)]) == "a,b\n1,\n"
    with pytest.raises(ValueError):
        csv_text(("a",), [(1, 2)])


def test_atomic_write_leaves_no_temp_files(tmp_path):
    p = tmp_path / "sub" / "f.txt"
    atomic_write(p, "hello")
    atomic_write(p, b"bytes")
    assert p.read_bytes() == b"bytes"
    assert os.listdir(tmp_path / "sub") == ["f.txt"]


def test_manifest_is_deterministic(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    a = tmp_path / "a.txt"
    a.write_text("x")
    m1 = RunManifest("forward", "abc", seed=3)
    m1.add_artifact(str(a), str(tmp_path))
    m2 = RunManifest("forward", "abc", seed=3)
    m2.add_artifact(str(a), str(tmp_path))
    assert m1.to_json() == m2.to_json()
    doc = json.loads(m1.to_json())
    assert doc["source_date_epoch"] == "1700000000" and "a.txt" in doc["artifacts"]
    monkeypatch.delenv("SOURCE_DATE_EPOCH")
    assert source_date() == "unset"
