import json

import numpy as np
import pytest

from psilvm import dataio
from psilvm import kernels as kern
from psilvm.errors import ClassTooSmall, ConfigError, NonMonotoneTime, ParseError, RaggedRows
from psilvm.gplvm import elbo, init_model

from conftest import write_labelled_csv


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


# ------------------------------------------------------------------ features

def test_load_small_csv(tmp_path):
    p = _write(tmp_path / "a.csv", "x,y\n1,2\n3,4\n5,6.5\n")
    ds = dataio.load_csv_features(p)
    assert ds.features.shape == (3, 2) and ds.labels is None
    assert ds.features[2, 1] == 6.5
    assert ds.content_hash == dataio.load_csv_features(p).content_hash


def test_labels_extracted(tmp_path):
    p = _write(tmp_path / "a.csv", "x,label,y\n1,0,2\n3,2,4\n")
    ds = dataio.load_csv_features(p, label_column="label")
    assert ds.features.tolist() == [[1.0, 2.0], [3.0, 4.0]]
    assert ds.labels.tolist() == [0, 2]


def test_ragged_rows(tmp_path):
    with pytest.raises(RaggedRows):
        dataio.load_csv_features(_write(tmp_path / "a.csv", "x,y\n1,2\n3\n"))


def test_parse_error_location(tmp_path):
    with pytest.raises(ParseError) as info:
        dataio.load_csv_features(_write(tmp_path / "a.csv", "x,y\n1,2\n3,abc\n"))
    assert (info.value.line, info.value.column) == (3, 2)


def test_hash_changes_with_bytes(tmp_path):
    a = dataio.load_csv_features(_write(tmp_path / "a.csv", "x\n1\n"))
    b = dataio.load_csv_features(_write(tmp_path / "b.csv", "x\n1.0\n"))
    assert a.content_hash != b.content_hash


def test_data_dir_prefix(tmp_path, monkeypatch):
    _write(tmp_path / "oil.csv", "x,label\n1,0\n")
    monkeypatch.setenv(dataio.DATA_ENV, str(tmp_path))
    ds = dataio.load_csv_features("oil.csv", label_column="label")
    assert ds.n == 1 and ds.source_path == str(tmp_path / "oil.csv")


# ------------------------------------------------------------------ series

def test_airline_series(airline):
    ds = dataio.load_series()
    assert ds.series.size == 144 and len(ds.timestamps) == 144
    assert ds.timestamps[0] == "1949-01" and ds.timestamps[-1] == "1960-12"
    assert np.array_equal(ds.series[:48], airline[:48])
    assert ds.series[0] == 112.0


def test_shuffled_series_rejected(tmp_path):
    ds = dataio.load_series()
    rows = list(zip(ds.timestamps, ds.series))
    rows[10], rows[20] = rows[20], rows[10]
    p = tmp_path / "s.csv"
    dataio.write_csv(p, ["month", "value"], rows)
    with pytest.raises(NonMonotoneTime):
        dataio.load_series(p)


def test_series_bad_month(tmp_path):
    with pytest.raises(ParseError) as info:
        dataio.load_series(_write(tmp_path / "s.csv", "month,value\n1949-01,1\n1949-13,2\n"))
    assert info.value.line == 3


def test_dataset_holds_one_kind():
    with pytest.raises(ValueError):
        dataio.Dataset("x", "", "", features=np.zeros((1, 1)), series=np.zeros(1))


# ------------------------------------------------------------------ subsampling

def _labelled(n_per=(5, 7, 6)):
    lab = np.concatenate([np.full(k, c) for c, k in enumerate(n_per)])
    X = np.arange(lab.size * 2, dtype=float).reshape(-1, 2)
    return dataio.Dataset("t", "", "h", features=X, labels=lab)


def test_subsample_identity_at_class_size():
    ds = _labelled((4, 4, 4))
    sub = dataio.subsample_per_class(ds, 4, seed=1)
    assert np.array_equal(sub.features, ds.features) and np.array_equal(sub.labels, ds.labels)


def test_subsample_counts_and_seeds():
    ds = _labelled()
    a = dataio.subsample_per_class(ds, 3, seed=0)
    b = dataio.subsample_per_class(ds, 3, seed=1)
    assert np.bincount(a.labels).tolist() == [3, 3, 3] == np.bincount(b.labels).tolist()
    assert not np.array_equal(a.features, b.features)
    assert np.array_equal(a.features, dataio.subsample_per_class(ds, 3, seed=0).features)


def test_subsample_class_too_small():
    with pytest.raises(ClassTooSmall):
        dataio.subsample_per_class(_labelled(), 6)


# ------------------------------------------------------------------ round trip

def test_csv_round_trip(tmp_path, rng):
    X = rng.normal(size=(20, 4)) * 10.0 ** rng.integers(-12, 12, size=(20, 4))
    lab = rng.integers(0, 3, 20)
    p = tmp_path / "m.csv"
    dataio.write_matrix(p, X, labels=lab)
    ds = dataio.load_csv_features(p, label_column="label")
    assert np.all(np.abs(ds.features - X) <= 1e-15 * np.abs(X))
    assert np.array_equal(ds.labels, lab)


# ------------------------------------------------------------------ config

def test_config_defaults_and_overrides(tmp_path):
    p = _write(tmp_path / "c.cfg", "# airline run\nscheme = gh:2\nlag=6  # shorter\n")
    cfg = dataio.build_config(p, ["seed=4"], max_iters=10)
    assert cfg["scheme"] == "gh:2" and cfg["lag"] == 6 and cfg["seed"] == 4 and cfg["max_iters"] == 10
    assert cfg["kernel.ard"] is None and cfg["inducing.m"] == 20


def test_config_rejects_unknown_and_bad_values(tmp_path):
    with pytest.raises(ConfigError):
        dataio.build_config(_write(tmp_path / "c.cfg", "shceme = ut\n"))
    with pytest.raises(ConfigError):
        dataio.build_config(overrides=["lag=twelve"])
    with pytest.raises(ConfigError):
        dataio.build_config(overrides=["baseline=svm"])
    with pytest.raises(ConfigError):
        dataio.build_config(overrides=["kernel.ard=maybe"])
    assert dataio.build_config(overrides=["kernel.ard=false"])["kernel.ard"] is False


# ------------------------------------------------------------------ manifests and models

def test_manifest_hashes(tmp_path):
    cfg = dataio.build_config()
    a = dataio.RunManifest("freesim", cfg, 0, "ut", "abc", metrics={"rmse": 1.5}, wall_time=3.0)
    b = dataio.RunManifest("freesim", cfg, 0, "ut", "abc", metrics={"rmse": 1.5}, wall_time=9.0)
    assert a.input_hash() == b.input_hash() and a.result_hash() == b.result_hash()
    c = dataio.RunManifest("freesim", cfg, 1, "ut", "abc")
    assert c.input_hash() != a.input_hash()
    a.write(tmp_path)
    back = dataio.RunManifest.read(tmp_path / "manifest.json")
    assert back.input_hash() == a.input_hash() and back.metrics == {"rmse": 1.5}
    assert json.loads((tmp_path / "manifest.json").read_text())["result_hash"] == a.result_hash()


def test_metrics_bytes_reproducible(tmp_path):
    m = {"b": 0.1 + 0.2, "a": 3, "c": 1e-300}
    dataio.write_metrics(tmp_path / "1.csv", m)
    dataio.write_metrics(tmp_path / "2.csv", dict(reversed(list(m.items()))))
    text = (tmp_path / "1.csv").read_bytes()
    assert text == (tmp_path / "2.csv").read_bytes()
    assert text.decode().splitlines() == ["name,value", "a,3", "b,0.30000000000000004", "c,1e-300"]


def test_run_dirs_unique(tmp_path):
    a, b = dataio.make_run_dir(tmp_path, "x"), dataio.make_run_dir(tmp_path, "x")
    assert a != b and a.is_dir() and b.is_dir() and a.name.endswith("-x")


def test_model_save_load(tmp_path, rng):
    Y = rng.normal(size=(12, 3))
    model = init_model(Y, 2, kern.rbf(2), num_inducing=4, latent_var=0.1, scheme="ut", seed=0)
    digest = dataio.save_model(tmp_path / "m.json", model)
    back = dataio.load_model(tmp_path / "m.json")
    assert len(digest) == 64
    assert np.array_equal(back.means, model.means) and back.scheme.tag == "ut"
    assert elbo(back).elbo == elbo(model).elbo
    doc = json.loads((tmp_path / "m.json").read_text())
    doc["noise_var"] = doc["noise_var"] * 2
    (tmp_path / "m.json").write_text(json.dumps(doc))
    with pytest.raises(ParseError):
        dataio.load_model(tmp_path / "m.json")


def test_labelled_csv_helper_matches_loader(tmp_path, rng):
    Y, lab = rng.normal(size=(6, 3)), np.array([0, 1, 2, 0, 1, 2])
    write_labelled_csv(tmp_path / "d.csv", Y, lab)
    ds = dataio.load_csv_features(tmp_path / "d.csv", label_column="label")
    assert np.array_equal(ds.features, Y) and np.array_equal(ds.labels, lab)
