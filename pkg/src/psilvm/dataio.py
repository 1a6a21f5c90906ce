"""Dataset loading, flat run configs and run-directory persistence.

Everything on disk is UTF-8 CSV with a header row, or JSON. Floats are
written with ``repr`` so a write/read round trip is exact.
"""
import csv
import datetime as _dt
import hashlib
import io
import json
import os
import platform
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ClassTooSmall, ConfigError, NonMonotoneTime, ParseError, RaggedRows

DATA_ENV = "PSILVM_DATA_DIR"


@dataclass
class Dataset:
    name: str
    source_path: str
    content_hash: str
    features: np.ndarray = None
    labels: np.ndarray = None
    series: np.ndarray = None
    timestamps: list = field(default_factory=list)

    def __post_init__(self):
        if (self.features is None) == (self.series is None):
            raise ValueError("a dataset holds either features or a series")

    @property
    def n(self):
        return len(self.features) if self.features is not None else len(self.series)


def _hash_bytes(raw):
    return hashlib.sha256(raw).hexdigest()


def resolve_path(path):
    """Relative paths are taken under $PSILVM_DATA_DIR when it is set and the file exists there."""
    p = Path(path)
    prefix = os.environ.get(DATA_ENV)
    if not p.is_absolute() and prefix and (Path(prefix) / p).exists():
        return Path(prefix) / p
    return p


def airline_path():
    return resources.files("psilvm") / "data" / "airline.csv"


def _read_rows(path):
    path = resolve_path(path)
    raw = Path(path).read_bytes()
    rows = list(csv.reader(io.StringIO(raw.decode("utf-8"))))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise ParseError("empty file", 1, 1)
    return path, raw, rows[0], rows[1:]


def load_csv_features(path, label_column=None):
    """Numeric CSV with a header row; ``label_column`` (by name) becomes integer labels."""
    path, raw, header, body = _read_rows(path)
    width = len(header)
    if label_column is not None and label_column not in header:
        raise ParseError(f"no column named {label_column!r}", 1, 1)
    lab = header.index(label_column) if label_column is not None else None
    feats, labels = [], []
    for i, row in enumerate(body, start=2):
        if len(row) != width:
            raise RaggedRows(f"line {i} has {len(row)} fields, header has {width}")
        vals = []
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric value {cell!r}", i, j + 1) from None
            if j == lab:
                if v != int(v):
                    raise ParseError(f"label {cell!r} is not an integer", i, j + 1)
                labels.append(int(v))
            else:
                vals.append(v)
        feats.append(vals)
    features = np.array(feats, dtype=float).reshape(len(feats), width - (lab is not None))
    return Dataset(name=Path(path).stem, source_path=str(path), content_hash=_hash_bytes(raw),
                   features=features, labels=np.array(labels, dtype=int) if lab is not None else None)


def load_series(path=None):
    """Two-column ``month,value`` CSV with strictly increasing months. Defaults to the bundled airline file."""
    path = airline_path() if path is None else path
    path, raw, header, body = _read_rows(path)
    if len(header) != 2:
        raise ParseError(f"expected 2 columns, found {len(header)}", 1, len(header))
    stamps, values = [], []
    for i, row in enumerate(body, start=2):
        if len(row) != 2:
            raise RaggedRows(f"line {i} has {len(row)} fields")
        try:
            stamp = _dt.datetime.strptime(row[0].strip(), "%Y-%m")
        except ValueError:
            raise ParseError(f"bad month {row[0]!r}", i, 1) from None
        try:
            values.append(float(row[1]))
        except ValueError:
            raise ParseError(f"non-numeric value {row[1]!r}", i, 2) from None
        if stamps and stamp <= stamps[-1]:
            raise NonMonotoneTime(f"line {i}: {row[0]} does not follow {stamps[-1]:%Y-%m}")
        stamps.append(stamp)
    return Dataset(name=Path(str(path)).stem, source_path=str(path), content_hash=_hash_bytes(raw),
                   series=np.array(values), timestamps=[f"{s:%Y-%m}" for s in stamps])


def subsample_per_class(ds, per_class, seed=0):
    """Exactly ``per_class`` rows of every class, drawn without replacement; original order kept."""
    if ds.labels is None:
        raise ValueError("dataset has no labels")
    rng = np.random.default_rng(seed)
    keep = []
    for c in np.unique(ds.labels):
        idx = np.flatnonzero(ds.labels == c)
        if idx.size < per_class:
            raise ClassTooSmall(f"class {c} has {idx.size} rows, need {per_class}")
        keep.append(rng.choice(idx, size=per_class, replace=False))
    keep = np.sort(np.concatenate(keep))
    return Dataset(name=f"{ds.name}-sub{per_class}", source_path=ds.source_path, content_hash=ds.content_hash,
                   features=ds.features[keep], labels=ds.labels[keep])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def write_matrix(path, X, prefix="x", labels=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    header = [f"{prefix}{j}" for j in range(X.shape[1])]
    if labels is None:
        write_csv(path, header, X.tolist())
    else:
        write_csv(path, header + ["label"], [list(r) + [int(l)] for r, l in zip(X.tolist(), labels)])


# -------------------------------------------------------------------- config

DEFAULTS = {
    "dataset.path": "",
    "dataset.label_column": "label",
    "dataset.per_class": "0",
    "kernel.spec": "auto",
    "kernel.ard": "auto",
    "kernel.period": "1.0",
    "scheme": "ut",
    "latent.q": "5",
    "inducing.m": "20",
    "init.latent_var": "0.1",
    "optimizer": "lbfgs",
    "max_iters": "2000",
    "seed": "0",
    "horizon": "0",
    "lag": "12",
    "train_split": "48",
    "folds": "5",
    "baseline": "gplvm",
}

_TYPES = {"dataset.per_class": int, "latent.q": int, "inducing.m": int, "max_iters": int, "seed": int,
          "horizon": int, "lag": int, "train_split": int, "folds": int,
          "init.latent_var": float, "kernel.period": float}


def _coerce(key, text):
    if key == "kernel.ard":
        low = text.strip().lower()
        if low == "auto":
            return None
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"{key}: expected a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    if key == "baseline" and text.strip() not in ("gplvm", "pca", "narx"):
        raise ConfigError(f"baseline must be gplvm, pca or narx, got {text!r}")
    typ = _TYPES.get(key, str)
    try:
        return typ(text.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot read {text!r} as {typ.__name__}") from None


def parse_config_text(text):
    """Flat ``key = value`` lines; ``#`` starts a comment. Unknown keys are rejected."""
    out = {}
    for i, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {i}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {i}: unknown key {key!r}")
        out[key] = value
    return out


def build_config(path=None, overrides=(), **extra):
    """Defaults, then the config file, then ``key=value`` overrides, then keyword extras; typed values."""
    raw = dict(DEFAULTS)
    if path is not None:
        try:
            raw.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = value
    for key, value in extra.items():
        key = key.replace("__", ".")
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        raw[key] = str(value)
    return {k: _coerce(k, v) for k, v in raw.items()}


# ------------------------------------------------------------------ manifests

def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_json_default)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    scheme: str
    dataset_hash: str
    metrics: dict = field(default_factory=dict)
    wall_time: float = 0.0
    started: str = ""
    finished: str = ""
    status: str = "ok"
    code_version: str = __version__

    def input_hash(self):
        """Hash of everything that determines the result (not timings)."""
        return _hash_bytes(_canonical({"command": self.command, "config": self.config, "seed": self.seed,
                                       "scheme": self.scheme, "dataset": self.dataset_hash,
                                       "version": self.code_version}).encode())

    def result_hash(self):
        return _hash_bytes(_canonical(self.metrics).encode())

    def to_json(self):
        doc = {"command": self.command, "config": self.config, "seed": self.seed, "scheme": self.scheme,
               "dataset_hash": self.dataset_hash, "code_version": self.code_version, "metrics": self.metrics,
               "wall_time": self.wall_time, "started": self.started, "finished": self.finished,
               "status": self.status, "input_hash": self.input_hash(), "result_hash": self.result_hash(),
               "platform": platform.platform()}
        return json.dumps(doc, indent=2, sort_keys=True, default=_json_default)

    def write(self, run_dir):
        Path(run_dir, "manifest.json").write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path):
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(command=doc["command"], config=doc["config"], seed=doc["seed"], scheme=doc["scheme"],
                   dataset_hash=doc["dataset_hash"], metrics=doc["metrics"], wall_time=doc["wall_time"],
                   started=doc["started"], finished=doc["finished"], status=doc["status"],
                   code_version=doc["code_version"])


def now_stamp():
    return _dt.datetime.now().strftime("%Y%m%dT%H%M%S%f")


def make_run_dir(root, tag):
    """``root/<timestamp>-<tag>``, created fresh (a counter suffix avoids collisions)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    base = f"{now_stamp()}-{tag}"
    path, k = root / base, 1
    while path.exists():
        path, k = root / f"{base}-{k}", k + 1
    path.mkdir()
    return path


def write_metrics(path, metrics):
    """metrics.csv as ``name,value`` rows sorted by name, values via repr."""
    write_csv(path, ["name", "value"], [(k, metrics[k]) for k in sorted(metrics)])


# -------------------------------------------------------------- model files

def model_to_dict(model):
    from . import kernels as kern

    return {"kernel": kern.to_dict(model.kernel), "means": model.means.tolist(),
            "variances": model.variances.tolist(), "inducing": model.inducing.tolist(),
            "noise_var": model.noise_var, "Y": model.Y.tolist(), "scheme": model.scheme.tag,
            "jitter": model.jitter, "fixed": sorted(model.fixed)}


def model_from_dict(d):
    from . import kernels as kern
    from .gplvm import GplvmModel

    return GplvmModel(kernel=kern.from_dict(d["kernel"]), means=np.array(d["means"]),
                      variances=np.array(d["variances"]), inducing=np.array(d["inducing"]),
                      noise_var=d["noise_var"], Y=np.array(d["Y"]), scheme=d["scheme"], jitter=d["jitter"],
                      fixed=frozenset(d["fixed"]))


def save_model(path, model):
    doc = model_to_dict(model)
    doc["content_hash"] = _hash_bytes(_canonical(doc).encode())
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")
    return doc["content_hash"]


def load_model(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    stored = doc.pop("content_hash", None)
    if stored is not None and stored != _hash_bytes(_canonical(doc).encode()):
        raise ParseError("model file content hash mismatch", 1, 1)
    return model_from_dict(doc)
