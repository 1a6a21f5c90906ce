"""Covariance functions with a packed, unconstrained hyperparameter vector.

Kernels are immutable :class:`KernelSpec` trees. All evaluation goes through
``jax.numpy`` so the same code serves plain evaluation and differentiation of
the variational bound. Positive hyperparameters are stored on their natural
scale and packed as logs; MLP weights are packed raw.
"""
import re
from dataclasses import dataclass, field, replace

import jax.numpy as jnp
import numpy as np

from .errors import DimensionMismatch

KINDS = ("rbf_ard", "linear", "matern32", "periodic", "mlp_rbf", "sum")
STATIONARY = ("rbf_ard", "matern32", "periodic", "mlp_rbf")
POSITIVE = ("variance", "lengthscale", "period")

_ALIASES = {"rbf": "rbf_ard", "rbf_ard": "rbf_ard", "se": "rbf_ard", "linear": "linear",
            "lin": "linear", "matern32": "matern32", "periodic": "periodic", "per": "periodic",
            "mlp_rbf": "mlp_rbf", "mlp": "mlp_rbf"}


@dataclass(frozen=True, eq=False)
class KernelSpec:
    kind: str
    input_dim: int
    params: dict = field(default_factory=dict)
    children: tuple = ()
    layers: tuple = ()
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "sum":
            if len(self.children) < 2:
                raise ValueError("sum kernel needs at least two children")
            if any(c.input_dim != self.input_dim for c in self.children):
                raise DimensionMismatch("sum children disagree on input dimension")
        if self.kind == "mlp_rbf":
            if len(self.layers) < 2 or self.layers[0] != self.input_dim:
                raise ValueError(f"mlp layers {self.layers} inconsistent with input_dim {self.input_dim}")

    def param_names(self):
        """Deterministic packing order of this node's own parameters."""
        if self.kind == "sum":
            return ()
        names = ["variance"]
        if self.kind in ("rbf_ard", "matern32", "periodic", "mlp_rbf"):
            names.append("lengthscale")
        if self.kind == "periodic":
            names.append("period")
        if self.kind == "mlp_rbf":
            for i in range(len(self.layers) - 1):
                names += [f"W{i}", f"b{i}"]
        return tuple(names)

    @property
    def is_stationary(self):
        if self.kind == "sum":
            return all(c.is_stationary for c in self.children)
        return self.kind in STATIONARY

    def describe(self):
        if self.kind == "sum":
            return "+".join(c.describe() for c in self.children)
        if self.kind == "mlp_rbf":
            return "mlp_rbf(" + ",".join(str(n) for n in self.layers[1:]) + ")"
        return self.kind

    def __repr__(self):
        return f"KernelSpec({self.describe()}, input_dim={self.input_dim})"


# --------------------------------------------------------------------- builders

def _lengthscale(value, dim, ard):
    value = np.asarray(value, dtype=float)
    if value.ndim == 0:
        return np.full(dim if ard else 1, float(value))
    if value.shape != (dim,):
        raise DimensionMismatch(f"lengthscale shape {value.shape} != ({dim},)")
    return value.copy()


def rbf(input_dim, variance=1.0, lengthscale=1.0, ard=True):
    return KernelSpec("rbf_ard", input_dim,
                      {"variance": np.float64(variance), "lengthscale": _lengthscale(lengthscale, input_dim, ard)})


def matern32(input_dim, variance=1.0, lengthscale=1.0, ard=True):
    return KernelSpec("matern32", input_dim,
                      {"variance": np.float64(variance), "lengthscale": _lengthscale(lengthscale, input_dim, ard)})


def periodic(input_dim, variance=1.0, lengthscale=1.0, period=12.0, ard=True):
    return KernelSpec("periodic", input_dim,
                      {"variance": np.float64(variance), "lengthscale": _lengthscale(lengthscale, input_dim, ard),
                       "period": np.float64(period)})


def linear(input_dim, variance=1.0):
    return KernelSpec("linear", input_dim, {"variance": np.float64(variance)})


def mlp_rbf(input_dim, hidden=(30,), output=60, variance=1.0, lengthscale=1.0, seed=0,
            activation="tanh", ard=True):
    """RBF kernel evaluated on a feed-forward warping of the inputs.

    Weights are drawn N(0, 1/fan_in) from ``seed``; biases start at zero.
    """
    layers = (input_dim, *tuple(hidden), output)
    rng = np.random.default_rng(seed)
    params = {"variance": np.float64(variance), "lengthscale": _lengthscale(lengthscale, output, ard)}
    for i, (fan_in, fan_out) in enumerate(zip(layers[:-1], layers[1:])):
        params[f"W{i}"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
        params[f"b{i}"] = np.zeros(fan_out)
    return KernelSpec("mlp_rbf", input_dim, params, layers=layers, activation=activation)


def sum_kernel(*children):
    return KernelSpec("sum", children[0].input_dim, children=tuple(children))


def parse_kernel(text, input_dim, ard=True, seed=0, period=12.0):
    """Build a kernel from a string such as ``"periodic+rbf+linear"`` or ``"mlp_rbf(30,60)"``.

    Hyperparameters start at the package defaults (unit variance and
    lengthscales, period 12).
    """
    parts = [p.strip() for p in text.replace(" ", "").split("+") if p.strip()]
    if not parts:
        raise ValueError("empty kernel spec")
    built = []
    for i, part in enumerate(parts):
        m = re.fullmatch(r"([a-z_0-9]+)(?:\(([0-9,]*)\))?", part.lower())
        if not m or m.group(1) not in _ALIASES:
            raise ValueError(f"unknown kernel term {part!r}")
        kind = _ALIASES[m.group(1)]
        args = [int(a) for a in m.group(2).split(",") if a] if m.group(2) else []
        if kind == "rbf_ard":
            built.append(rbf(input_dim, ard=ard))
        elif kind == "matern32":
            built.append(matern32(input_dim, ard=ard))
        elif kind == "periodic":
            built.append(periodic(input_dim, period=period, ard=ard))
        elif kind == "linear":
            built.append(linear(input_dim))
        else:
            sizes = args or [30, 60]
            built.append(mlp_rbf(input_dim, hidden=tuple(sizes[:-1]), output=sizes[-1], seed=seed + i, ard=ard))
    return built[0] if len(built) == 1 else sum_kernel(*built)


def with_params(spec, **updates):
    """Copy of a leaf kernel with some hyperparameters replaced."""
    params = dict(spec.params)
    for k, v in updates.items():
        if k not in params:
            raise KeyError(k)
        params[k] = np.asarray(v, dtype=float) if np.ndim(v) else np.float64(v)
    return replace(spec, params=params)


def leaves(spec):
    if spec.kind == "sum":
        out = []
        for c in spec.children:
            out.extend(leaves(c))
        return out
    return [spec]


# ------------------------------------------------------------- packing

def n_params(spec):
    if spec.kind == "sum":
        return sum(n_params(c) for c in spec.children)
    return int(sum(np.size(spec.params[n]) for n in spec.param_names()))


def pack(spec):
    """Unconstrained parameter vector (logs of positive entries, raw MLP weights)."""
    if spec.kind == "sum":
        return np.concatenate([pack(c) for c in spec.children])
    chunks = []
    for name in spec.param_names():
        value = np.ravel(np.asarray(spec.params[name], dtype=float))
        chunks.append(np.log(value) if name in POSITIVE else value)
    return np.concatenate(chunks) if chunks else np.zeros(0)


def unpack(spec, theta, offset=0):
    """Inverse of :func:`pack`; ``theta`` may be a traced JAX array."""
    out, _ = _unpack(spec, theta, offset)
    return out


def _unpack(spec, theta, offset):
    if spec.kind == "sum":
        kids = []
        for c in spec.children:
            k, offset = _unpack(c, theta, offset)
            kids.append(k)
        return replace(spec, children=tuple(kids)), offset
    params = {}
    for name in spec.param_names():
        shape = np.shape(spec.params[name])
        size = int(np.prod(shape)) if shape else 1
        chunk = theta[offset:offset + size]
        offset += size
        value = jnp.exp(chunk) if name in POSITIVE else chunk
        params[name] = value.reshape(shape) if shape else value.reshape(())
    return replace(spec, params=params), offset


def to_numpy(spec):
    """Materialise (possibly JAX-valued) parameters as numpy arrays."""
    if spec.kind == "sum":
        return replace(spec, children=tuple(to_numpy(c) for c in spec.children))
    return replace(spec, params={k: np.asarray(v, dtype=float) for k, v in spec.params.items()})


def to_dict(spec):
    d = {"kind": spec.kind, "input_dim": spec.input_dim}
    if spec.kind == "sum":
        d["children"] = [to_dict(c) for c in spec.children]
        return d
    d["params"] = {k: np.asarray(v, dtype=float).tolist() for k, v in spec.params.items()}
    if spec.kind == "mlp_rbf":
        d["layers"] = list(spec.layers)
        d["activation"] = spec.activation
    return d


def from_dict(d):
    if d["kind"] == "sum":
        return KernelSpec("sum", int(d["input_dim"]), children=tuple(from_dict(c) for c in d["children"]))
    params = {k: (np.asarray(v, dtype=float) if isinstance(v, list) else np.float64(v))
              for k, v in d["params"].items()}
    return KernelSpec(d["kind"], int(d["input_dim"]), params, layers=tuple(d.get("layers", ())),
                      activation=d.get("activation", "tanh"))


# ------------------------------------------------------------- evaluation

def _check_dim(spec, X):
    if X.shape[-1] != spec.input_dim:
        raise DimensionMismatch(f"input has {X.shape[-1]} columns, kernel expects {spec.input_dim}")


def _scaled_sqdist(A, B, same):
    a2 = jnp.sum(A * A, axis=-1)
    b2 = jnp.sum(B * B, axis=-1)
    r2 = jnp.maximum(a2[:, None] + b2[None, :] - 2.0 * A @ B.T, 0.0)
    if same:
        r2 = jnp.where(jnp.eye(A.shape[0], dtype=bool), 0.0, r2)
    return r2


def _activation(name):
    if name == "tanh":
        return jnp.tanh
    if name == "relu":
        return lambda a: jnp.maximum(a, 0.0)
    if name == "sigmoid":
        return lambda a: 1.0 / (1.0 + jnp.exp(-a))
    raise ValueError(f"unknown activation {name!r}")


def _mlp(spec, X):
    act = _activation(spec.activation)
    h = X
    n_layers = len(spec.layers) - 1
    for i in range(n_layers):
        h = h @ spec.params[f"W{i}"] + spec.params[f"b{i}"]
        if i < n_layers - 1:
            h = act(h)
    return h


def gram_jnp(spec, X, X2=None):
    """Kernel matrix between the rows of X and X2 (X2=None means X with itself)."""
    same = X2 is None
    if same:
        X2 = X
    if spec.kind == "sum":
        out = gram_jnp(spec.children[0], X, None if same else X2)
        for c in spec.children[1:]:
            out = out + gram_jnp(c, X, None if same else X2)
        return out
    var = spec.params["variance"]
    if spec.kind == "linear":
        return var * (X @ X2.T)
    if spec.kind == "periodic":
        ls, per = spec.params["lengthscale"], spec.params["period"]
        # sin^2(pi d / p) = (1 - cos(2 pi a/p) cos(2 pi b/p) - sin(2 pi a/p) sin(2 pi b/p)) / 2
        w = 1.0 / ls**2
        if w.shape[0] == 1:
            w = jnp.broadcast_to(w, (X.shape[1],))
        ca, sa = jnp.cos(2 * jnp.pi * X / per), jnp.sin(2 * jnp.pi * X / per)
        cb, sb = jnp.cos(2 * jnp.pi * X2 / per), jnp.sin(2 * jnp.pi * X2 / per)
        s = 0.5 * (jnp.sum(w) - (ca * w) @ cb.T - (sa * w) @ sb.T)
        s = jnp.maximum(s, 0.0)
        if same:
            s = jnp.where(jnp.eye(X.shape[0], dtype=bool), 0.0, s)
        return var * jnp.exp(-2.0 * s)
    if spec.kind == "mlp_rbf":
        X, X2 = _mlp(spec, X), _mlp(spec, X2)
    ls = spec.params["lengthscale"]
    r2 = _scaled_sqdist(X / ls, X2 / ls, same)
    if spec.kind in ("rbf_ard", "mlp_rbf"):
        return var * jnp.exp(-0.5 * r2)
    # matern32; the double where keeps gradients finite at zero distance
    pos = r2 > 0
    r = jnp.where(pos, jnp.sqrt(jnp.where(pos, r2, 1.0)), 0.0)
    a = jnp.sqrt(3.0) * r
    return var * (1.0 + a) * jnp.exp(-a)


def kdiag_jnp(spec, X):
    """k(x, x) for each row of X."""
    if spec.kind == "sum":
        out = kdiag_jnp(spec.children[0], X)
        for c in spec.children[1:]:
            out = out + kdiag_jnp(c, X)
        return out
    var = spec.params["variance"]
    if spec.kind == "linear":
        return var * jnp.sum(X * X, axis=-1)
    return var * jnp.ones(X.shape[:-1])


def gram(spec, X, X2=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _check_dim(spec, X)
    if X2 is not None:
        X2 = np.atleast_2d(np.asarray(X2, dtype=float))
        _check_dim(spec, X2)
    return np.asarray(gram_jnp(spec, X, X2))


def kdiag(spec, X):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _check_dim(spec, X)
    return np.asarray(kdiag_jnp(spec, X))


def kernel_eval(spec, x, x2):
    """Single kernel value k(x, x2)."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    x2 = np.asarray(x2, dtype=float).reshape(1, -1)
    _check_dim(spec, x)
    _check_dim(spec, x2)
    return float(np.asarray(gram_jnp(spec, x, x2))[0, 0])


def mlp_forward(spec, x):
    """Apply the warping network of an ``mlp_rbf`` kernel to a vector or a batch of rows."""
    if spec.kind != "mlp_rbf":
        raise ValueError("mlp_forward needs an mlp_rbf kernel")
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.layers[0]:
        raise DimensionMismatch(f"input width {x.shape[-1]} != {spec.layers[0]}")
    return np.asarray(_mlp(spec, x))


def ard_lengthscales(spec):
    """Per-dimension lengthscales used for relevance ranking, or None.

    For sums the first RBF child wins, falling back to the first child
    carrying an ARD lengthscale vector.
    """
    cands = leaves(spec)
    ordered = [c for c in cands if c.kind == "rbf_ard"] + [c for c in cands if c.kind in ("matern32", "periodic")]
    for c in ordered:
        ls = np.asarray(c.params["lengthscale"], dtype=float)
        if ls.shape == (spec.input_dim,):
            return ls
    return None
