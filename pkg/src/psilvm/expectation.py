"""Weighted point sets for Gaussian expectations.

Three families are provided:

* ``ut``      2D symmetric sigma points mu +/- columns of Chol(D * Sigma), uniform weights
* ``gh:H``    tensor-product Gauss-Hermite grid, H**D points
* ``mc:P:s``  P reparameterised Monte Carlo draws keyed by (seed, index)

Batch generators (``point_batch``) work on stacks of diagonal Gaussians and are
written in ``jax.numpy`` so that point locations stay differentiable in the
means and variances.
"""
import functools
import itertools
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

from .errors import NotPositiveDefinite, OrderTooLarge
from .gauss import DiagGaussian, FullGaussian, cholesky

GH_CAP = 2**20


@dataclass(frozen=True)
class Scheme:
    kind: str
    order: int = 0
    samples: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("ut", "gh", "mc", "analytic"):
            raise ValueError(f"unknown scheme {self.kind!r}")
        if self.kind == "gh" and self.order < 1:
            raise ValueError("gh order must be >= 1")
        if self.kind == "mc" and self.samples < 1:
            raise ValueError("mc needs at least one sample")

    @property
    def deterministic(self):
        return self.kind != "mc"

    @property
    def tag(self):
        if self.kind == "gh":
            return f"gh:{self.order}"
        if self.kind == "mc":
            return f"mc:{self.samples}:{self.seed}"
        return self.kind

    def __str__(self):
        return self.tag


def parse_scheme(text):
    """Parse ``ut``, ``gh:H``, ``mc:P[:seed]`` or ``analytic``."""
    if isinstance(text, Scheme):
        return text
    parts = str(text).strip().lower().split(":")
    try:
        if parts[0] in ("ut", "analytic") and len(parts) == 1:
            return Scheme(parts[0])
        if parts[0] == "gh" and len(parts) == 2:
            return Scheme("gh", order=int(parts[1]))
        if parts[0] == "mc" and len(parts) in (2, 3):
            return Scheme("mc", samples=int(parts[1]), seed=int(parts[2]) if len(parts) == 3 else 0)
    except ValueError:
        pass
    raise ValueError(f"bad scheme string {text!r}; expected ut, gh:H, mc:P:seed or analytic")


def eval_budget(scheme, dim):
    """Number of integrand evaluations one expectation costs in ``dim`` dimensions."""
    scheme = parse_scheme(scheme)
    if dim < 1:
        raise ValueError("dimension must be >= 1")
    if scheme.kind == "ut":
        return 2 * dim
    if scheme.kind == "gh":
        return scheme.order**dim
    if scheme.kind == "mc":
        return scheme.samples
    return 0


@dataclass(frozen=True)
class Gh1d:
    nodes: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class PointSet:
    points: np.ndarray
    weights: np.ndarray
    scheme: Scheme

    @property
    def eval_count(self):
        return self.points.shape[0]


# ----------------------------------------------------------------- Gauss-Hermite

def _orthonormal_hermite(x, n):
    """Values of the first n+1 orthonormal probabilists' Hermite polynomials at x."""
    p = np.zeros((n + 1,) + np.shape(x))
    p[0] = 1.0
    if n >= 1:
        p[1] = x
    for k in range(1, n):
        p[k + 1] = (x * p[k] - np.sqrt(k) * p[k - 1]) / np.sqrt(k + 1)
    return p


@functools.lru_cache(maxsize=None)
def gh_1d(order):
    """Gauss-Hermite rule for the standard normal weight (weights sum to one).

    Nodes come from the eigenvalues of the Jacobi matrix of the Hermite
    recurrence, refined by Newton steps; weights are Christoffel numbers.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    off = np.sqrt(np.arange(1, order, dtype=float))
    jacobi = np.diag(off, 1) + np.diag(off, -1)
    x = np.linalg.eigvalsh(jacobi)
    for _ in range(3):
        p = _orthonormal_hermite(x, order)
        dp = np.sqrt(order) * p[order - 1]
        step = np.where(dp != 0, p[order] / np.where(dp != 0, dp, 1.0), 0.0)
        x = x - step
    x = 0.5 * (x - x[::-1])
    p = _orthonormal_hermite(x, order - 1)
    w = 1.0 / np.sum(p**2, axis=0)
    w = 0.5 * (w + w[::-1])
    w = w / w.sum()
    x.setflags(write=False)
    w.setflags(write=False)
    return Gh1d(x, w)


@functools.lru_cache(maxsize=64)
def _gh_grid(order, dim):
    rule = gh_1d(order)
    nodes = np.array(list(itertools.product(rule.nodes, repeat=dim)), dtype=float).reshape(-1, dim)
    weights = np.prod(np.array(list(itertools.product(rule.weights, repeat=dim))).reshape(-1, dim), axis=1)
    weights = weights / weights.sum()
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def _check_cap(order, dim, cap):
    if order**dim > cap:
        raise OrderTooLarge(order, dim, cap)


# ------------------------------------------------------------------ MC draws

def mc_normals(seed, n_dist, samples, dim, stream=0):
    """Standard normal draws of shape (n_dist, samples, dim).

    Draw (i, k) depends only on (seed, stream, i, k) through threefry key
    folding, so results do not depend on evaluation order.
    """
    base = jax.random.fold_in(jax.random.PRNGKey(seed), stream)

    def one(i, k):
        key = jax.random.fold_in(jax.random.fold_in(base, i), k)
        return jax.random.normal(key, (dim,), dtype=jnp.float64)

    ii = jnp.arange(n_dist)
    kk = jnp.arange(samples)
    return jax.vmap(lambda i: jax.vmap(lambda k: one(i, k))(kk))(ii)


# --------------------------------------------------------------- batch points

def point_batch(scheme, means, variances, stream=0, cap=GH_CAP, seed=None):
    """Evaluation points for a stack of diagonal Gaussians.

    Returns ``(points, weights)`` with points of shape (N, P, D) and a length-P
    weight vector shared by every distribution. ``seed`` (possibly traced)
    overrides the Monte Carlo seed of ``scheme``.
    """
    scheme = parse_scheme(scheme)
    n, dim = means.shape
    if scheme.kind == "ut":
        sd = jnp.sqrt(dim * variances)
        offsets = sd[:, None, :] * jnp.eye(dim)[None, :, :]
        pts = jnp.concatenate([means[:, None, :] + offsets, means[:, None, :] - offsets], axis=1)
        return pts, jnp.full(2 * dim, 1.0 / (2 * dim))
    if scheme.kind == "gh":
        _check_cap(scheme.order, dim, cap)
        nodes, weights = _gh_grid(scheme.order, dim)
        pts = means[:, None, :] + jnp.sqrt(variances)[:, None, :] * nodes[None, :, :]
        return pts, jnp.asarray(weights)
    if scheme.kind == "mc":
        eps = mc_normals(scheme.seed if seed is None else seed, n, scheme.samples, dim, stream)
        pts = means[:, None, :] + jnp.sqrt(variances)[:, None, :] * eps
        return pts, jnp.full(scheme.samples, 1.0 / scheme.samples)
    raise ValueError("the analytic scheme has no point set")


# ------------------------------------------------------------ single Gaussians

def ut_points(q):
    """Sigma points mu +/- [Chol(D Sigma)]_{:,i}, i = 1..D, each with weight 1/(2D)."""
    if isinstance(q, DiagGaussian):
        pts, w = point_batch(Scheme("ut"), jnp.asarray(q.mean[None]), jnp.asarray(q.var[None]))
        return PointSet(np.asarray(pts[0]), np.asarray(w), Scheme("ut"))
    if isinstance(q, FullGaussian):
        dim = q.dim
        cols = cholesky(dim * q.cov).lower.T  # row i = column i of the factor
        pts = np.concatenate([q.mean + cols, q.mean - cols])
        return PointSet(pts, np.full(2 * dim, 1.0 / (2 * dim)), Scheme("ut"))
    raise TypeError("expected DiagGaussian or FullGaussian")


def gh_points(q, order, cap=GH_CAP):
    if not isinstance(q, DiagGaussian):
        raise TypeError("gh_points needs a DiagGaussian")
    if np.any(q.var <= 0):
        raise NotPositiveDefinite("variances must be positive")
    scheme = Scheme("gh", order=order)
    pts, w = point_batch(scheme, jnp.asarray(q.mean[None]), jnp.asarray(q.var[None]), cap=cap)
    return PointSet(np.asarray(pts[0]), np.asarray(w), scheme)


def mc_points(q, samples, seed):
    scheme = Scheme("mc", samples=samples, seed=seed)
    pts, w = point_batch(scheme, jnp.asarray(q.mean[None]), jnp.asarray(q.var[None]))
    return PointSet(np.asarray(pts[0]), np.asarray(w), scheme)


def points_for(q, scheme):
    scheme = parse_scheme(scheme)
    if scheme.kind == "ut":
        return ut_points(q)
    if scheme.kind == "gh":
        return gh_points(q, scheme.order)
    if scheme.kind == "mc":
        return mc_points(q, scheme.samples, scheme.seed)
    raise ValueError("the analytic scheme has no point set")


# ---------------------------------------------------------------- expectations

def _evaluate(f, ps, vectorized):
    if vectorized:
        vals = np.asarray(f(ps.points), dtype=float)
        return vals.reshape(ps.eval_count, -1)
    return np.stack([np.atleast_1d(np.asarray(f(p), dtype=float)) for p in ps.points])


def expect(f, ps, vectorized=False):
    """Weighted average sum_k w_k f(s_k); f is called exactly once per point."""
    vals = _evaluate(f, ps, vectorized)
    return ps.weights @ vals


def expect_cov(f, ps, vectorized=False):
    """Weighted covariance of f about its weighted mean."""
    vals = _evaluate(f, ps, vectorized)
    mean = ps.weights @ vals
    centred = vals - mean
    cov = (centred * ps.weights[:, None]).T @ centred
    return 0.5 * (cov + cov.T)
