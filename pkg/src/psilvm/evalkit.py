"""Metrics and protocol helpers for the experiments."""
import math
import statistics
import time
from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np
from sklearn.model_selection import StratifiedKFold
from sklearn.neighbors import KNeighborsClassifier

from . import kernels as kern
from .errors import (DegenerateData, LengthMismatch, NoArdKernel, NonPositiveVariance, OrderTooLarge,
                     TooFewSamples)
from .expectation import GH_CAP, eval_budget, parse_scheme
from .psi import psi_quadrature_jnp


@dataclass(frozen=True)
class MetricReport:
    name: str
    value: float
    dispersion: float
    n_units: int

    def __str__(self):
        return f"{self.name}: {self.value:.4f} +/- {self.dispersion:.4f} (n={self.n_units})"


@dataclass(frozen=True)
class BenchRow:
    scheme: str
    dim: int
    eval_count: int
    wall_time: float
    relative_time: float
    capped: bool = False


def pca_project(Y, q):
    """Project centred data onto its top-q principal axes.

    Returns ``(scores, components)`` with components of shape (q, D_y). Each
    component's sign is fixed so its largest-magnitude loading is positive.
    """
    Y = np.asarray(Y, dtype=float)
    n, d = Y.shape
    if q > min(n, d):
        raise ValueError(f"q={q} exceeds min(N, D)={min(n, d)}")
    centred = Y - Y.mean(axis=0)
    if not np.any(centred):
        raise DegenerateData("data have zero variance")
    _, s, vt = np.linalg.svd(centred, full_matrices=False)
    comps = vt[:q]
    flip = np.sign(comps[np.arange(q), np.argmax(np.abs(comps), axis=1)])
    comps = comps * flip[:, None]
    return centred @ comps.T, comps


def select_ard_dims(kernel, k):
    """Indices of the k most relevant input dimensions (largest inverse lengthscale).

    Ties go to the lower index. Sum kernels rank by their RBF part.
    """
    ls = kern.ard_lengthscales(kernel)
    if ls is None:
        raise NoArdKernel(f"{kernel.describe()} has no per-dimension lengthscales")
    if k > ls.size:
        raise ValueError(f"cannot select {k} of {ls.size} dimensions")
    order = sorted(range(ls.size), key=lambda i: (-1.0 / ls[i], i))
    return order[:k]


def knn_cv_accuracy(X, labels, folds=5, k=1, seed=0):
    """Stratified k-fold accuracy of a Euclidean k-NN classifier (mean and std over folds)."""
    X = np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    if X.shape[0] < folds:
        raise TooFewSamples(f"{X.shape[0]} samples for {folds} folds")
    if np.unique(labels).size < 2:
        raise ValueError("need at least two classes")
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed)
    scores = []
    for train, test in splitter.split(X, labels):
        clf = KNeighborsClassifier(n_neighbors=k, metric="euclidean", algorithm="brute")
        clf.fit(X[train], labels[train])
        scores.append(float(np.mean(clf.predict(X[test]) == labels[test])))
    return MetricReport(f"{k}-NN accuracy", float(np.mean(scores)), float(np.std(scores)), folds)


def rmse(y, mu):
    y, mu = np.asarray(y, dtype=float), np.asarray(mu, dtype=float)
    if y.shape != mu.shape:
        raise LengthMismatch(f"{y.shape} vs {mu.shape}")
    if y.size == 0:
        raise ValueError("empty input")
    return float(np.sqrt(np.mean((y - mu) ** 2)))


def nlpd(y, mu, var):
    """Average negative log predictive density under independent Gaussians."""
    y, mu, var = (np.asarray(a, dtype=float) for a in (y, mu, var))
    if not (y.shape == mu.shape == var.shape):
        raise LengthMismatch(f"{y.shape}, {mu.shape}, {var.shape}")
    if np.any(var <= 0):
        raise NonPositiveVariance("predictive variances must be positive")
    return float(0.5 * math.log(2 * math.pi) + 0.5 * np.mean(np.log(var) + (y - mu) ** 2 / var))


# ------------------------------------------------------------------ benchmark

def _bench_fn(template, scheme, with_psi2):
    @jax.jit
    def run(kernel_theta, means, variances, Z):
        kernel = kern.unpack(template, kernel_theta)
        psi0, psi1, psi2 = psi_quadrature_jnp(kernel, means, variances, Z, scheme, with_psi2=with_psi2)
        return psi1 if psi2 is None else (psi1, psi2)
    return run


def bench_psi(dims, schemes, n=40, m=20, repeats=5, seed=0, with_psi2=False, cap=GH_CAP):
    """Time RBF psi-statistics on random data for each (scheme, D).

    Each timing is the median over ``repeats`` calls of a compiled kernel
    (compilation excluded). GH rows over the evaluation cap are reported as
    capped with NaN timings.
    """
    schemes = [parse_scheme(s) for s in schemes]
    rows = []
    for dim in dims:
        rng = np.random.default_rng(seed + dim)
        means = jnp.asarray(rng.normal(size=(n, dim)))
        variances = jnp.asarray(rng.uniform(0.05, 0.5, size=(n, dim)))
        Z = jnp.asarray(rng.normal(size=(m, dim)))
        template = kern.rbf(dim)
        theta = jnp.asarray(kern.pack(template))
        times = {}
        for sch in schemes:
            count = eval_budget(sch, dim)
            if sch.kind == "gh" and count > cap:
                times[sch.tag] = (count, float("nan"), True)
                continue
            fn = _bench_fn(template, sch, with_psi2)
            jax.block_until_ready(fn(theta, means, variances, Z))
            samples = []
            for _ in range(repeats):
                t = time.perf_counter()
                jax.block_until_ready(fn(theta, means, variances, Z))
                samples.append(time.perf_counter() - t)
            times[sch.tag] = (count, statistics.median(samples), False)
        ut_time = times.get("ut", (0, float("nan"), False))[1]
        for sch in schemes:
            count, wall, capped = times[sch.tag]
            rows.append(BenchRow(sch.tag, dim, count, wall, wall / ut_time if ut_time > 0 else float("nan"),
                                 capped))
    return rows


BENCH_HEADER = "scheme,D,eval_count,wall_time,relative_time,capped"


def bench_csv_lines(rows):
    yield BENCH_HEADER
    for r in rows:
        yield f"{r.scheme},{r.dim},{r.eval_count},{r.wall_time!r},{r.relative_time!r},{int(r.capped)}"


def check_gh_cap(scheme, dim, cap=GH_CAP):
    scheme = parse_scheme(scheme)
    if scheme.kind == "gh" and scheme.order**dim > cap:
        raise OrderTooLarge(scheme.order, dim, cap)
