"""Psi-statistics of a kernel under a factorised Gaussian q(X).

    psi0      = sum_i E_i[k(x_i, x_i)]
    Psi1[i,j] = E_i[k(x_i, z_j)]
    Psi2[j,m] = sum_i E_i[k(x_i, z_j) k(x_i, z_m)]

Quadrature back-ends draw one point set per q(x_i) and reuse it for all three
statistics. Closed forms are available for RBF and linear kernels and their
sums.
"""
from dataclasses import dataclass

import jax.numpy as jnp
import numpy as np

from . import kernels as kern
from .errors import DimensionMismatch, WrongKernelKind
from .expectation import GH_CAP, eval_budget, parse_scheme, point_batch
from .gauss import DiagGaussian


@dataclass(frozen=True)
class LatentBatch:
    """Means and variances of q(x_i), i = 1..N, plus inducing inputs Z (M x D)."""

    means: np.ndarray
    variances: np.ndarray
    inducing: np.ndarray

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        variances = np.broadcast_to(np.asarray(self.variances, dtype=float), means.shape).copy()
        inducing = np.atleast_2d(np.asarray(self.inducing, dtype=float))
        if inducing.shape[1] != means.shape[1]:
            raise DimensionMismatch(f"Z has {inducing.shape[1]} columns, latent means {means.shape[1]}")
        if inducing.shape[0] < 1:
            raise ValueError("need at least one inducing input")
        if np.any(variances <= 0):
            raise ValueError("latent variances must be positive")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "inducing", inducing)

    @classmethod
    def from_gaussians(cls, qs, inducing):
        return cls(np.stack([q.mean for q in qs]), np.stack([q.var for q in qs]), inducing)

    def gaussians(self):
        return [DiagGaussian(m, v) for m, v in zip(self.means, self.variances)]

    @property
    def n(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    @property
    def m(self):
        return self.inducing.shape[0]


@dataclass(frozen=True)
class PsiStats:
    psi0: float
    psi1: np.ndarray
    psi2: np.ndarray
    total_evals: int


# ------------------------------------------------------------------ quadrature

def psi_quadrature_jnp(kernel, means, variances, Z, scheme, stream=0, with_psi2=True, cap=GH_CAP, seed=None):
    """(psi0, Psi1, Psi2) by weighted point sets; Psi2 is None when ``with_psi2`` is False."""
    n, dim = means.shape
    pts, w = point_batch(scheme, means, variances, stream=stream, cap=cap, seed=seed)
    p = w.shape[0]
    flat = pts.reshape(n * p, dim)
    kxz = kern.gram_jnp(kernel, flat, Z)
    wflat = jnp.tile(w, n)
    psi0 = jnp.sum(wflat * kern.kdiag_jnp(kernel, flat))
    psi1 = jnp.einsum("p,npm->nm", w, kxz.reshape(n, p, -1))
    if not with_psi2:
        return psi0, psi1, None
    psi2 = (kxz * wflat[:, None]).T @ kxz
    return psi0, psi1, 0.5 * (psi2 + psi2.T)


def psi_quadrature(kernel, latent, scheme, stream=0, cap=GH_CAP):
    scheme = parse_scheme(scheme)
    if scheme.kind == "analytic":
        raise ValueError("use psi_analytic for the analytic scheme")
    _check(kernel, latent)
    psi0, psi1, psi2 = psi_quadrature_jnp(kernel, jnp.asarray(latent.means), jnp.asarray(latent.variances),
                                          jnp.asarray(latent.inducing), scheme, stream=stream, cap=cap)
    return PsiStats(float(psi0), np.asarray(psi1), np.asarray(psi2),
                    latent.n * eval_budget(scheme, latent.dim))


# -------------------------------------------------------------------- analytic

def _gauss_product_expectation(mu, s2, a, A, b, B):
    """E_{x~N(mu,s2)}[exp(-(x-a)^2/2A - (x-b)^2/2B)] per dimension, as a log."""
    C = A * B / (A + B)
    c = (a * B + b * A) / (A + B)
    return (-0.5 * (a - b) ** 2 / (A + B) + 0.5 * jnp.log(C / (C + s2))
            - 0.5 * (mu - c) ** 2 / (C + s2))


def _rbf_psi1(k, mu, s2, Z):
    l2 = k.params["lengthscale"] ** 2
    l2 = jnp.broadcast_to(l2, (mu.shape[1],))
    denom = l2[None, None, :] + s2[:, None, :]
    log = -0.5 * jnp.log(denom / l2) - 0.5 * (mu[:, None, :] - Z[None, :, :]) ** 2 / denom
    return k.params["variance"] * jnp.exp(jnp.sum(log, axis=-1))


def _cross_rbf_rbf(ka, kb, mu, s2, Z):
    dim = mu.shape[1]
    A = jnp.broadcast_to(ka.params["lengthscale"] ** 2, (dim,))
    B = jnp.broadcast_to(kb.params["lengthscale"] ** 2, (dim,))
    log = _gauss_product_expectation(mu[:, None, None, :], s2[:, None, None, :],
                                     Z[None, :, None, :], A, Z[None, None, :, :], B)
    return ka.params["variance"] * kb.params["variance"] * jnp.sum(jnp.exp(jnp.sum(log, axis=-1)), axis=0)


def _cross_rbf_linear(krbf, klin, mu, s2, Z):
    # E[k_rbf(x, z_j) x] = Psi1_ij * m_ij, m_ij = (l^2 mu_i + s_i^2 z_j) / (l^2 + s_i^2)
    l2 = jnp.broadcast_to(krbf.params["lengthscale"] ** 2, (mu.shape[1],))
    p1 = _rbf_psi1(krbf, mu, s2, Z)
    m = (l2 * mu[:, None, :] + s2[:, None, :] * Z[None, :, :]) / (l2 + s2[:, None, :])
    return klin.params["variance"] * jnp.einsum("nj,njq,mq->jm", p1, m, Z)


def _cross_linear_linear(ka, kb, mu, s2, Z):
    second = jnp.einsum("nq,nr->qr", mu, mu) + jnp.diag(jnp.sum(s2, axis=0))
    return ka.params["variance"] * kb.params["variance"] * (Z @ second @ Z.T)


def _analytic_leaves(kernel):
    parts = kern.leaves(kernel)
    bad = [p.kind for p in parts if p.kind not in ("rbf_ard", "linear")]
    if bad:
        raise WrongKernelKind(f"no closed-form psi-statistics for {', '.join(sorted(set(bad)))}")
    return parts


def psi_analytic_jnp(kernel, mu, s2, Z):
    """Closed-form (psi0, Psi1, Psi2) for RBF-ARD, linear, and sums of them."""
    parts = _analytic_leaves(kernel)
    n = mu.shape[0]
    psi0 = 0.0
    psi1 = jnp.zeros((n, Z.shape[0]))
    for p in parts:
        if p.kind == "rbf_ard":
            psi0 = psi0 + n * p.params["variance"]
            psi1 = psi1 + _rbf_psi1(p, mu, s2, Z)
        else:
            psi0 = psi0 + p.params["variance"] * jnp.sum(mu**2 + s2)
            psi1 = psi1 + p.params["variance"] * (mu @ Z.T)
    psi2 = jnp.zeros((Z.shape[0], Z.shape[0]))
    for a, ka in enumerate(parts):
        for b, kb in enumerate(parts):
            if b < a:
                continue
            if ka.kind == "rbf_ard" and kb.kind == "rbf_ard":
                c = _cross_rbf_rbf(ka, kb, mu, s2, Z)
            elif ka.kind == "linear" and kb.kind == "linear":
                c = _cross_linear_linear(ka, kb, mu, s2, Z)
            elif ka.kind == "rbf_ard":
                c = _cross_rbf_linear(ka, kb, mu, s2, Z)
            else:
                c = _cross_rbf_linear(kb, ka, mu, s2, Z).T
            psi2 = psi2 + (c if a == b else c + c.T)
    return psi0, psi1, 0.5 * (psi2 + psi2.T)


def psi_analytic(kernel, latent):
    _check(kernel, latent)
    psi0, psi1, psi2 = psi_analytic_jnp(kernel, jnp.asarray(latent.means), jnp.asarray(latent.variances),
                                        jnp.asarray(latent.inducing))
    return PsiStats(float(psi0), np.asarray(psi1), np.asarray(psi2), 0)


def psi_analytic_rbf(kernel, latent):
    """Closed-form statistics for a single RBF-ARD kernel."""
    if kernel.kind != "rbf_ard":
        raise WrongKernelKind(f"psi_analytic_rbf needs rbf_ard, got {kernel.kind}")
    return psi_analytic(kernel, latent)


def compute_psi_jnp(kernel, means, variances, Z, scheme, stream=0, with_psi2=True, seed=None):
    scheme = parse_scheme(scheme)
    if scheme.kind == "analytic":
        return psi_analytic_jnp(kernel, means, variances, Z)
    return psi_quadrature_jnp(kernel, means, variances, Z, scheme, stream=stream, with_psi2=with_psi2, seed=seed)


def compute_psi(kernel, latent, scheme, stream=0):
    scheme = parse_scheme(scheme)
    if scheme.kind == "analytic":
        return psi_analytic(kernel, latent)
    return psi_quadrature(kernel, latent, scheme, stream=stream)


def _check(kernel, latent):
    if kernel.input_dim != latent.dim:
        raise DimensionMismatch(f"kernel input dim {kernel.input_dim} != latent dim {latent.dim}")


# ---------------------------------------------------------------------- report

@dataclass(frozen=True)
class PsiErrorReport:
    scheme: str
    psi0_err: float
    psi1_err: float
    psi2_err: float
    psi1_rel: float
    psi2_rel: float
    evals: int

    def csv_row(self):
        return f"{self.scheme},{self.psi0_err!r},{self.psi1_err!r},{self.psi2_err!r},{self.evals}"


CSV_HEADER = "scheme,psi0_err,psi1_err,psi2_err,evals"


def _rel(a, b):
    denom = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / denom) if denom > 0 else float(np.linalg.norm(a - b))


def psi_error_report(kernel, latent, scheme, reference):
    """Max-abs errors (and relative Frobenius errors) of one scheme against reference statistics."""
    stats = compute_psi(kernel, latent, scheme)
    if stats.psi1.shape != reference.psi1.shape or stats.psi2.shape != reference.psi2.shape:
        raise DimensionMismatch("reference statistics have different shapes")
    return PsiErrorReport(
        scheme=parse_scheme(scheme).tag,
        psi0_err=abs(stats.psi0 - reference.psi0),
        psi1_err=float(np.max(np.abs(stats.psi1 - reference.psi1))),
        psi2_err=float(np.max(np.abs(stats.psi2 - reference.psi2))),
        psi1_rel=_rel(stats.psi1, reference.psi1),
        psi2_rel=_rel(stats.psi2, reference.psi2),
        evals=stats.total_evals,
    )
