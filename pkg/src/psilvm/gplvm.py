"""Bayesian GPLVM: collapsed variational bound, training and prediction.

With A = Kz + Psi2 / sigma^2 the bound is

    fit   = sum_d log N-normaliser(log|Kz| - log|A|) - 1/2 y_d^T W y_d,
            W = I/sigma^2 - Psi1 A^-1 Psi1^T / sigma^4
    trace = D_y / (2 sigma^2) * (psi0 - tr(Kz^-1 Psi2))
    elbo  = fit - trace - KL(q(X) || N(0, I))

Everything below the public functions is written against ``jax.numpy`` so the
gradient with respect to the packed parameter vector is exact reverse-mode AD.
"""
import logging
import time
from dataclasses import dataclass, field, replace

import jax
import jax.numpy as jnp
import jax.scipy.linalg as jsl
import numpy as np
import scipy.optimize

from . import kernels as kern
from .errors import DimensionMismatch, NotPositiveDefinite, OptimizerDiverged
from .expectation import Scheme, eval_budget, parse_scheme
from .gauss import DiagGaussian
from .psi import LatentBatch, compute_psi_jnp

log = logging.getLogger(__name__)

JITTER = 1e-6
GROUPS = ("kernel", "noise", "means", "variances", "inducing")


@dataclass(frozen=True, eq=False)
class GplvmModel:
    kernel: kern.KernelSpec
    means: np.ndarray
    variances: np.ndarray
    inducing: np.ndarray
    noise_var: float
    Y: np.ndarray
    scheme: Scheme = field(default_factory=lambda: Scheme("ut"))
    jitter: float = JITTER
    fixed: frozenset = frozenset()

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        variances = np.broadcast_to(np.asarray(self.variances, dtype=float), means.shape).copy()
        Z = np.atleast_2d(np.asarray(self.inducing, dtype=float))
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if Y.shape[0] != means.shape[0]:
            raise DimensionMismatch(f"Y has {Y.shape[0]} rows, q(X) has {means.shape[0]}")
        if Z.shape[1] != means.shape[1] or self.kernel.input_dim != means.shape[1]:
            raise DimensionMismatch("latent, inducing and kernel dimensions disagree")
        if not self.noise_var > 0:
            raise ValueError("noise variance must be positive")
        if np.any(variances <= 0):
            raise ValueError("latent variances must be positive")
        if Z.shape[0] > means.shape[0]:
            log.warning("more inducing inputs (%d) than data points (%d)", Z.shape[0], means.shape[0])
        unknown = set(self.fixed) - set(GROUPS)
        if unknown:
            raise ValueError(f"unknown parameter groups {sorted(unknown)}")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "inducing", Z)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "noise_var", float(self.noise_var))
        object.__setattr__(self, "scheme", parse_scheme(self.scheme))
        object.__setattr__(self, "fixed", frozenset(self.fixed))

    @property
    def n(self):
        return self.means.shape[0]

    @property
    def latent_dim(self):
        return self.means.shape[1]

    @property
    def output_dim(self):
        return self.Y.shape[1]

    @property
    def latent(self):
        return LatentBatch(self.means, self.variances, self.inducing)

    # packing order: kernel, log noise, means, log variances, Z
    def pack(self):
        return np.concatenate([kern.pack(self.kernel), [np.log(self.noise_var)], self.means.ravel(),
                               np.log(self.variances).ravel(), self.inducing.ravel()])

    def unpack(self, theta):
        k, noise, mu, s2, Z = _split(self, np.asarray(theta, dtype=float), np)
        return replace(self, kernel=kern.to_numpy(k), noise_var=float(noise), means=np.asarray(mu),
                       variances=np.asarray(s2), inducing=np.asarray(Z))

    def group_slices(self):
        nk = kern.n_params(self.kernel)
        nq = self.means.size
        sizes = {"kernel": nk, "noise": 1, "means": nq, "variances": nq, "inducing": self.inducing.size}
        out, start = {}, 0
        for g in GROUPS:
            out[g] = slice(start, start + sizes[g])
            start += sizes[g]
        return out

    def free_mask(self):
        mask = np.ones(self.pack().size, dtype=bool)
        for g, sl in self.group_slices().items():
            if g in self.fixed:
                mask[sl] = False
        return mask


@dataclass(frozen=True)
class ElboParts:
    fit_term: float
    trace_term: float
    kl_term: float

    @property
    def elbo(self):
        return self.fit_term - self.trace_term - self.kl_term


@dataclass(frozen=True)
class PredictiveDist:
    mean: np.ndarray
    var: np.ndarray


def _split(model, theta, xp):
    nk = kern.n_params(model.kernel)
    n, q = model.means.shape
    m = model.inducing.shape[0]
    kernel = kern.unpack(model.kernel, theta[:nk]) if xp is jnp else kern.to_numpy(kern.unpack(model.kernel, theta[:nk]))
    o = nk
    noise = xp.exp(theta[o])
    o += 1
    mu = theta[o:o + n * q].reshape(n, q)
    o += n * q
    s2 = xp.exp(theta[o:o + n * q]).reshape(n, q)
    o += n * q
    Z = theta[o:o + m * q].reshape(m, q)
    return kernel, noise, mu, s2, Z


# ------------------------------------------------------------------ the bound

def _kz(kernel, Z, jitter):
    Kz = kern.gram_jnp(kernel, Z)
    return Kz + jitter * jnp.mean(jnp.diag(Kz)) * jnp.eye(Z.shape[0])


def _terms(model, theta, Y, stream, jitter, seed=None):
    kernel, noise, mu, s2, Z = _split(model, theta, jnp)
    n, dy = Y.shape
    psi0, psi1, psi2 = compute_psi_jnp(kernel, mu, s2, Z, model.scheme, stream=stream, seed=seed)
    beta = 1.0 / noise
    L = jnp.linalg.cholesky(_kz(kernel, Z, jitter))
    tmp = jsl.solve_triangular(L, psi2, lower=True)
    inner = jsl.solve_triangular(L, tmp.T, lower=True)
    LB = jnp.linalg.cholesky(jnp.eye(Z.shape[0]) + beta * inner)
    c = beta * jsl.solve_triangular(LB, jsl.solve_triangular(L, psi1.T @ Y, lower=True), lower=True)
    fit = (-0.5 * n * dy * (jnp.log(2 * jnp.pi) + jnp.log(noise)) - dy * jnp.sum(jnp.log(jnp.diag(LB)))
           - 0.5 * beta * jnp.sum(Y**2) + 0.5 * jnp.sum(c**2))
    trace = 0.5 * dy * beta * (psi0 - jnp.trace(inner))
    kl = 0.5 * jnp.sum(mu**2 + s2 - jnp.log(s2) - 1.0)
    return fit, trace, kl


_CACHE = {}


def _signature(model, jitter):
    return (model.kernel.describe(), model.kernel.input_dim,
            tuple((getattr(leaf, "layers", ()), getattr(leaf, "activation", None)) for leaf in kern.leaves(model.kernel)),
            tuple(np.shape(v) for leaf in kern.leaves(model.kernel) for v in leaf.params.values()),
            model.means.shape, model.inducing.shape, model.Y.shape, _scheme_key(model.scheme), jitter)


def _scheme_key(scheme):
    # the MC seed is a traced argument, so models differing only in seed share one compilation
    return f"mc:{scheme.samples}" if scheme.kind == "mc" else scheme.tag


def _compiled(model, jitter):
    """Jitted (terms, value_and_grad of the elbo) for models of this structure."""
    key = _signature(model, jitter)
    if key not in _CACHE:
        template = model

        def terms(theta, Y, stream, seed):
            return _terms(template, theta, Y, stream, jitter, seed)

        def neg_elbo(theta, Y, stream, seed):
            fit, trace, kl = terms(theta, Y, stream, seed)
            return -(fit - trace - kl)

        _CACHE[key] = (jax.jit(terms), jax.jit(jax.value_and_grad(neg_elbo)))
    return _CACHE[key]


def objective_terms(model):
    """Function theta -> (fit, trace, kl) as JAX scalars, for custom differentiation."""
    return lambda theta, stream=0: _terms(model, theta, jnp.asarray(model.Y), stream, model.jitter)


def _kz_ok(model, jitter):
    Kz = np.asarray(_kz(model.kernel, jnp.asarray(model.inducing), jitter))
    try:
        np.linalg.cholesky(Kz)
    except np.linalg.LinAlgError:
        return False
    return bool(np.all(np.isfinite(Kz)))


def _with_jitter_retry(model, fn):
    """Run ``fn(jitter)`` with the base jitter, retrying once with 10x when Kz does not factorise.

    A non-finite result with a well-conditioned Kz is returned as is; only a
    failed Kz factorisation raises.
    """
    for jitter in (model.jitter, 10 * model.jitter):
        out = fn(jitter)
        if all(np.all(np.isfinite(np.asarray(o))) for o in out) or _kz_ok(model, jitter):
            if jitter != model.jitter:
                log.warning("Kz factorisation needed jitter %.1e", jitter)
            return out, jitter
    raise NotPositiveDefinite("Kz is not positive definite even after the jitter retry (degenerate inducing inputs?)")


def elbo(model, stream=0):
    """Evaluate the bound split into its fit, trace and KL parts."""
    theta = jnp.asarray(model.pack())
    Y = jnp.asarray(model.Y)
    (fit, trace, kl), _ = _with_jitter_retry(model, lambda j: _compiled(model, j)[0](theta, Y, stream, model.scheme.seed))
    return ElboParts(float(fit), float(trace), float(kl))


def elbo_gradient(model, stream=0):
    """Gradient of the elbo with respect to ``model.pack()``."""
    theta = jnp.asarray(model.pack())
    Y = jnp.asarray(model.Y)
    (val, grad), _ = _with_jitter_retry(model, lambda j: _compiled(model, j)[1](theta, Y, stream, model.scheme.seed))
    return -np.asarray(grad)


# ------------------------------------------------------------------ training

@dataclass
class FitResult:
    model: GplvmModel
    trace: list
    converged: bool
    message: str = ""


def _adam(fun, x0, lr, max_iters, trace, t0, callback=None):
    m = np.zeros_like(x0)
    v = np.zeros_like(x0)
    b1, b2, eps = 0.9, 0.999, 1e-8
    x = x0.copy()
    for it in range(1, max_iters + 1):
        f, g = fun(x, it)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            raise OptimizerDiverged(f"non-finite objective at Adam step {it}", last_good=x, trace=trace)
        trace.append({"iter": it, "elbo": -f, "grad_norm": float(np.linalg.norm(g)), "wall_time": time.perf_counter() - t0})
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**it)
        vhat = v / (1 - b2**it)
        x = x - lr * mhat / (np.sqrt(vhat) + eps)
        if callback is not None:
            callback(it, x)
    return x


def fit(model, optimizer="lbfgs", max_iters=1000, seed=None, lr=0.01, gtol=1e-5, ftol=1e-12):
    """Maximise the bound over the free parameter groups of ``model``.

    ``optimizer`` is ``"lbfgs"`` (deterministic schemes only) or ``"adam"``.
    Monte Carlo models draw fresh points each Adam step; ``seed`` overrides
    the scheme seed for those draws.
    """
    optimizer = optimizer.lower()
    if optimizer.startswith("adam:"):
        optimizer, lr = "adam", float(optimizer.split(":", 1)[1])
    if optimizer not in ("lbfgs", "adam"):
        raise ValueError(f"unknown optimizer {optimizer!r}")
    if model.scheme.kind == "mc":
        if optimizer == "lbfgs":
            raise ValueError("Monte Carlo schemes are stochastic; use the adam optimizer")
        if seed is not None:
            model = replace(model, scheme=Scheme("mc", samples=model.scheme.samples, seed=seed))

    mask = model.free_mask()
    theta0 = model.pack()
    Y = jnp.asarray(model.Y)
    _, jitter = _with_jitter_retry(model, lambda j: _compiled(model, j)[0](jnp.asarray(theta0), Y, 0, model.scheme.seed))
    vg = _compiled(model, jitter)[1]
    trace = []
    t0 = time.perf_counter()

    def full(x):
        theta = theta0.copy()
        theta[mask] = x
        return theta

    if optimizer == "adam":
        def fun(x, it):
            f, g = vg(jnp.asarray(full(x)), Y, it, model.scheme.seed)
            return float(f), np.asarray(g)[mask]

        x = _adam(fun, theta0[mask], lr, max_iters, trace, t0)
        out = replace(model.unpack(full(x)), jitter=jitter)
        return FitResult(out, trace, converged=False, message="adam: fixed iteration budget")

    best = {"f": np.inf, "x": theta0[mask].copy(), "g": None}

    def fun(x):
        f, g = vg(jnp.asarray(full(x)), Y, 0, model.scheme.seed)
        f, g = float(f), np.asarray(g)[mask]
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            if best["g"] is None:
                raise OptimizerDiverged("non-finite bound at the initial point", last_good=model, trace=trace)
            step = x - best["x"]
            return best["f"] + 1e8, 1e3 * step / max(np.linalg.norm(step), 1e-300)
        if f < best["f"]:
            best.update(f=f, x=x.copy(), g=g)
        return f, g

    def record(xk):
        trace.append({"iter": len(trace) + 1, "elbo": -best["f"], "grad_norm": float(np.linalg.norm(best["g"])),
                      "wall_time": time.perf_counter() - t0})

    res = scipy.optimize.minimize(fun, theta0[mask], jac=True, method="L-BFGS-B", callback=record,
                                  options={"maxiter": max_iters, "gtol": gtol, "ftol": ftol, "maxcor": 20})
    out = replace(model.unpack(full(best["x"])), jitter=jitter)
    return FitResult(out, trace, converged=bool(res.success), message=str(res.message))


# ---------------------------------------------------------------- prediction

class Posterior:
    """Cached quantities of q(U) for repeated predictions from one model."""

    def __init__(self, model):
        self.model = model
        theta = jnp.asarray(model.pack())
        kernel, noise, mu, s2, Z = _split(model, theta, jnp)
        psi0, psi1, psi2 = compute_psi_jnp(kernel, mu, s2, Z, model.scheme)
        beta = 1.0 / noise
        L = jnp.linalg.cholesky(_kz(kernel, Z, model.jitter))
        tmp = jsl.solve_triangular(L, psi2, lower=True)
        inner = jsl.solve_triangular(L, tmp.T, lower=True)
        LB = jnp.linalg.cholesky(jnp.eye(Z.shape[0]) + beta * inner)
        c = beta * jsl.solve_triangular(LB, jsl.solve_triangular(L, psi1.T @ jnp.asarray(model.Y), lower=True),
                                        lower=True)
        if not (np.all(np.isfinite(np.asarray(L))) and np.all(np.isfinite(np.asarray(LB)))):
            raise NotPositiveDefinite("posterior factorisation failed")
        # weights = sigma^-2 A^-1 Psi1^T Y ; gap = Kz^-1 - A^-1 = L^-T (I - B^-1) L^-1
        self.weights = jsl.solve_triangular(L.T, jsl.solve_triangular(LB.T, c, lower=False), lower=False)
        Linv = jsl.solve_triangular(L, jnp.eye(Z.shape[0]), lower=True)
        LBinv = jsl.solve_triangular(LB, jnp.eye(Z.shape[0]), lower=True)
        self.gap = Linv.T @ (jnp.eye(Z.shape[0]) - LBinv.T @ LBinv) @ Linv
        self.kernel = kern.to_numpy(kernel)
        self.Z = Z
        self.noise = float(noise)
        self._uncertain = jax.jit(self._uncertain_impl, static_argnums=(2,))

    def certain(self, xstar):
        x = jnp.atleast_2d(jnp.asarray(xstar, dtype=float))
        ks = kern.gram_jnp(self.kernel, x, self.Z)
        mean = ks @ self.weights
        var = kern.kdiag_jnp(self.kernel, x) - jnp.sum((ks @ self.gap) * ks, axis=1) + self.noise
        return np.asarray(mean), np.asarray(var)

    def _uncertain_impl(self, m, v, scheme, stream):
        psi0, psi1, psi2 = compute_psi_jnp(self.kernel, m[None, :], v[None, :], self.Z, scheme, stream=stream)
        mean = (psi1 @ self.weights)[0]
        cov = psi2 - psi1.T @ psi1
        var_f = jnp.einsum("md,mk,kd->d", self.weights, cov, self.weights)
        var = var_f + psi0 - jnp.sum(self.gap * psi2) + self.noise
        return mean, var

    def uncertain(self, qstar, scheme=None, stream=0):
        scheme = parse_scheme(scheme) if scheme is not None else self.model.scheme
        mean, var = self._uncertain(jnp.asarray(qstar.mean), jnp.asarray(qstar.var), scheme, stream)
        return np.asarray(mean), np.asarray(var)


def _check_var(var, floor):
    var = np.asarray(var, dtype=float)
    if np.any(~np.isfinite(var)):
        raise NotPositiveDefinite("non-finite predictive variance")
    if np.any(var < floor):
        log.warning("predictive variance %.3g below noise floor %.3g; clamped", float(var.min()), floor)
        var = np.maximum(var, floor)
    return var


def predict_certain(model, xstar, posterior=None):
    post = posterior or Posterior(model)
    mean, var = post.certain(xstar)
    var = _check_var(np.repeat(var[:, None], model.output_dim, axis=1), post.noise)
    if np.ndim(xstar) == 1:
        return PredictiveDist(mean[0], var[0])
    return PredictiveDist(mean, var)


def predict_uncertain(model, qstar, posterior=None, stream=0):
    """Moment-matched prediction at an uncertain input q* = N(m, diag(v))."""
    if qstar.dim != model.latent_dim:
        raise DimensionMismatch(f"q* has dimension {qstar.dim}, model expects {model.latent_dim}")
    post = posterior or Posterior(model)
    mean, var = post.uncertain(qstar, stream=stream)
    return PredictiveDist(mean, _check_var(var, post.noise))


# ----------------------------------------------------------------- utilities

def evals_per_prediction(model):
    return eval_budget(model.scheme, model.latent_dim)


def init_model(Y, latent_dim, kernel, num_inducing=20, latent_var=0.1, noise_var=None, scheme="ut",
               seed=0, init_means=None):
    """Standard initialisation: PCA means, constant latent variances, Z a random subset of the means."""
    from .evalkit import pca_project

    Y = np.asarray(Y, dtype=float)
    if init_means is None:
        init_means, _ = pca_project(Y, latent_dim)
    rng = np.random.default_rng(seed)
    m = min(num_inducing, Y.shape[0])
    idx = rng.choice(Y.shape[0], size=m, replace=False)
    if noise_var is None:
        noise_var = 0.1 * float(np.mean(np.var(Y, axis=0)))
    return GplvmModel(kernel=kernel, means=init_means, variances=np.full_like(init_means, latent_var),
                      inducing=init_means[idx].copy(), noise_var=noise_var, Y=Y, scheme=parse_scheme(scheme))


def latent_gaussians(model):
    return [DiagGaussian(m, v) for m, v in zip(model.means, model.variances)]
