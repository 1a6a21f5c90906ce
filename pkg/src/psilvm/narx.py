"""GP-NARX on lagged windows and free simulation with uncertain inputs.

Workflow: fit an exact GP on lag windows of the (standardised) training
split, freeze its hyperparameters inside a GPLVM whose inducing inputs and
latent means are the training windows, then roll the model forward feeding
back predictive means *and* variances as the next uncertain input.
"""
import csv
import logging
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import jax.scipy.linalg as jsl
import numpy as np
import scipy.optimize

from . import kernels as kern
from .errors import NotPositiveDefinite, OptimizerDiverged, SeriesTooShort
from .evalkit import nlpd, rmse
from .expectation import eval_budget, parse_scheme
from .gauss import DiagGaussian
from .gplvm import GROUPS, GplvmModel, Posterior

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NarxConfig:
    lag: int = 12
    train_split: int = 48
    kernel: str = "periodic+rbf+linear"
    scheme: str = "ut"
    period: float = 1.0
    ard: bool = False
    noise_init: float = 1.0
    max_iters: int = 2000
    standardize: str = "zscore"

    def __post_init__(self):
        if self.lag < 1:
            raise ValueError("lag must be >= 1")
        if self.train_split <= self.lag:
            raise ValueError("train_split must exceed the lag")


@dataclass(frozen=True)
class Scaler:
    mean: float = 0.0
    std: float = 1.0

    @classmethod
    def fit(cls, values, mode="zscore"):
        """``zscore`` centres and scales, ``scale`` only divides by the std, ``none`` is the identity."""
        values = np.asarray(values, dtype=float)
        std = float(np.std(values))
        std = std if std > 0 else 1.0
        if mode == "zscore":
            return cls(float(np.mean(values)), std)
        if mode == "scale":
            return cls(0.0, std)
        if mode == "none":
            return cls()
        raise ValueError(f"unknown standardisation {mode!r}")

    def forward(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.std

    def inverse_mean(self, m):
        return np.asarray(m) * self.std + self.mean

    def inverse_var(self, v):
        return np.asarray(v) * self.std**2


@dataclass
class NarxFit:
    kernel: kern.KernelSpec
    noise_var: float
    X: np.ndarray
    y: np.ndarray
    scaler: Scaler
    config: NarxConfig
    log_marginal: float = float("nan")
    message: str = ""


@dataclass
class ForecastTrace:
    t: np.ndarray
    observed: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    evals: np.ndarray
    timestamps: list = field(default_factory=list)

    def __len__(self):
        return len(self.t)

    def window(self, start, stop=None):
        sel = (self.t >= start) & (self.t < (stop if stop is not None else np.inf))
        return self.observed[sel], self.mean[sel], self.var[sel]

    def metrics(self, start, stop=None):
        y, m, v = self.window(start, stop)
        return {"rmse": rmse(y, m), "nlpd": nlpd(y, m, v), "n": int(y.size)}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "observed", "mean", "var", "evals"])
            for row in zip(self.t, self.observed, self.mean, self.var, self.evals):
                w.writerow([int(row[0]), repr(float(row[1])), repr(float(row[2])), repr(float(row[3])), int(row[4])])


def build_lag_matrix(series, lag):
    """Rows [y_{t-1}, ..., y_{t-L}] (most recent first) with target y_t, for t = L..T-1."""
    series = np.asarray(series, dtype=float).ravel()
    if series.size <= lag:
        raise SeriesTooShort(f"series of length {series.size} with lag {lag}")
    T = series.size
    X = np.stack([series[lag - j - 1:T - j - 1] for j in range(lag)], axis=1)
    return X, series[lag:].copy()


# --------------------------------------------------------------- exact GP fit

def _neg_log_marginal(template, theta, X, y):
    nk = kern.n_params(template)
    kernel = kern.unpack(template, theta[:nk])
    noise = jnp.exp(theta[nk])
    K = kern.gram_jnp(kernel, X) + noise * jnp.eye(X.shape[0])
    L = jnp.linalg.cholesky(K)
    alpha = jsl.solve_triangular(L, y, lower=True)
    return 0.5 * jnp.sum(alpha**2) + jnp.sum(jnp.log(jnp.diag(L))) + 0.5 * X.shape[0] * jnp.log(2 * jnp.pi)


def fit_exact_gp(kernel, X, y, noise_init=0.1, max_iters=2000):
    """Type-II maximum likelihood for an exact GP regressor. Returns (kernel, noise_var, log_marginal, message)."""
    X = jnp.asarray(X)
    y = jnp.asarray(y)
    vg = jax.jit(jax.value_and_grad(lambda th: _neg_log_marginal(kernel, th, X, y)))
    theta0 = np.concatenate([kern.pack(kernel), [np.log(noise_init)]])
    best = {"f": np.inf, "x": theta0.copy()}

    def fun(x):
        f, g = vg(jnp.asarray(x))
        f, g = float(f), np.asarray(g)
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            if not np.isfinite(best["f"]):
                raise OptimizerDiverged("non-finite marginal likelihood at the initial point")
            step = x - best["x"]
            return best["f"] + 1e8, 1e3 * step / max(np.linalg.norm(step), 1e-300)
        if f < best["f"]:
            best.update(f=f, x=x.copy())
        return f, g

    res = scipy.optimize.minimize(fun, theta0, jac=True, method="L-BFGS-B",
                                  options={"maxiter": max_iters, "gtol": 1e-6, "ftol": 1e-13, "maxcor": 20})
    nk = kern.n_params(kernel)
    fitted = kern.to_numpy(kern.unpack(kernel, jnp.asarray(best["x"][:nk])))
    return fitted, float(np.exp(best["x"][nk])), -best["f"], str(res.message)


def fit_narx(series, config=NarxConfig()):
    """Standardise on the training split, build lag windows and fit the GP hyperparameters."""
    series = np.asarray(series, dtype=float).ravel()
    if series.size < config.train_split:
        raise SeriesTooShort(f"series of length {series.size} shorter than train_split {config.train_split}")
    scaler = Scaler.fit(series[:config.train_split], config.standardize)
    z = scaler.forward(series[:config.train_split])
    X, y = build_lag_matrix(z, config.lag)
    kernel = config.kernel
    if isinstance(kernel, str):
        kernel = kern.parse_kernel(kernel, config.lag, ard=config.ard, period=config.period)
    fitted, noise, lml, msg = fit_exact_gp(kernel, X, y, config.noise_init, config.max_iters)
    return NarxFit(fitted, noise, X, y, scaler, config, lml, msg)


def exact_predict(fit, Xstar):
    """Exact GP posterior mean and observation variance (standardised scale)."""
    Xstar = np.atleast_2d(np.asarray(Xstar, dtype=float))
    K = kern.gram(fit.kernel, fit.X) + fit.noise_var * np.eye(fit.X.shape[0])
    L = np.linalg.cholesky(K)
    ks = kern.gram(fit.kernel, Xstar, fit.X)
    alpha = np.linalg.solve(L.T, np.linalg.solve(L, fit.y))
    v = np.linalg.solve(L, ks.T)
    mean = ks @ alpha
    var = kern.kdiag(fit.kernel, Xstar) - np.sum(v**2, axis=0) + fit.noise_var
    return mean, var


# -------------------------------------------------------- uncertain-input model

def to_uncertain_model(fit, scheme=None, latent_var=None):
    """Frozen GPLVM: Z = q(X) means = training windows, q(X) variances = fitted noise variance."""
    scheme = parse_scheme(scheme if scheme is not None else fit.config.scheme)
    var = fit.noise_var if latent_var is None else latent_var
    return GplvmModel(kernel=fit.kernel, means=fit.X.copy(), variances=np.full_like(fit.X, var),
                      inducing=fit.X.copy(), noise_var=fit.noise_var, Y=fit.y[:, None], scheme=scheme,
                      fixed=frozenset(GROUPS))


def free_simulate(model, series, config=NarxConfig(), horizon=None, scaler=None, zero_variance=False,
                  posterior=None):
    """Multistep-ahead rollout feeding back predictive means and variances.

    The first ``lag`` observations seed the window with variance equal to the
    model noise. Output is on the original scale when ``scaler`` is given.
    """
    scaler = scaler or Scaler()
    series = np.asarray(series, dtype=float).ravel()
    lag = config.lag
    z = scaler.forward(series)
    horizon = series.size - lag if horizon is None else horizon
    post = posterior or Posterior(model)
    tiny = 1e-24
    means = list(z[:lag])
    varis = [tiny if zero_variance else post.noise] * lag
    budget = eval_budget(model.scheme, lag) if model.scheme.kind != "analytic" else 0
    out_m, out_v = [], []
    for step in range(horizon):
        t = lag + step
        m = np.array(means[-1:-lag - 1:-1])
        v = np.array(varis[-1:-lag - 1:-1])
        mu, var = post.uncertain(DiagGaussian(m, v), stream=t)
        mu, var = float(mu[0]), float(var[0])
        if not (np.isfinite(mu) and np.isfinite(var)):
            log.error("non-finite prediction at t=%d; returning partial trace", t)
            break
        if var < post.noise:
            log.warning("variance %.3g below noise %.3g at t=%d; clamped", var, post.noise, t)
            var = post.noise
        means.append(mu)
        varis.append(tiny if zero_variance else var)
        out_m.append(mu)
        out_v.append(var)
    return _trace(series, lag, out_m, out_v, budget, scaler)


def certain_rollout(predict, series, lag, horizon=None, scaler=None, budget=0):
    """Mean-feedback rollout; ``predict(window) -> (mean, var)`` on the standardised scale."""
    scaler = scaler or Scaler()
    series = np.asarray(series, dtype=float).ravel()
    z = scaler.forward(series)
    horizon = series.size - lag if horizon is None else horizon
    means = list(z[:lag])
    out_m, out_v = [], []
    for _ in range(horizon):
        window = np.array(means[-1:-lag - 1:-1])
        mu, var = predict(window)
        mu, var = float(np.ravel(mu)[0]), float(np.ravel(var)[0])
        means.append(mu)
        out_m.append(mu)
        out_v.append(var)
    return _trace(series, lag, out_m, out_v, budget, scaler)


def narx_rollout(fit, series, horizon=None):
    """GP-NARX baseline: exact GP, mean feedback only."""
    return certain_rollout(lambda w: exact_predict(fit, w), series, fit.config.lag, horizon, fit.scaler)


def _trace(series, lag, means, variances, budget, scaler):
    n = len(means)
    t = np.arange(lag, lag + n)
    observed = np.array([series[i] if i < series.size else np.nan for i in t])
    return ForecastTrace(t=t, observed=observed, mean=scaler.inverse_mean(np.array(means)),
                         var=scaler.inverse_var(np.array(variances)), evals=np.full(n, budget, dtype=int))


def run_free_simulation(series, config=NarxConfig(), scheme=None, fit=None):
    """Fit (unless given), build the uncertain-input model and simulate the whole series."""
    fit = fit or fit_narx(series, config)
    model = to_uncertain_model(fit, scheme)
    try:
        trace = free_simulate(model, series, config, scaler=fit.scaler)
    except NotPositiveDefinite:
        raise
    return fit, model, trace
