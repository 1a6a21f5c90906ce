"""End-to-end protocols: latent-space classification and airline free simulation.

Each runner takes a typed config dict (see ``dataio.build_config``) and
returns plain results; persistence is left to the caller.
"""
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import dataio
from . import gplvm
from . import kernels as kern
from .errors import NoArdKernel
from .evalkit import knn_cv_accuracy, pca_project, select_ard_dims
from .expectation import parse_scheme
from .narx import NarxConfig, fit_narx, narx_rollout, run_free_simulation

log = logging.getLogger(__name__)


@dataclass
class DimredResult:
    accuracy: float
    accuracy_std: float
    latent2: np.ndarray
    labels: np.ndarray
    dims: list
    elbo: float = float("nan")
    converged: bool = True
    message: str = ""
    model: object = None
    trace: list = field(default_factory=list)

    def metrics(self):
        return {"accuracy": self.accuracy, "accuracy_std": self.accuracy_std, "elbo": self.elbo,
                "dim_a": int(self.dims[0]), "dim_b": int(self.dims[1])}


def load_labelled(cfg):
    ds = dataio.load_csv_features(cfg["dataset.path"], label_column=cfg["dataset.label_column"] or None)
    if cfg["dataset.per_class"] > 0:
        ds = dataio.subsample_per_class(ds, cfg["dataset.per_class"], seed=cfg["seed"])
    return ds


def run_dimred(Y, labels, cfg):
    """PCA-initialised Bayesian GPLVM, then 1-NN CV on the two most relevant latent dimensions.

    With ``baseline = pca`` the GPLVM is skipped and the top two principal
    components are scored instead.
    """
    Y = np.asarray(Y, dtype=float)
    Y = Y - Y.mean(axis=0)
    seed = cfg["seed"]
    if cfg["baseline"] == "pca":
        X2, _ = pca_project(Y, 2)
        rep = knn_cv_accuracy(X2, labels, folds=cfg["folds"], seed=seed)
        return DimredResult(rep.value, rep.dispersion, X2, np.asarray(labels), [0, 1])
    q = cfg["latent.q"]
    spec = "rbf" if cfg["kernel.spec"] == "auto" else cfg["kernel.spec"]
    ard = True if cfg["kernel.ard"] is None else cfg["kernel.ard"]
    kernel = kern.parse_kernel(spec, q, ard=ard, seed=seed, period=cfg["kernel.period"])
    model = gplvm.init_model(Y, q, kernel, num_inducing=cfg["inducing.m"], latent_var=cfg["init.latent_var"],
                             scheme=cfg["scheme"], seed=seed)
    res = gplvm.fit(model, optimizer=cfg["optimizer"], max_iters=cfg["max_iters"], seed=seed)
    fitted = res.model
    try:
        dims = select_ard_dims(fitted.kernel, 2)
    except NoArdKernel:
        # no per-dimension lengthscales (e.g. mlp_rbf): keep the two most spread-out latent dimensions
        dims = sorted(np.argsort(-np.var(fitted.means, axis=0), kind="stable")[:2].tolist())
    X2 = fitted.means[:, dims]
    rep = knn_cv_accuracy(X2, labels, folds=cfg["folds"], seed=seed)
    value = gplvm.elbo(fitted).elbo
    return DimredResult(rep.value, rep.dispersion, X2, np.asarray(labels), list(dims), float(value),
                        res.converged, res.message, fitted, list(res.trace))


@dataclass
class FreesimResult:
    metrics: dict
    trace: object
    fit: object


def narx_config(cfg):
    spec = NarxConfig.kernel if cfg["kernel.spec"] == "auto" else cfg["kernel.spec"]
    ard = NarxConfig.ard if cfg["kernel.ard"] is None else cfg["kernel.ard"]
    return NarxConfig(lag=cfg["lag"], train_split=cfg["train_split"], kernel=spec,
                      scheme=cfg["scheme"], period=cfg["kernel.period"], ard=ard,
                      max_iters=cfg["max_iters"])


def run_freesim(series, cfg):
    """GP-NARX fit on the training split, then free simulation over the whole series.

    ``baseline = narx`` rolls out the exact GP with mean feedback only.
    Metrics are on the test region (after the training split).
    """
    series = np.asarray(series, dtype=float)
    config = narx_config(cfg)
    t0 = time.perf_counter()
    fit = fit_narx(series, config)
    if cfg["baseline"] == "narx":
        trace = narx_rollout(fit, series)
    else:
        _, _, trace = run_free_simulation(series, config, parse_scheme(cfg["scheme"]), fit=fit)
    if cfg["horizon"] > 0:
        keep = trace.t < config.train_split + cfg["horizon"]
        trace = type(trace)(trace.t[keep], trace.observed[keep], trace.mean[keep], trace.var[keep],
                            trace.evals[keep])
    m = trace.metrics(config.train_split)
    metrics = {"rmse": m["rmse"], "nlpd": m["nlpd"], "n_test": m["n"], "noise_var": fit.noise_var,
               "log_marginal": fit.log_marginal}
    log.info("free simulation done in %.2fs", time.perf_counter() - t0)
    return FreesimResult(metrics, trace, fit)
