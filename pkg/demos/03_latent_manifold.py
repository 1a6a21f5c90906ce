# Bayesian GPLVM on a curved two-dimensional manifold in twelve dimensions.
#
# The latent space starts from PCA, the kernel is ARD so the two most
# relevant latent directions can be read off the inverse lengthscales, and
# the embedding is scored by 5-fold 1-NN accuracy.
import numpy as np

from psilvm import kernels as kern
from psilvm.evalkit import knn_cv_accuracy, pca_project, select_ard_dims
from psilvm.gplvm import elbo, fit, init_model

rng = np.random.default_rng(3)
labels = np.repeat([0, 1, 2], 40)
t = rng.uniform(0, 1, labels.size) + 1.2 * labels
manifold = np.c_[np.cos(2 * t), np.sin(2 * t)] * (1 + 0.3 * labels[:, None])
Y = np.tanh(manifold @ rng.normal(size=(2, 12))) + 0.05 * rng.normal(size=(labels.size, 12))
Y = Y - Y.mean(axis=0)

pca2, _ = pca_project(Y, 2)
print("PCA, 2 components:   ", knn_cv_accuracy(pca2, labels))

for scheme, kernel in [("analytic", kern.rbf(4)), ("ut", kern.rbf(4)), ("ut", kern.matern32(4))]:
    model = init_model(Y, 4, kernel, num_inducing=15, latent_var=0.1, scheme=scheme, seed=0)
    start = elbo(model).elbo
    res = fit(model, optimizer="lbfgs", max_iters=300)
    dims = select_ard_dims(res.model.kernel, 2)
    rep = knn_cv_accuracy(res.model.means[:, dims], labels)
    print("%-8s %-9s ELBO %8.2f -> %8.2f  dims %s  %s"
          % (scheme, kernel.kind, start, elbo(res.model).elbo, dims, rep))
