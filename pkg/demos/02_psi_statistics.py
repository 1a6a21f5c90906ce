# Psi-statistics of an RBF kernel: closed form against quadrature.
#
# These are kernel expectations under the latent Gaussians q(x_n) and are
# the only place the latent uncertainty enters the collapsed bound.
import numpy as np

from psilvm import kernels as kern
from psilvm.evalkit import bench_csv_lines, bench_psi
from psilvm.psi import LatentBatch, psi_analytic, psi_error_report

rng = np.random.default_rng(0)
latent = LatentBatch(rng.normal(size=(40, 3)), rng.uniform(0.05, 0.5, size=(40, 3)), rng.normal(size=(20, 3)))
kernel = kern.rbf(3, lengthscale=[0.7, 1.0, 1.5])
reference = psi_analytic(kernel, latent)

print("scheme   evals   psi1 rel err   psi2 rel err")
for scheme in ["ut", "gh:2", "gh:4", "mc:6", "mc:200"]:
    rep = psi_error_report(kernel, latent, scheme, reference)
    print("%-7s %6d   %.3e      %.3e" % (rep.scheme, rep.evals, rep.psi1_err, rep.psi2_err))

# The canonical 1-D instance: q = N(0, 1), Z = 0, unit lengthscale.
# Closed form psi1 = 1/sqrt(2); the two sigma points give exp(-1/2).
one = LatentBatch(np.zeros((1, 1)), np.ones((1, 1)), np.zeros((1, 1)))
rep = psi_error_report(kern.rbf(1), one, "ut", psi_analytic(kern.rbf(1), one))
print("\ncanonical UT psi1 error: %.6f" % rep.psi1_err)

# Wall time of psi1 relative to the UT; GH(2) doubles with every dimension
print()
for line in bench_csv_lines(bench_psi([2, 6, 10], ["ut", "gh:2", "mc:200"], repeats=5)):
    print(line)
