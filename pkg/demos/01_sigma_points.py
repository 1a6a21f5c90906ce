# Sigma points versus Gauss-Hermite grids for a Gaussian expectation.
#
# The unscented transform spends 2D function evaluations on a D-dimensional
# Gaussian; a tensor-product Gauss-Hermite rule of order H spends H**D.
import numpy as np

from psilvm.expectation import eval_budget, expect, gh_points, parse_scheme, ut_points
from psilvm.gauss import DiagGaussian

q = DiagGaussian(np.array([0.5, -1.0]), np.array([0.4, 0.9]))

# Polynomials up to total degree three come out exact under the UT
f = lambda x: x[0] ** 3 + 2 * x[0] * x[1] + x[1] ** 2
exact = (0.5**3 + 3 * 0.5 * 0.4) + 2 * 0.5 * -1.0 + (1.0 + 0.9)
print("cubic: exact %.12f  ut %.12f  gh:2 %.12f" % (exact, expect(f, ut_points(q))[0], expect(f, gh_points(q, 2))[0]))

# A smooth non-polynomial integrand separates the rules
g = lambda x: np.exp(-np.sum(x**2))
ref = expect(g, gh_points(q, 40))[0]
for name, ps in [("ut", ut_points(q)), ("gh:2", gh_points(q, 2)), ("gh:5", gh_points(q, 5))]:
    print("%-5s %3d points  error %.2e" % (name, ps.points.shape[0], abs(expect(g, ps)[0] - ref)))

# In one dimension the UT and GH(2) use the same two points and weights
q1 = DiagGaussian(np.array([0.3]), np.array([2.0]))
print("1-D points, ut:", ut_points(q1).points.ravel(), " gh:2:", gh_points(q1, 2).points.ravel())

# Evaluation counts grow linearly for the UT and exponentially for GH
print("\n  D   ut  gh:2")
for d in (1, 2, 5, 10, 12, 20):
    print("%3d %4d %7d" % (d, eval_budget(parse_scheme("ut"), d), eval_budget(parse_scheme("gh:2"), d)))
