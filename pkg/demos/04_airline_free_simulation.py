# Free simulation of the monthly airline series with a GP-NARX model.
#
# The exact GP is fitted on the first four years with a 12-month lag window.
# Free simulation then feeds its own predictions back. The GP-NARX baseline
# feeds back only the means, while the frozen GPLVM also feeds back the
# predictive variances as latent variances, so uncertainty accumulates.
import numpy as np

from psilvm.dataio import load_series
from psilvm.narx import NarxConfig, fit_narx, narx_rollout, run_free_simulation

series = load_series().series
config = NarxConfig()
print("%d months, training on the first %d, lag %d, kernel %s"
      % (series.size, config.train_split, config.lag, config.kernel))

fit = fit_narx(series, config)
print("type-II ML: log marginal %.2f, noise variance %.3g (standardised)" % (fit.log_marginal, fit.noise_var))

baseline = narx_rollout(fit, series)
rows = [("GP-NARX", baseline)]
for scheme in ["ut", "gh:2"]:
    _, _, trace = run_free_simulation(series, config, scheme, fit=fit)
    rows.append(("GPLVM " + scheme, trace))

print("\nmodel          RMSE    NLPD   evals/step")
for name, trace in rows:
    m = trace.metrics(config.train_split)
    print("%-12s %7.2f %7.3f %8d" % (name, m["rmse"], m["nlpd"], int(trace.evals[-1])))

# Predictive standard deviation a few steps into the test region
ut = rows[1][1]
test = ut.t >= config.train_split
print("\nmonth  observed   mean    std (UT)")
for t, y, mu, var in list(zip(ut.t[test], ut.observed[test], ut.mean[test], ut.var[test]))[::12]:
    print("%5d %9.0f %7.1f %7.1f" % (t, y, mu, np.sqrt(var)))
