"""Break-point gravity modeling of pairwise flow intensities.

Tools for fitting distance-decay models to directed flow counts between
geographic locations, where each source location may switch its decay
rate at an unknown (log-)distance break-point.  The package bundles

* data ingestion and validation for location/flow tables (``flowdata``),
* classical baselines: gravity OLS, radiation, and rank models (``baselines``),
* piecewise design-matrix construction (``design``),
* grid-search / BIC initialization (``initialize``),
* the MCMC engine: Metropolis break-point moves combined with a Bayesian
  LASSO Gibbs block, optionally with reversible-jump selection of which
  sources have breaks (``sampler``),
* trans-dimensional convergence diagnostics and posterior prediction
  (``diagnostics``),
* a synthetic-data study harness and scaling benchmark (``simharness``),
* a command line interface (``cli``).
"""

__version__ = "0.1.0"

from . import baselines, design, diagnostics, flowdata, initialize, sampler, simharness

__all__ = [
    "__version__",
    "baselines",
    "design",
    "diagnostics",
    "flowdata",
    "initialize",
    "sampler",
    "simharness",
]
