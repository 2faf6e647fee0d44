"""Two-stage CGM forecasting.

A discrete Bayesian network over clinical characteristics infers each
subject's glucose markers so that metabolically similar individuals can be
selected; their trajectories then feed a Bayesian structural time-series model
(semi-local trend, three seasonal components, spike-and-slab regression) that
forecasts CGM values 15-60 minutes ahead with MCMC-averaged draws.
"""

__version__ = "0.1.0"

from . import bayesnet, bsts, dataset, evaluate, preprocess, similarity, synth
from .errors import GlycastError

__all__ = [
    "GlycastError",
    "__version__",
    "bayesnet",
    "bsts",
    "dataset",
    "evaluate",
    "preprocess",
    "similarity",
    "synth",
]
