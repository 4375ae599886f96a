"""Learning conversion-prediction models from attribution sets.

The learner never sees labels: each conversion arrives as a window of k
candidate stream positions, with the true position hidden behind a known
placement prior. The package simulates that observation process, evaluates
an exactly unbiased estimator of the population loss built from binomial
tails of the conversion count, trains hypotheses by minibatch ERM on the
estimator, and verifies unbiasedness by brute-force enumeration at small n.
"""

from .binomial import BetaCoefficients, beta_coefficients, binomial_tail
from .errors import (
    AttrsetsError,
    ConfigError,
    DatasetError,
    DegenerateCoefficientError,
    DivergenceError,
    DomainError,
    EmptyFilterError,
)
from .estimator import (
    EstimatorConfig,
    PluginEstimates,
    aggregate_estimate,
    exact_plugin,
    plugin_split,
    pointwise_estimate,
    set_estimate,
)
from .losses import clipped_log_loss, loss_by_name, square_loss
from .priors import (
    Prior,
    custom_prior,
    exponential_prior,
    linear_prior,
    prior_by_name,
    prior_sigma,
    singleton_last_prior,
    uniform_prior,
)
from .simulate import (
    AttributionSet,
    LabeledStream,
    SyntheticTask,
    generate_attribution_sets,
    hallucination_dataset,
    sample_stream,
    stream_from_dataset,
)

__version__ = "0.1.0"
