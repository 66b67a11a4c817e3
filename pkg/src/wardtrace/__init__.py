"""wardtrace: who-infected-whom inference for hospital outbreaks.

Reconstructs transmission trees from admission records, screening results
and pairwise SNP distances via data-augmented MCMC, forward-simulates
outbreaks under the same models, and scores reconstructions against
simulated truth (ROC/AUC, group recovery, posterior predictive checks).
"""

__version__ = "0.1.0"

from .data import (
    Dataset,
    DataFormatError,
    DataValidationError,
    DistanceMatrix,
    EpisodeRecord,
    IsolateRecord,
    Screen,
    load_dataset,
    observed_positive_set,
    write_dataset,
)
from .likelihood import (
    GEOMETRIC,
    IMPORTATION_STRUCTURE,
    POISSON,
    TRANSMISSION_DIVERSITY,
    ModelParams,
    ParameterDomainError,
    ScreenCounts,
    genetic_log_lik_is,
    genetic_log_lik_td,
    grouping_log_lik,
    observation_log_lik,
    pair_log_pmf_is,
    pair_log_pmf_td,
    screen_counts,
    total_log_posterior,
    transmission_log_lik,
)
from .priors import BetaPrior, ExponentialPrior, PriorSpec
from .state import (
    IMPORTATION,
    AugmentedState,
    ColonizedCensus,
    StateError,
    census,
    last_colonization_day,
    tree_distance,
    validate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
