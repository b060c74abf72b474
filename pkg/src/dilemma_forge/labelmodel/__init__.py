from .borda import StrategyRanking, borda_counts, respondent_borda, scale_weights
from .generative import (
    GenerativeConfig,
    GenerativeFitError,
    GenerativeModel,
    fit_generative,
    log_marginal_likelihood,
    overlap_pairs,
    predict_marginals,
    pseudolikelihood_grad,
    pseudolikelihood_nll,
)
from .voting import TiePolicy, VoteWeights, majority_vote, round_labels, weighted_vote

__all__ = [
    "StrategyRanking", "borda_counts", "respondent_borda", "scale_weights",
    "GenerativeConfig", "GenerativeFitError", "GenerativeModel", "fit_generative",
    "log_marginal_likelihood", "overlap_pairs", "predict_marginals",
    "pseudolikelihood_grad", "pseudolikelihood_nll",
    "TiePolicy", "VoteWeights", "majority_vote", "round_labels", "weighted_vote",
]
