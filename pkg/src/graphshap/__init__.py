"""Shapley value explanations for black-box classifiers, with graph-structured approximations."""

from graphshap.evaluation import aggregate_group, corrupt_and_score, normalize, spearman_rank
from graphshap.explain import ExplainRequest, c_sve, explain, full_sve, h_sve, mc_shapley
from graphshap.game import (
    Attribution,
    CoalitionGame,
    Method,
    exact_shapley_permutation,
    exact_shapley_subset,
    verify_axioms,
)
from graphshap.graph import (
    BinaryAdjacency,
    CommunityPartition,
    FeatureGraph,
    binarize,
    correlation_graph,
    detect_communities,
    distance_graph,
    modularity,
    neighborhood,
)
from graphshap.oracles import (
    LinearSoftmaxOracle,
    LookupOracle,
    OrGateOracle,
    PredictionOracle,
    SubprocessOracle,
)
from graphshap.value import BackgroundDataset, GameConfig, as_game, compose, importance_score, marginal_prediction

__version__ = "0.1.0"
