"""Cluster-curriculum learning for generative models.

Order data by stationary-probability centrality on a kNN digraph, sweep
cumulative or active-set curricula against a pluggable trainer and
metric, and locate the percolation critical point of a Gaussian cluster.
"""

__version__ = "0.1.0"

from .centrality import (
    CentralityRanking,
    StationaryCentrality,
    WeightedDigraph,
    build_digraph,
    calibrate_sigma,
    default_k,
    pairwise_knn,
    stationary_centrality,
)
from .curriculum import (
    ActiveSetConfig,
    CurriculumSchedule,
    CurriculumSearch,
    ScoreCurve,
    build_schedule,
    run_active_set,
    run_normal,
    sample_history,
    select_optimal,
)
from .features import FeatureSet, load_features, read_binary, read_csv, write_binary, write_csv
from .geometry import (
    EllipsoidSummary,
    PercolationAnalysis,
    PercolationCurve,
    annulus_count_log,
    critical_point,
    ellipsoid_volume_log,
    fit_ellipsoid,
    mahalanobis_norm,
    packing_count_log,
    packing_ratio,
    percolation_curve,
    solve_epsilon,
)
from .simulation import (
    FrechetScore,
    GaussianModelState,
    GaussianTrainer,
    GMMTrainer,
    SyntheticSpec,
    frechet_distance,
    generate_synthetic,
    score_against_reference,
    vshape_experiment,
)
