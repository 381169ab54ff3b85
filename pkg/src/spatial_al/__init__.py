"""Region-based active learning batch selection with uncertainty and spatial/feature diversity."""
from .diversity import (
    LINEAR,
    PIECEWISE,
    DistanceSpec,
    check_metric_conditions,
    feature_distance,
    normalized_combined_distance,
    spatial_distance_linear,
    spatial_distance_piecewise,
    validate_metric,
)
from .errors import (
    ConfigError,
    FormatError,
    InstanceTooLargeError,
    InvalidInputError,
    PoolExhaustedError,
)
from .features import fit_pca, pca_project, pca_reconstruct, pool_region_features
from .regions import (
    PoolState,
    RegionGrid,
    RegionId,
    batch_schedule,
    build_grid,
    commit_batch,
    init_labeled_pool,
)
from .scoring import PosteriorTensor, ScoreTable, pixel_entropy, region_uncertainty, score_pool
from .selection import (
    MAX_MIN,
    MAX_SUM,
    PRESETS,
    MinDistCache,
    SelectionConfig,
    SelectionResult,
    brute_force_select,
    greedy_select,
    max_sum_greedy_select,
    potential,
    preset,
    random_select,
    update_min_dist_cache,
)

__version__ = "0.1.0"
