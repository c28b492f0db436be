from .base import (
    Bucketing,
    Bulyan,
    ConfiguredAggregator,
    CoordinateMedian,
    Filtering,
    GeometricMedian,
    Krum,
    MeanAggregator,
    NoRegret,
    RobustLocation,
    TrimmedMean,
)
from .bucketing import bucket_means, bucketize, corrupted_bucket_count, default_bucket_count
from .classical import (
    EstimatorError,
    bulyan,
    bulyan_selection,
    coord_median,
    coord_trimmed_mean,
    geometric_median,
    krum,
    krum_index,
    krum_scores,
    mean,
    weiszfeld,
)
from .config import (
    KINDS,
    AggregationResult,
    EstimatorConfig,
    aggregate,
    aggregate_means,
    aggregate_with_info,
    bucket_count,
    bucketed_aggregate,
    quiet_aggregate,
)
from .filters import FilterResult, WeightCollapseError, filtering, kl_project_capped_simplex, no_regret, prefilter
from .thresholds import ThresholdError, ThresholdSpec, compute_threshold, variance_floor
