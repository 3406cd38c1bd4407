"""countday: optimal-day selection for short-duration traffic counts.

The package turns continuous and short traffic counts (real files or a
synthetic network) into a ranked answer to one question: on which days of
the year does a single 24-hour count best predict a road's annual average
daily traffic?

Submodules:

- ``core``      domain types, ordinal-day arithmetic, valid-day calendars
- ``ingest``    count-file parsing, daily aggregation, wide pivot, staging
- ``trees``     from-scratch gradient-boosted and random-forest learners
- ``features``  grouping, k-means, leave-one-out context features
- ``pipeline``  imputation, splits, metrics, the day sweep, comparisons
- ``synth``     deterministic synthetic network generator
- ``cli``       the ``countday`` command (ingest | run | plotdata)
"""

from .core import (
    DailyCountMatrix,
    ShortCountRecord,
    StationKind,
    StationRecord,
    ValidDayCalendar,
    build_valid_day_calendar,
    day_of_year,
    date_from_day_of_year,
    make_station_id,
    us_federal_holidays,
)
from .features import (
    AllValidDays,
    ClusterAssignment,
    DaySpecific,
    FeatureRow,
    GroupKey,
    GroupPool,
    build_feature_rows,
    build_group_pools,
    cluster_stations,
    combine_functional_class,
    group_area_type,
    kmeans,
    loo_all_valid_days_average,
    loo_day_specific_average,
    standardize,
)
from .ingest import (
    LongCountRow,
    SchemaError,
    StagedDataset,
    aggregate_hourly_to_daily,
    filter_to_valid_days,
    merge_short_counts,
    parse_count_file,
    pivot_to_wide,
    read_staged,
    write_staged,
)
from .pipeline import (
    ComparisonReport,
    DayResult,
    ImputationReport,
    MetricsBundle,
    ModelingDataset,
    PipelineSettings,
    RunOutputs,
    SplitAssignment,
    annual_average,
    compare,
    compute_metrics,
    impute_missing,
    log1p_inverse,
    log1p_transform,
    percent_changes,
    prepare_modeling_dataset,
    rank_days,
    run_pipeline,
    run_scenario1,
    run_scenario2,
    stratified_split,
)
from .synth import SynthConfig, generate_counts, generate_network, mask_random_blocks, mask_random_cells
from .trees import (
    BoostedEnsemble,
    FitParams,
    RandomForestModel,
    RegressionTree,
    fit_boosted,
    fit_forest,
    fit_tree,
    model_from_json,
    predict,
)

__version__ = "0.1.0"
