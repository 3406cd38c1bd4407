"""Orchestration: imputation, target transform, splitting, the candidate-day
sweep, the all-valid-days baseline, metrics, and comparison reporting.

All reported metrics live on the original AADT scale; the log1p transform
is inverted before any metric is computed. The 365 day-models share one
hyperparameter set so that differences between days reflect the day, not
the tuning.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import pickle
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    DAYS_PER_YEAR,
    DailyCountMatrix,
    ShortCountRecord,
    StationKind,
    StationRecord,
    ValidDayCalendar,
    build_valid_day_calendar,
)
from .features import (
    AllValidDays,
    ClusterAssignment,
    DaySpecific,
    GroupKey,
    GroupPool,
    MODEL_FEATURES,
    Scenario,
    build_feature_rows,
    build_group_pools,
    cluster_stations,
    combine_functional_class,
    group_area_type,
    CLASS_CODES,
    AREA_CODES,
)
from .ingest import StagedDataset, filter_short_records
from .trees import FitParams, fit_boosted, fit_forest, _params_to_dict

MAPE_EPSILON = 1e-5

TRAIN, VALIDATION, TEST = "train", "validation", "test"


class DegenerateActualsError(ValueError):
    """R-squared is undefined: the actual values carry no variance."""


def log1p_transform(y: np.ndarray | float) -> np.ndarray | float:
    """log(1+y) target compression for heavy-tailed AADT."""
    arr = np.asarray(y, dtype=float)
    if np.any(arr < 0):
        raise ValueError("log1p transform requires non-negative values")
    out = np.log1p(arr)
    return float(out) if np.isscalar(y) or arr.ndim == 0 else out


def log1p_inverse(y_hat: np.ndarray | float) -> np.ndarray | float:
    """exp(y)-1, returning predictions to the original AADT scale."""
    arr = np.asarray(y_hat, dtype=float)
    out = np.expm1(arr)
    return float(out) if np.isscalar(y_hat) or arr.ndim == 0 else out


@dataclass(frozen=True)
class MetricsBundle:
    """RMSE, MAE, R2, and MAPE (percent) over n evaluated rows."""

    rmse: float
    mae: float
    r2: float
    mape_percent: float
    n: int


def compute_metrics(actual: np.ndarray, predicted: np.ndarray) -> MetricsBundle:
    """Standard regression metrics on the original AADT scale.

    MAPE uses a 1e-5 epsilon in the denominator to survive zero actuals.
    Needs at least two rows with non-constant actuals, since R2 divides by
    the total variance.
    """
    y = np.asarray(actual, dtype=float)
    y_hat = np.asarray(predicted, dtype=float)
    if y.shape != y_hat.shape or y.ndim != 1:
        raise ValueError(f"length mismatch: {y.shape} vs {y_hat.shape}")
    if y.size < 2:
        raise ValueError("need at least 2 rows to compute metrics")
    if np.any(y < 0) or not np.all(np.isfinite(y)) or not np.all(np.isfinite(y_hat)):
        raise ValueError("metrics need finite predictions and non-negative actuals")
    err = y - y_hat
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise DegenerateActualsError("constant actuals: R2 denominator is zero")
    rmse = float(np.sqrt(np.mean(err**2)))
    mae = float(np.mean(np.abs(err)))
    r2 = 1.0 - float(np.sum(err**2)) / ss_tot
    mape = 100.0 * float(np.mean(np.abs(err / (y + MAPE_EPSILON))))
    return MetricsBundle(rmse=rmse, mae=mae, r2=r2, mape_percent=mape, n=int(y.size))


def annual_average(matrix: DailyCountMatrix) -> dict[tuple[str, int], float]:
    """Per-station mean daily volume over every available (observed or
    imputed) day; stations with no available day are omitted."""
    out: dict[tuple[str, int], float] = {}
    for i, sid in enumerate(matrix.station_ids):
        available = matrix.mask[i]
        if available.any():
            out[(sid, matrix.year)] = float(matrix.values[i, available].mean())
    return out


# --- imputation -------------------------------------------------------------

IMPUTE_FEATURES = (
    "combined_class", "lanes", "area_group", "latitude", "longitude",
    "day_sin", "day_cos", "own_valid_mean",
)


@dataclass
class ImputationReport:
    """Bake-off outcome for one year's matrix."""

    year: int
    n_missing_valid: int
    n_filled: int
    n_holdout: int
    boosted_rmse: float | None
    boosted_r2: float | None
    forest_rmse: float | None
    forest_r2: float | None
    selected: str | None
    flagged_stations: list[str] = field(default_factory=list)
    holdout_cells: list[tuple[str, int, float]] = field(default_factory=list)
    nothing_to_impute: bool = False

    def summary(self) -> dict:
        return {
            "year": self.year,
            "n_missing_valid": self.n_missing_valid,
            "n_filled": self.n_filled,
            "n_holdout": self.n_holdout,
            "boosted_rmse": self.boosted_rmse,
            "boosted_r2": self.boosted_r2,
            "forest_rmse": self.forest_rmse,
            "forest_r2": self.forest_r2,
            "selected": self.selected,
            "flagged_stations": sorted(self.flagged_stations),
            "nothing_to_impute": self.nothing_to_impute,
        }


def pick_imputation_winner(boosted_rmse: float, forest_rmse: float) -> str:
    """Lower holdout RMSE wins; the forest takes exact ties."""
    return "forest" if forest_rmse <= boosted_rmse else "boosted"


def _rmse_r2(actual: np.ndarray, predicted: np.ndarray) -> tuple[float, float]:
    err = actual - predicted
    rmse = float(np.sqrt(np.mean(err**2)))
    ss_tot = float(np.sum((actual - actual.mean()) ** 2))
    r2 = float("nan") if ss_tot == 0 else 1.0 - float(np.sum(err**2)) / ss_tot
    return rmse, r2


def _station_statics(station: StationRecord) -> tuple[float, float, float, float, float]:
    return (
        float(CLASS_CODES[combine_functional_class(station.functional_class)]),
        float(station.lanes),
        float(AREA_CODES[group_area_type(station.area_type)]),
        station.latitude,
        station.longitude,
    )


def _impute_matrix(
    statics: np.ndarray,
    own_mean: np.ndarray,
    cells: np.ndarray,
) -> np.ndarray:
    """Feature rows for (station index, day index) cells."""
    days = cells[:, 1] + 1
    angle = 2.0 * np.pi * days / DAYS_PER_YEAR
    return np.column_stack(
        [
            statics[cells[:, 0]],
            np.sin(angle),
            np.cos(angle),
            own_mean[cells[:, 0]],
        ]
    )


def _own_means(
    matrix: DailyCountMatrix, cell_mask: np.ndarray, valid: np.ndarray
) -> tuple[np.ndarray, list[int]]:
    """Per-station mean over the given cells, preferring valid days.

    Falls back to the station's any-day mean, then the global mean, and
    reports stations that had nothing at all to average.
    """
    n = matrix.n_stations
    means = np.empty(n)
    flagged: list[int] = []
    global_pool = matrix.values[cell_mask]
    global_mean = float(global_pool.mean()) if global_pool.size else 0.0
    for i in range(n):
        use = cell_mask[i] & valid
        if not use.any():
            use = cell_mask[i]
        if not use.any():
            flagged.append(i)
            means[i] = global_mean
            continue
        means[i] = matrix.values[i, use].mean()
    return means, flagged


def impute_missing(
    matrix: DailyCountMatrix,
    stations: list[StationRecord],
    seed: int,
    boosted_params: FitParams | None = None,
    forest_params: FitParams | None = None,
    calendar: ValidDayCalendar | None = None,
) -> tuple[DailyCountMatrix, ImputationReport]:
    """Fill missing valid-day cells with the better of two learner families.

    Both families train on the observed cells (minus a per-station 10%
    holdout used to pick the winner); the winner is refit on everything
    observed and fills the missing valid-day cells. Stations with no
    observed cell at all are flagged and contribute no training targets.
    """
    if calendar is None:
        calendar = build_valid_day_calendar(matrix.year)
    valid = calendar.mask_array()
    missing_valid = ~matrix.mask & valid[None, :]
    n_missing = int(missing_valid.sum())
    station_by_id = {s.station_id: s for s in stations if s.year == matrix.year}
    unknown = [sid for sid in matrix.station_ids if sid not in station_by_id]
    if unknown:
        raise ValueError(f"no station attributes for matrix rows: {unknown[:3]}")
    if n_missing == 0:
        report = ImputationReport(
            year=matrix.year, n_missing_valid=0, n_filled=0, n_holdout=0,
            boosted_rmse=None, boosted_r2=None, forest_rmse=None, forest_r2=None,
            selected=None, nothing_to_impute=True,
        )
        return matrix, report
    boosted_params = boosted_params or FitParams.boosted_defaults()
    forest_params = forest_params or FitParams.forest_defaults()
    statics = np.array([_station_statics(station_by_id[sid]) for sid in matrix.station_ids])

    observed = np.argwhere(matrix.mask)
    if observed.shape[0] < 10:
        raise ValueError("too few observed cells to train an imputation model")
    rng = np.random.default_rng([seed, matrix.year])
    holdout_flags = np.zeros(observed.shape[0], dtype=bool)
    by_station: dict[int, list[int]] = {}
    for pos, (i, _) in enumerate(observed):
        by_station.setdefault(int(i), []).append(pos)
    for i, positions in sorted(by_station.items()):
        k = int(round(0.1 * len(positions)))
        if k > 0:
            chosen = rng.choice(len(positions), size=k, replace=False)
            holdout_flags[np.array(positions)[chosen]] = True
    holdout = observed[holdout_flags]
    train = observed[~holdout_flags]

    train_mask = matrix.mask.copy()
    train_mask[holdout[:, 0], holdout[:, 1]] = False
    own_train, _ = _own_means(matrix, train_mask, valid)
    X_train = _impute_matrix(statics, own_train, train)
    y_train = matrix.values[train[:, 0], train[:, 1]]
    X_hold = _impute_matrix(statics, own_train, holdout)
    y_hold = matrix.values[holdout[:, 0], holdout[:, 1]]

    seed_base = (seed * 100003 + matrix.year) % (2**31)
    boosted = fit_boosted(X_train, y_train, boosted_params.with_seed(seed_base),
                          feature_schema=list(IMPUTE_FEATURES))
    forest = fit_forest(X_train, y_train, forest_params.with_seed(seed_base + 1),
                        feature_schema=list(IMPUTE_FEATURES))
    boosted_rmse, boosted_r2 = _rmse_r2(y_hold, boosted.predict(X_hold))
    forest_rmse, forest_r2 = _rmse_r2(y_hold, forest.predict(X_hold))
    selected = pick_imputation_winner(boosted_rmse, forest_rmse)

    own_full, flagged_idx = _own_means(matrix, matrix.mask, valid)
    X_full = _impute_matrix(statics, own_full, observed)
    y_full = matrix.values[observed[:, 0], observed[:, 1]]
    if selected == "forest":
        final = fit_forest(X_full, y_full, forest_params.with_seed(seed_base + 2),
                           feature_schema=list(IMPUTE_FEATURES))
    else:
        final = fit_boosted(X_full, y_full, boosted_params.with_seed(seed_base + 2),
                            feature_schema=list(IMPUTE_FEATURES))
    to_fill = np.argwhere(missing_valid)
    predictions = np.clip(final.predict(_impute_matrix(statics, own_full, to_fill)), 0.0, None)
    values = matrix.values.copy()
    mask = matrix.mask.copy()
    values[to_fill[:, 0], to_fill[:, 1]] = predictions
    mask[to_fill[:, 0], to_fill[:, 1]] = True
    report = ImputationReport(
        year=matrix.year,
        n_missing_valid=n_missing,
        n_filled=int(to_fill.shape[0]),
        n_holdout=int(holdout.shape[0]),
        boosted_rmse=boosted_rmse,
        boosted_r2=boosted_r2,
        forest_rmse=forest_rmse,
        forest_r2=forest_r2,
        selected=selected,
        flagged_stations=[matrix.station_ids[i] for i in flagged_idx],
        holdout_cells=[
            (matrix.station_ids[int(i)], int(d) + 1, float(matrix.values[i, d]))
            for i, d in holdout
        ],
    )
    return matrix.replace(values, mask), report


# --- cluster-stratified split ----------------------------------------------


@dataclass
class SplitAssignment:
    """Station-year to train/validation/test roles, cluster-stratified."""

    roles: dict[tuple[str, int], str]
    seed: int
    fractions: tuple[float, float, float]
    test_year: int
    fingerprint: str

    def members(self, role: str) -> list[tuple[str, int]]:
        return sorted(k for k, r in self.roles.items() if r == role)


def _allocate_counts(n: int, fractions: tuple[float, float, float]) -> tuple[int, int, int]:
    """Largest-remainder allocation of (train, test, validation) counts.

    Remainder priority is train, then test, then validation.
    """
    train_f, val_f, test_f = fractions
    ideal = [train_f * n, test_f * n, val_f * n]
    base = [int(math.floor(x + 1e-9)) for x in ideal]
    remainders = [x - b for x, b in zip(ideal, base)]
    leftover = n - sum(base)
    order = sorted(range(3), key=lambda i: (-remainders[i], i))
    for i in order[:leftover]:
        base[i] += 1
    return base[0], base[1], base[2]


def stratified_split(
    stations: list[StationRecord],
    clusters: ClusterAssignment,
    seed: int,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
    test_year: int = 2023,
) -> SplitAssignment:
    """80/10/10 split per cluster with every test station drawn from test_year.

    Deterministic given the seed. Raises when a cluster has no test-year
    station, or too few to cover its test quota.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    by_cluster: dict[int, list[StationRecord]] = {}
    for s in stations:
        by_cluster.setdefault(clusters.labels[s.key], []).append(s)
    rng = np.random.default_rng(seed)
    roles: dict[tuple[str, int], str] = {}
    for label in sorted(by_cluster):
        members = sorted(by_cluster[label], key=lambda s: s.key)
        n = len(members)
        train_n, test_n, val_n = _allocate_counts(n, fractions)
        from_year = [s for s in members if s.year == test_year]
        if not from_year:
            raise ValueError(f"cluster {label} has no station from {test_year}")
        if len(from_year) < test_n:
            raise ValueError(
                f"cluster {label} has only {len(from_year)} stations from {test_year}, "
                f"but needs {test_n} for the test split"
            )
        year_order = rng.permutation(len(from_year))
        test_members = {from_year[i].key for i in year_order[:test_n]}
        rest = [s for s in members if s.key not in test_members]
        rest_order = rng.permutation(len(rest))
        for pos, idx in enumerate(rest_order):
            roles[rest[idx].key] = TRAIN if pos < train_n else VALIDATION
        for key in test_members:
            roles[key] = TEST
    payload = json.dumps(
        {"seed": seed, "fractions": fractions, "test_year": test_year,
         "roles": sorted([k[0], k[1], r] for k, r in roles.items())},
        sort_keys=True,
    )
    fingerprint = hashlib.sha256(payload.encode()).hexdigest()
    return SplitAssignment(
        roles=roles, seed=seed, fractions=fractions, test_year=test_year,
        fingerprint=fingerprint,
    )


# --- scenario models ---------------------------------------------------------


@dataclass
class ModelingDataset:
    """Everything a day-model needs, frozen before the sweep starts."""

    stations: list[StationRecord]
    pools: dict[GroupKey, GroupPool]
    targets: dict[tuple[str, int], float]
    calendars: dict[int, ValidDayCalendar]
    split: SplitAssignment
    clusters: ClusterAssignment


@dataclass
class DayResult:
    """Validation and test metrics of one candidate-day model.

    Day 0 denotes the all-valid-days baseline. A skipped result carries
    the reason instead of metrics.
    """

    day: int
    validation: MetricsBundle | None
    test: MetricsBundle | None
    dropped_rows: int
    split_fingerprint: str
    skipped: bool = False
    reason: str | None = None
    model_ref: str | None = None


def _skipped(day: int, fingerprint: str, dropped: int, reason: str) -> DayResult:
    return DayResult(
        day=day, validation=None, test=None, dropped_rows=dropped,
        split_fingerprint=fingerprint, skipped=True, reason=reason,
    )


def fit_day_model(
    dataset: ModelingDataset,
    params: FitParams,
    scenario: Scenario,
    cache_dir: str | Path | None = None,
) -> DayResult:
    """Train one boosted model for a scenario and evaluate both eval splits."""
    day = scenario.day if isinstance(scenario, DaySpecific) else 0
    fingerprint = dataset.split.fingerprint
    rows = build_feature_rows(
        dataset.stations, dataset.pools, scenario, dataset.targets,
        dataset.calendars, allow_invalid_day=True,
    )
    usable = [r for r in rows if r.available and r.target_log is not None]
    dropped = len(rows) - len(usable)
    groups: dict[str, list] = {TRAIN: [], VALIDATION: [], TEST: []}
    for row in usable:
        role = dataset.split.roles.get(row.key)
        if role is not None:
            groups[role].append(row)
    if not groups[TRAIN]:
        return _skipped(day, fingerprint, dropped, "no usable training rows")
    X_train = np.vstack([r.vector() for r in groups[TRAIN]])
    y_train = np.array([r.target_log for r in groups[TRAIN]])
    model = fit_boosted(X_train, y_train, params, feature_schema=list(MODEL_FEATURES))
    metrics: dict[str, MetricsBundle] = {}
    for role in (VALIDATION, TEST):
        if len(groups[role]) < 2:
            return _skipped(day, fingerprint, dropped, f"fewer than 2 usable {role} rows")
        X = np.vstack([r.vector() for r in groups[role]])
        actual = np.array([dataset.targets[r.key] for r in groups[role]])
        predicted = log1p_inverse(model.predict(X))
        try:
            metrics[role] = compute_metrics(actual, predicted)
        except DegenerateActualsError:
            return _skipped(day, fingerprint, dropped, f"constant actuals in {role} split")
    model_ref = None
    if cache_dir is not None:
        cache = Path(cache_dir)
        cache.mkdir(parents=True, exist_ok=True)
        name = f"day_{day:03d}.json" if day else "baseline.json"
        (cache / name).write_text(model.to_json())
        model_ref = str(cache / name)
    return DayResult(
        day=day, validation=metrics[VALIDATION], test=metrics[TEST],
        dropped_rows=dropped, split_fingerprint=fingerprint, model_ref=model_ref,
    )


_WORKER_STATE: dict = {}


def _sweep_worker_init(blob: bytes) -> None:
    _WORKER_STATE["args"] = pickle.loads(blob)


def _sweep_worker(day: int) -> DayResult:
    dataset, params, cache_dir = _WORKER_STATE["args"]
    return fit_day_model(dataset, params, DaySpecific(day), cache_dir)


def run_scenario1(
    dataset: ModelingDataset,
    params: FitParams,
    days: list[int] | None = None,
    jobs: int = 1,
    cache_dir: str | Path | None = None,
) -> list[DayResult]:
    """Train one model per candidate day; results come back in day order.

    Every requested day is attempted, calendar-valid or not; days without
    usable rows are marked skipped rather than dropped.
    """
    if days is None:
        days = list(range(1, DAYS_PER_YEAR + 1))
    if jobs <= 1 or len(days) <= 1:
        return [fit_day_model(dataset, params, DaySpecific(d), cache_dir) for d in days]
    blob = pickle.dumps((dataset, params, cache_dir))
    with ProcessPoolExecutor(
        max_workers=jobs, initializer=_sweep_worker_init, initargs=(blob,)
    ) as pool:
        results = list(pool.map(_sweep_worker, days))
    return sorted(results, key=lambda r: r.day)


def run_scenario2(
    dataset: ModelingDataset,
    params: FitParams,
    cache_dir: str | Path | None = None,
) -> DayResult:
    """The no-optimal-day baseline: one model on the all-valid-days average."""
    return fit_day_model(dataset, params, AllValidDays(), cache_dir)


def rank_days(results: list[DayResult], top_n: int = 5) -> list[DayResult]:
    """Total order by (validation RMSE, day index); skipped days excluded."""
    scored = [r for r in results if not r.skipped and r.validation is not None]
    return sorted(scored, key=lambda r: (r.validation.rmse, r.day))[:top_n]


# --- comparison --------------------------------------------------------------

METRIC_FIELDS = ("rmse", "mae", "r2", "mape")


def percent_changes(baseline: MetricsBundle, day: MetricsBundle) -> dict[str, float]:
    """Percent reduction for error metrics, percent increase for R2."""
    return {
        "rmse": (baseline.rmse - day.rmse) / baseline.rmse * 100.0,
        "mae": (baseline.mae - day.mae) / baseline.mae * 100.0,
        "r2": (day.r2 - baseline.r2) / baseline.r2 * 100.0,
        "mape": (baseline.mape_percent - day.mape_percent) / baseline.mape_percent * 100.0,
    }


@dataclass
class DayComparison:
    day: int
    test: MetricsBundle
    changes: dict[str, float]


@dataclass
class ComparisonReport:
    """Test-set metrics of selected days against the baseline."""

    baseline: MetricsBundle
    days: list[DayComparison]


def compare(baseline: DayResult, top_days: list[DayResult]) -> ComparisonReport:
    """Percent change per metric for each selected day versus the baseline.

    All inputs must come from the same split; mismatched fingerprints mean
    the test rows differ and the comparison would be meaningless.
    """
    if baseline.skipped or baseline.test is None:
        raise ValueError("baseline carries no test metrics")
    comparisons = []
    for result in top_days:
        if result.split_fingerprint != baseline.split_fingerprint:
            raise ValueError(
                f"day {result.day} was evaluated on a different split than the baseline"
            )
        if result.skipped or result.test is None:
            continue
        comparisons.append(
            DayComparison(
                day=result.day,
                test=result.test,
                changes=percent_changes(baseline.test, result.test),
            )
        )
    return ComparisonReport(baseline=baseline.test, days=comparisons)


# --- dataset preparation and full runs ---------------------------------------


@dataclass
class PipelineSettings:
    """One bundle of knobs for a full reproducible run."""

    seed: int = 0
    clusters: int = 4
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    boosted: FitParams = field(default_factory=FitParams.boosted_defaults)
    forest: FitParams = field(default_factory=FitParams.forest_defaults)
    days: list[int] | None = None
    jobs: int = 1
    scenario: str = "both"  # sweep | baseline | both
    top_n: int = 5
    model_cache_dir: str | None = None
    test_year: int = 2023


@dataclass
class RunOutputs:
    day_results: list[DayResult]
    ranking: list[DayResult]
    baseline: DayResult | None
    comparison: ComparisonReport | None
    imputation: dict[int, ImputationReport]
    dataset: ModelingDataset


def prepare_modeling_dataset(
    staged: StagedDataset, settings: PipelineSettings
) -> tuple[ModelingDataset, dict[int, ImputationReport]]:
    """Impute, derive targets, pool counts, cluster, and split."""
    calendars = {y: build_valid_day_calendar(y) for y in staged.matrices}
    for rec in staged.short_records:
        calendars.setdefault(rec.year, build_valid_day_calendar(rec.year))
    completed: dict[int, DailyCountMatrix] = {}
    reports: dict[int, ImputationReport] = {}
    continuous = staged.continuous_stations
    for year, matrix in sorted(staged.matrices.items()):
        completed[year], reports[year] = impute_missing(
            matrix, continuous, settings.seed,
            boosted_params=settings.boosted, forest_params=settings.forest,
            calendar=calendars[year],
        )
    targets: dict[tuple[str, int], float] = {}
    for matrix in completed.values():
        targets.update(annual_average(matrix))
    shorts, _ = filter_short_records(staged.short_records, calendars)
    model_stations = [s for s in continuous if s.key in targets]
    pools = build_group_pools(model_stations, completed, shorts)
    cluster_inputs = model_stations + [s for s in staged.stations if s.kind is StationKind.SHORT]
    clusters = cluster_stations(cluster_inputs, k=settings.clusters, seed=settings.seed)
    split = stratified_split(
        model_stations, clusters, settings.seed,
        fractions=settings.fractions, test_year=settings.test_year,
    )
    dataset = ModelingDataset(
        stations=model_stations, pools=pools, targets=targets,
        calendars=calendars, split=split, clusters=clusters,
    )
    return dataset, reports


def run_pipeline(staged: StagedDataset, settings: PipelineSettings) -> RunOutputs:
    """Imputation, features, splits, and the requested scenario(s)."""
    dataset, reports = prepare_modeling_dataset(staged, settings)
    day_results: list[DayResult] = []
    ranking: list[DayResult] = []
    baseline = None
    comparison = None
    if settings.scenario in ("sweep", "both"):
        day_results = run_scenario1(
            dataset, settings.boosted, days=settings.days,
            jobs=settings.jobs, cache_dir=settings.model_cache_dir,
        )
        ranking = rank_days(day_results, settings.top_n)
    if settings.scenario in ("baseline", "both"):
        baseline = run_scenario2(dataset, settings.boosted, cache_dir=settings.model_cache_dir)
    if settings.scenario == "both" and baseline is not None and not baseline.skipped:
        comparison = compare(baseline, ranking)
    return RunOutputs(
        day_results=day_results, ranking=ranking, baseline=baseline,
        comparison=comparison, imputation=reports, dataset=dataset,
    )


# --- report files -------------------------------------------------------------


def _metric_cells(bundle: MetricsBundle | None) -> list[str]:
    if bundle is None:
        return ["", "", "", "", ""]
    return [
        repr(bundle.rmse), repr(bundle.mae), repr(bundle.r2),
        repr(bundle.mape_percent), str(bundle.n),
    ]


def write_results_csv(results: list[DayResult], baseline: DayResult | None, path) -> None:
    """Long-format results: one row per (day, split)."""
    rows = list(results)
    if baseline is not None:
        rows = rows + [baseline]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "split", "rmse", "mae", "r2", "mape", "n", "dropped_rows"])
        for r in rows:
            if r.skipped:
                writer.writerow([r.day, "skipped", "", "", "", "", "", r.dropped_rows])
                continue
            for split, bundle in ((VALIDATION, r.validation), (TEST, r.test)):
                cells = _metric_cells(bundle)
                writer.writerow([r.day, split] + cells[:4] + [cells[4], r.dropped_rows])


def write_comparison_csv(report: ComparisonReport, path) -> None:
    """Comparison table: metric rows, baseline plus one column per day."""
    headers = ["metric", "baseline"] + [f"day_{c.day}" for c in report.days]
    lines = []
    for metric, attr in (("rmse", "rmse"), ("mae", "mae"), ("r2", "r2"), ("mape", "mape_percent")):
        values = [f"{getattr(report.baseline, attr):.4f}"]
        changes = [""]
        for c in report.days:
            values.append(f"{getattr(c.test, attr):.4f}")
            changes.append(f"{c.changes[metric]:.2f}")
        lines.append([metric] + values)
        lines.append([f"{metric}_pct_change"] + changes)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        writer.writerows(lines)


def format_top_table(ranking: list[DayResult]) -> str:
    """Validation-RMSE leaderboard in the familiar top-5 table shape."""
    header = ["Metric"] + [f"Day {r.day}" for r in ranking]
    row = ["Validation"] + [f"{r.validation.rmse:.2f}" for r in ranking]
    widths = [max(len(a), len(b)) for a, b in zip(header, row)]
    fmt = "  ".join(f"{{:>{w}}}" for w in widths)
    lines = [
        "Top {} Best Performing Days by Validation RMSE".format(len(ranking)),
        fmt.format(*header),
        fmt.format(*row),
    ]
    return "\n".join(lines)


def file_sha256(path) -> str:
    digest = hashlib.sha256()
    digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def build_manifest(
    settings: PipelineSettings,
    dataset_fingerprints: dict[str, str],
    outputs: RunOutputs,
) -> dict:
    """Everything needed to reproduce a run byte for byte."""
    return {
        "seed": settings.seed,
        "clusters": settings.clusters,
        "fractions": list(settings.fractions),
        "scenario": settings.scenario,
        "days": settings.days,
        "top_n": settings.top_n,
        "test_year": settings.test_year,
        "boosted_params": _params_to_dict(settings.boosted),
        "forest_params": _params_to_dict(settings.forest),
        "dataset_fingerprints": dataset_fingerprints,
        "split_fingerprint": outputs.dataset.split.fingerprint,
        "imputation": {str(y): r.summary() for y, r in outputs.imputation.items()},
    }
