"""Command-line entry point: ingest, run, plotdata.

Exit codes: 0 success, 1 runtime failure, 2 usage or schema error. Runs
are driven by one declarative JSON config; rerunning with an equal
manifest reproduces the output files byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import ingest as ingest_mod
from . import pipeline as pipeline_mod
from . import synth as synth_mod
from .core import build_valid_day_calendar
from .ingest import SchemaError, StagedDataset
from .trees import FitParams

USAGE_ERROR = 2
RUNTIME_ERROR = 1


class ConfigError(ValueError):
    """Bad run configuration; reported with exit code 2."""


def _fit_params(defaults: FitParams, overrides: dict | None) -> FitParams:
    if not overrides:
        return defaults
    unknown = set(overrides) - set(defaults.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"unknown learner parameter(s): {sorted(unknown)}")
    return replace(defaults, **overrides)


class RunConfig:
    """Declarative run description loaded from one JSON file."""

    def __init__(self, raw: dict, base_dir: Path):
        self.raw = raw
        self.base_dir = base_dir
        has_inputs = "inputs" in raw
        has_synth = "synth" in raw
        if has_inputs == has_synth:
            raise ConfigError("config needs exactly one of 'inputs' or 'synth'")
        self.seed = int(raw.get("seed", 0))
        self.out = base_dir / raw.get("out", "out")
        fractions = raw.get("split", [0.8, 0.1, 0.1])
        if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be three numbers summing to 1: {fractions}")
        self.fractions = tuple(float(f) for f in fractions)
        self.clusters = int(raw.get("clusters", 4))
        self.boosted = _fit_params(FitParams.boosted_defaults(seed=self.seed),
                                   raw.get("boosted"))
        self.forest = _fit_params(FitParams.forest_defaults(seed=self.seed),
                                  raw.get("forest"))
        self.scenario = raw.get("scenario", "both")
        if self.scenario not in ("sweep", "baseline", "both"):
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        self.days = parse_days(raw["days"]) if "days" in raw else None
        self.jobs = int(raw.get("jobs", 0)) or None  # None: decided at run time
        self.cache_models = bool(raw.get("cache_models", False))
        self.test_year = int(raw.get("test_year", 2023))

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
        return cls(raw, path.parent)

    def synth_config(self) -> synth_mod.SynthConfig:
        section = dict(self.raw["synth"])
        section.setdefault("seed", self.seed)
        if "years" in section:
            section["years"] = tuple(section["years"])
        if "weekday_profile" in section:
            section["weekday_profile"] = tuple(section["weekday_profile"])
        if "group_day_signal" in section and section["group_day_signal"] is not None:
            section["group_day_signal"] = tuple(section["group_day_signal"])
        if "volume_ranges" in section:
            section["volume_ranges"] = {
                tuple(k.split("/")): tuple(v) for k, v in section["volume_ranges"].items()
            }
        known = set(synth_mod.SynthConfig.__dataclass_fields__)
        unknown = set(section) - known
        if unknown:
            raise ConfigError(f"unknown synth option(s): {sorted(unknown)}")
        return synth_mod.SynthConfig(**section)

    def input_paths(self) -> dict[str, Path]:
        section = self.raw["inputs"]
        if "continuous" not in section or "short" not in section:
            raise ConfigError("'inputs' needs 'continuous' and 'short' paths")
        paths = {
            "continuous": self.base_dir / section["continuous"],
            "short": self.base_dir / section["short"],
        }
        if section.get("attributes"):
            paths["attributes"] = self.base_dir / section["attributes"]
        return paths


def parse_days(spec: str) -> list[int]:
    """'A-B' inclusive day range, e.g. '180-190'."""
    try:
        lo_text, hi_text = str(spec).split("-")
        lo, hi = int(lo_text), int(hi_text)
    except ValueError:
        raise ConfigError(f"bad --days range {spec!r}; expected A-B")
    if not 1 <= lo <= hi <= 365:
        raise ConfigError(f"--days range {spec!r} must satisfy 1 <= A <= B <= 365")
    return list(range(lo, hi + 1))


def stage_dataset(config: RunConfig, out_dir: Path) -> tuple[Path, dict]:
    """Parse (or synthesize) raw inputs and write the staged dataset."""
    raw_dir = out_dir / "raw"
    if "synth" in config.raw:
        synth_config = config.synth_config()
        stations = synth_mod.generate_network(synth_config)
        matrices, short_records, _ = synth_mod.generate_counts(stations, synth_config)
        paths = synth_mod.write_raw_csvs(stations, matrices, short_records, raw_dir)
    else:
        paths = config.input_paths()
        for name, path in paths.items():
            if not path.exists():
                raise SchemaError(f"{name} file not found: {path}")
    continuous = ingest_mod.parse_count_file(paths["continuous"], "continuous")
    short = ingest_mod.parse_count_file(paths["short"], "short")
    rejects = continuous.rejects + short.rejects
    stations = continuous.stations + short.stations
    short_records = short.short_records
    if "attributes" in paths:
        attrs = ingest_mod.parse_count_file(paths["attributes"], "attributes")
        rejects += attrs.rejects
        stations, short_records = ingest_mod.apply_attribute_overrides(
            stations, short_records, attrs.attributes
        )
    daily, incomplete = ingest_mod.aggregate_hourly_to_daily(continuous.rows)
    by_year: dict[int, list] = {}
    for row in daily:
        by_year.setdefault(row.date.year, []).append(row)
    matrices = {
        year: ingest_mod.pivot_to_wide(rows, year) for year, rows in sorted(by_year.items())
    }
    years = set(matrices) | {r.year for r in short_records}
    calendars = {y: build_valid_day_calendar(y) for y in years}
    short_records, dropped_short = ingest_mod.filter_short_records(short_records, calendars)
    staged = StagedDataset(stations=stations, matrices=matrices, short_records=short_records)
    stage_dir = out_dir / "staged"
    ingest_mod.write_staged(staged, rejects, stage_dir)
    summary = {
        "stations": len(stations),
        "daily_rows": len(daily),
        "incomplete_station_days": len(incomplete),
        "short_records": len(short_records),
        "short_dropped_invalid_day": dropped_short,
        "rejects": len(rejects),
    }
    return stage_dir, summary


def cmd_ingest(args: argparse.Namespace) -> int:
    config = RunConfig.load(args.config)
    out_dir = Path(args.out) if args.out else config.out
    out_dir.mkdir(parents=True, exist_ok=True)
    stage_dir, summary = stage_dataset(config, out_dir)
    print(f"staged dataset at {stage_dir}")
    for key, value in summary.items():
        print(f"  {key}: {value}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = RunConfig.load(args.config)
    out_dir = Path(args.out) if args.out else config.out
    stage_dir = out_dir / "staged"
    staged = ingest_mod.read_staged(stage_dir)
    scenario = args.scenario or config.scenario
    days = parse_days(args.days) if args.days else config.days
    if args.jobs is not None:
        jobs = args.jobs
    elif config.jobs is not None:
        jobs = config.jobs
    else:
        import os

        jobs = os.cpu_count() or 1
    settings = pipeline_mod.PipelineSettings(
        seed=config.seed,
        clusters=config.clusters,
        fractions=config.fractions,
        boosted=config.boosted,
        forest=config.forest,
        days=days,
        jobs=jobs,
        scenario=scenario,
        model_cache_dir=str(out_dir / "models") if config.cache_models else None,
        test_year=config.test_year,
    )
    outputs = pipeline_mod.run_pipeline(staged, settings)
    out_dir.mkdir(parents=True, exist_ok=True)
    results_path = out_dir / "results.csv"
    pipeline_mod.write_results_csv(outputs.day_results, outputs.baseline, results_path)
    written = [results_path]
    if outputs.comparison is not None:
        comparison_path = out_dir / "comparison.csv"
        pipeline_mod.write_comparison_csv(outputs.comparison, comparison_path)
        written.append(comparison_path)
    fingerprints = {
        p.name: pipeline_mod.file_sha256(p) for p in sorted(stage_dir.glob("*.csv"))
    }
    manifest = pipeline_mod.build_manifest(settings, fingerprints, outputs)
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    written.append(manifest_path)
    for year, report in sorted(outputs.imputation.items()):
        if report.nothing_to_impute:
            print(f"imputation {year}: nothing to impute")
        else:
            print(
                f"imputation {year}: selected {report.selected} "
                f"(boosted rmse {report.boosted_rmse:.2f}, forest rmse {report.forest_rmse:.2f}), "
                f"filled {report.n_filled} cells"
            )
    if outputs.ranking:
        print(pipeline_mod.format_top_table(outputs.ranking))
    if outputs.baseline is not None and outputs.baseline.test is not None:
        b = outputs.baseline.test
        print(
            f"Baseline (all valid days): test RMSE {b.rmse:.2f}, MAE {b.mae:.2f}, "
            f"R2 {b.r2:.4f}, MAPE {b.mape_percent:.2f}%"
        )
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_plotdata(args: argparse.Namespace) -> int:
    results = Path(args.results)
    if not results.exists():
        print(f"results file not found: {results}", file=sys.stderr)
        return RUNTIME_ERROR
    per_day: dict[int, dict] = {}
    with open(results, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = {"day", "split", "rmse"}
        if reader.fieldnames is None or not expected.issubset(reader.fieldnames):
            print(f"malformed results file: {results}", file=sys.stderr)
            return RUNTIME_ERROR
        for row in reader:
            day = int(row["day"])
            if day == 0:
                continue  # the baseline is not a candidate day
            entry = per_day.setdefault(day, {"validation": "", "test": "", "skipped": False})
            if row["split"] == "skipped":
                entry["skipped"] = True
            elif row["split"] in ("validation", "test"):
                entry[row["split"]] = row["rmse"]
    if not per_day:
        print(f"no day results in {results}", file=sys.stderr)
        return RUNTIME_ERROR
    out_path = Path(args.out) if args.out else results.with_name("plotdata.csv")
    with open(out_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["day", "validation_rmse", "test_rmse", "status"])
        for day in sorted(per_day):
            entry = per_day[day]
            status = "skipped" if entry["skipped"] else "ok"
            writer.writerow([day, entry["validation"], entry["test"], status])
    print(f"wrote {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="countday",
        description="Optimal-day selection for short-duration traffic counts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="parse raw count files into a staged dataset")
    p_ingest.add_argument("--config", required=True, help="run config JSON")
    p_ingest.add_argument("--out", help="output directory (overrides config)")

    p_run = sub.add_parser("run", help="run the day sweep and/or baseline")
    p_run.add_argument("--config", required=True, help="run config JSON")
    p_run.add_argument("--scenario", choices=["sweep", "baseline", "both"])
    p_run.add_argument("--days", help="restrict the sweep to days A-B")
    p_run.add_argument("--jobs", type=int, help="parallel day-model fits")
    p_run.add_argument("--out", help="output directory (overrides config)")

    p_plot = sub.add_parser("plotdata", help="emit per-day RMSE series for plotting")
    p_plot.add_argument("results", help="results.csv from a run")
    p_plot.add_argument("--out", help="output file path")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"ingest": cmd_ingest, "run": cmd_run, "plotdata": cmd_plotdata}
    try:
        return handlers[args.command](args)
    except (ConfigError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
