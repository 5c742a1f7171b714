"""Aggregation: per-seed regime means, cross-seed summaries, mean ranks,
and retention ratios, plus the CSV record store they are computed from.

Completeness is enforced everywhere: a missing setting, seed, or table cell
raises instead of being silently imputed.  Ranking happens on the cross-seed
means (rank 1 = best, ties get the average rank), and retention is the mean
over datasets of the per-dataset regime/clean ratio.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from . import attacks, corruptions
from .errors import (CompletenessError, FormatError, MetricError,
                     RetentionUndefinedError)

REGIMES = ("clean", "corruption", "fgsm", "pgd")

CSV_HEADER = ("dataset", "model", "seed", "regime", "setting", "metric", "value")

_CORRUPTION_SETTINGS = tuple(s.setting for s in corruptions.corruption_grid())
_ATTACK_SETTINGS = {
    kind: tuple(s.setting for s in attacks.attack_grid(kind)) for kind in ("fgsm", "pgd")
}


def expected_settings(regime: str) -> tuple:
    if regime == "clean":
        return ("",)
    if regime == "corruption":
        return _CORRUPTION_SETTINGS
    if regime in _ATTACK_SETTINGS:
        return _ATTACK_SETTINGS[regime]
    raise FormatError(f"unknown regime {regime!r}")


@dataclass(frozen=True)
class MetricRecord:
    dataset: str
    model: str
    seed: int
    regime: str
    setting: str
    metric_name: str
    value: float

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise FormatError(f"unknown regime {self.regime!r}")
        allowed = expected_settings(self.regime)
        if self.setting not in allowed:
            raise FormatError(
                f"setting {self.setting!r} not valid for regime {self.regime!r}")
        if not math.isfinite(self.value):
            raise FormatError(f"non-finite value {self.value!r}")


def write_records(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([r.dataset, r.model, r.seed, r.regime, r.setting,
                        r.metric_name, repr(float(r.value))])


def read_records(path) -> list:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_HEADER:
            raise FormatError(f"{path}: bad record header {header!r}")
        for row in reader:
            if len(row) != len(CSV_HEADER):
                raise FormatError(f"{path}: bad row {row!r}")
            records.append(MetricRecord(dataset=row[0], model=row[1], seed=int(row[2]),
                                        regime=row[3], setting=row[4],
                                        metric_name=row[5], value=float(row[6])))
    return records


def regime_mean_per_seed(records, dataset: str, model: str, seed: int, regime: str) -> float:
    """Mean over the regime's setting grid for one (dataset, model, seed)."""
    got = {}
    for r in records:
        if (r.dataset, r.model, r.seed, r.regime) == (dataset, model, seed, regime):
            if r.setting in got:
                raise FormatError(
                    f"duplicate record for {dataset}/{model}/seed {seed}/{regime}"
                    f"/{r.setting!r}")
            got[r.setting] = r.value
    expected = expected_settings(regime)
    missing = [s for s in expected if s not in got]
    if missing:
        raise CompletenessError(
            f"{dataset}/{model}/seed {seed}/{regime} missing settings: "
            + ", ".join(repr(s) for s in missing))
    return float(np.mean([got[s] for s in expected]))


@dataclass(frozen=True)
class SummaryTable:
    datasets: tuple
    models: tuple
    seeds: tuple
    regimes: tuple
    cells: dict  # (dataset, model, regime) -> (mean, std)

    def mean(self, dataset, model, regime) -> float:
        return self.cells[(dataset, model, regime)][0]

    def to_rows(self):
        for d in self.datasets:
            for m in self.models:
                for g in self.regimes:
                    mean, std = self.cells[(d, m, g)]
                    yield d, m, g, mean, std

    def write_csv(self, path, regimes=None) -> None:
        keep = self.regimes if regimes is None else regimes
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["dataset", "model", "regime", "mean", "std"])
            for d, m, g, mean, std in self.to_rows():
                if g in keep:
                    w.writerow([d, m, g, repr(mean), repr(std)])


def summarize(records, datasets=None, models=None, seeds=None, regimes=REGIMES) -> SummaryTable:
    """Cross-seed mean and sample (n-1) std of the per-seed regime means."""
    datasets = tuple(datasets) if datasets else tuple(sorted({r.dataset for r in records}))
    models = tuple(models) if models else tuple(sorted({r.model for r in records}))
    seeds = tuple(seeds) if seeds else tuple(sorted({r.seed for r in records}))
    regimes = tuple(regimes)
    if not records:
        raise CompletenessError("no records to summarize")
    cells = {}
    for d in datasets:
        for m in models:
            for g in regimes:
                per_seed = [regime_mean_per_seed(records, d, m, s, g) for s in seeds]
                arr = np.asarray(per_seed, dtype=np.float64)
                std = float(arr.std(ddof=1)) if len(seeds) > 1 else 0.0
                cells[(d, m, g)] = (float(arr.mean()), std)
    return SummaryTable(datasets=datasets, models=models, seeds=seeds,
                        regimes=regimes, cells=cells)


def _descending_average_ranks(values: np.ndarray) -> np.ndarray:
    # rank 1 = largest value; ties share the average rank
    from .metrics import _average_ranks

    return len(values) + 1.0 - _average_ranks(np.asarray(values, dtype=np.float64))


def mean_ranks(table: SummaryTable, regime: str) -> dict:
    """Average over datasets of each model's within-dataset rank (1 = best)."""
    if regime not in table.regimes:
        raise MetricError(f"regime {regime!r} not in summary")
    totals = {m: 0.0 for m in table.models}
    for d in table.datasets:
        try:
            values = np.array([table.mean(d, m, regime) for m in table.models])
        except KeyError as e:
            raise CompletenessError(f"summary missing cell {e.args[0]!r}") from None
        ranks = _descending_average_ranks(values)
        for m, r in zip(table.models, ranks):
            totals[m] += float(r)
    return {m: totals[m] / len(table.datasets) for m in table.models}


def retention(table: SummaryTable, model: str, regime: str) -> float:
    """Mean over datasets of regime_mean / clean_mean for one model."""
    ratios = []
    for d in table.datasets:
        try:
            clean = table.mean(d, model, "clean")
            value = table.mean(d, model, regime)
        except KeyError as e:
            raise CompletenessError(f"summary missing cell {e.args[0]!r}") from None
        if clean == 0.0:
            raise RetentionUndefinedError(f"{model}/{d}: clean mean is zero")
        ratios.append(value / clean)
    return float(np.mean(ratios))


def severity_curve(records, kind: str) -> list:
    """Rows (model, severity, mean over datasets of the seed-mean) for one kind."""
    if kind not in corruptions.KINDS:
        raise MetricError(f"unknown corruption kind {kind!r}")
    models = tuple(sorted({r.model for r in records}))
    datasets = tuple(sorted({r.dataset for r in records}))
    seeds = tuple(sorted({r.seed for r in records}))
    by_key = {}
    for r in records:
        if r.regime == "corruption" and r.setting.startswith(kind + ":"):
            by_key.setdefault((r.model, r.setting, r.dataset), {})[r.seed] = r.value
    rows = []
    for m in models:
        for sev in corruptions.SEVERITIES:
            setting = f"{kind}:{sev}"
            per_ds = []
            for d in datasets:
                cell = by_key.get((m, setting, d))
                if cell is None or any(s not in cell for s in seeds):
                    raise CompletenessError(f"missing {m}/{d}/{setting} records")
                per_ds.append(np.mean([cell[s] for s in seeds]))
            rows.append((m, sev, float(np.mean(per_ds))))
    return rows


def records_from_means(rows, seeds) -> list:
    """Expand (dataset, model, regime, metric, mean) rows into a full record set.

    Every seed and every setting of the regime receives the same value, so
    summaries built from the result have exactly those means with zero std.
    Used by the inject pathway to replay published tables.
    """
    records = []
    for dataset, model, regime, metric_name, value in rows:
        for seed in seeds:
            for setting in expected_settings(regime):
                records.append(MetricRecord(dataset=dataset, model=model, seed=int(seed),
                                            regime=regime, setting=setting,
                                            metric_name=metric_name, value=float(value)))
    return records


def read_means_csv(path) -> list:
    """Read a per-cell means table: dataset,model,regime,metric,value."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != ("dataset", "model", "regime", "metric", "value"):
            raise FormatError(f"{path}: bad means header {header!r}")
        for row in reader:
            if len(row) != 5:
                raise FormatError(f"{path}: bad row {row!r}")
            rows.append((row[0], row[1], row[2], row[3], float(row[4])))
    return rows


def ranks_report(table: SummaryTable) -> dict:
    return {regime: mean_ranks(table, regime) for regime in table.regimes}


def retention_report(table: SummaryTable) -> dict:
    if "clean" not in table.regimes:
        raise CompletenessError("retention needs the clean regime in the summary")
    out = {}
    for m in table.models:
        out[m] = {regime: retention(table, m, regime)
                  for regime in table.regimes if regime != "clean"}
    return out


def write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
