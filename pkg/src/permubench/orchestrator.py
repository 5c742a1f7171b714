"""Run engine: executes (model x dataset x seed) cells, persists records,
and renders the report files.

The record store is an append-only CSV plus an index sidecar listing
finished (dataset, model, seed, regime) cells, so an interrupted matrix
resumes where it stopped and a rerun over a complete store does no work.
Cells are independent; with --jobs N they run in worker processes and the
parent appends results in submission order, keeping stores byte-identical
to a serial run.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import json
import os
import sys
import traceback
from dataclasses import dataclass, field

import numpy as np

from . import aggregate, attacks, corruptions, data, metrics, models
from .aggregate import MetricRecord
from .errors import CompletenessError, DataError, UsageError
from .trainer import DEFAULT_SEEDS, TrainConfig, TrainData, train

ATTACK_CHUNK = 64

RECORDS_NAME = "records.csv"
INDEX_NAME = "index.json"


def _as_tuple(value, default):
    if value is None:
        return tuple(default)
    if isinstance(value, str):
        value = [v for v in value.split(",") if v]
    return tuple(value)


@dataclass(frozen=True)
class RunConfig:
    data_dir: str
    out_dir: str
    models: tuple = models.ARCHS
    datasets: tuple = data.DATASET_NAMES
    seeds: tuple = DEFAULT_SEEDS
    regimes: tuple = aggregate.REGIMES
    train: TrainConfig = field(default_factory=TrainConfig)
    corruption_table: dict | None = None
    attack_epsilons: tuple | None = None
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "models", _as_tuple(self.models, models.ARCHS))
        object.__setattr__(self, "datasets", _as_tuple(self.datasets, data.DATASET_NAMES))
        object.__setattr__(self, "seeds",
                           tuple(int(s) for s in _as_tuple(self.seeds, DEFAULT_SEEDS)))
        object.__setattr__(self, "regimes", _as_tuple(self.regimes, aggregate.REGIMES))
        for m in self.models:
            if m not in models.ARCHS:
                raise UsageError(f"unknown model {m!r}; expected one of {models.ARCHS}")
        for d in self.datasets:
            if d not in data.DATASET_NAMES:
                raise UsageError(f"unknown dataset {d!r}")
        for g in self.regimes:
            if g not in aggregate.REGIMES:
                raise UsageError(f"unknown regime {g!r}")
        if not self.models or not self.datasets or not self.seeds or not self.regimes:
            raise UsageError("empty run scope")
        if self.jobs < 1:
            raise UsageError(f"jobs must be >= 1, got {self.jobs}")
        if self.corruption_table is not None:
            corruptions.validate_table(self.corruption_table)
        if self.attack_epsilons is not None:
            eps = tuple(float(e) for e in self.attack_epsilons)
            allowed = set(attacks.EPSILONS)
            for e in eps:
                if e not in allowed:
                    raise UsageError(f"attack epsilon {e} not in the canonical /255 grid")
            object.__setattr__(self, "attack_epsilons", eps)

    def cells(self):
        for m in self.models:
            for d in self.datasets:
                for s in self.seeds:
                    yield m, d, s


def _parse_corruption_table(raw: dict) -> dict:
    table = {}
    for kind, by_sev in raw.items():
        table[kind] = {}
        for sev, params in by_sev.items():
            table[kind][int(sev)] = tuple(params) if isinstance(params, list) else params
    return table


def load_config(path=None, **overrides) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus flag overrides."""
    payload = {}
    if path:
        with open(path) as fh:
            payload = json.load(fh)
        if not isinstance(payload, dict):
            raise UsageError(f"{path}: config must be a JSON object")
    merged = dict(payload)
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    if "train" in merged and isinstance(merged["train"], dict):
        merged["train"] = TrainConfig(**merged["train"])
    if merged.get("corruption_table") is not None:
        merged["corruption_table"] = _parse_corruption_table(merged["corruption_table"])
    unknown = set(merged) - {f.name for f in dataclasses.fields(RunConfig)}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    if "data_dir" not in merged:
        merged["data_dir"] = data.find_data_dir()
    if merged.get("data_dir") is None:
        raise UsageError("no data directory: pass --data-dir, set it in the config "
                         "file, or export PERMUBENCH_DATA_DIR")
    if "out_dir" not in merged or merged["out_dir"] is None:
        raise UsageError("no output directory: pass --out-dir or set it in the config")
    return RunConfig(**merged)


def run_cell(cfg: RunConfig, model: str, dataset_name: str, seed: int) -> list:
    """Train one (model, dataset, seed) cell and evaluate its regimes."""
    ds = data.load_npz(data.dataset_path(cfg.data_dir, dataset_name), name=dataset_name)
    spec = models.default_spec(model, ds.num_classes)
    params, _ = train(spec, TrainData.from_dataset(ds), cfg.train, seed)
    run_spec = dataclasses.replace(spec, seed=seed)
    fwd = lambda p, x: models.forward(run_spec, p, x)
    test = ds.test
    records = []

    def record(regime, setting, batch):
        res = metrics.evaluate(fwd, params, batch, num_classes=ds.num_classes)
        records.append(MetricRecord(dataset=dataset_name, model=model, seed=seed,
                                    regime=regime, setting=setting,
                                    metric_name=res.metric_name, value=res.value))

    if "clean" in cfg.regimes:
        record("clean", "", test)
    if "corruption" in cfg.regimes:
        for cspec in corruptions.corruption_grid(seed):
            corrupted = corruptions.apply(cspec, test, table=cfg.corruption_table)
            record("corruption", cspec.setting, corrupted)
    for kind in ("fgsm", "pgd"):
        if kind not in cfg.regimes:
            continue
        for aspec in attacks.attack_grid(kind):
            if cfg.attack_epsilons is not None and aspec.epsilon not in cfg.attack_epsilons:
                continue
            chunks = []
            for start in range(0, len(test), ATTACK_CHUNK):
                part = test.take(np.arange(start, min(start + ATTACK_CHUNK, len(test))))
                chunks.append(attacks.attack_batch(aspec, fwd, params, part).images)
            adv = data.ImageBatch(images=np.concatenate(chunks, axis=0),
                                  labels=test.labels, ids=test.ids)
            record(kind, aspec.setting, adv)
    return records


def _load_index(out_dir) -> dict:
    path = os.path.join(out_dir, INDEX_NAME)
    if not os.path.exists(path):
        return {"completed": {}}
    with open(path) as fh:
        return json.load(fh)


def _store_index(out_dir, index) -> None:
    path = os.path.join(out_dir, INDEX_NAME)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _cell_key(dataset, model, seed) -> str:
    return f"{dataset}/{model}/{seed}"


def _append_records(out_dir, records) -> None:
    path = os.path.join(out_dir, RECORDS_NAME)
    fresh = not os.path.exists(path)
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if fresh:
            w.writerow(aggregate.CSV_HEADER)
        for r in records:
            w.writerow([r.dataset, r.model, r.seed, r.regime, r.setting,
                        r.metric_name, repr(float(r.value))])


def run_matrix(cfg: RunConfig) -> dict:
    """Execute every pending cell; returns {"completed": n, "skipped": n, "failures": [...]}."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    for name in cfg.datasets:
        path = data.dataset_path(cfg.data_dir, name)
        if not os.path.exists(path):
            raise DataError(f"dataset file missing: {path}")
    index = _load_index(cfg.out_dir)
    done = index["completed"]
    pending = []
    skipped = 0
    for model, dataset, seed in cfg.cells():
        key = _cell_key(dataset, model, seed)
        if set(cfg.regimes) <= set(done.get(key, [])):
            skipped += 1
        else:
            pending.append((model, dataset, seed))

    failures = []

    def finish(job, result, error):
        model, dataset, seed = job
        if error is not None:
            failures.append((job, error))
            print(f"FAIL {dataset}/{model}/seed {seed}: {error}", file=sys.stderr)
            return
        _append_records(cfg.out_dir, result)
        key = _cell_key(dataset, model, seed)
        done[key] = sorted(set(done.get(key, [])) | set(cfg.regimes))
        _store_index(cfg.out_dir, index)

    if cfg.jobs == 1 or len(pending) <= 1:
        for job in pending:
            try:
                finish(job, run_cell(cfg, *job), None)
            except Exception:
                finish(job, None, traceback.format_exc())
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [(job, pool.submit(run_cell, cfg, *job)) for job in pending]
            for job, fut in futures:
                try:
                    finish(job, fut.result(), None)
                except Exception:
                    finish(job, None, traceback.format_exc())

    return {"completed": len(pending) - len(failures), "skipped": skipped,
            "failures": failures}


def _ordered(present, canonical):
    ordered = [x for x in canonical if x in present]
    return tuple(ordered + sorted(set(present) - set(canonical)))


def _fmt_cell(mean, std):
    return f"{mean:.3f} ± {std:.3f}"


def _write_table_csv(path, table, regimes, ranks):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        header = ["dataset"]
        for regime in regimes:
            header += [f"{m}_{regime}" for m in table.models]
        w.writerow(header)
        for d in table.datasets:
            row = [d]
            for regime in regimes:
                row += [_fmt_cell(*table.cells[(d, m, regime)]) for m in table.models]
            w.writerow(row)
        footer = ["mean_rank"]
        for regime in regimes:
            footer += [f"{ranks[regime][m]:.2f}" for m in table.models]
        w.writerow(footer)


def report(store_dir, report_dir=None) -> list:
    """Render summary tables, rank/retention JSON, and severity curves.

    Everything is computed before any file is written, so a failing check
    leaves no partial output. Returns the list of files written.
    """
    report_dir = report_dir or store_dir
    records_path = os.path.join(store_dir, RECORDS_NAME)
    if not os.path.exists(records_path):
        raise DataError(f"no record store at {records_path}")
    records = aggregate.read_records(records_path)
    if not records:
        raise CompletenessError("record store is empty")

    datasets = _ordered({r.dataset for r in records}, data.DATASET_NAMES)
    model_names = _ordered({r.model for r in records}, models.ARCHS)
    seeds = tuple(sorted({r.seed for r in records}))
    regimes = tuple(g for g in aggregate.REGIMES if any(r.regime == g for r in records))

    table = aggregate.summarize(records, datasets=datasets, models=model_names,
                                seeds=seeds, regimes=regimes)
    ranks = aggregate.ranks_report(table)
    retention = aggregate.retention_report(table) if "clean" in regimes and len(regimes) > 1 \
        else None
    curves = {kind: aggregate.severity_curve(records, kind) for kind in corruptions.KINDS} \
        if "corruption" in regimes else None

    os.makedirs(report_dir, exist_ok=True)
    written = []

    def out(name):
        written.append(os.path.join(report_dir, name))
        return written[-1]

    table_regimes = [g for g in ("clean", "corruption") if g in regimes]
    if table_regimes:
        _write_table_csv(out("clean_corruption.csv"), table, table_regimes, ranks)
    attack_regimes = [g for g in ("fgsm", "pgd") if g in regimes]
    if attack_regimes:
        _write_table_csv(out("attacks.csv"), table, attack_regimes, ranks)
    aggregate.write_json(out("ranks.json"), ranks)
    if retention is not None:
        aggregate.write_json(out("retention.json"), retention)
    if curves is not None:
        curve_dir = os.path.join(report_dir, "severity_curves")
        os.makedirs(curve_dir, exist_ok=True)
        for kind, rows in curves.items():
            name = os.path.join("severity_curves", f"{kind}.csv")
            with open(out(name), "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["model", "severity", "mean"])
                for m, sev, val in rows:
                    w.writerow([m, sev, repr(val)])
    return written


def inject(means_csv, out_dir, seeds=DEFAULT_SEEDS) -> int:
    """Build a synthetic record store from a per-cell means table."""
    rows = aggregate.read_means_csv(means_csv)
    records = aggregate.records_from_means(rows, seeds)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, RECORDS_NAME)
    if os.path.exists(path):
        os.remove(path)
    _append_records(out_dir, records)
    index = {"completed": {}}
    for dataset, model, regime, _, _ in rows:
        for seed in seeds:
            key = _cell_key(dataset, model, seed)
            got = set(index["completed"].get(key, []))
            got.add(regime)
            index["completed"][key] = sorted(got)
    _store_index(out_dir, index)
    return len(records)
