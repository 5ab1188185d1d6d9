"""Seeded parameter sweeps, aggregate statistics, growth-law fits and file output."""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .engine import RunLimits, run
from .labeling import REGISTRY, build
from .protocol import ProtocolError

GRID_KEYS = ("n", "epsilon", "k", "c_phase", "leader_mode")
# only present in a cell when the grid sets it, so older cell identities are unchanged
OPTIONAL_KEYS = ("generalized",)
CSV_COLUMNS = (
    "protocol", "n", "epsilon", "k", "c_phase", "leader_mode", "trials", "completed",
    "mean_interactions", "std_interactions", "stderr", "median", "p95", "max",
    "census_max", "validity_failures", "safety_violations",
)
JOBS_ENV = "POPLABEL_JOBS"


class SpecError(ValueError):
    pass


class EmitError(OSError):
    pass


def default_jobs():
    try:
        return max(1, int(os.environ.get(JOBS_ENV, "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------- spec


@dataclass
class ExperimentSpec:
    protocol: str
    grid: dict
    trials: int
    master_seed: int = 0
    max_interactions: int = 10 ** 9
    silence_check_period: Optional[int] = None
    out: Optional[str] = None
    name: str = "sweep"
    retain: bool = False

    def __post_init__(self):
        if self.trials < 0:
            raise SpecError("trials must be non-negative")
        if "n" not in self.grid or not self.grid["n"]:
            raise SpecError("grid needs a non-empty list of n")
        extra = set(self.grid) - set(GRID_KEYS) - set(OPTIONAL_KEYS)
        if extra:
            raise SpecError(f"unknown grid keys: {', '.join(sorted(extra))}")
        if self.protocol not in REGISTRY:
            raise ProtocolError(f"unknown protocol {self.protocol!r}; known: {', '.join(REGISTRY)}")

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        grid = d.pop("grid", None)
        if grid is None:
            grid = {k: d.pop(k) for k in GRID_KEYS + OPTIONAL_KEYS if k in d}
        grid = {k: (v if isinstance(v, list) else [v]) for k, v in grid.items()}
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown spec keys: {', '.join(sorted(unknown))}")
        return cls(grid=grid, **d)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return asdict(self)

    def limits(self):
        return RunLimits(self.max_interactions, self.silence_check_period)

    def cells(self):
        """Grid cells in fixed order (n, epsilon, k, c_phase, leader_mode[, generalized])."""
        accepted = set(REGISTRY[self.protocol].params)
        keys = GRID_KEYS
        for key in OPTIONAL_KEYS:
            if key in self.grid:
                if key not in accepted:
                    raise SpecError(f"{self.protocol} does not take {key}")
                keys += (key,)
        axes = []
        for key in keys:
            values = self.grid.get(key)
            if values is None or key != "n" and key not in accepted:
                if values is not None and any(v is not None for v in values) and key != "leader_mode":
                    raise SpecError(f"{self.protocol} does not take {key}")
                axes.append([None])
            else:
                axes.append(list(values))
        return [dict(zip(keys, combo)) for combo in itertools.product(*axes)]

    def validate(self):
        """Build every cell's protocol once so bad combinations fail before any run."""
        for cell in self.cells():
            build(self.protocol, **cell)


def cell_key(protocol, cell):
    """Stable 128-bit identity of a cell, independent of its grid position."""
    canon = json.dumps({"protocol": protocol, **cell}, sort_keys=True)
    digest = hashlib.sha256(canon.encode()).digest()
    return int.from_bytes(digest[:16], "little")


def trial_seed(master_seed, key, j):
    """Seed of trial ``j`` in the cell with identity ``key``."""
    words = [master_seed & 0xFFFFFFFF, (master_seed >> 32) & 0xFFFFFFFF,
             key & 0xFFFFFFFFFFFFFFFF, key >> 64, j]
    return int(np.random.SeedSequence(words).generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------- trials


@dataclass(frozen=True)
class TrialResult:
    seed: int
    interactions: int
    completed: bool
    census: int
    validity: str
    violations: int
    declarations: Optional[int]


def _protocol(protocol, cell_items):
    return build(protocol, **dict(cell_items))


_built = {}


def _run_batch(protocol, cell_items, limits, seeds):
    key = (protocol, cell_items)
    if key not in _built:
        _built.clear()
        _built[key] = _protocol(protocol, cell_items)
    proto = _built[key]
    out = []
    for seed in seeds:
        r = run(proto, limits, seed=seed)
        if proto.info.get("distinct_only"):
            from .verify import check_distinct
            status = "ok" if check_distinct(r.final_labels) else "duplicate"
        else:
            status = r.validity.status
        out.append(TrialResult(seed, r.interactions_used, r.completed, r.census, status,
                               r.violation_count, r.declarations))
    return out


# ---------------------------------------------------------------- summaries


def _p95(values):
    if not values:
        return None
    s = sorted(values)
    return s[max(0, math.ceil(0.95 * len(s)) - 1)]


@dataclass
class CellSummary:
    protocol: str
    n: int
    epsilon: Optional[float]
    k: Optional[int]
    c_phase: Optional[float]
    leader_mode: Optional[str]
    generalized: Optional[bool] = None
    trials: int = 0
    completed: int = 0
    values: list = field(default_factory=list)   # interactions of completed trials
    total: int = 0
    total_sq: int = 0
    census_min: Optional[int] = None
    census_max: Optional[int] = None
    validity_failures: int = 0
    safety_violations: int = 0
    leader_failures: int = 0
    truncated: bool = False
    records: list = field(default_factory=list)

    @classmethod
    def empty(cls, protocol, cell):
        return cls(protocol=protocol, **cell)

    def add(self, t: TrialResult, retain=False):
        self.trials += 1
        if t.completed:
            self.completed += 1
            self.values.append(t.interactions)
            self.total += t.interactions
            self.total_sq += t.interactions * t.interactions
            if t.validity != "ok":
                self.validity_failures += 1
        self.census_min = t.census if self.census_min is None else min(self.census_min, t.census)
        self.census_max = t.census if self.census_max is None else max(self.census_max, t.census)
        if t.violations:
            self.safety_violations += 1
        if t.declarations is not None and t.declarations != 1:
            self.leader_failures += 1
        if retain:
            self.records.append(t)

    def merge(self, other: "CellSummary"):
        """Combine two partial summaries of the same cell (order-independent)."""
        out = CellSummary(**{k: getattr(self, k) for k in ("protocol", "n", "epsilon", "k", "c_phase", "leader_mode")})
        out.trials = self.trials + other.trials
        out.completed = self.completed + other.completed
        out.values = sorted(self.values + other.values)
        out.total = self.total + other.total
        out.total_sq = self.total_sq + other.total_sq
        mins = [c for c in (self.census_min, other.census_min) if c is not None]
        maxs = [c for c in (self.census_max, other.census_max) if c is not None]
        out.census_min = min(mins) if mins else None
        out.census_max = max(maxs) if maxs else None
        out.validity_failures = self.validity_failures + other.validity_failures
        out.safety_violations = self.safety_violations + other.safety_violations
        out.leader_failures = self.leader_failures + other.leader_failures
        out.truncated = self.truncated or other.truncated
        out.records = self.records + other.records
        return out

    @property
    def completion_rate(self):
        return self.completed / self.trials if self.trials else None

    @property
    def mean(self):
        return self.total / self.completed if self.completed else None

    @property
    def std(self):
        k = self.completed
        if k < 2:
            return None
        num = k * self.total_sq - self.total * self.total  # exact
        return math.sqrt(num / (k * (k - 1)))

    @property
    def stderr(self):
        s = self.std
        return s / math.sqrt(self.completed) if s is not None else None

    @property
    def median(self):
        return statistics.median(self.values) if self.values else None

    @property
    def p95(self):
        return _p95(self.values)

    @property
    def max(self):
        return max(self.values) if self.values else None

    def row(self):
        return {
            "protocol": self.protocol, "n": self.n, "epsilon": self.epsilon, "k": self.k,
            "c_phase": self.c_phase, "leader_mode": self.leader_mode, "trials": self.trials,
            "completed": self.completed, "mean_interactions": self.mean,
            "std_interactions": self.std, "stderr": self.stderr, "median": self.median,
            "p95": self.p95, "max": self.max, "census_max": self.census_max,
            "validity_failures": self.validity_failures, "safety_violations": self.safety_violations,
        }

    def to_dict(self):
        d = self.row()
        d.update(census_min=self.census_min, completion_rate=self.completion_rate,
                 leader_failures=self.leader_failures, truncated=self.truncated)
        if self.generalized is not None:
            d["generalized"] = self.generalized
        return d


def _batches(seeds, jobs):
    size = max(1, min(256, len(seeds) // (4 * jobs) or 1))
    return [seeds[i:i + size] for i in range(0, len(seeds), size)]


def sweep(spec: ExperimentSpec, jobs=None, progress=None):
    """Run every trial of every cell; summaries come back in grid order.

    On KeyboardInterrupt the partial summaries are returned with
    ``truncated`` set.
    """
    spec.validate()
    jobs = jobs or default_jobs()
    cells = spec.cells()
    limits = spec.limits()
    summaries = [CellSummary.empty(spec.protocol, c) for c in cells]
    if spec.trials == 0:
        return []
    tasks = []
    for idx, cell in enumerate(cells):
        key = cell_key(spec.protocol, cell)
        seeds = [trial_seed(spec.master_seed, key, j) for j in range(spec.trials)]
        items = tuple(sorted((k, v) for k, v in cell.items() if v is not None))
        for batch in _batches(seeds, jobs):
            tasks.append((idx, items, batch))
    results = {}
    try:
        if jobs == 1:
            for t_id, (idx, items, batch) in enumerate(tasks):
                results[t_id] = _run_batch(spec.protocol, items, limits, batch)
                if progress:
                    progress(t_id + 1, len(tasks))
        else:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                futs = {ex.submit(_run_batch, spec.protocol, items, limits, batch): t_id
                        for t_id, (idx, items, batch) in enumerate(tasks)}
                try:
                    for done, f in enumerate(_as_completed(futs)):
                        results[futs[f]] = f.result()
                        if progress:
                            progress(done + 1, len(tasks))
                except KeyboardInterrupt:
                    for f in futs:
                        f.cancel()
                    raise
    except KeyboardInterrupt:
        for s in summaries:
            s.truncated = True
    for t_id, (idx, items, batch) in enumerate(tasks):
        if t_id in results:
            for tr in results[t_id]:
                summaries[idx].add(tr, spec.retain)
        else:
            summaries[idx].truncated = True
    return summaries


def _as_completed(futs):
    from concurrent.futures import as_completed
    return as_completed(futs)


# ---------------------------------------------------------------- fitting

MODELS = {
    "n_log_n": ("a*n*ln(n)", lambda n, e: n * math.log(n)),
    "n2": ("a*n^2", lambda n, e: float(n) ** 2),
    "n3": ("a*n^3", lambda n, e: float(n) ** 3),
    "n_log_n_over_eps": ("a*n*ln(n)/eps", lambda n, e: n * math.log(n) / e),
    "n2_over_eps2": ("a*n^2/eps^2", lambda n, e: float(n) ** 2 / e ** 2),
}


@dataclass
class FitResult:
    model: str
    formula: str
    coefficient: float
    r2: float
    residuals: list
    loglog_slope: Optional[float] = None

    def to_dict(self):
        return asdict(self)


def _points(cells):
    pts = []
    for c in cells:
        if isinstance(c, CellSummary):
            n, eps, mean = c.n, c.epsilon, c.mean
        else:
            n, eps = c["n"], c.get("epsilon")
            mean = c.get("mean_interactions", c.get("mean"))
        if mean is None or mean == "":
            continue
        eps = float(eps) if eps not in (None, "") else 1.0
        pts.append((int(n), eps, float(mean)))
    return pts


def fit(cells, model) -> FitResult:
    """Least squares through the origin of measured means on the model predictor."""
    if model not in MODELS:
        raise ProtocolError(f"unknown model {model!r}; known: {', '.join(MODELS)}")
    formula, pred = MODELS[model]
    pts = _points(cells)
    xs = np.array([pred(n, e) for n, e, _ in pts], dtype=np.float64)
    if len(pts) < 3 or len(set(xs.tolist())) < 3:
        raise SpecError("fitting needs at least 3 cells with distinct predictor values")
    ys = np.array([m for _, _, m in pts], dtype=np.float64)
    a = float(xs @ ys / (xs @ xs))
    fitted = a * xs
    ss_res = float(((ys - fitted) ** 2).sum())
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    ns = np.array([n for n, _, _ in pts], dtype=np.float64)
    slope = None
    if len(set(ns.tolist())) >= 2 and (ys > 0).all():
        slope = float(np.polyfit(np.log(ns), np.log(ys), 1)[0])
    residuals = [
        {"n": n, "epsilon": e, "predictor": float(x), "measured": float(y),
         "fitted": float(f), "residual": float(y - f)}
        for (n, e, _), x, y, f in zip(pts, xs, ys, fitted)
    ]
    return FitResult(model, formula, a, r2, residuals, slope)


# ---------------------------------------------------------------- output


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(cells, path):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for c in cells:
                row = c.row() if isinstance(c, CellSummary) else c
                w.writerow([_fmt(row.get(col)) for col in CSV_COLUMNS])
    except OSError as e:
        raise EmitError(f"cannot write {path}: {e.strerror}") from e
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def emit(cells, fits=(), out_dir=".", stem="sweep", spec: Optional[ExperimentSpec] = None):
    """Write ``stem.csv``, ``stem.json`` and one plot-data CSV per fit."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise EmitError(f"cannot create {out}: {e.strerror}") from e
    paths = [write_csv(cells, out / f"{stem}.csv")]
    report = {
        "spec": spec.to_dict() if spec else None,
        "columns": list(CSV_COLUMNS),
        "cells": [c.to_dict() if isinstance(c, CellSummary) else c for c in cells],
        "fits": [f.to_dict() for f in fits],
    }
    jpath = out / f"{stem}.json"
    try:
        jpath.write_text(json.dumps(report, indent=2, sort_keys=True))
        paths.append(jpath)
        for f in fits:
            ppath = out / f"{stem}_plot_{f.model}.csv"
            with open(ppath, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["predictor", "measured", "fitted"])
                for r in f.residuals:
                    w.writerow([repr(r["predictor"]), repr(r["measured"]), repr(r["fitted"])])
            paths.append(ppath)
    except OSError as e:
        raise EmitError(f"cannot write into {out}: {e.strerror}") from e
    return paths
