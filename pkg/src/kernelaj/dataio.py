"""CSV cohort ingestion, train-fitted preprocessing, dataset splitting, and a
synthetic competing-risks generator with a closed-form CIF oracle.

CSV dialect: comma-separated, header row required, UTF-8, '.' decimal point;
missing values are empty cells or the literal "NA". Preprocessing statistics
(means, standard deviations, category sets, modes) are fitted on the training
rows only and applied unchanged to held-out sets.
"""

import csv
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .core import Cohort
from .errors import MissingColumn, ParseError, SchemaMismatch, TooSmall

_KINDS = ("continuous", "categorical", "binary")
_MISSING = ("", "NA")


@dataclass
class RawTable:
    """Parsed CSV contents: per-column raw values plus time/event arrays.

    Feature cells are floats (continuous) or strings (categorical/binary);
    missing cells are None.
    """

    columns: dict
    time: np.ndarray
    event: np.ndarray

    @property
    def n(self) -> int:
        return self.time.size


def load_cohort(path, schema_spec: dict, time_column: str, event_column: str) -> RawTable:
    """Read and type-check a cohort CSV.

    ``schema_spec`` maps feature column names to their kind. Raises
    MissingColumn when a declared column (or the time/event column) is
    absent, and ParseError with row/column context on bad cells.
    """
    for kind in schema_spec.values():
        if kind not in _KINDS:
            raise SchemaMismatch(f"unknown column kind '{kind}'")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in list(schema_spec) + [time_column, event_column]:
            if col not in header:
                raise MissingColumn(f"column '{col}' not found in {path}")
        columns = {name: [] for name in schema_spec}
        times, events = [], []
        for rownum, row in enumerate(reader, start=2):
            times.append(_parse_float(row[time_column], rownum, time_column))
            events.append(_parse_event(row[event_column], rownum, event_column))
            for name, kind in schema_spec.items():
                cell = row[name]
                if cell is None or cell.strip() in _MISSING:
                    columns[name].append(None)
                elif kind == "continuous":
                    columns[name].append(_parse_float(cell, rownum, name))
                else:
                    columns[name].append(cell.strip())
    if not times:
        raise ParseError(f"no data rows in {path}")
    return RawTable(columns, np.array(times, dtype=np.float64),
                    np.array(events, dtype=np.int64))


def _parse_float(cell, rownum, colname) -> float:
    try:
        return float(cell)
    except (TypeError, ValueError):
        raise ParseError(f"cannot parse '{cell}' as a number "
                         f"(row {rownum}, column '{colname}')",
                         row=rownum, column=colname) from None


def _parse_event(cell, rownum, colname) -> int:
    value = _parse_float(cell, rownum, colname)
    if value != int(value) or value < 0:
        raise ParseError(f"event indicator must be a nonnegative integer, got "
                         f"'{cell}' (row {rownum}, column '{colname}')",
                         row=rownum, column=colname)
    return int(value)


@dataclass
class FeatureSchema:
    """Per-column preprocessing rules fitted on training rows only.

    Continuous columns: mean imputation then standardization (population
    std convention; zero-variance columns fall back to std 1). Binary and
    categorical columns: mode imputation; categorical columns are one-hot
    encoded over the training category set, with unseen categories mapping to
    the all-zero vector.
    """

    kinds: dict
    stats: dict = field(default_factory=dict)
    feature_names: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def fit(self, table: RawTable) -> "FeatureSchema":
        for name, kind in self.kinds.items():
            values = table.columns[name]
            present = [v for v in values if v is not None]
            if kind == "continuous":
                arr = np.array(present, dtype=np.float64)
                mean = float(arr.mean()) if arr.size else 0.0
                std = float(arr.std()) if arr.size else 1.0
                if std == 0.0:
                    self.warnings.append(f"column '{name}' has zero variance")
                    std = 1.0
                self.stats[name] = {"mean": mean, "std": std}
            else:
                if present:
                    counts = Counter(present)
                    top = max(counts.values())
                    mode = sorted(v for v, c in counts.items() if c == top)[0]
                else:
                    mode = "0"
                if kind == "binary":
                    self.stats[name] = {"mode": mode}
                else:
                    cats = sorted(set(present)) or [mode]
                    self.stats[name] = {"mode": mode, "categories": cats}
        self.feature_names = []
        for name, kind in self.kinds.items():
            if kind == "categorical":
                for cat in self.stats[name]["categories"]:
                    self.feature_names.append(f"{name}={cat}")
            else:
                self.feature_names.append(name)
        return self

    def transform(self, table: RawTable) -> np.ndarray:
        if not self.stats:
            raise SchemaMismatch("schema has not been fitted")
        for name in self.kinds:
            if name not in table.columns:
                raise SchemaMismatch(f"column '{name}' missing from input table")
        blocks = []
        for name, kind in self.kinds.items():
            values = table.columns[name]
            if kind == "continuous":
                st = self.stats[name]
                col = np.array(
                    [st["mean"] if v is None else v for v in values], dtype=np.float64)
                blocks.append(((col - st["mean"]) / st["std"])[:, None])
            elif kind == "binary":
                mode = self.stats[name]["mode"]
                col = np.array(
                    [float(mode if v is None else v) for v in values], dtype=np.float64)
                blocks.append(col[:, None])
            else:
                st = self.stats[name]
                cats = st["categories"]
                onehot = np.zeros((len(values), len(cats)), dtype=np.float64)
                index = {c: k for k, c in enumerate(cats)}
                for i, v in enumerate(values):
                    v = st["mode"] if v is None else v
                    k = index.get(v)
                    if k is not None:
                        onehot[i, k] = 1.0
                blocks.append(onehot)
        return np.hstack(blocks)

    def to_dict(self) -> dict:
        return {"kinds": dict(self.kinds), "stats": self.stats,
                "feature_names": list(self.feature_names)}

    @classmethod
    def from_dict(cls, payload: dict) -> "FeatureSchema":
        schema = cls(kinds=dict(payload["kinds"]))
        schema.stats = payload["stats"]
        schema.feature_names = list(payload["feature_names"])
        return schema


def fit_apply_preprocessor(train_table: RawTable, *other_tables, schema_spec: dict):
    """Fit the schema on the training table and transform all tables.

    Returns (cohorts..., schema) where the first cohort corresponds to the
    training table. The number of event types is the largest indicator seen
    across the supplied tables.
    """
    schema = FeatureSchema(kinds=dict(schema_spec)).fit(train_table)
    tables = (train_table,) + other_tables
    m = max(int(t.event.max()) for t in tables)
    m = max(m, 1)
    cohorts = tuple(
        Cohort(schema.transform(t), t.time, t.event, m) for t in tables
    )
    return cohorts + (schema,)


def split(cohort: Cohort, seed: int, train_frac: float = 0.7,
          proper_frac: float = 0.8):
    """Seeded shuffle then contiguous cuts into (train, valid, test).

    ``train_frac`` of the cohort is kept for model building; of that,
    ``proper_frac`` becomes the proper training set and the rest validation.
    The three parts are disjoint and exhaustive.
    """
    if cohort.n < 5:
        raise TooSmall("need at least 5 records to split")
    perm = np.random.default_rng(seed).permutation(cohort.n)
    n_build = int(cohort.n * train_frac)
    n_proper = int(n_build * proper_frac)
    train_idx = perm[:n_proper]
    valid_idx = perm[n_proper:n_build]
    test_idx = perm[n_build:]
    return cohort.subset(train_idx), cohort.subset(valid_idx), cohort.subset(test_idx)


@dataclass(frozen=True)
class SynthConfig:
    """Two-event synthetic generator settings.

    Features are standard normal; each event time is exponential with rate
    exp(w_delta . x); censoring is exponential with its rate tuned so the
    expected censoring fraction matches ``censoring_rate``.
    """

    n: int
    p: int
    w1: tuple
    w2: tuple
    censoring_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.p < 1 or self.n < 1:
            raise ValueError("n and p must be positive")
        if not 0.0 <= self.censoring_rate < 1.0:
            raise ValueError("censoring rate must lie in [0, 1)")
        if len(self.w1) != self.p or len(self.w2) != self.p:
            raise ValueError("weight vectors must have length p")
        object.__setattr__(self, "w1", tuple(float(v) for v in self.w1))
        object.__setattr__(self, "w2", tuple(float(v) for v in self.w2))


def _censoring_rate_given(c: float, lam_total: np.ndarray) -> float:
    """Expected fraction censored when C ~ Exp(c) independent of T."""
    if c == 0.0:
        return 0.0
    return float(np.mean(c / (c + lam_total)))


def _solve_censoring_rate(target: float, lam_total: np.ndarray) -> float:
    if target <= 0.0:
        return 0.0
    lo, hi = 0.0, 1.0
    while _censoring_rate_given(hi, lam_total) < target:
        hi *= 2.0
        if hi > 1e12:
            break
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _censoring_rate_given(mid, lam_total) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def generate_synthetic(cfg: SynthConfig) -> Cohort:
    """Draw a cohort from the two-event exponential model (m = 2)."""
    rng = np.random.default_rng(cfg.seed)
    X = rng.standard_normal((cfg.n, cfg.p))
    lam1 = np.exp(X @ np.asarray(cfg.w1))
    lam2 = np.exp(X @ np.asarray(cfg.w2))
    t1 = rng.exponential(1.0 / lam1)
    t2 = rng.exponential(1.0 / lam2)
    t_event = np.minimum(t1, t2)
    event_type = np.where(t1 <= t2, 1, 2)
    c_rate = _solve_censoring_rate(cfg.censoring_rate, lam1 + lam2)
    if c_rate > 0.0:
        c = rng.exponential(1.0 / c_rate, size=cfg.n)
    else:
        c = np.full(cfg.n, np.inf)
    y = np.minimum(t_event, c)
    delta = np.where(t_event <= c, event_type, 0)
    return Cohort(X, y, delta.astype(np.int64), m=2)


def oracle_cif(cfg: SynthConfig, x: np.ndarray, delta: int, t: float) -> float:
    """Closed-form CIF of the generator:
    F_delta(t | x) = (lam_delta / lam) * (1 - exp(-lam * t))."""
    x = np.asarray(x, dtype=np.float64)
    lam1 = np.exp(float(x @ np.asarray(cfg.w1)))
    lam2 = np.exp(float(x @ np.asarray(cfg.w2)))
    lam = lam1 + lam2
    lam_d = lam1 if delta == 1 else lam2
    return (lam_d / lam) * (1.0 - np.exp(-lam * t))


def write_cohort_csv(cohort: Cohort, path, feature_names=None):
    """Write a cohort in the package's CSV dialect (x1..xp, time, event)."""
    names = feature_names or [f"x{j + 1}" for j in range(cohort.p)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(names) + ["time", "event"])
        for i in range(cohort.n):
            row = [repr(float(v)) for v in cohort.features[i]]
            writer.writerow(row + [repr(float(cohort.time[i])), int(cohort.event[i])])
