"""Microdata ingestion, design matrices and weighted descriptive statistics."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import special

from .errors import DataError, DegenerateInferenceError, DesignError

BINARY = "binary"
NUMERIC = "numeric"
CATEGORICAL = "categorical"
GROUP = "group"
WEIGHT = "weight"

INTERCEPT = "(intercept)"


@dataclass(frozen=True)
class Covariate:
    name: str
    kind: str = NUMERIC
    reference: str | None = None
    label: str | None = None

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise ValueError(f"covariate {self.name!r}: kind must be numeric or categorical")

    @property
    def display(self):
        return self.label or self.name


@dataclass(frozen=True)
class ModelSpec:
    """Which columns play which role.

    ``outcomes`` lists every binary outcome column; the first one is the
    outcome that estimation routines use (see :meth:`for_outcome`).
    """

    outcomes: tuple[str, ...]
    covariates: tuple[Covariate, ...]
    group: str
    reference_group: str
    comparison_groups: tuple[str, ...] = ()
    weight: str | None = None
    row_filter: str | None = None
    na_token: str = "NA"
    missing: str = "strict"

    def __post_init__(self):
        object.__setattr__(self, "outcomes", tuple(self.outcomes))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        object.__setattr__(self, "comparison_groups", tuple(str(g) for g in self.comparison_groups))
        object.__setattr__(self, "reference_group", str(self.reference_group))
        if not self.outcomes:
            raise ValueError("at least one outcome is required")
        if self.missing not in ("strict", "lenient"):
            raise ValueError("missing must be 'strict' or 'lenient'")

    @property
    def outcome(self):
        return self.outcomes[0]

    def for_outcome(self, name):
        if name not in self.outcomes:
            raise KeyError(name)
        rest = tuple(o for o in self.outcomes if o != name)
        return dataclasses.replace(self, outcomes=(name,) + rest)

    def columns(self):
        """Ordered map of every schema column to its kind."""
        cols = {name: BINARY for name in self.outcomes}
        for cov in self.covariates:
            cols[cov.name] = cov.kind
        cols[self.group] = GROUP
        if self.weight is not None:
            cols[self.weight] = WEIGHT
        return cols

    def covariate(self, name):
        for cov in self.covariates:
            if cov.name == name:
                return cov
        raise KeyError(name)


@dataclass(frozen=True, eq=False)
class Dataset:
    frame: pd.DataFrame
    columns: dict
    levels: dict
    weight: str | None = None
    dropped: int = 0

    @property
    def n(self):
        return len(self.frame)

    @property
    def weights(self):
        if self.weight is None:
            return np.ones(self.n)
        return self.frame[self.weight].to_numpy(dtype=float)

    def take(self, indices):
        """Rows ``indices`` as a new Dataset sharing this level registry."""
        frame = self.frame.iloc[np.asarray(indices)].reset_index(drop=True)
        return dataclasses.replace(self, frame=frame, dropped=0)


@dataclass(frozen=True)
class GroupSample:
    label: str
    indices: np.ndarray

    @property
    def n(self):
        return len(self.indices)


@dataclass(frozen=True)
class Block:
    name: str
    start: int
    stop: int
    kind: str
    reference: str | None = None
    levels: tuple[str, ...] = ()

    @property
    def slice(self):
        return slice(self.start, self.stop)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    w: np.ndarray
    columns: tuple[str, ...]
    blocks: tuple[Block, ...]

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    def block(self, name):
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)

    def rows(self, indices):
        indices = np.asarray(indices)
        return DesignMatrix(self.X[indices], self.y[indices], self.w[indices], self.columns, self.blocks)

    def layout(self):
        return self.columns, self.blocks


@dataclass
class SummaryRow:
    variable: str
    means: dict
    ses: dict
    diffs: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)
    stars: dict = field(default_factory=dict)


@dataclass
class SummaryTable:
    groups: tuple[str, ...]
    reference: str
    rows: list
    n: dict


# -- loading ---------------------------------------------------------------


def _reject(message, bad, lenient):
    if bad.any() and not lenient:
        raise DataError(f"{message} ({int(bad.sum())} rows)")
    return bad


def _build(frame, spec, dropped=0):
    """Validate and type an already-read frame (shared by CSV and generator paths)."""
    lenient = spec.missing == "lenient"
    schema = spec.columns()
    missing = [c for c in schema if c not in frame.columns]
    if missing:
        raise DataError(f"missing column(s): {', '.join(missing)}")
    if spec.row_filter:
        try:
            frame = frame.query(spec.row_filter, engine="python")
        except Exception as exc:
            raise DataError(f"row filter {spec.row_filter!r} failed: {exc}") from exc
    frame = frame[list(schema)].copy()
    if len(frame) == 0:
        raise DataError("empty dataset")

    bad = _reject("missing values", frame.isna().any(axis=1).to_numpy(), lenient)
    for name, kind in schema.items():
        col = frame[name]
        if kind in (BINARY, NUMERIC, WEIGHT):
            values = pd.to_numeric(col, errors="coerce").to_numpy(dtype=float)
            notnum = np.isnan(values) & ~col.isna().to_numpy()
            bad |= _reject(f"non-numeric values in {name!r}", notnum, lenient)
            if kind == BINARY:
                bad |= _reject(f"non-binary outcome in {name!r}",
                               ~np.isin(values, (0.0, 1.0)) & ~np.isnan(values), lenient)
            elif kind == WEIGHT:
                bad |= _reject(f"non-positive or non-finite weight in {name!r}",
                               ~(np.isfinite(values) & (values > 0)) & ~np.isnan(values), lenient)
            else:
                bad |= _reject(f"non-finite value in {name!r}",
                               np.isinf(values), lenient)
            frame[name] = values
        else:
            frame[name] = col.where(col.isna(), col.astype(str).str.strip())
    if bad.any():
        dropped += int(bad.sum())
        frame = frame.loc[~bad]
        if len(frame) == 0:
            raise DataError("no rows left after dropping invalid rows")
    frame = frame.reset_index(drop=True)
    for name, kind in schema.items():
        if kind == BINARY:
            frame[name] = frame[name].astype(np.int8)

    levels = {}
    for name, kind in schema.items():
        if kind in (CATEGORICAL, GROUP):
            levels[name] = tuple(sorted(frame[name].unique()))
    if len(levels[spec.group]) < 2:
        raise DataError(f"group column {spec.group!r} has fewer than 2 distinct labels")
    for cov in spec.covariates:
        if cov.kind == CATEGORICAL and cov.reference is not None and cov.reference not in levels[cov.name]:
            raise DataError(f"reference level {cov.reference!r} not found in {cov.name!r}")
    return Dataset(frame, schema, levels, spec.weight, dropped)


def load_dataset(path, spec):
    """Read a UTF-8 CSV and validate it against ``spec``.

    Strict mode rejects the file on the first constraint violation; lenient
    mode drops the offending rows and records how many in ``Dataset.dropped``.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")
    text_cols = {c: str for c, k in spec.columns().items() if k in (CATEGORICAL, GROUP)}
    try:
        frame = pd.read_csv(path, encoding="utf-8", dtype=text_cols, na_values=[spec.na_token, ""],
                            keep_default_na=False, float_precision="round_trip")
    except pd.errors.EmptyDataError as exc:
        raise DataError(f"empty file: {path}") from exc
    except ValueError as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc
    return _build(frame, spec)


def from_frame(frame, spec):
    return _build(frame, spec)


def write_csv(ds, path):
    """Write ``ds`` in the standard CSV schema, floats at 17 significant digits."""
    ds.frame.to_csv(path, index=False, float_format="%.17g")


def group_samples(ds, spec):
    labels = ds.frame[spec.group].to_numpy()
    return {g: GroupSample(g, np.flatnonzero(labels == g)) for g in ds.levels[spec.group]}


# -- design matrices -------------------------------------------------------


def _categorical_levels(ds, cov, levels):
    registry = (levels or ds.levels).get(cov.name)
    if registry is None:
        raise DesignError(f"no level registry for {cov.name!r}")
    ref = cov.reference if cov.reference is not None else registry[0]
    if ref not in registry:
        raise DesignError(f"reference level {ref!r} not in registry for {cov.name!r}")
    return ref, tuple(lv for lv in registry if lv != ref)


def encode_design(ds, spec, subset=None, *, group_dummies=False, levels=None, check=True):
    """Build the design matrix for ``spec.outcome``.

    Columns are the intercept followed by covariates in spec order; a
    categorical with L registry levels yields L-1 contiguous dummy columns.
    The registry comes from the full dataset (or ``levels``), so matrices
    built for different subsets line up column for column.

    Parameters
    ----------
    subset : GroupSample or array of row indices, optional
    group_dummies : bool or sequence of labels
        Append group-membership dummies: for every non-reference label when
        True, or for the given labels.
    check : bool
        Reject constant non-intercept columns and duplicated columns.
        Matrices that are only evaluated, never fitted, can skip this.
    """
    frame = ds.frame
    if subset is not None:
        idx = subset.indices if isinstance(subset, GroupSample) else np.asarray(subset)
        frame = frame.iloc[idx]
    n = len(frame)
    cols = [np.ones(n)]
    names = [INTERCEPT]
    blocks = []
    pos = 1
    for cov in spec.covariates:
        values = frame[cov.name]
        if cov.kind == NUMERIC:
            x = values.to_numpy(dtype=float)
            full = ds.frame[cov.name].to_numpy(dtype=float)
            kind = BINARY if np.isin(full, (0.0, 1.0)).all() else NUMERIC
            cols.append(x)
            names.append(cov.name)
            blocks.append(Block(cov.name, pos, pos + 1, kind))
            pos += 1
        else:
            ref, lvls = _categorical_levels(ds, cov, levels)
            registry = (levels or ds.levels)[cov.name]
            unseen = set(values.unique()) - set(registry)
            if unseen:
                raise DesignError(f"unseen level(s) {sorted(unseen)} in {cov.name!r}")
            raw = values.to_numpy()
            for lv in lvls:
                cols.append((raw == lv).astype(float))
                names.append(f"{cov.name}={lv}")
            blocks.append(Block(cov.name, pos, pos + len(lvls), CATEGORICAL, ref, lvls))
            pos += len(lvls)
    if group_dummies:
        raw = frame[spec.group].to_numpy()
        if group_dummies is True:
            others = tuple(g for g in (levels or ds.levels)[spec.group] if g != spec.reference_group)
        else:
            others = tuple(group_dummies)
        for g in others:
            cols.append((raw == g).astype(float))
            names.append(f"{spec.group}={g}")
        blocks.append(Block(spec.group, pos, pos + len(others), GROUP, spec.reference_group, others))
    X = np.column_stack(cols)
    if check:
        _check_columns(X, names)
    y = frame[spec.outcome].to_numpy(dtype=float)
    w = np.ones(n) if ds.weight is None else frame[ds.weight].to_numpy(dtype=float)
    return DesignMatrix(X, y, w, tuple(names), tuple(blocks))


def _check_columns(X, names):
    if X.shape[0] == 0:
        raise DesignError("empty design matrix")
    const = np.flatnonzero((X[1:] == X[0]).all(axis=0))
    const = [names[j] for j in const if j != 0]
    if const:
        raise DesignError(f"constant non-intercept column(s): {', '.join(const)}")
    seen, dup = {}, []
    for j in range(X.shape[1]):
        key = np.ascontiguousarray(X[:, j]).tobytes()
        if key in seen:
            dup.append(j)
        seen.setdefault(key, j)
    if dup:
        raise DesignError(f"duplicate column(s): {', '.join(names[j] for j in dup)}")


# -- descriptive statistics ------------------------------------------------


def weighted_mean_se(x, w):
    """Weighted mean and its linearized standard error."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    total = w.sum()
    if not total > 0:
        raise DataError("zero total weight")
    mean = np.dot(w, x) / total
    se = np.sqrt(np.sum(w**2 * (x - mean) ** 2)) / total
    return mean, se


def stars(p):
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""


def two_sample_t(mean_a, se_a, mean_b, se_b):
    """Large-sample t statistic for a difference of independent means.

    Returns ``(t, stars)`` with stars at the 1/5/10 percent two-sided levels
    of the standard normal.
    """
    if se_a < 0 or se_b < 0:
        raise ValueError("standard errors must be non-negative")
    diff = mean_a - mean_b
    se = np.hypot(se_a, se_b)
    if se == 0:
        if diff != 0:
            raise DegenerateInferenceError("both standard errors are zero but the means differ")
        return 0.0, ""
    t = diff / se
    return float(t), stars(2 * special.ndtr(-abs(t)))


def _summary_variables(ds, spec):
    out = [(name, ds.frame[name].to_numpy(dtype=float)) for name in spec.outcomes]
    for cov in spec.covariates:
        if cov.kind == NUMERIC:
            out.append((cov.display, ds.frame[cov.name].to_numpy(dtype=float)))
        else:
            raw = ds.frame[cov.name].to_numpy()
            for lv in ds.levels[cov.name]:
                out.append((lv, (raw == lv).astype(float)))
    return out


def weighted_summary(ds, spec):
    """Group means with linearized SEs and differences against the reference group."""
    groups = group_samples(ds, spec)
    comps = spec.comparison_groups or tuple(g for g in groups if g != spec.reference_group)
    order = (spec.reference_group,) + tuple(comps)
    for g in order:
        if g not in groups:
            raise DataError(f"group {g!r} not present in column {spec.group!r}")
    w = ds.weights
    rows = []
    for name, x in _summary_variables(ds, spec):
        row = SummaryRow(name, {}, {})
        for g in order:
            idx = groups[g].indices
            if not w[idx].sum() > 0:
                raise DataError(f"zero total weight in group {g!r}")
            row.means[g], row.ses[g] = weighted_mean_se(x[idx], w[idx])
        ref = spec.reference_group
        for g in comps:
            row.diffs[g] = row.means[ref] - row.means[g]
            try:
                row.t[g], row.stars[g] = two_sample_t(row.means[ref], row.ses[ref], row.means[g], row.ses[g])
            except DegenerateInferenceError:
                row.t[g], row.stars[g] = float("nan"), ""
        rows.append(row)
    return SummaryTable(order, spec.reference_group, rows, {g: groups[g].n for g in order})
