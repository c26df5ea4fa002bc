"""Pipeline orchestration behind the ``run`` and ``validate`` commands."""

from __future__ import annotations

import logging

import numpy as np
import pandas as pd

from . import probit
from .dataio import (BINARY, CATEGORICAL, GROUP, WEIGHT, encode_design, group_samples,
                     load_dataset, weighted_summary)
from .decomp import decompose, report_blocks
from .errors import DataError, GapDecompError
from .report import Report

log = logging.getLogger(__name__)


def validate(config):
    """Dry-run checks on a RunConfig; returns a list of diagnostic strings."""
    spec = config.spec
    if not config.data.exists():
        return [f"data file not found: {config.data}"]
    try:
        frame = pd.read_csv(config.data, dtype=str, keep_default_na=False, encoding="utf-8")
    except (ValueError, UnicodeDecodeError) as exc:
        return [f"cannot read data: {exc}"]
    if frame.empty:
        return ["data file has no rows"]
    schema = spec.columns()
    diags = [f"column not found: {c}" for c in schema if c not in frame.columns]
    if diags:
        return diags
    if spec.row_filter:
        typed = frame.copy()
        for name in typed.columns:
            if schema.get(name) not in (GROUP, CATEGORICAL):
                converted = pd.to_numeric(typed[name], errors="coerce")
                if converted.notna().any():
                    typed[name] = converted
        try:
            frame = frame.loc[typed.query(spec.row_filter, engine="python").index]
        except Exception as exc:
            return [f"row filter {spec.row_filter!r} failed: {exc}"]
    na = frame[list(schema)].isin([spec.na_token, ""])
    if na.values.any() and spec.missing == "strict":
        cols = [c for c in schema if na[c].any()]
        diags.append(f"missing values in: {', '.join(cols)}")
    for name, kind in schema.items():
        if kind not in (BINARY, WEIGHT):
            continue
        vals = pd.to_numeric(frame[name][~na[name]], errors="coerce")
        if kind == BINARY and not vals.isin([0, 1]).all():
            diags.append(f"non-binary outcome values in column {name}")
        if kind == WEIGHT and not (np.isfinite(vals) & (vals > 0)).all():
            diags.append(f"non-positive or non-numeric weights in column {name}")
    counts = frame[spec.group].str.strip().value_counts()
    for g in (spec.reference_group, *spec.comparison_groups):
        n = int(counts.get(g, 0))
        if n == 0:
            diags.append(f"group not found: {g}")
        elif n < 2:
            diags.append(f"group too small: {g} ({n} row)")
    for cov in spec.covariates:
        if cov.kind == CATEGORICAL and cov.reference is not None:
            if cov.reference not in set(frame[cov.name].str.strip()):
                diags.append(f"reference level not found: {cov.name}={cov.reference}")
    if diags:
        return diags
    try:
        ds = load_dataset(config.data, spec)
        groups = group_samples(ds, spec)
        for comp in spec.comparison_groups:
            rows = np.concatenate([groups[spec.reference_group].indices, groups[comp].indices])
            dm = encode_design(ds, spec, rows)
            report_blocks(dm, spec, config.decomp.block_map)
    except GapDecompError as exc:
        diags.append(str(exc))
    return diags


def run(config, workers=1):
    """Execute the full pipeline and return a :class:`Report`."""
    spec = config.spec
    ds = load_dataset(config.data, spec)
    if ds.dropped:
        log.warning("dropped %d invalid rows (lenient mode)", ds.dropped)
    for g in (spec.reference_group, *spec.comparison_groups):
        if g not in ds.levels[spec.group]:
            raise DataError(f"group {g!r} not present in column {spec.group!r}")
    report = Report(config.echo() | {"rows": ds.n, "dropped": ds.dropped})
    report.summary = weighted_summary(ds, spec)
    for outcome in spec.outcomes:
        s = spec.for_outcome(outcome)
        if config.marginal_effects:
            dm = encode_design(ds, s, group_dummies=True)
            model = probit.fit(dm)
            report.marginal_effects[outcome] = probit.average_marginal_effects(model, dm)
        for comp in spec.comparison_groups:
            log.info("decomposing %s: %s vs %s", outcome, spec.reference_group, comp)
            report.decompositions.append(decompose(ds, s, config.decomp, comp, workers))
    return report
