"""Rendering of summary, marginal-effects and decomposition tables.

Text output follows the conventional layout of decomposition tables:
contributions to three decimals with significance stars and the bootstrap
SE in parentheses, percentages of the gap to one decimal, and the gap itself
in percentage points. JSON and CSV exports carry full precision.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

from .decomp import DecompositionResult


def _num(x, digits):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    s = f"{x:.{digits}f}"
    if s.startswith("-") and float(s) == 0:
        s = s[1:]
    return s


def estimate_cell(estimate, se=None, stars=""):
    """``0.070*** (0.002)``; the SE part is omitted when there is none."""
    s = _num(estimate, 3) + stars
    if se is not None:
        s += f" ({_num(se, 3)})"
    return s


def pct_explained(contribution, gap):
    return None if gap == 0 else 100.0 * contribution / gap


def decomposition_cell(estimate, se, stars, pct):
    return f"{estimate_cell(estimate, se, stars)}  {_num(pct, 1)}".rstrip()


def _table(header, rows):
    widths = [max(len(str(r[i])) for r in [header, *rows]) for i in range(len(header))]
    line = lambda r: "  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip()
    rule = "-" * len(line(header))
    return "\n".join([rule, line(header), rule, *map(line, rows), rule])


def summary_text(table, title="Summary statistics"):
    comps = [g for g in table.groups if g != table.reference]
    header = ["Variables", *table.groups, *(f"{table.reference}-{g}" for g in comps)]
    rows = []
    for r in table.rows:
        rows.append([r.variable, *(_num(r.means[g], 3) for g in table.groups),
                     *(_num(r.diffs[g], 3) + r.stars[g] for g in comps)])
        rows.append(["", *(f"[{_num(r.ses[g], 3)}]" for g in table.groups), *("" for _ in comps)])
    rows.append(["Observations", *(str(table.n[g]) for g in table.groups), *("" for _ in comps)])
    note = "Weighted means; linearized standard errors in brackets. *** p<0.01, ** p<0.05, * p<0.10."
    return f"{title}\n{_table(header, rows)}\n{note}"


def ame_text(tables, title="Average marginal effects from probit regressions"):
    """``tables`` maps an outcome name to its MarginalEffectsTable."""
    outcomes = list(tables)
    columns = list(dict.fromkeys(e.column for t in tables.values() for e in t))
    rows = []
    for col in columns:
        cells, ses = [], []
        for o in outcomes:
            try:
                e = tables[o].get(col)
            except KeyError:
                cells.append("")
                ses.append("")
                continue
            cells.append(_num(e.effect, 3) + e.stars)
            ses.append(f"({_num(e.se, 3)})")
        rows.append([col, *cells])
        rows.append(["", *ses])
    note = "Robust standard errors in parentheses. *** p<0.01, ** p<0.05, * p<0.10."
    return f"{title}\n{_table(['Variables', *outcomes], rows)}\n{note}"


def decomposition_text(results, outcome_label=None):
    """One table with a column pair per comparison sharing the reference group."""
    results = list(results)
    label = outcome_label or results[0].outcome
    header = ["Variables"]
    for r in results:
        header += [f"{r.reference}-{r.comparison}", "% explained"]
    names = list(dict.fromkeys(c.name for r in results for c in r.contributions))
    rows = [[f"Gap in {label}", *sum(([_num(100 * r.total_gap, 1), ""] for r in results), [])]]
    for name in names:
        row = [name]
        for r in results:
            try:
                c = r.contribution(name)
            except KeyError:
                row += ["", ""]
                continue
            row += [estimate_cell(c.estimate, c.se, c.stars), _num(c.pct_explained, 1)]
        rows.append(row)
    rows.append(["Total explained", *sum(([estimate_cell(r.explained_total, r.explained_se,
                                                         r.explained_stars),
                                           _num(r.total_pct_explained, 1)] for r in results), [])])
    rows.append(["Observations", *sum(([str(r.n_reference + r.n_comparison), ""] for r in results), [])])
    reps = sorted({r.bootstrap_reps for r in results if r.bootstrap_reps})
    note = "Gap in percentage points; contributions as proportions."
    if reps:
        note += (f" Bootstrap standard errors in parentheses ({'/'.join(map(str, reps))} replications)."
                 " *** p<0.01, ** p<0.05, * p<0.10.")
    return f"Nonlinear decomposition of the gap in {label}\n{_table(header, rows)}\n{note}"


# -- structured exports ----------------------------------------------------


@dataclass
class Report:
    config: dict
    summary: object = None
    marginal_effects: dict = field(default_factory=dict)
    decompositions: list = field(default_factory=list)

    def to_dict(self):
        out = {"config": self.config}
        if self.summary is not None:
            t = self.summary
            out["summary"] = {
                "groups": list(t.groups), "reference": t.reference, "n": dict(t.n),
                "rows": [{"variable": r.variable, "mean": r.means, "se": r.ses, "difference": r.diffs,
                          "t": r.t, "stars": r.stars} for r in t.rows],
            }
        out["marginal_effects"] = {
            o: [vars(e) for e in t] for o, t in self.marginal_effects.items()
        }
        out["decompositions"] = [r.to_dict() for r in self.decompositions]
        return _clean(out)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"

    def to_text(self, labels=None):
        labels = labels or {}
        parts = ["# config", json.dumps(self.config, indent=2, allow_nan=False)]
        if self.summary is not None:
            parts.append(summary_text(self.summary))
        if self.marginal_effects:
            parts.append(ame_text(self.marginal_effects))
        by_outcome = {}
        for r in self.decompositions:
            by_outcome.setdefault(r.outcome, []).append(r)
        for outcome, results in by_outcome.items():
            parts.append(decomposition_text(results, labels.get(outcome, outcome)))
        return "\n\n".join(parts) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["table", "outcome", "comparison", "row", "field", "value"])
        if self.summary is not None:
            for r in self.summary.rows:
                for g in self.summary.groups:
                    writer.writerow(["summary", "", g, r.variable, "mean", repr(r.means[g])])
                    writer.writerow(["summary", "", g, r.variable, "se", repr(r.ses[g])])
                for g, d in r.diffs.items():
                    writer.writerow(["summary", "", g, r.variable, "difference", repr(d)])
                    writer.writerow(["summary", "", g, r.variable, "t", repr(r.t[g])])
        for o, t in self.marginal_effects.items():
            for e in t:
                writer.writerow(["marginal_effects", o, "", e.column, "effect", repr(e.effect)])
                writer.writerow(["marginal_effects", o, "", e.column, "se", repr(e.se)])
        for r in self.decompositions:
            key = ["decomposition", r.outcome, r.comparison]
            writer.writerow([*key, "gap", "estimate", repr(r.total_gap)])
            for c in r.contributions:
                writer.writerow([*key, c.name, "estimate", repr(c.estimate)])
                writer.writerow([*key, c.name, "se", "" if c.se is None else repr(c.se)])
                writer.writerow([*key, c.name, "pct_explained",
                                 "" if c.pct_explained is None else repr(c.pct_explained)])
            writer.writerow([*key, "total explained", "estimate", repr(r.explained_total)])
            writer.writerow([*key, "total explained", "pct_explained",
                             "" if r.total_pct_explained is None else repr(r.total_pct_explained)])
        return buf.getvalue()

    def render(self, fmt, labels=None):
        if fmt == "json":
            return self.to_json()
        if fmt == "csv":
            return self.to_csv()
        if fmt == "text":
            return self.to_text(labels)
        raise ValueError(f"unknown format {fmt!r}")


def _clean(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) or math.isinf(obj) else obj
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item"):
        return _clean(obj.item())
    return obj


def decomposition_from_json(text):
    """Parse the ``decompositions`` of a JSON export back into result objects."""
    data = json.loads(text)
    return [DecompositionResult.from_dict(d) for d in data["decompositions"]]
