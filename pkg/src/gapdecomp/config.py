"""Run configuration: a single YAML file.

Example::

    data: survey.csv           # relative paths resolve against this file
    na_token: NA
    missing: strict            # or lenient (drop and count bad rows)
    filter: "age >= 15 and age <= 59"
    outcomes: [cor, iar]
    labels: {cor: COR, iar: IAR}
    group: caste
    reference_group: Others
    comparison_groups: [ST, SC, OBC]
    weight: weight
    covariates:
      - {name: age, label: Age}
      - {name: occupation, kind: categorical, reference: SEA, label: Occupation}
    decomposition:
      iterations: 1000
      bootstrap_reps: 1000
      seed: 20180630
      ordering: randomized
      coefficient_source: pooled
      matching: rank
      pooled_group_indicator: false
      blocks: {Place of residence: [urban]}
    output: {format: text, path: report.txt}
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .dataio import Covariate, ModelSpec
from .decomp import DecompConfig
from .errors import ConfigError

FORMATS = ("text", "csv", "json")

_TOP_KEYS = {"data", "na_token", "missing", "filter", "outcomes", "outcome", "labels", "group",
             "reference_group", "comparison_groups", "weight", "covariates", "decomposition",
             "output", "marginal_effects"}
_DECOMP_KEYS = {"iterations", "bootstrap_reps", "seed", "ordering", "coefficient_source",
                "matching", "pooled_group_indicator", "blocks", "link", "max_failure_rate"}


@dataclass(frozen=True)
class RunConfig:
    data: Path
    spec: ModelSpec
    decomp: DecompConfig
    format: str = "text"
    out: Path | None = None
    labels: dict = field(default_factory=dict)
    marginal_effects: bool = True

    def with_overrides(self, seed=None, iterations=None, bootstrap=None, format=None, out=None):
        changes = {k: v for k, v in (("seed", seed), ("iterations", iterations),
                                     ("bootstrap_reps", bootstrap)) if v is not None}
        try:
            decomp = dataclasses.replace(self.decomp, **changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        fmt = format or self.format
        if fmt not in FORMATS:
            raise ConfigError(f"format must be one of {', '.join(FORMATS)}")
        return dataclasses.replace(self, decomp=decomp, format=fmt,
                                   out=Path(out) if out is not None else self.out)

    def echo(self):
        s = self.spec
        return {
            "data": str(self.data),
            "outcomes": list(s.outcomes),
            "covariates": [dataclasses.asdict(c) for c in s.covariates],
            "group": s.group,
            "reference_group": s.reference_group,
            "comparison_groups": list(s.comparison_groups),
            "weight": s.weight,
            "filter": s.row_filter,
            "missing": s.missing,
            "decomposition": self.decomp.echo(),
        }


def _require(d, key, where="config"):
    if key not in d or d[key] in (None, "", []):
        raise ConfigError(f"{where}: missing required key {key!r}")
    return d[key]


def parse_config(d, base_dir="."):
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(d) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    outcomes = d.get("outcomes") or ([d["outcome"]] if d.get("outcome") else None)
    if not outcomes:
        raise ConfigError("config: at least one outcome is required")
    if isinstance(outcomes, str):
        outcomes = [outcomes]
    comps = d.get("comparison_groups")
    if not comps:
        raise ConfigError("config: at least one comparison group is required")
    if isinstance(comps, (str, int)):
        comps = [comps]

    covs = []
    for i, c in enumerate(_require(d, "covariates")):
        if isinstance(c, str):
            c = {"name": c}
        try:
            covs.append(Covariate(str(c["name"]), c.get("kind", "numeric"),
                                  None if c.get("reference") is None else str(c["reference"]),
                                  c.get("label")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"covariates[{i}]: {exc}") from exc

    dec = dict(d.get("decomposition") or {})
    unknown = set(dec) - _DECOMP_KEYS
    if unknown:
        raise ConfigError(f"unknown decomposition key(s): {', '.join(sorted(unknown))}")
    if "blocks" in dec:
        dec["block_map"] = {str(k): [str(v) for v in vs] for k, vs in dec.pop("blocks").items()}
    try:
        spec = ModelSpec(tuple(str(o) for o in outcomes), tuple(covs), str(_require(d, "group")),
                         str(_require(d, "reference_group")), tuple(str(g) for g in comps),
                         d.get("weight"), d.get("filter"), str(d.get("na_token", "NA")),
                         d.get("missing", "strict"))
        decomp = DecompConfig(**dec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    out = d.get("output") or {}
    fmt = out.get("format", "text")
    if fmt not in FORMATS:
        raise ConfigError(f"output.format must be one of {', '.join(FORMATS)}")
    base = Path(base_dir)
    data = Path(str(_require(d, "data")))
    path = out.get("path")
    return RunConfig(
        data=data if data.is_absolute() else base / data,
        spec=spec,
        decomp=decomp,
        format=fmt,
        out=None if path is None else (Path(path) if Path(path).is_absolute() else base / path),
        labels={str(k): str(v) for k, v in (d.get("labels") or {}).items()},
        marginal_effects=bool(d.get("marginal_effects", True)),
    )


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return parse_config(d, path.parent)
