"""Synthetic microdata from known probit DGPs, and an exhaustive reference decomposition.

The oracle deliberately re-derives everything it needs (dummy coding,
coefficients, matching, the swap chain) from the raw frame; the only code it
shares with the estimation modules is ``scipy.special.ndtr``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import optimize, special

from .dataio import CATEGORICAL, NUMERIC, Covariate, ModelSpec, from_frame
from .decomp import Contribution, DecompositionResult
from .errors import DecompositionError
from .streams import stream


@dataclass(frozen=True)
class GroupDgp:
    """Covariate distributions of one group.

    ``numeric`` maps a name to ``{"mean": m, "sd": s}`` (normal) or
    ``{"p": p}`` (0/1 Bernoulli); ``categorical`` maps a name to
    ``{level: probability}``.
    """

    size: int
    numeric: dict = field(default_factory=dict)
    categorical: dict = field(default_factory=dict)
    beta: dict | None = None

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("group size must be >= 1")
        for name, probs in self.categorical.items():
            if not math.isclose(sum(probs.values()), 1.0, abs_tol=1e-9):
                raise ValueError(f"level probabilities of {name!r} do not sum to 1")


@dataclass(frozen=True)
class DgpSpec:
    groups: dict
    beta: dict
    link: str = "probit"
    weights: tuple = ("unit",)
    seed: int = 0
    outcome: str = "y"
    group: str = "group"
    weight: str = "weight"

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["groups"] = {str(k): GroupDgp(**v) for k, v in d["groups"].items()}
        w = d.get("weights", "unit")
        if isinstance(w, dict):
            (kind, args), = w.items()
            w = (kind, *args)
        elif isinstance(w, str):
            w = (w,)
        d["weights"] = tuple(w)
        return cls(**d)

    def variables(self):
        first = next(iter(self.groups.values()))
        numeric = list(first.numeric)
        categorical = list(first.categorical)
        for label, g in self.groups.items():
            if list(g.numeric) != numeric or list(g.categorical) != categorical:
                raise ValueError(f"group {label!r} declares different covariates")
        return numeric, categorical

    def model_spec(self, reference=None, comparisons=None, references=None):
        numeric, categorical = self.variables()
        labels = list(self.groups)
        reference = labels[0] if reference is None else reference
        comparisons = [g for g in labels if g != reference] if comparisons is None else comparisons
        references = references or {}
        covs = [Covariate(n, NUMERIC) for n in numeric]
        covs += [Covariate(n, CATEGORICAL, references.get(n)) for n in categorical]
        weight = None if self.weights == ("unit",) else self.weight
        return ModelSpec((self.outcome,), tuple(covs), self.group, reference, tuple(comparisons), weight)


def _draw_weights(scheme, u):
    kind = scheme[0]
    if kind == "unit":
        return np.ones_like(u)
    if kind == "uniform":
        lo, hi = scheme[1:3]
        return lo + (hi - lo) * u
    raise ValueError(f"unknown weight scheme {kind!r}")


def _index(beta, name):
    return float(beta.get(name, 0.0))


def generate_frame(spec):
    numeric, categorical = spec.variables()
    parts = []
    for gi, (label, g) in enumerate(spec.groups.items()):
        beta = spec.beta if g.beta is None else g.beta
        cols = {spec.group: np.full(g.size, label, dtype=object)}
        z = np.full(g.size, _index(beta, "(intercept)"))
        for name, dist in g.numeric.items():
            u = stream(spec.seed, "synth", gi, name).random(g.size)
            if "p" in dist:
                x = (u < dist["p"]).astype(float)
            else:
                x = dist["mean"] + dist["sd"] * special.ndtri(u)
            cols[name] = x
            z += _index(beta, name) * x
        for name, probs in g.categorical.items():
            u = stream(spec.seed, "synth", gi, name).random(g.size)
            levels = list(probs)
            cum = np.cumsum([probs[lv] for lv in levels])
            pick = np.minimum(np.searchsorted(cum, u, side="right"), len(levels) - 1)
            x = np.array(levels, dtype=object)[pick]
            cols[name] = x
            for lv in levels:
                z += _index(beta, f"{name}={lv}") * (x == lv)
        prob = special.ndtr(z) if spec.link == "probit" else np.clip(z, 0.0, 1.0)
        u = stream(spec.seed, "synth", gi, "outcome").random(g.size)
        cols[spec.outcome] = (u < prob).astype(np.int8)
        if spec.weights != ("unit",):
            cols[spec.weight] = _draw_weights(spec.weights, stream(spec.seed, "synth", gi, "weight").random(g.size))
        parts.append(pd.DataFrame(cols))
    frame = pd.concat(parts, ignore_index=True)
    order = [spec.outcome, spec.group, *numeric, *categorical]
    if spec.weights != ("unit",):
        order.append(spec.weight)
    return frame[order]


def generate(spec, model_spec=None):
    """Draw a Dataset from ``spec``; identical seeds give identical data."""
    frame = generate_frame(spec)
    return from_frame(frame, model_spec or spec.model_spec())


# -- exhaustive oracle -----------------------------------------------------

MAX_ROWS = 2000
MAX_BLOCKS = 3
MAX_DRAWS = 20000


def _oracle_design(frame, spec, cfg):
    names, cols, owner = ["(intercept)"], [np.ones(len(frame))], [None]
    for cov in spec.covariates:
        if cov.kind == NUMERIC:
            names.append(cov.name)
            cols.append(frame[cov.name].to_numpy(dtype=float))
            owner.append(cov.name)
        else:
            levels = sorted(frame[cov.name].unique())
            ref = cov.reference or levels[0]
            for lv in levels:
                if lv != ref:
                    names.append(f"{cov.name}={lv}")
                    cols.append((frame[cov.name] == lv).to_numpy(dtype=float))
                    owner.append(cov.name)
    block_of = {cov.name: cov.display for cov in spec.covariates}
    for label, variables in dict(cfg.block_map).items():
        for v in variables:
            block_of[v] = label
    blocks = list(dict.fromkeys(block_of[c.name] for c in spec.covariates))
    membership = [None if o is None else blocks.index(block_of[o]) for o in owner]
    return np.column_stack(cols), names, blocks, membership


def _oracle_fit(X, y, w):
    q = 2 * y - 1

    def nll(b):
        return -np.dot(w, special.log_ndtr(q * (X @ b)))

    res = optimize.minimize(nll, np.zeros(X.shape[1]), method="BFGS", options={"gtol": 1e-10})
    return res.x


def oracle_decompose(ds, spec, cfg, beta=None, comparison=None):
    """Reference decomposition by exhaustive enumeration.

    Averages the swap chain over every block ordering (or the fixed one) and
    over every possible subsample of the larger group; with equal group sizes
    the single census pairing is used. ``beta`` overrides the pooled
    coefficients (in the oracle's own column order, which matches the
    engine's); otherwise they are fitted here by BFGS.
    """
    comparison = comparison or spec.comparison_groups[0]
    frame = ds.frame
    sel = frame[spec.group].isin([spec.reference_group, comparison]).to_numpy()
    frame = frame.loc[sel].reset_index(drop=True)
    if len(frame) > MAX_ROWS:
        raise DecompositionError(f"instance too large for exhaustive enumeration ({len(frame)} rows)")
    if cfg.matching != "rank":
        raise DecompositionError("oracle supports rank matching only")
    X, names, blocks, membership = _oracle_design(frame, spec, cfg)
    if len(blocks) > MAX_BLOCKS:
        raise DecompositionError(f"instance too large for exhaustive enumeration ({len(blocks)} blocks)")
    y = frame[spec.outcome].to_numpy(dtype=float)
    w = np.ones(len(frame)) if ds.weight is None else frame[ds.weight].to_numpy(dtype=float)
    if beta is None:
        beta = _oracle_fit(X, y, w)
    beta = np.asarray(beta, dtype=float)
    F = special.ndtr if cfg.link == "probit" else (lambda z: z)

    is_a = (frame[spec.group] == spec.reference_group).to_numpy()
    Xa, Xd, wd = X[is_a], X[~is_a], w[~is_a]
    ya, yd, wa = y[is_a], y[~is_a], w[is_a]
    na, nd = len(Xa), len(Xd)
    big_is_a = na >= nd
    n_big, n_small = (na, nd) if big_is_a else (nd, na)
    if n_big == n_small:
        draws = [tuple(range(n_big))]
    else:
        if math.comb(n_big, n_small) > MAX_DRAWS:
            raise DecompositionError("instance too large for exhaustive enumeration of subsamples")
        draws = list(itertools.combinations(range(n_big), n_small))
    if cfg.ordering == "fixed":
        orders = [tuple(range(len(blocks)))]
    else:
        orders = list(itertools.permutations(range(len(blocks))))

    def by_pred(M, rows):
        pred = F(M[list(rows)] @ beta)
        return [rows[i] for i in sorted(range(len(rows)), key=lambda i: (pred[i], i))]

    totals = []
    for draw in draws:
        rows_a = by_pred(Xa, list(draw) if big_is_a else list(range(na)))
        rows_d = by_pred(Xd, list(range(nd)) if big_is_a else list(draw))
        A, D, pw = Xa[rows_a], Xd[rows_d], wd[rows_d]
        for order in orders:
            swapped = set()
            contrib = [0.0] * len(blocks)
            for k in order:
                before = A.copy()
                for j, m in enumerate(membership):
                    if m in swapped:
                        before[:, j] = D[:, j]
                swapped.add(k)
                after = before.copy()
                for j, m in enumerate(membership):
                    if m == k:
                        after[:, j] = D[:, j]
                contrib[k] = (np.sum(pw * F(before @ beta)) - np.sum(pw * F(after @ beta))) / np.sum(pw)
            totals.append(contrib)
    totals = np.array(totals)
    est = totals.mean(axis=0)
    gap = np.dot(wa, ya) / wa.sum() - np.dot(wd, yd) / wd.sum()
    explained = float(est.sum())
    contributions = [Contribution(b, float(e), pct_explained=100 * e / gap if gap else None,
                                  iteration_sd=float(s))
                     for b, e, s in zip(blocks, est, totals.std(axis=0))]
    return DecompositionResult(spec.outcome, spec.reference_group, comparison, na, nd, float(gap),
                               explained, float(gap) - explained, contributions,
                               100 * explained / gap if gap else None, iterations=len(totals),
                               config=cfg.echo(), draws=totals)
