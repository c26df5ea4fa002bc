"""Linear and non-linear decompositions of a between-group gap in a binary outcome.

Group ``a`` is the reference group and ``d`` the comparison group; positive
contributions mean that giving ``d`` the covariates of ``a`` would raise its
predicted rate. All averages of predicted probabilities are survey-weighted.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import probit
from .dataio import GROUP, INTERCEPT, encode_design, group_samples, stars
from .errors import DecompositionError, EstimationError
from .streams import stream

ORDERINGS = ("randomized", "fixed")
COEFFICIENT_SOURCES = ("pooled", "group_a", "group_d")
MATCHINGS = ("rank", "random")


@dataclass(frozen=True)
class DecompConfig:
    iterations: int = 1000
    seed: int = 0
    ordering: str = "randomized"
    coefficient_source: str = "pooled"
    matching: str = "rank"
    bootstrap_reps: int = 1000
    block_map: tuple = ()
    pooled_group_indicator: bool = False
    link: str = "probit"
    max_failure_rate: float = 0.10

    def __post_init__(self):
        if isinstance(self.block_map, dict):
            object.__setattr__(self, "block_map",
                               tuple((k, tuple(v)) for k, v in self.block_map.items()))
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.bootstrap_reps < 0 or self.bootstrap_reps == 1:
            raise ValueError("bootstrap_reps must be 0 (disabled) or >= 2")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        for name, value, allowed in (("ordering", self.ordering, ORDERINGS),
                                     ("coefficient_source", self.coefficient_source, COEFFICIENT_SOURCES),
                                     ("matching", self.matching, MATCHINGS),
                                     ("link", self.link, ("probit", "identity"))):
            if value not in allowed:
                raise ValueError(f"{name} must be one of {', '.join(allowed)}")

    def echo(self):
        d = dataclasses.asdict(self)
        d["block_map"] = {k: list(v) for k, v in self.block_map}
        return d


@dataclass(frozen=True)
class ReportBlock:
    name: str
    variables: tuple
    columns: np.ndarray


@dataclass(frozen=True)
class MatchedPair:
    index_d: int
    index_a: int
    rank: int


@dataclass
class Contribution:
    name: str
    estimate: float
    se: float | None = None
    stars: str = ""
    pct_explained: float | None = None
    iteration_sd: float = 0.0
    variables: tuple = ()


@dataclass
class DecompositionResult:
    outcome: str
    reference: str
    comparison: str
    n_reference: int
    n_comparison: int
    total_gap: float
    explained_total: float
    unexplained_total: float
    contributions: list
    total_pct_explained: float | None = None
    explained_se: float | None = None
    explained_stars: str = ""
    model_gap: float | None = None
    gap_basis: str = "raw"
    aggregate: dict | None = None
    iterations: int = 0
    bootstrap_reps: int = 0
    bootstrap_failed: int = 0
    config: dict = field(default_factory=dict)
    draws: np.ndarray | None = field(default=None, repr=False, compare=False)
    explained_draws: np.ndarray | None = field(default=None, repr=False, compare=False)

    UNITS = {"total_gap": "proportion", "contributions": "proportion",
             "pct_explained": "percent of total_gap"}

    def contribution(self, name):
        for c in self.contributions:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
             if f.name not in ("draws", "explained_draws", "contributions")}
        d["contributions"] = [dataclasses.asdict(c) | {"variables": list(c.variables)}
                              for c in self.contributions]
        d["units"] = dict(self.UNITS)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d.pop("units", None)
        d["contributions"] = [Contribution(**(c | {"variables": tuple(c["variables"])}))
                              for c in d["contributions"]]
        return cls(**d)


def _wmean(values, w):
    return float(np.dot(w, values) / w.sum())


# -- Oaxaca-Blinder --------------------------------------------------------


def oaxaca_blinder(dm_a, dm_d, coef_a, coef_d):
    """Two-fold linear decomposition with reference coefficients ``coef_a``.

    Returns a dict with ``explained``, ``unexplained`` and per-column
    ``components`` of the explained part.
    """
    if dm_a.columns != dm_d.columns:
        raise DecompositionError("design matrices are not column-aligned")
    coef_a = np.asarray(getattr(coef_a, "beta", coef_a), dtype=float)
    coef_d = np.asarray(getattr(coef_d, "beta", coef_d), dtype=float)
    if coef_a.shape != (dm_a.p,) or coef_d.shape != (dm_a.p,):
        raise DecompositionError("coefficient vectors do not match the design width")
    mean_a = dm_a.w @ dm_a.X / dm_a.w.sum()
    mean_d = dm_d.w @ dm_d.X / dm_d.w.sum()
    components = (mean_a - mean_d) * coef_a
    return {
        "explained": float((mean_a - mean_d) @ coef_a),
        "unexplained": float(mean_d @ (coef_a - coef_d)),
        "components": components,
    }


# -- aggregate Fairlie -----------------------------------------------------


def _require_converged(model):
    if not getattr(model, "converged", True):
        raise DecompositionError("input model did not converge")
    return np.asarray(getattr(model, "beta", model), dtype=float)


def fairlie_aggregate(model_a, model_d, dm_a, dm_d, direction="a", link="probit"):
    """Explained/unexplained split of the model-implied gap.

    ``direction="a"`` weights the explained part with group ``a``'s
    coefficients and the unexplained part with ``d``'s covariates;
    ``direction="d"`` uses ``d``'s coefficients and ``a``'s covariates.
    """
    if dm_a.columns != dm_d.columns:
        raise DecompositionError("design matrices are not column-aligned")
    beta_a, beta_d = _require_converged(model_a), _require_converged(model_d)
    F = probit.get_link(link).cdf

    def avg(dm, beta):
        return _wmean(F(dm.X @ beta), dm.w)

    if direction == "a":
        explained = avg(dm_a, beta_a) - avg(dm_d, beta_a)
        unexplained = avg(dm_d, beta_a) - avg(dm_d, beta_d)
    elif direction == "d":
        explained = avg(dm_a, beta_d) - avg(dm_d, beta_d)
        unexplained = avg(dm_a, beta_a) - avg(dm_a, beta_d)
    else:
        raise ValueError("direction must be 'a' or 'd'")
    return {"explained": explained, "unexplained": unexplained}


# -- subsample matching ----------------------------------------------------


def _rank_order(pred):
    return np.argsort(pred, kind="stable")


def _rank_draw(rng, n_a, n_d, ord_a, ord_d):
    """Selectors over the rank-sorted rows of a and d for one draw (None = all rows)."""
    if n_a == n_d:
        return None, None
    big, ord_big = (n_a, ord_a) if n_a > n_d else (n_d, ord_d)
    keep = np.zeros(big, dtype=bool)
    keep[rng.choice(big, min(n_a, n_d), replace=False)] = True
    sel = keep[ord_big]
    return (sel, None) if n_a > n_d else (None, sel)


def _match(rng, n_a, n_d, ord_a, ord_d, matching):
    """Row indices (into a, into d) of matched pairs for one draw."""
    if matching == "rank":
        sel_a, sel_d = _rank_draw(rng, n_a, n_d, ord_a, ord_d)
        return _take(ord_a, sel_a), _take(ord_d, sel_d)
    if n_a >= n_d:
        sub = rng.choice(n_a, n_d, replace=False) if n_a > n_d else np.arange(n_a)
        return rng.permutation(sub), np.arange(n_d)
    sub = rng.choice(n_d, n_a, replace=False)
    return np.arange(n_a), rng.permutation(sub)


def _take(arr, sel):
    return arr if sel is None else arr[..., sel]


def draw_matched_subsample(pred_a, pred_d, rng, matching="rank"):
    """Draw a same-size subsample of the larger group and pair it with the smaller.

    Both sides are sorted by predicted probability and paired by rank.
    ``rng`` is a numpy Generator (see :func:`gapdecomp.streams.stream`).
    """
    pred_a = np.asarray(pred_a, dtype=float)
    pred_d = np.asarray(pred_d, dtype=float)
    if pred_a.size == 0 or pred_d.size == 0:
        raise DecompositionError("empty group")
    ia, id_ = _match(rng, pred_a.size, pred_d.size, _rank_order(pred_a), _rank_order(pred_d), matching)
    return [MatchedPair(int(d), int(a), r) for r, (a, d) in enumerate(zip(ia, id_))]


# -- detailed Fairlie ------------------------------------------------------


def report_blocks(dm, spec=None, block_map=()):
    """Group design blocks into reporting blocks.

    Every categorical variable is one block. ``block_map`` pairs a report
    name with the variables it gathers; unmapped variables keep their own
    block, labelled with the covariate's display name when ``spec`` is given.
    Group-membership dummies never form a block.
    """
    by_var = {b.name: b for b in dm.blocks if b.kind != GROUP}
    block_map = tuple(block_map.items()) if isinstance(block_map, dict) else tuple(block_map)
    owner = {}
    for name, variables in block_map:
        for v in variables:
            if v not in by_var:
                raise DecompositionError(f"block {name!r}: unknown variable {v!r}")
            if v in owner:
                raise DecompositionError(f"variable {v!r} assigned to blocks {owner[v]!r} and {name!r}")
            owner[v] = name
    out, seen = [], set()
    for var, b in by_var.items():
        name = owner.get(var)
        if name is None:
            label = var
            if spec is not None:
                label = spec.covariate(var).display
            out.append(ReportBlock(label, (var,), np.arange(b.start, b.stop)))
        elif name not in seen:
            seen.add(name)
            variables = dict(block_map)[name]
            cols = np.concatenate([np.arange(by_var[v].start, by_var[v].stop) for v in variables])
            out.append(ReportBlock(name, tuple(variables), np.sort(cols)))
    return out


def _block_predictors(dm, beta, blocks):
    L = np.empty((dm.n, len(blocks)))
    for k, b in enumerate(blocks):
        L[:, k] = dm.X[:, b.columns] @ beta[b.columns]
    return L


def _map_ordered(fn, n, workers):
    if workers <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


@dataclass
class DetailedRun:
    contributions: np.ndarray
    explained: np.ndarray
    blocks: list


def _detailed_draws(beta, dm_a, dm_d, cfg, blocks, replicate=0, workers=1):
    F = probit.get_link(cfg.link).cdf
    if dm_a.n == 0 or dm_d.n == 0:
        raise DecompositionError("degenerate matching: empty group")
    const = beta[0] if dm_a.columns[0] == INTERCEPT else 0.0
    La = _block_predictors(dm_a, beta, blocks).T
    Ld = _block_predictors(dm_d, beta, blocks).T
    za, zd = const + La.sum(axis=0), const + Ld.sum(axis=0)
    pa, pd_ = F(za), F(zd)
    ord_a, ord_d = _rank_order(pa), _rank_order(pd_)
    wd = dm_d.w
    rank = cfg.matching == "rank"
    if rank:
        # rank-sorted copies turn every matched draw into a monotone selection
        La, za, pa = La[:, ord_a], za[ord_a], pa[ord_a]
        Ld, pd_, wd = Ld[:, ord_d], pd_[ord_d], wd[ord_d]
    La, Ld = np.ascontiguousarray(La), np.ascontiguousarray(Ld)
    B = len(blocks)

    def one(it):
        rng = stream(cfg.seed, "iteration", replicate, it)
        if rank:
            sel_a, sel_d = _rank_draw(rng, dm_a.n, dm_d.n, ord_a, ord_d)
        else:
            sel_a, sel_d = _match(rng, dm_a.n, dm_d.n, ord_a, ord_d, cfg.matching)
        order = rng.permutation(B) if cfg.ordering == "randomized" else np.arange(B)
        A, D = _take(La, sel_a), _take(Ld, sel_d)
        wp = _take(wd, sel_d)
        wp = wp / wp.sum()
        z = np.array(_take(za, sel_a))
        first = prev = wp @ _take(pa, sel_a)
        last = wp @ _take(pd_, sel_d)
        contrib = np.zeros(B)
        for step, k in enumerate(order):
            if step == B - 1:
                # every block switched: the d rows' own predictions
                cur = last
            else:
                z += D[k] - A[k]
                cur = wp @ F(z)
            contrib[k] = prev - cur
            prev = cur
        return contrib, first - last

    out = _map_ordered(one, cfg.iterations, workers)
    return DetailedRun(np.array([c for c, _ in out]), np.array([e for _, e in out]), blocks)


def _gap(dm_a, dm_d):
    return _wmean(dm_a.y, dm_a.w) - _wmean(dm_d.y, dm_d.w)


def fairlie_detailed(pooled, dm_a, dm_d, cfg, spec=None, blocks=None, workers=1, replicate=0):
    """Per-block contributions by sequential swapping, averaged over draws.

    Each iteration draws a matched subsample, orders the reporting blocks
    (randomly unless ``cfg.ordering == "fixed"``), then switches the blocks
    from group ``a`` values to group ``d`` values one at a time; a block is
    credited with the fall in mean predicted probability its switch causes.
    """
    if dm_a.columns != dm_d.columns:
        raise DecompositionError("design matrices are not column-aligned")
    beta = _require_converged(pooled)
    if blocks is None:
        blocks = report_blocks(dm_a, spec, cfg.block_map)
    run = _detailed_draws(beta, dm_a, dm_d, cfg, blocks, replicate, workers)
    return _result_from_run(run, dm_a, dm_d, cfg, spec)


def _result_from_run(run, dm_a, dm_d, cfg, spec, labels=("a", "d")):
    gap = _gap(dm_a, dm_d)
    est = run.contributions.mean(axis=0)
    sd = run.contributions.std(axis=0, ddof=1) if cfg.iterations > 1 else np.zeros(len(est))
    explained = float(run.explained.mean())
    contributions = [
        Contribution(b.name, float(e), None, "", _pct(e, gap), float(s), b.variables)
        for b, e, s in zip(run.blocks, est, sd)
    ]
    return DecompositionResult(
        outcome=spec.outcome if spec is not None else "y",
        reference=labels[0], comparison=labels[1],
        n_reference=int(dm_a.n), n_comparison=int(dm_d.n),
        total_gap=gap, explained_total=explained, unexplained_total=gap - explained,
        contributions=contributions, total_pct_explained=_pct(explained, gap),
        iterations=cfg.iterations, config=cfg.echo(),
        draws=run.contributions, explained_draws=run.explained,
    )


def _pct(value, gap):
    if gap == 0:
        return None
    return float(100.0 * value / gap)


# -- bootstrap -------------------------------------------------------------


@dataclass
class BootstrapResult:
    estimates: np.ndarray
    se: np.ndarray
    failed: int

    @property
    def reps(self):
        return self.estimates.shape[0]


def bootstrap_se(draws):
    """Column standard deviations of replicate estimates (exactly 0 when constant)."""
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    se = draws.std(axis=0, ddof=1)
    se[np.ptp(draws, axis=0) == 0] = 0.0
    return se


def bootstrap(result_fn, groups, reps, seed, workers=1, max_failure_rate=0.10):
    """Nonparametric bootstrap, resampling rows within each group independently.

    Parameters
    ----------
    result_fn : callable
        ``result_fn(samples, replicate)`` receives one resampled index array
        per group and returns a 1-d array of estimates. An
        :class:`EstimationError` marks the replicate as failed.
    groups : sequence of index arrays
    reps : int
        Number of replicates, at least 2.

    Replicate ``r`` draws from stream ``(seed, "bootstrap", r)``, so results
    do not depend on ``workers``.
    """
    if reps < 2:
        raise ValueError("bootstrap needs at least 2 replicates")
    groups = [np.asarray(g) for g in groups]

    def one(r):
        rng = stream(seed, "bootstrap", r)
        samples = [g[rng.integers(0, g.size, g.size)] for g in groups]
        try:
            return np.asarray(result_fn(samples, r), dtype=float)
        except EstimationError:
            return None

    out = _map_ordered(one, reps, workers)
    ok = [o for o in out if o is not None]
    failed = reps - len(ok)
    if failed > max_failure_rate * reps:
        raise DecompositionError(f"{failed} of {reps} bootstrap replicates failed")
    if len(ok) < 2:
        raise DecompositionError("fewer than 2 successful bootstrap replicates")
    est = np.vstack(ok)
    return BootstrapResult(est, bootstrap_se(est), failed)


def z_stars(estimate, se):
    if se is None:
        return ""
    if se == 0:
        return "***" if estimate != 0 else ""
    return stars(2 * special.ndtr(-abs(estimate) / se))


# -- orchestration ---------------------------------------------------------


def _fit_reduced(dm, link, start=None, check_rank=True):
    """Fit on the non-constant columns of ``dm``; dropped columns get coefficient 0."""
    keep = np.array([0] + [j for j in range(1, dm.p) if not (dm.X[:, j] == dm.X[0, j]).all()])
    sub = dataclasses.replace(dm, X=dm.X[:, keep], columns=tuple(dm.columns[j] for j in keep),
                              blocks=())
    model = probit.fit(sub, link=link, start=None if start is None else start[keep],
                       check_rank=check_rank)
    beta = np.zeros(dm.p)
    beta[keep] = model.beta
    return dataclasses.replace(model, beta=beta, columns=tuple(dm.columns))


def _drop_group(dm):
    gcols = [j for b in dm.blocks if b.kind == GROUP for j in range(b.start, b.stop)]
    if not gcols:
        return dm
    keep = [j for j in range(dm.p) if j not in gcols]
    return dataclasses.replace(dm, X=dm.X[:, keep], columns=tuple(dm.columns[j] for j in keep),
                               blocks=tuple(b for b in dm.blocks if b.kind != GROUP))


def _chain_coefficients(dm_pool, dm_a, dm_d, cfg, start=None, check_rank=True):
    """Fitted coefficients and the copy used in the swap chain."""
    if cfg.coefficient_source == "pooled":
        fitted = probit.fit(dm_pool, link=cfg.link, start=start, check_rank=check_rank).beta
        beta = fitted.copy()
        for b in dm_pool.blocks:
            if b.kind == GROUP:
                beta[b.slice] = 0.0
        return fitted, beta
    dm = dm_a if cfg.coefficient_source == "group_a" else dm_d
    fitted = _fit_reduced(_drop_group(dm), cfg.link, start, check_rank).beta
    return fitted, fitted


def decompose(ds, spec, cfg, comparison=None, workers=1):
    """Full pipeline for one reference/comparison pair.

    Encodes the two groups with a shared level registry, fits the pooled
    model, runs the detailed decomposition and, when
    ``cfg.bootstrap_reps > 0``, bootstraps the whole pipeline.
    """
    comparison = comparison if comparison is not None else (
        spec.comparison_groups[0] if spec.comparison_groups else None)
    if comparison is None:
        raise DecompositionError("no comparison group given")
    groups = group_samples(ds, spec)
    for g in (spec.reference_group, comparison):
        if g not in groups:
            raise DecompositionError(f"group {g!r} not present")
        if groups[g].n < 2:
            raise DecompositionError(f"group {g!r} has fewer than 2 rows")
    ga, gd = groups[spec.reference_group], groups[comparison]
    rows = np.concatenate([ga.indices, gd.indices])
    indicator = (comparison,) if cfg.pooled_group_indicator else False
    dm_pool = encode_design(ds, spec, rows, group_dummies=indicator)
    ia = np.arange(ga.n)
    id_ = np.arange(ga.n, ga.n + gd.n)
    dm_a, dm_d = dm_pool.rows(ia), dm_pool.rows(id_)
    blocks = report_blocks(dm_pool, spec, cfg.block_map)

    fitted, beta = _chain_coefficients(dm_pool, dm_a, dm_d, cfg)
    run = _detailed_draws(beta, dm_a, dm_d, cfg, blocks, 0, workers)
    result = _result_from_run(run, dm_a, dm_d, cfg, spec, (spec.reference_group, comparison))

    try:
        model_a = _fit_reduced(_drop_group(dm_a), cfg.link)
        model_d = _fit_reduced(_drop_group(dm_d), cfg.link)
    except EstimationError:
        model_a = model_d = None
    if model_a is not None:
        xa, xd = _drop_group(dm_a), _drop_group(dm_d)
        result.aggregate = {
            "reference_coefficients": fairlie_aggregate(model_a, model_d, xa, xd, "a", cfg.link),
            "comparison_coefficients": fairlie_aggregate(model_a, model_d, xa, xd, "d", cfg.link),
        }
        agg = result.aggregate["reference_coefficients"]
        result.model_gap = agg["explained"] + agg["unexplained"]
        result.unexplained_total = result.model_gap - result.explained_total
        result.gap_basis = "group_models"

    if cfg.bootstrap_reps:
        def replicate(samples, r):
            sa, sd = samples
            boot_a, boot_d = dm_pool.rows(sa), dm_pool.rows(sd)
            boot_pool = dm_pool.rows(np.concatenate([sa, sd]))
            _, b = _chain_coefficients(boot_pool, boot_a, boot_d, cfg, fitted, check_rank=False)
            rr = _detailed_draws(b, boot_a, boot_d, cfg, blocks, r + 1, 1)
            return np.append(rr.contributions.mean(axis=0), rr.explained.mean())

        boot = bootstrap(replicate, [ia, id_], cfg.bootstrap_reps, cfg.seed, workers,
                         cfg.max_failure_rate)
        for c, se in zip(result.contributions, boot.se[:-1]):
            c.se = float(se)
            c.stars = z_stars(c.estimate, c.se)
        result.explained_se = float(boot.se[-1])
        result.explained_stars = z_stars(result.explained_total, result.explained_se)
        result.bootstrap_reps = cfg.bootstrap_reps
        result.bootstrap_failed = boot.failed
    return result
