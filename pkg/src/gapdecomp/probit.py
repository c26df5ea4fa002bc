"""Survey-weighted probit estimation.

Newton-Raphson on the weighted log-likelihood with analytic score and
Hessian, sandwich covariance, and average marginal effects with delta-method
standard errors. An identity link is provided as a linear-probability oracle
for the decomposition code; it is fitted by weighted least squares.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, special

from .dataio import NUMERIC, stars
from .errors import CollinearDesignError, EstimationError, QuasiSeparationError

_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)

SEPARATION_BOUND = 30.0


def norm_logpdf(z):
    return -0.5 * np.square(z) - _LOG_SQRT_2PI


def norm_pdf(z):
    return np.exp(norm_logpdf(z))


@dataclass(frozen=True)
class LinkFunction:
    kind: str
    cdf: object
    pdf: object


PROBIT = LinkFunction("probit", special.ndtr, norm_pdf)
IDENTITY = LinkFunction("identity", lambda z: np.asarray(z, dtype=float), np.ones_like)


def get_link(kind):
    if isinstance(kind, LinkFunction):
        return kind
    try:
        return {"probit": PROBIT, "identity": IDENTITY}[kind]
    except KeyError:
        raise ValueError(f"unknown link {kind!r}") from None


@dataclass(frozen=True, eq=False)
class FittedProbit:
    beta: np.ndarray
    cov_classical: np.ndarray
    cov_robust: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    gradient_norm: float
    columns: tuple = ()
    link: str = "probit"
    history: tuple = field(default=(), repr=False)

    @property
    def se_robust(self):
        return np.sqrt(np.diag(self.cov_robust))

    @property
    def se_classical(self):
        return np.sqrt(np.diag(self.cov_classical))


@dataclass
class MarginalEffect:
    variable: str
    column: str
    effect: float
    se: float
    stars: str
    method: str


@dataclass
class MarginalEffectsTable:
    effects: list

    def __iter__(self):
        return iter(self.effects)

    def __len__(self):
        return len(self.effects)

    def get(self, column):
        for e in self.effects:
            if e.column == column:
                return e
        raise KeyError(column)


def _parts(beta, X, y):
    z = X @ beta
    q = 2.0 * y - 1.0
    return z, q, q * z


def _mills(qz, q):
    # signed inverse Mills ratio q*phi(qz)/Phi(qz), evaluated in log space
    return q * np.exp(norm_logpdf(qz) - special.log_ndtr(qz))


def loglik(beta, dm):
    """Weighted probit log-likelihood, stable for large ``|x'b|``."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (dm.p,):
        raise ValueError(f"beta has length {beta.size}, design has {dm.p} columns")
    _, _, qz = _parts(beta, dm.X, dm.y)
    return float(np.dot(dm.w, special.log_ndtr(qz)))


def scores(beta, dm):
    """Per-observation (unweighted) score vectors, one row per observation."""
    _, q, qz = _parts(np.asarray(beta, dtype=float), dm.X, dm.y)
    return _mills(qz, q)[:, None] * dm.X


def gradient(beta, dm):
    _, q, qz = _parts(np.asarray(beta, dtype=float), dm.X, dm.y)
    return dm.X.T @ (dm.w * _mills(qz, q))


def hessian(beta, dm):
    z, q, qz = _parts(np.asarray(beta, dtype=float), dm.X, dm.y)
    lam = _mills(qz, q)
    d = dm.w * lam * (lam + z)
    if np.all(d >= 0):
        Xs = dm.X * np.sqrt(d)[:, None]
        H = -(Xs.T @ Xs)
    else:
        H = -(dm.X.T * d) @ dm.X
    return (H + H.T) / 2


def _collinear_columns(X, w, columns):
    Xw = X * np.sqrt(w)[:, None]
    _, r, piv = linalg.qr(Xw, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag[0] * max(X.shape) * np.finfo(float).eps * 10
    rank = int((diag > tol).sum())
    return [columns[j] if columns else f"x{j}" for j in sorted(piv[rank:])]


def _check_rank(dm):
    bad = _collinear_columns(dm.X, dm.w, dm.columns)
    if bad:
        raise CollinearDesignError(f"collinear design: {', '.join(bad)}", bad)


def _invert_negative(H, dm):
    try:
        c = linalg.cho_factor(-H)
        inv = linalg.cho_solve(c, np.eye(H.shape[0]))
    except linalg.LinAlgError:
        bad = _collinear_columns(dm.X, dm.w, dm.columns) or list(dm.columns)
        raise CollinearDesignError(f"singular Hessian; collinear design: {', '.join(bad)}", bad) from None
    return (inv + inv.T) / 2


def _sandwich(bread, S):
    V = bread @ S @ bread
    return (V + V.T) / 2


def fit(dm, tol=1e-8, max_iter=100, max_halvings=50, link="probit", start=None, check_rank=True):
    """Maximum-likelihood probit fit by damped Newton-Raphson.

    Iterations start from zero unless ``start`` is given (bootstrap refits
    warm-start from the full-sample estimate). ``check_rank=False`` skips the
    pivoted-QR diagnostic; a singular design then still fails, but without
    naming the offending columns.

    Convergence is declared when the sup-norm of the score per unit of total
    weight drops to ``tol`` or the per-unit-weight log-likelihood changes by
    at most 1e-12. Separation is reported when the iterations stall with some
    ``|x'b|`` beyond 30.
    """
    if get_link(link) is IDENTITY:
        return fit_identity(dm)
    n, p = dm.X.shape
    if p > n:
        raise CollinearDesignError(f"more columns ({p}) than observations ({n})", dm.columns)
    if check_rank:
        _check_rank(dm)
    wsum = dm.w.sum()
    beta = np.zeros(p) if start is None else np.array(start, dtype=float)
    ll = loglik(beta, dm)
    history = [ll]
    converged = False
    gnorm = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        g = gradient(beta, dm)
        gnorm = np.max(np.abs(g)) / wsum
        if gnorm <= tol:
            converged = True
            it -= 1
            break
        H = hessian(beta, dm)
        try:
            step = linalg.solve(-H, g, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            _raise_stalled(beta, dm)
            raise CollinearDesignError("singular Hessian", dm.columns) from None
        t = 1.0
        for _ in range(max_halvings + 1):
            cand = beta + t * step
            ll_new = loglik(cand, dm)
            if np.isfinite(ll_new) and ll_new >= ll:
                break
            t /= 2
        else:
            _raise_stalled(beta, dm)
            break
        beta, dll, ll = cand, ll_new - ll, ll_new
        history.append(ll)
        if abs(dll) / wsum <= 1e-12:
            gnorm = np.max(np.abs(gradient(beta, dm))) / wsum
            if gnorm > tol:
                _raise_stalled(beta, dm)
            converged = True
            break
    else:
        _raise_stalled(beta, dm)
    if np.max(np.abs(dm.X @ beta)) > SEPARATION_BOUND and is_separated(dm):
        _raise_stalled(beta, dm)
    H = hessian(beta, dm)
    bread = _invert_negative(H, dm)
    S = scores(beta, dm)
    meat = (S.T * dm.w**2) @ S
    return FittedProbit(beta, bread, _sandwich(bread, meat), ll, it, converged, float(gnorm),
                        tuple(dm.columns), "probit", tuple(history))


def _raise_stalled(beta, dm):
    zmax = np.max(np.abs(dm.X @ beta))
    if zmax > SEPARATION_BOUND:
        raise QuasiSeparationError(
            f"quasi-separation: fitted probabilities at 0/1 (max |x'b| = {zmax:.1f}) "
            "with diverging coefficients")


def is_separated(dm):
    """True if some direction ``d`` has ``q_i x_i'd >= 0`` for all rows, strictly for one.

    Solved as a bounded linear program; such a direction means the likelihood
    keeps increasing along it and no finite MLE exists.
    """
    Z = dm.X * (2.0 * dm.y - 1.0)[:, None]
    scale = np.maximum(np.abs(Z).max(axis=0), 1e-300)
    Z = Z / scale
    res = optimize.linprog(-Z.sum(axis=0), A_ub=-Z, b_ub=np.zeros(dm.n),
                           bounds=[(-1, 1)] * dm.p, method="highs")
    return res.status == 0 and -res.fun > 1e-7 * dm.n


def fit_identity(dm):
    """Weighted least squares; the linear-probability counterpart of :func:`fit`."""
    _check_rank(dm)
    sw = np.sqrt(dm.w)
    Xw = dm.X * sw[:, None]
    beta, *_ = linalg.lstsq(Xw, dm.y * sw)
    resid = dm.y - dm.X @ beta
    bread = linalg.inv(dm.X.T @ (dm.X * dm.w[:, None]))
    sigma2 = np.dot(dm.w, resid**2) / max(dm.n - dm.p, 1)
    S = dm.X * resid[:, None]
    meat = (S.T * dm.w**2) @ S
    return FittedProbit(beta, bread * sigma2, _sandwich(bread, meat), float(-np.dot(dm.w, resid**2)),
                        1, True, 0.0, tuple(dm.columns), "identity")


def _coef(model):
    return model.beta if hasattr(model, "beta") else np.asarray(model, dtype=float)


def predict(model, dm, link="probit"):
    beta = _coef(model)
    if beta.shape[0] != dm.p:
        raise ValueError(f"model has {beta.shape[0]} coefficients, design has {dm.p} columns")
    link = get_link(getattr(model, "link", link))
    return link.cdf(dm.X @ beta)


def robust_cov(model, dm):
    """Sandwich covariance H^-1 (sum w_i^2 s_i s_i') H^-1 at ``model.beta``."""
    beta = _coef(model)
    bread = _invert_negative(hessian(beta, dm), dm)
    S = scores(beta, dm)
    return _sandwich(bread, (S.T * dm.w**2) @ S)


def average_marginal_effects(model, dm, cov=None):
    """Weighted average marginal effects with delta-method SEs.

    Numeric covariates use the derivative ``phi(x'b) b_k``. Dummy columns
    (binary numerics and categorical levels) use the discrete change from 0
    to 1; for a categorical level the other dummies of its block are held at
    0, so the effect is measured against the reference level.
    """
    beta = _coef(model)
    V = model.cov_robust if cov is None else cov
    if not getattr(model, "converged", True):
        raise EstimationError("marginal effects need a converged model")
    w = dm.w / dm.w.sum()
    z = dm.X @ beta
    out = []
    for block in dm.blocks:
        for j in range(block.start, block.stop):
            name = dm.columns[j]
            if block.kind == NUMERIC:
                dens = norm_pdf(z)
                effect = np.dot(w, dens) * beta[j]
                grad = -(beta[j] * (w * dens * z)) @ dm.X
                grad[j] += np.dot(w, dens)
                method = "derivative"
            else:
                z0 = z - dm.X[:, block.slice] @ beta[block.slice]
                z1 = z0 + beta[j]
                d1, d0 = w * norm_pdf(z1), w * norm_pdf(z0)
                effect = np.dot(w, special.ndtr(z1) - special.ndtr(z0))
                grad = (d1 - d0) @ dm.X
                grad[block.slice] = 0.0
                grad[j] = d1.sum()
                method = "discrete"
            if beta[j] == 0.0:
                effect = 0.0
            se = float(np.sqrt(max(grad @ V @ grad, 0.0)))
            p = 2 * special.ndtr(-abs(effect) / se) if se > 0 else (0.0 if effect else 1.0)
            out.append(MarginalEffect(block.name, name, float(effect), se, stars(p), method))
    return MarginalEffectsTable(out)


__all__ = [
    "FittedProbit", "IDENTITY", "LinkFunction", "MarginalEffectsTable", "PROBIT",
    "average_marginal_effects", "fit", "fit_identity", "get_link", "gradient", "hessian",
    "loglik", "predict", "robust_cov", "scores",
]
