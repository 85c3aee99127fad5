"""Nuisance and second-stage regression learners.

Every regression learner here is a *linear smoother*: a fitted value at ``x``
is ``sum_i w_i(x) R_i`` with weights depending only on the training
covariates.  The weights are exposed through :func:`weights_at` and feed the
pointwise standard errors of the second stage.

Regression kinds
    ``ols-linear``, ``nadaraya-watson``, ``local-linear``, ``additive-spline``.
Probability kinds
    ``logistic-linear``, ``additive-spline-logit``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy import linalg
from scipy.interpolate import BSpline
from scipy.special import expit

from .errors import (ConfigError, ConvergenceError, DegenerateLabelsError,
                     EmptyCellError, UnsupportedError)

log = logging.getLogger(__name__)

REGRESSION_KINDS = ("ols-linear", "nadaraya-watson", "local-linear", "additive-spline")
PROBABILITY_KINDS = ("logistic-linear", "additive-spline-logit")

# Queries are processed in blocks so that the (m, n, p) kernel tensors stay small.
_BLOCK_ELEMENTS = 4_000_000


@dataclass(frozen=True)
class LearnerConfig:
    """Learner selection and hyper-parameters.

    Parameters
    ----------
    kind : str
        One of :data:`REGRESSION_KINDS` or :data:`PROBABILITY_KINDS`.
    bandwidth : float, sequence of float, or None
        Kernel bandwidth per coordinate.  ``None`` selects ``bandwidth_rule``.
    bandwidth_rule : {"silverman", "loocv"}
        Automatic bandwidth choice for kernel kinds.
    n_knots : int
        Number of equally spaced interior segments per spline coordinate.
    lam : float or None
        Fixed spline penalty (relative scale).  ``None`` picks it by GCV.
    clip_eps : float
        Probability clipping level for probability kinds.
    max_iter, tol : int, float
        IRLS iteration cap and gradient-norm tolerance.
    """

    kind: str = "ols-linear"
    bandwidth: object = None
    bandwidth_rule: str = "silverman"
    n_knots: int = 8
    lam: float | None = None
    clip_eps: float = 0.01
    max_iter: int = 100
    tol: float = 1e-8

    def __post_init__(self):
        if self.kind not in REGRESSION_KINDS + PROBABILITY_KINDS:
            raise ConfigError(f"unknown learner kind {self.kind!r}")
        if not 0 < self.clip_eps < 0.5:
            raise ConfigError("clip_eps must lie in (0, 0.5)")
        if self.bandwidth_rule not in ("silverman", "loocv"):
            raise ConfigError(f"unknown bandwidth rule {self.bandwidth_rule!r}")
        if self.n_knots < 1:
            raise ConfigError("n_knots must be >= 1")
        if isinstance(self.bandwidth, list):
            object.__setattr__(self, "bandwidth", tuple(self.bandwidth))

    @classmethod
    def from_dict(cls, d: Mapping | str | None, **defaults) -> "LearnerConfig":
        if d is None:
            return cls(**defaults)
        if isinstance(d, str):
            return cls(**{**defaults, "kind": d})
        if isinstance(d, LearnerConfig):
            return d
        return cls(**{**defaults, **dict(d)})

    def to_dict(self) -> dict:
        return {"kind": self.kind, "bandwidth": self.bandwidth, "bandwidth_rule": self.bandwidth_rule,
                "n_knots": self.n_knots, "lam": self.lam, "clip_eps": self.clip_eps,
                "max_iter": self.max_iter, "tol": self.tol}


def clip_probability(p, eps: float = 0.01):
    """Clamp probabilities to ``[eps, 1 - eps]``.

    >>> clip_probability(0.005, 0.01)
    0.01
    """
    if not 0 < eps < 0.5:
        raise ConfigError("eps must lie in (0, 0.5)")
    out = np.clip(p, eps, 1.0 - eps)
    return float(out) if np.ndim(out) == 0 else out


def _as_matrix(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def _query_matrix(x, p: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = False
    if x.ndim == 0:
        x, single = x.reshape(1, 1), True
    elif x.ndim == 1:
        if p == 1 and x.shape[0] != 1:
            x = x[:, None]
        else:
            x, single = x[None, :], True
    if x.shape[1] != p:
        raise ConfigError(f"query has {x.shape[1]} columns, model expects {p}")
    return x, single


# ---------------------------------------------------------------------------
# linear smoothers
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SmootherFit:
    """Base class of fitted linear smoothers.

    Attributes
    ----------
    train_x, train_r : ndarray
        Training covariates and responses.
    bandwidth : ndarray or None
        Kernel bandwidths (kernel kinds only).
    kind : str
    """

    train_x: np.ndarray
    train_r: np.ndarray
    kind: str
    bandwidth: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    @property
    def p(self) -> int:
        return self.train_x.shape[1]

    def weights(self, x) -> np.ndarray:
        """Weight matrix of shape ``(m, n)`` (``(n,)`` for a single point)."""
        q, single = _query_matrix(x, self.p)
        w = self._weights(q)
        return w[0] if single else w

    def predict(self, x) -> np.ndarray:
        q, single = _query_matrix(x, self.p)
        out = self._predict(q)
        return out[0] if single else out

    def __call__(self, x):
        return self.predict(x)

    def weighted_square_sum(self, x, v) -> np.ndarray:
        """``sum_i w_i(x)^2 v_i`` at each query point."""
        q, single = _query_matrix(x, self.p)
        out = self._wss(q, np.asarray(v, dtype=float))
        return out[0] if single else out

    # default implementations through explicit weights, processed blockwise
    def _blocks(self, m):
        step = max(1, _BLOCK_ELEMENTS // max(1, self.train_x.shape[0] * (self.p + 1)))
        for a in range(0, m, step):
            yield slice(a, min(m, a + step))

    def _predict(self, q):
        out = np.empty(q.shape[0])
        for sl in self._blocks(q.shape[0]):
            out[sl] = self._weights(q[sl]) @ self.train_r
        return out

    def _wss(self, q, v):
        out = np.empty(q.shape[0])
        for sl in self._blocks(q.shape[0]):
            w = self._weights(q[sl])
            out[sl] = (w * w) @ v
        return out

    def _weights(self, q):  # pragma: no cover - abstract
        raise NotImplementedError


class _BasisSmoother(SmootherFit):
    """Penalized least squares on a fixed basis: ``w(x) = b(x) M^+ B^T``."""

    def _setup(self, basis_fn, design, penalty, obs_weights=None):
        self._basis_fn = basis_fn
        self._design = design
        wts = np.ones(design.shape[0]) if obs_weights is None else obs_weights
        self._obs_w = wts
        gram = design.T @ (design * wts[:, None])
        self._minv = np.linalg.pinv(gram + penalty, hermitian=True)
        self.coef = self._minv @ (design.T @ (wts * self.train_r))

    def _weights(self, q):
        return (self._basis_fn(q) @ self._minv @ self._design.T) * self._obs_w[None, :]

    def _predict(self, q):
        return self._basis_fn(q) @ self.coef

    def _wss(self, q, v):
        b = self._basis_fn(q) @ self._minv
        wd = self._design * self._obs_w[:, None]
        meat = wd.T @ (wd * v[:, None])
        return np.einsum("ij,jk,ik->i", b, meat, b)


class OlsFit(_BasisSmoother):
    pass


def _silverman(x: np.ndarray) -> np.ndarray:
    n, p = x.shape
    sd = x.std(axis=0, ddof=1) if n > 1 else np.zeros(p)
    q75, q25 = np.percentile(x, [75, 25], axis=0)
    iqr = (q75 - q25) / 1.349
    scale = np.where(iqr > 0, np.minimum(sd, iqr), sd)
    scale = np.where(scale > 0, scale, 1.0)
    return scale * (4.0 / ((p + 2.0) * n)) ** (1.0 / (p + 4.0))


class KernelFit(SmootherFit):
    """Nadaraya-Watson or local-linear smoother with a product Gaussian kernel."""

    def _log_kernel(self, q):
        d = (self.train_x[None, :, :] - q[:, None, :]) / self.bandwidth
        lk = -0.5 * np.einsum("mnp,mnp->mn", d, d)
        lk -= lk.max(axis=1, keepdims=True)
        return lk

    def _weights(self, q):
        k = np.exp(self._log_kernel(q))
        nw = k / k.sum(axis=1, keepdims=True)
        if self.kind == "nadaraya-watson":
            return nw
        # local-linear: w_i = K_i (a + d_i^T b), with (a, b) = M^{-1} e_1
        m, n = k.shape
        p = self.p
        d = self.train_x[None, :, :] - q[:, None, :]
        kd = k[:, :, None] * d
        mat = np.empty((m, p + 1, p + 1))
        mat[:, 0, 0] = k.sum(axis=1)
        mat[:, 0, 1:] = kd.sum(axis=1)
        mat[:, 1:, 0] = mat[:, 0, 1:]
        mat[:, 1:, 1:] = np.einsum("mni,mnj->mij", kd, d)
        out = nw.copy()
        with np.errstate(all="ignore"):
            cond = np.linalg.cond(mat)
        # degenerate local designs keep the local-constant weights
        good = np.isfinite(cond) & (cond < 1e12)
        if good.any():
            e1 = np.zeros((int(good.sum()), p + 1, 1))
            e1[:, 0, 0] = 1.0
            sol = np.linalg.solve(mat[good], e1)[:, :, 0]
            out[good] = k[good] * (sol[:, :1] + np.einsum("mnp,mp->mn", d[good], sol[:, 1:]))
        return out


def _loocv_bandwidth(x, r, kind, base):
    best, best_h = np.inf, base
    for mult in (0.5, 0.7, 1.0, 1.4, 2.0, 2.8):
        h = base * mult
        fit = KernelFit(x, r, kind, h)
        press = 0.0
        for sl in fit._blocks(x.shape[0]):
            w = fit._weights(x[sl])
            idx = np.arange(sl.start, sl.stop)
            wii = w[np.arange(len(idx)), idx]
            fitted = w @ r
            denom = np.where(np.abs(1 - wii) > 1e-12, 1 - wii, np.nan)
            press += np.nansum(((r[sl] - fitted) / denom) ** 2)
        if press < best:
            best, best_h = press, h
    return best_h


class AdditiveSplineFit(_BasisSmoother):
    """Additive cubic P-spline model ``f(x) = c + sum_j f_j(x_j)``.

    Each component uses equally spaced cubic B-splines with a second-order
    difference penalty and a sum-to-zero constraint over the training data.
    The joint penalized normal equations are the fixed point of backfitting
    and are solved directly.  Coordinates with fewer than five distinct values
    enter linearly.
    """


@dataclass
class _AdditiveBasis:
    lo: np.ndarray
    hi: np.ndarray
    parts: list  # per coordinate: ("spline", BSpline knots, Z) or ("linear", center)
    sizes: list

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        cols = [np.ones((x.shape[0], 1))]
        for j, part in enumerate(self.parts):
            xj = np.clip(x[:, j], self.lo[j], self.hi[j])
            if part[0] == "linear":
                cols.append((xj - part[1])[:, None])
            else:
                _, t, zmat = part
                b = BSpline.design_matrix(xj, t, 3).toarray()
                cols.append(b @ zmat)
        return np.hstack(cols)


def _build_additive_basis(x: np.ndarray, n_knots: int):
    n, p = x.shape
    lo, hi = x.min(axis=0), x.max(axis=0)
    parts, sizes, penalties = [], [], []
    for j in range(p):
        if np.unique(x[:, j]).size < 5 or hi[j] <= lo[j]:
            parts.append(("linear", x[:, j].mean()))
            sizes.append(1)
            penalties.append(np.zeros((1, 1)))
            continue
        step = (hi[j] - lo[j]) / n_knots
        t = lo[j] + step * np.arange(-3, n_knots + 4)
        t[3:-3] = np.linspace(lo[j], hi[j], n_knots + 1)
        b = BSpline.design_matrix(np.clip(x[:, j], lo[j], hi[j]), t, 3).toarray()
        zmat = linalg.null_space(b.sum(axis=0)[None, :])
        k = b.shape[1]
        dmat = np.diff(np.eye(k), n=2, axis=0)
        pen = zmat.T @ dmat.T @ dmat @ zmat
        parts.append(("spline", t, zmat))
        sizes.append(zmat.shape[1])
        penalties.append(pen)
    return _AdditiveBasis(lo, hi, parts, sizes), penalties


def _block_penalty(sizes, penalties, lams):
    total = 1 + sum(sizes)
    out = np.zeros((total, total))
    pos = 1
    for size, pen, lam in zip(sizes, penalties, lams):
        out[pos:pos + size, pos:pos + size] = lam * pen
        pos += size
    return out


_LOG_LAM_GRID = np.linspace(-4.0, 5.0, 19)


def _gcv_select(design, r, w, sizes, penalties, fixed_lam=None):
    """Per-component penalties by weighted GCV (grid + coordinate sweeps)."""
    n = design.shape[0]
    gram = design.T @ (design * w[:, None])
    rhs = design.T @ (w * r)
    rr = float(np.sum(w * r * r))
    # relative scale: penalty trace matched to the gram block trace
    scales, pos = [], 1
    for size, pen in zip(sizes, penalties):
        blk = gram[pos:pos + size, pos:pos + size]
        tp = np.trace(pen)
        scales.append(np.trace(blk) / tp if tp > 0 else 0.0)
        pos += size
    scales = np.asarray(scales)
    ridge = 1e-10 * np.trace(gram) / gram.shape[0] * np.eye(gram.shape[0])
    ridge[0, 0] = 0.0

    def crit(loglams):
        pen = _block_penalty(sizes, penalties, scales * 10.0 ** np.asarray(loglams)) + ridge
        try:
            fac = linalg.cho_factor(gram + pen, check_finite=False)
            sol = linalg.cho_solve(fac, np.column_stack([rhs, gram]), check_finite=False)
            coef, edf = sol[:, 0], np.trace(sol[:, 1:])
        except linalg.LinAlgError:
            mi = np.linalg.pinv(gram + pen, hermitian=True)
            coef = mi @ rhs
            edf = np.trace(mi @ gram)
        rss = rr - 2 * coef @ rhs + coef @ gram @ coef
        if n - edf <= 1e-8:
            return np.inf
        return n * max(rss, 0.0) / (n - edf) ** 2

    p = len(sizes)
    if fixed_lam is not None:
        lams = np.full(p, np.log10(fixed_lam))
        return _block_penalty(sizes, penalties, scales * 10.0 ** lams) + ridge, lams
    vals = [crit(np.full(p, g)) for g in _LOG_LAM_GRID]
    lams = np.full(p, _LOG_LAM_GRID[int(np.argmin(vals))])
    best = min(vals)
    if p > 1:
        for _ in range(2):
            changed = False
            for j in range(p):
                if scales[j] == 0:
                    continue
                for g in _LOG_LAM_GRID:
                    trial = lams.copy()
                    trial[j] = g
                    v = crit(trial)
                    if v < best - 1e-12 * abs(best):
                        best, lams, changed = v, trial, True
            if not changed:
                break
    return _block_penalty(sizes, penalties, scales * 10.0 ** lams) + ridge, lams


def fit_smoother(train_x, train_r, kind: str = "local-linear", bandwidth=None,
                 config: LearnerConfig | None = None) -> SmootherFit:
    """Fit a linear smoother.

    Parameters
    ----------
    train_x : array_like, shape (n, p)
    train_r : array_like, shape (n,)
    kind : str
        One of :data:`REGRESSION_KINDS`.
    bandwidth : float or sequence, optional
        Kernel bandwidth; overrides ``config.bandwidth``.
    config : LearnerConfig, optional

    Returns
    -------
    SmootherFit
    """
    if config is None:
        config = LearnerConfig(kind=kind)
    kind = kind or config.kind
    if kind not in REGRESSION_KINDS:
        raise ConfigError(f"{kind!r} is not a regression learner")
    x = _as_matrix(train_x)
    r = np.asarray(train_r, dtype=float).ravel()
    if x.shape[0] != r.shape[0]:
        raise ConfigError("train_x and train_r lengths differ")
    if x.shape[0] < 1:
        raise EmptyCellError("cannot fit a smoother on zero rows")
    n, p = x.shape

    if kind in ("nadaraya-watson", "local-linear"):
        bw = bandwidth if bandwidth is not None else config.bandwidth
        if bw is not None:
            h = np.broadcast_to(np.asarray(bw, dtype=float), (p,)).copy()
            if np.any(~np.isfinite(h)) or np.any(h <= 0):
                raise ConfigError("bandwidth must be positive")
        else:
            h = _silverman(x)
            if config.bandwidth_rule == "loocv" and n > 2:
                h = _loocv_bandwidth(x, r, kind, h)
        return KernelFit(x, r, kind, h)

    if kind == "ols-linear":
        fit = OlsFit(x, r, kind)
        design = np.hstack([np.ones((n, 1)), x])
        fit._setup(lambda q: np.hstack([np.ones((q.shape[0], 1)), q]), design, 0.0)
        return fit

    basis, penalties = _build_additive_basis(x, config.n_knots)
    design = basis(x)
    pen, lams = _gcv_select(design, r, np.ones(n), basis.sizes, penalties, config.lam)
    fit = AdditiveSplineFit(x, r, kind)
    fit._setup(basis, design, pen)
    fit.info["log10_lambda"] = lams.tolist()
    return fit


def fit_regression(x, r, config: LearnerConfig | Mapping | str | None = None) -> SmootherFit:
    """Fit the regression learner named by ``config``."""
    config = LearnerConfig.from_dict(config)
    return fit_smoother(x, r, config.kind, None, config)


def weights_at(fit, x) -> np.ndarray:
    """Smoother weights ``w(x)`` such that ``predict(x) = w(x) @ train_r``.

    Raises
    ------
    UnsupportedError
        If ``fit`` is not a linear smoother.
    """
    if not isinstance(fit, SmootherFit):
        raise UnsupportedError(f"{type(fit).__name__} does not expose smoother weights")
    return fit.weights(x)


def weight_diagnostics(fit, x, delta: float = 0.1) -> dict:
    """Absolute weight mass and tail mass beyond distance ``delta`` from ``x``.

    Returns
    -------
    dict
        ``abs_weight_sum`` = sum_i |w_i(x)| and
        ``tail_mass`` = sum_i |w_i(x)| 1{||X_i - x|| > delta}.
    """
    w = np.atleast_2d(weights_at(fit, x))
    q, _ = _query_matrix(x, fit.p)
    dist = np.sqrt(((fit.train_x[None, :, :] - q[:, None, :]) ** 2).sum(axis=2))
    aw = np.abs(w)
    abs_sum = aw.sum(axis=1)
    tail = (aw * (dist > delta)).sum(axis=1)
    if q.shape[0] == 1:
        return {"abs_weight_sum": float(abs_sum[0]), "tail_mass": float(tail[0])}
    return {"abs_weight_sum": abs_sum, "tail_mass": tail}


# ---------------------------------------------------------------------------
# probability models
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class ProbModel:
    """Fitted model for a conditional probability, clipped to ``[eps, 1 - eps]``.

    Attributes
    ----------
    kind : str
    params : ndarray
        Linear-predictor coefficients on the model's basis (intercept first).
    clip_eps : float
    """

    kind: str
    params: np.ndarray
    clip_eps: float
    basis: object = None
    n_iter: int = 0
    info: dict = field(default_factory=dict)

    @property
    def _p(self):
        return self.info.get("p", 1)

    def predict_proba(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1 and self._p > 1
        q = x[None, :] if single else _as_matrix(x)
        out = np.clip(expit(self.basis(q) @ self.params), self.clip_eps, 1 - self.clip_eps)
        return out[0] if single else out

    def __call__(self, x):
        return self.predict_proba(x)


def _linear_basis(q):
    return np.hstack([np.ones((q.shape[0], 1)), q])


def _check_labels(labels):
    y = np.asarray(labels, dtype=float).ravel()
    if not np.all((y == 0) | (y == 1)):
        raise ConfigError("labels must be 0/1")
    if y.size == 0 or np.all(y == y[0]):
        raise DegenerateLabelsError("labels are all identical; probability model undefined")
    return y


def _irls(design, y, max_iter, tol, penalty=None):
    n, k = design.shape
    pen = np.zeros((k, k)) if penalty is None else penalty
    beta = np.zeros(k)
    ybar = y.mean()
    beta[0] = np.log(ybar / (1 - ybar))

    def objective(b):
        eta = design @ b
        return np.sum(y * eta - np.logaddexp(0.0, eta)) - 0.5 * b @ pen @ b

    obj = objective(beta)
    for it in range(1, max_iter + 1):
        eta = design @ beta
        mu = expit(eta)
        grad = design.T @ (y - mu) - pen @ beta
        if np.linalg.norm(grad) / n < tol:
            return beta, it - 1
        w = np.maximum(mu * (1 - mu), 1e-12)
        hess = design.T @ (design * w[:, None]) + pen
        try:
            step = linalg.solve(hess, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        while t > 1e-10:
            cand = beta + t * step
            new = objective(cand)
            if np.isfinite(new) and new >= obj - 1e-12 * abs(obj):
                break
            t *= 0.5
        else:
            raise ConvergenceError("IRLS line search failed")
        beta, obj = cand, new
        if not np.all(np.isfinite(beta)):
            raise ConvergenceError("IRLS diverged to non-finite coefficients")
    eta = design @ beta
    grad = design.T @ (y - expit(eta)) - pen @ beta
    if np.linalg.norm(grad) / n < tol:
        return beta, max_iter
    raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations "
                           f"(gradient norm {np.linalg.norm(grad) / n:.3g})")


def fit_logistic(features, labels, config: LearnerConfig | None = None) -> ProbModel:
    """Logistic regression with intercept by iteratively reweighted least squares.

    Parameters
    ----------
    features : array_like, shape (n, p)
    labels : array_like of {0, 1}
    config : LearnerConfig, optional
        Uses ``max_iter``, ``tol`` (mean gradient norm) and ``clip_eps``.

    Raises
    ------
    DegenerateLabelsError
        All labels identical.
    ConvergenceError
        IRLS fails to reach the tolerance, e.g. under complete separation.
    """
    config = config or LearnerConfig(kind="logistic-linear")
    x = _as_matrix(features)
    y = _check_labels(labels)
    design = _linear_basis(x)
    beta, it = _irls(design, y, config.max_iter, config.tol)
    return ProbModel("logistic-linear", beta, config.clip_eps, _linear_basis, it, {"p": x.shape[1]})


def fit_spline_logit(features, labels, config: LearnerConfig | None = None) -> ProbModel:
    """Additive P-spline logistic model by penalized IRLS (local scoring).

    Smoothing parameters are re-selected by weighted GCV on the working
    response at each outer iteration until the selection repeats, then held
    fixed.
    """
    config = config or LearnerConfig(kind="additive-spline-logit")
    x = _as_matrix(features)
    y = _check_labels(labels)
    basis, penalties = _build_additive_basis(x, config.n_knots)
    design = basis(x)
    ybar = y.mean()
    eta = np.full(y.shape, np.log(ybar / (1 - ybar)))
    beta = None
    lams = frozen = None
    for it in range(1, config.max_iter + 1):
        mu = expit(eta)
        w = np.clip(mu * (1 - mu), 1e-6, None)
        work = eta + (y - mu) / w
        if frozen is None:
            pen, new_lams = _gcv_select(design, work, w, basis.sizes, penalties, config.lam)
            # stop re-selecting once the penalties repeat
            if lams is not None and np.array_equal(new_lams, lams):
                frozen = pen
            lams = new_lams
        else:
            pen = frozen
        gram = design.T @ (design * w[:, None]) + pen
        new = np.linalg.solve(gram, design.T @ (w * work))
        new_eta = np.clip(design @ new, -30, 30)
        if beta is not None and np.max(np.abs(new_eta - eta)) < 1e-6:
            beta, eta = new, new_eta
            break
        beta, eta = new, new_eta
    else:
        log.warning("spline-logit local scoring hit max_iter=%d", config.max_iter)
    return ProbModel("additive-spline-logit", beta, config.clip_eps, basis, it,
                     {"p": x.shape[1], "log10_lambda": lams.tolist()})


def fit_probability(features, labels, config: LearnerConfig | Mapping | str | None = None) -> ProbModel:
    """Fit the probability learner named by ``config``."""
    config = LearnerConfig.from_dict(config, kind="logistic-linear")
    if config.kind == "logistic-linear":
        return fit_logistic(features, labels, config)
    if config.kind == "additive-spline-logit":
        return fit_spline_logit(features, labels, config)
    raise ConfigError(f"{config.kind!r} is not a probability learner")


def fit_cell_regressions(data, config: LearnerConfig | Mapping | str | None = None, skip=()) -> dict:
    """Fit ``mu_zs`` on the rows of each observed cell ``Z = z, S = s``.

    Parameters
    ----------
    data : SampleTable
    config : LearnerConfig, mapping or str, optional
    skip : sequence of (z, s)
        Cells left unfitted.

    Returns
    -------
    dict
        ``{(z, s): SmootherFit}`` for the fitted cells.
    """
    config = LearnerConfig.from_dict(config)
    fits = {}
    for z in (0, 1):
        for s in (0, 1):
            if (z, s) in skip:
                continue
            mask = data.cell_mask(z, s)
            if not mask.any():
                raise EmptyCellError(f"observed cell (z={z}, s={s}) has no rows")
            fits[(z, s)] = fit_regression(data.x[mask], data.y[mask], config)
    return fits


def with_kind(config: LearnerConfig, kind: str) -> LearnerConfig:
    return replace(config, kind=kind)
