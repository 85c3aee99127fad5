"""Cross-fitted CPCE estimators with a linear-smoother second stage.

Four estimators are provided:

``tlearner``
    Difference of cell outcome regressions; no confidence interval.
``subset``
    Subset pseudo-outcomes regressed on ``X`` within ``S_u``; K-fold
    cross-fitting.
``onestep``
    One-step pseudo-outcomes regressed on ``X`` over all units; K-fold
    cross-fitting with a preliminary estimate (T-learner by default).
``eif``
    EIF ratio pseudo-outcomes with a three-way split: nuisances, denominator
    regression and second stage on disjoint folds.

Pointwise standard errors use the smoother weights of the second stage,
``se(x) = sqrt(sum_i w_i(x)^2 r_i^2)`` with ``r_i`` its residuals.  For
K-fold estimators the fold estimates are averaged with equal weights and the
fold variances combined as ``sqrt(sum_k se_k^2) / K``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np
from scipy.stats import norm

from .core_data import PrincipalStratum, SampleTable
from .errors import ConfigError, DataError, EmptyCellError, UnsupportedError
from .identification import (NuisanceBundle, denominator_component, hajek_normalize,
                             pseudo_eif_ratio, pseudo_onestep, pseudo_subset, subset_mask,
                             tau_from_mu)
from .learners import (LearnerConfig, SmootherFit, fit_cell_regressions, fit_probability,
                       fit_regression)

log = logging.getLogger(__name__)

ESTIMATORS = ("tlearner", "subset", "onestep", "eif")
ROLES = ("nuisance", "denominator", "regression")


# ---------------------------------------------------------------------------
# fold plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FoldPlan:
    """Partition of unit indices.

    Attributes
    ----------
    scheme : {"kfold", "threeway"}
    assignment : ndarray of int
        Fold label per unit.
    roles : dict
        For ``threeway``: ``{"nuisance": label, "denominator": label,
        "regression": label}``.
    """

    scheme: str
    assignment: np.ndarray
    roles: Mapping = field(default_factory=dict)

    @property
    def k(self) -> int:
        return int(self.assignment.max()) + 1

    def indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == label)

    def canonical_folds(self) -> list:
        """Fold index arrays ordered by their smallest unit index.

        The order depends only on the partition, not on the labels, so
        relabeling folds leaves every cross-fitted result bit-identical.
        """
        folds = [self.indices(k) for k in np.unique(self.assignment)]
        return sorted(folds, key=lambda idx: int(idx[0]))


def make_fold_plan(n: int, scheme: str = "kfold", k: int = 2, seed: int = 0,
                   min_fold_size: int = 1) -> FoldPlan:
    """Uniformly random equal-size partition of ``range(n)``.

    Parameters
    ----------
    n : int
    scheme : {"kfold", "threeway"}
    k : int
        Number of folds for ``kfold`` (ignored for ``threeway``).
    seed : int
    min_fold_size : int

    Raises
    ------
    ConfigError
        Unknown scheme, ``k < 2`` or ``n < k * min_fold_size``.
    """
    if scheme == "threeway":
        k = 3
    elif scheme != "kfold":
        raise ConfigError(f"unknown fold scheme {scheme!r}")
    if k < 2:
        raise ConfigError("kfold needs k >= 2")
    if n < k * max(1, min_fold_size):
        raise ConfigError(f"n={n} too small for {k} folds of size >= {min_fold_size}")
    perm = np.random.default_rng(seed).permutation(n)
    assignment = np.empty(n, dtype=np.int64)
    assignment[perm] = np.arange(n) % k
    roles = dict(zip(ROLES, range(3))) if scheme == "threeway" else {}
    return FoldPlan(scheme, assignment, roles)


# ---------------------------------------------------------------------------
# configuration and results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EstimatorConfig:
    """Learners and options shared by all estimators.

    Attributes
    ----------
    outcome : LearnerConfig
        Learner for the four cell regressions ``mu_zs``.
    propensity, principal : LearnerConfig
        Probability learners for ``pi`` and ``p_z``.
    second_stage : LearnerConfig
        Linear smoother regressing pseudo-outcomes on ``X``.
    denominator : LearnerConfig
        Learner for the EIF denominator regression.
    folds : int
        K for K-fold cross-fitting.
    eps : float
        Probability clipping and denominator truncation level.
    hajek : bool
        Apply Hajek normalization to pseudo-outcomes.
    subset_source : {"composed", "direct"}
        Compose subset propensities from ``pi, p1, p0`` or fit them directly.
    prelim : {"tlearner", "zero", "external"}
        Preliminary estimate for the one-step estimator.
    level : float
        Confidence level of pointwise intervals.
    seed : int
        Fold-assignment seed.
    one_sided : bool
        Controls cannot take up the intermediate, so ``p0 = 0`` is known and
        the empty ``(Z=0, S=1)`` cell is not modelled.  Always-takers do not
        exist under this design.
    """

    outcome: LearnerConfig = LearnerConfig(kind="ols-linear")
    propensity: LearnerConfig = LearnerConfig(kind="logistic-linear")
    principal: LearnerConfig = LearnerConfig(kind="logistic-linear")
    second_stage: LearnerConfig = LearnerConfig(kind="ols-linear")
    denominator: LearnerConfig = LearnerConfig(kind="additive-spline")
    folds: int = 2
    eps: float = 0.01
    hajek: bool = False
    subset_source: str = "composed"
    prelim: str = "tlearner"
    level: float = 0.95
    seed: int = 0
    one_sided: bool = False

    def __post_init__(self):
        if self.subset_source not in ("composed", "direct"):
            raise ConfigError(f"unknown subset_source {self.subset_source!r}")
        if self.prelim not in ("tlearner", "zero", "external"):
            raise ConfigError(f"unknown prelim {self.prelim!r}")
        if not 0 < self.level < 1:
            raise ConfigError("level must lie in (0, 1)")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        if not 0 < self.eps < 0.5:
            raise ConfigError("eps must lie in (0, 0.5)")

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "EstimatorConfig":
        d = dict(d or {})
        kinds = {"outcome": "ols-linear", "propensity": "logistic-linear", "principal": "logistic-linear",
                 "second_stage": "ols-linear", "denominator": "additive-spline"}
        for key, default in kinds.items():
            if key in d:
                d[key] = LearnerConfig.from_dict(d[key], kind=default)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown estimator options {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = {}
        for k in self.__dataclass_fields__:
            v = getattr(self, k)
            out[k] = v.to_dict() if isinstance(v, LearnerConfig) else v
        return out


@dataclass(eq=False)
class CpceEstimate:
    """Pointwise CPCE estimates with confidence intervals.

    ``se``, ``ci_lo`` and ``ci_hi`` are NaN for the T-learner.
    """

    stratum: PrincipalStratum
    query_x: np.ndarray
    tau_hat: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    level: float
    meta: dict = field(default_factory=dict)

    @property
    def has_ci(self) -> bool:
        return bool(np.all(np.isfinite(self.se)))

    def significant_fraction(self) -> dict:
        """Fractions of query points whose interval excludes zero, by sign."""
        if not self.has_ci:
            return {"negative": float("nan"), "positive": float("nan")}
        return {"negative": float(np.mean(self.ci_hi < 0)), "positive": float(np.mean(self.ci_lo > 0))}


def pointwise_ci(fit: SmootherFit, pseudo_values, query_x, level: float = 0.95):
    """Standard errors and intervals from a linear-smoother second stage.

    Parameters
    ----------
    fit : SmootherFit
        Second-stage fit of ``pseudo_values`` on the training covariates.
    pseudo_values : array_like
        The responses the fit was trained on.
    query_x : array_like
    level : float

    Returns
    -------
    se, ci_lo, ci_hi : ndarray
    """
    if not isinstance(fit, SmootherFit):
        raise UnsupportedError("pointwise intervals need a linear-smoother second stage")
    r = np.asarray(pseudo_values, dtype=float) - fit.predict(fit.train_x)
    se = np.sqrt(np.maximum(fit.weighted_square_sum(query_x, r * r), 0.0))
    tau = fit.predict(query_x)
    zq = norm.ppf(0.5 + level / 2)
    return se, tau - zq * se, tau + zq * se


# ---------------------------------------------------------------------------
# nuisance fitting
# ---------------------------------------------------------------------------

def _as_callable(model):
    return model.predict_proba if hasattr(model, "predict_proba") else model.predict


def fit_nuisances(data: SampleTable, cfg: EstimatorConfig, strata=()) -> NuisanceBundle:
    """Fit ``pi``, ``p1``, ``p0`` and the four ``mu_zs`` on ``data``.

    With ``subset_source="direct"`` a propensity model is also fitted within
    each subset ``S_u`` for ``u`` in ``strata``.
    """
    prop = replace(cfg.propensity, clip_eps=cfg.eps)
    prin = replace(cfg.principal, clip_eps=cfg.eps)
    pi = fit_probability(data.x, data.z, prop)
    z1, z0 = data.z == 1, data.z == 0
    p1 = fit_probability(data.x[z1], data.s[z1], prin)
    if cfg.one_sided:
        _check_one_sided(data, strata)
        p0 = None
    else:
        p0 = fit_probability(data.x[z0], data.s[z0], prin)
    mu = fit_cell_regressions(data, cfg.outcome, _skip_cells(cfg))
    direct = {}
    if cfg.subset_source == "direct":
        for u in strata:
            u = PrincipalStratum.parse(u)
            m = subset_mask(data.s, data.z, u)
            direct[u] = _as_callable(fit_probability(data.x[m], data.z[m], prop))
    return NuisanceBundle(_as_callable(pi), _as_callable(p1), None if p0 is None else _as_callable(p0),
                          {k: _as_callable(v) for k, v in mu.items()}, cfg.eps, direct, cfg.one_sided)


def _skip_cells(cfg):
    return ((0, 1),) if cfg.one_sided else ()


def _check_one_sided(data, strata=()):
    if np.any((data.z == 0) & (data.s == 1)):
        raise DataError("one_sided is set but some controls have S = 1")
    if any(PrincipalStratum.parse(u) is PrincipalStratum.ALWAYS_TAKER for u in strata):
        raise ConfigError("there are no always-takers under one-sided noncompliance")


def _tau_callable(bundle: NuisanceBundle, u):
    return lambda x: tau_from_mu({k: f(x) for k, f in bundle.mu.items()}, u)


def _meta(kind, cfg, u, scheme, **extra):
    return {"estimator": kind, "stratum": str(u), "fold_scheme": scheme, "config": cfg.to_dict(),
            "hajek_groups": "subset x arm" if kind == "subset" else "arm", **extra}


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

def _query(data, query_x):
    q = data.x if query_x is None else np.asarray(query_x, dtype=float)
    if q.ndim == 1:
        q = q[None, :] if data.p > 1 else q[:, None]
    return q


def estimate_tlearner(data: SampleTable, cfg: EstimatorConfig | None = None, query_x=None,
                      u="10", oracle: NuisanceBundle | None = None) -> CpceEstimate:
    """T-learner: difference of cell outcome regressions fitted on all data."""
    cfg = cfg or EstimatorConfig()
    u = PrincipalStratum.parse(u)
    q = _query(data, query_x)
    if oracle is not None:
        mu = {k: f(q) for k, f in oracle.mu.items()}
    else:
        if cfg.one_sided:
            _check_one_sided(data, (u,))
        fits = fit_cell_regressions(data, cfg.outcome, _skip_cells(cfg))
        mu = {k: f.predict(q) for k, f in fits.items()}
    tau = tau_from_mu(mu, u)
    nan = np.full_like(tau, np.nan)
    return CpceEstimate(u, q, tau, nan, nan.copy(), nan.copy(), cfg.level,
                        _meta("tlearner", cfg, u, "none", oracle=oracle is not None))


def _combine_folds(preds, ses, level):
    k = len(preds)
    tau = np.sum(preds, axis=0) / k
    se = np.sqrt(np.sum(np.square(ses), axis=0)) / k
    zq = norm.ppf(0.5 + level / 2)
    return tau, se, tau - zq * se, tau + zq * se


def _crossfit(kind, data, cfg, q, u, plan, oracle, prelim_fn, capture=None):
    preds, ses, n_used = [], [], []
    for idx in plan.canonical_folds():
        est = data.take(idx)
        if oracle is not None:
            bundle = oracle
        else:
            train = np.setdiff1d(np.arange(data.n), idx, assume_unique=True)
            bundle = fit_nuisances(data.take(train), cfg, (u,))
        nv = bundle.evaluate(est.x)
        if kind == "subset":
            po = pseudo_subset(est.y, est.s, est.z, nv, u, strict=False)
            if not po.in_subset.any():
                raise EmptyCellError(f"subset S_{u} is empty in an estimation fold")
        else:
            if prelim_fn is not None:
                prelim = prelim_fn(est.x)
            elif cfg.prelim == "zero":
                prelim = np.zeros(est.n)
            else:
                prelim = _tau_callable(bundle, u)(est.x)
            po = pseudo_onestep(est.y, est.s, est.z, nv, prelim, u, strict=False)
        if cfg.hajek:
            po = hajek_normalize(po)
        m = po.in_subset
        fit = fit_regression(est.x[m], po.value[m], cfg.second_stage)
        se, _, _ = pointwise_ci(fit, po.value[m], q, cfg.level)
        preds.append(fit.predict(q))
        ses.append(se)
        n_used.append(int(m.sum()))
        if capture is not None:
            capture.append({"index": idx, "pseudo": po, "bundle": bundle, "fit": fit})
    return preds, ses, n_used


def estimate_subset(data: SampleTable, cfg: EstimatorConfig | None = None, query_x=None, u="10",
                    plan: FoldPlan | None = None, oracle: NuisanceBundle | None = None,
                    capture: list | None = None) -> CpceEstimate:
    """Cross-fitted subset estimator.

    For each fold, nuisances are fitted on the other folds, subset
    pseudo-outcomes are built on the fold and regressed on ``X`` over the
    fold's units in ``S_u``.  Fold predictions are averaged.

    Parameters
    ----------
    data : SampleTable
    cfg : EstimatorConfig
    query_x : array_like, optional
        Defaults to every row of ``data``.
    u : stratum
    plan : FoldPlan, optional
        Defaults to ``make_fold_plan(n, "kfold", cfg.folds, cfg.seed)``.
    oracle : NuisanceBundle, optional
        True nuisances to inject instead of fitting.
    capture : list, optional
        Receives per-fold intermediate objects (for diagnostics).
    """
    cfg = cfg or EstimatorConfig()
    u = PrincipalStratum.parse(u)
    q = _query(data, query_x)
    plan = plan or make_fold_plan(data.n, "kfold", cfg.folds, cfg.seed)
    if plan.scheme != "kfold":
        raise ConfigError("the subset estimator uses a kfold plan")
    preds, ses, n_used = _crossfit("subset", data, cfg, q, u, plan, oracle, None, capture)
    tau, se, lo, hi = _combine_folds(preds, ses, cfg.level)
    return CpceEstimate(u, q, tau, se, lo, hi, cfg.level,
                        _meta("subset", cfg, u, f"kfold({plan.k})", subset_sizes=n_used,
                              fold_weighting="unweighted", oracle=oracle is not None))


def estimate_onestep(data: SampleTable, cfg: EstimatorConfig | None = None, query_x=None, u="10",
                     prelim: Callable | None = None, plan: FoldPlan | None = None,
                     oracle: NuisanceBundle | None = None, capture: list | None = None) -> CpceEstimate:
    """Cross-fitted one-step estimator.

    ``prelim`` supplies an external preliminary estimate ``x -> tau_chk(x)``
    (required when ``cfg.prelim == "external"``); otherwise the T-learner from
    the fold's nuisance fits, or zero, is used.
    """
    cfg = cfg or EstimatorConfig()
    u = PrincipalStratum.parse(u)
    if cfg.prelim == "external" and prelim is None:
        raise ConfigError("prelim='external' requires a preliminary estimate")
    if prelim is not None and cfg.prelim != "external":
        cfg = replace(cfg, prelim="external")
    q = _query(data, query_x)
    plan = plan or make_fold_plan(data.n, "kfold", cfg.folds, cfg.seed)
    if plan.scheme != "kfold":
        raise ConfigError("the one-step estimator uses a kfold plan")
    preds, ses, _ = _crossfit("onestep", data, cfg, q, u, plan, oracle, prelim, capture)
    tau, se, lo, hi = _combine_folds(preds, ses, cfg.level)
    return CpceEstimate(u, q, tau, se, lo, hi, cfg.level,
                        _meta("onestep", cfg, u, f"kfold({plan.k})", prelim=cfg.prelim,
                              fold_weighting="unweighted", oracle=oracle is not None))


def estimate_eif(data: SampleTable, cfg: EstimatorConfig | None = None, query_x=None, u="10",
                 plan: FoldPlan | None = None, oracle: NuisanceBundle | None = None,
                 oracle_denominator: Callable | None = None, capture: list | None = None) -> CpceEstimate:
    """EIF ratio estimator on a single three-way split.

    Stage 1 fits nuisances on the nuisance fold; stage 2 regresses
    ``g^u`` on ``X`` over the denominator fold; stage 3 regresses
    ``(phi1 - phi0) / m_g`` on ``X`` over the regression fold.
    """
    cfg = cfg or EstimatorConfig()
    u = PrincipalStratum.parse(u)
    q = _query(data, query_x)
    plan = plan or make_fold_plan(data.n, "threeway", seed=cfg.seed)
    if plan.scheme != "threeway":
        raise ConfigError("the EIF estimator requires a threeway plan")
    d1, d2, d3 = (data.take(plan.indices(plan.roles[r])) for r in ROLES)
    bundle = oracle if oracle is not None else fit_nuisances(d1, cfg, (u,))
    if oracle_denominator is not None:
        m_g = oracle_denominator
    else:
        nv2 = bundle.evaluate(d2.x)
        g = denominator_component(d2.y, d2.s, d2.z, nv2, u, strict=False)
        m_g = fit_regression(d2.x, g, cfg.denominator).predict
    nv3 = bundle.evaluate(d3.x)
    mg3 = m_g(d3.x)
    n_trunc = int(np.sum(mg3 < cfg.eps))
    if n_trunc:
        log.warning("EIF denominator truncated at eps=%g for %d of %d units", cfg.eps, n_trunc, d3.n)
    po = pseudo_eif_ratio(d3.y, d3.s, d3.z, nv3, mg3, u, strict=False)
    if cfg.hajek:
        po = hajek_normalize(po)
    fit = fit_regression(d3.x, po.value, cfg.second_stage)
    se, lo, hi = pointwise_ci(fit, po.value, q, cfg.level)
    if capture is not None:
        capture.append({"pseudo": po, "bundle": bundle, "fit": fit, "m_g": m_g})
    return CpceEstimate(u, q, fit.predict(q), se, lo, hi, cfg.level,
                        _meta("eif", cfg, u, "threeway", denominator_truncated=n_trunc,
                              oracle=oracle is not None))


def estimate(kind: str, data: SampleTable, cfg: EstimatorConfig | None = None, query_x=None, u="10",
             **kwargs) -> CpceEstimate:
    """Dispatch to one of :data:`ESTIMATORS`."""
    fn = {"tlearner": estimate_tlearner, "subset": estimate_subset,
          "onestep": estimate_onestep, "eif": estimate_eif}.get(kind)
    if fn is None:
        raise ConfigError(f"unknown estimator {kind!r}")
    return fn(data, cfg, query_x, u, **kwargs)
