"""Plug-in bias of the robust pseudo-outcomes under controlled nuisance errors.

A *plug-in limit parameter* is the conditional mean of a pseudo-outcome built
from fixed, possibly wrong nuisance functions (tilded below).  Its deviation
from ``tau^u(x)`` is the plug-in bias.  This module evaluates it three ways:

* closed-form product expansions in the errors
  ``e_pi = pi~ - pi``, ``e_pz = p~_z - p_z``, ``e_mu_zs = mu~_zs - mu_zs``
  and ``e_tau = tau_chk - tau`` (:func:`bias_subset_closed`,
  :func:`bias_eif_closed`, :func:`bias_onestep_closed`);
* exact enumeration over the four observed cells (:func:`plugin_limit_exact`);
* Monte-Carlo conditional sampling at a fixed ``x`` (:func:`plugin_limit_mc`).

Perturbations are added on the probability scale and re-clipped to
``[eps, 1 - eps]``; errors are measured after clipping.  Monotonicity and
overlap checks are strict here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .core_data import PrincipalStratum
from .errors import ConfigError, EmptyCellError, OverlapError
from .identification import (NuisanceValues, eif_components, principal_score, pseudo_onestep,
                             pseudo_subset, subset_propensity, tau_from_mu)

U00, U10, U11 = PrincipalStratum.NEVER_TAKER, PrincipalStratum.COMPLIER, PrincipalStratum.ALWAYS_TAKER
FAMILIES = ("subset", "eif", "onestep")
CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _eval(delta, x, shape):
    if delta is None:
        return np.zeros(shape)
    v = delta(x) if callable(delta) else delta
    return np.broadcast_to(np.asarray(v, dtype=float), shape).astype(float)


@dataclass(frozen=True)
class NuisancePerturbation:
    """Additive nuisance errors, each a constant or a function of ``x``.

    Attributes
    ----------
    delta_pi, delta_p1, delta_p0 : float or callable
    delta_mu : dict
        ``{(z, s): float or callable}``.
    delta_pi_subset : dict
        ``{stratum: float or callable}`` added to the true subset propensity;
        when absent the perturbed subset propensity is composed from the
        perturbed ``pi``, ``p1``, ``p0``.
    delta_tau : float, callable or None
        Error of the one-step preliminary estimate.  ``None`` uses the
        T-learner built from the perturbed ``mu``.
    tag : str
    """

    delta_pi: object = 0.0
    delta_p1: object = 0.0
    delta_p0: object = 0.0
    delta_mu: Mapping = field(default_factory=dict)
    delta_pi_subset: Mapping = field(default_factory=dict)
    delta_tau: object = None
    tag: str = ""

    def apply(self, truth: NuisanceValues, x) -> NuisanceValues:
        """Perturbed nuisance values at ``x`` (re-clipped)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        shape = np.shape(truth.pi)
        mu = {c: truth.mu[c] + _eval(self.delta_mu.get(c), x, shape) for c in CELLS}
        ps = {}
        for u, d in self.delta_pi_subset.items():
            u = PrincipalStratum.parse(u)
            ps[u] = subset_propensity(truth.pi, truth.p1, truth.p0, u) + _eval(d, x, shape)
        return NuisanceValues(truth.pi + _eval(self.delta_pi, x, shape),
                              truth.p1 + _eval(self.delta_p1, x, shape),
                              truth.p0 + _eval(self.delta_p0, x, shape), mu, truth.eps, ps)

    def prelim(self, truth: NuisanceValues, pert: NuisanceValues, u, x):
        """Preliminary estimate ``tau_chk`` at ``x``."""
        if self.delta_tau is None:
            return tau_from_mu(pert.mu, u)
        return tau_from_mu(truth.mu, u) + _eval(self.delta_tau, np.atleast_2d(x), np.shape(truth.pi))


def _truth_values(truth, x, eps=0.01) -> NuisanceValues:
    if isinstance(truth, NuisanceValues):
        return truth
    return truth.truth_at(np.atleast_2d(np.asarray(x, dtype=float)), eps)


def _scalar(v):
    v = np.asarray(v, dtype=float)
    return float(v.reshape(-1)[0]) if v.size == 1 else v


def _perturbed_subset_propensity(pv: NuisanceValues, u):
    if u in pv.pi_subset:
        return pv.pi_subset[u]
    return subset_propensity(pv.pi, pv.p1, pv.p0, u)


def _check_scores(tv, pv, u):
    principal_score(tv.p1, tv.p0, u, strict=True)
    principal_score(pv.p1, pv.p0, u, strict=True)
    if u is U10 and np.any(pv.p1 - pv.p0 < pv.eps):
        raise OverlapError("perturbed p1 - p0 below eps")


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def bias_subset_closed(pert: NuisancePerturbation, truth, x, u):
    """Exact two-term plug-in bias of the subset pseudo-outcome.

    ``(d / pS~) e_mu(Z=1 cell) + (d / (1 - pS~)) e_mu(Z=0 cell)`` with
    ``d = pS~ - pS``; the cells are (1,0)/(0,0), (1,1)/(0,0), (1,1)/(0,1)
    for u = 00, 10, 11.

    Examples
    --------
    With ``pS~ = 0.55``, ``d = 0.05`` and cell errors ``+0.1`` / ``-0.1`` the
    bias is ``0.05 * 0.1 / 0.55 - 0.05 * 0.1 / 0.45 = -0.00202``.
    """
    u = PrincipalStratum.parse(u)
    tv = _truth_values(truth, x)
    pv = pert.apply(tv, x)
    ps = subset_propensity(tv.pi, tv.p1, tv.p0, u)
    pst = _perturbed_subset_propensity(pv, u)
    if np.any(pst < pv.eps) or np.any(pst > 1 - pv.eps):
        raise OverlapError("perturbed subset propensity outside [eps, 1 - eps]")
    c1, c0 = {U00: ((1, 0), (0, 0)), U10: ((1, 1), (0, 0)), U11: ((1, 1), (0, 1))}[u]
    d = pst - ps
    return _scalar(d / pst * (pv.mu[c1] - tv.mu[c1]) + d / (1 - pst) * (pv.mu[c0] - tv.mu[c0]))


def subset_bias_frozen(d_pi_s, pst, e_mu1, e_mu0):
    """Subset identity with the denominators ``pS~`` held fixed (linear in ``d_pi_s``)."""
    return d_pi_s / pst * e_mu1 + d_pi_s / (1 - pst) * e_mu0


def _expansion_terms(tv: NuisanceValues, pv: NuisanceValues, u):
    """Second-order part, third-order remainder, ``E[g~|x]`` and ``e~ - E[g~|x]``."""
    epi, ep1, ep0 = pv.pi - tv.pi, pv.p1 - tv.p1, pv.p0 - tv.p0
    em = {c: pv.mu[c] - tv.mu[c] for c in CELLS}
    tpi, tp1, tp0 = pv.pi, pv.p1, pv.p0
    p1, p0 = tv.p1, tv.p0
    c = (1 - tp1) / (1 - tp0)
    q = tp0 / tp1
    a1, a0 = epi / tpi, epi / (1 - tpi)
    if u is U00:
        second = ((1 - tp1) * a1 * em[1, 0] + (1 - tp1) * a0 * em[0, 0]
                  - ep1 * em[0, 0] + c * ep0 * em[0, 0])
        rem = a1 * ep1 * em[0, 0] + c * a0 * ep0 * em[0, 0]
        den = 1 - p1 - a1 * ep1
        gap = -ep1 + a1 * ep1
    elif u is U10:
        et = tp1 - tp0
        second = (-q * ep1 * em[1, 1] + ep0 * em[1, 1] + et * a1 * em[1, 1]
                  - c * ep0 * em[0, 0] + ep1 * em[0, 0] + et * a0 * em[0, 0])
        rem = (em[1, 1] * (q * a1 * ep1 + a0 * ep0)
               - em[0, 0] * (a1 * ep1 + c * a0 * ep0))
        den = p1 - p0 + a1 * ep1 + a0 * ep0
        gap = ep1 - ep0 - a1 * ep1 - a0 * ep0
    else:
        second = (q * ep1 * em[1, 1] - ep0 * em[1, 1] + tp0 * a1 * em[1, 1] + tp0 * a0 * em[0, 1])
        rem = -a0 * ep0 * em[1, 1] - q * a1 * ep1 * em[1, 1]
        den = p0 - a0 * ep0
        gap = ep0 + a0 * ep0
    return second, rem, den, gap


def bias_eif_closed(pert: NuisancePerturbation, truth, x, u, remainder: bool = True):
    """Plug-in bias of the EIF ratio with denominator ``E[g~ | x]``.

    ``(second-order products + R3) / E[g~|x]``; every term carries a score
    error times an outcome error.  ``remainder=False`` drops the third-order
    ``R3`` terms.
    """
    u = PrincipalStratum.parse(u)
    tv = _truth_values(truth, x)
    pv = pert.apply(tv, x)
    _check_scores(tv, pv, u)
    second, rem, den, _ = _expansion_terms(tv, pv, u)
    if np.any(den < pv.eps):
        raise OverlapError("E[g~|x] below eps")
    return _scalar((second + (rem if remainder else 0.0)) / den)


def bias_onestep_closed(pert: NuisancePerturbation, truth, x, u, e_tau=None, remainder: bool = True):
    """Plug-in bias of the one-step pseudo-outcome.

    ``(second-order products + R3) / e~ + e_tau (e~ - E[g~|x]) / e~`` where
    ``e~`` is the perturbed principal score.  ``e_tau`` defaults to the
    perturbation's preliminary-estimate error.
    """
    u = PrincipalStratum.parse(u)
    tv = _truth_values(truth, x)
    pv = pert.apply(tv, x)
    _check_scores(tv, pv, u)
    et = principal_score(pv.p1, pv.p0, u, strict=True)
    if np.any(et < pv.eps):
        raise OverlapError("perturbed principal score below eps")
    if e_tau is None:
        e_tau = pert.prelim(tv, pv, u, x) - tau_from_mu(tv.mu, u)
    second, rem, _, gap = _expansion_terms(tv, pv, u)
    return _scalar((second + (rem if remainder else 0.0)) / et + e_tau * gap / et)


# ---------------------------------------------------------------------------
# exact and Monte-Carlo plug-in limits
# ---------------------------------------------------------------------------

class McResult(NamedTuple):
    mean: float
    mc_se: float
    n_used: int


def _family_values(family, y, s, z, tv, pv, pert, u, x):
    """Per-draw pseudo-outcomes (and weights) at a single ``x``.

    Returns ``(values, mask)`` for subset and one-step, and
    ``(numerator, denominator)`` for the EIF ratio.
    """
    if family == "subset":
        po = pseudo_subset(y, s, z, pv, u, strict=True)
        return po.value, po.in_subset
    if family == "onestep":
        prelim = pert.prelim(tv, pv, u, x)
        return pseudo_onestep(y, s, z, pv, prelim, u, strict=True).value, None
    if family == "eif":
        p1, p0, g = eif_components(y, s, z, pv, u, strict=True)
        return p1 - p0, g
    raise ConfigError(f"unknown family {family!r}")


def plugin_limit_exact(truth, pert: NuisancePerturbation, family: str, x, u) -> float:
    """Plug-in limit parameter by exact enumeration of the observed cells.

    Pseudo-outcomes are linear in ``Y``, so replacing ``Y`` by its cell mean
    and weighting cells by ``P(Z=z, S=s | x)`` gives the conditional
    expectation exactly.  ``x`` must be a single point.
    """
    u = PrincipalStratum.parse(u)
    tv = _truth_values(truth, x)
    if family != "subset":
        _check_scores(tv, pert.apply(tv, x), u)
    pi, p1, p0 = (float(np.ravel(v)[0]) for v in (tv.pi, tv.p1, tv.p0))
    z = np.array([0, 0, 1, 1])
    s = np.array([0, 1, 0, 1])
    prob = np.where(z == 1, pi, 1 - pi) * np.where(s == 1, np.where(z == 1, p1, p0), 1 - np.where(z == 1, p1, p0))
    y = np.array([float(np.ravel(tv.mu[c])[0]) for c in CELLS])
    tv4 = NuisanceValues(np.full(4, pi), np.full(4, p1), np.full(4, p0),
                         {c: np.full(4, float(np.ravel(tv.mu[c])[0])) for c in CELLS}, tv.eps, clip=False)
    xx = np.repeat(np.atleast_2d(np.asarray(x, dtype=float)), 4, axis=0)
    pv = pert.apply(tv4, xx)
    a, b = _family_values(family, y, s, z, tv4, pv, pert, u, xx)
    if family == "subset":
        w = prob * b
        return float(np.sum(w * a) / np.sum(w))
    if family == "eif":
        return float(np.sum(prob * a) / np.sum(prob * b))
    return float(np.sum(prob * a))


def plugin_limit_mc(dgp, pert: NuisancePerturbation, family: str, x, u, n_mc: int = 1_000_000,
                    seed: int = 0, draws=None) -> McResult:
    """Monte-Carlo plug-in limit parameter at a single point ``x``.

    Parameters
    ----------
    dgp : object
        Provides ``truth_at(x)`` and ``sample_conditional(x, n, rng)``.
    pert : NuisancePerturbation
    family : {"subset", "eif", "onestep"}
    x : array_like, shape (p,)
    u : stratum
    n_mc : int
    seed : int
    draws : tuple, optional
        Pre-drawn ``(y, s, z)`` to share across calls.

    Returns
    -------
    McResult
        Mean of the pseudo-outcome (restricted to ``S_u`` for the subset
        family; a ratio of means for the EIF family) and its Monte-Carlo
        standard error.
    """
    u = PrincipalStratum.parse(u)
    if draws is None:
        draws = dgp.sample_conditional(x, n_mc, np.random.default_rng(seed))
    y, s, z = draws
    tv = _truth_values(dgp, x)
    pv = pert.apply(tv, x)
    a, b = _family_values(family, y, s, z, tv, pv, pert, u, x)
    if family == "subset":
        v = a[b]
        if v.size == 0:
            raise EmptyCellError("no Monte-Carlo draws fell in the subset")
        return McResult(float(v.mean()), float(v.std(ddof=1) / np.sqrt(v.size)), int(v.size))
    if family == "onestep":
        return McResult(float(a.mean()), float(a.std(ddof=1) / np.sqrt(a.size)), int(a.size))
    n = a.size
    ma, mb = a.mean(), b.mean()
    r = ma / mb
    cov = np.cov(a, b)
    var = (cov[0, 0] - 2 * r * cov[0, 1] + r * r * cov[1, 1]) / (n * mb * mb)
    return McResult(float(r), float(np.sqrt(var)), int(n))


def closed_form_bias(family, pert, truth, x, u):
    return {"subset": bias_subset_closed, "eif": bias_eif_closed,
            "onestep": bias_onestep_closed}[family](pert, truth, x, u)


# ---------------------------------------------------------------------------
# regime sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Regime:
    """A named perturbation with the families whose bias must vanish."""

    name: str
    perturbation: NuisancePerturbation
    protected: tuple = FAMILIES


def default_regimes(size: float = 0.1) -> list:
    """Protected regimes plus an all-perturbed regime.

    The perturbation functions vary smoothly with ``x`` so the sweep is not
    tied to constant offsets.
    """
    def bump(scale, sign=1.0):
        return lambda x: sign * scale * (0.75 + 0.5 * np.atleast_2d(x)[:, 0])

    scores = dict(delta_pi=bump(size), delta_p1=bump(size, -0.5), delta_p0=bump(size, 0.5))
    mus = {c: bump(size, 1.0 if c[0] == 1 else -1.0) for c in CELLS}
    return [
        Regime("all_exact", NuisancePerturbation(tag="all_exact")),
        Regime("mu_exact", NuisancePerturbation(**scores, tag="mu_exact")),
        Regime("scores_exact", NuisancePerturbation(delta_mu=mus, tag="scores_exact")),
        Regime("onestep_b", NuisancePerturbation(delta_pi=bump(size), delta_tau=bump(size), tag="onestep_b")),
        Regime("onestep_c", NuisancePerturbation(**scores, delta_tau=0.0, tag="onestep_c")),
        Regime("all_perturbed", NuisancePerturbation(**scores, delta_mu=mus, tag="all_perturbed"), ()),
    ]


@dataclass
class SweepRow:
    regime: str
    family: str
    stratum: str
    point: int
    closed: float
    exact: float
    mc_bias: float
    mc_se: float
    expected: str
    passed: bool


def robustness_sweep(dgp, regimes: Sequence[Regime] | None = None, strata=("00", "10", "11"),
                     x_grid=None, families=FAMILIES, n_mc: int = 1_000_000, seed: int = 0,
                     tol: float = 3.0) -> list:
    """Closed-form versus Monte-Carlo plug-in bias over regimes, strata and points.

    A protected row (``expected == "zero"``) passes when the closed form is
    exactly zero and the Monte-Carlo bias is within ``tol`` standard errors
    of zero.  Rows of unprotected families are flagged ``"expected-fail"``:
    their bias need not vanish, and they pass when the closed form agrees
    with the Monte-Carlo bias within ``tol`` standard errors.
    """
    regimes = default_regimes() if regimes is None else regimes
    if x_grid is None:
        x_grid = np.random.default_rng(seed).uniform(0.2, 0.8, (5, dgp.dim))
    x_grid = np.atleast_2d(np.asarray(x_grid, dtype=float))
    rows = []
    for j, x in enumerate(x_grid):
        draws = dgp.sample_conditional(x, n_mc, np.random.default_rng([seed, j]))
        for reg in regimes:
            for u in strata:
                u = PrincipalStratum.parse(u)
                tau = float(dgp.tau(u, x[None, :])[0])
                for fam in families:
                    closed = float(closed_form_bias(fam, reg.perturbation, dgp, x, u))
                    exact = plugin_limit_exact(dgp, reg.perturbation, fam, x, u) - tau
                    mc = plugin_limit_mc(dgp, reg.perturbation, fam, x, u, draws=draws)
                    mc_bias = mc.mean - tau
                    protected = fam in reg.protected
                    if protected:
                        ok = closed == 0.0 and abs(mc_bias) < tol * mc.mc_se
                    else:
                        ok = abs(mc_bias - closed) < tol * mc.mc_se
                    rows.append(SweepRow(reg.name, fam, str(u), j, closed, exact, mc_bias, mc.mc_se,
                                         "zero" if protected else "expected-fail", bool(ok)))
    return rows


def sweep_table(rows: Sequence[SweepRow]) -> dict:
    keys = list(SweepRow.__dataclass_fields__)
    return {k: np.asarray([getattr(r, k) for r in rows]) for k in keys}


def sweep_summary(rows: Sequence[SweepRow], detect: float = 5.0) -> str:
    """Human-readable pass/fail summary of a sweep."""
    lines = []
    for reg in dict.fromkeys(r.regime for r in rows):
        sub = [r for r in rows if r.regime == reg]
        n_ok = sum(r.passed for r in sub)
        line = f"{reg:<14} {n_ok}/{len(sub)} checks pass"
        if any(r.expected == "expected-fail" for r in sub):
            strata = sorted({r.stratum for r in sub})
            hits = {u: any(abs(r.mc_bias) > detect * r.mc_se for r in sub if r.stratum == u) for u in strata}
            line += "; detectable bias (> %g SE) by stratum: %s" % (
                detect, ", ".join(f"{u}={'yes' if h else 'no'}" for u, h in hits.items()))
        lines.append(line)
    return "\n".join(lines)
