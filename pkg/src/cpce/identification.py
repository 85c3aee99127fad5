"""Identification algebra for conditional principal causal effects.

Notation: ``pi(x) = P(Z=1 | x)``, ``p_z(x) = P(S=1 | Z=z, x)`` and
``mu_zs(x) = E[Y | Z=z, S=s, x]``.  Principal scores are
``e00 = 1 - p1``, ``e10 = p1 - p0`` and ``e11 = p0``; the CPCEs are the cell
contrasts ``tau00 = mu10 - mu00``, ``tau10 = mu11 - mu00`` and
``tau11 = mu11 - mu01``.

All functions are vectorized over units: ``y``, ``s``, ``z`` and every array in
a :class:`NuisanceValues` broadcast against each other.

Every pseudo-outcome built here has the form ``base + factor * resid`` where
``factor`` is the inverse-probability weight of the unit's own arm.  Keeping
the pieces separate is what makes Hajek normalization a one-line operation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .core_data import PrincipalStratum
from .errors import EmptyCellError, MonotonicityError, OverlapError

log = logging.getLogger(__name__)

U00, U10, U11 = PrincipalStratum.NEVER_TAKER, PrincipalStratum.COMPLIER, PrincipalStratum.ALWAYS_TAKER
F_KINDS = ("S", "1-S", "YS", "Y(1-S)")


@dataclass(frozen=True, eq=False)
class NuisanceValues:
    """Nuisance functions evaluated at a set of covariate points.

    Probabilities are clipped to ``[eps, 1 - eps]`` on construction unless
    ``clip=False``.

    Attributes
    ----------
    pi, p1, p0 : ndarray
    mu : dict
        ``{(z, s): ndarray}`` for the four observed cells.
    eps : float
    pi_subset : dict, optional
        Directly supplied subset propensities ``{stratum: ndarray}``; when
        absent they are composed from ``pi``, ``p1``, ``p0``.
    clip : bool
    one_sided : bool
        Controls cannot take up the intermediate (``S(0) = 0``): ``p0`` is set
        to exactly zero and ``mu_01``, which then only enters multiplied by
        zero, defaults to zero.
    """

    pi: np.ndarray
    p1: np.ndarray
    p0: np.ndarray
    mu: Mapping
    eps: float = 0.01
    pi_subset: Mapping = field(default_factory=dict)
    clip: bool = True
    one_sided: bool = False

    def __post_init__(self):
        def prob(v):
            v = np.asarray(v, dtype=float)
            return np.clip(v, self.eps, 1 - self.eps) if self.clip else v

        object.__setattr__(self, "pi", prob(self.pi))
        object.__setattr__(self, "p1", prob(self.p1))
        mu = {k: np.asarray(v, dtype=float) for k, v in self.mu.items()}
        if self.one_sided:
            object.__setattr__(self, "p0", np.zeros_like(self.p1))
            mu.setdefault((0, 1), np.zeros_like(self.p1))
        else:
            object.__setattr__(self, "p0", prob(self.p0))
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "pi_subset",
                           {PrincipalStratum.parse(k): prob(v) for k, v in self.pi_subset.items()})

    def take(self, idx) -> "NuisanceValues":
        sel = lambda v: np.broadcast_to(v, np.broadcast(self.pi, self.p1).shape)[idx] if np.ndim(v) else v
        return NuisanceValues(sel(self.pi), sel(self.p1), sel(self.p0),
                              {k: sel(v) for k, v in self.mu.items()}, self.eps,
                              {k: sel(v) for k, v in self.pi_subset.items()}, clip=False,
                              one_sided=self.one_sided)


@dataclass(frozen=True, eq=False)
class NuisanceBundle:
    """Evaluable nuisance functions ``x -> value``.

    Attributes
    ----------
    pi, p1, p0 : callable
        Map an ``(m, p)`` covariate matrix to probabilities.
    mu : dict
        ``{(z, s): callable}``.
    eps : float
        Clipping level applied on evaluation.
    pi_subset : dict, optional
        ``{stratum: callable}`` for directly fitted subset propensities.
    one_sided : bool
        ``p0 = 0`` is known; ``p0`` may then be None.
    """

    pi: Callable
    p1: Callable
    p0: Callable | None
    mu: Mapping
    eps: float = 0.01
    pi_subset: Mapping = field(default_factory=dict)
    one_sided: bool = False

    def evaluate(self, x) -> NuisanceValues:
        x = np.asarray(x, dtype=float)
        p1 = self.p1(x)
        p0 = np.zeros_like(p1) if self.one_sided else self.p0(x)
        return NuisanceValues(self.pi(x), p1, p0,
                              {k: f(x) for k, f in self.mu.items()}, self.eps,
                              {k: f(x) for k, f in self.pi_subset.items()}, one_sided=self.one_sided)

    __call__ = evaluate


@dataclass(frozen=True)
class PseudoOutcomeRecord:
    """One unit's pseudo-outcome."""

    value: float
    in_subset: bool
    stratum: PrincipalStratum
    unit_index: int


@dataclass(frozen=True, eq=False)
class PseudoOutcomes:
    """Vectorized pseudo-outcomes for one estimator family and stratum.

    ``value == base + factor * resid`` elementwise.  ``arm`` is the unit's
    treatment, used for Hajek grouping.
    """

    value: np.ndarray
    in_subset: np.ndarray
    stratum: PrincipalStratum
    unit_index: np.ndarray
    base: np.ndarray
    factor: np.ndarray
    resid: np.ndarray
    arm: np.ndarray
    family: str = ""

    def __len__(self):
        return int(self.value.shape[0])

    def records(self) -> list:
        return [PseudoOutcomeRecord(float(v), bool(m), self.stratum, int(i))
                for v, m, i in zip(self.value, self.in_subset, self.unit_index)]


def _pack(base, factor, resid, in_subset, stratum, z, family, unit_index=None):
    base, factor, resid, in_subset, z = np.broadcast_arrays(
        np.asarray(base, float), np.asarray(factor, float), np.asarray(resid, float),
        np.asarray(in_subset, bool), np.asarray(z))
    n = base.shape[0] if base.ndim else 1
    idx = np.arange(n) if unit_index is None else np.asarray(unit_index)
    value = base + factor * resid
    return PseudoOutcomes(np.atleast_1d(value), np.atleast_1d(in_subset), stratum, np.atleast_1d(idx),
                          np.atleast_1d(base), np.atleast_1d(factor), np.atleast_1d(resid),
                          np.atleast_1d(z), family)


# ---------------------------------------------------------------------------
# scores
# ---------------------------------------------------------------------------

def principal_score(p1, p0, u, strict: bool = True, eps: float = 0.01):
    """Principal score ``e^u`` from ``p1 = P(S=1|Z=1,x)`` and ``p0 = P(S=1|Z=0,x)``.

    Parameters
    ----------
    p1, p0 : float or ndarray
    u : PrincipalStratum or str
    strict : bool
        If True, ``p1 < p0`` raises :class:`MonotonicityError`.  Otherwise
        ``e10`` is floored at ``eps`` with a logged warning.

    Examples
    --------
    >>> principal_score(0.6, 0.2, "10")
    0.4
    """
    u = PrincipalStratum.parse(u)
    p1a, p0a = np.asarray(p1, dtype=float), np.asarray(p0, dtype=float)
    viol = p1a < p0a
    if strict and np.any(viol):
        raise MonotonicityError(f"p1 < p0 at {int(np.sum(viol))} point(s)")
    if u is U00:
        out = 1.0 - p1a
    elif u is U11:
        out = p0a + 0.0 * p1a
    else:
        out = p1a - p0a
        if not strict:
            low = out < eps
            if np.any(low):
                log.warning("flooring e10 at eps=%g at %d point(s) (%d with p1 < p0)",
                            eps, int(np.sum(low)), int(np.sum(viol)))
                out = np.where(low, eps, out)
    return float(out) if out.ndim == 0 else out


def subset_propensity(pi, p1, p0, u):
    """Treatment probability within the observed subset ``S_u``.

    ``S_00 = {S=0}``, ``S_10 = {Z=S}``, ``S_11 = {S=1}``; the value is
    ``P(Z=1 | S_u, x)`` by Bayes' rule.

    Examples
    --------
    >>> round(subset_propensity(0.5, 0.6, 0.2, "10"), 6)
    0.428571
    """
    u = PrincipalStratum.parse(u)
    pi, p1, p0 = (np.asarray(v, dtype=float) for v in (pi, p1, p0))
    if u is U10:
        num, other = pi * p1, (1 - pi) * (1 - p0)
    elif u is U00:
        num, other = pi * (1 - p1), (1 - pi) * (1 - p0)
    else:
        num, other = pi * p1, (1 - pi) * p0
    den = num + other
    if np.any(den <= 0):
        raise OverlapError("subset propensity denominator is zero")
    out = num / den
    return float(out) if out.ndim == 0 else out


def subset_mask(s, z, u) -> np.ndarray:
    """Membership in ``S_u``: ``1{S=0}``, ``1{Z=S}``, ``1{S=1}``."""
    u = PrincipalStratum.parse(u)
    s, z = np.asarray(s), np.asarray(z)
    if u is U00:
        return s == 0
    if u is U10:
        return z == s
    return s == 1


def _subset_cells(u):
    """Cells ``(z, s)`` whose outcome regressions enter the subset contrast (Z=1 cell, Z=0 cell)."""
    return {U00: ((1, 0), (0, 0)), U10: ((1, 1), (0, 0)), U11: ((1, 1), (0, 1))}[PrincipalStratum.parse(u)]


def tau_from_mu(mu: Mapping, u):
    """CPCE as the contrast of cell outcome regressions."""
    c1, c0 = _subset_cells(u)
    return mu[c1] - mu[c0]


# ---------------------------------------------------------------------------
# psi-scores and EIF quantities
# ---------------------------------------------------------------------------

def conditional_mean(a: int, f_kind: str, nv: NuisanceValues):
    """``E[f | X, Z=a]`` implied by the nuisance components."""
    p = nv.p1 if a == 1 else nv.p0
    if f_kind == "S":
        return p
    if f_kind == "1-S":
        return 1 - p
    if f_kind == "YS":
        return nv.mu[(a, 1)] * p
    if f_kind == "Y(1-S)":
        return nv.mu[(a, 0)] * (1 - p)
    raise ValueError(f"unknown f kind {f_kind!r}")


def _f_value(f_kind, y, s):
    s = np.asarray(s, dtype=float)
    if f_kind == "S":
        return s
    if f_kind == "1-S":
        return 1 - s
    if f_kind == "YS":
        return np.asarray(y, float) * s
    return np.asarray(y, float) * (1 - s)


def _arm_factor(z, pi):
    z = np.asarray(z)
    return np.where(z == 1, 1.0 / pi, 1.0 / (1.0 - pi))


def _psi_parts(a, f_kind, y, s, z, nv):
    """``(model, resid)`` with ``psi = model + arm_factor * resid``."""
    m = conditional_mean(a, f_kind, nv)
    ind = (np.asarray(z) == a).astype(float)
    return m, ind * (_f_value(f_kind, y, s) - m)


def psi_score(a: int, f_kind: str, y, s, z, nv: NuisanceValues):
    """``1{Z=a} / P(Z=a|X) * (f - E[f|X,Z=a]) + E[f|X,Z=a]``.

    Parameters
    ----------
    a : {0, 1}
    f_kind : {"S", "1-S", "YS", "Y(1-S)"}
    y, s, z : array_like
    nv : NuisanceValues
    """
    m, r = _psi_parts(a, f_kind, y, s, z, nv)
    return m + _arm_factor(z, nv.pi) * r


def _check_overlap(nv, u, strict):
    eps = nv.eps
    if np.any(nv.pi < eps) or np.any(nv.pi > 1 - eps):
        raise OverlapError("propensity outside [eps, 1 - eps]")
    if np.any(nv.p1 < eps) or np.any(nv.p0 > 1 - eps):
        raise OverlapError("principal-score components outside the overlap region")
    if strict and PrincipalStratum.parse(u) is U10:
        e10 = nv.p1 - nv.p0
        if np.any(e10 < 0):
            raise MonotonicityError("p1 < p0")
        if np.any(e10 < eps):
            raise OverlapError("p1 - p0 below eps")


class _Lin:
    """Linear combination of psi-scores kept as (model, resid) parts."""

    __slots__ = ("m", "r")

    def __init__(self, m, r):
        self.m, self.r = m, r

    def __add__(self, o):
        return _Lin(self.m + o.m, self.r + o.r)

    def __sub__(self, o):
        return _Lin(self.m - o.m, self.r - o.r)

    def scale(self, c):
        return _Lin(c * self.m, c * self.r)


def _eif_parts(y, s, z, nv, u, strict):
    u = PrincipalStratum.parse(u)
    _check_overlap(nv, u, strict)
    psi = {(a, f): _Lin(*_psi_parts(a, f, y, s, z, nv)) for a in (0, 1) for f in F_KINDS}
    p1, p0 = nv.p1, nv.p0
    mu00, mu11 = nv.mu[(0, 0)], nv.mu[(1, 1)]
    e = principal_score(p1, p0, u, strict=strict, eps=nv.eps)
    if u is U10:
        phi1 = psi[1, "YS"].scale(e / p1) - (psi[0, "S"] - psi[1, "S"].scale(p0 / p1)).scale(mu11)
        phi0 = (psi[0, "Y(1-S)"].scale(e / (1 - p0))
                - (psi[1, "1-S"] - psi[0, "1-S"].scale((1 - p1) / (1 - p0))).scale(mu00))
        g = psi[1, "S"] - psi[0, "S"]
    elif u is U11:
        phi1 = psi[1, "YS"].scale(e / p1) + (psi[0, "S"] - psi[1, "S"].scale(p0 / p1)).scale(mu11)
        phi0 = psi[0, "YS"]
        g = psi[0, "S"]
    else:
        phi1 = psi[1, "Y(1-S)"]
        phi0 = (psi[0, "Y(1-S)"].scale(e / (1 - p0))
                + (psi[1, "1-S"] - psi[0, "1-S"].scale((1 - p1) / (1 - p0))).scale(mu00))
        g = psi[1, "1-S"]
    return phi1, phi0, g, e


def eif_components(y, s, z, nv: NuisanceValues, u, strict: bool = True):
    """EIF components ``(phi1, phi0, g)`` for stratum ``u``.

    ``E[g | x] = e^u(x)`` and ``E[phi1 - phi0 | x] = e^u(x) tau^u(x)`` when the
    nuisances are exact.

    Raises
    ------
    OverlapError
        Probabilities outside the overlap region (and, when ``strict``,
        ``p1 - p0 < eps`` for compliers).
    """
    phi1, phi0, g, _ = _eif_parts(y, s, z, nv, u, strict)
    fac = _arm_factor(z, nv.pi)
    return phi1.m + fac * phi1.r, phi0.m + fac * phi0.r, g.m + fac * g.r


# ---------------------------------------------------------------------------
# pseudo-outcomes
# ---------------------------------------------------------------------------

def pseudo_subset(y, s, z, nv: NuisanceValues, u, strict: bool = True) -> PseudoOutcomes:
    """Subset pseudo-outcome.

    ``(Z - pi_S) / (pi_S (1 - pi_S)) * (Y - mu_{Z.}) + (mu_{1.} - mu_{0.})`` with
    ``mu_{Z0}``, ``mu_{ZZ}``, ``mu_{Z1}`` selected for u = 00, 10, 11.

    With ``strict=False`` the subset propensity is clipped to
    ``[eps, 1 - eps]`` instead of raising :class:`OverlapError`.
    """
    u = PrincipalStratum.parse(u)
    y, s, z = (np.asarray(v) for v in (y, s, z))
    if u in nv.pi_subset:
        ps = nv.pi_subset[u]
    else:
        ps = subset_propensity(nv.pi, nv.p1, nv.p0, u)
    ps = np.asarray(ps, dtype=float)
    inside = subset_mask(s, z, u)
    bad = (ps < nv.eps) | (ps > 1 - nv.eps)
    bad = np.broadcast_to(bad, inside.shape) & inside if np.ndim(bad) else (bad & inside)
    if np.any(bad):
        if strict:
            raise OverlapError(f"subset propensity outside [eps, 1 - eps] at {int(np.sum(bad))} unit(s)")
        log.warning("clipping subset propensity at %d unit(s)", int(np.sum(bad)))
    ps = np.clip(ps, nv.eps, 1 - nv.eps)
    c1, c0 = _subset_cells(u)
    m1, m0 = nv.mu[c1], nv.mu[c0]
    sel = np.where(z == 1, m1, m0)
    factor = np.where(z == 1, 1.0 / ps, 1.0 / (1.0 - ps))
    resid = np.where(z == 1, 1.0, -1.0) * (y - sel)
    return _pack(m1 - m0, factor, resid, inside, u, z, "subset")


def pseudo_onestep(y, s, z, nv: NuisanceValues, prelim, u, strict: bool = True) -> PseudoOutcomes:
    """One-step pseudo-outcome ``tau_chk + (phi1 - phi0 - tau_chk g) / e^u``.

    Every unit is in the regression subset.

    Raises
    ------
    OverlapError
        ``e^u(x) < eps`` (with ``strict=False``, ``e10`` is floored instead).
    """
    u = PrincipalStratum.parse(u)
    phi1, phi0, g, e = _eif_parts(y, s, z, nv, u, strict)
    if np.any(np.asarray(e) < nv.eps):
        raise OverlapError("principal score below eps")
    prelim = np.asarray(prelim, dtype=float)
    num = (phi1 - phi0) - g.scale(prelim)
    zz = np.asarray(z)
    return _pack(prelim + num.m / e, _arm_factor(zz, nv.pi), num.r / e, np.ones(np.shape(zz), bool),
                 u, zz, "onestep")


def truncate_denominator(m_g, eps: float = 0.01):
    """Floor the EIF denominator regression at ``eps``."""
    m = np.asarray(m_g, dtype=float)
    if np.any(~np.isfinite(m)):
        raise OverlapError("non-finite denominator")
    return np.maximum(m, eps)


def denominator_component(y, s, z, nv: NuisanceValues, u, strict: bool = True):
    """``g^u(W)`` alone, the response of the denominator regression."""
    return eif_components(y, s, z, nv, u, strict)[2]


def pseudo_eif_ratio(y, s, z, nv: NuisanceValues, m_g, u, strict: bool = True) -> PseudoOutcomes:
    """EIF ratio pseudo-outcome ``(phi1 - phi0) / m_g(x)``.

    ``m_g`` is truncated below at ``eps`` before division.
    """
    u = PrincipalStratum.parse(u)
    phi1, phi0, _, _ = _eif_parts(y, s, z, nv, u, strict)
    m = truncate_denominator(m_g, nv.eps)
    num = phi1 - phi0
    zz = np.asarray(z)
    return _pack(num.m / m, _arm_factor(zz, nv.pi), num.r / m, np.ones(np.shape(zz), bool), u, zz, "eif")


def hajek_normalize(po: PseudoOutcomes) -> PseudoOutcomes:
    """Hajek-normalize the inverse-probability factors of each arm.

    The factors of arm ``a`` are divided by the mean of ``1{Z=a} * factor``
    over the in-subset units, so that this mean becomes one.  For the one-step
    and EIF families every unit is in the subset.

    Raises
    ------
    EmptyCellError
        A group has no units.
    """
    factor = po.factor.copy()
    for arm in (0, 1):
        grp = po.in_subset & (po.arm == arm)
        if not grp.any():
            raise EmptyCellError(f"Hajek group (arm={arm}) is empty")
        factor[grp] = factor[grp] * po.in_subset.sum() / factor[grp].sum()
    return replace(po, factor=factor, value=po.base + factor * po.resid)
