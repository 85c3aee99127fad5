"""Data-generating processes and the Monte-Carlo benchmark harness.

Every DGP draws ``X``, then ``Z | X ~ Ber(pi(X))``, ``S | Z, X ~ Ber(p_Z(X))``
and ``Y = mu_ZS(X) + N(0, noise_sd^2)``.  Each exposes exact nuisance
functions, so the same object serves as simulation source, truth for RMSE,
and conditional sampler for the bias laboratory.

Available DGPs
    ``toy`` (one covariate on [-1, 1], strong conditional treatment
    imbalance), ``study1`` (scenarios 1-4: linear or nonlinear scores crossed
    with linear or nonlinear baseline outcome), ``study2`` (smooth additive
    nuisances), ``study2_nonlinear_tau`` (as study2 with nonlinear effects)
    and ``study3`` (overlap violations, unbalanced ``S = 1`` arms).
    ``hotspot`` is a synthetic stand-in for a 774-patient engagement trial:
    20 named covariates, randomized ``Z``, one-sided engagement ``S`` and a
    binary readmission outcome ``Y ~ Ber(mu_ZS(X))``.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit

from .core_data import PrincipalStratum, SampleTable
from .errors import ConfigError, CpceError
from .estimators import ESTIMATORS, EstimatorConfig, estimate
from .identification import NuisanceBundle, NuisanceValues, tau_from_mu
from .learners import LearnerConfig

log = logging.getLogger(__name__)

DGP_NAMES = ("toy", "study1", "study2", "study2_nonlinear_tau", "study3", "hotspot")
STRATA = tuple(PrincipalStratum)
TWO_PI = 2 * np.pi


@dataclass(frozen=True)
class DgpSpec:
    """Which DGP to draw from and how much.

    Attributes
    ----------
    name : str
        One of :data:`DGP_NAMES`.
    scenario : int
        Study I scenario (1-4); ignored elsewhere.
    n : int
    seed : int
    noise_sd : float
    """

    name: str
    scenario: int = 1
    n: int = 1000
    seed: int = 0
    noise_sd: float = 0.2

    def __post_init__(self):
        if self.name not in DGP_NAMES:
            raise ConfigError(f"unknown DGP {self.name!r}; choose from {DGP_NAMES}")
        if self.name == "study1" and self.scenario not in (1, 2, 3, 4):
            raise ConfigError(f"study1 scenario must be 1-4, got {self.scenario!r}")
        if self.n < 1:
            raise ConfigError("n must be positive")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")


# ---------------------------------------------------------------------------
# DGP definitions
# ---------------------------------------------------------------------------

def _b_linear(x):
    return x[:, 0] - 0.4 * x[:, 1] + x[:, 2] + 0.5 * x[:, 3]


def _b_nonlinear(x):
    return np.sin(TWO_PI * x[:, 0] * x[:, 1]) + (x[:, 2] - 0.5) ** 2 + (x[:, 3] - 0.5) ** 2


def _b_study2(x):
    return (np.sin(TWO_PI * x[:, 0]) + 0.8 * np.log1p(3 * x[:, 1])
            + 1.5 * np.maximum(x[:, 2] - 0.3, 0.0) + (x[:, 3] - 0.5) ** 2)


def _toy_mu(x):
    x = x[:, 0]
    return np.select(
        [x <= -0.5, x < 0, x <= 0.5],
        [(x + 2) ** 2 / 2, x / 2 + 0.875, -5 * (x - 0.2) ** 2 + 1.075],
        x + 0.125)


class Dgp:
    """Exact nuisance functions of a DGP.

    Subclasses define ``dim``, :meth:`sample_x`, :meth:`pi`, :meth:`p1`,
    :meth:`p0` and :meth:`mu`.
    """

    name = "base"
    dim = 4
    monotone = True

    def __init__(self, noise_sd: float = 0.2):
        self.noise_sd = float(noise_sd)

    def sample_x(self, rng, n):
        return rng.random((n, self.dim))

    def mu(self, z: int, s: int, x):  # pragma: no cover - abstract
        raise NotImplementedError

    one_sided = False

    def x_names(self) -> tuple:
        return tuple(f"x{j + 1}" for j in range(self.dim))

    def _outcome(self, mean, rng):
        return mean + self.noise_sd * rng.standard_normal(mean.shape)

    def tau(self, u, x):
        """True CPCE, the cell contrast of the outcome regressions."""
        x = np.atleast_2d(x)
        return tau_from_mu({(z, s): self.mu(z, s, x) for z in (0, 1) for s in (0, 1)}, u)

    def truth_at(self, x, eps: float = 0.01) -> NuisanceValues:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return NuisanceValues(self.pi(x), self.p1(x), self.p0(x),
                              {(z, s): self.mu(z, s, x) for z in (0, 1) for s in (0, 1)}, eps,
                              one_sided=self.one_sided)

    def bundle(self, eps: float = 0.01) -> NuisanceBundle:
        return NuisanceBundle(self.pi, self.p1, self.p0,
                              {(z, s): (lambda x, z=z, s=s: self.mu(z, s, np.atleast_2d(x)))
                               for z in (0, 1) for s in (0, 1)}, eps, one_sided=self.one_sided)

    def principal_scores(self, x) -> dict:
        p1, p0 = self.p1(x), self.p0(x)
        return {PrincipalStratum.NEVER_TAKER: 1 - p1, PrincipalStratum.COMPLIER: p1 - p0,
                PrincipalStratum.ALWAYS_TAKER: p0}

    def draw(self, rng, n) -> SampleTable:
        x = self.sample_x(rng, n)
        z = (rng.random(n) < self.pi(x)).astype(np.int8)
        ps = np.where(z == 1, self.p1(x), self.p0(x))
        s = (rng.random(n) < ps).astype(np.int8)
        mean = np.select([(z == 0) & (s == 0), (z == 0) & (s == 1), (z == 1) & (s == 0)],
                         [self.mu(0, 0, x), self.mu(0, 1, x), self.mu(1, 0, x)], self.mu(1, 1, x))
        return SampleTable(x, self._outcome(mean, rng), s, z, self.x_names())

    def sample_conditional(self, x, n_mc: int, rng):
        """Draw ``(Y, S, Z)`` given a single covariate point ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        pi, p1, p0 = float(self.pi(x)[0]), float(self.p1(x)[0]), float(self.p0(x)[0])
        mu = {(z, s): float(self.mu(z, s, x)[0]) for z in (0, 1) for s in (0, 1)}
        z = (rng.random(n_mc) < pi).astype(np.int8)
        s = (rng.random(n_mc) < np.where(z == 1, p1, p0)).astype(np.int8)
        mean = np.select([(z == 0) & (s == 0), (z == 0) & (s == 1), (z == 1) & (s == 0)],
                         [mu[0, 0], mu[0, 1], mu[1, 0]], mu[1, 1])
        return self._outcome(mean, rng), s, z


class Study1(Dgp):
    """Study I: parametric working models under four scenarios.

    Scenarios 1-2 use logistic-linear scores, 3-4 nonlinear scores;
    scenarios 1 and 3 use a linear baseline outcome, 2 and 4 a nonlinear one.
    """

    name = "study1"

    def __init__(self, scenario: int = 1, noise_sd: float = 0.2):
        super().__init__(noise_sd)
        if scenario not in (1, 2, 3, 4):
            raise ConfigError(f"study1 scenario must be 1-4, got {scenario!r}")
        self.scenario = scenario
        self.linear_scores = scenario in (1, 2)
        self.linear_outcome = scenario in (1, 3)

    def _pz_index(self, x):
        if self.linear_scores:
            return 0.4 * x[:, 0] - 0.4 * x[:, 1] + 0.4 * x[:, 3] + 0.8
        return 0.8 + (x[:, 0] - 0.5) ** 2 + 0.6 * np.sin(TWO_PI * x[:, 2] * x[:, 3])

    def pi(self, x):
        x = np.atleast_2d(x)
        if self.linear_scores:
            return expit(-0.4 + 0.4 * (x[:, 0] + x[:, 1] + x[:, 2]))
        return expit(0.5 * np.sin(TWO_PI * x[:, 0] * x[:, 1]) + 0.5 * (x[:, 2] - 0.5) ** 2)

    def p1(self, x):
        return expit(self._pz_index(np.atleast_2d(x)))

    def p0(self, x):
        return expit(-self._pz_index(np.atleast_2d(x)))

    def b(self, x):
        return _b_linear(x) if self.linear_outcome else _b_nonlinear(x)

    def mu(self, z, s, x):
        x = np.atleast_2d(x)
        return self.b(x) + 0.5 * (z + s - z * s) * x[:, 0]


class Study2(Dgp):
    """Study II: smooth additive nuisances (GAM working models are correct)."""

    name = "study2"

    def _p_index(self, x):
        return (0.8 + 0.3 * np.log1p(x[:, 0]) + 0.3 * (x[:, 1] - 0.5)
                - 0.25 * (x[:, 2] - 0.5) ** 2)

    def pi(self, x):
        x = np.atleast_2d(x)
        return expit(np.sin(TWO_PI * x[:, 0]) + (x[:, 1] - 0.5))

    def p1(self, x):
        return expit(self._p_index(np.atleast_2d(x)))

    def p0(self, x):
        return expit(-self._p_index(np.atleast_2d(x)))

    def mu(self, z, s, x):
        x = np.atleast_2d(x)
        return _b_study2(x) + 0.5 * (z + s - z * s) * x[:, 0]


class Study2NonlinearTau(Study2):
    """Study II scores and baseline with nonlinear stratum effects.

    ``mu00 = b``, ``mu10 = b + tau00``, ``mu11 = b + tau10`` and
    ``mu01 = b + tau10 - tau11``, so the cell contrasts reproduce the three
    target effects exactly.
    """

    name = "study2_nonlinear_tau"

    @staticmethod
    def tau00(x):
        return 0.5 * np.sin(TWO_PI * x[:, 0]) + 0.3 * (x[:, 1] - 0.5) ** 2

    @staticmethod
    def tau10(x):
        return 0.4 * (x[:, 0] - 0.5) ** 2 + 0.6 * np.cos(TWO_PI * x[:, 1])

    @staticmethod
    def tau11(x):
        return -0.5 * np.sin(TWO_PI * x[:, 0]) + 0.5 * (x[:, 2] - 0.5) ** 2

    def mu(self, z, s, x):
        x = np.atleast_2d(x)
        b = _b_study2(x)
        if (z, s) == (0, 0):
            return b
        if (z, s) == (1, 0):
            return b + self.tau00(x)
        if (z, s) == (1, 1):
            return b + self.tau10(x)
        return b + self.tau10(x) - self.tau11(x)


class Study3(Dgp):
    """Study III: extreme propensities and unbalanced ``S = 1`` arms.

    Temporary scores are mixed through their midpoint ``m`` and half-gap
    ``|Delta| / 2`` so that ``p1 >= p0`` holds everywhere; all three scores are
    truncated to ``[0.01, 0.99]``.
    """

    name = "study3"

    def _raw_pi(self, x):
        return expit(3.2 * np.sin(TWO_PI * x[:, 0] * x[:, 1]) + 2.6 * (x[:, 2] - 0.5) ** 2)

    def _scores(self, x):
        x = np.atleast_2d(x)
        pi = self._raw_pi(x)
        core = 0.8 + 1.2 * (x[:, 0] - 0.5) ** 2 + 0.9 * np.sin(TWO_PI * x[:, 2] * x[:, 3])
        p1t = expit(core - 0.6 * (pi - 0.5))
        p0t = expit(-core - 1.5 * (pi - 0.5))
        m, gap = (p1t + p0t) / 2, np.abs(p1t - p0t)
        return (np.clip(pi, 0.01, 0.99), np.clip(m + gap / 2, 0.01, 0.99), np.clip(m - gap / 2, 0.01, 0.99))

    def pi(self, x):
        return self._scores(x)[0]

    def p1(self, x):
        return self._scores(x)[1]

    def p0(self, x):
        return self._scores(x)[2]

    def mu(self, z, s, x):
        x = np.atleast_2d(x)
        return _b_linear(x) + 0.5 * (z + s - z * s) * x[:, 0]


class Toy(Dgp):
    """One-dimensional example with treatment imbalance conditional on ``X``.

    ``pi(x) = 0.5 + 0.25 sign(x)``; ``p1 = 0.35 + 0.2 sign(x)``,
    ``p0 = 0.65 - 0.2 sign(x)``; all four ``mu_zs`` equal a piecewise
    polynomial, so every CPCE is identically zero.  For ``x < 0`` these scores
    have ``p1 < p0``, so the DGP is not monotone there.
    """

    name = "toy"
    dim = 1
    monotone = False

    def sample_x(self, rng, n):
        return rng.uniform(-1.0, 1.0, (n, 1))

    def pi(self, x):
        return 0.5 + 0.25 * np.sign(np.atleast_2d(x)[:, 0])

    def p1(self, x):
        return 0.35 + 0.2 * np.sign(np.atleast_2d(x)[:, 0])

    def p0(self, x):
        return 0.65 - 0.2 * np.sign(np.atleast_2d(x)[:, 0])

    def mu(self, z, s, x):
        return _toy_mu(np.atleast_2d(x))


HOTSPOT_COLUMNS = ("male", "black", "hispanic", "white", "employed", "age_group", "education",
                   "married", "stable_housing", "social_support", "self_rated_health", "arthritis",
                   "mental_health", "substance_abuse", "hiv_aids", "copd", "chf", "diabetes",
                   "ip_admits_180d", "index_los_days")


class Hotspot(Dgp):
    """Synthetic engagement trial with the 20-covariate public schema.

    ``Z`` is randomized with probability 0.5.  Controls cannot engage
    (``p0 = 0``); treated patients engage with a logistic probability.  The
    30-day readmission risk is logistic, and among compliers the treatment
    lowers it more for patients with more prior admissions, longer index
    stays and for women.  Column values are synthetic.
    """

    name = "hotspot"
    dim = len(HOTSPOT_COLUMNS)
    one_sided = True

    def x_names(self) -> tuple:
        return HOTSPOT_COLUMNS

    def sample_x(self, rng, n):
        binary = {"male": 0.45, "black": 0.45, "hispanic": 0.35, "white": 0.15, "employed": 0.1,
                  "married": 0.15, "stable_housing": 0.7, "social_support": 0.6, "arthritis": 0.15,
                  "mental_health": 0.45, "substance_abuse": 0.35, "hiv_aids": 0.05, "copd": 0.25,
                  "chf": 0.2, "diabetes": 0.4}
        cols = []
        for name in HOTSPOT_COLUMNS:
            if name in binary:
                cols.append((rng.random(n) < binary[name]).astype(float))
            elif name == "age_group":
                cols.append(rng.integers(1, 5, n).astype(float))
            elif name == "education":
                cols.append(rng.integers(1, 4, n).astype(float))
            elif name == "self_rated_health":
                cols.append(rng.integers(1, 6, n).astype(float))
            elif name == "ip_admits_180d":
                cols.append(rng.poisson(1.5, n).astype(float))
            else:
                cols.append(1.0 + rng.poisson(4.0, n).astype(float))
        return np.column_stack(cols)

    @staticmethod
    def _col(x, name):
        return np.atleast_2d(x)[:, HOTSPOT_COLUMNS.index(name)]

    def pi(self, x):
        return np.full(np.atleast_2d(x).shape[0], 0.5)

    def p1(self, x):
        c = self._col
        return expit(0.6 + 0.3 * c(x, "social_support") + 0.3 * c(x, "stable_housing")
                     - 0.4 * c(x, "substance_abuse") - 0.1 * (c(x, "age_group") - 2.5))

    def p0(self, x):
        return np.zeros(np.atleast_2d(x).shape[0])

    def _base(self, x):
        c = self._col
        return (-0.9 + 0.25 * c(x, "ip_admits_180d") + 0.04 * c(x, "index_los_days")
                + 0.3 * c(x, "chf") + 0.2 * c(x, "copd") + 0.2 * c(x, "substance_abuse")
                - 0.1 * c(x, "self_rated_health"))

    def _complier_shift(self, x):
        c = self._col
        return -(0.1 + 0.15 * c(x, "ip_admits_180d") + 0.03 * c(x, "index_los_days")
                 + 0.3 * (1 - c(x, "male")))

    def mu(self, z, s, x):
        x = np.atleast_2d(x)
        eta = self._base(x) + 0.2 * s
        if z == 1 and s == 1:
            eta = eta + self._complier_shift(x)
        return expit(eta)

    def _outcome(self, mean, rng):
        return (rng.random(mean.shape) < mean).astype(float)


def make_dgp(spec: DgpSpec) -> Dgp:
    if spec.name == "study1":
        return Study1(spec.scenario, spec.noise_sd)
    cls = {"toy": Toy, "hotspot": Hotspot, "study2": Study2, "study2_nonlinear_tau": Study2NonlinearTau, "study3": Study3}[spec.name]
    return cls(spec.noise_sd)


@dataclass(frozen=True, eq=False)
class TruthBundle:
    """Exact nuisances and effects of a DGP."""

    dgp: Dgp
    nuisances: NuisanceBundle

    def tau(self, u, x):
        return self.dgp.tau(u, x)


def generate(spec: DgpSpec) -> tuple[SampleTable, TruthBundle]:
    """Draw a sample of size ``spec.n`` and return it with the truth.

    The sample depends only on ``spec``; identical specs give bit-identical
    tables.
    """
    dgp = make_dgp(spec)
    data = dgp.draw(np.random.default_rng(spec.seed), spec.n)
    return data, TruthBundle(dgp, dgp.bundle())


def rmse_eval(estimate_or_values, truth, eval_x=None, u=None) -> float:
    """Root mean squared error of estimates against the true CPCE on a grid.

    Parameters
    ----------
    estimate_or_values : CpceEstimate or array_like
        Estimates at ``eval_x`` (the estimate's own query points by default).
    truth : TruthBundle, Dgp or array_like
        True effects, or an object whose ``tau(u, x)`` provides them.
    """
    if hasattr(estimate_or_values, "tau_hat"):
        est = estimate_or_values.tau_hat
        eval_x = estimate_or_values.query_x if eval_x is None else eval_x
        u = estimate_or_values.stratum if u is None else u
    else:
        est = np.asarray(estimate_or_values, dtype=float)
    tau = truth.tau(u, eval_x) if hasattr(truth, "tau") else np.asarray(truth, dtype=float)
    return float(np.sqrt(np.mean((np.asarray(est) - tau) ** 2)))


# ---------------------------------------------------------------------------
# benchmark harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BenchConfig:
    """Full-factorial benchmark grid.

    Attributes
    ----------
    dgp : str
    scenario : int
    estimators : sequence of str
    strata : sequence of str
    n_values : sequence of int
    reps : int
    seed : int
        Replication ``r`` at size ``n`` draws from ``default_rng([seed, n, r])``.
    n_eval : int
        Evaluation points drawn from the covariate law per replication.
    ci_points : sequence of sequence of float
        Fixed points at which interval coverage is recorded.
    estimator : EstimatorConfig
    noise_sd : float
    threads : int or None
        Worker processes; ``None`` uses all available cores.
    """

    dgp: str = "study1"
    scenario: int = 1
    estimators: tuple = ESTIMATORS
    strata: tuple = ("10",)
    n_values: tuple = (1000, 2000, 4000, 8000)
    reps: int = 100
    seed: int = 0
    n_eval: int = 200
    ci_points: tuple = ()
    estimator: EstimatorConfig = EstimatorConfig()
    noise_sd: float = 0.2
    threads: int | None = None

    def __post_init__(self):
        DgpSpec(self.dgp, self.scenario, 1, 0, self.noise_sd)
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {e!r}")
        for u in self.strata:
            PrincipalStratum.parse(u)
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        for key in ("estimators", "strata", "n_values", "ci_points"):
            v = getattr(self, key)
            object.__setattr__(self, key, tuple(tuple(p) if key == "ci_points" else p for p in v))

    @classmethod
    def from_dict(cls, d) -> "BenchConfig":
        d = dict(d)
        if "estimator" in d:
            d["estimator"] = EstimatorConfig.from_dict(d["estimator"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown bench options {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["estimator"] = self.estimator.to_dict()
        out["estimators"], out["strata"], out["n_values"] = list(self.estimators), list(self.strata), list(self.n_values)
        out["ci_points"] = [list(p) for p in self.ci_points]
        return out


@dataclass
class BenchResult:
    """Replication results for one (DGP, estimator, stratum, n) cell."""

    dgp: str
    scenario: int
    estimator: str
    stratum: str
    n: int
    reps: int
    rmse: np.ndarray
    covered: np.ndarray | None = None
    errors: list = field(default_factory=list)

    @property
    def mean_rmse(self) -> float:
        ok = self.rmse[np.isfinite(self.rmse)]
        return float(ok.mean()) if ok.size else float("nan")

    @property
    def coverage(self):
        """Empirical coverage per CI point over successful replications."""
        if self.covered is None or self.covered.size == 0:
            return None
        ok = np.isfinite(self.rmse)
        return self.covered[ok].mean(axis=0)


def _run_one(cfg: BenchConfig, n: int, rep: int):
    rng = np.random.default_rng([cfg.seed, n, rep])
    dgp = make_dgp(DgpSpec(cfg.dgp, cfg.scenario, n, 0, cfg.noise_sd))
    data = dgp.draw(rng, n)
    eval_x = dgp.sample_x(rng, cfg.n_eval)
    ci_x = np.asarray(cfg.ci_points, dtype=float).reshape(-1, dgp.dim)
    q = np.vstack([eval_x, ci_x])
    ecfg = EstimatorConfig(**{**{k: getattr(cfg.estimator, k) for k in cfg.estimator.__dataclass_fields__},
                              "seed": int(rng.integers(2 ** 31))})
    out = []
    for u in cfg.strata:
        tau = dgp.tau(u, q)
        for kind in cfg.estimators:
            try:
                est = estimate(kind, data, ecfg, q, u)
                err = est.tau_hat - tau
                rmse = float(np.sqrt(np.mean(err[: cfg.n_eval] ** 2)))
                cov = ((est.ci_lo[cfg.n_eval:] <= tau[cfg.n_eval:])
                       & (tau[cfg.n_eval:] <= est.ci_hi[cfg.n_eval:])).astype(float)
                if not est.has_ci:
                    cov[:] = np.nan
                out.append((str(u), kind, rmse, cov, None))
            except (CpceError, np.linalg.LinAlgError) as exc:
                out.append((str(u), kind, float("nan"), np.full(len(ci_x), np.nan), f"{type(exc).__name__}: {exc}"))
    return n, rep, out


def _run_task(args):
    return _run_one(*args)


def run_benchmark(cfg: BenchConfig, progress=None) -> list:
    """Run every (n, replication) and collect results per grid cell.

    Estimation errors are recorded per cell and do not stop the grid.
    Results are reduced in (n, replication) order, so the output does not
    depend on the number of workers.
    """
    tasks = [(cfg, n, r) for n in cfg.n_values for r in range(cfg.reps)]
    threads = cfg.threads or os.cpu_count() or 1
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            done = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    else:
        done = []
        for t in tasks:
            done.append(_run_one(*t))
            if progress:
                progress(len(done), len(tasks))
    done.sort(key=lambda t: (t[0], t[1]))
    n_ci = len(cfg.ci_points)
    cells = {}
    for n, rep, rows in done:
        for u, kind, rmse, cov, err in rows:
            key = (kind, u, n)
            if key not in cells:
                cells[key] = BenchResult(cfg.dgp, cfg.scenario, kind, u, n, cfg.reps,
                                         np.full(cfg.reps, np.nan), np.full((cfg.reps, n_ci), np.nan))
            cells[key].rmse[rep] = rmse
            cells[key].covered[rep] = cov
            if err:
                cells[key].errors.append((rep, err))
    order = {k: i for i, k in enumerate(cfg.estimators)}
    return sorted(cells.values(), key=lambda r: (r.stratum, order[r.estimator], r.n))


def results_table(results: Sequence[BenchResult]) -> dict:
    """Tidy columns, one row per replication x estimator x stratum x n."""
    cols = {k: [] for k in ("dgp", "scenario", "estimator", "stratum", "n", "rep", "rmse", "error")}
    n_ci = max((r.covered.shape[1] for r in results if r.covered is not None), default=0)
    for j in range(n_ci):
        cols[f"covered_{j}"] = []
    for r in results:
        errs = dict(r.errors)
        for rep in range(r.reps):
            cols["dgp"].append(r.dgp)
            cols["scenario"].append(r.scenario)
            cols["estimator"].append(r.estimator)
            cols["stratum"].append(r.stratum)
            cols["n"].append(r.n)
            cols["rep"].append(rep)
            cols["rmse"].append(r.rmse[rep])
            cols["error"].append(errs.get(rep, ""))
            for j in range(n_ci):
                cols[f"covered_{j}"].append(r.covered[rep, j])
    out = {}
    for k, v in cols.items():
        if k in ("scenario", "n", "rep"):
            out[k] = np.asarray(v, dtype=np.int64)
        elif k == "rmse" or k.startswith("covered_"):
            out[k] = np.asarray(v, dtype=float)
        else:
            out[k] = np.asarray(v, dtype=object)
    return out


def results_summary(results: Sequence[BenchResult]) -> list:
    out = []
    for r in results:
        ok = r.rmse[np.isfinite(r.rmse)]
        cov = r.coverage
        out.append({"dgp": r.dgp, "scenario": r.scenario, "estimator": r.estimator, "stratum": r.stratum,
                    "n": r.n, "reps": r.reps, "n_ok": int(ok.size), "mean_rmse": r.mean_rmse,
                    "sd_rmse": float(ok.std(ddof=1)) if ok.size > 1 else float("nan"),
                    "iqr_rmse": float(np.subtract(*np.percentile(ok, [75, 25]))) if ok.size else float("nan"),
                    "coverage": None if cov is None else [float(c) for c in cov],
                    "n_errors": len(r.errors)})
    return out


# ---------------------------------------------------------------------------
# preset learner configurations
# ---------------------------------------------------------------------------

def default_estimator_config(dgp: str) -> EstimatorConfig:
    """Working models used for each DGP.

    Study I uses OLS and logistic-linear fits with an OLS second stage.
    Studies II and III use additive splines throughout.  The toy example uses
    a 20-knot spline basis for the nuisances and the default basis for the
    second stage.
    """
    if dgp == "study1":
        return EstimatorConfig()
    spline = LearnerConfig(kind="additive-spline")
    logit = LearnerConfig(kind="additive-spline-logit")
    if dgp == "toy":
        # rich first-stage basis, default-size second-stage basis
        rich = LearnerConfig(kind="additive-spline", n_knots=20)
        logit = LearnerConfig(kind="additive-spline-logit", n_knots=20)
        return EstimatorConfig(outcome=rich, propensity=logit, principal=logit,
                               second_stage=spline, denominator=spline)
    return EstimatorConfig(outcome=spline, propensity=logit, principal=logit,
                           second_stage=spline, denominator=spline)


def toy_comparison(n: int = 2000, reps: int = 20, seed: int = 0, u="10", grid=None,
                   noise_sd: float = 0.2, config: EstimatorConfig | None = None) -> dict:
    """T-learner versus subset estimator on the toy DGP, where every CPCE is 0.

    Returns per-replication ``max|tau_hat|`` and grid-mean ``|tau_hat|`` over
    an interior grid for both estimators.
    """
    grid = np.linspace(-0.9, 0.9, 37)[:, None] if grid is None else np.asarray(grid, dtype=float).reshape(-1, 1)
    cfg = config or default_estimator_config("toy")
    out = {k: np.empty(reps) for k in ("max_tlearner", "max_subset", "mean_tlearner", "mean_subset")}
    for r in range(reps):
        data, _ = generate(DgpSpec("toy", 1, n, int(np.random.default_rng([seed, r]).integers(2 ** 31)), noise_sd))
        for kind in ("tlearner", "subset"):
            a = np.abs(estimate(kind, data, cfg, grid, u).tau_hat)
            out[f"max_{kind}"][r] = a.max()
            out[f"mean_{kind}"][r] = a.mean()
    return out
