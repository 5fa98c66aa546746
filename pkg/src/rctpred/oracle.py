"""Monte Carlo verification engine for the closed-form error formulas.

Simulates the potential-outcomes world behind the planning parameters,
runs repeated trials, fits the candidate models, and measures empirical
squared prediction error against the closed forms.

Reproducibility: replication r draws from a generator keyed on
(seed, r), so its stream is a pure function of the pair; replication
results are reduced in replication-index order. Identical seeds therefore
produce byte-identical reports no matter how the replication loop is
scheduled.

Residuals and covariates are Gaussian by default. The closed forms are
distribution-light, so this is a harness choice, not a modeling claim.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import core, planner, shift, weights
from .core import DesignSpec, PopulationSummary, PredictionModel, VarianceSpec
from .errors import DomainError, InfeasibleWorldError, InsufficientDataError
from .planner import ModelChoice

_MODEL_KEYS = {
    ModelChoice.RAW_MEANS: "raw_means",
    ModelChoice.ANCOVA: "ancova",
    ModelChoice.MODERATOR: "moderator",
}


# ---------------------------------------------------------------------------
# Covariate laws
# ---------------------------------------------------------------------------


@dataclass
class StandardNormalLaw:
    """Independent standard normal covariates."""

    p: int

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.p))

    def moments(self) -> PopulationSummary:
        return PopulationSummary.standard(self.p)


@dataclass
class GaussianLaw:
    """Gaussian covariates with supplied mean vector and covariance."""

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self) -> None:
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        self._chol = np.linalg.cholesky(self.sigma)

    @property
    def p(self) -> int:
        return self.mu.shape[0]

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.mu + rng.standard_normal((n, self.p)) @ self._chol.T

    def moments(self) -> PopulationSummary:
        return PopulationSummary(mu=self.mu, sigma=self.sigma, n_units=1)


@dataclass
class ResampleLaw:
    """Covariates resampled (with replacement) from supplied rows."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.atleast_2d(np.asarray(self.data, dtype=float))

    @property
    def p(self) -> int:
        return self.data.shape[1]

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.integers(0, self.data.shape[0], size=n)
        return self.data[idx]

    def moments(self) -> PopulationSummary:
        return core.summarize(self.data)


CovariateLaw = StandardNormalLaw | GaussianLaw | ResampleLaw


# ---------------------------------------------------------------------------
# World specification
# ---------------------------------------------------------------------------


@dataclass
class WorldSpec:
    """Fully specified potential-outcomes world.

    sigma0 and sigma1 are the residual standard deviations after the
    covariates; rho01 correlates the two residuals. The implied
    idiosyncratic effect variance is tau_squared(sigma0, sigma1, rho01).
    """

    p: int
    beta0: np.ndarray
    beta1: np.ndarray
    mu0: float
    mu1: float
    sigma0: float
    sigma1: float
    rho01: float
    covariate_law: CovariateLaw
    seed: int

    def __post_init__(self) -> None:
        self.beta0 = np.atleast_1d(np.asarray(self.beta0, dtype=float)) \
            if self.p else np.zeros(0)
        self.beta1 = np.atleast_1d(np.asarray(self.beta1, dtype=float)) \
            if self.p else np.zeros(0)
        if self.beta0.shape[0] != self.p or self.beta1.shape[0] != self.p:
            raise DomainError(
                f"coefficient lengths {self.beta0.shape[0]}/{self.beta1.shape[0]} "
                f"do not match p={self.p}"
            )
        if not -1.0 <= self.rho01 <= 1.0:
            raise DomainError(f"rho01 must lie in [-1, 1], got {self.rho01}")
        if self.sigma0 < 0 or self.sigma1 < 0:
            raise DomainError("residual standard deviations must be >= 0")
        if self.covariate_law.p != self.p:
            raise DomainError(
                f"covariate law has p={self.covariate_law.p}, world has p={self.p}"
            )

    @property
    def tau_cond_sq(self) -> float:
        return core.tau_squared(self.sigma0, self.sigma1, self.rho01)

    @property
    def moderator(self) -> np.ndarray:
        return self.beta1 - self.beta0

    @property
    def ate(self) -> float:
        return self.mu1 - self.mu0


@dataclass
class Population:
    """Simulated units carrying both potential outcomes and the true effect."""

    x: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    delta: np.ndarray

    @property
    def n(self) -> int:
        return self.y0.shape[0]


def _draw_residuals(rng: np.random.Generator, n: int, sigma0: float,
                    sigma1: float, rho01: float) -> tuple[np.ndarray, np.ndarray]:
    z = rng.standard_normal((n, 2))
    eps0 = sigma0 * z[:, 0]
    eps1 = sigma1 * (rho01 * z[:, 0] + math.sqrt(max(0.0, 1.0 - rho01 ** 2)) * z[:, 1])
    return eps0, eps1


def generate_world(spec: WorldSpec, n_units: int) -> Population:
    """Draw a population with both potential outcomes recorded.

    Bit-for-bit reproducible from spec.seed: covariates are drawn first,
    then the jointly Gaussian residual pair.
    """
    if n_units < 1:
        raise DomainError(f"n_units must be >= 1, got {n_units}")
    rng = np.random.default_rng(spec.seed)
    x = spec.covariate_law.draw(rng, n_units)
    eps0, eps1 = _draw_residuals(rng, n_units, spec.sigma0, spec.sigma1, spec.rho01)
    y0 = spec.mu0 + x @ spec.beta0 + eps0
    y1 = spec.mu1 + x @ spec.beta1 + eps1
    return Population(x=x, y0=y0, y1=y1, delta=y1 - y0)


def _fit_model(x: np.ndarray, y: np.ndarray, t: np.ndarray,
               model: ModelChoice) -> PredictionModel:
    p = x.shape[1]
    mask1 = t == 1
    if model is ModelChoice.MODERATOR:
        fit0 = core.ols_fit(x[~mask1], y[~mask1])
        fit1 = core.ols_fit(x[mask1], y[mask1])
        return PredictionModel(ate=fit1.intercept - fit0.intercept,
                               moderator=fit1.slopes - fit0.slopes,
                               resid_var0=fit0.residual_variance,
                               resid_var1=fit1.residual_variance,
                               kind="moderator", arm0=fit0, arm1=fit1)
    if model is ModelChoice.ANCOVA:
        fit = core.ols_fit(np.column_stack([t.astype(float), x]), y)
        return PredictionModel(ate=float(fit.slopes[0]), moderator=np.zeros(p),
                               resid_var0=fit.residual_variance,
                               resid_var1=fit.residual_variance, kind="ancova",
                               pooled=fit)
    if model is ModelChoice.RAW_MEANS:
        y0, y1 = y[~mask1], y[mask1]
        if y0.size < 2 or y1.size < 2:
            raise InsufficientDataError("each arm needs >= 2 units")
        return PredictionModel(ate=float(y1.mean() - y0.mean()),
                               moderator=np.zeros(p),
                               resid_var0=float(np.var(y0, ddof=1)),
                               resid_var1=float(np.var(y1, ddof=1)),
                               kind="raw_means")
    raise DomainError(f"unknown model {model}")


def run_trial(world: Population, n0: int, n1: int, model: ModelChoice,
              seed: int) -> PredictionModel:
    """Sample a trial from the world, randomize, and fit the chosen model."""
    n = n0 + n1
    if n > world.n:
        raise InsufficientDataError(
            f"trial needs {n} units but the world has {world.n}"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(world.n, size=n, replace=False)
    t = np.zeros(n, dtype=int)
    t[rng.permutation(n)[:n1]] = 1
    x = world.x[chosen]
    y = np.where(t == 1, world.y1[chosen], world.y0[chosen])
    return _fit_model(x, y, t, model)


@dataclass
class EmpiricalMspe:
    """Replication-averaged squared prediction error with its MC error."""

    mspe: float
    mc_standard_error: float
    replications: int


def empirical_mspe(fits: list[PredictionModel],
                   targets: list[Population] | Population) -> EmpiricalMspe:
    """Mean squared prediction error over target units and replications.

    Accepts one fitted model per replication and either a shared target
    population or one per replication; the MC standard error comes from
    the replication-level variance of the per-replication means.
    """
    if not fits:
        raise DomainError("need at least one fitted model")
    if isinstance(targets, Population):
        targets = [targets] * len(fits)
    if len(targets) != len(fits):
        raise DomainError(
            f"got {len(fits)} fits but {len(targets)} target populations"
        )
    per_rep = np.empty(len(fits))
    for r, (fit, target) in enumerate(zip(fits, targets)):
        pred = fit.predict(target.x)
        per_rep[r] = float(np.mean((pred - target.delta) ** 2))
    mc_se = float(per_rep.std(ddof=1) / math.sqrt(len(fits))) if len(fits) > 1 else 0.0
    return EmpiricalMspe(mspe=float(per_rep.mean()), mc_standard_error=mc_se,
                         replications=len(fits))


# ---------------------------------------------------------------------------
# Parameter inversion: planning parameters -> a concrete world
# ---------------------------------------------------------------------------


def world_from_plan(design: DesignSpec, var: VarianceSpec, seed: int = 0,
                    ate: float = 0.22) -> WorldSpec:
    """One concrete world consistent with the planning parameters.

    The first covariate carries all systematic moderation (loading chosen
    so the explained share of effect variance is R^2_tau); the remaining
    covariates are pure outcome predictors splitting R^2_0 evenly. With a
    single covariate it carries both loadings. Residual pieces follow the
    variance identity; infeasible combinations (an implied residual
    correlation outside [-1, 1]) are rejected.
    """
    p = design.p
    if var.sigma1_sq is not None:
        identity = (var.sigma0_sq + var.tau_sq
                    + 2.0 * var.rho0eta * math.sqrt(var.sigma0_sq * var.tau_sq))
        if abs(var.sigma1_sq - identity) > 1e-9 * max(1.0, identity):
            raise InfeasibleWorldError(
                f"supplied sigma1_sq={var.sigma1_sq} contradicts the variance "
                f"identity value {identity}"
            )
    s0x_sq = var.sigma0_cond_sq
    taux_sq = var.tau_cond_sq
    s1x_sq = var.sigma1_cond_sq
    if s1x_sq <= 1e-12 * max(s0x_sq, taux_sq, 1e-300) and (s0x_sq > 0 or taux_sq > 0):
        raise InfeasibleWorldError(
            f"implied treatment residual variance {s1x_sq} is numerically "
            "zero; the residual correlation is undefined at this boundary"
        )
    s0x, s1x, taux = math.sqrt(s0x_sq), math.sqrt(max(0.0, s1x_sq)), \
        math.sqrt(taux_sq)
    # rho01 implied by eps1 = eps0 + eta with corr(eps0, eta) = rho0eta; the
    # construction keeps it inside [-1, 1] whenever sigma1|x is positive.
    rho01 = (s0x + var.rho0eta * taux) / s1x if s1x > 0 else 1.0
    if not -1.0 - 1e-12 <= rho01 <= 1.0 + 1e-12:
        raise InfeasibleWorldError(
            f"implied residual correlation {rho01} falls outside [-1, 1]"
        )
    rho01 = min(1.0, max(-1.0, rho01))
    explained_mod = var.tau_sq * var.rtaup_sq
    explained_out = var.sigma0_sq * var.r0p_sq
    if p == 0:
        if explained_mod > 0 or explained_out > 0:
            raise InfeasibleWorldError(
                "p=0 worlds cannot explain outcome or effect variance "
                f"(R0^2={var.r0p_sq}, Rtau^2={var.rtaup_sq})"
            )
        beta0 = np.zeros(0)
        delta = np.zeros(0)
    else:
        delta = np.zeros(p)
        delta[0] = math.sqrt(explained_mod)
        beta0 = np.zeros(p)
        if p == 1:
            beta0[0] = math.sqrt(explained_out)
        else:
            beta0[1:] = math.sqrt(explained_out / (p - 1))
    return WorldSpec(
        p=p, beta0=beta0, beta1=beta0 + delta, mu0=0.0, mu1=ate,
        sigma0=s0x, sigma1=s1x, rho01=rho01,
        covariate_law=StandardNormalLaw(p), seed=seed,
    )


# ---------------------------------------------------------------------------
# Validation harness
# ---------------------------------------------------------------------------


@dataclass
class ModelComparison:
    """Empirical vs closed-form MSPE for one model."""

    empirical_mspe: float
    closed_form_mspe: float
    relative_error: float
    mc_standard_error: float

    @property
    def z(self) -> float:
        if self.mc_standard_error == 0:
            return math.inf
        return (self.empirical_mspe - self.closed_form_mspe) / self.mc_standard_error


@dataclass
class SimulationReport:
    """Outcome of one validate() run; serializes deterministically."""

    scenario: str
    replications: int
    seed: int
    target_units_per_rep: int
    models: dict[str, ModelComparison]
    world: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        payload = asdict(self)
        return json.dumps(payload, sort_keys=True, indent=2)


def _rep_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng([seed, rep])


def _within_rep(rng, design, world, models, m_targ):
    n0, n1 = design.n0, design.n1
    n = n0 + n1
    x = world.covariate_law.draw(rng, n)
    t = np.zeros(n, dtype=int)
    t[rng.permutation(n)[:n1]] = 1
    eps0, eps1 = _draw_residuals(rng, n, world.sigma0, world.sigma1, world.rho01)
    y = np.where(t == 1, world.mu1 + x @ world.beta1 + eps1,
                 world.mu0 + x @ world.beta0 + eps0)
    fits = {model: _fit_model(x, y, t, model) for model in models}
    xt = world.covariate_law.draw(rng, m_targ)
    taux = math.sqrt(world.tau_cond_sq)
    eta = taux * rng.standard_normal(m_targ)
    delta_true = world.ate + xt @ world.moderator + eta
    return fits, xt, delta_true


def validate(design: DesignSpec, var: VarianceSpec, scenario: str = "within",
             reps: int = 1000, seed: int = 0,
             models: list[ModelChoice] | None = None,
             target_units_per_rep: int = 8,
             pop_b: PopulationSummary | None = None,
             strata_source: float = 0.5, strata_target: float = 0.8,
             ate: float = 0.22) -> SimulationReport:
    """Compare empirical MSPE against the closed forms for one design cell.

    Scenarios:

    * ``within``: trial and targets drawn from the same population;
      closed forms are the planner values for each requested model.
    * ``shifted``: targets drawn from ``pop_b`` (moments in source-
      standardized coordinates); moderator model only, closed form from
      the shift module with zero moderator bias and equal idiosyncratic
      variance (both hold in the simulated world by construction).
    * ``weighted``: a selection stratum, independent of outcomes, shifts
      prevalence between source and target; the trial is fitted with the
      known inverse-odds weights and compared against the Kish-inflated
      closed form. Assumptions A1/A2 hold by construction.

    Each replication draws a fresh trial and ``target_units_per_rep``
    fresh target units; per-replication means are reduced in replication
    order, so reports are byte-identical for identical seeds.
    """
    if reps < 100:
        raise DomainError(f"reps must be >= 100, got {reps}")
    if target_units_per_rep < 1:
        raise DomainError("target_units_per_rep must be >= 1")
    if scenario not in ("within", "shifted", "weighted"):
        raise DomainError(f"unknown scenario '{scenario}'")
    if models is None:
        models = [ModelChoice.RAW_MEANS, ModelChoice.ANCOVA, ModelChoice.MODERATOR] \
            if scenario == "within" else [ModelChoice.MODERATOR]
    world = world_from_plan(design, var, seed=seed, ate=ate)
    m_targ = target_units_per_rep
    notes: list[str] = []

    if scenario == "within":
        closed = {}
        for model in models:
            if model is ModelChoice.MODERATOR:
                closed[model] = planner.mspe_moderator(design, var)
            elif model is ModelChoice.ANCOVA:
                closed[model] = planner.mspe_ancova(design, var)
            else:
                closed[model] = planner.mspe_raw(design, var)
        per_rep = {model: np.empty(reps) for model in models}
        for r in range(reps):
            rng = _rep_rng(seed, r)
            fits, xt, delta_true = _within_rep(rng, design, world, models, m_targ)
            for model in models:
                pred = fits[model].predict(xt)
                per_rep[model][r] = float(np.mean((pred - delta_true) ** 2))

    elif scenario == "shifted":
        if pop_b is None:
            raise DomainError("scenario 'shifted' requires pop_b")
        models = [ModelChoice.MODERATOR]
        spec = shift.ShiftSpec(pop_a=PopulationSummary.standard(design.p, 2),
                               pop_b=pop_b)
        closed = {ModelChoice.MODERATOR: shift.mspe_shifted(design, var, spec).mspe}
        notes.append("moderator bias is zero and idiosyncratic variance equal "
                     "across populations by construction")
        target_law = GaussianLaw(mu=pop_b.mu, sigma=pop_b.sigma)
        per_rep = {ModelChoice.MODERATOR: np.empty(reps)}
        taux = math.sqrt(world.tau_cond_sq)
        n0, n1 = design.n0, design.n1
        n = n0 + n1
        for r in range(reps):
            rng = _rep_rng(seed, r)
            x = world.covariate_law.draw(rng, n)
            t = np.zeros(n, dtype=int)
            t[rng.permutation(n)[:n1]] = 1
            eps0, eps1 = _draw_residuals(rng, n, world.sigma0, world.sigma1,
                                         world.rho01)
            y = np.where(t == 1, world.mu1 + x @ world.beta1 + eps1,
                         world.mu0 + x @ world.beta0 + eps0)
            fit = _fit_model(x, y, t, ModelChoice.MODERATOR)
            xt = target_law.draw(rng, m_targ)
            eta = taux * rng.standard_normal(m_targ)
            delta_true = world.ate + xt @ world.moderator + eta
            per_rep[ModelChoice.MODERATOR][r] = float(
                np.mean((fit.predict(xt) - delta_true) ** 2))

    else:  # weighted
        if design.p != 1:
            raise DomainError("the weighted scenario uses a single model covariate")
        models = [ModelChoice.MODERATOR]
        qa, qb = strata_source, strata_target
        if not (0.0 < qa < 1.0 and 0.0 < qb < 1.0):
            raise DomainError("strata shares must lie in (0, 1)")
        w_hi, w_lo = qb / qa, (1.0 - qb) / (1.0 - qa)
        vif_true = qb * qb / qa + (1.0 - qb) ** 2 / (1.0 - qa)
        closed = {ModelChoice.MODERATOR: weights.mspe_weighted(design, var,
                                                               vif_true).mspe}
        notes.append(f"true inverse-odds weights {{{w_lo:.6g}, {w_hi:.6g}}}, "
                     f"Kish VIF {vif_true:.6g}")
        per_rep = {ModelChoice.MODERATOR: np.empty(reps)}
        taux = math.sqrt(world.tau_cond_sq)
        n0, n1 = design.n0, design.n1
        n = n0 + n1
        for r in range(reps):
            rng = _rep_rng(seed, r)
            x = world.covariate_law.draw(rng, n)
            strata = rng.random(n) < qa
            w = np.where(strata, w_hi, w_lo)
            t = np.zeros(n, dtype=int)
            t[rng.permutation(n)[:n1]] = 1
            eps0, eps1 = _draw_residuals(rng, n, world.sigma0, world.sigma1,
                                         world.rho01)
            y = np.where(t == 1, world.mu1 + x @ world.beta1 + eps1,
                         world.mu0 + x @ world.beta0 + eps0)
            mask1 = t == 1
            fit0 = core.ols_fit(x[~mask1], y[~mask1], w[~mask1])
            fit1 = core.ols_fit(x[mask1], y[mask1], w[mask1])
            fit = PredictionModel(ate=fit1.intercept - fit0.intercept,
                                  moderator=fit1.slopes - fit0.slopes,
                                  resid_var0=fit0.residual_variance,
                                  resid_var1=fit1.residual_variance,
                                  kind="weighted")
            xt = world.covariate_law.draw(rng, m_targ)
            eta = taux * rng.standard_normal(m_targ)
            delta_true = world.ate + xt @ world.moderator + eta
            per_rep[ModelChoice.MODERATOR][r] = float(
                np.mean((fit.predict(xt) - delta_true) ** 2))

    comparisons: dict[str, ModelComparison] = {}
    for model in models:
        values = per_rep[model]
        emp = float(values.mean())
        mc_se = float(values.std(ddof=1) / math.sqrt(reps))
        cf = closed[model]
        rel = abs(emp - cf) / cf if cf != 0 else math.inf
        comparisons[_MODEL_KEYS[model]] = ModelComparison(
            empirical_mspe=emp, closed_form_mspe=cf,
            relative_error=rel, mc_standard_error=mc_se)

    return SimulationReport(
        scenario=scenario, replications=reps, seed=seed,
        target_units_per_rep=m_targ, models=comparisons,
        world={
            "p": float(design.p), "n0": float(design.n0), "n1": float(design.n1),
            "sigma0_cond": world.sigma0, "sigma1_cond": world.sigma1,
            "rho01_cond": world.rho01, "tau_cond_sq": world.tau_cond_sq,
            "ate": world.ate,
        },
        notes=notes,
    )


@dataclass
class CoverageResult:
    """Empirical prediction-interval coverage across unit predictions."""

    coverage: float
    n_predictions: int
    nominal: float


def interval_coverage(design: DesignSpec, var: VarianceSpec, reps: int = 1000,
                      targets_per_rep: int = 100, alpha: float = 0.10,
                      seed: int = 0) -> CoverageResult:
    """Share of true effects inside their closed-form prediction intervals.

    Each replication fits the moderator model on a fresh trial and checks
    targets_per_rep fresh units against intervals built from the planner
    SPE at the true parameters.
    """
    world = world_from_plan(design, var, seed=seed)
    crit = core.quantile_normal(1.0 - alpha / 2.0)
    est_unit = var.sigma0_cond_sq / design.n0 + var.sigma1_cond_sq / design.n1
    taux_sq = var.tau_cond_sq
    taux = math.sqrt(taux_sq)
    n0, n1 = design.n0, design.n1
    n = n0 + n1
    hits = 0
    for r in range(reps):
        rng = _rep_rng(seed, r)
        x = world.covariate_law.draw(rng, n)
        t = np.zeros(n, dtype=int)
        t[rng.permutation(n)[:n1]] = 1
        eps0, eps1 = _draw_residuals(rng, n, world.sigma0, world.sigma1, world.rho01)
        y = np.where(t == 1, world.mu1 + x @ world.beta1 + eps1,
                     world.mu0 + x @ world.beta0 + eps0)
        fit = _fit_model(x, y, t, ModelChoice.MODERATOR)
        xt = world.covariate_law.draw(rng, targets_per_rep)
        eta = taux * rng.standard_normal(targets_per_rep)
        delta_true = world.ate + xt @ world.moderator + eta
        # Planner SPE with identity covariate covariance: quadratic form = |x|^2.
        spe = est_unit * (1.0 + np.sum(xt * xt, axis=1)) + taux_sq
        half = crit * np.sqrt(spe)
        pred = fit.predict(xt)
        hits += int(np.sum(np.abs(pred - delta_true) <= half))
    total = reps * targets_per_rep
    return CoverageResult(coverage=hits / total, n_predictions=total,
                          nominal=1.0 - alpha)
