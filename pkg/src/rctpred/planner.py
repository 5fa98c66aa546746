"""Closed-form planning calculators for the within-population case.

All formulas address a two-arm trial whose fitted model predicts the
treatment effect of every unit in the estimation population. Three model
classes are covered: per-arm moderator fits, ANCOVA (common slopes, one
constant predicted effect), and the raw mean difference.

Scaled forms take the per-arm size n of a balanced design; sample size
errors follow the n > p + 1 rule per arm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import core
from .core import DesignSpec, PopulationSummary, PredictionModel, TrialData, \
    VarianceSpec
from .errors import DomainError, InsufficientDataError


class ModelChoice(Enum):
    """The three prediction rules whose error the planner quantifies."""

    RAW_MEANS = "raw_means"
    ANCOVA = "ancova"
    MODERATOR = "moderator"


class AncovaAlwaysPreferred:
    """Sentinel: no attainable moderator R^2 makes the moderator model win."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "AncovaAlwaysPreferred"


ANCOVA_ALWAYS_PREFERRED = AncovaAlwaysPreferred()


@dataclass
class PlanResult:
    """MSPE and prediction interval of one model at one design point."""

    mspe: float
    pi_lower: float
    pi_upper: float
    pi_width: float
    model: ModelChoice


@dataclass
class PlanCell:
    """One grid point of a planning sweep."""

    n: int
    p: int
    tau_star_sq: float
    rtau_sq: float = 0.0
    rho0eta: float = 0.0
    r0_sq: float = 0.0
    alpha: float = 0.10

    def design(self) -> DesignSpec:
        return DesignSpec.balanced_arms(self.n, p=self.p)

    def variance(self, sigma0_sq: float = 1.0) -> VarianceSpec:
        return VarianceSpec(
            sigma0_sq=sigma0_sq,
            rho0eta=self.rho0eta,
            r0p_sq=self.r0_sq,
            rtaup_sq=self.rtau_sq,
            tau_star_sq=self.tau_star_sq,
        )


@dataclass
class PlanRow:
    """plan_table output row: the inputs plus either a result or an error."""

    cell: PlanCell
    model: ModelChoice
    result: PlanResult | None = None
    error: str | None = None


def _check_df(design: DesignSpec) -> None:
    if min(design.n0, design.n1) <= design.p + 1:
        raise InsufficientDataError(
            f"per-arm size must exceed p + 1 = {design.p + 1}, "
            f"got n0={design.n0} n1={design.n1}"
        )


def mspe_moderator(design: DesignSpec, var: VarianceSpec) -> float:
    """MSPE of the per-arm moderator model.

    Conditional-variance form, valid for unequal arms:
    (sigma0|x^2/n0 + sigma1|x^2/n1) * (1 + p) + tau|x^2,
    with sigma1|x^2 tied to the comparison residual through the variance
    identity. For balanced designs this equals ``mspe_moderator_scaled``.
    """
    _check_df(design)
    est = (var.sigma0_cond_sq / design.n0 + var.sigma1_cond_sq / design.n1)
    return est * (1 + design.p) + var.tau_cond_sq


def mspe_moderator_scaled(design: DesignSpec, var: VarianceSpec) -> float:
    """Balanced-design moderator MSPE in planning parameters.

    2*sigma0^2*(1+p)/n * [R-0^2 + tau_* rho R-tau R-0
                          + tau_*^2 R-tau^2 (1/2 + n/(2(1+p)))]
    """
    design.require_balanced()
    _check_df(design)
    n, p = design.n, design.p
    rm0_sq = var.r0_comp_sq
    rmt_sq = var.rtau_comp_sq
    tau_star = math.sqrt(var.tau_star_sq)
    bracket = (
        rm0_sq
        + tau_star * var.rho0eta * math.sqrt(rmt_sq * rm0_sq)
        + var.tau_star_sq * rmt_sq * (0.5 + n / (2.0 * (1 + p)))
    )
    return 2.0 * var.sigma0_sq * (1 + p) / n * bracket


def mspe_ancova(design: DesignSpec, var: VarianceSpec) -> float:
    """MSPE when a covariate-adjusted constant effect predicts every unit.

    sigma0^2*(2+p)/(2n) * [R-0^2 + rho tau_* R-0 + tau_*^2 (1/2 + 2n/(2+p))].
    """
    design.require_balanced()
    _check_df(design)
    n, p = design.n, design.p
    rm0_sq = var.r0_comp_sq
    tau_star = math.sqrt(var.tau_star_sq)
    bracket = (
        rm0_sq
        + var.rho0eta * tau_star * math.sqrt(rm0_sq)
        + var.tau_star_sq * (0.5 + 2.0 * n / (2 + p))
    )
    return var.sigma0_sq * (2 + p) / (2.0 * n) * bracket


def mspe_raw(design: DesignSpec, var: VarianceSpec) -> float:
    """MSPE of the unadjusted mean difference as everyone's prediction.

    sigma0^2/n * [1 + rho tau_* + tau_*^2 (2n+1)/2]; identical to
    ``mspe_ancova`` at p = 0, R^2_0 = 0.
    """
    design.require_balanced()
    n = design.n
    tau_star = math.sqrt(var.tau_star_sq)
    bracket = 1.0 + var.rho0eta * tau_star + var.tau_star_sq * (2.0 * n + 1.0) / 2.0
    return var.sigma0_sq / n * bracket


def min_rtau_sq(design: DesignSpec, var: VarianceSpec) -> float | AncovaAlwaysPreferred:
    """Smallest moderator R^2 at which the moderator model beats ANCOVA.

    Solves the quadratic A*r^2 + B*r + C in r = sqrt(1 - R^2_tau) with
    A = tau_*^2 (1+p+n), B = 2(1+p) rho tau_* R-0, and
    C = 2(1+p) R-0^2 - n * MSPE_ancova (in sigma0^2 units); the moderator
    is preferred inside the root interval. Of the roots in [0, 1] the
    larger is taken (the smallest required R^2_tau). Returns the
    ANCOVA_ALWAYS_PREFERRED sentinel when no attainable R^2_tau wins:
    no real root, the root interval missing [0, 1], or tau_*^2 = 0.
    """
    design.require_balanced()
    _check_df(design)
    if var.tau_star_sq <= 0.0:
        return ANCOVA_ALWAYS_PREFERRED
    n, p = design.n, design.p
    tau_star = math.sqrt(var.tau_star_sq)
    rm0_sq = var.r0_comp_sq
    # The quadratic lives in sigma0^2 = 1 units; the threshold is scale-free.
    scaled_anc = mspe_ancova(design, VarianceSpec(
        sigma0_sq=1.0, rho0eta=var.rho0eta, r0p_sq=var.r0p_sq,
        rtaup_sq=var.rtaup_sq, tau_star_sq=var.tau_star_sq))
    a = var.tau_star_sq * (1 + p + n)
    b = 2.0 * (1 + p) * var.rho0eta * tau_star * math.sqrt(rm0_sq)
    c = 2.0 * (1 + p) * rm0_sq - n * scaled_anc
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return ANCOVA_ALWAYS_PREFERRED
    root = math.sqrt(disc)
    r_lo = (-b - root) / (2.0 * a)
    r_hi = (-b + root) / (2.0 * a)
    lo = max(r_lo, 0.0)
    hi = min(r_hi, 1.0)
    if lo > hi:
        return ANCOVA_ALWAYS_PREFERRED
    threshold = 1.0 - hi * hi
    return min(1.0, max(0.0, threshold))


def spe_unit(x_std: np.ndarray, design: DesignSpec, var: VarianceSpec,
             pop: PopulationSummary) -> float:
    """Squared prediction error of the moderator model for one unit.

    (sigma0|x^2/n0 + sigma1|x^2/n1) * (1 + x' Sigma^-1 x) + tau|x^2 at the
    unit's standardized covariates; reduces to the estimation variance of
    the ATE plus tau^2 at x = 0.
    """
    x = np.atleast_1d(np.asarray(x_std, dtype=float))
    if x.shape[0] != pop.p:
        raise DomainError(f"x has length {x.shape[0]} but population has p={pop.p}")
    if design.p != pop.p:
        raise DomainError(f"design p={design.p} does not match population p={pop.p}")
    quad = float(x @ core.spd_solve(pop.sigma, x, what="covariate covariance"))
    est = var.sigma0_cond_sq / design.n0 + var.sigma1_cond_sq / design.n1
    return est * (1.0 + quad) + var.tau_cond_sq


def spe_unit_estimated(x_std: np.ndarray, model: PredictionModel,
                       trial: TrialData, rho01: float) -> float:
    """Plug-in unit SPE from a fitted moderator model.

    (s0^2/n0 + s1^2/n1) * (1 + x' S^-1 x) + [s1^2 + s0^2 - 2 rho01 s1 s0],
    with the per-arm residual variances of the fit and the trial covariate
    covariance S (population convention). The residual correlation cannot
    be estimated; callers sweep rho01 as a sensitivity parameter, larger
    values shrinking the idiosyncratic term.
    """
    x = np.atleast_1d(np.asarray(x_std, dtype=float))
    if x.shape[0] != trial.p or model.p != trial.p:
        raise DomainError(
            f"dimension mismatch: x={x.shape[0]}, model p={model.p}, "
            f"trial p={trial.p}"
        )
    sample_cov = core.summarize(trial.x).sigma
    quad = float(x @ core.spd_solve(sample_cov, x, what="trial covariate "
                                                       "covariance"))
    est = model.resid_var0 / trial.n0 + model.resid_var1 / trial.n1
    tau_hat = core.tau_squared(math.sqrt(model.resid_var0),
                               math.sqrt(model.resid_var1), rho01)
    return est * (1.0 + quad) + tau_hat


def prediction_interval(delta_hat: float, spe: float, alpha: float = 0.10,
                        use_t: bool = False, df: float | None = None,
                        ) -> tuple[float, float, float]:
    """Symmetric prediction interval (lower, upper, width) around delta_hat.

    Normal quantiles by default; pass use_t with a df for the small-sample
    t-based variant.
    """
    if spe < 0:
        raise DomainError(f"spe must be >= 0, got {spe}")
    if use_t:
        if df is None:
            raise DomainError("use_t requires df")
        crit = core.quantile_t(1.0 - alpha / 2.0, df)
    else:
        crit = core.quantile_normal(1.0 - alpha / 2.0)
    half = crit * math.sqrt(spe)
    return delta_hat - half, delta_hat + half, 2.0 * half


def mdes(n_total: int, p: int, rp_sq: float, pi_treat: float = 0.5,
         alpha: float = 0.05, power: float = 0.80, two_sided: bool = True) -> float:
    """Minimum detectable effect size of the pooled-covariate ATE test.

    M_{N-p-2} * sqrt((1 - R_p^2) / (N pi (1 - pi))) with the multiplier
    M = t(1 - alpha/2) + t(power) at N - p - 2 degrees of freedom
    (one-sided: t(1 - alpha) instead).
    """
    df = n_total - p - 2
    if df <= 0:
        raise InsufficientDataError(f"N - p - 2 must be positive, got {df}")
    if not 0.0 <= rp_sq <= 1.0:
        raise DomainError(f"rp_sq must lie in [0, 1], got {rp_sq}")
    if not 0.0 < pi_treat < 1.0:
        raise DomainError(f"pi_treat must lie in (0, 1), got {pi_treat}")
    tail = 1.0 - alpha / 2.0 if two_sided else 1.0 - alpha
    multiplier = core.quantile_t(tail, df) + core.quantile_t(power, df)
    return multiplier * math.sqrt((1.0 - rp_sq) / (n_total * pi_treat * (1.0 - pi_treat)))


def percent_width_reduction(mspe_small: float, mspe_large: float) -> float:
    """Relative interval-width saving of the lower-MSPE model: 1 - sqrt(ratio)."""
    if mspe_large <= 0:
        raise DomainError("reference MSPE must be positive")
    return 1.0 - math.sqrt(mspe_small / mspe_large)


_MSPE_BY_MODEL = {
    ModelChoice.RAW_MEANS: mspe_raw,
    ModelChoice.ANCOVA: mspe_ancova,
    ModelChoice.MODERATOR: mspe_moderator,
}


def plan_table(grid: list[PlanCell], models: list[ModelChoice] | None = None,
               ate: float = 0.0, sigma0_sq: float = 1.0) -> list[PlanRow]:
    """Evaluate MSPE and prediction intervals over a planning grid.

    One row per cell per requested model, in input order. A failing cell
    is reported on its row with the triggering error message rather than
    dropped.
    """
    if not grid:
        raise DomainError("grid must be nonempty")
    if models is None:
        models = [ModelChoice.ANCOVA]
    rows: list[PlanRow] = []
    for cell in grid:
        for model in models:
            try:
                design = cell.design()
                var = cell.variance(sigma0_sq=sigma0_sq)
                mspe = _MSPE_BY_MODEL[model](design, var)
                lower, upper, width = prediction_interval(ate, mspe, alpha=cell.alpha)
                rows.append(PlanRow(cell=cell, model=model,
                                    result=PlanResult(mspe=mspe, pi_lower=lower,
                                                      pi_upper=upper, pi_width=width,
                                                      model=model)))
            except Exception as exc:
                # A failing cell must surface on its own row, not abort the sweep.
                rows.append(PlanRow(cell=cell, model=model, error=str(exc)))
    return rows
