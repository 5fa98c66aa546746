"""Covariate-shift adjustment: selection model, inverse-odds weights,
common-support screening, and the variance-inflation penalty of weighting.

Label convention: Z = 1 means membership in the estimation population, so
a source unit's weight is its odds of target-versus-source membership.
Weights are never trimmed; a concentration diagnostic reports extreme
weights instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import core
from .core import DesignSpec, PredictionModel, TrialData, VarianceSpec
from .errors import (
    ConvergenceError,
    DegeneratePropensityError,
    DegenerateReferenceError,
    DomainError,
    InvalidWeightError,
    PerfectSeparationError,
    SingularMatrixError,
)

_IRLS_TOL = 1e-8
_IRLS_MAX_ITER = 100
# |coefficient| per standardized covariate beyond which the MLE is treated
# as diverging (an odds shift of e^15 per standard deviation); saturated
# fits can otherwise zero the score and masquerade as converged.
_SEPARATION_BOUND = 15.0


@dataclass
class SelectionModel:
    """Fitted logistic model for membership in the estimation population."""

    coefficients: np.ndarray
    converged: bool
    iterations: int
    column_names: list[str]

    def __post_init__(self) -> None:
        self.coefficients = np.asarray(self.coefficients, dtype=float)

    @property
    def p(self) -> int:
        return self.coefficients.shape[0] - 1

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Probability of being a source-population (Z = 1) unit."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.p:
            raise DomainError(f"x has {x.shape[1]} columns, model expects {self.p}")
        eta = self.coefficients[0] + x @ self.coefficients[1:]
        return 1.0 / (1.0 + np.exp(-np.clip(eta, -700.0, 700.0)))


@dataclass
class WeightSet:
    """Per-unit weights with their inflation and support diagnostics."""

    w: np.ndarray
    normalized: bool = False
    support_lo: float = 0.0
    support_hi: float = 0.0
    vif: float = 1.0
    n_effective: float = 0.0

    @classmethod
    def from_weights(cls, w: np.ndarray, normalized: bool = False) -> "WeightSet":
        w = np.asarray(w, dtype=float).ravel()
        if w.size == 0:
            raise InvalidWeightError("weight vector is empty")
        if np.any(w < 0):
            raise InvalidWeightError("weights must be nonnegative")
        if not np.any(w > 0):
            raise InvalidWeightError("weights must carry positive total mass")
        if normalized and abs(float(w.sum()) - 1.0) > 1e-10:
            raise InvalidWeightError(
                f"normalized weights must sum to 1, got {float(w.sum())}"
            )
        return cls(w=w, normalized=normalized,
                   support_lo=float(w.min()), support_hi=float(w.max()),
                   vif=kish_vif(w), n_effective=w.size / kish_vif(w))

    @property
    def n(self) -> int:
        return self.w.size


def _loglik(eta: np.ndarray, y: np.ndarray) -> float:
    # log sigma(eta) for y=1, log sigma(-eta) for y=0, in a stable form
    signed = np.where(y > 0.5, eta, -eta)
    return float(-np.sum(np.logaddexp(0.0, -signed)))


def fit_selection(x_a: np.ndarray, x_b: np.ndarray,
                  column_names: list[str] | None = None) -> SelectionModel:
    """Logistic regression of source membership on the pooled covariates.

    Stacks the source rows (label 1) over the target rows (label 0) and
    maximizes the binomial likelihood by iteratively reweighted least
    squares: Newton steps on the score, halved whenever the likelihood
    would decrease, until the score norm falls below 1e-8. Covariates are
    standardized internally for conditioning; coefficients are reported on
    the original scale.
    """
    x_a = np.atleast_2d(np.asarray(x_a, dtype=float))
    x_b = np.atleast_2d(np.asarray(x_b, dtype=float))
    if x_a.shape[0] == 0 or x_b.shape[0] == 0:
        raise DomainError("both populations must be nonempty")
    if x_a.shape[1] != x_b.shape[1]:
        raise DomainError(
            f"covariate counts differ: {x_a.shape[1]} vs {x_b.shape[1]}"
        )
    p = x_a.shape[1]
    if column_names is None:
        column_names = [f"x{k + 1}" for k in range(p)]
    pooled = np.vstack([x_a, x_b])
    y = np.concatenate([np.ones(x_a.shape[0]), np.zeros(x_b.shape[0])])

    center = pooled.mean(axis=0)
    scale = pooled.std(axis=0)
    flat = np.where(scale <= 0)[0]
    if flat.size:
        raise DegenerateReferenceError(
            f"pooled covariate '{column_names[int(flat[0])]}' is constant"
        )
    xs = (pooled - center) / scale
    design = np.column_stack([np.ones(xs.shape[0]), xs])

    beta = np.zeros(p + 1)
    eta = design @ beta
    ll = _loglik(eta, y)
    converged = False
    iterations = 0
    for iterations in range(1, _IRLS_MAX_ITER + 1):
        big = np.abs(beta[1:])
        if big.size and big.max() > _SEPARATION_BOUND:
            worst = column_names[int(big.argmax())]
            raise PerfectSeparationError(
                f"selection outcome is (quasi-)separable along '{worst}'; "
                "inverse-odds weights are undefined"
            )
        mu = 1.0 / (1.0 + np.exp(-np.clip(eta, -700.0, 700.0)))
        score = design.T @ (y - mu)
        if float(np.abs(score).max()) < _IRLS_TOL:
            converged = True
            iterations -= 1
            break
        wdiag = np.maximum(mu * (1.0 - mu), 1e-12)
        hessian = (design.T * wdiag) @ design
        try:
            step = core.spd_solve(hessian, score, what="IRLS information matrix")
        except SingularMatrixError as exc:
            raise SingularMatrixError(
                "selection model information matrix is singular; check for "
                "redundant covariate columns"
            ) from exc
        # Step-halving keeps the likelihood nondecreasing.
        factor = 1.0
        for _ in range(40):
            cand = beta + factor * step
            cand_eta = design @ cand
            cand_ll = _loglik(cand_eta, y)
            if cand_ll >= ll - 1e-12:
                break
            factor *= 0.5
        beta, eta, ll = cand, cand_eta, cand_ll
    else:
        raise ConvergenceError(
            f"IRLS did not converge in {_IRLS_MAX_ITER} iterations "
            f"(score norm {float(np.abs(score).max()):.3e})"
        )

    slopes = beta[1:] / scale
    intercept = beta[0] - float(center @ slopes)
    return SelectionModel(
        coefficients=np.concatenate([[intercept], slopes]),
        converged=converged,
        iterations=iterations,
        column_names=list(column_names),
    )


def inverse_odds(prob_in_a: np.ndarray) -> np.ndarray:
    """Target-over-source membership odds (1 - pi_A(x)) / pi_A(x) per unit."""
    prob = np.asarray(prob_in_a, dtype=float).ravel()
    bad = np.where((prob <= 0.0) | (prob >= 1.0))[0]
    if bad.size:
        raise DegeneratePropensityError(
            f"unit {int(bad[0])} has membership probability {prob[bad[0]]}; "
            "odds are undefined at 0 or 1"
        )
    return (1.0 - prob) / prob


def kish_vif(w: np.ndarray) -> float:
    """Kish variance-inflation factor 1 + Var(w)/Mean(w)^2 (population variance).

    Invariant to positive rescaling; equals 1 exactly when all weights agree.
    """
    w = np.asarray(w, dtype=float).ravel()
    if w.size == 0:
        raise InvalidWeightError("weight vector is empty")
    if np.any(w < 0):
        raise InvalidWeightError("weights must be nonnegative")
    mean = float(w.mean())
    if mean <= 0:
        raise InvalidWeightError("weights must carry positive total mass")
    var = float(np.var(w))
    return 1.0 + var / (mean * mean)


def normalize(ws: WeightSet) -> WeightSet:
    """Rescale the weights to sum to one; VIF and effective size are unchanged."""
    total = float(ws.w.sum())
    if total <= 0:
        raise InvalidWeightError("cannot normalize weights with zero total mass")
    return WeightSet.from_weights(ws.w / total, normalized=True)


def effective_n(n: int, vif: float) -> float:
    """Effective sample size n / VIF after weighting."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    if vif < 1.0:
        raise DomainError(f"vif must be >= 1, got {vif}")
    return n / vif


def required_n(n_target: int, vif: float) -> int:
    """Source sample size needed to match a target-size precision: ceil(n * VIF)."""
    if n_target < 1:
        raise DomainError(f"n_target must be >= 1, got {n_target}")
    if vif < 1.0:
        raise DomainError(f"vif must be >= 1, got {vif}")
    return math.ceil(n_target * vif)


@dataclass
class SupportResult:
    """Share of target units whose weight falls inside the source range."""

    coverage: float
    kept_indices: np.ndarray


def common_support(ws_a: WeightSet | np.ndarray,
                   ws_b: WeightSet | np.ndarray) -> SupportResult:
    """Screen target units against the source weight range.

    A target unit is retained when its weight lies within [min, max] of the
    source weights; both vectors must come from the same selection model.
    """
    w_a = np.asarray(getattr(ws_a, "w", ws_a), dtype=float).ravel()
    w_b = np.asarray(getattr(ws_b, "w", ws_b), dtype=float).ravel()
    if w_a.size == 0 or w_b.size == 0:
        raise InvalidWeightError("both weight vectors must be nonempty")
    lo, hi = float(w_a.min()), float(w_a.max())
    kept = np.where((w_b >= lo) & (w_b <= hi))[0]
    return SupportResult(coverage=kept.size / w_b.size, kept_indices=kept)


def weight_concentration(ws: WeightSet) -> tuple[float, int]:
    """Largest normalized weight and how many units exceed 25% of total mass."""
    total = float(ws.w.sum())
    if total <= 0:
        raise InvalidWeightError("weights carry no mass")
    shares = ws.w / total
    return float(shares.max()), int(np.sum(shares >= 0.25))


def weighted_prediction_model(trial: TrialData, ws: WeightSet) -> PredictionModel:
    """Per-arm weighted regressions combined into a prediction rule.

    The predicted effect for covariates x is the weighted intercept
    difference plus x times the weighted slope difference. Equal weights
    reproduce the unweighted per-arm fits.
    """
    if ws.n != trial.y.shape[0]:
        raise DomainError(
            f"weights have length {ws.n} but trial has {trial.y.shape[0]} rows"
        )
    mask1 = trial.t == 1
    for arm, mask in ((0, ~mask1), (1, mask1)):
        if float(ws.w[mask].sum()) <= 0:
            raise InvalidWeightError(f"arm {arm} retains no positive weight")
    fit0 = core.ols_fit(trial.x[~mask1], trial.y[~mask1], ws.w[~mask1])
    fit1 = core.ols_fit(trial.x[mask1], trial.y[mask1], ws.w[mask1])
    return PredictionModel(
        ate=fit1.intercept - fit0.intercept,
        moderator=fit1.slopes - fit0.slopes,
        resid_var0=fit0.residual_variance,
        resid_var1=fit1.residual_variance,
        kind="weighted",
        arm0=fit0,
        arm1=fit1,
    )


@dataclass
class WeightedMspe:
    """Weighted-fit MSPE, the planner estimation term inflated by the VIF."""

    mspe: float
    estimation_term: float
    tau_sq: float
    vif: float
    a1_a2_assumed: bool = True


def mspe_weighted(design: DesignSpec, var: VarianceSpec, vif: float) -> WeightedMspe:
    """MSPE of the inverse-odds-weighted moderator model under A1/A2.

    VIF * (sigma0|x^2/n0 + sigma1|x^2/n1) * (1 + p) + tau|x^2; equals the
    within-population moderator MSPE at VIF = 1. Validity of the
    transportability assumptions is the caller's assertion and is flagged
    on the result.
    """
    if vif < 1.0:
        raise DomainError(f"vif must be >= 1, got {vif}")
    est = (var.sigma0_cond_sq / design.n0 + var.sigma1_cond_sq / design.n1)
    estimation = vif * est * (1 + design.p)
    return WeightedMspe(
        mspe=estimation + var.tau_cond_sq,
        estimation_term=estimation,
        tau_sq=var.tau_cond_sq,
        vif=vif,
    )
