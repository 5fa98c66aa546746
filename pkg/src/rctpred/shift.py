"""Population-shift penalties: what happens when the model is estimated in
one covariate population but predictions are wanted in another.

Both population summaries handed to these operations must be expressed in
coordinates standardized with respect to the estimation population, since
that is the scale on which the model was fitted. The moderator-bias matrix
and the target idiosyncratic variance are unidentifiable from estimation
data; they enter strictly as sensitivity inputs.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import core, planner
from .core import DesignSpec, PopulationSummary, VarianceSpec
from .errors import DomainError


class StandardizationWarning(UserWarning):
    """The estimation population does not look standardized to itself."""


@dataclass
class ShiftSpec:
    """Estimation/prediction population pair plus the sensitivity inputs.

    theta is the moderator-bias matrix (outer product of the coefficient
    gap with itself); it defaults to zero, i.e. transportable moderation.
    tau_b_sq is the idiosyncratic effect variance in the prediction
    population; it defaults to the estimation population's value and the
    default is flagged on results that consume it.
    """

    pop_a: PopulationSummary
    pop_b: PopulationSummary
    theta: np.ndarray | None = None
    tau_b_sq: float | None = None

    def __post_init__(self) -> None:
        p = self.pop_a.p
        if self.pop_b.p != p:
            raise DomainError(
                f"population dimensions differ: {p} vs {self.pop_b.p}"
            )
        if self.theta is not None:
            self.theta = np.atleast_2d(np.asarray(self.theta, dtype=float))
            if self.theta.shape != (p, p):
                raise DomainError(
                    f"theta shape {self.theta.shape} does not match p={p}"
                )
            scale = max(1.0, float(np.abs(self.theta).max()))
            if not np.allclose(self.theta, self.theta.T, atol=1e-10 * scale):
                raise DomainError("theta must be symmetric")
            if np.linalg.eigvalsh(self.theta)[0] < -1e-10 * scale:
                raise DomainError("theta must be positive semi-definite")
        if self.tau_b_sq is not None and self.tau_b_sq < 0:
            raise DomainError(f"tau_b_sq must be >= 0, got {self.tau_b_sq}")
        mu_off = float(np.abs(self.pop_a.mu).max(initial=0.0))
        diag_off = float(np.abs(np.diag(self.pop_a.sigma) - 1.0).max(initial=0.0))
        if mu_off > 1e-8 or diag_off > 1e-8:
            warnings.warn(
                "pop_a does not look standardized to itself "
                f"(max |mu|={mu_off:.3g}, max |diag-1|={diag_off:.3g}); "
                "distances assume coordinates standardized with respect to it",
                StandardizationWarning,
                stacklevel=2,
            )

    @property
    def p(self) -> int:
        return self.pop_a.p

    def theta_or_zero(self) -> np.ndarray:
        if self.theta is None:
            return np.zeros((self.p, self.p))
        return self.theta

    @classmethod
    def from_coefficient_gap(cls, pop_a: PopulationSummary, pop_b: PopulationSummary,
                             gap: np.ndarray, tau_b_sq: float | None = None,
                             ) -> "ShiftSpec":
        """Build theta as the outer product of a moderator-coefficient gap."""
        gap = np.atleast_1d(np.asarray(gap, dtype=float))
        return cls(pop_a=pop_a, pop_b=pop_b, theta=np.outer(gap, gap),
                   tau_b_sq=tau_b_sq)


@dataclass
class ShiftDiagnostics:
    """Distance metrics between prediction and estimation populations."""

    mahalanobis_m: float
    burg_d: float

    @property
    def combined(self) -> float:
        return self.mahalanobis_m + self.burg_d


@dataclass
class ShiftedMspe:
    """Shift-inflated MSPE with its additive pieces spelled out."""

    mspe: float
    estimation_term: float
    bias_term: float
    tau_b_sq: float
    tau_b_assumed_equal: bool
    diagnostics: ShiftDiagnostics


@dataclass
class AteShiftResult:
    """MSPE of predicting every target unit with the source ATE."""

    mspe: float
    upper_bound: float


def mahalanobis(pop_a: PopulationSummary, pop_b: PopulationSummary) -> float:
    """Squared Mahalanobis distance of the mean gap in the source metric.

    (mu_B - mu_A)' Sigma_A^{-1} (mu_B - mu_A); zero iff the means coincide.
    """
    if pop_a.p != pop_b.p:
        raise DomainError(f"dimension mismatch: {pop_a.p} vs {pop_b.p}")
    gap = pop_b.mu - pop_a.mu
    return float(gap @ core.spd_solve(pop_a.sigma, gap, what="Sigma_A"))


def burg(pop_a: PopulationSummary, pop_b: PopulationSummary) -> float:
    """Dispersion mismatch tr[Sigma_A^{-1} Sigma_B]; equals p when they agree."""
    if pop_a.p != pop_b.p:
        raise DomainError(f"dimension mismatch: {pop_a.p} vs {pop_b.p}")
    return float(np.trace(core.spd_solve(pop_a.sigma, pop_b.sigma, what="Sigma_A")))


def diagnostics(pop_a: PopulationSummary, pop_b: PopulationSummary) -> ShiftDiagnostics:
    """Both distance metrics at once."""
    return ShiftDiagnostics(mahalanobis_m=mahalanobis(pop_a, pop_b),
                            burg_d=burg(pop_a, pop_b))


def mspe_shifted(design: DesignSpec, var: VarianceSpec, spec: ShiftSpec) -> ShiftedMspe:
    """MSPE of the moderator model when predictions target a shifted population.

    (sigma0|x^2/n0 + sigma1|x^2/n1) * (1 + D + M) + tr(Theta Sigma_B) + tau_B^2.
    With identical populations, zero theta, and equal idiosyncratic variance
    this reduces exactly to the within-population moderator MSPE, the 1 + p
    factor re-emerging as 1 + D + M.
    """
    if design.p != spec.p:
        raise DomainError(f"design p={design.p} does not match populations p={spec.p}")
    diag = diagnostics(spec.pop_a, spec.pop_b)
    est_unit = var.sigma0_cond_sq / design.n0 + var.sigma1_cond_sq / design.n1
    estimation = est_unit * (1.0 + diag.combined)
    bias = float(np.trace(spec.theta_or_zero() @ spec.pop_b.sigma))
    assumed = spec.tau_b_sq is None
    tau_b = var.tau_cond_sq if assumed else float(spec.tau_b_sq)
    return ShiftedMspe(
        mspe=estimation + bias + tau_b,
        estimation_term=estimation,
        bias_term=bias,
        tau_b_sq=tau_b,
        tau_b_assumed_equal=assumed,
        diagnostics=diag,
    )


def mspe_ate_shifted(design: DesignSpec, var: VarianceSpec,
                     pop_a: PopulationSummary, pop_b: PopulationSummary,
                     delta_b: np.ndarray,
                     tau_b_sq: float | None = None) -> AteShiftResult:
    """MSPE of using the source ATE as every target unit's prediction.

    The bias term is the mean gap through the target moderator outer
    product, ((mu_B - mu_A)' delta_B)^2; the bound replaces it with
    (delta_B' Sigma_A delta_B) * M, which dominates by Cauchy-Schwarz and
    coincides at p = 1. tau_b_sq defaults to the source total
    treatment-effect variance.
    """
    delta_b = np.atleast_1d(np.asarray(delta_b, dtype=float))
    if pop_a.p != pop_b.p or delta_b.shape[0] != pop_a.p:
        raise DomainError(
            f"dimension mismatch: pops {pop_a.p}/{pop_b.p}, delta_b {delta_b.shape[0]}"
        )
    est = var.sigma0_cond_sq / design.n0 + var.sigma1_cond_sq / design.n1
    gap = pop_b.mu - pop_a.mu
    bias = float(gap @ delta_b) ** 2
    tau_b = var.tau_sq if tau_b_sq is None else tau_b_sq
    m = mahalanobis(pop_a, pop_b)
    bound_bias = float(delta_b @ pop_a.sigma @ delta_b) * m
    return AteShiftResult(mspe=est + bias + tau_b,
                          upper_bound=est + bound_bias + tau_b)


def sample_selection_bias(mu_s: np.ndarray, mu_p: np.ndarray,
                          delta: np.ndarray) -> float:
    """Selection bias of the sample ATE: (mu_sample - mu_pop)' (beta1 - beta0).

    The population ATE equals the sample ATE plus this inner product.
    """
    mu_s = np.atleast_1d(np.asarray(mu_s, dtype=float))
    mu_p = np.atleast_1d(np.asarray(mu_p, dtype=float))
    delta = np.atleast_1d(np.asarray(delta, dtype=float))
    if not mu_s.shape == mu_p.shape == delta.shape:
        raise DomainError(
            f"dimension mismatch: {mu_s.shape}, {mu_p.shape}, {delta.shape}"
        )
    return float((mu_s - mu_p) @ delta)


def spe_estimator_bias(x: np.ndarray, spec: ShiftSpec, tau_a_sq: float) -> float:
    """Signed misstatement of the naive within-source SPE estimate at x.

    Returns -(x' Theta x + (tau_A^2 - tau_B^2)). Positive values mean the
    naive estimator understates the true error, as when the target
    population carries extra idiosyncratic variance.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[0] != spec.p:
        raise DomainError(f"x has length {x.shape[0]} but populations have p={spec.p}")
    if tau_a_sq < 0:
        raise DomainError(f"tau_a_sq must be >= 0, got {tau_a_sq}")
    tau_b = tau_a_sq if spec.tau_b_sq is None else spec.tau_b_sq
    quad = float(x @ spec.theta_or_zero() @ x)
    return -(quad + (tau_a_sq - tau_b))


def shift_free_equivalent(design: DesignSpec, var: VarianceSpec) -> float:
    """Within-population moderator MSPE, for comparison against shifted values."""
    return planner.mspe_moderator(design, var)
