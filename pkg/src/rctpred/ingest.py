"""Population file loading and between-population diagnostics.

Files are comma-separated UTF-8 with a header row; cells may be quoted
with double quotes. Rows with missing or non-numeric covariate cells are
either rejected (with exact coordinates) or dropped and counted,
according to the file's row policy.

Two standardization bases coexist in one diagnostics report, with
explicit labels: standardized mean differences use the target
population's scale (the generalization-literature convention), while the
distance metrics that drive prediction error use the source population's
scale.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import core, shift, weights
from .errors import (
    ConvergenceError,
    InsufficientDataError,
    ParseError,
    PerfectSeparationError,
    SchemaError,
)

ROW_POLICIES = ("reject-missing", "drop-missing")


@dataclass
class PopulationFile:
    """A covariate CSV plus the columns and missing-row policy to load it."""

    path: str | Path
    covariate_columns: list[str]
    id_column: str | None = None
    row_policy: str = "reject-missing"

    def __post_init__(self) -> None:
        if self.row_policy not in ROW_POLICIES:
            raise SchemaError(
                f"row_policy must be one of {ROW_POLICIES}, got '{self.row_policy}'"
            )
        if not self.covariate_columns:
            raise SchemaError("covariate_columns must be nonempty")


@dataclass
class LoadResult:
    """Loaded covariate matrix with ids and a drop count."""

    matrix: np.ndarray
    ids: list[str] | None
    dropped_rows: int
    columns: list[str]

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]


def _parse_cell(text: str) -> float | None:
    text = text.strip()
    if not text:
        return None
    try:
        value = float(text)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def load(file: PopulationFile) -> LoadResult:
    """Read the declared covariate columns, applying the missing-row policy."""
    path = Path(file.path)
    if not path.exists():
        raise SchemaError(f"population file not found: {path}")
    with open(path, newline="", encoding="utf-8-sig") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file has no header row") from None
        header = [h.strip() for h in header]
        positions = {}
        for name in file.covariate_columns:
            if name not in header:
                raise SchemaError(f"{path}: declared column '{name}' not in header")
            positions[name] = header.index(name)
        id_pos = None
        if file.id_column is not None:
            if file.id_column not in header:
                raise SchemaError(
                    f"{path}: id column '{file.id_column}' not in header"
                )
            id_pos = header.index(file.id_column)

        rows: list[list[float]] = []
        ids: list[str] = []
        dropped = 0
        for row_number, row in enumerate(reader, start=2):
            values: list[float] = []
            bad_column: str | None = None
            for name in file.covariate_columns:
                pos = positions[name]
                cell = row[pos] if pos < len(row) else ""
                value = _parse_cell(cell)
                if value is None:
                    bad_column = name
                    break
                values.append(value)
            if bad_column is not None:
                if file.row_policy == "reject-missing":
                    raise ParseError(
                        f"{path}: row {row_number}, column '{bad_column}' is "
                        "missing or not a finite number"
                    )
                dropped += 1
                continue
            rows.append(values)
            if id_pos is not None:
                ids.append(row[id_pos] if id_pos < len(row) else "")
    if len(rows) < 2:
        raise InsufficientDataError(
            f"{path}: only {len(rows)} usable rows after applying "
            f"'{file.row_policy}'"
        )
    return LoadResult(
        matrix=np.asarray(rows, dtype=float),
        ids=ids if id_pos is not None else None,
        dropped_rows=dropped,
        columns=list(file.covariate_columns),
    )


@dataclass
class CovariateDiagnostic:
    """Per-covariate balance metrics between source and target."""

    name: str
    smd: float | None
    smd_flag: bool
    variance_ratio: float | None
    ratio_flag: bool
    degenerate_target: bool


@dataclass
class DiagnosticsReport:
    """Between-population diagnostics in both standardization bases.

    smd and variance ratios standardize by the target population; the
    Mahalanobis and dispersion distances standardize by the source (the
    basis that matters for prediction error), so swapping the populations
    changes them.
    """

    covariates: list[CovariateDiagnostic]
    m_b_given_a: float
    d_b_given_a: float
    coverage: float | None
    vif: float | None
    n_a: int
    n_b: int
    notes: list[str] = field(default_factory=list)

    @property
    def combined(self) -> float:
        return self.m_b_given_a + self.d_b_given_a

    @property
    def p(self) -> int:
        return len(self.covariates)

    @property
    def mspe_inflation(self) -> float:
        """(1 + D + M) / (1 + p): estimation-error inflation if unadjusted."""
        return (1.0 + self.combined) / (1.0 + self.p)

    def to_dict(self) -> dict:
        return {
            "covariates": [
                {
                    "name": c.name,
                    "smd": c.smd,
                    "smd_above_0.25": c.smd_flag,
                    "variance_ratio": c.variance_ratio,
                    "ratio_outside_[0.5,2]": c.ratio_flag,
                    "degenerate_target": c.degenerate_target,
                }
                for c in self.covariates
            ],
            "mahalanobis_m_b_given_a": self.m_b_given_a,
            "burg_d_b_given_a": self.d_b_given_a,
            "combined_distance": self.combined,
            "mspe_inflation": self.mspe_inflation,
            "coverage": self.coverage,
            "vif": self.vif,
            "n_a": self.n_a,
            "n_b": self.n_b,
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_table(self) -> str:
        lines = [
            f"{'covariate':<20} {'|SMD| (B scale)':>16} {'var ratio A/B':>14} flags"
        ]
        for c in self.covariates:
            smd = "degenerate" if c.smd is None else f"{c.smd:.4f}"
            ratio = "degenerate" if c.variance_ratio is None else f"{c.variance_ratio:.4f}"
            flags = []
            if c.smd_flag:
                flags.append("SMD>0.25")
            if c.ratio_flag:
                flags.append("ratio!")
            lines.append(f"{c.name:<20} {smd:>16} {ratio:>14} {' '.join(flags)}")
        lines.append("")
        lines.append(f"M (B|A)        : {self.m_b_given_a:.6f}")
        lines.append(f"D (B|A)        : {self.d_b_given_a:.6f}")
        lines.append(f"D + M          : {self.combined:.6f}   (p = {self.p})")
        lines.append(f"MSPE inflation : {self.mspe_inflation:.4f}")
        coverage = "unavailable" if self.coverage is None else f"{self.coverage:.4f}"
        vif = "unavailable" if self.vif is None else f"{self.vif:.4f}"
        lines.append(f"coverage of B  : {coverage}")
        lines.append(f"Kish VIF       : {vif}")
        lines.append(f"sizes          : |A| = {self.n_a}, |B| = {self.n_b}")
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines)


def diagnose(pop_a_data: np.ndarray, pop_b_data: np.ndarray,
             column_names: list[str] | None = None) -> DiagnosticsReport:
    """Full between-population comparison of two covariate matrices.

    Flags covariates with |SMD| above 0.25 or variance ratio outside
    [0.5, 2]; a zero target variance degrades only that covariate's
    entries. Coverage and VIF come from inverse-odds weights under the
    fitted selection model.
    """
    a = np.atleast_2d(np.asarray(pop_a_data, dtype=float))
    b = np.atleast_2d(np.asarray(pop_b_data, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise SchemaError(
            f"covariate schemas differ: {a.shape[1]} vs {b.shape[1]} columns"
        )
    p = a.shape[1]
    if column_names is None:
        column_names = [f"x{k + 1}" for k in range(p)]
    sum_a = core.summarize(a)
    sum_b = core.summarize(b)

    covs: list[CovariateDiagnostic] = []
    notes: list[str] = []
    for k in range(p):
        var_b = float(sum_b.sigma[k, k])
        var_a = float(sum_a.sigma[k, k])
        if var_b <= 0:
            covs.append(CovariateDiagnostic(
                name=column_names[k], smd=None, smd_flag=False,
                variance_ratio=None, ratio_flag=False, degenerate_target=True))
            notes.append(f"target variance of '{column_names[k]}' is zero")
            continue
        smd = abs(float(sum_a.mu[k] - sum_b.mu[k])) / math.sqrt(var_b)
        ratio = var_a / var_b
        covs.append(CovariateDiagnostic(
            name=column_names[k], smd=smd, smd_flag=smd > 0.25,
            variance_ratio=ratio, ratio_flag=not 0.5 <= ratio <= 2.0,
            degenerate_target=False))

    std_a = core.standardize(a, sum_a)
    std_b = core.standardize(b, sum_a)
    pop_a_std = core.summarize(std_a)
    pop_b_std = core.summarize(std_b)
    m = shift.mahalanobis(pop_a_std, pop_b_std)
    d = shift.burg(pop_a_std, pop_b_std)

    coverage: float | None
    vif: float | None
    try:
        model = weights.fit_selection(std_a, std_b, column_names=column_names)
        w_a = weights.inverse_odds(model.predict_proba(std_a))
        w_b = weights.inverse_odds(model.predict_proba(std_b))
        coverage = weights.common_support(w_a, w_b).coverage
        vif = weights.kish_vif(w_a)
    except (PerfectSeparationError, ConvergenceError) as exc:
        coverage = None
        vif = None
        notes.append(f"selection model unavailable: {exc}")

    return DiagnosticsReport(
        covariates=covs, m_b_given_a=m, d_b_given_a=d,
        coverage=coverage, vif=vif,
        n_a=a.shape[0], n_b=b.shape[0], notes=notes,
    )
