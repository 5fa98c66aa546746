import numpy as np
import pytest

from rctpred import core, ingest, weights
from rctpred.errors import InsufficientDataError, ParseError, SchemaError
from rctpred.ingest import PopulationFile


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def exact_moments_sample(rng, n, mu, sigma):
    """Draws whose summarize() moments equal (mu, sigma) exactly."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
    p = mu.shape[0]
    z = rng.normal(size=(n, p))
    z -= z.mean(axis=0)
    cov = z.T @ z / n
    whiten = np.linalg.inv(np.linalg.cholesky(cov))
    return z @ whiten.T @ np.linalg.cholesky(sigma).T + mu


# ---------------------------------------------------------------------------
# load
# ---------------------------------------------------------------------------


def test_load_well_formed(tmp_path):
    path = write_csv(tmp_path / "a.csv",
                     "id,x,y\nu1,1.0,2.0\nu2,2.0,3.0\nu3,3.0,4.0\n")
    res = ingest.load(PopulationFile(path=path, covariate_columns=["x", "y"],
                                     id_column="id"))
    assert res.matrix.shape == (3, 2)
    assert res.dropped_rows == 0
    assert res.ids == ["u1", "u2", "u3"]
    assert res.columns == ["x", "y"]


def test_load_drop_missing_counts(tmp_path):
    path = write_csv(tmp_path / "b.csv", "x,y\n1,2\n,3\n4,5\n6,7\n")
    res = ingest.load(PopulationFile(path=path, covariate_columns=["x", "y"],
                                     row_policy="drop-missing"))
    assert res.n_rows == 3
    assert res.dropped_rows == 1


def test_load_reject_missing_reports_coordinates(tmp_path):
    path = write_csv(tmp_path / "c.csv", "x,y\n1,2\n3,oops\n5,6\n")
    with pytest.raises(ParseError, match=r"row 3, column 'y'"):
        ingest.load(PopulationFile(path=path, covariate_columns=["x", "y"]))


def test_load_missing_column_is_schema_error(tmp_path):
    path = write_csv(tmp_path / "d.csv", "x,y\n1,2\n")
    with pytest.raises(SchemaError, match="'z'"):
        ingest.load(PopulationFile(path=path, covariate_columns=["x", "z"]))


def test_load_too_few_rows(tmp_path):
    path = write_csv(tmp_path / "e.csv", "x\n1\n,\n", )
    with pytest.raises(InsufficientDataError):
        ingest.load(PopulationFile(path=path, covariate_columns=["x"],
                                   row_policy="drop-missing"))


def test_load_nonfinite_treated_as_missing(tmp_path):
    path = write_csv(tmp_path / "f.csv", "x\n1\nnan\ninf\n2\n3\n")
    res = ingest.load(PopulationFile(path=path, covariate_columns=["x"],
                                     row_policy="drop-missing"))
    assert res.n_rows == 3
    assert res.dropped_rows == 2


def test_load_respects_declared_column_order(tmp_path):
    path = write_csv(tmp_path / "g.csv", "a,b,c\n1,2,3\n4,5,6\n")
    res = ingest.load(PopulationFile(path=path, covariate_columns=["c", "a"]))
    assert np.allclose(res.matrix, [[3, 1], [6, 4]])


def test_population_file_validation():
    with pytest.raises(SchemaError):
        PopulationFile(path="x.csv", covariate_columns=["a"], row_policy="meh")
    with pytest.raises(SchemaError):
        PopulationFile(path="x.csv", covariate_columns=[])
    with pytest.raises(SchemaError):
        ingest.load(PopulationFile(path="/nonexistent/file.csv",
                                   covariate_columns=["a"]))


# ---------------------------------------------------------------------------
# diagnose
# ---------------------------------------------------------------------------


def test_diagnose_identical_populations():
    rng = np.random.default_rng(51)
    data = exact_moments_sample(rng, 300, [0.0, 1.0], np.diag([1.0, 2.0]))
    report = ingest.diagnose(data, data.copy())
    for cov in report.covariates:
        assert cov.smd == pytest.approx(0.0, abs=1e-10)
        assert cov.variance_ratio == pytest.approx(1.0)
        assert not cov.smd_flag and not cov.ratio_flag
    assert report.m_b_given_a == pytest.approx(0.0, abs=1e-10)
    assert report.d_b_given_a == pytest.approx(2.0)
    assert report.coverage == 1.0
    assert report.vif == pytest.approx(1.0, abs=1e-6)
    assert report.mspe_inflation == pytest.approx(1.0, abs=1e-8)


def test_diagnose_unit_shift_scalar_case():
    rng = np.random.default_rng(52)
    a = exact_moments_sample(rng, 400, [0.0], [[1.0]])
    b = exact_moments_sample(rng, 500, [1.0], [[1.0]])
    report = ingest.diagnose(a, b, column_names=["score"])
    cov = report.covariates[0]
    assert cov.name == "score"
    assert cov.smd == pytest.approx(1.0, rel=1e-9)
    assert cov.variance_ratio == pytest.approx(1.0, rel=1e-9)
    assert cov.smd_flag and not cov.ratio_flag
    assert report.m_b_given_a == pytest.approx(1.0, rel=1e-9)
    assert report.d_b_given_a == pytest.approx(1.0, rel=1e-9)


def test_diagnose_matches_scripted_recomputation():
    rng = np.random.default_rng(53)
    sigma_a = np.array([[1.0, 0.3], [0.3, 0.8]])
    sigma_b = np.array([[1.6, -0.1], [-0.1, 1.1]])
    a = exact_moments_sample(rng, 600, [0.2, -0.5], sigma_a)
    b = exact_moments_sample(rng, 900, [0.5, -0.1], sigma_b)
    report = ingest.diagnose(a, b)

    # Independent recomputation with plain numpy calls.
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    va = a.var(axis=0)
    vb = b.var(axis=0)
    for k, cov in enumerate(report.covariates):
        assert cov.smd == pytest.approx(abs(mu_a[k] - mu_b[k]) / np.sqrt(vb[k]),
                                        abs=1e-8)
        assert cov.variance_ratio == pytest.approx(va[k] / vb[k], abs=1e-8)
    scale = np.sqrt(va)
    za = (a - mu_a) / scale
    zb = (b - mu_a) / scale
    cov_za = np.cov(za, rowvar=False, bias=True)
    cov_zb = np.cov(zb, rowvar=False, bias=True)
    gap = zb.mean(axis=0) - za.mean(axis=0)
    m_expected = float(gap @ np.linalg.inv(cov_za) @ gap)
    d_expected = float(np.trace(np.linalg.inv(cov_za) @ cov_zb))
    assert report.m_b_given_a == pytest.approx(m_expected, abs=1e-8)
    assert report.d_b_given_a == pytest.approx(d_expected, abs=1e-8)

    # Weights recomputed from the fitted coefficients: w = exp(-eta).
    model = weights.fit_selection(za, zb)
    eta_a = model.coefficients[0] + za @ model.coefficients[1:]
    eta_b = model.coefficients[0] + zb @ model.coefficients[1:]
    w_a = np.exp(-eta_a)
    w_b = np.exp(-eta_b)
    assert report.vif == pytest.approx(
        1.0 + np.var(w_a) / np.mean(w_a) ** 2, abs=1e-8)
    lo, hi = w_a.min(), w_a.max()
    assert report.coverage == pytest.approx(
        float(np.mean((w_b >= lo) & (w_b <= hi))), abs=1e-12)


def test_diagnose_direction_matters():
    rng = np.random.default_rng(54)
    a = exact_moments_sample(rng, 500, [0.0], [[1.0]])
    b = exact_moments_sample(rng, 500, [2.0], [[4.0]])
    ab = ingest.diagnose(a, b)
    ba = ingest.diagnose(b, a)
    # M standardizes by the first (source) argument, so direction matters.
    assert ab.m_b_given_a == pytest.approx(4.0, rel=1e-6)
    assert ba.m_b_given_a == pytest.approx(1.0, rel=1e-6)
    assert ab.d_b_given_a == pytest.approx(4.0, rel=1e-6)
    assert ba.d_b_given_a == pytest.approx(0.25, rel=1e-6)


def test_diagnose_degenerate_target_column_flags_not_fails():
    rng = np.random.default_rng(55)
    a = np.column_stack([rng.normal(size=100), rng.normal(size=100)])
    # Constant target column centered inside the source spread, so the
    # populations stay non-separable and only that covariate degrades.
    b = np.column_stack([rng.normal(size=80), np.zeros(80)])
    report = ingest.diagnose(a, b)
    assert report.covariates[1].degenerate_target
    assert report.covariates[1].smd is None
    assert report.covariates[0].smd is not None
    assert any("zero" in note for note in report.notes)
    assert report.vif is not None


def test_diagnose_survives_separable_populations():
    rng = np.random.default_rng(57)
    a = np.column_stack([rng.normal(size=100), rng.normal(size=100) + 10.0])
    b = np.column_stack([rng.normal(size=100), rng.normal(size=100) - 10.0])
    report = ingest.diagnose(a, b)
    assert report.vif is None and report.coverage is None
    assert any("selection model unavailable" in n for n in report.notes)
    assert report.m_b_given_a > 0  # distances still reported
    assert "unavailable" in report.to_table()


def test_diagnose_schema_mismatch():
    with pytest.raises(SchemaError):
        ingest.diagnose(np.zeros((10, 2)), np.zeros((10, 3)))


def test_report_serializations():
    rng = np.random.default_rng(56)
    a = exact_moments_sample(rng, 200, [0.0, 0.0], np.eye(2))
    b = exact_moments_sample(rng, 200, [0.4, 0.0], np.eye(2) * 1.4)
    report = ingest.diagnose(a, b, column_names=["u", "v"])
    payload = report.to_json()
    assert '"mahalanobis_m_b_given_a"' in payload
    table = report.to_table()
    assert "Kish VIF" in table and "u" in table
