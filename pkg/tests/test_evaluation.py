import csv

import numpy as np
import pytest

from rknlab.errors import EmptyEnsemble, NotPositiveDefinite
from rknlab.evaluation import (ErrorEnsemble, MSE_DB_SENTINEL, evaluate_runs,
                               mahalanobis_squares, mse_db, mse_per_component,
                               msmd, per_time_consistency,
                               write_consistency_csv, write_gain_trace_csv,
                               write_report_csv)
from rknlab.kalman import MeasurementNoisePolicy, run_kalman_filter_batch

from conftest import INIT_COV, INIT_MEAN


def make_ensemble(errors, covariances=None):
    errors = np.asarray(errors, dtype=float)
    if covariances is None:
        covariances = np.broadcast_to(
            np.eye(errors.shape[-1]), errors.shape + (errors.shape[-1],)
        ).copy()
    return ErrorEnsemble(errors=errors, covariances=np.asarray(covariances,
                                                               dtype=float))


def test_mse_db_example():
    # Mean squared error per component of 0.1 -> -10 dB.
    e = np.full((4, 5, 2), np.sqrt(0.1))
    assert mse_db(make_ensemble(e)) == pytest.approx(-10.0)


def test_mse_db_zero_sentinel():
    assert mse_db(make_ensemble(np.zeros((2, 3, 2)))) == MSE_DB_SENTINEL


def test_mse_db_empty():
    with pytest.raises(EmptyEnsemble):
        mse_db(make_ensemble(np.zeros((0, 3, 2))))


def test_mse_per_component():
    e = np.zeros((1, 2, 2))
    e[0, :, 0] = [1.0, 1.0]
    e[0, :, 1] = [2.0, 0.0]
    out = mse_per_component(make_ensemble(e))
    assert np.allclose(out, [1.0, 2.0])


def test_msmd_examples():
    e = np.array([[[1.0, 1.0]]])
    assert msmd(make_ensemble(e)) == pytest.approx(2.0)
    # Scaling the covariance rescales the distance.
    cov = np.diag([4.0, 1.0])[None, None]
    assert msmd(make_ensemble(np.array([[[2.0, 1.0]]]), cov)) \
        == pytest.approx(2.0)
    assert msmd(make_ensemble(np.zeros((2, 2, 2)))) == pytest.approx(0.0)
    with pytest.raises(EmptyEnsemble):
        msmd(make_ensemble(np.zeros((0, 1, 2))))


def test_msmd_order_invariance():
    rng = np.random.default_rng(0)
    e = rng.standard_normal((6, 4, 2))
    ens = make_ensemble(e)
    flipped = make_ensemble(e[::-1].copy())
    assert msmd(ens) == pytest.approx(msmd(flipped), rel=1e-12)


def test_msmd_matches_chi_square_mean():
    """Errors drawn from N(0, P) give a mean squared distance near m."""
    rng = np.random.default_rng(1)
    N, T, m = 400, 20, 2
    A = rng.standard_normal((m, m))
    P = A @ A.T + 0.5 * np.eye(m)
    L = np.linalg.cholesky(P)
    e = rng.standard_normal((N, T, m)) @ L.T
    cov = np.broadcast_to(P, (N, T, m, m)).copy()
    assert msmd(make_ensemble(e, cov)) == pytest.approx(m, abs=0.15)


def test_mahalanobis_reports_bad_covariance():
    cov = np.broadcast_to(np.eye(2), (2, 3, 2, 2)).copy()
    cov[1, 2] = 0.0
    with pytest.raises(NotPositiveDefinite) as err:
        mahalanobis_squares(make_ensemble(np.ones((2, 3, 2)), cov))
    assert "series 1" in str(err.value) and "step 2" in str(err.value)


def test_per_time_consistency_known_spread():
    rng = np.random.default_rng(2)
    N, T = 2000, 3
    scale = np.array([1.0, 2.0, 3.0])
    e = rng.standard_normal((N, T, 2)) * scale[None, :, None]
    cov = np.stack([np.stack([np.diag([s ** 2, s ** 2]) for s in scale])
                    for _ in range(N)])
    empirical, estimated = per_time_consistency(make_ensemble(e, cov))
    assert empirical.shape == (T, 2) and estimated.shape == (T, 2)
    assert np.allclose(estimated[:, 0], scale)
    assert np.allclose(empirical[:, 0], scale, rtol=0.08)
    with pytest.raises(EmptyEnsemble):
        per_time_consistency(make_ensemble(np.zeros((1, 2, 2))))


def test_evaluate_runs_and_csv_round_trip(cv_model, noise40, tiny_dataset,
                                          tmp_path):
    trajs = tiny_dataset.test
    z = np.stack([t.measurements for t in trajs])
    modes = np.stack([t.modes for t in trajs])
    runs = run_kalman_filter_batch(
        cv_model, z, modes, MeasurementNoisePolicy.oracle(noise40),
        INIT_MEAN, INIT_COV)
    report = evaluate_runs("okf", 40.0, runs, trajs)
    assert report.method == "okf"
    assert np.isfinite(report.mse_db)
    assert report.msmd > 0
    assert report.empirical_std.shape == (trajs[0].T, 2)
    assert report.gain_trace.shape == (trajs[0].T, 2)

    report_path = str(tmp_path / "report.csv")
    write_report_csv([report], report_path)
    with open(report_path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1
    assert rows[0]["method"] == "okf"
    assert float(rows[0]["mse_db"]) == pytest.approx(report.mse_db)
    assert float(rows[0]["msmd"]) == pytest.approx(report.msmd)

    cons_path = str(tmp_path / "consistency.csv")
    write_consistency_csv(report, cons_path)
    with open(cons_path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == trajs[0].T
    assert float(rows[3]["emp_std_pos"]) == pytest.approx(
        report.empirical_std[3, 0])

    gain_path = str(tmp_path / "gain.csv")
    write_gain_trace_csv(report, gain_path)
    with open(gain_path) as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[0]["K0"]) == pytest.approx(report.gain_trace[0, 0])


def test_report_csv_handles_sentinel(tmp_path):
    from rknlab.evaluation import EvaluationReport
    rep = EvaluationReport(method="x", nu_db=0.0, mse_db=MSE_DB_SENTINEL,
                           msmd=0.0, mse_per_component=np.zeros(2),
                           empirical_std=np.zeros((1, 2)),
                           estimated_std=np.zeros((1, 2)))
    path = str(tmp_path / "r.csv")
    write_report_csv([rep], path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert rows[0]["mse_db"] == "-inf"
