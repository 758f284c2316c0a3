import numpy as np
import pytest

from rknlab.errors import InvalidParameter
from rknlab.kalman import (FilterState, MeasurementNoisePolicy,
                           concise_covariance_update, correct, innovation,
                           joseph_covariance_update, kalman_gain, predict,
                           run_kalman_filter, run_kalman_filter_batch,
                           write_filter_runs_csv)
from rknlab.statespace import (BimodalNoiseSpec, make_constant_velocity_model,
                               sample_trajectory, series_rng)

from conftest import INIT_COV, INIT_MEAN


def test_policy_variants(noise40):
    oracle = MeasurementNoisePolicy.for_baseline("okf", noise40)
    expected = MeasurementNoisePolicy.for_baseline("sokf", noise40)
    assert oracle.mode == "oracle-per-step"
    assert expected.mode == "expected-variance"
    modes = np.array([1, 0, 0, 1])
    assert np.allclose(oracle.variance_sequence(modes, 4),
                       [noise40.sigma1_sq, noise40.sigma2_sq,
                        noise40.sigma2_sq, noise40.sigma1_sq])
    assert np.allclose(expected.variance_sequence(None, 3),
                       noise40.sigma_w_sq)
    with pytest.raises(InvalidParameter):
        MeasurementNoisePolicy.for_baseline("nope", noise40)
    with pytest.raises(InvalidParameter):
        oracle.variance_sequence(None, 3)


def test_predict_example(cv_model):
    state = FilterState(x_hat=np.array([1.0, 2.0]), P=np.eye(2))
    out = predict(state, cv_model)
    assert np.allclose(out.x_hat, [3.0, 2.0])
    assert np.allclose(out.P, [[2.0, 1.0], [1.0, 1.0 + 1e-4]])
    assert out.t == 1


def test_innovation_and_gain(cv_model):
    state = FilterState(x_hat=np.array([1.0, 0.0]), P=np.diag([4.0, 1.0]))
    y, S = innovation(state, np.array([3.0]), cv_model, np.array([[1.0]]))
    assert np.allclose(y, [2.0])
    assert np.allclose(S, [[5.0]])
    K = kalman_gain(state.P, cv_model.H, S)
    assert np.allclose(K, [[0.8], [0.0]])
    corrected = correct(state, K, y)
    assert np.allclose(corrected.x_hat, [2.6, 0.0])


def test_joseph_equals_concise_for_kalman_gain(cv_model):
    rng = np.random.default_rng(0)
    for _ in range(200):
        A = rng.standard_normal((2, 2))
        P = A @ A.T + 0.1 * np.eye(2)
        R = np.array([[rng.uniform(0.1, 2.0)]])
        S = cv_model.H @ P @ cv_model.H.T + R
        K = kalman_gain(P, cv_model.H, S)
        joseph = joseph_covariance_update(P, K, cv_model.H, R)
        concise = concise_covariance_update(P, K, cv_model.H)
        assert np.allclose(joseph, concise, rtol=1e-10, atol=1e-12)


def test_joseph_psd_for_arbitrary_gain(cv_model):
    rng = np.random.default_rng(1)
    for _ in range(100):
        A = rng.standard_normal((2, 2))
        P = A @ A.T + 0.1 * np.eye(2)
        R = np.array([[rng.uniform(0.1, 2.0)]])
        K = rng.standard_normal((2, 1))  # deliberately suboptimal
        joseph = joseph_covariance_update(P, K, cv_model.H, R)
        assert np.array_equal(joseph, joseph.T)
        assert np.all(np.linalg.eigvalsh(joseph) > 0)
        # The concise form has no such guarantee and generally differs.
        concise = concise_covariance_update(P, K, cv_model.H)
        assert not np.allclose(joseph, concise)


def _reference_filter(model, z, R_seq, init_mean, init_cov):
    """Textbook per-step implementation with explicit inverses."""
    x = np.asarray(init_mean, dtype=float)
    P = np.asarray(init_cov, dtype=float)
    xs, Ps = [], []
    for t in range(z.shape[0]):
        x = model.F @ x
        P = model.F @ P @ model.F.T + model.Q
        S = model.H @ P @ model.H.T + np.array([[R_seq[t]]])
        K = P @ model.H.T @ np.linalg.inv(S)
        y = z[t] - model.H @ x
        x = x + K @ y
        U = np.eye(2) - K @ model.H
        P = U @ P @ U.T + K @ np.array([[R_seq[t]]]) @ K.T
        xs.append(x.copy())
        Ps.append(P.copy())
    return np.array(xs), np.array(Ps)


def test_run_matches_reference_implementation(cv_model, noise40, tiny_dataset):
    traj = tiny_dataset.test[0]
    policy = MeasurementNoisePolicy.oracle(noise40)
    run = run_kalman_filter(cv_model, traj, policy, INIT_MEAN, INIT_COV)
    R_seq = policy.variance_sequence(traj.modes, traj.T)
    ref_x, ref_P = _reference_filter(cv_model, traj.measurements, R_seq,
                                     INIT_MEAN, INIT_COV)
    assert np.allclose(run.x_hat, ref_x, rtol=1e-10, atol=1e-12)
    assert np.allclose(run.P, ref_P, rtol=1e-10, atol=1e-12)


def test_batch_matches_single_runs(cv_model, noise40, tiny_dataset):
    trajs = tiny_dataset.test
    policy = MeasurementNoisePolicy.expected(noise40)
    z = np.stack([t.measurements for t in trajs])
    batch = run_kalman_filter_batch(cv_model, z, None, policy,
                                    INIT_MEAN, INIT_COV)
    for traj, run in zip(trajs, batch):
        single = run_kalman_filter(cv_model, traj, policy,
                                   INIT_MEAN, INIT_COV)
        assert np.allclose(run.x_hat, single.x_hat)
        assert np.allclose(run.P, single.P)
        assert np.allclose(run.K, single.K)


def test_tracks_noise_free_series():
    model = make_constant_velocity_model(1.0, 0.0)
    noise = BimodalNoiseSpec(p=0.5, sigma1_sq=1e-12, sigma2_sq=1e-12)
    traj = sample_trajectory(model, noise, 30, np.array([0.0, 1.0]),
                             np.zeros((2, 2)), series_rng(0, "test", 0))
    policy = MeasurementNoisePolicy.expected(noise)
    run = run_kalman_filter(model, traj, policy, np.array([0.0, 1.0]),
                            INIT_COV)
    assert np.allclose(run.x_hat, traj.states, atol=1e-5)


def test_oracle_filter_is_calibrated(cv_model, noise40):
    """Batch-mean squared Mahalanobis distance should hover near m = 2."""
    N, T = 300, 40
    trajs = [sample_trajectory(cv_model, noise40, T, INIT_MEAN, INIT_COV,
                               series_rng(11, "test", i)) for i in range(N)]
    z = np.stack([t.measurements for t in trajs])
    modes = np.stack([t.modes for t in trajs])
    runs = run_kalman_filter_batch(
        cv_model, z, modes, MeasurementNoisePolicy.oracle(noise40),
        INIT_MEAN, INIT_COV)
    d2 = []
    for traj, run in zip(trajs, runs):
        e = traj.states - run.x_hat
        d2.append(np.einsum("ti,tij,tj->t", e, np.linalg.inv(run.P), e))
    assert np.mean(d2) == pytest.approx(2.0, abs=0.25)


def test_write_filter_runs_csv(cv_model, noise40, tiny_dataset, tmp_path):
    policy = MeasurementNoisePolicy.expected(noise40)
    runs = [run_kalman_filter(cv_model, t, policy, INIT_MEAN, INIT_COV)
            for t in tiny_dataset.test[:2]]
    path = str(tmp_path / "runs.csv")
    write_filter_runs_csv(runs, path)
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "series,t,xhat_pos,xhat_vel,P00,P01,P11,K0,K1,innov"
    assert len(lines) == 1 + 2 * tiny_dataset.test[0].T
    first = lines[1].split(",")
    assert float(first[2]) == pytest.approx(runs[0].x_hat[0, 0])
