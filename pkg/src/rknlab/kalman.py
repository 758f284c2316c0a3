"""Classical Kalman filtering with Joseph-form covariance updates.

Two baseline configurations are provided for the bimodal-noise scenario:

* ``okf`` -- at every step the filter is told which mixture mode produced
  the measurement and uses that mode's true variance.
* ``sokf`` -- the filter only knows the expected mixture variance and uses
  it as a fixed Gaussian approximation.

Filters see measurements (and, for the oracle policy, mode indicators) but
never ground-truth states.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, NotPositiveDefinite
from .linalg import spd_solve, symmetrize
from .statespace import BimodalNoiseSpec, LinearStateSpaceModel, Trajectory

BASELINE_NAMES = ("okf", "sokf")


@dataclass
class FilterState:
    x_hat: np.ndarray
    P: np.ndarray
    t: int = 0


@dataclass(frozen=True)
class MeasurementNoisePolicy:
    """How a filter obtains the measurement-noise variance at each step."""

    mode: str  # "oracle-per-step" or "expected-variance"
    noise: BimodalNoiseSpec

    @classmethod
    def oracle(cls, noise: BimodalNoiseSpec) -> "MeasurementNoisePolicy":
        return cls(mode="oracle-per-step", noise=noise)

    @classmethod
    def expected(cls, noise: BimodalNoiseSpec) -> "MeasurementNoisePolicy":
        return cls(mode="expected-variance", noise=noise)

    @classmethod
    def for_baseline(cls, name: str, noise: BimodalNoiseSpec):
        if name == "okf":
            return cls.oracle(noise)
        if name == "sokf":
            return cls.expected(noise)
        raise InvalidParameter(f"unknown baseline {name!r}")

    def variance_sequence(self, modes, T: int) -> np.ndarray:
        """Scalar measurement variance per step, shape (T,)."""
        if self.mode == "expected-variance":
            return np.full(T, self.noise.sigma_w_sq)
        if self.mode == "oracle-per-step":
            if modes is None:
                raise InvalidParameter(
                    "oracle-per-step policy needs mode indicators")
            return self.noise.variance_for_mode(np.asarray(modes)).astype(float)
        raise InvalidParameter(f"unknown policy mode {self.mode!r}")


@dataclass
class FilterRun:
    """Per-step outputs shared by every estimator in the package."""

    x_hat: np.ndarray        # (T, m) corrected states
    P: np.ndarray            # (T, m, m) corrected covariances
    K: np.ndarray            # (T, m, n) gains
    innovation: np.ndarray   # (T, n)
    S: np.ndarray            # (T, n, n); NaN for estimators without one

    @property
    def T(self) -> int:
        return self.x_hat.shape[0]


def predict(state: FilterState, model: LinearStateSpaceModel) -> FilterState:
    """Time update: x <- F x, P <- F P F^T + Q."""
    x = model.F @ state.x_hat
    P = symmetrize(model.F @ state.P @ model.F.T + model.Q)
    return FilterState(x_hat=x, P=P, t=state.t + 1)


def innovation(state: FilterState, z: np.ndarray,
               model: LinearStateSpaceModel, R: np.ndarray):
    """Measurement residual y = z - H x and its covariance S = H P H^T + R."""
    y = np.asarray(z, dtype=float) - model.H @ state.x_hat
    S = symmetrize(model.H @ state.P @ model.H.T + R)
    # Factorization doubles as the SPD check demanded of S.
    spd_solve(S, np.eye(S.shape[0]))
    return y, S


def kalman_gain(P_pred: np.ndarray, H: np.ndarray, S: np.ndarray) -> np.ndarray:
    """K = P H^T S^{-1} via an SPD solve on S."""
    return spd_solve(S, H @ P_pred.T).T


def correct(state: FilterState, K: np.ndarray, y: np.ndarray) -> FilterState:
    """State part of the correction: x <- x + K y."""
    return FilterState(x_hat=state.x_hat + K @ y, P=state.P, t=state.t)


def concise_covariance_update(P_pred, K, H):
    """P <- (I - K H) P_pred; valid only when K is the Kalman gain."""
    m = P_pred.shape[0]
    return symmetrize((np.eye(m) - K @ H) @ P_pred)


def joseph_covariance_update(P_pred, K, H, R):
    """P <- (I - K H) P_pred (I - K H)^T + K R K^T; valid for any gain."""
    m = P_pred.shape[0]
    U = np.eye(m) - K @ H
    return symmetrize(U @ P_pred @ U.T + K @ np.atleast_2d(R) @ K.T)


def run_kalman_filter(model: LinearStateSpaceModel, trajectory: Trajectory,
                      policy: MeasurementNoisePolicy, init_mean, init_cov) -> FilterRun:
    """Filter one series; the trajectory's latent states are never read."""
    modes = trajectory.modes if policy.mode == "oracle-per-step" else None
    return run_kalman_filter_batch(
        model, trajectory.measurements[None, :, :],
        None if modes is None else modes[None, :],
        policy, init_mean, init_cov)[0]


def run_kalman_filter_batch(model: LinearStateSpaceModel, measurements,
                            modes, policy: MeasurementNoisePolicy,
                            init_mean, init_cov) -> list:
    """Run the filter over a batch of series at once.

    measurements has shape (N, T, n); modes (N, T) or None. Returns one
    FilterRun per series. All series share the same recursion, vectorized
    over the batch axis, which keeps desk-scale Monte Carlo sweeps cheap.
    """
    measurements = np.asarray(measurements, dtype=float)
    N, T, n = measurements.shape
    m = model.m
    F, H, Q = model.F, model.H, model.Q
    R_seq = np.stack([policy.variance_sequence(
        None if modes is None else modes[i], T) for i in range(N)])

    x = np.broadcast_to(np.asarray(init_mean, dtype=float), (N, m)).copy()
    P = np.broadcast_to(symmetrize(np.asarray(init_cov, dtype=float)),
                        (N, m, m)).copy()
    I = np.eye(m)

    xs = np.empty((N, T, m))
    Ps = np.empty((N, T, m, m))
    Ks = np.empty((N, T, m, n))
    ys = np.empty((N, T, n))
    Ss = np.empty((N, T, n, n))

    for t in range(T):
        # Predict.
        x = x @ F.T
        P = F @ P @ F.transpose() + Q
        P = 0.5 * (P + P.transpose(0, 2, 1))
        # Innovate; R is a per-series scalar here (n == 1 in scope, but the
        # algebra below stays generic in n via batched solves).
        R = R_seq[:, t][:, None, None] * np.eye(n)
        y = measurements[:, t] - x @ H.T
        S = H @ P @ H.T + R
        if np.any(np.linalg.eigvalsh(S)[:, 0] <= 0.0):
            raise NotPositiveDefinite(f"innovation covariance at step {t}")
        K = np.linalg.solve(S, (P @ H.T).transpose(0, 2, 1)).transpose(0, 2, 1)
        # Correct with the Joseph-form covariance update.
        x = x + (K @ y[:, :, None])[:, :, 0]
        U = I - K @ H
        P = U @ P @ U.transpose(0, 2, 1) + K @ R @ K.transpose(0, 2, 1)
        P = 0.5 * (P + P.transpose(0, 2, 1))

        xs[:, t], Ps[:, t], Ks[:, t], ys[:, t], Ss[:, t] = x, P, K, y, S

    return [FilterRun(x_hat=xs[i], P=Ps[i], K=Ks[i], innovation=ys[i], S=Ss[i])
            for i in range(N)]


FILTER_RUN_COLUMNS = ["series", "t", "xhat_pos", "xhat_vel",
                      "P00", "P01", "P11", "K0", "K1", "innov"]


def write_filter_runs_csv(runs, path: str) -> None:
    """Export runs of the scoped (m=2, n=1) model to CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FILTER_RUN_COLUMNS)
        for i, run in enumerate(runs):
            for t in range(run.T):
                writer.writerow([
                    i, t,
                    format(run.x_hat[t, 0], ".17g"),
                    format(run.x_hat[t, 1], ".17g"),
                    format(run.P[t, 0, 0], ".17g"),
                    format(run.P[t, 0, 1], ".17g"),
                    format(run.P[t, 1, 1], ".17g"),
                    format(run.K[t, 0, 0], ".17g"),
                    format(run.K[t, 1, 0], ".17g"),
                    format(run.innovation[t, 0], ".17g"),
                ])
