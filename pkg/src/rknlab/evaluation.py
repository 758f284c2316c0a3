"""Monte Carlo metrics and reports for filter consistency.

MSE is averaged over time and batch and reported in dB; MSMD (mean squared
Mahalanobis distance) should sit at the state dimension m for a calibrated
estimator. Per-time curves compare batch-empirical error spread against the
estimator's own covariance diagonal.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyEnsemble, NotPositiveDefinite

MSE_DB_SENTINEL = float("-inf")


@dataclass
class ErrorEnsemble:
    """Stacked per-series errors and covariances: (N, T, m) and (N, T, m, m)."""

    errors: np.ndarray
    covariances: np.ndarray

    @classmethod
    def from_runs(cls, runs, trajectories) -> "ErrorEnsemble":
        errors = np.stack([traj.states - run.x_hat
                           for run, traj in zip(runs, trajectories)])
        covariances = np.stack([run.P for run in runs])
        return cls(errors=errors, covariances=covariances)

    @property
    def N(self) -> int:
        return self.errors.shape[0]

    @property
    def T(self) -> int:
        return self.errors.shape[1]

    @property
    def m(self) -> int:
        return self.errors.shape[2]


@dataclass
class EvaluationReport:
    method: str
    nu_db: float
    mse_db: float
    msmd: float
    mse_per_component: np.ndarray          # (m,)
    empirical_std: np.ndarray              # (T, m)
    estimated_std: np.ndarray              # (T, m)
    gain_trace: np.ndarray = None          # (T, m) from one series
    metadata: dict = field(default_factory=dict)


def mse_db(ensemble: ErrorEnsemble) -> float:
    """10 log10 of the mean squared error over batch, time and components.

    The per-component mean (rather than the norm-squared sum) is what the
    reference Monte Carlo tables use; summing components would shift every
    value up by 10 log10(m).
    """
    if ensemble.N == 0:
        raise EmptyEnsemble("no series in ensemble")
    mean_sq = float((ensemble.errors ** 2).mean())
    if mean_sq == 0.0:
        return MSE_DB_SENTINEL
    return 10.0 * math.log10(mean_sq)


def mse_per_component(ensemble: ErrorEnsemble) -> np.ndarray:
    if ensemble.N == 0:
        raise EmptyEnsemble("no series in ensemble")
    return (ensemble.errors ** 2).mean(axis=(0, 1))


def mahalanobis_squares(ensemble: ErrorEnsemble) -> np.ndarray:
    """e^T P^{-1} e per (series, time); raises with location on a bad P."""
    try:
        sol = np.linalg.solve(ensemble.covariances,
                              ensemble.errors[..., None])[..., 0]
    except np.linalg.LinAlgError:
        for i in range(ensemble.N):
            for t in range(ensemble.T):
                if not np.all(np.linalg.eigvalsh(
                        ensemble.covariances[i, t]) > 0):
                    raise NotPositiveDefinite(
                        f"covariance at series {i}, step {t}")
        raise
    return (ensemble.errors * sol).sum(axis=2)


def msmd(ensemble: ErrorEnsemble) -> float:
    """Batch-and-time mean of the squared Mahalanobis distance."""
    if ensemble.N == 0:
        raise EmptyEnsemble("no series in ensemble")
    return float(mahalanobis_squares(ensemble).mean())


def per_time_consistency(ensemble: ErrorEnsemble):
    """(empirical std, mean estimated std), both (T, m).

    Empirical spread is the RMS error over the batch; the estimated curve is
    the root of the batch-mean covariance diagonal.
    """
    if ensemble.N < 2:
        raise EmptyEnsemble("need at least two series for empirical spread")
    empirical = np.sqrt((ensemble.errors ** 2).mean(axis=0))
    diag = np.diagonal(ensemble.covariances, axis1=2, axis2=3)
    estimated = np.sqrt(diag.mean(axis=0))
    return empirical, estimated


def evaluate_runs(method: str, nu_db_value: float, runs, trajectories,
                  metadata=None) -> EvaluationReport:
    """Full report for one estimator on one stored test split."""
    ensemble = ErrorEnsemble.from_runs(runs, trajectories)
    empirical, estimated = per_time_consistency(ensemble)
    gain_trace = runs[0].K[:, :, 0] if runs else None
    return EvaluationReport(
        method=method, nu_db=nu_db_value, mse_db=mse_db(ensemble),
        msmd=msmd(ensemble), mse_per_component=mse_per_component(ensemble),
        empirical_std=empirical, estimated_std=estimated,
        gain_trace=gain_trace, metadata=metadata or {})


# ---------------------------------------------------------------------------
# CSV emission. All writers use fixed-order reductions upstream, so reruns
# on one platform are byte-identical.
# ---------------------------------------------------------------------------

def _num(x: float) -> str:
    if x == float("-inf"):
        return "-inf"
    return format(x, ".17g")


def write_report_csv(reports, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "nu_db", "mse_db", "msmd",
                         "mse_pos", "mse_vel"])
        for r in reports:
            writer.writerow([r.method, _num(r.nu_db), _num(r.mse_db),
                             _num(r.msmd), _num(r.mse_per_component[0]),
                             _num(r.mse_per_component[1])])


def write_consistency_csv(report: EvaluationReport, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "emp_std_pos", "est_std_pos",
                         "emp_std_vel", "est_std_vel"])
        for t in range(report.empirical_std.shape[0]):
            writer.writerow([t, _num(report.empirical_std[t, 0]),
                             _num(report.estimated_std[t, 0]),
                             _num(report.empirical_std[t, 1]),
                             _num(report.estimated_std[t, 1])])


def write_gain_trace_csv(report: EvaluationReport, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "K0", "K1"])
        for t in range(report.gain_trace.shape[0]):
            writer.writerow([t, _num(report.gain_trace[t, 0]),
                             _num(report.gain_trace[t, 1])])
