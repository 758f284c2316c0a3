"""Glue between datasets, estimators and the evaluation reports."""

from __future__ import annotations

import math
import os

import numpy as np

from .errors import InvalidParameter
from .evaluation import (EvaluationReport, evaluate_runs, write_consistency_csv,
                         write_gain_trace_csv, write_report_csv)
from .kalman import (BASELINE_NAMES, MeasurementNoisePolicy,
                     run_kalman_filter_batch)
from .rkn import RknModel, run_rkn_batch
from .statespace import Dataset


def dataset_nu_db(dataset: Dataset) -> float:
    """Heterogeneity level implied by the stored noise and process variance."""
    sigma_v_sq = dataset.model.Q[1, 1]
    if sigma_v_sq <= 0:
        return float("nan")
    return 10.0 * math.log10(dataset.noise.sigma_w_sq / sigma_v_sq)


def run_estimator(dataset: Dataset, estimator, split: str = "test") -> list:
    """Run a baseline (by name) or an RknModel over one split."""
    trajectories = dataset.split(split)
    if not trajectories:
        raise InvalidParameter(f"split {split!r} is empty")
    measurements = np.stack([t.measurements for t in trajectories])
    if isinstance(estimator, RknModel):
        return run_rkn_batch(estimator, dataset.model, measurements,
                             dataset.init_mean, dataset.init_cov)
    if estimator in BASELINE_NAMES:
        policy = MeasurementNoisePolicy.for_baseline(estimator, dataset.noise)
        modes = np.stack([t.modes for t in trajectories])
        return run_kalman_filter_batch(dataset.model, measurements, modes,
                                       policy, dataset.init_mean,
                                       dataset.init_cov)
    raise InvalidParameter(f"unknown estimator {estimator!r}")


def estimator_name(estimator) -> str:
    return "rkn" if isinstance(estimator, RknModel) else str(estimator)


def evaluate_estimator(dataset: Dataset, estimator,
                       split: str = "test") -> EvaluationReport:
    runs = run_estimator(dataset, estimator, split)
    return evaluate_runs(estimator_name(estimator), dataset_nu_db(dataset),
                         runs, dataset.split(split),
                         metadata={"split": split,
                                   "master_seed": dataset.master_seed})


def compare_methods(datasets, methods) -> list:
    """Reports for every (dataset, method) pair, in sweep-table order.

    datasets may be a single Dataset or a list (one per heterogeneity
    level); rows are ordered method-major to mirror the summary table.
    """
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    reports = []
    for method in methods:
        for dataset in datasets:
            reports.append(evaluate_estimator(dataset, method))
    return reports


def write_evaluation_outputs(report: EvaluationReport, out_dir: str,
                             plots: bool = True) -> list:
    """Emit the per-method CSVs (and figures) for one evaluation."""
    os.makedirs(out_dir, exist_ok=True)
    name = report.method
    written = []
    path = os.path.join(out_dir, f"report_{name}.csv")
    write_report_csv([report], path)
    written.append(path)
    path = os.path.join(out_dir, f"consistency_{name}.csv")
    write_consistency_csv(report, path)
    written.append(path)
    if report.gain_trace is not None:
        path = os.path.join(out_dir, f"gain_trace_{name}.csv")
        write_gain_trace_csv(report, path)
        written.append(path)
    if plots:
        from . import plots as plotmod
        written.extend(plotmod.render_report_figures(report, out_dir))
    return written
