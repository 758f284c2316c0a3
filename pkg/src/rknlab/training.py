"""Gaussian-NLL training of the learned estimator, plus gradient oracles.

The loss per step is e^T P^{-1} e + log det P with e the supervised state
error; both networks are optimized jointly over full unrolled sequences, so
gradients flow through the covariance recursion as well as the gain path.
Closed-form gradients of the per-step loss (w.r.t. the covariance and the
gain) are provided as oracles for the reverse-mode implementation.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .errors import Diverged, FormatVersionMismatch, ParseError, SpecMismatch
from .linalg import log_det_spd, spd_solve
from .nets import (AdamState, DTYPE, NetworkSpec, adam_step, clip_grad_norm,
                   get_flat_params, parameter_count, set_flat_params)
from .rkn import RknModel, rkn_forward
from .statespace import Dataset, LinearStateSpaceModel, Trajectory

CHECKPOINT_MAGIC = b"RKNCKPT1"
CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class TrainingConfig:
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 32
    l2_lambda: float = 1e-4
    seed: int = 0
    patience: int = 10
    grad_clip: float = 10.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class LossBreakdown:
    quadratic: float
    logdet: float
    regularization: float = 0.0

    @property
    def total(self) -> float:
        return self.quadratic + self.logdet + self.regularization


def nll_loss(e: np.ndarray, P_hat: np.ndarray) -> LossBreakdown:
    """Gaussian negative log-likelihood terms for one error/covariance pair."""
    e = np.asarray(e, dtype=float)
    quad = float(e @ spd_solve(P_hat, e))
    return LossBreakdown(quadratic=quad, logdet=log_det_spd(P_hat))


def analytic_grad_P(e: np.ndarray, P_hat: np.ndarray) -> np.ndarray:
    """Closed-form d(loss)/dP for the per-step NLL: P^-1 - P^-1 e e^T P^-1."""
    e = np.asarray(e, dtype=float)
    P_inv = spd_solve(P_hat, np.eye(P_hat.shape[0]))
    w = P_inv @ e
    return P_inv - np.outer(w, w)


def analytic_grad_K(e, y, P_hat, P_prev, K, model: LinearStateSpaceModel) -> np.ndarray:
    """Closed-form d(loss)/dK for a single step with P_prev held fixed.

    The covariance enters through P = (I - K H) F P_prev F^T (I - K H)^T + B
    with B independent of K, and the error through e = (x - x_pred) - K y:

        dL/dK = -2 [ (dL/dP) (I - K H) F P_prev F^T H^T  +  P^-1 e y^T ].
    """
    e = np.asarray(e, dtype=float)
    y = np.asarray(y, dtype=float)
    G = analytic_grad_P(e, P_hat)
    P_inv_e = spd_solve(P_hat, e)
    U = np.eye(model.m) - K @ model.H
    M = model.F @ P_prev @ model.F.T
    return -2.0 * (G @ U @ M @ model.H.T + np.outer(P_inv_e, y))


def _batched_nll_terms(e: torch.Tensor, P: torch.Tensor):
    """(quadratic, logdet) per (batch, time) entry, with one-shot jitter.

    A failed factorization gets a single jitter of 1e-9 * trace/m on the
    diagonal; a second failure raises Diverged with the earliest offending
    time index, since repeated silent jitter would mask a broken covariance
    head.
    """
    L, info = torch.linalg.cholesky_ex(P)
    if int(info.max()) > 0:
        m = P.shape[-1]
        jitter = 1e-9 * torch.diagonal(P, dim1=-2, dim2=-1).sum(-1) / m
        eye = torch.eye(m, dtype=P.dtype)
        P = P + (jitter.abs() + 1e-300)[..., None, None] * eye
        L, info = torch.linalg.cholesky_ex(P)
        if int(info.max()) > 0:
            bad = (info > 0).nonzero()[0].tolist()
            raise Diverged(f"covariance not positive definite at index {bad}")
    sol = torch.cholesky_solve(e.unsqueeze(-1), L).squeeze(-1)
    quad = (e * sol).sum(-1)
    logdet = 2.0 * torch.log(
        torch.diagonal(L, dim1=-2, dim2=-1)).sum(-1)
    return quad, logdet


def batch_loss(rkn: RknModel, model: LinearStateSpaceModel,
               states: torch.Tensor, measurements: torch.Tensor,
               init_mean, init_cov, l2_lambda: float = 0.0):
    """Mean NLL over a (B, T) batch plus the l2 penalty; returns the graph."""
    out = rkn_forward(rkn, model, measurements, init_mean, init_cov)
    e = states - out["x_hat"]
    quad, logdet = _batched_nll_terms(e, out["P"])
    reg = l2_lambda * sum((p * p).sum() for p in rkn.parameters())
    loss = quad.mean() + logdet.mean() + reg
    with torch.no_grad():
        breakdown = LossBreakdown(quadratic=float(quad.mean()),
                                  logdet=float(logdet.mean()),
                                  regularization=float(reg))
    return loss, breakdown, out


def sequence_loss(rkn: RknModel, model: LinearStateSpaceModel,
                  trajectory: Trajectory, config: TrainingConfig,
                  init_mean=None, init_cov=None):
    """Time-averaged NLL of one supervised series; accumulates gradients."""
    states = torch.as_tensor(trajectory.states, dtype=DTYPE).unsqueeze(0)
    z = torch.as_tensor(trajectory.measurements, dtype=DTYPE).unsqueeze(0)
    if init_mean is None:
        init_mean = np.zeros(rkn.m)
    if init_cov is None:
        init_cov = np.eye(rkn.m)
    loss, breakdown, _ = batch_loss(
        rkn, model, states, z, init_mean, init_cov, config.l2_lambda)
    loss.backward()
    return breakdown


def _split_tensors(trajectories):
    states = torch.as_tensor(
        np.stack([t.states for t in trajectories]), dtype=DTYPE)
    z = torch.as_tensor(
        np.stack([t.measurements for t in trajectories]), dtype=DTYPE)
    return states, z


def _eval_metrics(rkn, model, states, z, init_mean, init_cov):
    """Validation NLL, MSE (dB) and mean squared Mahalanobis distance."""
    with torch.no_grad():
        out = rkn_forward(rkn, model, z, init_mean, init_cov)
        e = states - out["x_hat"]
        quad, logdet = _batched_nll_terms(e, out["P"])
        nll = float(quad.mean() + logdet.mean())
        mse = float((e * e).mean())
        msmd = float(quad.mean())
    mse_db = 10.0 * math.log10(mse) if mse > 0 else float("-inf")
    return nll, mse_db, msmd


def train(rkn: RknModel, dataset: Dataset, config: TrainingConfig,
          log=None, adam: AdamState = None, start_epoch: int = 0,
          initial_history=None):
    """Joint Adam optimization of both networks on the training split.

    Keeps the best-validation parameter snapshot and stops early after
    `patience` epochs without improvement. Deterministic for a fixed
    (dataset, config) pair on one platform.
    """
    if not dataset.train or not dataset.val:
        raise ValueError("training requires non-empty train and val splits")
    model = dataset.model
    init_mean, init_cov = dataset.init_mean, dataset.init_cov
    train_states, train_z = _split_tensors(dataset.train)
    val_states, val_z = _split_tensors(dataset.val)
    n_train = train_states.shape[0]

    if adam is None:
        adam = AdamState(lr=config.learning_rate)
    history = list(initial_history or [])
    best_val = min((h["val_nll"] for h in history), default=float("inf"))
    best_params = get_flat_params(rkn)
    epochs_since_best = 0

    for epoch in range(start_epoch, start_epoch + config.epochs):
        # Seeding per epoch keeps the shuffle reproducible across resumes.
        gen = torch.Generator().manual_seed(config.seed * 100003 + epoch)
        order = torch.randperm(n_train, generator=gen)
        epoch_losses = []
        for start in range(0, n_train, config.batch_size):
            idx = order[start:start + config.batch_size]
            rkn.zero_grad(set_to_none=True)
            try:
                loss, breakdown, _ = batch_loss(
                    rkn, model, train_states[idx], train_z[idx],
                    init_mean, init_cov, config.l2_lambda)
            except Diverged as exc:
                raise Diverged(
                    f"epoch {epoch}, batch {start // config.batch_size}: {exc}")
            if not math.isfinite(float(loss.detach())):
                raise Diverged(
                    f"non-finite loss at epoch {epoch}, "
                    f"batch {start // config.batch_size}")
            loss.backward()
            clip_grad_norm(rkn, config.grad_clip)
            adam_step(rkn, adam)
            epoch_losses.append(breakdown.total - breakdown.regularization)

        train_nll = float(np.mean(epoch_losses))
        val_nll, val_mse_db, val_msmd = _eval_metrics(
            rkn, model, val_states, val_z, init_mean, init_cov)
        history.append({"epoch": epoch, "train_nll": train_nll,
                        "val_nll": val_nll, "val_mse_db": val_mse_db,
                        "val_msmd": val_msmd})
        if log is not None:
            log(f"epoch {epoch:3d}  train_nll {train_nll:10.4f}  "
                f"val_nll {val_nll:10.4f}  val_mse {val_mse_db:7.2f} dB  "
                f"val_msmd {val_msmd:6.3f}")

        if val_nll < best_val:
            best_val = val_nll
            best_params = get_flat_params(rkn)
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best > config.patience:
                break

    first = [h["train_nll"] for h in history[:5]]
    if len(first) == 5 and any(b > a for a, b in zip(first, first[1:])) \
            and first[-1] > first[0]:
        # Early-loss regression is worth surfacing but not fatal.
        if log is not None:
            log("warning: training loss increased over the first 5 epochs")

    set_flat_params(rkn, best_params)
    return rkn, history


def write_history_csv(history, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("epoch,train_nll,val_nll,val_mse_db,val_msmd\n")
        for row in history:
            fh.write("{epoch},{train_nll:.17g},{val_nll:.17g},"
                     "{val_mse_db:.17g},{val_msmd:.17g}\n".format(**row))


# ---------------------------------------------------------------------------
# Checkpoints: JSON header + flat little-endian float64 parameter blocks.
# ---------------------------------------------------------------------------

def _block(t: torch.Tensor) -> bytes:
    return t.detach().numpy().astype("<f8").tobytes()


def save_checkpoint(path: str, rkn: RknModel, config: TrainingConfig,
                    epoch: int, history, dataset_fingerprint: str = "",
                    adam: AdamState = None) -> None:
    """Write model (and optionally optimizer) state; round-trips bit-exactly."""
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "m": rkn.m, "n": rkn.n,
        "squared_features": rkn.squared_features,
        "gain_spec": rkn.gain_net.spec.to_dict(),
        "chol_spec": rkn.chol_net.spec.to_dict(),
        "gain_params": parameter_count(rkn.gain_net),
        "chol_params": parameter_count(rkn.chol_net),
        "training_config": asdict(config),
        "epoch": epoch,
        "history": history,
        "dataset_fingerprint": dataset_fingerprint,
        "has_optimizer": adam is not None,
    }
    if adam is not None:
        header["adam"] = {"lr": adam.lr, "beta1": adam.beta1,
                          "beta2": adam.beta2, "epsilon": adam.epsilon,
                          "t": adam.t}
    header_bytes = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(_block(get_flat_params(rkn.gain_net)))
        fh.write(_block(get_flat_params(rkn.chol_net)))
        if adam is not None:
            fh.write(_block(adam.m))
            fh.write(_block(adam.v))


def load_checkpoint(path: str, expect_specs=None):
    """Read a checkpoint; returns (rkn, adam_or_none, header).

    expect_specs, when given as (gain_spec, chol_spec), must match the stored
    architecture or SpecMismatch is raised.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(CHECKPOINT_MAGIC) + 8 \
            or not data.startswith(CHECKPOINT_MAGIC[:-1]):
        raise ParseError(f"{path} is not a checkpoint file")
    if not data.startswith(CHECKPOINT_MAGIC):
        raise FormatVersionMismatch(f"unsupported checkpoint magic in {path}")
    offset = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<Q", data, offset)
    offset += 8
    try:
        header = json.loads(data[offset:offset + header_len])
    except json.JSONDecodeError as exc:
        raise ParseError(f"corrupt checkpoint header: {exc}")
    offset += header_len
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"checkpoint format {header.get('format_version')!r}")

    gain_spec = NetworkSpec.from_dict(header["gain_spec"])
    chol_spec = NetworkSpec.from_dict(header["chol_spec"])
    if expect_specs is not None and (gain_spec, chol_spec) != tuple(expect_specs):
        raise SpecMismatch("checkpoint architecture differs from requested specs")

    rkn = RknModel(header["m"], header["n"], gain_spec, chol_spec,
                   squared_features=header["squared_features"])
    counts = [header["gain_params"], header["chol_params"]]
    adam = None
    if header["has_optimizer"]:
        counts += [sum(counts[:2])] * 2
    expected_bytes = 8 * sum(counts)
    if len(data) - offset != expected_bytes:
        raise ParseError(
            f"checkpoint payload is {len(data) - offset} bytes, "
            f"expected {expected_bytes}")

    def take(count):
        nonlocal offset
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset)
        offset += 8 * count
        return torch.as_tensor(arr.copy(), dtype=DTYPE)

    set_flat_params(rkn.gain_net, take(header["gain_params"]))
    set_flat_params(rkn.chol_net, take(header["chol_params"]))
    if header["has_optimizer"]:
        a = header["adam"]
        adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"],
                         epsilon=a["epsilon"], t=a["t"])
        total = header["gain_params"] + header["chol_params"]
        adam.m = take(total)
        adam.v = take(total)
    return rkn, adam, header
