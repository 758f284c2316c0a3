"""Learned-gain recurrent estimator with a recursive Joseph covariance update.

Two small recurrent networks share one feature vector per step: the first
produces the gain, the second the Cholesky factor of the corrected-noise
covariance term. The corrected covariance is then

    P = (I - K H) F P_prev F^T (I - K H)^T  +  C C^T,

which is symmetric PSD by construction for any gain. The estimator consumes
only measurements and the model matrices F, H; it never sees Q, R, mode
indicators, or ground-truth states.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .kalman import FilterRun
from .nets import DTYPE, GruNetwork, NetworkSpec, build_network
from .statespace import LinearStateSpaceModel

DEFAULT_FC_IN = (32,)
DEFAULT_GRU = (64,)
DEFAULT_FC_OUT = (32,)


def feature_dim(m: int, n: int) -> int:
    # innovation (n) + previous correction (m) + flattened H (n*m)
    # + measurement difference (n)
    return 2 * n + m + n * m


def default_specs(m: int, n: int, fc_in=DEFAULT_FC_IN, gru=DEFAULT_GRU,
                  fc_out=DEFAULT_FC_OUT):
    d = feature_dim(m, n)
    gain = NetworkSpec(input_dim=d, fc_in=fc_in, gru_layers=gru,
                       fc_out=fc_out, output_dim=m * n)
    chol = NetworkSpec(input_dim=d, fc_in=fc_in, gru_layers=gru,
                       fc_out=fc_out, output_dim=m * (m + 1) // 2)
    return gain, chol


class RknModel(nn.Module):
    """Gain network plus Cholesky network over shared per-step features."""

    def __init__(self, m: int, n: int, gain_spec: NetworkSpec,
                 chol_spec: NetworkSpec, squared_features: bool = True,
                 seed: int = 0):
        super().__init__()
        if gain_spec.output_dim != m * n:
            raise ValueError("gain head must emit m*n values")
        if chol_spec.output_dim != m * (m + 1) // 2:
            raise ValueError("cholesky head must emit m*(m+1)/2 values")
        self.m, self.n = m, n
        self.squared_features = squared_features
        self.gain_net = build_network(gain_spec, seed)
        self.chol_net = build_network(chol_spec, seed + 1)
        rows, cols = torch.tril_indices(m, m)
        self.register_buffer("_tril_rows", rows)
        self.register_buffer("_tril_cols", cols)

    @classmethod
    def create(cls, m: int = 2, n: int = 1, squared_features: bool = True,
               seed: int = 0, fc_in=DEFAULT_FC_IN, gru=DEFAULT_GRU,
               fc_out=DEFAULT_FC_OUT) -> "RknModel":
        gain_spec, chol_spec = default_specs(m, n, fc_in, gru, fc_out)
        return cls(m, n, gain_spec, chol_spec, squared_features, seed)

    def initial_hidden(self, batch: int):
        return (self.gain_net.initial_hidden(batch),
                self.chol_net.initial_hidden(batch))


@dataclass
class RknFilterState:
    """Carry between steps of a single-series run."""

    x_hat: torch.Tensor          # (m,)
    P: torch.Tensor              # (m, m)
    gain_hidden: list
    chol_hidden: list
    prev_correction: torch.Tensor  # (m,), K_{t-1} y_{t-1}
    prev_measurement: torch.Tensor  # (n,)
    t: int = 0


def initial_state(rkn: RknModel, init_mean, init_cov) -> RknFilterState:
    gain_hidden, chol_hidden = rkn.initial_hidden(1)
    return RknFilterState(
        x_hat=torch.as_tensor(np.asarray(init_mean), dtype=DTYPE),
        P=torch.as_tensor(np.asarray(init_cov), dtype=DTYPE),
        gain_hidden=gain_hidden, chol_hidden=chol_hidden,
        prev_correction=torch.zeros(rkn.m, dtype=DTYPE),
        prev_measurement=torch.zeros(rkn.n, dtype=DTYPE), t=0)


def model_tensors(model: LinearStateSpaceModel):
    return (torch.as_tensor(model.F, dtype=DTYPE),
            torch.as_tensor(model.H, dtype=DTYPE))


def compute_features(state: RknFilterState, z: torch.Tensor,
                     model: LinearStateSpaceModel,
                     squared: bool) -> torch.Tensor:
    """Per-step feature vector; previous-step features are zero at t=0."""
    F, H = model_tensors(model)
    x_pred = F @ state.x_hat
    f1 = z - H @ x_pred
    f2 = state.prev_correction
    f3 = H.reshape(-1)
    f4 = z - state.prev_measurement if state.t > 0 else torch.zeros_like(z)
    feats = torch.cat([f1, f2, f3, f4])
    return feats ** 2 if squared else feats


def _batched_features(x_pred, z, prev_corr, prev_z, H, first_step, squared):
    B = z.shape[0]
    f1 = z - x_pred @ H.T
    f3 = H.reshape(-1).expand(B, -1)
    f4 = torch.zeros_like(z) if first_step else z - prev_z
    feats = torch.cat([f1, prev_corr, f3, f4], dim=1)
    return feats ** 2 if squared else feats


def estimate_gain(rkn: RknModel, features: torch.Tensor, hidden: list):
    """Gain head output reshaped row-major to (..., m, n)."""
    single = features.dim() == 1
    x = features.unsqueeze(0) if single else features
    out, hidden = rkn.gain_net.step(x, hidden)
    K = out.reshape(-1, rkn.m, rkn.n)
    return (K[0] if single else K), hidden


def pack_lower_triangular(rkn: RknModel, raw: torch.Tensor) -> torch.Tensor:
    """Pack (..., m(m+1)/2) head outputs into lower-triangular factors.

    Diagonal entries pass through softplus so C C^T always has a strictly
    positive diagonal; off-diagonals are used raw.
    """
    rows, cols = rkn._tril_rows, rkn._tril_cols
    diag = rows == cols
    vals = torch.where(diag, nn.functional.softplus(raw), raw)
    L = raw.new_zeros(raw.shape[:-1] + (rkn.m, rkn.m))
    L[..., rows, cols] = vals
    return L


def estimate_cholesky(rkn: RknModel, features: torch.Tensor, hidden: list):
    single = features.dim() == 1
    x = features.unsqueeze(0) if single else features
    out, hidden = rkn.chol_net.step(x, hidden)
    L = pack_lower_triangular(rkn, out)
    return (L[0] if single else L), hidden


def covariance_update(K: torch.Tensor, model: LinearStateSpaceModel,
                      P_prev: torch.Tensor, C: torch.Tensor) -> torch.Tensor:
    """P = (I - K H) F P_prev F^T (I - K H)^T + C C^T, symmetrized."""
    F, H = model_tensors(model)
    U = torch.eye(K.shape[-2], dtype=DTYPE) - K @ H
    A = U @ F @ P_prev @ F.T @ U.transpose(-1, -2)
    P = A + C @ C.transpose(-1, -2)
    return 0.5 * (P + P.transpose(-1, -2))


def rkn_step(state: RknFilterState, z, model: LinearStateSpaceModel,
             rkn: RknModel):
    """One predict/correct step; returns the new state and a step record."""
    z = torch.as_tensor(np.asarray(z), dtype=DTYPE)
    F, H = model_tensors(model)
    x_pred = F @ state.x_hat
    y = z - H @ x_pred
    feats = compute_features(state, z, model, rkn.squared_features)
    K, gain_hidden = estimate_gain(rkn, feats, state.gain_hidden)
    C, chol_hidden = estimate_cholesky(rkn, feats, state.chol_hidden)
    correction = K @ y
    x_hat = x_pred + correction
    P = covariance_update(K, model, state.P, C)
    new_state = RknFilterState(
        x_hat=x_hat, P=P, gain_hidden=gain_hidden, chol_hidden=chol_hidden,
        prev_correction=correction, prev_measurement=z, t=state.t + 1)
    record = {"x_hat": x_hat, "P": P, "K": K, "C": C, "innovation": y}
    return new_state, record


def rkn_forward(rkn: RknModel, model: LinearStateSpaceModel,
                measurements: torch.Tensor, init_mean, init_cov) -> dict:
    """Unroll the estimator over a batch of series.

    measurements: (B, T, n). Returns stacked per-step tensors with gradient
    history intact, so training can backpropagate through the full recursion
    (the covariance recursion included).
    """
    B, T, n = measurements.shape
    m = rkn.m
    F, H = model_tensors(model)
    x = torch.as_tensor(np.asarray(init_mean), dtype=DTYPE).expand(B, m)
    P = torch.as_tensor(np.asarray(init_cov), dtype=DTYPE).expand(B, m, m)
    gain_hidden, chol_hidden = rkn.initial_hidden(B)
    prev_corr = torch.zeros(B, m, dtype=DTYPE)
    prev_z = torch.zeros(B, n, dtype=DTYPE)

    xs, Ps, Ks, ys = [], [], [], []
    for t in range(T):
        z = measurements[:, t]
        x_pred = x @ F.T
        y = z - x_pred @ H.T
        feats = _batched_features(x_pred, z, prev_corr, prev_z, H,
                                  first_step=(t == 0),
                                  squared=rkn.squared_features)
        K, gain_hidden = estimate_gain(rkn, feats, gain_hidden)
        C, chol_hidden = estimate_cholesky(rkn, feats, chol_hidden)
        corr = (K @ y.unsqueeze(-1)).squeeze(-1)
        x = x_pred + corr
        P = covariance_update(K, model, P, C)
        prev_corr, prev_z = corr, z
        xs.append(x)
        Ps.append(P)
        Ks.append(K)
        ys.append(y)

    return {"x_hat": torch.stack(xs, dim=1), "P": torch.stack(Ps, dim=1),
            "K": torch.stack(Ks, dim=1), "innovation": torch.stack(ys, dim=1)}


def run_rkn(rkn: RknModel, model: LinearStateSpaceModel, measurements,
            init_mean, init_cov) -> FilterRun:
    """Filter one series and emit the shared FilterRun record."""
    runs = run_rkn_batch(rkn, model,
                         np.asarray(measurements, dtype=float)[None],
                         init_mean, init_cov)
    return runs[0]


def run_rkn_batch(rkn: RknModel, model: LinearStateSpaceModel, measurements,
                  init_mean, init_cov) -> list:
    """Inference over (N, T, n) measurements; returns one FilterRun each."""
    z = torch.as_tensor(np.asarray(measurements, dtype=float), dtype=DTYPE)
    with torch.no_grad():
        out = rkn_forward(rkn, model, z, init_mean, init_cov)
    N, T = z.shape[0], z.shape[1]
    S = np.full((T, rkn.n, rkn.n), np.nan)  # no innovation covariance here
    return [FilterRun(x_hat=out["x_hat"][i].numpy(), P=out["P"][i].numpy(),
                      K=out["K"][i].numpy(),
                      innovation=out["innovation"][i].numpy(), S=S.copy())
            for i in range(N)]
