"""Small recurrent networks used by the learned estimator.

Each network is an affine stack feeding a GRU feeding an affine head:
fc_in layers (tanh) -> GRUCell stack -> fc_out layers (tanh) -> linear head.
All parameters are float64; gradients come from torch's reverse-mode
autograd, which is what the finite-difference oracles in the test-suite
check against.

Parameters are exposed flat (values, grads, named layout) so checkpoints
and gradient checks can treat a network as a single vector.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

DTYPE = torch.float64


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture description; adjacent dimensions must line up."""

    input_dim: int
    fc_in: tuple = ()
    gru_layers: tuple = ()
    fc_out: tuple = ()
    output_dim: int = 1
    activation: str = "tanh"

    def hidden_sizes(self) -> tuple:
        return tuple(self.gru_layers)

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "fc_in": list(self.fc_in),
                "gru_layers": list(self.gru_layers),
                "fc_out": list(self.fc_out), "output_dim": self.output_dim,
                "activation": self.activation}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(input_dim=int(d["input_dim"]), fc_in=tuple(d["fc_in"]),
                   gru_layers=tuple(d["gru_layers"]),
                   fc_out=tuple(d["fc_out"]), output_dim=int(d["output_dim"]),
                   activation=d.get("activation", "tanh"))


_ACTIVATIONS = {"tanh": torch.tanh, "relu": torch.relu}


class GruNetwork(nn.Module):
    """fc_in -> GRU stack -> fc_out -> linear head, stepped one input at a time."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        if spec.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {spec.activation!r}")
        self.spec = spec
        self.act = _ACTIVATIONS[spec.activation]

        dim = spec.input_dim
        self.fc_in = nn.ModuleList()
        for width in spec.fc_in:
            self.fc_in.append(nn.Linear(dim, width, dtype=DTYPE))
            dim = width
        self.cells = nn.ModuleList()
        for width in spec.gru_layers:
            self.cells.append(nn.GRUCell(dim, width, dtype=DTYPE))
            dim = width
        self.fc_out = nn.ModuleList()
        for width in spec.fc_out:
            self.fc_out.append(nn.Linear(dim, width, dtype=DTYPE))
            dim = width
        self.head = nn.Linear(dim, spec.output_dim, dtype=DTYPE)

    def initial_hidden(self, batch: int) -> list:
        return [torch.zeros(batch, c.hidden_size, dtype=DTYPE)
                for c in self.cells]

    def step(self, x: torch.Tensor, hidden: list):
        """One recurrent step on a (batch, input_dim) tensor."""
        for layer in self.fc_in:
            x = self.act(layer(x))
        new_hidden = []
        for cell, h in zip(self.cells, hidden):
            x = cell(x, h)
            new_hidden.append(x)
        for layer in self.fc_out:
            x = self.act(layer(x))
        return self.head(x), new_hidden


def gru_step(cell: nn.GRUCell, x: torch.Tensor, h: torch.Tensor) -> torch.Tensor:
    """Single GRU cell update; gradients flow through autograd."""
    return cell(x, h)


def init_parameters(net: GruNetwork, seed: int) -> GruNetwork:
    """Seeded in-place initialization.

    Weights are uniform in +/- sqrt(1/fan_in); biases start at zero except
    the GRU update-gate input bias, which starts at +1 so hidden states
    evolve slowly early in training.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in net.named_parameters():
            if "weight" in name:
                bound = math.sqrt(1.0 / p.shape[-1])
                p.uniform_(-bound, bound, generator=gen)
            else:
                p.zero_()
        for cell in net.cells:
            h = cell.hidden_size
            # torch gate order is (reset, update, new); bias the update gate.
            cell.bias_ih[h:2 * h] += 1.0
    return net


def build_network(spec: NetworkSpec, seed: int) -> GruNetwork:
    return init_parameters(GruNetwork(spec), seed)


# ---------------------------------------------------------------------------
# Flat parameter views.
# ---------------------------------------------------------------------------

def parameter_layout(module: nn.Module) -> list:
    """[(name, offset, shape)] covering every parameter exactly once."""
    layout, offset = [], 0
    for name, p in module.named_parameters():
        layout.append((name, offset, tuple(p.shape)))
        offset += p.numel()
    return layout


def parameter_count(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def get_flat_params(module: nn.Module) -> torch.Tensor:
    return torch.cat([p.detach().reshape(-1) for p in module.parameters()])


def set_flat_params(module: nn.Module, flat: torch.Tensor) -> None:
    offset = 0
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(flat[offset:offset + p.numel()].reshape(p.shape))
            offset += p.numel()
    if offset != flat.numel():
        raise ValueError(f"flat vector length {flat.numel()} != {offset}")


def get_flat_grads(module: nn.Module) -> torch.Tensor:
    chunks = []
    for p in module.parameters():
        chunks.append(torch.zeros(p.numel(), dtype=DTYPE) if p.grad is None
                      else p.grad.detach().reshape(-1))
    return torch.cat(chunks)


# ---------------------------------------------------------------------------
# Adam optimizer state, kept explicit so checkpoints can round-trip it.
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Standard Adam with bias correction over a flat parameter vector."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: torch.Tensor = field(default=None)
    v: torch.Tensor = field(default=None)

    def ensure_buffers(self, size: int) -> None:
        if self.m is None:
            self.m = torch.zeros(size, dtype=DTYPE)
            self.v = torch.zeros(size, dtype=DTYPE)


def adam_step(module: nn.Module, adam: AdamState) -> None:
    """Apply one Adam update from the accumulated grads, then zero them."""
    params = get_flat_params(module)
    grads = get_flat_grads(module)
    adam.ensure_buffers(params.numel())
    adam.t += 1
    adam.m = adam.beta1 * adam.m + (1.0 - adam.beta1) * grads
    adam.v = adam.beta2 * adam.v + (1.0 - adam.beta2) * grads * grads
    m_hat = adam.m / (1.0 - adam.beta1 ** adam.t)
    v_hat = adam.v / (1.0 - adam.beta2 ** adam.t)
    set_flat_params(module, params - adam.lr * m_hat / (torch.sqrt(v_hat) + adam.epsilon))
    module.zero_grad(set_to_none=True)


def clip_grad_norm(module: nn.Module, max_norm) -> float:
    """Global-norm gradient clipping; no-op when max_norm is None."""
    if max_norm is None:
        grads = get_flat_grads(module)
        return float(torch.linalg.vector_norm(grads))
    return float(torch.nn.utils.clip_grad_norm_(module.parameters(), max_norm))
