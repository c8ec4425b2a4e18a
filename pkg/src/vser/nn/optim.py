"""Bias-corrected Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import torch

from vser.errors import ShapeError


@dataclass
class AdamState:
    step: int = 0
    first_moment: list[torch.Tensor] = field(default_factory=list)
    second_moment: list[torch.Tensor] = field(default_factory=list)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@torch.no_grad()
def adam_step(
    params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor | None], state: AdamState, lr: float
) -> AdamState:
    """Update ``params`` in place and advance ``state`` by one step.

    A ``None`` gradient leaves its parameter and moments untouched.
    """
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    if not state.first_moment:
        state.first_moment = [torch.zeros_like(p) for p in params]
        state.second_moment = [torch.zeros_like(p) for p in params]
    if len(state.first_moment) != len(params):
        raise ShapeError("Adam state was built for a different parameter list")

    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if g is None:
            continue
        if g.shape != p.shape or m.shape != p.shape:
            raise ShapeError(f"gradient {tuple(g.shape)} does not match parameter {tuple(p.shape)}")
        m.mul_(state.beta1).add_(g, alpha=1.0 - state.beta1)
        v.mul_(state.beta2).addcmul_(g, g, value=1.0 - state.beta2)
        p.sub_(lr * (m / bc1) / (torch.sqrt(v / bc2) + state.eps))
    return state


class Adam:
    """Stateful convenience wrapper over :func:`adam_step`."""

    def __init__(self, params: Iterable[torch.Tensor], betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.state = AdamState(beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self, lr: float) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state, lr)
