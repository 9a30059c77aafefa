"""Adam with separate learning rates for the embedding table and the network."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from crossadapt.errors import ShapeError
from crossadapt.model.core import EMBEDDING, GradientSet, PredictionModel


@dataclass
class AdamState:
    """Moment accumulators keyed by parameter block.

    ``step`` counts optimizer calls; ``block_steps`` counts updates per block so
    a block that starts training late (an unfrozen embedding table) gets its
    own bias correction.
    """

    lr_embedding: float = 0.1
    lr_net: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    block_steps: dict[str, int] = field(default_factory=dict)
    m: dict[str, npt.NDArray[np.float64]] = field(default_factory=dict)
    v: dict[str, npt.NDArray[np.float64]] = field(default_factory=dict)

    def lr_for(self, name: str) -> float:
        return self.lr_embedding if name == EMBEDDING else self.lr_net


def adam_step(model: PredictionModel, grads: GradientSet, state: AdamState) -> None:
    """Apply one Adam update in place; frozen embedding tables are never touched."""
    params = model.parameters()
    for name, g in grads.items():
        if name not in params:
            raise ShapeError(f"gradient block {name!r} has no matching parameter")
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient {name!r} shape {g.shape} != {params[name].shape}")
    state.step += 1
    for name, g in grads.items():
        if name == EMBEDDING and model.embedding.frozen:
            continue
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        t = state.block_steps.get(name, 0) + 1
        state.block_steps[name] = t
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        p -= state.lr_for(name) * m_hat / (np.sqrt(v_hat) + state.eps)
    model.version += 1
