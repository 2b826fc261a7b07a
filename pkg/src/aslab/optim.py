"""Adam optimizer over named parameter lists."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    """Adam with bias correction; step() consumes and zeroes gradients."""

    def __init__(self, params, lr: float = 2e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.grad = None

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def state_tensors(self, prefix: str) -> dict:
        """Flat name->array view of the state, for checkpointing."""
        out = {f"{prefix}/step": np.array([float(self.t)])}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"{prefix}/m{i}"] = m
            out[f"{prefix}/v{i}"] = v
        return out

    def load_state_tensors(self, prefix: str, tensors: dict):
        self.t = int(tensors[f"{prefix}/step"][0])
        for i in range(len(self.params)):
            self.m[i] = tensors[f"{prefix}/m{i}"].reshape(self.m[i].shape).copy()
            self.v[i] = tensors[f"{prefix}/v{i}"].reshape(self.v[i].shape).copy()


def optimizer_step(opt: Adam):
    """Apply one update using the gradients currently held by the parameters."""
    opt.step()
