"""AdamW, global-norm gradient clipping and plateau learning-rate decay."""

from __future__ import annotations

import math

import numpy as np

from .numerics import Tensor


class AdamW:
    """Adam with decoupled weight decay.

    Only tensors with ``requires_grad`` and a populated ``grad`` are touched,
    so frozen parameters keep their exact bytes. Weight decay skips vectors
    (biases, norm gains, temperatures).
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.steps: dict[str, int] = {}

    def step(self) -> None:
        b1, b2 = self.betas
        for name, p in self.params.items():
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
                self.steps[name] = 0
            self.steps[name] += 1
            t = self.steps[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            m_hat = m / (1 - b1**t)
            v_hat = v / (1 - b2**t)
            if self.weight_decay and p.ndim > 1:
                p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.m:
            out[f"adam_m/{name}"] = self.m[name]
            out[f"adam_v/{name}"] = self.v[name]
        return out

    def state_meta(self) -> dict:
        return {"lr": self.lr, "steps": dict(self.steps)}

    def load_state(self, arrays: dict[str, np.ndarray], meta: dict) -> None:
        self.lr = meta["lr"]
        self.steps = {k: int(v) for k, v in meta["steps"].items()}
        self.m = {k: np.array(arrays[f"adam_m/{k}"]) for k in self.steps}
        self.v = {k: np.array(arrays[f"adam_v/{k}"]) for k in self.steps}


def clip_grad_norm(params, max_norm: float) -> float:
    """Scale gradients in place so their joint L2 norm is at most ``max_norm``."""
    grads = [p.grad for p in params if p.requires_grad and p.grad is not None]
    total = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if total > max_norm and total > 0:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


class ReduceLROnPlateau:
    def __init__(self, optimizer: AdamW, factor: float = 0.5, patience: int = 3,
                 threshold: float = 1e-4, min_lr: float = 1e-6):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = math.inf
        self.bad_epochs = 0

    def step(self, metric: float) -> None:
        if metric < self.best * (1.0 - self.threshold):
            self.best = metric
            self.bad_epochs = 0
            return
        self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.optimizer.lr = max(self.optimizer.lr * self.factor, self.min_lr)
            self.bad_epochs = 0

    def state(self) -> dict:
        return {"best": self.best if math.isfinite(self.best) else None, "bad_epochs": self.bad_epochs}

    def load_state(self, d: dict) -> None:
        self.best = math.inf if d["best"] is None else d["best"]
        self.bad_epochs = d["bad_epochs"]
