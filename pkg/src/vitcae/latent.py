"""Latent hierarchy: posteriors, conditional prior, patch estimator and the loss.

The global (class-token) latent has dimension ``d_global``; each of the
``n`` patch latents has dimension ``d_local``. Patch tensors are laid out
``(B, n, d_local)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .backbone import MLP
from .errors import ConfigError, ContractError, DimensionError, NumericDomainError
from .numerics import Tensor

LOG_SIGMA_MIN = -8.0
LOG_SIGMA_MAX = 4.0


@dataclass
class LatentBundle:
    mu_cls: Tensor
    log_sigma_cls: Tensor
    mu_pt: Tensor
    log_sigma_pt: Tensor
    z_cls_hat: Tensor
    z_pt_hat: Tensor
    prior_mu_pt: Tensor
    prior_log_sigma_pt: Tensor
    z_pt_tilde: Tensor


@dataclass(frozen=True)
class LossWeights:
    lambda_l1: float = 0.1
    lambda_l2: float = 0.9
    lambda_cls: float = 1.0
    lambda_pt: float = 1.0
    lambda_pt_disc: float = 0.1
    alpha_mix: float = 0.9999
    warmup_epochs: int = 5

    def __post_init__(self):
        for name in ("lambda_l1", "lambda_l2", "lambda_cls", "lambda_pt", "lambda_pt_disc"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if not 0.0 <= self.alpha_mix <= 1.0:
            raise ConfigError("alpha_mix must lie in [0, 1]")
        if self.warmup_epochs < 0:
            raise ConfigError("warmup_epochs must be non-negative")


def clamp_log_sigma(log_sigma) -> Tensor:
    return nx.clip(log_sigma, LOG_SIGMA_MIN, LOG_SIGMA_MAX)


def reparameterize(mu, log_sigma, noise) -> Tensor:
    """``mu + exp(log_sigma) * noise`` with caller-supplied standard-normal noise."""
    mu, log_sigma = nx.as_tensor(mu), nx.as_tensor(log_sigma)
    noise = np.asarray(noise.data if isinstance(noise, Tensor) else noise, dtype=mu.dtype)
    if not (mu.shape == log_sigma.shape == noise.shape):
        raise DimensionError(f"reparameterize: shapes {mu.shape}, {log_sigma.shape}, {noise.shape} differ")
    return mu + nx.exp(clamp_log_sigma(log_sigma)) * noise


def kl_diag_gaussians(mu_q, log_sigma_q, mu_p, log_sigma_p, axis=None) -> Tensor:
    """Closed-form ``KL(q || p)`` between diagonal Gaussians, summed over ``axis`` (all by default)."""
    mu_q, log_sigma_q, mu_p, log_sigma_p = (nx.as_tensor(t) for t in (mu_q, log_sigma_q, mu_p, log_sigma_p))
    if not (mu_q.shape == log_sigma_q.shape == mu_p.shape == log_sigma_p.shape):
        raise DimensionError("kl_diag_gaussians: parameter shapes differ")
    var_ratio = nx.exp(2.0 * (log_sigma_q - log_sigma_p))
    diff = mu_q - mu_p
    mahal = diff * diff * nx.exp(-2.0 * log_sigma_p)
    per_dim = 0.5 * (var_ratio + mahal - 1.0) - (log_sigma_q - log_sigma_p)
    return per_dim.sum(axis=axis)


def imq_kernel(x, y, C: float = 1.0) -> float:
    """Inverse multiquadratic kernel ``C / (C + ||x - y||^2)`` for two vectors."""
    if C <= 0:
        raise NumericDomainError(f"IMQ kernel constant must be positive, got {C}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise DimensionError(f"imq_kernel: shapes {x.shape} and {y.shape} differ")
    d2 = float(np.sum((x - y) ** 2))
    return C / (C + d2)


def _pairwise_sq_dists(X: Tensor, Y: Tensor) -> Tensor:
    xx = (X * X).sum(axis=1, keepdims=True)
    yy = (Y * Y).sum(axis=1, keepdims=True)
    d2 = xx + yy.transpose() - 2.0 * (X @ Y.transpose())
    return nx.relu(d2)


def imq_gram(X, Y, C: float = 1.0) -> Tensor:
    if C <= 0:
        raise NumericDomainError(f"IMQ kernel constant must be positive, got {C}")
    return C / (C + _pairwise_sq_dists(nx.as_tensor(X), nx.as_tensor(Y)))


def _off_diagonal(m: int, dtype) -> np.ndarray:
    return 1.0 - np.eye(m, dtype=dtype)


def mmd_squared(X, Y, C: float = 1.0) -> Tensor:
    """Unbiased squared MMD with the IMQ kernel; may be slightly negative."""
    X, Y = nx.as_tensor(X), nx.as_tensor(Y)
    m, k = X.shape[0], Y.shape[0]
    if m < 2 or k < 2:
        raise ContractError(f"mmd_squared needs at least 2 samples per side, got {m} and {k}")
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise DimensionError(f"mmd_squared: sample shapes {X.shape} and {Y.shape} incompatible")
    kxx = (imq_gram(X, X, C) * _off_diagonal(m, X.dtype)).sum() / (m * (m - 1))
    kyy = (imq_gram(Y, Y, C) * _off_diagonal(k, Y.dtype)).sum() / (k * (k - 1))
    kxy = imq_gram(X, Y, C).sum() / (m * k)
    return kxx + kyy - 2.0 * kxy


class NeuralPrior(MLP):
    """``z_cls -> (prior_mu_pt, prior_log_sigma_pt)``, each ``(n, d_local)``."""

    @classmethod
    def build(cls, rng, d_global: int, hidden: int, n_patches: int, d_local: int, dtype) -> NeuralPrior:
        base = MLP.init(rng, [d_global, hidden, 2 * n_patches * d_local], dtype)
        return cls(base.weights, base.biases)

    def __call__(self, z_cls):
        z_cls = nx.as_tensor(z_cls)
        if z_cls.shape[-1] != self.weights[0].shape[0]:
            raise DimensionError(f"neural prior expects latent dim {self.weights[0].shape[0]}, got {z_cls.shape[-1]}")
        out = super().__call__(z_cls)
        half = out.shape[-1] // 2
        mu = out[..., :half]
        log_sigma = clamp_log_sigma(out[..., half:])
        return mu, log_sigma

    def split(self, flat: Tensor, n_patches: int) -> Tensor:
        return flat.reshape(flat.shape[:-1] + (n_patches, flat.shape[-1] // n_patches))


def neural_prior(z_cls, prior: NeuralPrior, n_patches: int) -> tuple[Tensor, Tensor]:
    mu, log_sigma = prior(z_cls)
    return prior.split(mu, n_patches), prior.split(log_sigma, n_patches)


class PatchEstimator(MLP):
    """Deterministic ``z_cls -> Z_PT`` map (``n_layers`` linear layers of width ``hidden``)."""

    @classmethod
    def build(cls, rng, d_global: int, hidden: int, n_layers: int, n_patches: int, d_local: int, dtype) -> PatchEstimator:
        if n_layers < 1:
            raise ConfigError("patch estimator needs at least one layer")
        sizes = [d_global] + [hidden] * (n_layers - 1) + [n_patches * d_local]
        base = MLP.init(rng, sizes, dtype)
        return cls(base.weights, base.biases)


def patch_estimator(z_cls, estimator: PatchEstimator, n_patches: int) -> Tensor:
    z_cls = nx.as_tensor(z_cls)
    if z_cls.shape[-1] != estimator.weights[0].shape[0]:
        raise DimensionError(f"patch estimator expects latent dim {estimator.weights[0].shape[0]}, got {z_cls.shape[-1]}")
    flat = estimator(z_cls)
    return flat.reshape(flat.shape[:-1] + (n_patches, flat.shape[-1] // n_patches))


LOSS_PARTS = ("rec_l1", "rec_l2", "kl_cls", "kl_pt", "w_cls", "w_pt", "pt_disc")


def total_loss(t: int, parts: dict, w: LossWeights):
    """Curriculum objective: pure KL through epoch ``warmup_epochs``, KL/MMD mixture after.

    ``parts`` maps each name in :data:`LOSS_PARTS` to a scalar (float or
    Tensor). ``pt_disc`` is the unweighted squared patch discrepancy.
    """
    if t < 0:
        raise ContractError(f"epoch must be non-negative, got {t}")
    missing = [k for k in LOSS_PARTS if k not in parts]
    if missing:
        raise ContractError(f"total_loss: missing parts {missing}")
    rec = w.lambda_l1 * parts["rec_l1"] + w.lambda_l2 * parts["rec_l2"]
    l_pt = w.lambda_pt_disc * parts["pt_disc"]
    if t <= w.warmup_epochs:
        reg_cls = parts["kl_cls"]
        reg_pt = parts["kl_pt"]
    else:
        a = w.alpha_mix
        reg_cls = a * parts["w_cls"] + (1.0 - a) * parts["kl_cls"]
        reg_pt = a * parts["w_pt"] + (1.0 - a) * parts["kl_pt"]
    return rec + w.lambda_cls * reg_cls + w.lambda_pt * reg_pt + l_pt
