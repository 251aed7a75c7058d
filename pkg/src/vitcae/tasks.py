"""Qualitative tasks on a trained model: reconstruct, inpaint, generate, interpolate.

Every task decodes one image at a time, so an output never depends on which
other images shared its call.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

from .errors import ContractError, DimensionError
from .model import ViTCAE
from .trainer import Trainer


def load_model(checkpoint) -> ViTCAE:
    return Trainer.from_checkpoint(checkpoint).model


def _images(model: ViTCAE, images) -> np.ndarray:
    x = np.asarray(images, dtype=model.dtype)
    if x.ndim == 3:
        x = x[None]
    expected = (model.pc.channels, model.pc.image_h, model.pc.image_w)
    if x.ndim != 4 or x.shape[1:] != expected:
        raise DimensionError(f"images of shape {x.shape} do not match (B, {expected})")
    return x


@contextmanager
def _no_tape(model: ViTCAE):
    params = model.parameters()
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


def _posterior_mean(model: ViTCAE, image: np.ndarray, mask=None) -> np.ndarray:
    (mu_cls, _, _, _), _ = model.encode(image[None], mask=mask)
    return mu_cls.data


def _decode(model: ViTCAE, z: np.ndarray) -> np.ndarray:
    return np.clip(model.decode(z).data[0], 0.0, 1.0)


def reconstruct(model: ViTCAE, images) -> np.ndarray:
    """Decode the posterior mean of every image; outputs in [0, 1]."""
    x = _images(model, images)
    with _no_tape(model):
        return np.stack([_decode(model, _posterior_mean(model, img)) for img in x])


def inpaint(model: ViTCAE, images, mask) -> np.ndarray:
    """Reconstruct with the flagged patches replaced by the mask embedding.

    ``mask`` is a boolean ``(gh, gw)`` patch grid shared by the batch, or a
    ``(B, gh, gw)`` stack. True means hidden.
    """
    x = _images(model, images)
    gh, gw = model.pc.grid
    m = np.asarray(mask, dtype=bool)
    if m.shape == (gh, gw):
        m = np.broadcast_to(m, (len(x), gh, gw))
    if m.shape != (len(x), gh, gw):
        raise DimensionError(f"mask of shape {np.asarray(mask).shape} does not match patch grid ({gh}, {gw})")
    with _no_tape(model):
        out = []
        for img, mi in zip(x, m):
            z = _posterior_mean(model, img, mask=mi.reshape(1, gh * gw))
            out.append(_decode(model, z))
    return np.stack(out)


def generate(model: ViTCAE, count: int, seed: int) -> np.ndarray:
    """Decode ``count`` draws of the global latent from N(0, I)."""
    if count < 0:
        raise ContractError(f"count must be non-negative, got {count}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((count, model.cfg.d_global)).astype(model.dtype)
    with _no_tape(model):
        frames = [_decode(model, zi[None]) for zi in z]
    shape = (0, model.pc.channels, model.pc.image_h, model.pc.image_w)
    return np.stack(frames) if frames else np.zeros(shape, dtype=model.dtype)


def interpolate(model: ViTCAE, image_a, image_b, steps: int) -> np.ndarray:
    """Decode ``(1 - lam) z_a + lam z_b`` for ``steps`` evenly spaced ``lam`` in [0, 1]."""
    if steps < 2:
        raise ContractError(f"interpolate needs steps >= 2, got {steps}")
    a = _images(model, image_a)
    b = _images(model, image_b)
    if len(a) != 1 or len(b) != 1:
        raise DimensionError("interpolate takes exactly one image per endpoint")
    with _no_tape(model):
        za = _posterior_mean(model, a[0])
        zb = _posterior_mean(model, b[0])
        frames = []
        for lam in np.linspace(0.0, 1.0, steps):
            frames.append(_decode(model, (1.0 - lam) * za + lam * zb))
    return np.stack(frames)
