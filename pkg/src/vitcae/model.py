"""The class-token-conditioned hierarchical autoencoder.

Training path: encoder -> posterior heads -> sampled ``z_cls_hat``; the
decoder consumes ``z_cls_hat`` together with the estimator's patch tokens
``g(z_cls_hat)``. The patch posterior and the neural prior shape those
tokens through the KL/MMD and patch-discrepancy terms.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nx
from .backbone import (
    MLP,
    DecoderParams,
    EncoderLayer,
    decoder_forward,
    embed_sequence,
    encoder_forward,
    patchify,
)
from .config import TrainConfig
from .errors import DimensionError
from .latent import (
    LatentBundle,
    NeuralPrior,
    PatchEstimator,
    clamp_log_sigma,
    kl_diag_gaussians,
    mmd_squared,
    neural_prior,
    patch_estimator,
    reparameterize,
)
from .numerics import Tensor


class ViTCAE:
    def __init__(self, cfg: TrainConfig, seed: int | None = None):
        self.cfg = cfg
        self.pc = cfg.patch_config()
        dtype = np.dtype(cfg.precision).type
        self.dtype = dtype
        rng = np.random.default_rng(cfg.seed if seed is None else seed)
        pc, d = self.pc, cfg.embed_dim
        bound = np.sqrt(6.0 / (pc.patch_dim + d))
        self.embed = nx.parameter(rng.uniform(-bound, bound, (pc.patch_dim, d)), dtype=dtype)
        self.cls_token = nx.parameter(rng.normal(0.0, 0.02, (1, d)), dtype=dtype)
        self.pos = nx.parameter(rng.normal(0.0, 0.02, (pc.seq_len, d)), dtype=dtype)
        self.mask_token = nx.parameter(rng.normal(0.0, 0.02, (d,)), dtype=dtype)
        self.layers = [EncoderLayer.init(rng, d, pc.n_heads, cfg.ffn_mult, dtype) for _ in range(pc.n_layers)]
        self.enc_ln_g = nx.parameter(np.ones(d), dtype=dtype)
        self.enc_ln_b = nx.parameter(np.zeros(d), dtype=dtype)
        self.cls_head = MLP.init(rng, [d, d, 2 * cfg.d_global], dtype)
        self.patch_head = MLP.init(rng, [d, d, 2 * cfg.d_local], dtype)
        self.prior = NeuralPrior.build(rng, cfg.d_global, d, pc.n_patches, cfg.d_local, dtype)
        self.estimator = PatchEstimator.build(rng, cfg.d_global, cfg.pt_hidden, cfg.pt_layers, pc.n_patches, cfg.d_local, dtype)
        self.decoder = DecoderParams.init(rng, pc, cfg.d_global, cfg.d_local, cfg.dec_layers, cfg.ffn_mult, dtype)
        if not cfg.temperature_schedule:
            for layer in self.layers:
                for t in layer.tau:
                    t.requires_grad = False

    # -- parameters --------------------------------------------------------------
    def named_parameters(self) -> dict[str, Tensor]:
        out = {
            "embed": self.embed,
            "cls_token": self.cls_token,
            "pos": self.pos,
            "mask_token": self.mask_token,
            "enc_ln_g": self.enc_ln_g,
            "enc_ln_b": self.enc_ln_b,
        }
        for i, layer in enumerate(self.layers):
            out.update(layer.named_parameters(f"enc.{i}."))
        out.update(self.cls_head.named_parameters("cls_head."))
        out.update(self.patch_head.named_parameters("patch_head."))
        out.update(self.prior.named_parameters("prior."))
        out.update(self.estimator.named_parameters("estimator."))
        out.update(self.decoder.named_parameters("dec."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def trainable_count(self) -> int:
        return sum(p.size for p in self.parameters() if p.requires_grad)

    def total_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def head_parameters(self, layer: int, head: int) -> list[Tensor]:
        return self.layers[layer].head_parameters(head)

    def taus(self) -> np.ndarray:
        return np.array([[float(t.data[0]) for t in layer.tau] for layer in self.layers])

    def zero_grad(self) -> None:
        nx.zero_grad(self.parameters())

    # -- forward pieces -------------------------------------------------------------
    def _as_batch(self, images) -> Tensor:
        x = np.asarray(images.data if isinstance(images, Tensor) else images, dtype=self.dtype)
        if x.ndim == 3:
            x = x[None]
        expected = (self.pc.channels, self.pc.image_h, self.pc.image_w)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise DimensionError(f"images of shape {x.shape} do not match (B, {expected})")
        return Tensor(x, dtype=self.dtype)

    def encode(self, images, mask=None, collect_attention: bool = False):
        """Posterior parameters ``(mu_cls, log_sigma_cls, mu_pt, log_sigma_pt)`` and the attention record."""
        x = self._as_batch(images)
        patches = patchify(x, self.pc)
        seq = embed_sequence(patches, self.embed, self.cls_token, self.pos,
                             mask=mask, mask_token=self.mask_token if mask is not None else None)
        tokens, record = encoder_forward(seq, self.layers, collect_attention)
        tokens = nx.layer_norm(tokens, self.enc_ln_g, self.enc_ln_b)
        cls_out = self.cls_head(tokens[:, 0, :])
        pt_out = self.patch_head(tokens[:, 1:, :])
        d2, d1 = self.cfg.d_global, self.cfg.d_local
        mu_cls, ls_cls = cls_out[:, :d2], clamp_log_sigma(cls_out[:, d2:])
        mu_pt, ls_pt = pt_out[..., :d1], clamp_log_sigma(pt_out[..., d1:])
        return (mu_cls, ls_cls, mu_pt, ls_pt), record

    def patch_tokens(self, z_cls) -> Tensor:
        return patch_estimator(z_cls, self.estimator, self.pc.n_patches)

    def decode(self, z_cls, patch_tokens=None) -> Tensor:
        z_cls = nx.as_tensor(z_cls, dtype=self.dtype)
        if patch_tokens is None:
            patch_tokens = self.patch_tokens(z_cls)
        return decoder_forward(z_cls, patch_tokens, self.decoder, self.pc)

    def attention_record(self, images) -> list[list[np.ndarray]]:
        """Per-layer, per-head attention arrays ``(B, N, N)`` without building a graph."""
        params = self.parameters()
        flags = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad = False
        try:
            _, record = self.encode(images, collect_attention=True)
        finally:
            for p, f in zip(params, flags):
                p.requires_grad = f
        return record

    def no_grad_reconstruct(self, images, mask=None) -> np.ndarray:
        params = self.parameters()
        flags = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad = False
        try:
            (mu_cls, _, _, _), _ = self.encode(images, mask=mask)
            return self.decode(mu_cls).data
        finally:
            for p, f in zip(params, flags):
                p.requires_grad = f

    # -- training forward ---------------------------------------------------------------
    def forward_train(self, images, rng: np.random.Generator, mask=None) -> tuple[Tensor, LatentBundle]:
        (mu_cls, ls_cls, mu_pt, ls_pt), _ = self.encode(images, mask=mask)
        z_cls = reparameterize(mu_cls, ls_cls, rng.standard_normal(mu_cls.shape))
        z_pt = reparameterize(mu_pt, ls_pt, rng.standard_normal(mu_pt.shape))
        prior_mu, prior_ls = neural_prior(z_cls, self.prior, self.pc.n_patches)
        z_tilde = self.patch_tokens(z_cls)
        x_rec = self.decode(z_cls, z_tilde)
        bundle = LatentBundle(mu_cls, ls_cls, mu_pt, ls_pt, z_cls, z_pt, prior_mu, prior_ls, z_tilde)
        return x_rec, bundle

    def loss_parts(self, images, x_rec: Tensor, b: LatentBundle, rng: np.random.Generator,
                   with_mmd: bool = True) -> dict[str, Tensor | float]:
        """Per-batch loss components (per-image sums, averaged over the batch)."""
        x = self._as_batch(images)
        batch = x.shape[0]
        diff = x_rec - x
        zero = np.zeros_like(b.mu_cls.data)
        parts: dict[str, Tensor | float] = {
            "rec_l1": nx.tabs(diff).sum() * (1.0 / batch),
            "rec_l2": (diff * diff).sum() * (1.0 / batch),
            "kl_cls": kl_diag_gaussians(b.mu_cls, b.log_sigma_cls, zero, zero) * (1.0 / batch),
            "kl_pt": kl_diag_gaussians(b.mu_pt, b.log_sigma_pt, b.prior_mu_pt, b.prior_log_sigma_pt) * (1.0 / batch),
        }
        gap = b.z_pt_hat - b.z_pt_tilde
        parts["pt_disc"] = (gap * gap).sum() * (1.0 / batch)
        if with_mmd:
            c = self.cfg.mmd_c
            d1 = self.cfg.d_local
            ref = rng.standard_normal(b.z_cls_hat.shape)
            parts["w_cls"] = nx.relu(mmd_squared(b.z_cls_hat, ref, c))
            prior_draw = reparameterize(b.prior_mu_pt, b.prior_log_sigma_pt, rng.standard_normal(b.prior_mu_pt.shape))
            parts["w_pt"] = nx.relu(mmd_squared(b.z_pt_hat.reshape((-1, d1)), prior_draw.reshape((-1, d1)), c))
        else:
            parts["w_cls"] = 0.0
            parts["w_pt"] = 0.0
        return parts
