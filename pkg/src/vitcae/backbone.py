"""Patch embedding, tempered multi-head attention, and the encoder/decoder stacks.

All functions accept an optional leading batch axis: an image may be
``(C, H, W)`` or ``(B, C, H, W)``, a token sequence ``(N, D)`` or
``(B, N, D)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError, DimensionError, NumericDomainError
from .numerics import Tensor


@dataclass(frozen=True)
class PatchConfig:
    image_h: int
    image_w: int
    channels: int
    patch_size: int
    embed_dim: int
    n_heads: int
    n_layers: int

    def __post_init__(self):
        for name in ("image_h", "image_w", "channels", "patch_size", "embed_dim", "n_heads"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.n_layers < 0:
            raise ConfigError("n_layers must be non-negative")
        p = self.patch_size
        if self.image_h % p or self.image_w % p:
            raise ConfigError(
                f"patch_size={p} must divide image_h={self.image_h} and image_w={self.image_w}"
            )
        if self.embed_dim % self.n_heads:
            raise ConfigError(f"n_heads={self.n_heads} must divide embed_dim={self.embed_dim}")

    @property
    def d_k(self) -> int:
        return self.embed_dim // self.n_heads

    @property
    def grid(self) -> tuple[int, int]:
        return self.image_h // self.patch_size, self.image_w // self.patch_size

    @property
    def n_patches(self) -> int:
        return (self.image_h * self.image_w) // (self.patch_size**2)

    @property
    def seq_len(self) -> int:
        return self.n_patches + 1

    @property
    def patch_dim(self) -> int:
        return self.patch_size**2 * self.channels


@dataclass
class TokenSequence:
    """Embedded tokens; row 0 is the class token."""

    tokens: Tensor
    positional: Tensor

    def __post_init__(self):
        if self.tokens.shape[-2] != self.positional.shape[-2]:
            raise DimensionError("token and positional sequence lengths differ")


# -- patches ---------------------------------------------------------------------

def patchify(image, cfg: PatchConfig) -> Tensor:
    """Split ``(..., C, H, W)`` into raster-ordered patches ``(..., n, C*P*P)``."""
    image = nx.as_tensor(image)
    c, h, w = image.shape[-3:]
    if (c, h, w) != (cfg.channels, cfg.image_h, cfg.image_w):
        raise DimensionError(f"image shape {(c, h, w)} does not match config {(cfg.channels, cfg.image_h, cfg.image_w)}")
    p = cfg.patch_size
    lead = image.shape[:-3]
    gh, gw = h // p, w // p
    k = len(lead)
    x = image.reshape(lead + (c, gh, p, gw, p))
    # (..., gh, gw, C, p, p)
    axes = tuple(range(k)) + (k + 1, k + 3, k, k + 2, k + 4)
    return x.transpose(axes).reshape(lead + (gh * gw, c * p * p))


def unpatchify(patches, cfg: PatchConfig) -> Tensor:
    """Inverse of :func:`patchify`."""
    patches = nx.as_tensor(patches)
    n, pd = patches.shape[-2:]
    if (n, pd) != (cfg.n_patches, cfg.patch_dim):
        raise DimensionError(f"patch tensor {(n, pd)} does not match config {(cfg.n_patches, cfg.patch_dim)}")
    p, c = cfg.patch_size, cfg.channels
    gh, gw = cfg.grid
    lead = patches.shape[:-2]
    k = len(lead)
    x = patches.reshape(lead + (gh, gw, c, p, p))
    axes = tuple(range(k)) + (k + 2, k, k + 3, k + 1, k + 4)
    return x.transpose(axes).reshape(lead + (c, gh * p, gw * p))


def embed_sequence(patches, E, cls, pos, mask=None, mask_token=None) -> TokenSequence:
    """Project patches, prepend the class token, add positions.

    ``mask`` (``(..., n)`` booleans) replaces the projected embedding of the
    flagged patches with ``mask_token`` before the positional term is added.
    """
    patches, E, cls, pos = (nx.as_tensor(t) for t in (patches, E, cls, pos))
    n = patches.shape[-2]
    d = E.shape[-1]
    if patches.shape[-1] != E.shape[0]:
        raise DimensionError(f"patches {patches.shape} incompatible with embedding {E.shape}")
    if cls.shape != (1, d) or pos.shape != (n + 1, d):
        raise DimensionError(f"class token {cls.shape} / positions {pos.shape} inconsistent with n={n}, D={d}")
    emb = patches @ E
    if mask is not None:
        if mask_token is None:
            raise ContractError("mask given without mask_token")
        m = np.asarray(mask, dtype=bool)
        if m.shape != patches.shape[:-1]:
            raise DimensionError(f"mask shape {m.shape} does not match patch grid {patches.shape[:-1]}")
        mf = m[..., None].astype(emb.dtype)
        emb = emb * (1.0 - mf) + nx.as_tensor(mask_token) * mf
    lead = patches.shape[:-2]
    if lead:
        cls_b = cls.reshape((1,) * len(lead) + (1, d)) + np.zeros(lead + (1, d), dtype=emb.dtype)
    else:
        cls_b = cls
    tokens = nx.concat([cls_b, emb], axis=-2) + pos
    return TokenSequence(tokens=tokens, positional=pos)


# -- attention -------------------------------------------------------------------

def _check_tau(tau) -> np.ndarray:
    t = tau.data if isinstance(tau, Tensor) else np.asarray(tau, dtype=float)
    if not np.all(np.isfinite(t)) or np.any(t <= 0):
        raise NumericDomainError(f"attention temperature must be positive and finite, got {t}")
    return t


def tempered_attention(Q, K, V, tau) -> tuple[Tensor, Tensor]:
    """``A = softmax(Q K^T / (tau sqrt(d_k)))``; returns ``(A V, A)``.

    ``tau`` may be a scalar or a tensor broadcastable against the logits
    (e.g. shape ``(1, h, 1, 1)`` for one temperature per head).
    """
    Q, K, V = nx.as_tensor(Q), nx.as_tensor(K), nx.as_tensor(V)
    _check_tau(tau)
    d_k = Q.shape[-1]
    logits = (Q @ K.swapaxes(-1, -2)) / (nx.as_tensor(tau) * math.sqrt(d_k))
    A = nx.softmax_rows(logits)
    return A @ V, A


def _split_heads(x: Tensor, h: int) -> Tensor:
    *lead, n, d = x.shape
    k = len(lead)
    axes = tuple(range(k)) + (k + 1, k, k + 2)
    return x.reshape(tuple(lead) + (n, h, d // h)).transpose(axes)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dk = x.shape
    k = len(lead)
    axes = tuple(range(k)) + (k + 1, k, k + 2)
    return x.transpose(axes).reshape(tuple(lead) + (n, h * dk))


def multihead_attention(xq, xkv, wq, wk, wv, w_out, b_out, n_heads: int, taus=None):
    """Multi-head attention with stacked ``D x D`` projections.

    Queries come from ``xq``; keys and values from ``xkv`` (pass the same
    tensor for self-attention). Head ``i`` owns columns ``i*d_k:(i+1)*d_k`` of
    each projection. ``taus`` is a length-``h`` tensor or ``None`` (all ones).
    """
    Q = _split_heads(nx.as_tensor(xq) @ wq, n_heads)
    K = _split_heads(nx.as_tensor(xkv) @ wk, n_heads)
    V = _split_heads(nx.as_tensor(xkv) @ wv, n_heads)
    tau = 1.0 if taus is None else nx.reshape(taus, (n_heads, 1, 1))
    heads, A = tempered_attention(Q, K, V, tau)
    out = _merge_heads(heads) @ w_out
    if b_out is not None:
        out = out + b_out
    return out, A


def mhsa_forward(x, wq: list, wk: list, wv: list, w_out, taus: list, b_out=None):
    """Self-attention with per-head projection matrices and temperatures.

    Returns the projected output and a list of ``h`` attention matrices.
    """
    h = len(wq)
    if not (len(wk) == len(wv) == len(taus) == h) or h == 0:
        raise DimensionError("mhsa_forward: per-head weight and temperature lists must have equal, non-zero length")
    x = nx.as_tensor(x)
    d = x.shape[-1]
    if sum(w.shape[1] for w in wq) != d:
        raise DimensionError(f"mhsa_forward: heads x d_k != D={d}")
    stack_w = lambda ws: nx.concat(ws, axis=1) if h > 1 else nx.as_tensor(ws[0])  # noqa: E731
    tau_vec = nx.concat([nx.reshape(nx.as_tensor(t), (1,)) for t in taus], axis=0)
    out, A = multihead_attention(x, x, stack_w(wq), stack_w(wk), stack_w(wv), w_out, b_out, h, tau_vec)
    return out, [A[..., i, :, :] for i in range(h)]


# -- parameter containers ---------------------------------------------------------

def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return nx.parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out)), dtype=dtype)


def _zeros(shape, dtype) -> Tensor:
    return nx.parameter(np.zeros(shape), dtype=dtype)


def _ones(shape, dtype) -> Tensor:
    return nx.parameter(np.ones(shape), dtype=dtype)


class ParamGroup:
    """Mixin: enumerate tensor fields (and lists of tensors) by dotted name."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            key = f"{prefix}{f.name}"
            if isinstance(value, Tensor):
                out[key] = value
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Tensor):
                        out[f"{key}.{i}"] = item
                    elif isinstance(item, ParamGroup):
                        out.update(item.named_parameters(f"{key}.{i}."))
            elif isinstance(value, ParamGroup):
                out.update(value.named_parameters(f"{key}."))
        return out


@dataclass
class MLP(ParamGroup):
    weights: list[Tensor] = field(default_factory=list)
    biases: list[Tensor] = field(default_factory=list)

    @classmethod
    def init(cls, rng, sizes: list[int], dtype) -> MLP:
        ws = [_glorot(rng, a, b, dtype) for a, b in zip(sizes[:-1], sizes[1:])]
        bs = [_zeros((b,), dtype) for b in sizes[1:]]
        return cls(ws, bs)

    def __call__(self, x):
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if i < n - 1:
                x = nx.gelu(x)
        return x


@dataclass
class EncoderLayer(ParamGroup):
    wq: list[Tensor]
    wk: list[Tensor]
    wv: list[Tensor]
    tau: list[Tensor]
    w_out: Tensor
    b_out: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    ffn: MLP

    @classmethod
    def init(cls, rng, d: int, n_heads: int, ffn_mult: int, dtype) -> EncoderLayer:
        dk = d // n_heads
        # one D x D draw per projection, split into head slices
        def per_head():
            w = _glorot(rng, d, d, dtype).data
            return [nx.parameter(w[:, i * dk:(i + 1) * dk], dtype=dtype) for i in range(n_heads)]

        return cls(
            wq=per_head(), wk=per_head(), wv=per_head(),
            tau=[_ones((1,), dtype) for _ in range(n_heads)],
            w_out=_glorot(rng, d, d, dtype), b_out=_zeros((d,), dtype),
            ln1_g=_ones((d,), dtype), ln1_b=_zeros((d,), dtype),
            ln2_g=_ones((d,), dtype), ln2_b=_zeros((d,), dtype),
            ffn=MLP.init(rng, [d, ffn_mult * d, d], dtype),
        )

    def head_parameters(self, head: int) -> list[Tensor]:
        return [self.wq[head], self.wk[head], self.wv[head], self.tau[head]]


def encoder_layer_forward(x, layer: EncoderLayer, eps: float = 1e-5):
    h_in = nx.layer_norm(x, layer.ln1_g, layer.ln1_b, eps)
    attn_out, attn = mhsa_forward(h_in, layer.wq, layer.wk, layer.wv, layer.w_out, layer.tau, layer.b_out)
    x = x + attn_out
    x = x + layer.ffn(nx.layer_norm(x, layer.ln2_g, layer.ln2_b, eps))
    return x, attn


def encoder_forward(seq: TokenSequence | Tensor, layers: list[EncoderLayer], collect_attention: bool = False):
    """Pre-norm transformer encoder.

    Returns ``(tokens, attn_record)`` where ``attn_record[l][h]`` is the numpy
    attention array of layer ``l`` head ``h`` (empty unless requested).
    """
    x = seq.tokens if isinstance(seq, TokenSequence) else nx.as_tensor(seq)
    record: list[list[np.ndarray]] = []
    for layer in layers:
        x, attn = encoder_layer_forward(x, layer)
        if collect_attention:
            record.append([a.data for a in attn])
    return x, record


def film(hid, gamma, beta) -> Tensor:
    """Feature-wise affine modulation ``gamma * hid + beta`` over the token axis."""
    hid, gamma, beta = nx.as_tensor(hid), nx.as_tensor(gamma), nx.as_tensor(beta)
    d = hid.shape[-1]
    if gamma.shape[-1] != d or beta.shape[-1] != d:
        raise DimensionError(f"film: gamma {gamma.shape} / beta {beta.shape} do not match features {d}")
    if gamma.ndim > 1:
        # per-sample (B, D) modulation against (B, N, D) features
        gamma = gamma.reshape(gamma.shape[:-1] + (1, d))
        beta = beta.reshape(beta.shape[:-1] + (1, d))
    return hid * gamma + beta


@dataclass
class DecoderLayer(ParamGroup):
    ln1_g: Tensor
    ln1_b: Tensor
    wq: Tensor
    wk: Tensor
    wv: Tensor
    w_out: Tensor
    b_out: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    cq: Tensor
    ck: Tensor
    cv: Tensor
    c_out: Tensor
    cb_out: Tensor
    ln3_g: Tensor
    ln3_b: Tensor
    ffn: MLP
    film_mlp: MLP

    @classmethod
    def init(cls, rng, d: int, d_global: int, ffn_mult: int, dtype) -> DecoderLayer:
        g = lambda: _glorot(rng, d, d, dtype)  # noqa: E731
        film_mlp = MLP.init(rng, [d_global, d, 2 * d], dtype)
        # start as an identity modulation: gamma = 1 + 0, beta = 0
        film_mlp.weights[-1].data[...] *= 0.1
        return cls(
            ln1_g=_ones((d,), dtype), ln1_b=_zeros((d,), dtype),
            wq=g(), wk=g(), wv=g(), w_out=g(), b_out=_zeros((d,), dtype),
            ln2_g=_ones((d,), dtype), ln2_b=_zeros((d,), dtype),
            cq=g(), ck=g(), cv=g(), c_out=g(), cb_out=_zeros((d,), dtype),
            ln3_g=_ones((d,), dtype), ln3_b=_zeros((d,), dtype),
            ffn=MLP.init(rng, [d, ffn_mult * d, d], dtype),
            film_mlp=film_mlp,
        )


@dataclass
class DecoderParams(ParamGroup):
    in_w: Tensor
    in_b: Tensor
    pos: Tensor
    z_w: Tensor
    z_b: Tensor
    layers: list[DecoderLayer]
    lnf_g: Tensor
    lnf_b: Tensor
    out_w: Tensor
    out_b: Tensor

    @classmethod
    def init(cls, rng, cfg: PatchConfig, d_global: int, d_local: int, n_layers: int, ffn_mult: int, dtype) -> DecoderParams:
        d = cfg.embed_dim
        return cls(
            in_w=_glorot(rng, d_local, d, dtype), in_b=_zeros((d,), dtype),
            pos=nx.parameter(rng.normal(0.0, 0.02, size=(cfg.n_patches, d)), dtype=dtype),
            z_w=_glorot(rng, d_global, d, dtype), z_b=_zeros((d,), dtype),
            layers=[DecoderLayer.init(rng, d, d_global, ffn_mult, dtype) for _ in range(n_layers)],
            lnf_g=_ones((d,), dtype), lnf_b=_zeros((d,), dtype),
            out_w=_glorot(rng, d, cfg.patch_dim, dtype), out_b=_zeros((cfg.patch_dim,), dtype),
        )


def film_parameters(layer: DecoderLayer, z_cls) -> tuple[Tensor, Tensor]:
    """``(gamma, beta)`` predicted from the global latent by the layer's two-layer MLP."""
    out = layer.film_mlp(z_cls)
    d = out.shape[-1] // 2
    return 1.0 + out[..., :d], out[..., d:]


def decoder_forward(z_cls, patch_tokens, params: DecoderParams, cfg: PatchConfig, eps: float = 1e-5) -> Tensor:
    """Decode ``(B, d2)`` global latents and ``(B, n, d1)`` patch tokens to ``(B, C, H, W)``.

    Per layer: self-attention over patch tokens, cross-attention onto the
    single token derived from ``z_cls``, and a FiLM-modulated FFN.
    """
    z_cls, patch_tokens = nx.as_tensor(z_cls), nx.as_tensor(patch_tokens)
    if z_cls.ndim == 1:
        # single unbatched latent
        out = decoder_forward(z_cls.reshape(1, -1), patch_tokens.reshape((1,) + patch_tokens.shape), params, cfg, eps)
        return out.reshape(out.shape[1:])
    if z_cls.shape[-1] != params.z_w.shape[0]:
        raise DimensionError(f"decoder: global latent dim {z_cls.shape[-1]} != {params.z_w.shape[0]}")
    if patch_tokens.shape[-1] != params.in_w.shape[0] or patch_tokens.shape[-2] != cfg.n_patches:
        raise DimensionError(f"decoder: patch tokens {patch_tokens.shape} incompatible with ({cfg.n_patches}, {params.in_w.shape[0]})")
    h = cfg.n_heads
    x = patch_tokens @ params.in_w + params.in_b + params.pos
    z_tok = (z_cls @ params.z_w + params.z_b)
    z_tok = z_tok.reshape(z_tok.shape[:-1] + (1, z_tok.shape[-1]))
    for layer in params.layers:
        hn = nx.layer_norm(x, layer.ln1_g, layer.ln1_b, eps)
        x = x + multihead_attention(hn, hn, layer.wq, layer.wk, layer.wv, layer.w_out, layer.b_out, h)[0]
        hn = nx.layer_norm(x, layer.ln2_g, layer.ln2_b, eps)
        x = x + multihead_attention(hn, z_tok, layer.cq, layer.ck, layer.cv, layer.c_out, layer.cb_out, h)[0]
        gamma, beta = film_parameters(layer, z_cls)
        x = x + film(layer.ffn(nx.layer_norm(x, layer.ln3_g, layer.ln3_b, eps)), gamma, beta)
    x = nx.layer_norm(x, params.lnf_g, params.lnf_b, eps)
    return unpatchify(x @ params.out_w + params.out_b, cfg)
