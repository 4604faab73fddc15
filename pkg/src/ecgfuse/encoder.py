"""Criss-cross transformer encoder with a per-patch reconstruction head.

Tokens are laid out ``(B, C, n, d)``. In every layer the first half of the
attention heads attends across channels at a fixed patch index and the second
half attends across patches within a channel; head outputs are concatenated
and projected. Post-norm residual blocks, GELU feed-forward of width 4d.
"""
import zlib
from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from . import rng as _rng
from .autograd import Tensor
from .checkpoint import load_tensors, save_tensors
from .errors import CapacityError, ContractError, ShapeError
from .patching import PatchGrid


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    heads: int = 2
    d_model: int = 32
    t: int = 200
    dropout_p: float = 0.0
    max_channels: int = 32
    max_patches: int = 64

    def __post_init__(self):
        if self.heads < 2 or self.heads % 2:
            raise ContractError(f"heads must be even (half spatial, half temporal), got {self.heads}")
        if self.d_model % self.heads:
            raise ContractError(f"d_model {self.d_model} is not divisible by heads {self.heads}")
        if min(self.layers, self.d_model, self.t, self.max_channels, self.max_patches) < 1:
            raise ContractError("encoder dimensions must be positive")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ContractError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    @classmethod
    def toy(cls, **overrides):
        return cls(**{"layers": 2, "heads": 2, "d_model": 32, "t": 200, **overrides})

    @classmethod
    def full(cls, **overrides):
        # d_model of 200 mirrors the patch length
        return cls(**{"layers": 12, "heads": 8, "d_model": 200, "t": 200,
                      "dropout_p": 0.1, **overrides})

    @property
    def head_dim(self):
        return self.d_model // self.heads

    def to_dict(self):
        return asdict(self)


def parameter_shapes(config):
    """Ordered ``name -> shape`` for every parameter of ``config``."""
    d, t, f = config.d_model, config.t, 4 * config.d_model
    shapes = {
        "patch_embed.weight": (t, d),
        "patch_embed.bias": (d,),
        "pos.channel": (config.max_channels, d),
        "pos.patch": (config.max_patches, d),
    }
    for l in range(config.layers):
        p = f"layers.{l}."
        for proj in ("q", "k", "v", "out"):
            shapes[p + f"attn.{proj}.weight"] = (d, d)
            shapes[p + f"attn.{proj}.bias"] = (d,)
        shapes[p + "norm1.gamma"] = (d,)
        shapes[p + "norm1.beta"] = (d,)
        shapes[p + "ffn.fc1.weight"] = (d, f)
        shapes[p + "ffn.fc1.bias"] = (f,)
        shapes[p + "ffn.fc2.weight"] = (f, d)
        shapes[p + "ffn.fc2.bias"] = (d,)
        shapes[p + "norm2.gamma"] = (d,)
        shapes[p + "norm2.beta"] = (d,)
    shapes["recon.weight"] = (d, t)
    shapes["recon.bias"] = (t,)
    return shapes


def parameter_count(config):
    return sum(int(np.prod(s)) for s in parameter_shapes(config).values())


def init_parameters(shapes, seed, dtype=None):
    """Uniform(+-1/sqrt(fan_in)) weights, ones for norm gains, zeros elsewhere.

    Each parameter draws from its own stream keyed by its name, so adding a
    parameter never perturbs the others.
    """
    dtype = dtype or ag.get_default_dtype()
    params = {}
    for name, shape in shapes.items():
        if name.endswith(".weight"):
            bound = 1.0 / np.sqrt(shape[0])
            gen = _rng.stream(seed, zlib.crc32(name.encode()))
            values = gen.uniform(-bound, bound, size=shape)
        elif name.endswith(".gamma"):
            values = np.ones(shape)
        else:
            values = np.zeros(shape)
        params[name] = Tensor(values.astype(dtype), requires_grad=True, dtype=dtype)
    return params


class EncoderState:
    """Configuration plus named parameter tensors."""

    def __init__(self, config, params, seed=0):
        self.config = config
        self.params = params
        self.seed = int(seed)

    @classmethod
    def initialize(cls, config, seed=0, dtype=None):
        return cls(config, init_parameters(parameter_shapes(config), seed, dtype), seed)

    def __getitem__(self, name):
        return self.params[name]

    def arrays(self):
        return {k: p.data for k, p in self.params.items()}

    def copy_arrays(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def set_requires_grad(self, flag):
        for p in self.params.values():
            p.requires_grad = bool(flag)
            p.grad = np.zeros_like(p.data) if flag else None

    def astype(self, dtype):
        params = {k: Tensor(p.data, requires_grad=p.requires_grad, dtype=dtype)
                  for k, p in self.params.items()}
        return EncoderState(self.config, params, self.seed)

    def save(self, path, extra=None, header=None):
        arrays = dict(self.arrays())
        arrays.update(extra or {})
        head = {"kind": "encoder", "config": self.config.to_dict(), "seed": self.seed}
        head.update(header or {})
        save_tensors(path, arrays, head)

    @classmethod
    def load(cls, path, dtype=None):
        """Load a checkpoint; returns ``(state, header, extra_arrays)``."""
        header, arrays = load_tensors(path)
        if header.get("kind") != "encoder":
            raise ContractError(f"{path} is not an encoder checkpoint")
        config = EncoderConfig(**header["config"])
        dtype = dtype or ag.get_default_dtype()
        params = {}
        for name in parameter_shapes(config):
            params[name] = Tensor(arrays.pop(name), requires_grad=True, dtype=dtype)
        return cls(config, params, header.get("seed", 0)), header, arrays


# --- forward pieces -----------------------------------------------------------

def _as_batch(x, state):
    """Accept a PatchGrid, a list of grids, an array or a Tensor; return (B, C, n, t)."""
    squeeze = False
    if isinstance(x, PatchGrid):
        x = x.data[None]
        squeeze = True
    elif isinstance(x, (list, tuple)):
        x = np.stack([g.data if isinstance(g, PatchGrid) else np.asarray(g) for g in x])
    if not isinstance(x, Tensor):
        x = np.asarray(x)
        if x.ndim == 3:
            x, squeeze = x[None], True
        x = Tensor(x, dtype=state.params["patch_embed.weight"].dtype)
    elif x.ndim == 3:
        x, squeeze = ag.reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError("encoder input", x.shape, detail="expected (C, n, t) or (B, C, n, t)")
    return x, squeeze


def embed_patches(grid, state):
    """Linear patch embedding plus channel and patch-index position tables."""
    cfg = state.config
    x, squeeze = _as_batch(grid, state)
    B, C, n, t = x.shape
    if t != cfg.t:
        raise ShapeError("embed_patches", x.shape, detail=f"patch length must be {cfg.t}")
    if C > cfg.max_channels or n > cfg.max_patches:
        raise CapacityError(
            f"grid has C={C}, n={n}; capacity is max_channels={cfg.max_channels}, "
            f"max_patches={cfg.max_patches}")
    p = state.params
    tokens = ag.linear(x, p["patch_embed.weight"], p["patch_embed.bias"])
    chan = ag.reshape(ag.take_slice(p["pos.channel"], 0, C, 0), (C, 1, cfg.d_model))
    patch = ag.reshape(ag.take_slice(p["pos.patch"], 0, n, 0), (1, n, cfg.d_model))
    tokens = tokens + chan + patch
    return _unbatch(tokens) if squeeze else tokens


def _unbatch(x):
    return ag.reshape(x, x.shape[1:])


def _affine_norm(x, gamma, beta):
    return ag.layer_norm(x) * gamma + beta


def _attend(q, k, v, scale, weights_out=None):
    scores = ag.matmul(q, ag.transpose(k)) * scale
    att = ag.softmax(scores, axis=-1)
    if weights_out is not None:
        weights_out.append(att.data)
    return ag.matmul(att, v)


def crisscross_layer(tokens, state, layer, training=False, step=0, seed=None,
                     attention_out=None):
    """One criss-cross block on ``(B, C, n, d)`` (or unbatched ``(C, n, d)``) tokens.

    If ``attention_out`` is a list, the spatial and temporal attention weights
    are appended to it (in that order).
    """
    cfg = state.config
    squeeze = tokens.ndim == 3
    x = ag.reshape(tokens, (1,) + tokens.shape) if squeeze else tokens
    B, C, n, d = x.shape
    H, dh, hs = cfg.heads, cfg.head_dim, cfg.heads // 2
    p = state.params
    pre = f"layers.{layer}."
    seed = state.seed if seed is None else seed
    scale = 1.0 / np.sqrt(dh)

    def heads(name):
        y = ag.linear(x, p[pre + f"attn.{name}.weight"], p[pre + f"attn.{name}.bias"])
        y = ag.reshape(y, (B, C, n, H, dh))
        return ag.take_slice(y, 0, hs, 3), ag.take_slice(y, hs, H, 3)

    (qs, qt), (ks, kt), (vs, vt) = heads("q"), heads("k"), heads("v")
    # spatial: for each patch index, attend over channels -> (B, n, hs, C, dh)
    to_spatial = (0, 2, 3, 1, 4)
    spatial = _attend(ag.permute(qs, to_spatial), ag.permute(ks, to_spatial),
                      ag.permute(vs, to_spatial), scale, attention_out)
    spatial = ag.permute(spatial, (0, 3, 1, 2, 4))
    # temporal: for each channel, attend over patches -> (B, C, hs, n, dh)
    to_temporal = (0, 1, 3, 2, 4)
    temporal = _attend(ag.permute(qt, to_temporal), ag.permute(kt, to_temporal),
                       ag.permute(vt, to_temporal), scale, attention_out)
    temporal = ag.permute(temporal, to_temporal)

    merged = ag.reshape(ag.concat([spatial, temporal], axis=3), (B, C, n, d))
    attn = ag.linear(merged, p[pre + "attn.out.weight"], p[pre + "attn.out.bias"])
    attn = ag.dropout(attn, cfg.dropout_p, training, (seed, 3 * layer, step))
    x = _affine_norm(x + attn, p[pre + "norm1.gamma"], p[pre + "norm1.beta"])

    h = ag.gelu(ag.linear(x, p[pre + "ffn.fc1.weight"], p[pre + "ffn.fc1.bias"]))
    h = ag.dropout(h, cfg.dropout_p, training, (seed, 3 * layer + 1, step))
    h = ag.linear(h, p[pre + "ffn.fc2.weight"], p[pre + "ffn.fc2.bias"])
    h = ag.dropout(h, cfg.dropout_p, training, (seed, 3 * layer + 2, step))
    x = _affine_norm(x + h, p[pre + "norm2.gamma"], p[pre + "norm2.beta"])
    return _unbatch(x) if squeeze else x


def encoder_forward(masked_grid, state, training=False, step=0, seed=None):
    """Embed then run every criss-cross layer; returns the latent tokens."""
    x, squeeze = _as_batch(masked_grid, state)
    h = embed_patches(x, state)
    for layer in range(state.config.layers):
        h = crisscross_layer(h, state, layer, training, step, seed)
    return _unbatch(h) if squeeze else h


def reconstruct(latent, state):
    """Per-token linear map from ``d_model`` back to ``t`` samples."""
    if not isinstance(latent, Tensor):
        latent = Tensor(latent, dtype=state.params["recon.weight"].dtype)
    if latent.shape[-1] != state.config.d_model:
        raise ShapeError("reconstruct", latent.shape, detail=f"last axis must be {state.config.d_model}")
    return ag.linear(latent, state.params["recon.weight"], state.params["recon.bias"])
