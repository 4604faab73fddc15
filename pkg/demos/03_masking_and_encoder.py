"""Dual masking and the criss-cross encoder.

Run: python demos/03_masking_and_encoder.py
"""
# %%
import numpy as np

from ecgfuse.autograd import Tensor
from ecgfuse.encoder import (EncoderConfig, EncoderState, crisscross_layer, encoder_forward,
                             parameter_count, reconstruct)
from ecgfuse.patching import PatchGrid, apply_mask, mask_coverage, sample_mask

# %% [markdown]
# A mask plan has two parts: a Bernoulli(r) mask over patches and a set of
# whole channels chosen without replacement (ceil(r_c * C) of them). A patch
# is hidden if either part says so.

# %%
plan = sample_mask(12, 10, r=0.5, r_c=1 / 12, seed=4)
print(plan.patch_mask)
print("masked channels", plan.masked_channels, "coverage", round(mask_coverage(plan), 3))

gen = np.random.default_rng(0)
grid = PatchGrid(gen.standard_normal((12, 10, 200)))
masked, _ = apply_mask(grid, plan)
hidden = ~masked.data.any(axis=-1)
print("hidden patches", int(hidden.sum()), "of", hidden.size)

# %% [markdown]
# The encoder embeds each patch linearly, adds a channel and a patch-index
# table, then runs post-norm blocks in which half the heads attend across
# channels (fixed patch index) and half attend across patches (fixed
# channel).

# %%
cfg = EncoderConfig.toy()
state = EncoderState.initialize(cfg, seed=0)
print(cfg)
print("parameters", parameter_count(cfg), "| full preset", parameter_count(EncoderConfig.full()))

latent = encoder_forward(masked, state)
recon = reconstruct(latent, state)
print("latent", latent.shape, "reconstruction", recon.shape)

# %% [markdown]
# Attention weights along each axis sum to one. With a single channel the
# spatial heads can only look at themselves.

# %%
weights = []
crisscross_layer(Tensor(gen.standard_normal((1, 5, cfg.d_model))), state, 0, attention_out=weights)
print("spatial weights with C=1:", np.unique(weights[0]))
print("temporal rows sum to", np.unique(weights[1].sum(-1).round(6)))

# %% [markdown]
# The channel table starts at zero, so permuting the input channels just
# permutes the output channels.

# %%
perm = gen.permutation(12)
a = encoder_forward(grid.data, state).data
b = encoder_forward(grid.data[perm], state).data
print("max deviation under permutation:", float(np.abs(b - a[perm]).max()))
