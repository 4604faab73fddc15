"""Patch grids and the dual (patch + whole-channel) masking scheme."""
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .errors import ContractError

PATCH_STREAM = 1
CHANNEL_STREAM = 2


@dataclass
class PatchGrid:
    """A ``(C, n, t)`` block of patches cut from one multi-channel recording."""

    data: np.ndarray
    lead_names: list = field(default_factory=list)
    fs: float = 0.0

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ContractError(f"patch grid must be (C, n, t) with positive axes, got {self.data.shape}")
        if not self.lead_names:
            self.lead_names = [f"ch{i}" for i in range(self.data.shape[0])]
        if len(self.lead_names) != self.data.shape[0]:
            raise ContractError("lead_names length must equal the channel count")

    @property
    def n_channels(self):
        return self.data.shape[0]

    @property
    def n_patches(self):
        return self.data.shape[1]

    @property
    def patch_len(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def replace(self, data):
        return PatchGrid(data, list(self.lead_names), self.fs)


@dataclass(frozen=True)
class MaskPlan:
    """Bernoulli patch mask plus the set of fully masked channels."""

    patch_mask: np.ndarray
    masked_channels: tuple
    r: float
    r_c: float
    seed: int

    @property
    def n_channels(self):
        return self.patch_mask.shape[0]

    @property
    def n_patches(self):
        return self.patch_mask.shape[1]

    def channel_mask(self):
        """Boolean ``(C,)`` vector, True for channels in the masked set."""
        out = np.zeros(self.n_channels, dtype=bool)
        out[list(self.masked_channels)] = True
        return out

    def combined(self):
        """Boolean ``(C, n)``: position masked by either rule."""
        return self.patch_mask.astype(bool) | self.channel_mask()[:, None]

    def patch_only(self):
        """Positions masked by the Bernoulli rule outside masked channels."""
        return self.patch_mask.astype(bool) & ~self.channel_mask()[:, None]


def n_masked_channels(C, r_c):
    if r_c <= 0.0:
        return 0
    # guard against r_c * C landing a hair above an integer
    return min(C, math.ceil(r_c * C - 1e-9))


def sample_mask(C, n, r=0.5, r_c=1.0 / 12.0, seed=0):
    """Draw a MaskPlan; patch and channel draws use separate streams."""
    if C < 1 or n < 1:
        raise ContractError(f"C and n must be >= 1, got C={C}, n={n}")
    if not (0.0 <= r <= 1.0 and 0.0 <= r_c <= 1.0):
        raise ContractError(f"masking ratios must lie in [0, 1], got r={r}, r_c={r_c}")
    patch_rng = _rng.stream(seed, PATCH_STREAM)
    M = (patch_rng.random((C, n)) < r).astype(np.uint8)
    k = n_masked_channels(C, r_c)
    if k:
        chan_rng = _rng.stream(seed, CHANNEL_STREAM)
        chosen = tuple(sorted(int(i) for i in chan_rng.choice(C, size=k, replace=False)))
    else:
        chosen = ()
    return MaskPlan(M, chosen, float(r), float(r_c), int(seed))


def _check_dims(plan, C, n):
    if plan.patch_mask.shape != (C, n):
        raise ContractError(f"mask plan is {plan.patch_mask.shape} but grid has (C, n)=({C}, {n})")


def apply_mask(grid, plan, mask_token=None):
    """Replace masked patches with the mask token (zeros by default).

    Returns ``(masked_grid, plan)``; ``grid`` is left untouched.
    """
    C, n, t = grid.shape
    _check_dims(plan, C, n)
    data = grid.data.copy()
    token = np.zeros(t, dtype=data.dtype) if mask_token is None else mask_token
    data[plan.combined()] = token
    return grid.replace(data), plan


def mask_coverage(plan):
    return float(plan.combined().mean())


def desegment(grid):
    """Flatten patches back to a ``(C, n*t)`` sample matrix."""
    C, n, t = grid.shape
    return grid.data.reshape(C, n * t).copy()
