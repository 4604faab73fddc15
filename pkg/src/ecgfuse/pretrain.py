"""Masked-reconstruction pretraining: composite loss and training loop."""
import csv
import io
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from . import rng as _rng
from .autograd import Tensor
from .dsp import PRETRAIN_RATES, resample, segment_chunks
from .encoder import encoder_forward, reconstruct
from .errors import ContractError, DivergenceError, ShapeError
from .optim import Adam
from .patching import PatchGrid, sample_mask

CSV_HEADER = ("step", "l_patch", "l_channel", "l_total")


@dataclass
class PretrainConfig:
    r: float = 0.5
    r_c: float = 1.0 / 12.0
    steps: int = 200
    batch_size: int = 8
    learning_rate: float = 1e-4
    optimizer: str = "adam"
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    log_every: int = 1
    checkpoint_every: int = 0
    divergence_limit: float = 1e6

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ContractError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer != "adam":
            raise ContractError(f"unsupported optimizer {self.optimizer!r}")
        if self.log_every < 1:
            raise ContractError("log_every must be >= 1")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass(frozen=True)
class LossBreakdown:
    l_patch: float
    l_channel: float
    l_total: float
    step: int = 0


# --- losses -----------------------------------------------------------------

def _batched(recon, target, plans):
    if not isinstance(recon, Tensor):
        recon = Tensor(recon, dtype=np.asarray(recon).dtype)
    target = np.asarray(target.data if isinstance(target, (Tensor, PatchGrid)) else target)
    if recon.shape != target.shape:
        raise ShapeError("reconstruction loss", recon.shape, target.shape)
    single = recon.ndim == 3
    if single:
        plans = [plans]
    elif len(plans) != recon.shape[0]:
        raise ContractError(f"{len(plans)} mask plans for a batch of {recon.shape[0]}")
    return recon, target, plans, single


def _region_loss(recon, target, weights):
    """sum(w * (recon - target)^2) for a constant weight array ``weights``."""
    diff = recon - Tensor(target, dtype=recon.dtype)
    w = Tensor(weights.reshape(weights.shape + (1,)) if weights.ndim < recon.ndim else weights,
               dtype=recon.dtype)
    return ag.sum_all(diff * diff * w)


def _mean_weights(region, t):
    count = int(region.sum()) * t
    return region / count if count else np.zeros(region.shape)


def loss_patch(recon, target, plans):
    """Masked-patch MSE over Bernoulli-masked patches outside masked channels.

    Accepts one ``(C, n, t)`` reconstruction with a single plan or a
    ``(B, C, n, t)`` batch with one plan per sample (batch mean). An empty
    region contributes 0.
    """
    recon, target, plans, single = _batched(recon, target, plans)
    t = recon.shape[-1]
    w = np.stack([_mean_weights(p.patch_only(), t) for p in plans])
    w = w[0] if single else w / len(plans)
    return _region_loss(recon, target, w)


def loss_channel(recon, target, plans):
    """Half the MSE over fully masked channels plus half over the rest."""
    recon, target, plans, single = _batched(recon, target, plans)
    n, t = recon.shape[-2], recon.shape[-1]
    ws = []
    for p in plans:
        masked = np.repeat(p.channel_mask()[:, None], n, axis=1)
        ws.append(0.5 * _mean_weights(masked, t) + 0.5 * _mean_weights(~masked, t))
    w = ws[0] if single else np.stack(ws) / len(plans)
    return _region_loss(recon, target, w)


def loss_total(l_patch, l_channel):
    return 0.5 * l_patch + 0.5 * l_channel


# --- training -----------------------------------------------------------------

def mask_seed(seed, step, index):
    return _rng.derive_seed(seed, step, index)


def _stack(batch):
    if not batch:
        raise ContractError("empty batch")
    shape = batch[0].shape
    for g in batch[1:]:
        if g.shape != shape:
            raise ShapeError("pretrain batch", shape, g.shape)
    return np.stack([g.data for g in batch])


def optimizer_for(state, cfg):
    """The Adam instance bound to ``state`` (created on first use)."""
    opt = getattr(state, "optimizer", None)
    if opt is None:
        opt = Adam(state.params, lr=cfg.learning_rate, betas=tuple(cfg.betas), eps=cfg.eps)
        state.optimizer = opt
    return opt


def pretrain_step(batch, state, cfg, step, optimizer=None):
    """One masked-reconstruction update on ``batch`` (a list of PatchGrids)."""
    target = _stack(batch).astype(state.params["patch_embed.weight"].dtype)
    B, C, n, t = target.shape
    plans = [sample_mask(C, n, cfg.r, cfg.r_c, mask_seed(cfg.seed, step, i)) for i in range(B)]
    masked = target.copy()
    for i, plan in enumerate(plans):
        masked[i][plan.combined()] = 0.0

    latent = encoder_forward(masked, state, training=True, step=step, seed=cfg.seed)
    recon = reconstruct(latent, state)
    lp = loss_patch(recon, target, plans)
    lc = loss_channel(recon, target, plans)
    total = loss_total(lp, lc)

    values = {"l_patch": float(lp.data), "l_channel": float(lc.data)}
    values["l_total"] = loss_total(values["l_patch"], values["l_channel"])
    if not all(math.isfinite(v) for v in values.values()) or values["l_total"] > cfg.divergence_limit:
        raise DivergenceError(step, values)

    opt = optimizer or optimizer_for(state, cfg)
    opt.lr = cfg.learning_rate
    opt.zero_grad()
    ag.backward(total)
    opt.step()
    return LossBreakdown(values["l_patch"], values["l_channel"], values["l_total"], step)


class MultiRateDataset:
    """Per-epoch view that resamples each record to a randomly drawn rate.

    The rate for record ``i`` in epoch ``e`` is drawn uniformly from ``rates``
    using a stream keyed by ``(seed, e, i)``; each resampled record is then cut
    into ``(C, n_patches, window)`` grids.
    """

    def __init__(self, records, rates=PRETRAIN_RATES, seed=0, window=200, n_patches=10):
        self.records = list(records)
        self.rates = tuple(float(r) for r in rates)
        self.seed = seed
        self.window = window
        self.n_patches = n_patches

    def rate_for(self, epoch, index):
        gen = _rng.stream(self.seed, _rng.derive_seed(0x5A, epoch, index))
        return self.rates[int(gen.integers(len(self.rates)))]

    def for_epoch(self, epoch):
        grids = []
        for i, rec in enumerate(self.records):
            res = resample(rec, self.rate_for(epoch, i))
            if res.n_samples >= self.window * self.n_patches:
                grids.extend(segment_chunks(res, self.window, self.n_patches))
        return grids


def _epoch_items(dataset, epoch):
    return dataset.for_epoch(epoch) if hasattr(dataset, "for_epoch") else dataset


def epoch_order(seed, epoch, n):
    return _rng.stream(seed, _rng.derive_seed(0x5F, epoch)).permutation(n)


@dataclass
class PretrainResult:
    state: object
    curve: list = field(default_factory=list)
    checkpoints: list = field(default_factory=list)
    cursor: tuple = (0, 0, 0)


def save_pretrain_checkpoint(path, state, optimizer, step, epoch, position, cfg):
    extra = optimizer.state_arrays() if optimizer is not None else {}
    header = {"train": {"step": step, "epoch": epoch, "position": position,
                        "optimizer_steps": optimizer.step_count if optimizer else 0,
                        "pretrain_config": cfg.to_dict()}}
    state.save(path, extra=extra, header=header)


def resume_state(path, cfg):
    """Load a pretraining checkpoint; returns ``(state, cursor)``."""
    from .encoder import EncoderState

    state, header, extra = EncoderState.load(path)
    train = header.get("train", {})
    opt = optimizer_for(state, cfg)
    if extra:
        opt.load_state_arrays(extra, train.get("optimizer_steps", 0))
    cursor = (train.get("step", 0), train.get("epoch", 0), train.get("position", 0))
    return state, cursor


def pretrain_loop(dataset, state, cfg, checkpoint_dir=None, cursor=(0, 0, 0), on_step=None):
    """Run ``cfg.steps`` updates over shuffled batches.

    ``cursor`` is ``(completed_steps, epoch, batch_position)`` as stored in a
    checkpoint, so a resumed run continues exactly where it stopped. On
    divergence the error propagates; checkpoints already written remain.
    """
    step, epoch, position = cursor
    result = PretrainResult(state, cursor=tuple(cursor))
    if step >= cfg.steps:
        return result
    opt = optimizer_for(state, cfg)
    while step < cfg.steps:
        items = _epoch_items(dataset, epoch)
        if not items:
            raise ContractError(f"dataset produced no samples in epoch {epoch}")
        order = epoch_order(cfg.seed, epoch, len(items))
        batches = [order[i:i + cfg.batch_size] for i in range(0, len(items), cfg.batch_size)]
        while position < len(batches) and step < cfg.steps:
            batch = [items[k] for k in batches[position]]
            lb = pretrain_step(batch, state, cfg, step + 1, opt)
            step += 1
            position += 1
            result.curve.append(lb)
            if on_step is not None:
                on_step(lb)
            if checkpoint_dir and cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                nxt = (epoch, position) if position < len(batches) else (epoch + 1, 0)
                path = os.path.join(checkpoint_dir, f"step_{step:06d}.ckpt")
                save_pretrain_checkpoint(path, state, opt, step, nxt[0], nxt[1], cfg)
                result.checkpoints.append(path)
        if position >= len(batches):
            epoch += 1
            position = 0
    result.cursor = (step, epoch, position)
    return result


def loss_csv(curve, log_every=1):
    """Render the loss curve as CSV text (rows at multiples of ``log_every``)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for lb in curve:
        if lb.step % log_every == 0:
            writer.writerow([lb.step, repr(lb.l_patch), repr(lb.l_channel), repr(lb.l_total)])
    return buf.getvalue()


def read_loss_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [LossBreakdown(float(r["l_patch"]), float(r["l_channel"]), float(r["l_total"]),
                          int(r["step"])) for r in rows]
