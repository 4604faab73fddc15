"""ECG + EEG fusion classifier and the subject-independent fine-tuning protocol.

Each encoder's latent is averaged over channels and flattened patch-major;
the two embeddings are concatenated (ECG first) and fed to a one-hidden-layer
trunk with three independent logit heads (valence, arousal, dominance).
"""
import math
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from typing import Optional

import numpy as np

from . import autograd as ag
from . import rng as _rng
from .autograd import Tensor
from .checkpoint import load_tensors, save_tensors
from .data_io import synth_affect_session
from .dsp import preprocess, segment
from .encoder import encoder_forward, init_parameters
from .errors import ContractError, DataError, DivergenceError, ShapeError
from .metrics import DIMENSIONS
from .optim import Adam, step_lr


class Level(IntEnum):
    LOW = 0
    HIGH = 1


def binarize_rating(rating):
    """High iff rating >= 3 on the 1-5 self-assessment scale."""
    rating = float(rating)
    if not 1.0 <= rating <= 5.0 or math.isnan(rating):
        raise DataError(f"rating {rating} outside [1, 5]")
    return Level.HIGH if rating >= 3.0 else Level.LOW


@dataclass(frozen=True)
class TrialLabel:
    subject_id: str
    valence: float
    arousal: float
    dominance: float

    def binary(self):
        return np.array([int(binarize_rating(getattr(self, d))) for d in DIMENSIONS])

    @classmethod
    def from_ratings(cls, subject_id, ratings):
        return cls(str(subject_id), *(float(ratings[d]) for d in DIMENSIONS))


@dataclass
class EmbeddingVector:
    values: np.ndarray
    modality: str
    provenance: Optional[str] = None

    def __len__(self):
        return len(self.values)


def channel_average(latent):
    """Tensor path: ``(B, C, n, d)`` -> ``(B, n*d)``."""
    avg = ag.mean(latent, axis=-3)
    return ag.reshape(avg, avg.shape[:-2] + (avg.shape[-2] * avg.shape[-1],))


def embed_average(latent, modality="ECG", provenance=None):
    """Mean over channels of a ``(C, n, d)`` latent, flattened patch-major."""
    data = latent.data if isinstance(latent, Tensor) else np.asarray(latent)
    if data.ndim != 3:
        raise ShapeError("embed_average", data.shape, detail="expected (C, n, d)")
    values = data.mean(axis=0).reshape(-1)
    if not np.all(np.isfinite(values)):
        raise ContractError("embedding contains non-finite values")
    return EmbeddingVector(values, modality.upper(), provenance)


def fuse(e_ecg, e_eeg):
    if e_ecg.modality != "ECG" or e_eeg.modality != "EEG":
        raise ContractError(
            f"fuse expects (ECG, EEG) embeddings, got ({e_ecg.modality}, {e_eeg.modality})")
    return np.concatenate([e_ecg.values, e_eeg.values])


# --- classifier -------------------------------------------------------------

def head_shapes(in_width, hidden=256):
    shapes = {"trunk.weight": (in_width, hidden), "trunk.bias": (hidden,)}
    for dim in DIMENSIONS:
        shapes[f"head.{dim}.weight"] = (hidden, 1)
        shapes[f"head.{dim}.bias"] = (1,)
    return shapes


@dataclass
class ClassifierHeads:
    params: dict
    in_width: int
    hidden: int = 256
    dropout_p: float = 0.2
    seed: int = 0

    @classmethod
    def initialize(cls, in_width, hidden=256, dropout_p=0.2, seed=0, dtype=None):
        params = init_parameters(head_shapes(in_width, hidden), _rng.derive_seed(seed, 0x4EAD), dtype)
        return cls(params, in_width, hidden, dropout_p, seed)

    def copy_arrays(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def save(self, path, header=None):
        head = {"kind": "heads", "in_width": self.in_width, "hidden": self.hidden,
                "dropout_p": self.dropout_p, "seed": self.seed}
        head.update(header or {})
        save_tensors(path, {k: p.data for k, p in self.params.items()}, head)

    @classmethod
    def load(cls, path, dtype=None):
        header, arrays = load_tensors(path)
        if header.get("kind") != "heads":
            raise ContractError(f"{path} is not a classifier-heads checkpoint")
        dtype = dtype or ag.get_default_dtype()
        params = {k: Tensor(arrays[k], requires_grad=True, dtype=dtype)
                  for k in head_shapes(header["in_width"], header["hidden"])}
        heads = cls(params, header["in_width"], header["hidden"], header["dropout_p"], header["seed"])
        return heads, header


def classify(fused, heads, training=False, step=0):
    """Three logits per input row; sigmoid is left to evaluation."""
    x = fused if isinstance(fused, Tensor) else Tensor(fused, dtype=heads.params["trunk.weight"].dtype)
    squeeze = x.ndim == 1
    if squeeze:
        x = ag.reshape(x, (1, x.shape[0]))
    if x.shape[-1] != heads.in_width:
        raise ContractError(f"fused width {x.shape[-1]} does not match head input {heads.in_width}")
    p = heads.params
    h = ag.gelu(ag.linear(x, p["trunk.weight"], p["trunk.bias"]))
    h = ag.dropout(h, heads.dropout_p, training, (heads.seed, 0x7121, step))
    logits = ag.concat([ag.linear(h, p[f"head.{d}.weight"], p[f"head.{d}.bias"])
                        for d in DIMENSIONS], axis=-1)
    return ag.reshape(logits, (3,)) if squeeze else logits


def probabilities(logits):
    data = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    return ag.sigmoid(Tensor(data, dtype=np.float64)).data


# --- protocol ---------------------------------------------------------------

def split_subjects(subject_ids, seed=0):
    """Subject-disjoint 3:1:1 split; validation and test get ``N // 5`` each."""
    subjects = sorted({str(s) for s in subject_ids})
    n = len(subjects)
    if n < 5:
        raise ContractError(f"need at least 5 distinct subjects for a 3:1:1 split, got {n}")
    order = _rng.stream(seed, 0x5B17).permutation(n)
    shuffled = [subjects[i] for i in order]
    k = n // 5
    return {"train": sorted(shuffled[2 * k:]), "val": sorted(shuffled[:k]),
            "test": sorted(shuffled[k:2 * k])}


@dataclass
class Trial:
    ecg: object
    eeg: object
    label: TrialLabel
    trial_id: str = ""

    @property
    def subject_id(self):
        return self.label.subject_id


@dataclass
class FinetuneConfig:
    epochs: int = 10
    batch_size: int = 8
    learning_rate: float = 1e-3
    dropout: float = 0.2
    optimizer: str = "adam"
    scheduler: str = "step"
    gamma: float = 0.1
    step_size: int = 4
    loss: str = "bce"
    hidden: int = 256
    unfreeze_encoders: bool = False
    seed: int = 0
    divergence_limit: float = 1e6

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or not self.learning_rate >= 0:
            raise ContractError("invalid fine-tuning schedule")
        if (self.optimizer, self.scheduler, self.loss) != ("adam", "step", "bce"):
            raise ContractError("only adam + step decay + bce are supported")

    def lr_for_epoch(self, epoch):
        return step_lr(self.learning_rate, epoch, self.gamma, self.step_size)

    def to_dict(self):
        return asdict(self)


@dataclass
class FinetuneResult:
    heads: ClassifierHeads
    split: dict
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    learning_rates: list = field(default_factory=list)


def make_trial(ecg, eeg, ratings, trial_id="", settings=None, n_patches=10, window=200):
    """Preprocess both records and keep the first ``n_patches`` patches of each."""
    grids = []
    for record in (ecg, eeg):
        rec, _ = preprocess(record, settings)
        grid = segment(rec, window)
        if grid.n_patches < n_patches:
            raise DataError(f"trial {trial_id}: {grid.n_patches} patches, need {n_patches}")
        grids.append(grid.replace(grid.data[:, :n_patches].copy()))
    return Trial(grids[0], grids[1], TrialLabel.from_ratings(ecg.subject_id, ratings), trial_id)


def synth_trials(n_subjects=20, trials_per_subject=8, seed=0, **kw):
    """Synthetic paired trials (see ``data_io.synth_affect_trial``), preprocessed."""
    return [make_trial(ecg, eeg, ratings, name)
            for name, ratings, ecg, eeg in synth_affect_session(n_subjects, trials_per_subject,
                                                                seed, **kw)]


def _stack_grids(grids):
    return np.stack([g.data for g in grids])


def _zeroed(x, block):
    return x if block is None else x * 0.0


def fused_features(trials, ecg_state, eeg_state, training=False, step=0, zero_block=None,
                   seed=0):
    """``(B, width)`` fused tensor for a list of trials (graph kept if trainable)."""
    e_ecg = channel_average(encoder_forward(_stack_grids([t.ecg for t in trials]), ecg_state,
                                            training, step, seed))
    e_eeg = channel_average(encoder_forward(_stack_grids([t.eeg for t in trials]), eeg_state,
                                            training, step, seed))
    if zero_block == "ecg":
        e_ecg = e_ecg * 0.0
    elif zero_block == "eeg":
        e_eeg = e_eeg * 0.0
    return ag.concat([e_ecg, e_eeg], axis=-1)


def _targets(trials, dtype):
    return np.stack([t.label.binary() for t in trials]).astype(dtype)


def _check_trials(trials):
    for t in trials:
        if t.ecg is None or t.eeg is None:
            raise DataError(f"trial {t.trial_id or '?'} lacks a modality")


def finetune_loop(trials, ecg_state, eeg_state, cfg, split=None, zero_block=None, heads=None):
    """Train the fusion heads on the train split; per-epoch train/val loss.

    Encoders stay frozen unless ``cfg.unfreeze_encoders``. ``zero_block``
    ("ecg" or "eeg") zeroes one modality's embedding block throughout.
    """
    trials = list(trials)
    _check_trials(trials)
    split = split or split_subjects([t.subject_id for t in trials], cfg.seed)
    train = [t for t in trials if t.subject_id in set(split["train"])]
    val = [t for t in trials if t.subject_id in set(split["val"])]
    dtype = ecg_state.params["patch_embed.weight"].dtype

    frozen = not cfg.unfreeze_encoders
    if frozen:
        with ag.no_grad():
            cache = {id(t): f for t, f in zip(trials, fused_features(
                trials, ecg_state, eeg_state, zero_block=zero_block).data)} if trials else {}
    width = (next(iter(cache.values())).shape[0] if frozen and cache
             else fused_features(trials[:1], ecg_state, eeg_state).shape[-1])
    if heads is None:
        heads = ClassifierHeads.initialize(width, cfg.hidden, cfg.dropout, cfg.seed, dtype)
    result = FinetuneResult(heads, split)
    if cfg.epochs == 0 or not train:
        return result

    params = dict(heads.params)
    if not frozen:
        params.update({f"ecg.{k}": p for k, p in ecg_state.params.items()})
        params.update({f"eeg.{k}": p for k, p in eeg_state.params.items()})
    opt = Adam(params, lr=cfg.learning_rate)

    def features(batch, training, step):
        if frozen:
            return Tensor(np.stack([cache[id(t)] for t in batch]), dtype=dtype)
        return fused_features(batch, ecg_state, eeg_state, training, step, zero_block, cfg.seed)

    step = 0
    for epoch in range(1, cfg.epochs + 1):
        opt.lr = cfg.lr_for_epoch(epoch)
        result.learning_rates.append(opt.lr)
        order = _rng.stream(cfg.seed, _rng.derive_seed(0xF17E, epoch)).permutation(len(train))
        total, count = 0.0, 0
        for start in range(0, len(train), cfg.batch_size):
            batch = [train[i] for i in order[start:start + cfg.batch_size]]
            step += 1
            logits = classify(features(batch, True, step), heads, training=True, step=step)
            # summed over the three heads, each averaged over the batch
            loss = ag.bce(logits, Tensor(_targets(batch, dtype), dtype=dtype)) * 3.0
            value = float(loss.data)
            if not math.isfinite(value) or value > cfg.divergence_limit:
                raise DivergenceError(step, {"bce": value})
            opt.zero_grad()
            ag.backward(loss)
            opt.step()
            total += value * len(batch)
            count += len(batch)
        result.train_loss.append(total / count)
        result.val_loss.append(evaluation_loss(val, ecg_state, eeg_state, heads, zero_block,
                                               features=(lambda b: features(b, False, 0))))
    return result


def evaluation_loss(trials, ecg_state, eeg_state, heads, zero_block=None, features=None):
    """Summed-over-heads BCE in inference mode; NaN for an empty set."""
    if not trials:
        return float("nan")
    with ag.no_grad():
        feats = features(trials) if features else fused_features(
            trials, ecg_state, eeg_state, zero_block=zero_block)
        logits = classify(feats, heads)
        dtype = logits.dtype
        return float(ag.bce(logits, Tensor(_targets(trials, dtype), dtype=dtype)).data) * 3.0


def predict(trials, ecg_state, eeg_state, heads, zero_block=None):
    """``(N, 3)`` High-class probabilities in inference mode."""
    with ag.no_grad():
        logits = classify(fused_features(trials, ecg_state, eeg_state, zero_block=zero_block), heads)
    return probabilities(logits)
