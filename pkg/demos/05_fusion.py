"""Fusing ECG and EEG embeddings for three binary affect labels.

Run: python demos/05_fusion.py   (about 90 s)

The synthetic trials put each label in a different place. Valence scales the
QRS complex of the ECG, dominance makes every other beat larger (alternans),
and arousal raises the EEG rhythm. No single modality carries all three.
"""
# %%
import numpy as np

from ecgfuse.autograd import Tensor
from ecgfuse.encoder import EncoderConfig, EncoderState
from ecgfuse.fusion import FinetuneConfig, finetune_loop, predict, split_subjects, synth_trials
from ecgfuse.metrics import evaluate
from ecgfuse.pretrain import PretrainConfig, pretrain_loop

# %%
trials = synth_trials(n_subjects=20, trials_per_subject=8, seed=0)
split = split_subjects([t.subject_id for t in trials], seed=0)
print({k: len(v) for k, v in split.items()}, "subjects;", len(trials), "trials")
train = [t for t in trials if t.subject_id in split["train"]]
test = [t for t in trials if t.subject_id in split["test"]]

# %% [markdown]
# Short self-supervised pretraining for each encoder, on training subjects
# only.

# %%
pcfg = PretrainConfig(steps=300, learning_rate=1e-3)
ecg = EncoderState.initialize(EncoderConfig.toy(), seed=1)
eeg = EncoderState.initialize(EncoderConfig.toy(), seed=2)
for name, state, grids in (("ECG", ecg, [t.ecg for t in train]), ("EEG", eeg, [t.eeg for t in train])):
    res = pretrain_loop(grids, state, pcfg)
    print(f"{name} pretraining l_total {res.curve[0].l_total:.3f} -> {res.curve[-1].l_total:.3f}")
saved = ecg.copy_arrays(), eeg.copy_arrays()


def fresh(arrays, config):
    return EncoderState(config, {k: Tensor(v.copy(), requires_grad=True) for k, v in arrays.items()})


# %% [markdown]
# Fine-tune three times from the same starting point: with both embedding
# blocks, with the ECG block zeroed, and with the EEG block zeroed.

# %%
cfg = FinetuneConfig(epochs=20, step_size=50, unfreeze_encoders=True)
y = np.stack([t.label.binary() for t in test])
for block in (None, "ecg", "eeg"):
    e, g = fresh(saved[0], ecg.config), fresh(saved[1], eeg.config)
    res = finetune_loop(trials, e, g, cfg, split=split, zero_block=block)
    probs = predict(test, e, g, res.heads, block)
    report = evaluate(probs, y, [t.subject_id for t in test], "pooled")
    label = "fused" if block is None else f"{block} zeroed"
    print(f"{label:<11}", "  ".join(f"{d} acc {report[d].acc:.3f}" for d in report.dimensions),
          f"| final train loss {res.train_loss[-1]:.3f}")
