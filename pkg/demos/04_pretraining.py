"""Masked-reconstruction pretraining on eight synthetic ECGs.

Run: python demos/04_pretraining.py   (about 10 s)
Writes demos/out/pretrain_loss.csv and demos/out/pretrain_loss.svg.
"""
# %%
import os

from ecgfuse.data_io import SynthConfig, synth_record
from ecgfuse.dsp import preprocess, segment
from ecgfuse.encoder import EncoderConfig, EncoderState
from ecgfuse.plot import write_chart
from ecgfuse.pretrain import PretrainConfig, loss_csv, pretrain_loop

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

# %% [markdown]
# Eight records, each preprocessed to 200 Hz and cut into one (12, 10, 200)
# grid.

# %%
grids = [segment(preprocess(synth_record(SynthConfig(seed=i)))[0]) for i in range(8)]
print(len(grids), grids[0].shape)

# %% [markdown]
# Every step draws a fresh mask per sample and scores the reconstruction
# against the unmasked grid. The patch loss covers masked patches outside
# masked channels. The channel loss averages the masked-channel and
# unmasked-channel errors. The total is the mean of the two.

# %%
state = EncoderState.initialize(EncoderConfig.toy(), seed=0)
cfg = PretrainConfig(steps=200, batch_size=8, learning_rate=1e-3, seed=0)
result = pretrain_loop(grids, state, cfg,
                       on_step=lambda lb: lb.step % 25 == 0 and print(
                           f"step {lb.step:3d}  patch {lb.l_patch:.4f}  channel {lb.l_channel:.4f}  total {lb.l_total:.4f}"))

first, last = result.curve[0].l_total, result.curve[-1].l_total
print(f"l_total {first:.4f} -> {last:.4f} ({100 * last / first:.1f}% of step 1)")

# %%
with open(os.path.join(OUT, "pretrain_loss.csv"), "w") as fh:
    fh.write(loss_csv(result.curve))
write_chart(os.path.join(OUT, "pretrain_loss.svg"),
            {"l_total": ([lb.step for lb in result.curve], [lb.l_total for lb in result.curve])},
            title="Reconstruction loss in pretraining", xlabel="step", ylabel="l_total")
print("wrote", OUT)
