"""Self-supervised ECG pretraining with a criss-cross transformer, and an
ECG + EEG fusion classifier, on a small numpy autograd engine."""
from .autograd import Tensor, backward, grad_check, no_grad, precision
from .data_io import SynthConfig, ingest_external, read_bundle, synth_record, write_bundle
from .dsp import (PreprocessSettings, SignalRecord, apply_zero_phase, design_bandpass,
                  design_notch, preprocess, reorder_leads, resample, segment)
from .encoder import EncoderConfig, EncoderState, encoder_forward, reconstruct
from .fusion import (ClassifierHeads, FinetuneConfig, TrialLabel, binarize_rating, classify,
                     embed_average, finetune_loop, fuse, split_subjects)
from .metrics import evaluate
from .patching import PatchGrid, apply_mask, desegment, mask_coverage, sample_mask
from .pretrain import (PretrainConfig, loss_channel, loss_patch, loss_total, pretrain_loop,
                       pretrain_step)

__version__ = "0.1.0"
