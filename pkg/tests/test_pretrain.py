import numpy as np
import pytest

from ecgfuse import autograd as ag
from ecgfuse.data_io import SynthConfig, synth_record
from ecgfuse.dsp import PRETRAIN_RATES, SignalRecord
from ecgfuse.encoder import EncoderConfig, EncoderState, encoder_forward, reconstruct
from ecgfuse.errors import ContractError, DivergenceError, ShapeError
from ecgfuse.optim import Adam, step_lr
from ecgfuse.patching import MaskPlan, PatchGrid, sample_mask
from ecgfuse.pretrain import (CSV_HEADER, MultiRateDataset, PretrainConfig, loss_channel,
                              loss_csv, loss_patch, loss_total, pretrain_loop, pretrain_step,
                              read_loss_csv, resume_state)

TINY = EncoderConfig(layers=1, heads=2, d_model=8, t=16, max_channels=4, max_patches=4)


def plan(M, channels=()):
    return MaskPlan(np.asarray(M, dtype=np.uint8), tuple(channels), 0.5, 0.5, 0)


def grids(n=6, seed=0):
    gen = np.random.default_rng(seed)
    return [PatchGrid(gen.standard_normal((3, 4, 16))) for _ in range(n)]


# --- losses -----------------------------------------------------------------

def test_loss_patch_hand_value():
    target = np.array([[[2.0], [5.0]]])
    recon = np.array([[[3.0], [9.0]]])
    assert float(loss_patch(recon, target, plan([[1, 0]])).data) == 1.0


def test_losses_zero_when_equal(rng):
    x = rng.standard_normal((3, 4, 5))
    p = sample_mask(3, 4, 0.5, 1 / 3, seed=2)
    assert float(loss_patch(x, x, p).data) == 0.0
    assert float(loss_channel(x, x, p).data) == 0.0


def test_loss_patch_empty_region_is_zero(rng):
    x = rng.standard_normal((3, 4, 5))
    assert float(loss_patch(x + 1, x, sample_mask(3, 4, 0.0, 0.0)).data) == 0.0
    # patches inside a masked channel are not counted
    assert float(loss_patch(x + 1, x, plan(np.eye(3, 4), (0, 1, 2))).data) == 0.0


def test_loss_channel_constant_offset_is_one(rng):
    x = rng.standard_normal((4, 3, 5))
    assert float(loss_channel(x + 1, x, plan(np.zeros((4, 3)), (1,))).data) == pytest.approx(1.0)


def test_loss_channel_empty_masked_set(rng):
    x = rng.standard_normal((4, 3, 5))
    assert float(loss_channel(x + 2, x, plan(np.zeros((4, 3)))).data) == pytest.approx(0.5 * 4)


def test_loss_total_examples():
    assert loss_total(0, 0) == 0
    assert loss_total(0.2, 0.4) == pytest.approx(0.3)
    assert loss_total(1.7, 1.7) == 1.7


def test_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        loss_patch(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)), plan(np.zeros((2, 2))))


def test_losses_compare_against_unmasked_target(rng):
    x = rng.standard_normal((3, 4, 5)) + 3.0
    p = plan(np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 0]]), (2,))
    masked = x.copy()
    masked[p.combined()] = 0.0
    # reconstructing the masked input perfectly must still cost something
    assert float(loss_patch(masked, x, p).data) > 1.0
    assert float(loss_channel(masked, x, p).data) > 1.0


def test_loss_gradient_matches_finite_differences(f64, rng):
    target = rng.standard_normal((3, 4, 5))
    p = sample_mask(3, 4, 0.5, 1 / 3, seed=7)
    recon = ag.Tensor(rng.standard_normal((3, 4, 5)), dtype=np.float64)
    fn = lambda r: loss_total(loss_patch(r, target, p), loss_channel(r, target, p))
    assert ag.grad_check(fn, recon).passed


def test_batched_loss_is_mean_of_singles(rng):
    x, y = rng.standard_normal((2, 3, 4, 5))
    plans = [sample_mask(3, 4, 0.5, 1 / 3, seed=s) for s in (1, 2)]
    batch = float(loss_patch(x[None].repeat(2, 0), y[None].repeat(2, 0), plans).data)
    singles = [float(loss_patch(x, y, q).data) for q in plans]
    assert batch == pytest.approx(np.mean(singles), rel=1e-6)


# --- step and loop ------------------------------------------------------------------

def test_zero_learning_rate_leaves_parameters(rng):
    st = EncoderState.initialize(TINY, seed=1)
    before = st.copy_arrays()
    lb = pretrain_step(grids(3), st, PretrainConfig(learning_rate=0.0), step=1)
    for name, arr in before.items():
        np.testing.assert_array_equal(st[name].data, arr)
    assert lb.l_total == pytest.approx(0.5 * lb.l_patch + 0.5 * lb.l_channel, abs=1e-9)


def test_zero_lr_loss_is_order_invariant():
    st = EncoderState.initialize(TINY, seed=1)
    cfg = PretrainConfig(learning_rate=0.0, r=0.0, r_c=0.0)
    data = grids(4)
    a = pretrain_step(data, st, cfg, step=1).l_total
    b = pretrain_step(data[::-1], st, cfg, step=1).l_total
    assert a == pytest.approx(b, rel=1e-6)


def run(steps, seed=0, **kw):
    st = EncoderState.initialize(TINY, seed=3)
    cfg = PretrainConfig(steps=steps, batch_size=4, learning_rate=1e-3, seed=seed, **kw)
    return pretrain_loop(grids(10), st, cfg), cfg


def test_loop_is_deterministic():
    a, _ = run(6)
    b, _ = run(6)
    assert a.curve == b.curve
    assert [lb.step for lb in a.curve] == list(range(1, 7))
    for lb in a.curve:
        assert lb.l_total == pytest.approx(0.5 * lb.l_patch + 0.5 * lb.l_channel, abs=1e-9)
        assert min(lb.l_patch, lb.l_channel) >= 0


def test_zero_steps_is_noop():
    st = EncoderState.initialize(TINY, seed=3)
    before = st.copy_arrays()
    res = pretrain_loop(grids(2), st, PretrainConfig(steps=0))
    assert res.curve == []
    for name, arr in before.items():
        np.testing.assert_array_equal(st[name].data, arr)


def test_resume_matches_uninterrupted_run(tmp_path):
    full, _ = run(7)
    st = EncoderState.initialize(TINY, seed=3)
    cfg = PretrainConfig(steps=4, batch_size=4, learning_rate=1e-3, checkpoint_every=4)
    first = pretrain_loop(grids(10), st, cfg, checkpoint_dir=str(tmp_path))
    assert len(first.checkpoints) == 1
    cfg7 = PretrainConfig(steps=7, batch_size=4, learning_rate=1e-3)
    resumed_state, cursor = resume_state(first.checkpoints[0], cfg7)
    assert cursor[0] == 4
    rest = pretrain_loop(grids(10), resumed_state, cfg7, cursor=cursor)
    assert first.curve + rest.curve == full.curve
    for name, p in full.state.params.items():
        np.testing.assert_array_equal(resumed_state[name].data, p.data)


def test_divergence_error_carries_step():
    st = EncoderState.initialize(TINY, seed=3)
    with pytest.raises(DivergenceError) as info:
        pretrain_loop(grids(4), st, PretrainConfig(steps=3, divergence_limit=1e-12))
    assert info.value.step == 1


def test_config_validation():
    with pytest.raises(ContractError):
        PretrainConfig(learning_rate=-1)
    with pytest.raises(ContractError):
        PretrainConfig(batch_size=0)


def test_mixed_shapes_rejected():
    st = EncoderState.initialize(TINY, seed=3)
    batch = [PatchGrid(np.zeros((3, 4, 16))), PatchGrid(np.zeros((2, 4, 16)))]
    with pytest.raises(ShapeError):
        pretrain_step(batch, st, PretrainConfig(), step=1)


def test_loss_csv_round_trip(tmp_path):
    res, _ = run(4)
    text = loss_csv(res.curve, log_every=2)
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    assert len(text.splitlines()) == 3
    path = tmp_path / "loss.csv"
    path.write_text(loss_csv(res.curve))
    assert read_loss_csv(path) == res.curve


def test_multirate_dataset():
    rec = synth_record(SynthConfig(duration_s=12, fs_hz=500))
    ds = MultiRateDataset([rec, rec, rec], seed=1, window=200, n_patches=10)
    rates = {ds.rate_for(e, i) for e in range(20) for i in range(3)}
    assert rates == set(PRETRAIN_RATES)
    assert ds.rate_for(3, 1) == ds.rate_for(3, 1)
    for g in ds.for_epoch(0):
        assert g.shape == (12, 10, 200)


def test_adam_and_step_schedule():
    assert step_lr(1e-3, 1) == 1e-3 and step_lr(1e-3, 4) == 1e-3
    assert step_lr(1e-3, 5) == pytest.approx(1e-4)
    assert step_lr(1e-3, 9) == pytest.approx(1e-5)
    w = ag.Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam({"w": w}, lr=0.1)
    w.grad = np.array([0.5, -3.0])
    opt.step()
    # first Adam step moves each coordinate by lr against the gradient sign
    np.testing.assert_allclose(w.data, [0.9, -1.9], atol=1e-6)
