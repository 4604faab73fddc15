import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecgfuse.dsp import (CLINICAL_LEADS, PreprocessSettings, SignalRecord, apply_zero_phase,
                         design_bandpass, design_notch, preprocess, reorder_leads, resample,
                         segment)
from ecgfuse.errors import (ContractError, DesignError, DuplicateLeadError, MissingLeadError,
                            TooShortError)
from ecgfuse.patching import desegment

EDGE = 200


def tone(freq, fs=500.0, n=2000, channels=1, amp=1.0):
    t = np.arange(n) / fs
    return SignalRecord(np.tile(amp * np.sin(2 * np.pi * freq * t), (channels, 1)), fs,
                        [f"c{i}" for i in range(channels)])


def sos_response(sos, f, fs):
    """Independent evaluation: numpy polynomials in z^-1 per section."""
    z_inv = np.exp(-2j * np.pi * np.asarray(f, dtype=float) / fs)
    h = np.ones_like(z_inv)
    for sec in sos:
        h *= np.polyval(sec[2::-1], z_inv) / np.polyval(sec[:2:-1], z_inv)
    return np.abs(h)


def db(x):
    return 20 * np.log10(x)


# --- bandpass ---------------------------------------------------------------------

def test_bandpass_blocks_dc():
    assert design_bandpass(0.5, 40, 500, 4).gain_db([0.0])[0] <= -40


def test_bandpass_passes_10hz_within_1db():
    bp = design_bandpass(0.5, 40, 500, 4)
    assert abs(db(sos_response(bp.sos, 10.0, 500))) <= 1.0


def test_bandpass_attenuates_100hz():
    bp = design_bandpass(0.5, 40, 500, 4)
    assert db(sos_response(bp.sos, 100.0, 500)) <= -20


def test_response_matches_independent_oracle():
    bp = design_bandpass(0.5, 40, 500, 4)
    f = np.linspace(0.1, 249, 300)
    np.testing.assert_allclose(np.abs(bp.response(f)), sos_response(bp.sos, f, 500), rtol=1e-9)


def test_bandpass_corner_and_center_gains():
    bp = design_bandpass(0.5, 40, 500, 4)
    corners = np.abs(bp.response([0.5, 40.0]))
    np.testing.assert_allclose(corners, 1 / np.sqrt(2), rtol=0.05)
    assert abs(bp.gain_db([np.sqrt(0.5 * 40)])[0]) <= 1.0


@pytest.mark.parametrize("low,high,fs,order", [(0.5, 300, 500, 4), (40, 0.5, 500, 4),
                                               (0.5, 40, 500, 3), (0.5, 40, 500, 0)])
def test_bandpass_design_errors(low, high, fs, order):
    with pytest.raises(DesignError):
        design_bandpass(low, high, fs, order)


@pytest.mark.parametrize("fs", [100, 200, 500, 1000])
def test_bandpass_stable_over_supported_rates(fs):
    assert design_bandpass(0.5, 40, fs, 4).is_stable()


# --- notch --------------------------------------------------------------------------

def test_notch_attenuates_center():
    n = design_notch(50, 30, 500)
    assert db(sos_response(n.sos, 50.0, 500)) <= -30


def test_notch_passes_10hz():
    assert abs(design_notch(50, 30, 500).gain_db([10.0])[0]) <= 0.5


def test_notch_60_minimum_location():
    n = design_notch(60, 30, 500)
    f = np.linspace(55, 65, 2001)
    assert abs(f[np.argmin(np.abs(n.response(f)))] - 60) <= 0.5


def test_notch_width_points():
    n = design_notch(50, 30, 500)
    g = n.gain_db([50 - 50 / 30, 50 + 50 / 30])
    assert np.all(np.abs(g - (-3.0)) <= 3.0)


@pytest.mark.parametrize("center", [50, 60])
@pytest.mark.parametrize("fs", [200, 500, 1000])
def test_notch_stable(center, fs):
    assert design_notch(center, 30, fs).is_stable()


def test_notch_design_errors():
    with pytest.raises(DesignError):
        design_notch(300, 30, 500)
    with pytest.raises(DesignError):
        design_notch(50, 0, 500)


# --- zero-phase application -------------------------------------------------------

def test_zero_phase_preserves_passband_tone():
    out = apply_zero_phase(design_bandpass(0.5, 40, 500, 4), tone(10.0))
    core = out.samples[0, EDGE:-EDGE]
    amp = np.sqrt(2) * np.sqrt(np.mean(core ** 2))
    assert abs(amp - 1) <= 0.02
    assert out.n_samples == 2000


def test_zero_phase_rejects_constant():
    rec = SignalRecord(np.ones((1, 2000)), 500, ["c0"])
    out = apply_zero_phase(design_bandpass(0.5, 40, 500, 4), rec)
    assert np.sqrt(np.mean(out.samples[0, EDGE:-EDGE] ** 2)) <= 0.01


def test_zero_phase_zero_in_zero_out():
    rec = SignalRecord(np.zeros((2, 500)), 500, ["a", "b"])
    assert not apply_zero_phase(design_bandpass(0.5, 40, 500, 4), rec).samples.any()


def test_zero_phase_lag_is_zero():
    rec = tone(7.0)
    out = apply_zero_phase(design_bandpass(0.5, 40, 500, 4), rec)
    x, y = rec.samples[0, EDGE:-EDGE], out.samples[0, EDGE:-EDGE]
    lags = np.arange(-20, 21)
    xc = [np.dot(x[20:-20], np.roll(y, k)[20:-20]) for k in lags]
    assert abs(lags[int(np.argmax(xc))]) <= 1


def test_zero_phase_fs_mismatch():
    with pytest.raises(ContractError):
        apply_zero_phase(design_bandpass(0.5, 40, 500, 4), tone(10.0, fs=250))


def test_zero_phase_is_linear(rng):
    bp = design_bandpass(0.5, 40, 500, 4)
    x, y = rng.standard_normal((2, 3, 1500))
    rx = SignalRecord(x, 500, list("abc"))
    lhs = apply_zero_phase(bp, rx.with_samples(2 * x - 3 * y)).samples
    rhs = 2 * apply_zero_phase(bp, rx).samples - 3 * apply_zero_phase(bp, rx.with_samples(y)).samples
    assert np.sqrt(np.mean((lhs - rhs) ** 2)) <= 1e-9


def test_bandpass_and_notch_commute(rng):
    bp, notch = design_bandpass(0.5, 40, 500, 4), design_notch(50, 30, 500)
    # longer than the bandpass decay length so the reflection pad is not truncated
    n = design_bandpass(0.5, 40, 500, 4).decay_length() + 1
    rec = SignalRecord(rng.standard_normal((2, n)), 500, ["a", "b"])
    a = apply_zero_phase(notch, apply_zero_phase(bp, rec)).samples
    b = apply_zero_phase(bp, apply_zero_phase(notch, rec)).samples
    assert np.sqrt(np.mean((a - b) ** 2)) < 1e-6


# --- resampling ----------------------------------------------------------------

def test_resample_length_ratio():
    rec = SignalRecord(np.zeros((1, 5000)), 500, ["c0"])
    assert resample(rec, 100).n_samples == 1000


def test_resample_identity_is_bit_identical(rng):
    rec = SignalRecord(rng.standard_normal((3, 777)), 500, list("abc"))
    out = resample(rec, 500)
    np.testing.assert_array_equal(out.samples, rec.samples)
    assert out.samples is not rec.samples


def test_resample_preserves_5hz_tone():
    out = resample(tone(5.0, n=5000), 100)
    x = out.samples[0]
    mag = np.abs(np.fft.rfft(x)) * 2 / len(x)
    freqs = np.fft.rfftfreq(len(x), 1 / 100)
    k = int(np.argmax(mag))
    assert freqs[k] == pytest.approx(5.0)
    assert abs(mag[k] - 1.0) < 0.01


@settings(max_examples=25, deadline=None)
@given(st.integers(200, 3000), st.sampled_from([100.0, 128.0, 200.0, 256.0, 500.0, 1000.0]),
       st.sampled_from([100.0, 200.0, 500.0, 1000.0]))
def test_resample_length_rule(n, fs_in, fs_out):
    rec = SignalRecord(np.zeros((1, n)), fs_in, ["c0"])
    assert resample(rec, fs_out).n_samples == int(round(n * fs_out / fs_in))


# --- lead order and segmentation ----------------------------------------------------

def clinical_record(rng, order=CLINICAL_LEADS):
    data = rng.standard_normal((12, 50))
    return SignalRecord(data, 500, list(order)), data


def test_reorder_identity(rng):
    rec, data = clinical_record(rng)
    np.testing.assert_array_equal(reorder_leads(rec).samples, data)


def test_reorder_swaps_rows(rng):
    order = ["II", "I"] + list(CLINICAL_LEADS[2:])
    rec, data = clinical_record(rng, order)
    out = reorder_leads(rec)
    assert out.lead_names == list(CLINICAL_LEADS)
    np.testing.assert_array_equal(out.samples[0], data[1])
    np.testing.assert_array_equal(out.samples[1], data[0])


def test_reorder_missing_lead_lists_names(rng):
    rec, _ = clinical_record(rng)
    with pytest.raises(MissingLeadError) as info:
        reorder_leads(rec, list(CLINICAL_LEADS[:11]) + ["V7"])
    assert info.value.missing == ["V7"]


def test_reorder_duplicate_lead(rng):
    rec, _ = clinical_record(rng)
    with pytest.raises(DuplicateLeadError):
        reorder_leads(rec, ["I", "I"] + list(CLINICAL_LEADS[2:]))


@pytest.mark.parametrize("C,T,shape", [(12, 2000, (12, 10, 200)), (1, 200, (1, 1, 200)),
                                       (2, 450, (2, 2, 200))])
def test_segment_shapes(C, T, shape):
    rec = SignalRecord(np.arange(C * T, dtype=float).reshape(C, T), 500, [f"c{i}" for i in range(C)])
    grid = segment(rec)
    assert grid.shape == shape
    n = shape[1]
    np.testing.assert_array_equal(desegment(grid), rec.samples[:, : n * 200])
    # sample (i, j*w + k) lands at patch (i, j, k)
    assert grid.data[C - 1, n - 1, 7] == rec.samples[C - 1, (n - 1) * 200 + 7]


def test_segment_too_short():
    with pytest.raises(TooShortError):
        segment(SignalRecord(np.zeros((1, 199)), 500, ["c0"]))


def test_record_invariants():
    with pytest.raises(ContractError):
        SignalRecord(np.zeros((2, 10)), 500, ["a"])
    with pytest.raises(ContractError):
        SignalRecord(np.zeros((1, 10)), 0, ["a"])


def test_preprocess_pipeline_shapes_and_notes(rng):
    rec = SignalRecord(rng.standard_normal((12, 5000)), 500, list(CLINICAL_LEADS)[::-1])
    out, notes = preprocess(rec)
    assert out.fs == 200 and out.n_samples == 2000
    assert out.lead_names == list(CLINICAL_LEADS)
    assert segment(out).shape == (12, 10, 200)
    assert notes == []
    low, notes = preprocess(SignalRecord(rng.standard_normal((1, 1000)), 100, ["c0"]),
                            PreprocessSettings(notch_hz=50.0, fs_out=None))
    assert notes and "skipped" in notes[0]
    assert np.all(np.isfinite(low.samples))
