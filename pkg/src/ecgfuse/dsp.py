"""Signal conditioning: Butterworth bandpass, powerline notch, polyphase
resampling, lead reordering and fixed-window segmentation.

Filters are stored as second-order sections and applied forward-backward, so
the effective magnitude response is the square of the designed one and the
phase is zero.
"""
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy import signal

from .errors import (ContractError, DesignError, DuplicateLeadError, MissingLeadError,
                     TooShortError)
from .patching import PatchGrid

CLINICAL_LEADS = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")
PRETRAIN_RATES = (100.0, 200.0, 500.0, 1000.0)

KAISER_BETA = 8.6
TAPS_PER_PHASE = 64


@dataclass
class SignalRecord:
    """Multi-channel recording: ``samples`` is ``(C, T)`` at ``fs`` Hz."""

    samples: np.ndarray
    fs: float
    lead_names: list
    subject_id: Optional[str] = None

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples))
        self.lead_names = list(self.lead_names)
        if self.samples.ndim != 2:
            raise ContractError(f"samples must be 2-D (C, T), got {self.samples.shape}")
        if self.samples.shape[0] != len(self.lead_names):
            raise ContractError(
                f"{self.samples.shape[0]} sample rows but {len(self.lead_names)} lead names")
        if not self.fs > 0:
            raise ContractError(f"fs must be positive, got {self.fs}")
        if self.samples.shape[1] < 1:
            raise ContractError("record has no samples")

    @property
    def n_channels(self):
        return self.samples.shape[0]

    @property
    def n_samples(self):
        return self.samples.shape[1]

    @property
    def duration_s(self):
        return self.n_samples / self.fs

    def with_samples(self, samples, fs=None, lead_names=None):
        return SignalRecord(samples, self.fs if fs is None else fs,
                            self.lead_names if lead_names is None else lead_names,
                            self.subject_id)


@dataclass
class IirFilter:
    sos: np.ndarray
    kind: str
    corners_hz: tuple
    order: int
    fs: float
    meta: dict = field(default_factory=dict)

    def poles(self):
        return np.concatenate([np.roots(sec[3:]) for sec in self.sos])

    def decay_length(self, floor=1e-12):
        """Samples for the slowest pole's envelope to fall below ``floor``.

        Used as the odd-reflection pad length so forward-backward filtering
        behaves like the ideal LTI operator away from the record ends.
        """
        radius = float(np.max(np.abs(self.poles())))
        if radius <= 0.0:
            return 1
        return int(np.ceil(np.log(floor) / np.log(radius)))

    def is_stable(self):
        return bool(np.all(np.abs(self.poles()) < 1.0))

    def response(self, freqs_hz):
        """Complex single-pass response at the given frequencies."""
        z = np.exp(1j * 2.0 * np.pi * np.asarray(freqs_hz, dtype=float) / self.fs)
        h = np.ones_like(z)
        for b0, b1, b2, a0, a1, a2 in self.sos:
            h *= (b0 + b1 / z + b2 / z**2) / (a0 + a1 / z + a2 / z**2)
        return h

    def gain_db(self, freqs_hz):
        with np.errstate(divide="ignore"):
            return 20.0 * np.log10(np.abs(self.response(freqs_hz)))


def _check_stable(filt):
    if not filt.is_stable():
        raise DesignError(f"designed {filt.kind} filter is unstable")
    return filt


def design_bandpass(low_hz=0.5, high_hz=40.0, fs=500.0, order=4):
    """Butterworth bandpass as second-order sections.

    ``order`` is the lowpass-prototype order (the band transform doubles it),
    which gives ``order`` biquad sections.
    """
    nyq = fs / 2.0
    if not 0.0 < low_hz < high_hz < nyq:
        raise DesignError(f"need 0 < low < high < fs/2, got low={low_hz}, high={high_hz}, fs={fs}")
    if order < 2 or order % 2:
        raise DesignError(f"order must be even and >= 2, got {order}")
    sos = signal.butter(order, [low_hz, high_hz], btype="bandpass", fs=fs, output="sos")
    return _check_stable(IirFilter(sos, "bandpass", (low_hz, high_hz), order, fs))


def design_notch(center_hz=50.0, q=30.0, fs=500.0):
    if not 0.0 < center_hz < fs / 2.0:
        raise DesignError(f"notch center {center_hz} Hz must lie in (0, {fs / 2.0})")
    if not q > 0:
        raise DesignError(f"quality factor must be positive, got {q}")
    b, a = signal.iirnotch(center_hz, q, fs=fs)
    sos = signal.tf2sos(b, a)
    return _check_stable(IirFilter(sos, "notch", (center_hz,), 2, fs, {"q": q}))


def apply_zero_phase(filt, record):
    if not np.isclose(record.fs, filt.fs):
        raise ContractError(f"record fs {record.fs} Hz does not match filter fs {filt.fs} Hz")
    x = np.asarray(record.samples, dtype=np.float64)
    padlen = min(filt.decay_length(), x.shape[1] - 1)
    y = signal.sosfiltfilt(filt.sos, x, axis=1, padlen=padlen)
    return record.with_samples(y.astype(record.samples.dtype, copy=False))


def _ratio(fs_in, fs_out):
    frac = (Fraction(str(float(fs_out))) / Fraction(str(float(fs_in)))).limit_denominator(10_000)
    return frac.numerator, frac.denominator


def resample_filter(up, down):
    """Kaiser-windowed sinc anti-aliasing/anti-imaging filter for ``up/down``."""
    rate = max(up, down)
    return signal.firwin(TAPS_PER_PHASE * rate + 1, 1.0 / rate, window=("kaiser", KAISER_BETA))


def resample(record, fs_out):
    """Rational polyphase resampling to ``fs_out``.

    Output length is ``round(T * fs_out / fs_in)``.
    """
    if not fs_out > 0:
        raise ContractError(f"fs_out must be positive, got {fs_out}")
    if fs_out == record.fs:
        return record.with_samples(record.samples.copy())
    up, down = _ratio(record.fs, fs_out)
    taps = resample_filter(up, down)
    y = signal.resample_poly(np.asarray(record.samples, dtype=np.float64), up, down,
                             axis=1, window=taps)
    n_out = int(round(record.n_samples * fs_out / record.fs))
    y = y[:, :n_out]
    return record.with_samples(y.astype(record.samples.dtype, copy=False), fs=float(fs_out))


def clinical_order(lead_names):
    """Clinical ordering of whichever standard leads are present."""
    present = set(lead_names)
    return [name for name in CLINICAL_LEADS if name in present]


def reorder_leads(record, target_order=CLINICAL_LEADS):
    target = list(target_order)
    seen, dups = set(), []
    for name in target:
        if name in seen:
            dups.append(name)
        seen.add(name)
    if dups:
        raise DuplicateLeadError(f"duplicate leads requested: {', '.join(dups)}")
    missing = [name for name in target if name not in record.lead_names]
    if missing:
        raise MissingLeadError(missing)
    if len(set(record.lead_names)) != len(record.lead_names):
        raise DuplicateLeadError("record contains duplicate lead names")
    extra = [name for name in record.lead_names if name not in seen]
    if extra:
        raise ContractError(f"target order omits record leads: {', '.join(extra)}")
    rows = [record.lead_names.index(name) for name in target]
    return record.with_samples(record.samples[rows], lead_names=target)


def segment(record, window=200):
    """Cut each channel into ``floor(T / window)`` patches; the tail is dropped."""
    T = record.n_samples
    if T < window:
        raise TooShortError(f"record has {T} samples, fewer than one {window}-sample window")
    n = T // window
    data = record.samples[:, : n * window].reshape(record.n_channels, n, window).copy()
    return PatchGrid(data, list(record.lead_names), record.fs)


def segment_chunks(record, window=200, n_patches=10):
    """Consecutive non-overlapping ``(C, n_patches, window)`` grids from one record."""
    grid = segment(record, window)
    count = grid.n_patches // n_patches
    return [grid.replace(grid.data[:, k * n_patches:(k + 1) * n_patches].copy())
            for k in range(count)]


@dataclass
class PreprocessSettings:
    bandpass_low: float = 0.5
    bandpass_high: float = 40.0
    order: int = 4
    notch_hz: Optional[float] = 50.0
    notch_q: float = 30.0
    fs_out: Optional[float] = 200.0
    lead_order: Optional[list] = None


def preprocess(record, settings=None):
    """Bandpass, notch, resample and reorder one record.

    Returns ``(record, notes)`` where ``notes`` lists skipped stages. The notch
    is skipped when its center is at or above the input Nyquist frequency.
    """
    s = settings or PreprocessSettings()
    notes = []
    out = record.with_samples(np.asarray(record.samples, dtype=np.float64))
    out = apply_zero_phase(design_bandpass(s.bandpass_low, s.bandpass_high, out.fs, s.order), out)
    if s.notch_hz:
        if s.notch_hz < out.fs / 2.0:
            out = apply_zero_phase(design_notch(s.notch_hz, s.notch_q, out.fs), out)
        else:
            notes.append(f"notch {s.notch_hz} Hz skipped at fs {out.fs} Hz")
    if s.fs_out:
        out = resample(out, s.fs_out)
    if s.lead_order:
        out = reorder_leads(out, s.lead_order)
    elif all(name in CLINICAL_LEADS for name in out.lead_names):
        out = reorder_leads(out, clinical_order(out.lead_names))
    if not np.all(np.isfinite(out.samples)):
        raise ContractError("preprocessing produced non-finite samples")
    return out, notes
