"""Signal bundles on disk, a synthetic ECG/EEG generator and dataset ingestion.

Bundle layout: one UTF-8 JSON manifest line terminated by ``\\n``, followed by
the samples as a row-major little-endian float32 ``n_channels x n_samples``
matrix.
"""
import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng as _rng
from .dsp import CLINICAL_LEADS, SignalRecord
from .errors import (BundleError, BundleInvariantError, DataError, ManifestError,
                     TruncatedPayloadError, VersionMismatchError)

FORMAT_VERSION = 1
INDEX_NAME = "index.tsv"
RATING_KEYS = ("valence", "arousal", "dominance")
_LE_F32 = np.dtype("<f4")


def _manifest_for(record, labels=None, extra=None):
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_channels": int(record.n_channels),
        "n_samples": int(record.n_samples),
        "fs_hz": float(record.fs),
        "lead_names": list(record.lead_names),
        "subject_id": record.subject_id,
        "labels": None if labels is None else {k: float(labels[k]) for k in RATING_KEYS},
    }
    manifest.update(extra or {})
    return manifest


def write_bundle(record, labels, path, **extra):
    """Write ``record`` (and optional rating labels) to ``path``.

    Extra keyword fields (e.g. ``modality="ECG"``) are stored in the manifest.
    """
    manifest = _manifest_for(record, labels, extra)
    line = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = np.ascontiguousarray(record.samples, dtype=_LE_F32).tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(line + b"\n")
        fh.write(payload)


def _parse_manifest(line, path):
    try:
        manifest = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ManifestError(f"{path}: malformed manifest: {exc}") from None
    if not isinstance(manifest, dict):
        raise ManifestError(f"{path}: manifest is not a JSON object")
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError(
            f"{path}: format_version {manifest.get('format_version')!r}, expected {FORMAT_VERSION}")
    for key in ("n_channels", "n_samples", "fs_hz", "lead_names"):
        if key not in manifest:
            raise ManifestError(f"{path}: manifest lacks {key!r}")
    if len(manifest["lead_names"]) != manifest["n_channels"]:
        raise BundleInvariantError(
            f"{path}: n_channels={manifest['n_channels']} but "
            f"{len(manifest['lead_names'])} lead names")
    if manifest["n_channels"] < 1 or manifest["n_samples"] < 1 or not manifest["fs_hz"] > 0:
        raise BundleInvariantError(f"{path}: non-positive dimensions or sampling rate")
    return manifest


def read_manifest(path):
    with open(path, "rb") as fh:
        return _parse_manifest(fh.readline(), path)


def read_bundle(path):
    """Return ``(record, labels)``; ``labels`` is a ratings dict or None."""
    with open(path, "rb") as fh:
        manifest = _parse_manifest(fh.readline(), path)
        payload = fh.read()
    expected = 4 * manifest["n_channels"] * manifest["n_samples"]
    if len(payload) < expected:
        raise TruncatedPayloadError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    if len(payload) > expected:
        raise BundleInvariantError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    samples = np.frombuffer(payload, dtype=_LE_F32).reshape(
        manifest["n_channels"], manifest["n_samples"]).astype(np.float32)
    record = SignalRecord(samples, manifest["fs_hz"], manifest["lead_names"],
                          manifest.get("subject_id"))
    return record, manifest.get("labels")


# --- synthetic signals ----------------------------------------------------------

# (offset s, width s, amplitude) of P, Q, R, S, T bumps relative to the R peak
BEAT_TEMPLATE = (
    (-0.20, 0.025, 0.15),
    (-0.035, 0.010, -0.15),
    (0.0, 0.012, 1.0),
    (0.035, 0.010, -0.25),
    (0.30, 0.050, 0.30),
)
DEFAULT_ECG_GAINS = (1.0, 1.2, 0.4, -0.8, 0.5, 0.8, 0.6, 0.9, 1.1, 1.3, 1.0, 0.8)


@dataclass
class SynthConfig:
    kind: str = "ecg"
    heart_rate_bpm: float = 60.0
    rhythm_hz: float = 10.0
    fs_hz: float = 500.0
    duration_s: float = 10.0
    n_channels: int = 12
    gains: Optional[tuple] = None
    noise_std: float = 0.01
    drift_amplitude: float = 0.1
    wave_gains: Optional[tuple] = None
    alternans: float = 0.0
    seed: int = 0
    lead_names: Optional[list] = None
    subject_id: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("ecg", "eeg"):
            raise DataError(f"kind must be 'ecg' or 'eeg', got {self.kind!r}")
        if min(self.heart_rate_bpm, self.rhythm_hz, self.fs_hz, self.duration_s) <= 0:
            raise DataError("synthetic rates and duration must be positive")
        if self.noise_std < 0:
            raise DataError("noise_std must be >= 0")
        if self.n_channels < 1:
            raise DataError("n_channels must be >= 1")
        n_parts = len(BEAT_TEMPLATE) if self.kind == "ecg" else 2
        if self.wave_gains is not None and len(self.wave_gains) != n_parts:
            raise DataError(f"wave_gains needs {n_parts} entries for {self.kind}"
                            " (P, Q, R, S, T or rhythm, slow)")

    def channel_gains(self):
        if self.gains is not None:
            g = np.asarray(self.gains, dtype=float)
            if g.shape != (self.n_channels,):
                raise DataError(f"gain vector has {g.size} entries for {self.n_channels} channels")
            return g
        if self.kind == "ecg":
            return np.resize(np.asarray(DEFAULT_ECG_GAINS), self.n_channels)
        return np.linspace(1.0, 0.5, self.n_channels)

    def names(self):
        if self.lead_names is not None:
            return list(self.lead_names)
        if self.kind == "ecg" and self.n_channels == 12:
            return list(CLINICAL_LEADS)
        prefix = "ECG" if self.kind == "ecg" else "EEG"
        return [f"{prefix}{i + 1}" for i in range(self.n_channels)]


def _ecg_waveform(cfg, t, gen):
    period = 60.0 / cfg.heart_rate_bpm
    n_beats = int(np.ceil(t[-1] / period)) + 2
    intervals = period * (1.0 + gen.uniform(-0.02, 0.02, size=n_beats))
    beats = 0.5 * period + np.concatenate([[0.0], np.cumsum(intervals[:-1])])
    wave = np.zeros_like(t)
    scales = cfg.wave_gains if cfg.wave_gains is not None else (1.0,) * len(BEAT_TEMPLATE)
    # every other beat is scaled by 1 + alternans
    beat_amp = 1.0 + cfg.alternans * (np.arange(n_beats) % 2)
    for (offset, width, amp), scale in zip(BEAT_TEMPLATE, scales):
        centers = beats + offset
        for c, a in zip(centers, amp * scale * beat_amp):
            lo, hi = np.searchsorted(t, [c - 5 * width, c + 5 * width])
            seg = t[lo:hi]
            wave[lo:hi] += a * np.exp(-0.5 * ((seg - c) / width) ** 2)
    return wave


def _eeg_waveform(cfg, t, gen, channel):
    phase = gen.uniform(0, 2 * np.pi)
    envelope = 1.0 + 0.5 * np.sin(2 * np.pi * 0.3 * t + gen.uniform(0, 2 * np.pi))
    rhythm, slow = cfg.wave_gains if cfg.wave_gains is not None else (1.0, 1.0)
    wave = rhythm * envelope * np.sin(2 * np.pi * cfg.rhythm_hz * t + phase)
    wave += slow * 0.3 * np.sin(2 * np.pi * 0.5 * cfg.rhythm_hz * t + phase * (channel + 1))
    return wave


def synth_record(cfg):
    """Deterministic quasi-periodic ECG-like (or rhythmic EEG-like) record."""
    n = int(round(cfg.duration_s * cfg.fs_hz))
    t = np.arange(n) / cfg.fs_hz
    gains = cfg.channel_gains()
    gen = _rng.stream(cfg.seed, 0xEC6)
    rows = []
    if cfg.kind == "ecg":
        base = _ecg_waveform(cfg, t, gen)
        for c in range(cfg.n_channels):
            rows.append(gains[c] * base)
    else:
        for c in range(cfg.n_channels):
            rows.append(gains[c] * _eeg_waveform(cfg, t, gen, c))
    data = np.stack(rows)
    drift_phase = gen.uniform(0, 2 * np.pi, size=(cfg.n_channels, 1))
    drift = cfg.drift_amplitude * np.sin(2 * np.pi * 0.2 * t[None, :] + drift_phase)
    data = data + gains[:, None] * drift
    if cfg.noise_std > 0:
        data = data + cfg.noise_std * gen.standard_normal(data.shape)
    return SignalRecord(data, cfg.fs_hz, cfg.names(), cfg.subject_id)


# --- ingestion -----------------------------------------------------------------

@dataclass(frozen=True)
class ModalityProfile:
    name: str
    min_channels: int
    max_channels: int
    min_fs: float = 50.0
    max_fs: float = 5000.0


MODALITIES = {
    "ECG": ModalityProfile("ECG", 1, 12),
    "EEG": ModalityProfile("EEG", 1, 64),
}


def validate_manifest(manifest, modality):
    """Raise DataError if ``manifest`` is unusable for ``modality``."""
    profile = MODALITIES[modality.upper()]
    declared = manifest.get("modality")
    if declared is not None and declared.upper() != profile.name:
        raise DataError(f"bundle declares modality {declared}, expected {profile.name}")
    c = manifest["n_channels"]
    if not profile.min_channels <= c <= profile.max_channels:
        raise DataError(
            f"{c} channels outside [{profile.min_channels}, {profile.max_channels}] for {profile.name}")
    fs = manifest["fs_hz"]
    if not profile.min_fs <= fs <= profile.max_fs:
        raise DataError(f"fs {fs} Hz cannot be brought to the supported rates")
    labels = manifest.get("labels")
    if labels is not None:
        for key in RATING_KEYS:
            value = labels.get(key)
            if value is None or not 1.0 <= float(value) <= 5.0:
                raise DataError(f"label {key}={value!r} outside the 1-5 rating scale")


@dataclass
class BundleItem:
    path: str
    record: SignalRecord
    labels: Optional[dict]
    split: Optional[str]


@dataclass
class IngestedDataset:
    """Validated bundle list; payloads are read lazily during iteration."""

    root: str
    modality: str
    entries: list = field(default_factory=list)
    report: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        for rel, split, _ in self.entries:
            record, labels = read_bundle(os.path.join(self.root, rel))
            yield BundleItem(rel, record, labels, split)

    def manifests(self):
        return {rel: manifest for rel, _, manifest in self.entries}


def read_index(root):
    """Parse ``index.tsv``: one relative path per line, optional split hint."""
    path = os.path.join(root, INDEX_NAME)
    rows = []
    if not os.path.exists(path):
        return rows
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            rows.append((parts[0], parts[1] if len(parts) > 1 and parts[1] else None))
    return rows


def write_index(root, rows):
    with open(os.path.join(root, INDEX_NAME), "w", encoding="utf-8") as fh:
        for rel, split in rows:
            fh.write(rel if split is None else f"{rel}\t{split}")
            fh.write("\n")


def ingest_external(root, modality):
    """Validate every bundle listed in ``root/index.tsv``.

    Per-file failures are collected in ``report`` as ``(path, message)``; a
    DataError is raised only when every listed file fails.
    """
    if modality.upper() not in MODALITIES:
        raise DataError(f"unknown modality {modality!r}")
    ds = IngestedDataset(root, modality.upper())
    rows = read_index(root)
    for rel, split in rows:
        full = os.path.join(root, rel)
        try:
            manifest = read_manifest(full)
            validate_manifest(manifest, modality)
            expected = 4 * manifest["n_channels"] * manifest["n_samples"]
            with open(full, "rb") as fh:
                header_len = len(fh.readline())
            actual = os.path.getsize(full) - header_len
            if actual < expected:
                raise TruncatedPayloadError(f"{full}: payload is {actual} bytes, expected {expected}")
            if actual > expected:
                raise BundleInvariantError(f"{full}: {actual - expected} trailing bytes")
        except (BundleError, DataError, OSError) as exc:
            ds.report.append((rel, str(exc)))
            continue
        ds.entries.append((rel, split, manifest))
    if rows and not ds.entries:
        lines = "; ".join(f"{p}: {m}" for p, m in ds.report)
        raise DataError(f"all {len(rows)} bundles failed validation: {lines}")
    return ds


# --- paired affect trials ------------------------------------------------------

EEG_CHANNELS_14 = ("AF3", "F7", "F3", "FC5", "T7", "P7", "O1",
                   "O2", "P8", "T8", "FC6", "F4", "F8", "AF4")
QRS = slice(1, 4)


def draw_ratings(gen):
    """Independent ratings per dimension: Low from {1, 2}, High from {3, 4, 5}."""
    out = {}
    for key in RATING_KEYS:
        high = bool(gen.integers(2))
        out[key] = float(gen.integers(3, 6) if high else gen.integers(1, 3))
    return out


def synth_affect_trial(subject_id, trial, ratings, seed=0, duration_s=10.0, fs_ecg=256.0,
                       fs_eeg=128.0, modulation=0.6, bpm=60.0):
    """One paired (ECG, EEG) trial whose beat or rhythm amplitude encodes the labels.

    Valence scales the QRS complex of every beat, dominance scales every
    other beat (alternans) and arousal scales the dominant EEG rhythm. Each
    High rating applies a factor ``1 + modulation``. Lead gains carry a
    per-subject jitter of +-10%. The ECG therefore sees valence and
    dominance only and the EEG sees arousal only.
    """
    subj = _rng.stream(_rng.derive_seed(seed, str(subject_id)), 0x5B)
    high = {k: float(ratings[k]) >= 3.0 for k in RATING_KEYS}

    gains = np.asarray(DEFAULT_ECG_GAINS) * subj.uniform(0.9, 1.1, size=12)
    wave = np.ones(len(BEAT_TEMPLATE))
    wave[QRS] *= 1.0 + modulation * high["valence"]
    trial_seed = _rng.derive_seed(seed, str(subject_id), trial)
    ecg = synth_record(SynthConfig(
        "ecg", heart_rate_bpm=bpm, fs_hz=fs_ecg, duration_s=duration_s, gains=tuple(gains),
        wave_gains=tuple(wave), alternans=modulation * high["dominance"], seed=trial_seed,
        subject_id=str(subject_id)))

    eeg_gains = np.linspace(1.0, 0.5, 14) * subj.uniform(0.9, 1.1, size=14)
    eeg = synth_record(SynthConfig(
        "eeg", fs_hz=fs_eeg, duration_s=duration_s, n_channels=14, gains=tuple(eeg_gains),
        wave_gains=(1.0 + modulation * high["arousal"], 1.0),
        seed=trial_seed + 1, lead_names=list(EEG_CHANNELS_14), subject_id=str(subject_id)))
    return ecg, eeg


def synth_affect_session(n_subjects, trials_per_subject, seed=0, **kw):
    """Yield ``(name, ratings, ecg, eeg)`` for a synthetic subject x trial grid."""
    for subj in range(n_subjects):
        sid = f"S{subj:02d}"
        for trial in range(trials_per_subject):
            ratings = draw_ratings(_rng.stream(seed, _rng.derive_seed(sid, trial)))
            ecg, eeg = synth_affect_trial(sid, trial, ratings, seed, **kw)
            yield f"{sid}_T{trial:02d}", ratings, ecg, eeg
