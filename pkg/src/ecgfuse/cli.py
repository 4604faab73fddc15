"""Command-line pipeline: synth, preprocess, pretrain, embed, finetune, evaluate.

Configuration is a flat mapping of dotted keys. Values are resolved as
defaults < ``--config`` JSON file < ``ECGFUSE_*`` environment < flags, and
every run writes the resolved mapping to ``<out>/run.json``. A ``run.json``
is itself accepted by ``--config``.

Exit codes: 0 success, 2 configuration error, 3 divergence, 4 data
validation failure.
"""
import argparse
import glob
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from . import autograd as ag
from . import rng as _rng
from .checkpoint import save_tensors
from .data_io import (SynthConfig, ingest_external, read_bundle, read_index, read_manifest,
                      synth_affect_session, synth_record, validate_manifest, write_bundle,
                      write_index)
from .dsp import PreprocessSettings, preprocess, segment, segment_chunks
from .encoder import EncoderConfig, EncoderState, encoder_forward
from .errors import (BundleError, ConfigError, ContractError, DataError, DivergenceError,
                     TooShortError)
from .fusion import (ClassifierHeads, FinetuneConfig, Trial, TrialLabel, embed_average,
                     finetune_loop, predict)
from .metrics import evaluate
from .plot import write_chart
from .pretrain import (MultiRateDataset, PretrainConfig, loss_csv, pretrain_loop,
                       resume_state, save_pretrain_checkpoint)

log = logging.getLogger("ecgfuse")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_DATA = 0, 2, 3, 4
ENV_PREFIX = "ECGFUSE_"
BUNDLE_EXT = ".bundle"
ALLOWED_NOTCH = (50.0, 60.0)

COMMON = {"seed": 0, "precision": 32}

ENCODER = {
    "encoder.layers": 2, "encoder.heads": 2, "encoder.d_model": 32, "encoder.t": 200,
    "encoder.dropout_p": 0.0, "encoder.max_channels": 32, "encoder.max_patches": 64,
}

DEFAULTS = {
    "synth": {
        "synth.kind": "ecg", "synth.n_records": 8, "synth.heart_rate_bpm": 60.0,
        "synth.rhythm_hz": 10.0, "synth.fs_hz": 500.0, "synth.duration_s": 10.0,
        "synth.n_channels": 12, "synth.noise_std": 0.01, "synth.drift_amplitude": 0.1,
        "synth.n_subjects": 20, "synth.trials_per_subject": 8, "synth.modulation": 0.6,
        "synth.fs_ecg": 256.0, "synth.fs_eeg": 128.0,
    },
    "preprocess": {
        "preprocess.bandpass_low": 0.5, "preprocess.bandpass_high": 40.0,
        "preprocess.order": 4, "preprocess.notch_hz": 50.0, "preprocess.notch_q": 30.0,
        "preprocess.fs_out": 200.0, "preprocess.lead_order": None, "preprocess.window": 200,
        "preprocess.modality": "ECG",
    },
    "pretrain": {
        **ENCODER,
        "pretrain.r": 0.5, "pretrain.r_c": 1.0 / 12.0, "pretrain.steps": 200,
        "pretrain.batch_size": 8, "pretrain.learning_rate": 1e-4, "pretrain.beta1": 0.9,
        "pretrain.beta2": 0.999, "pretrain.eps": 1e-8, "pretrain.log_every": 1,
        "pretrain.checkpoint_every": 50, "pretrain.divergence_limit": 1e6,
        "pretrain.multirate": False, "pretrain.n_patches": 10,
    },
    "embed": {"embed.modality": "ECG", "embed.n_patches": 10},
    "finetune": {
        **ENCODER,
        "finetune.epochs": 10, "finetune.batch_size": 8, "finetune.learning_rate": 1e-3,
        "finetune.dropout": 0.2, "finetune.gamma": 0.1, "finetune.step_size": 4,
        "finetune.hidden": 256, "finetune.unfreeze_encoders": False,
        "finetune.divergence_limit": 1e6, "finetune.n_patches": 10,
    },
    "evaluate": {"evaluate.grouping": "per-subject-mean", "evaluate.split": "test",
                 "evaluate.n_patches": 10},
}


# --- configuration -------------------------------------------------------------

def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _coerce(key, value, default):
    if default is None or value is None:
        return value
    try:
        if isinstance(default, bool):
            if isinstance(value, str):
                if value.lower() not in ("true", "false", "1", "0"):
                    raise ValueError(value)
                return value.lower() in ("true", "1")
            return bool(value)
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, str):
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot interpret {value!r} as {type(default).__name__}") from None
    return value


def load_config_file(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if isinstance(data, dict) and isinstance(data.get("config"), dict) and "command" in data:
        data = data["config"]
    if not isinstance(data, dict) or any(isinstance(v, dict) for v in data.values()):
        raise ConfigError(f"{path}: config must be a flat JSON object of dotted keys")
    return data


def env_key(key):
    return ENV_PREFIX + key.upper().replace(".", "__")


def resolve_config(command, file_values=None, env=None, flags=None):
    """Merge defaults, file, environment and flags for ``command``."""
    defaults = {**COMMON, **DEFAULTS[command]}
    cfg = dict(defaults)
    env = os.environ if env is None else env
    layers = [file_values or {}, {k: _parse_value(env[env_key(k)]) for k in defaults
                                  if env_key(k) in env}, flags or {}]
    for layer in layers:
        for key, value in layer.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key {key!r} for {command}")
            cfg[key] = _coerce(key, value, defaults[key])
    if cfg["precision"] not in (32, 64):
        raise ConfigError(f"precision must be 32 or 64, got {cfg['precision']}")
    return cfg


def _section(cfg, prefix):
    n = len(prefix) + 1
    return {k[n:]: v for k, v in cfg.items() if k.startswith(prefix + ".")}


def encoder_config(cfg):
    try:
        return EncoderConfig(**_section(cfg, "encoder"))
    except ContractError as exc:
        raise ConfigError(str(exc)) from None


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_run_json(out, command, cfg, inputs):
    write_json(os.path.join(out, "run.json"),
               {"command": command, "config": cfg, "inputs": inputs, "version": __version__})


# --- data helpers ----------------------------------------------------------------

def _bundle_name(*parts):
    return "_".join(str(p) for p in parts) + BUNDLE_EXT


def _list_bundles(root):
    """Relative bundle paths from ``index.tsv``, else every ``*.bundle`` in ``root``."""
    rows = read_index(root)
    if rows:
        return rows
    names = sorted(os.path.basename(p) for p in glob.glob(os.path.join(root, "*" + BUNDLE_EXT)))
    return [(n, None) for n in names]


def load_grids(root, modality, n_patches, window=200):
    ds = ingest_external(root, modality)
    for rel, message in ds.report:
        log.warning("skipped %s: %s", rel, message)
    grids, names = [], []
    for item in ds:
        try:
            chunks = segment_chunks(item.record, window, n_patches)
        except TooShortError as exc:
            log.warning("skipped %s: %s", item.path, exc)
            continue
        grids.extend(chunks)
        names.extend(f"{item.path}#{k}" for k in range(len(chunks)))
    return grids, names, ds


def load_paired_trials(root, n_patches, window=200):
    """Pair ``ecg/<name>`` with ``eeg/<name>``; unmatched or unusable trials are skipped.

    Returns ``(trials, report)`` where ``report`` lists ``(name, reason)``.
    """
    sides = {m: os.path.join(root, m.lower()) for m in ("ECG", "EEG")}
    for m, d in sides.items():
        if not os.path.isdir(d):
            raise DataError(f"paired data needs {d}/")
    names = {m: {rel for rel, _ in _list_bundles(d)} for m, d in sides.items()}
    trials, report = [], []
    for name in sorted(names["ECG"] | names["EEG"]):
        missing = [m for m in sides if name not in names[m]]
        if missing:
            report.append((name, f"missing modality {', '.join(missing)}"))
            continue
        try:
            grids, labels = {}, None
            for m, d in sides.items():
                path = os.path.join(d, name)
                validate_manifest(read_manifest(path), m)
                record, lab = read_bundle(path)
                labels = labels or lab
                grid = segment(record, window)
                if grid.n_patches < n_patches:
                    raise DataError(f"{m} has {grid.n_patches} patches, need {n_patches}")
                grids[m] = grid.replace(grid.data[:, :n_patches].copy())
                subject = record.subject_id
            if labels is None:
                raise DataError("no rating labels")
            label = TrialLabel.from_ratings(subject if subject is not None else name, labels)
            label.binary()
        except (BundleError, DataError, TooShortError, OSError) as exc:
            report.append((name, str(exc)))
            continue
        trials.append(Trial(grids["ECG"], grids["EEG"], label, os.path.splitext(name)[0]))
    for name, reason in report:
        log.warning("trial %s skipped: %s", name, reason)
    return trials, report


def _load_encoder(path, cfg, seed, stream):
    if path:
        state, _, _ = EncoderState.load(path)
        return state
    return EncoderState.initialize(encoder_config(cfg), _rng.derive_seed(seed, stream))


def _latest_checkpoint(directory):
    found = sorted(glob.glob(os.path.join(directory, "step_*.ckpt")))
    return found[-1] if found else None


# --- commands -------------------------------------------------------------------

def cmd_synth(args, cfg):
    s = _section(cfg, "synth")
    out = args.out
    os.makedirs(out, exist_ok=True)
    seed = cfg["seed"]
    count = 0
    if s["kind"] == "paired":
        rows = {"ecg": [], "eeg": []}
        for m in rows:
            os.makedirs(os.path.join(out, m), exist_ok=True)
        session = synth_affect_session(
            s["n_subjects"], s["trials_per_subject"], seed, duration_s=s["duration_s"],
            fs_ecg=s["fs_ecg"], fs_eeg=s["fs_eeg"], modulation=s["modulation"],
            bpm=s["heart_rate_bpm"])
        for name, ratings, ecg, eeg in session:
            name += BUNDLE_EXT
            write_bundle(ecg, ratings, os.path.join(out, "ecg", name), modality="ECG")
            write_bundle(eeg, ratings, os.path.join(out, "eeg", name), modality="EEG")
            rows["ecg"].append((name, None))
            rows["eeg"].append((name, None))
            count += 1
        for m, r in rows.items():
            write_index(os.path.join(out, m), r)
    elif s["kind"] in ("ecg", "eeg"):
        rows = []
        for i in range(s["n_records"]):
            rec = synth_record(SynthConfig(
                s["kind"], s["heart_rate_bpm"], s["rhythm_hz"], s["fs_hz"], s["duration_s"],
                s["n_channels"], None, s["noise_std"], s["drift_amplitude"],
                seed=_rng.derive_seed(seed, i), subject_id=f"R{i:03d}"))
            name = _bundle_name("R", f"{i:03d}")
            write_bundle(rec, None, os.path.join(out, name), modality=s["kind"].upper())
            rows.append((name, None))
        write_index(out, rows)
        count = len(rows)
    else:
        raise ConfigError(f"synth.kind must be ecg, eeg or paired, got {s['kind']!r}")
    write_run_json(out, "synth", cfg, {})
    print(f"wrote {count} {s['kind']} record(s) to {out}")
    return EXIT_OK


def _preprocess_dir(src, dst, modality, settings, window):
    os.makedirs(dst, exist_ok=True)
    summary = {"n_input": 0, "n_written": 0, "n_failed": 0, "dropped_samples": 0,
               "notes": [], "report": []}
    rows = _list_bundles(src)
    summary["n_input"] = len(rows)
    out_rows = []
    for rel, split in rows:
        try:
            manifest = read_manifest(os.path.join(src, rel))
            validate_manifest(manifest, modality)
            record, labels = read_bundle(os.path.join(src, rel))
            rec, notes = preprocess(record, settings)
            n = rec.n_samples // window
            if n == 0:
                raise TooShortError(f"{rec.n_samples} samples after resampling, window is {window}")
            summary["dropped_samples"] += rec.n_samples - n * window
            rec = rec.with_samples(rec.samples[:, : n * window])
            extra = {k: manifest[k] for k in ("modality",) if k in manifest}
            target = os.path.join(dst, rel)
            os.makedirs(os.path.dirname(target) or dst, exist_ok=True)
            write_bundle(rec, labels, target, **extra)
            out_rows.append((rel, split))
            summary["notes"].extend(f"{rel}: {note}" for note in notes)
        except (BundleError, DataError, TooShortError, ContractError, OSError) as exc:
            summary["report"].append({"path": rel, "error": str(exc)})
            continue
    summary["n_written"] = len(out_rows)
    summary["n_failed"] = len(summary["report"])
    write_index(dst, out_rows)
    return summary


def cmd_preprocess(args, cfg):
    p = _section(cfg, "preprocess")
    if p["notch_hz"] is not None and float(p["notch_hz"]) not in ALLOWED_NOTCH:
        raise ConfigError(f"preprocess.notch_hz must be 50 or 60 (or null), got {p['notch_hz']}")
    if p["lead_order"] is not None and not isinstance(p["lead_order"], list):
        raise ConfigError("preprocess.lead_order must be a JSON list of lead names")
    settings = PreprocessSettings(p["bandpass_low"], p["bandpass_high"], p["order"],
                                  p["notch_hz"], p["notch_q"], p["fs_out"], p["lead_order"])
    if not os.path.isdir(args.input):
        raise DataError(f"input directory {args.input} does not exist")
    os.makedirs(args.out, exist_ok=True)
    paired = all(os.path.isdir(os.path.join(args.input, m)) for m in ("ecg", "eeg"))
    if paired:
        summary = {}
        for m in ("ecg", "eeg"):
            # lead_order applies to the ECG side only
            s = settings if m == "ecg" else PreprocessSettings(**{**settings.__dict__, "lead_order": None})
            summary[m] = _preprocess_dir(os.path.join(args.input, m), os.path.join(args.out, m),
                                         m.upper(), s, p["window"])
        parts = list(summary.values())
    else:
        summary = _preprocess_dir(args.input, args.out, p["modality"], settings, p["window"])
        parts = [summary]
    write_json(os.path.join(args.out, "summary.json"), summary)
    write_run_json(args.out, "preprocess", cfg, {"input": args.input})
    for part in parts:
        for entry in part["report"]:
            log.warning("%s: %s", entry["path"], entry["error"])
    if any(part["n_input"] and not part["n_written"] for part in parts):
        print(f"all inputs failed validation; see {os.path.join(args.out, 'summary.json')}",
              file=sys.stderr)
        return EXIT_DATA
    print(f"preprocessed {sum(x['n_written'] for x in parts)} record(s) into {args.out}")
    return EXIT_OK


def pretrain_config(cfg):
    p = _section(cfg, "pretrain")
    try:
        return PretrainConfig(
            r=p["r"], r_c=p["r_c"], steps=p["steps"], batch_size=p["batch_size"],
            learning_rate=p["learning_rate"], betas=(p["beta1"], p["beta2"]), eps=p["eps"],
            seed=cfg["seed"], log_every=p["log_every"], checkpoint_every=p["checkpoint_every"],
            divergence_limit=p["divergence_limit"])
    except ContractError as exc:
        raise ConfigError(str(exc)) from None


def cmd_pretrain(args, cfg):
    pcfg = pretrain_config(cfg)
    p = _section(cfg, "pretrain")
    out = args.out
    ckpt_dir = os.path.join(out, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    write_run_json(out, "pretrain", cfg, {"data": args.data, "resume": args.resume})

    if p["multirate"]:
        ds = ingest_external(args.data, "ECG")
        dataset = MultiRateDataset([item.record for item in ds], seed=cfg["seed"],
                                   window=cfg["encoder.t"], n_patches=p["n_patches"])
    else:
        dataset, _, _ = load_grids(args.data, "ECG", p["n_patches"], cfg["encoder.t"])
        if not dataset and pcfg.steps > 0:
            raise DataError(f"no usable ECG grids in {args.data}")
    if args.resume:
        state, cursor = resume_state(args.resume, pcfg)
    else:
        state, cursor = EncoderState.initialize(encoder_config(cfg), cfg["seed"]), (0, 0, 0)

    curve = []
    status = EXIT_OK
    try:
        result = pretrain_loop(dataset, state, pcfg, ckpt_dir, cursor, on_step=curve.append)
    except DivergenceError as exc:
        print(f"diverged at step {exc.step}: {exc}; last checkpoint: "
              f"{_latest_checkpoint(ckpt_dir) or 'none'}", file=sys.stderr)
        status = EXIT_DIVERGED
    with open(os.path.join(out, "loss.csv"), "w", encoding="utf-8") as fh:
        fh.write(loss_csv(curve, pcfg.log_every))
    logged = [lb for lb in curve if lb.step % pcfg.log_every == 0]
    write_chart(os.path.join(out, "loss.svg"),
                {"l_total": ([lb.step for lb in logged], [lb.l_total for lb in logged])},
                title="Reconstruction loss in pretraining", xlabel="step", ylabel="l_total")
    if status == EXIT_OK:
        step, epoch, position = result.cursor
        save_pretrain_checkpoint(os.path.join(out, "encoder.ckpt"), state,
                                 getattr(state, "optimizer", None), step, epoch, position, pcfg)
        if curve:
            print(f"pretrained {len(curve)} step(s); l_total {curve[0].l_total:.6g} -> "
                  f"{curve[-1].l_total:.6g}")
    return status


def cmd_embed(args, cfg):
    e = _section(cfg, "embed")
    state, _, _ = EncoderState.load(args.ckpt)
    grids, names, _ = load_grids(args.data, e["modality"], e["n_patches"], state.config.t)
    os.makedirs(args.out, exist_ok=True)
    arrays = {}
    with ag.no_grad():
        for name, grid in zip(names, grids):
            arrays[name] = embed_average(encoder_forward(grid, state), e["modality"],
                                         args.ckpt).values
    save_tensors(os.path.join(args.out, "embeddings.ckpt"), arrays,
                 {"kind": "embeddings", "modality": e["modality"].upper(),
                  "encoder": os.path.basename(args.ckpt)})
    write_run_json(args.out, "embed", cfg, {"ckpt": args.ckpt, "data": args.data})
    print(f"embedded {len(arrays)} grid(s) into {args.out}")
    return EXIT_OK


def finetune_config(cfg):
    f = _section(cfg, "finetune")
    try:
        return FinetuneConfig(
            epochs=f["epochs"], batch_size=f["batch_size"], learning_rate=f["learning_rate"],
            dropout=f["dropout"], gamma=f["gamma"], step_size=f["step_size"],
            hidden=f["hidden"], unfreeze_encoders=f["unfreeze_encoders"], seed=cfg["seed"],
            divergence_limit=f["divergence_limit"])
    except ContractError as exc:
        raise ConfigError(str(exc)) from None


def _curve_csv(result):
    lines = ["epoch,train_loss,val_loss"]
    for i, (tr, va) in enumerate(zip(result.train_loss, result.val_loss), start=1):
        lines.append(f"{i},{tr!r},{va!r}")
    return "\n".join(lines) + "\n"


def cmd_finetune(args, cfg):
    fcfg = finetune_config(cfg)
    out = args.out
    os.makedirs(out, exist_ok=True)
    write_run_json(out, "finetune", cfg, {"data": args.data, "ecg_ckpt": args.ecg_ckpt,
                                          "eeg_ckpt": args.eeg_ckpt})
    trials, report = load_paired_trials(args.data, cfg["finetune.n_patches"], cfg["encoder.t"])
    if not trials:
        raise DataError(f"no usable paired trials in {args.data}")
    ecg = _load_encoder(args.ecg_ckpt, cfg, cfg["seed"], "ecg")
    eeg = _load_encoder(args.eeg_ckpt, cfg, cfg["seed"], "eeg")
    try:
        result = finetune_loop(trials, ecg, eeg, fcfg)
    except DivergenceError as exc:
        print(f"diverged at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    result.heads.save(os.path.join(out, "heads.ckpt"), {"finetune_config": fcfg.to_dict()})
    ecg.save(os.path.join(out, "ecg_encoder.ckpt"))
    eeg.save(os.path.join(out, "eeg_encoder.ckpt"))
    write_json(os.path.join(out, "split.json"),
               {**result.split, "skipped": [{"trial": n, "reason": r} for n, r in report]})
    with open(os.path.join(out, "loss.csv"), "w", encoding="utf-8") as fh:
        fh.write(_curve_csv(result))
    epochs = list(range(1, len(result.train_loss) + 1))
    write_chart(os.path.join(out, "loss.svg"),
                {"train": (epochs, result.train_loss), "validation": (epochs, result.val_loss)},
                title="Training and validation loss", xlabel="epoch", ylabel="BCE")
    print(f"fine-tuned on {len(trials)} trial(s) ({len(report)} skipped); heads in {out}")
    return EXIT_OK


def cmd_evaluate(args, cfg):
    ev = _section(cfg, "evaluate")
    if ev["grouping"] not in ("pooled", "per-subject-mean"):
        raise ConfigError(f"grouping must be pooled or per-subject-mean, got {ev['grouping']!r}")
    model_dir = os.path.dirname(os.path.abspath(args.heads))
    heads, _ = ClassifierHeads.load(args.heads)
    ecg, _, _ = EncoderState.load(args.ecg_ckpt or os.path.join(model_dir, "ecg_encoder.ckpt"))
    eeg, _, _ = EncoderState.load(args.eeg_ckpt or os.path.join(model_dir, "eeg_encoder.ckpt"))
    trials, report = load_paired_trials(args.data, ev["n_patches"], ecg.config.t)
    split_path = os.path.join(model_dir, "split.json")
    if ev["split"] != "all":
        if not os.path.exists(split_path):
            raise ConfigError(f"evaluate.split={ev['split']} needs {split_path}")
        with open(split_path, encoding="utf-8") as fh:
            keep = set(json.load(fh)[ev["split"]])
        trials = [t for t in trials if t.subject_id in keep]
    if not trials:
        raise DataError("no trials to evaluate")
    probs = predict(trials, ecg, eeg, heads)
    targets = np.stack([t.label.binary() for t in trials])
    metrics = evaluate(probs, targets, [t.subject_id for t in trials], ev["grouping"])
    os.makedirs(args.out, exist_ok=True)
    doc = metrics.to_dict()
    doc["config"] = {**cfg, "n_skipped_trials": len(report)}
    write_json(os.path.join(args.out, "metrics.json"), doc)
    write_run_json(args.out, "evaluate", cfg, {"heads": args.heads, "data": args.data})
    for dim, m in metrics.dimensions.items():
        auc = "undefined" if m.auc is None else f"{m.auc:.4f}"
        f1 = "undefined" if m.f1 is None else f"{m.f1:.4f}"
        print(f"{dim:<10} acc {m.acc:.4f}  f1 {f1}  auc {auc}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "pretrain": cmd_pretrain,
            "embed": cmd_embed, "finetune": cmd_finetune, "evaluate": cmd_evaluate}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser():
    parser = _Parser(prog="ecgfuse", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="flat dotted-key JSON config (or a run.json)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--precision", type=int, choices=(32, 64))
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    common(sub.add_parser("synth", help="write synthetic ECG, EEG or paired bundles"))
    p = common(sub.add_parser("preprocess", help="filter, resample, reorder and trim bundles"))
    p.add_argument("--input", required=True)
    p.add_argument("--fs-out", type=float)
    p.add_argument("--notch-hz", type=float)
    p.add_argument("--lead-order", help="comma-separated lead names")
    p = common(sub.add_parser("pretrain", help="masked-reconstruction pretraining"))
    p.add_argument("--data", required=True)
    p.add_argument("--resume")
    p = common(sub.add_parser("embed", help="channel-averaged embeddings from an encoder"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p = common(sub.add_parser("finetune", help="train the fusion heads on paired trials"))
    p.add_argument("--data", required=True)
    p.add_argument("--ecg-ckpt")
    p.add_argument("--eeg-ckpt")
    p = common(sub.add_parser("evaluate", help="score fused predictions"))
    p.add_argument("--heads", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--ecg-ckpt")
    p.add_argument("--eeg-ckpt")
    p.add_argument("--grouping", choices=("pooled", "per-subject-mean"))
    return parser


def _flag_values(args):
    flags = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        flags[key.strip()] = _parse_value(value)
    if args.seed is not None:
        flags["seed"] = args.seed
    if args.precision is not None:
        flags["precision"] = args.precision
    if args.command == "preprocess":
        if args.fs_out is not None:
            flags["preprocess.fs_out"] = args.fs_out
        if args.notch_hz is not None:
            flags["preprocess.notch_hz"] = args.notch_hz
        if args.lead_order:
            flags["preprocess.lead_order"] = [s.strip() for s in args.lead_order.split(",")]
    if args.command == "evaluate" and args.grouping:
        flags["evaluate.grouping"] = args.grouping
    return flags


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        file_values = load_config_file(args.config) if args.config else None
        cfg = resolve_config(args.command, file_values, flags=_flag_values(args))
        with ag.precision(cfg["precision"]):
            return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, BundleError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ContractError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
