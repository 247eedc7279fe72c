"""Command-line interface: one binary, one subcommand per pipeline stage."""
import argparse
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from jax import config

import mlkws.logs as lg
from mlkws.beamforming.fixed import apply_beamformer, design_look_beamformers
from mlkws.io.config import RunConfig, config_hash, load_config, save_config
from mlkws.io.manifest import (
    ConfigHashMismatch,
    check_config_hash,
    load_audio,
    read_manifest,
)
from mlkws.io.reports import write_enhancement_report, write_wakeup_report
from mlkws.io.wav import MultiChannelWaveform, read_wav, write_wav
from mlkws.models.kws import FbankNorm, channel_features, kws_from_checkpoint
from mlkws.models.mlenet import (
    assemble_features,
    enhance_waveform,
    mlenet_config,
    mlenet_from_checkpoint,
)
from mlkws.nn.checkpoint import Checkpoint, load_checkpoint
from mlkws.nn.gradcheck import TOLERANCE
from mlkws.simulation.dataset import generate_dataset
from mlkws.training.diagnostics import gradient_checks
from mlkws.training.enhancement import train_mlenet
from mlkws.training.evaluation import (
    evaluate_kws_systems,
    evaluate_si_snr_buckets,
    kws_scorers,
)
from mlkws.training.kws import joint_train, train_kws
from mlkws.transforms.stft import istft_numpy, stft_numpy


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--seed", type=int, help="seed (defaults to the config seed)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument(
        "--jobs", type=int, default=1, help="worker threads (default 1)"
    )
    common.add_argument(
        "--force", action="store_true", help="accept artifacts of another config hash"
    )
    manifest = argparse.ArgumentParser(add_help=False)
    manifest.add_argument(
        "--manifest", required=True, help="manifest.jsonl or its directory"
    )
    resume = argparse.ArgumentParser(add_help=False)
    resume.add_argument("--resume", help="checkpoint to continue training from")

    parser = argparse.ArgumentParser(
        prog="mlkws",
        description="Multi-look speech enhancement and keyword spotting pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    sub.add_parser("simulate", parents=[common], help="simulate a dataset")
    sub.add_parser(
        "features", parents=[common, manifest], help="dump network input features"
    )
    sub.add_parser(
        "beamform", parents=[common, manifest], help="delay-and-sum every look"
    )
    p = sub.add_parser(
        "train-enhance",
        parents=[common, manifest, resume],
        help="train the enhancement front-end",
    )
    p.add_argument("--mode", choices=("mlenet", "dae"), help="overrides training.mode")
    sub.add_parser(
        "train-kws",
        parents=[common, manifest, resume],
        help="pre-train the keyword classifier",
    )
    p = sub.add_parser(
        "joint-train",
        parents=[common, manifest, resume],
        help="fine-tune front-end, fusion and classifier jointly",
    )
    p.add_argument("--kws-checkpoint", required=True)
    p.add_argument("--mlenet-checkpoint")
    p = sub.add_parser("enhance", parents=[common], help="enhance a recording")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="multichannel WAV")
    p.add_argument("--look-deg", type=float, help="target azimuth for a DAE model")
    p.add_argument("--dump-masks", action="store_true", help="write masks as .npy")
    p = sub.add_parser(
        "evaluate-enhance",
        parents=[common, manifest],
        help="SI-SNR per condition bucket",
    )
    p.add_argument("--mlenet-checkpoint")
    p.add_argument("--dae-checkpoint")
    p.add_argument("--joint-checkpoint")
    p = sub.add_parser(
        "evaluate-kws", parents=[common, manifest], help="wake-up accuracy"
    )
    p.add_argument("--kws-checkpoint", required=True)
    p.add_argument("--mlenet-checkpoint")
    p.add_argument("--dae-checkpoint")
    p.add_argument(
        "--joint-checkpoint", action="append", default=[], help="repeatable"
    )
    sub.add_parser("grad-check", parents=[common], help="finite-difference checks")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run a subcommand.

    Returns:
        int: 0 on success, 1 on failure (with one ``error: <Name>: <message>`` line on
        stderr). Usage errors exit with status 2.
    """
    args = build_parser().parse_args(argv)
    config.update("jax_enable_x64", True)
    try:
        if args.jobs < 1:
            raise ValueError(f"--jobs={args.jobs} must be positive")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        lg.setup_logging(log_dir=out)
        run = load_config(args.config)
        seed = run.seed if args.seed is None else args.seed
        return HANDLERS[args.command](args, run, seed, out)
    except Exception as e:
        message = " ".join(str(e).split())
        print(f"error: {type(e).__name__}: {message}", file=sys.stderr)
        return 1


def _simulate(args, run: RunConfig, seed: int, out: Path) -> int:
    save_config(run, out / "config.json")
    rows = generate_dataset(run, seed, out, args.jobs)
    print(f"{len(rows)} utterances written to {out}")
    return 0


def _features(args, run: RunConfig, seed: int, out: Path) -> int:
    rows = _manifest(args, run)
    cfg = mlenet_config(run)
    norm = FbankNorm(np.zeros(run.fbank.n_mels), np.ones(run.fbank.n_mels))
    (out / "features").mkdir(parents=True, exist_ok=True)
    for row in rows:
        mixture, _ = load_audio(row)
        specs = stft_numpy(mixture, cfg.stft)
        mic = mixture[cfg.reference_mic]
        np.savez(
            out / "features" / f"{row['id']}.npz",
            mlenet=assemble_features(specs, cfg).astype(np.float32),
            fbank=channel_features(mic, norm, run.fbank).astype(np.float32),
        )
    lg.info_log(f"Features of {len(rows)} utterances written to {out / 'features'}")
    return 0


def _beamform(args, run: RunConfig, seed: int, out: Path) -> int:
    rows = _manifest(args, run)
    ref = run.spatial.reference_mic
    beams = design_look_beamformers(
        run.geometry, run.looks.azimuths, run.stft, reference_mic=ref
    )
    (out / "beamform").mkdir(parents=True, exist_ok=True)
    for row in rows:
        specs = stft_numpy(load_audio(row)[0], run.stft)
        waves = [istft_numpy(apply_beamformer(b, specs), run.stft) for b in beams]
        path = out / "beamform" / f"{row['id']}_fbf.wav"
        write_wav(path, MultiChannelWaveform(np.stack(waves)))
    lg.info_log(f"Beamformed {len(rows)} utterances into {out / 'beamform'}")
    return 0


def _train_enhance(args, run: RunConfig, seed: int, out: Path) -> int:
    rows = _manifest(args, run)
    result = train_mlenet(rows, run, seed, out, args.resume, args.mode, args.jobs)
    print(result.checkpoint)
    return 0


def _train_kws(args, run: RunConfig, seed: int, out: Path) -> int:
    rows = _manifest(args, run)
    result = train_kws(rows, run, seed, out, args.resume, args.jobs)
    print(result.checkpoint)
    return 0


def _joint_train(args, run: RunConfig, seed: int, out: Path) -> int:
    rows = _manifest(args, run)
    result = joint_train(
        rows,
        run,
        seed,
        out,
        args.kws_checkpoint,
        args.mlenet_checkpoint,
        args.resume,
        args.jobs,
        args.force,
    )
    print(result.checkpoint)
    return 0


def _enhance(args, run: RunConfig, seed: int, out: Path) -> int:
    model = mlenet_from_checkpoint(_checkpoint(args.checkpoint, run, args.force), run)
    wav = read_wav(args.input)
    mixture = MultiChannelWaveform(wav.samples.astype(np.float64), wav.sample_rate)
    stem = Path(args.input).stem
    if model.cfg.mode == "dae":
        if args.look_deg is None:
            raise ValueError("A dae model needs --look-deg")
        looks = (args.look_deg,)
        waves, masks = enhance_waveform(model, mixture, looks)
    else:
        looks = model.cfg.looks.azimuths
        waves, masks = enhance_waveform(model, mixture)
    for theta, wave in zip(looks, waves):
        write_wav(out / f"{stem}_look{theta:g}.wav", MultiChannelWaveform(wave[None]))
    if args.dump_masks:
        np.save(out / f"{stem}_masks.npy", masks.astype(np.float32))
    lg.info_log(f"{len(waves)} enhanced outputs of {args.input} written to {out}")
    return 0


def _evaluate_enhance(args, run: RunConfig, seed: int, out: Path) -> int:
    rows = _manifest(args, run)
    models = {}
    for name in ("mlenet", "dae", "joint"):
        path = getattr(args, f"{name}_checkpoint")
        if path is not None:
            ckpt = _checkpoint(path, run, args.force)
            models[name] = mlenet_from_checkpoint(ckpt, run)
    report = evaluate_si_snr_buckets(rows, run, jobs=args.jobs, **models)
    table = write_enhancement_report(report, out, config_hash(run))
    print(table.format())
    return 0


def _evaluate_kws(args, run: RunConfig, seed: int, out: Path) -> int:
    rows = _manifest(args, run)
    kws = kws_from_checkpoint(_checkpoint(args.kws_checkpoint, run, args.force), run)
    models = {}
    for name in ("mlenet", "dae"):
        path = getattr(args, f"{name}_checkpoint")
        if path is not None:
            ckpt = _checkpoint(path, run, args.force)
            models[name] = mlenet_from_checkpoint(ckpt, run)
    joints = [_checkpoint(p, run, args.force) for p in args.joint_checkpoint]
    scorers = kws_scorers(run, kws, joints=joints, **models)
    table, sweep = evaluate_kws_systems(rows, run, scorers, args.jobs)
    metrics = write_wakeup_report(table, sweep, out, config_hash(run))
    print(metrics.format())
    return 0


def _grad_check(args, run: RunConfig, seed: int, out: Path) -> int:
    results = gradient_checks(seed)
    for r in results:
        print(f"{r.name:<28} {r.max_rel_error:.3e} ({r.coords} coordinates)")
    worst = max(r.max_rel_error for r in results)
    print(f"max relative error {worst:.3e} (tolerance {TOLERANCE:g})")
    return 0 if all(r.passed for r in results) else 1


def _manifest(args, run: RunConfig) -> List[dict]:
    rows = read_manifest(args.manifest)
    check_config_hash(rows, config_hash(run, "manifest"), args.force)
    return rows


def _checkpoint(path, run: RunConfig, force: bool) -> Checkpoint:
    ckpt = load_checkpoint(path)
    found, expected = ckpt.metadata.get("model_hash"), config_hash(run, "model")
    if found != expected and not force:
        raise ConfigHashMismatch(
            f"checkpoint {path} model hash {found} does not match {expected} "
            "(use --force to override)"
        )
    return ckpt


HANDLERS = {
    "simulate": _simulate,
    "features": _features,
    "beamform": _beamform,
    "train-enhance": _train_enhance,
    "train-kws": _train_kws,
    "joint-train": _joint_train,
    "enhance": _enhance,
    "evaluate-enhance": _evaluate_enhance,
    "evaluate-kws": _evaluate_kws,
    "grad-check": _grad_check,
}
