import warnings
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

import mlkws.logs as lg
from mlkws.io.config import RunConfig
from mlkws.io.manifest import bucket_names, condition_bucket, load_audio
from mlkws.io.wav import MultiChannelWaveform
from mlkws.models.kws import KwsModel, kws_from_checkpoint, score_channels
from mlkws.models.mlenet import (
    MlenetModel,
    enhance_oracle_dae,
    enhance_waveform,
    mlenet_from_checkpoint,
)
from mlkws.nn.checkpoint import Checkpoint
from mlkws.training.assignment import assign_targets, is_off_target
from mlkws.training.kws import (
    JointSetup,
    example_arrays,
    joint_score,
    prepare_joint_example,
)
from mlkws.training.losses import si_snr_numpy

RAW = "raw"
DAE = "DAE"
MLENET_PRETRAIN = "MLENet pre-train"
MLENET_JOINT = "MLENet joint"

RAW_KWS = "raw+KWS"
DAE_KWS = "DAE+KWS"
MLENET_PLUS_KWS = "MLENet+KWS"


class UtteranceScore(NamedTuple):
    """Enhancement score of one utterance and system."""

    id: str
    bucket: str
    system: str
    si_snr_db: float
    off_target: bool


class BucketMean(NamedTuple):
    """Mean SI-SNR of a system over a condition bucket."""

    bucket: str
    system: str
    mean_si_snr_db: float
    n: int


class EnhancementReport(NamedTuple):
    """Bucket means (absent buckets omitted) and per-utterance rows."""

    means: Tuple[BucketMean, ...]
    utterances: Tuple[UtteranceScore, ...]


class WakeupRow(NamedTuple):
    """Wake-up accuracy of a system in a condition bucket.

    Attributes:
        system (str): System name.

        bucket (str): Condition bucket.

        accuracy (float): Share of keyword utterances scored above the threshold.

        fa_count (int): Negatives scored above the threshold.

        off_target_pct (float): Percentage of keyword utterances whose target is the
            nearest source of no look direction.

        n (int): Keyword utterances in the bucket.

        threshold (float): Decision threshold.
    """

    system: str
    bucket: str
    accuracy: float
    fa_count: int
    off_target_pct: float
    n: int
    threshold: float


class SweepPoint(NamedTuple):
    system: str
    threshold: float
    fa_count: int
    accuracy: float


def off_target_flag(row: dict, run: RunConfig) -> bool:
    """Whether the target of an utterance reaches none of the look outputs."""
    return is_off_target(assign_targets(run.looks, row["doas_deg"]))


def _parallel(fn, items, jobs: int) -> list:
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(fn, items))


def evaluate_si_snr_buckets(
    rows: Sequence[dict],
    run: RunConfig,
    mlenet: Optional[MlenetModel] = None,
    dae: Optional[MlenetModel] = None,
    joint: Optional[MlenetModel] = None,
    jobs: int = 1,
) -> EnhancementReport:
    r"""Mean SI-SNR against the target reference per condition bucket.

    Systems are the raw reference microphone, the DAE front-end steered to the oracle
    target direction, and the best look output of the pre-trained and jointly trained
    multi-look front-ends; systems without a model are omitted. Buckets follow
    :func:`~mlkws.io.manifest.condition_bucket`; a bucket without utterances is left
    out of the means with a warning instead of being reported as zero.

    Args:
        rows (Sequence[dict]): Manifest rows.

        run (RunConfig): Run configuration.

        mlenet (MlenetModel, optional): Pre-trained multi-look front-end.

        dae (MlenetModel, optional): DAE front-end.

        joint (MlenetModel, optional): Jointly fine-tuned multi-look front-end.

        jobs (int, optional): Utterances evaluated in parallel. Defaults to 1.

    Raises:
        ValueError: No rows.

    Returns:
        EnhancementReport: Bucket means and per-utterance scores.
    """
    if not rows:
        raise ValueError("Enhancement evaluation needs at least one utterance")
    split = run.evaluation.sir_split_db
    ref = run.spatial.reference_mic
    systems: List[Tuple[str, Callable]] = [(RAW, lambda mix, row: mix.samples[ref])]
    if dae is not None:
        systems.append(
            (DAE, lambda mix, row: enhance_oracle_dae(mix, row["doas_deg"][0], dae))
        )
    if mlenet is not None:
        systems.append(
            (MLENET_PRETRAIN, lambda mix, row: enhance_waveform(mlenet, mix)[0])
        )
    if joint is not None:
        systems.append(
            (MLENET_JOINT, lambda mix, row: enhance_waveform(joint, mix)[0])
        )

    def one(row):
        mixture, references = load_audio(row)
        mix = MultiChannelWaveform(mixture)
        bucket = condition_bucket(row, split)
        off = off_target_flag(row, run)
        out = []
        for name, system in systems:
            est = np.atleast_2d(system(mix, row))
            L = est.shape[-1]
            best = max(si_snr_numpy(e, references[0, :L]) for e in est)
            out.append(UtteranceScore(row["id"], bucket, name, float(best), off))
        return out

    utterances = [u for scores in _parallel(one, rows, jobs) for u in scores]
    means = []
    for bucket in bucket_names(split):
        for name, _ in systems:
            values = [
                u.si_snr_db
                for u in utterances
                if u.bucket == bucket and u.system == name
            ]
            if values:
                mean = float(np.mean(values))
                means.append(BucketMean(bucket, name, mean, len(values)))
        if not any(u.bucket == bucket for u in utterances):
            warnings.warn(f"No utterances in bucket {bucket}; reported as absent")
    for m in means:
        lg.info_log(
            f"{m.bucket:>10} {m.system:>18}: {m.mean_si_snr_db:7.2f} dB (n={m.n})"
        )
    return EnhancementReport(tuple(means), tuple(utterances))


def wakeup_threshold(negative_scores: Sequence[float], fa_budget: int) -> float:
    """Lowest threshold with at most ``fa_budget`` negatives scored above it: the
    ``(fa_budget + 1)``-th highest negative score, or 0 when the budget covers every
    negative.

    Raises:
        ValueError: No negatives or a negative budget.
    """
    if len(negative_scores) == 0:
        raise ValueError("Wake-up threshold needs negative utterances")
    if fa_budget < 0:
        raise ValueError(f"fa_budget={fa_budget} must be non-negative")
    if fa_budget >= len(negative_scores):
        return 0.0
    ranked = np.sort(np.asarray(negative_scores, dtype=np.float64))[::-1]
    return float(ranked[fa_budget])


def evaluate_wakeup(
    system: str,
    positives: Sequence[Tuple[dict, float]],
    negative_scores: Sequence[float],
    fa_budget: int,
    off_target: Sequence[bool],
    split_db: float = 6.0,
) -> List[WakeupRow]:
    """Wake-up accuracy per condition bucket at the false-alarm budget.

    An utterance wakes the device when its score is strictly above the threshold of
    :func:`wakeup_threshold`.

    Args:
        system (str): System name.

        positives (Sequence[Tuple[dict, float]]): Keyword utterances (manifest row and
            score).

        negative_scores (Sequence[float]): Scores of the background utterances.

        fa_budget (int): Allowed false alarms.

        off_target (Sequence[bool]): Off-target flag of every positive.

        split_db (float, optional): SIR bucket boundary. Defaults to 6.

    Raises:
        ValueError: No positives or no negatives.

    Returns:
        List[WakeupRow]: One row per non-empty bucket.
    """
    if len(positives) == 0:
        raise ValueError("Wake-up evaluation needs keyword utterances")
    threshold = wakeup_threshold(negative_scores, fa_budget)
    fa_count = int(np.sum(np.asarray(negative_scores) > threshold))
    out = []
    for bucket in bucket_names(split_db):
        idx = [
            i
            for i, (row, _) in enumerate(positives)
            if condition_bucket(row, split_db) == bucket
        ]
        if not idx:
            warnings.warn(
                f"No keyword utterances in bucket {bucket}; reported as absent"
            )
            continue
        accepted = [positives[i][1] > threshold for i in idx]
        off = [bool(off_target[i]) for i in idx]
        out.append(
            WakeupRow(
                system,
                bucket,
                float(np.mean(accepted)),
                fa_count,
                100.0 * float(np.mean(off)),
                len(idx),
                threshold,
            )
        )
    return out


def threshold_sweep(
    system: str, positive_scores: Sequence[float], negative_scores: Sequence[float]
) -> List[SweepPoint]:
    """Accuracy and false alarms at every threshold where the false-alarm count
    changes (each distinct negative score, plus 0)."""
    pos = np.asarray(positive_scores, dtype=np.float64)
    neg = np.asarray(negative_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("Threshold sweep needs keyword and background utterances")
    points = []
    for t in np.unique(np.concatenate([[0.0], neg])):
        accuracy = float(np.mean(pos > t))
        points.append(SweepPoint(system, float(t), int(np.sum(neg > t)), accuracy))
    return points


def kws_scorers(
    run: RunConfig,
    kws: KwsModel,
    mlenet: Optional[MlenetModel] = None,
    dae: Optional[MlenetModel] = None,
    joints: Sequence[Checkpoint] = (),
) -> Dict[str, Callable[[dict], float]]:
    """Scoring function of every wake-up system that the supplied models allow.

    ``raw+KWS`` runs the pre-trained classifier on the reference microphone,
    ``DAE+KWS`` on the oracle-steered DAE output and ``MLENet+KWS`` on every look
    output, waking when any does. Joint checkpoints give ``MLENet KWS``,
    ``MLENet&mic KWS``, ``FBF KWS`` or ``FBF&mic KWS`` depending on their front-end
    and microphone channel.
    """
    ref = run.spatial.reference_mic

    def raw(row):
        return score_channels(kws, load_audio(row)[0][ref])

    scorers = {RAW_KWS: raw}
    if dae is not None:

        def dae_score(row):
            mix = MultiChannelWaveform(load_audio(row)[0])
            enhanced = enhance_oracle_dae(mix, row["doas_deg"][0], dae)
            return score_channels(kws, enhanced)

        scorers[DAE_KWS] = dae_score
    if mlenet is not None:

        def mlenet_score(row):
            mix = MultiChannelWaveform(load_audio(row)[0])
            waves, _ = enhance_waveform(mlenet, mix)
            return score_channels(kws, waves, fuse=False)

        scorers[MLENET_PLUS_KWS] = mlenet_score
    for ckpt in joints:
        name, scorer = joint_scorer(ckpt, run)
        scorers[name] = scorer
    return scorers


def joint_scorer(
    ckpt: Checkpoint, run: RunConfig
) -> Tuple[str, Callable[[dict], float]]:
    """System name and scoring function of a jointly trained checkpoint."""
    meta = ckpt.metadata
    kws = kws_from_checkpoint(ckpt, run, ("joint",))
    frontend = None
    if meta.get("frontend") == "mlenet":
        frontend = mlenet_from_checkpoint(ckpt, run)
    use_mic = bool(meta.get("use_mic_channel", True))
    setup = JointSetup(
        meta.get("frontend", "mlenet"),
        None if frontend is None else frontend.spec,
        kws.spec,
        run.stft,
        run.fbank,
        use_mic,
        True,
        0.0,
    )
    params = {"kws": kws.params, "attention": dict(kws.attention._asdict())}
    if frontend is not None:
        params["mlenet"] = frontend.params
    name = "MLENet" if frontend is not None else "FBF"
    name += "&mic KWS" if use_mic else " KWS"

    def score(row):
        ex = prepare_joint_example(row, run, frontend)
        return float(joint_score(params, setup, kws.norm, example_arrays(ex))[0])

    return name, score


def evaluate_kws_systems(
    rows: Sequence[dict],
    run: RunConfig,
    scorers: Dict[str, Callable[[dict], float]],
    jobs: int = 1,
) -> Tuple[List[WakeupRow], List[SweepPoint]]:
    """Score every utterance with every system and evaluate wake-up accuracy.

    Raises:
        ValueError: The manifest lacks keyword or background utterances.

    Returns:
        Tuple[List[WakeupRow], List[SweepPoint]]: Bucket rows and threshold sweeps.
    """
    positives = [r for r in rows if r["label"] == "positive"]
    negatives = [r for r in rows if r["label"] != "positive"]
    if not positives or not negatives:
        raise ValueError("Wake-up evaluation needs keyword and background utterances")
    off = [off_target_flag(r, run) for r in positives]
    table, sweep = [], []
    for name, scorer in scorers.items():
        pos = _parallel(scorer, positives, jobs)
        neg = _parallel(scorer, negatives, jobs)
        rows_out = evaluate_wakeup(
            name,
            list(zip(positives, pos)),
            neg,
            run.evaluation.fa_budget,
            off,
            run.evaluation.sir_split_db,
        )
        for r in rows_out:
            lg.info_log(
                f"{r.system:>16} {r.bucket:>10}: accuracy {r.accuracy:.3f}, "
                f"{r.fa_count} FA, off-target {r.off_target_pct:.1f}%"
            )
        table.extend(rows_out)
        sweep.extend(threshold_sweep(name, pos, neg))
    return table, sweep
