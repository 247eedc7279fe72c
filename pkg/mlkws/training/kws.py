from concurrent.futures import ThreadPoolExecutor
from functools import partial
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Union

import numpy as np
import jax
import jax.numpy as jnp

import mlkws.logs as lg
from mlkws.beamforming.fixed import apply_beamformer, design_look_beamformers
from mlkws.io.config import RunConfig, config_hash
from mlkws.io.manifest import load_audio
from mlkws.models.kws import (
    AttentionParams,
    FbankNorm,
    KwsModel,
    attention_fuse_jax,
    channel_features,
    channel_features_jax,
    estimate_norm,
    frame_posteriors_jax,
    init_kws,
    kws_from_checkpoint,
    kws_tree,
)
from mlkws.models.mlenet import (
    MlenetModel,
    assemble_features,
    enhance_jax,
    mlenet_from_checkpoint,
    predict_masks_jax,
)
from mlkws.nn.checkpoint import CheckpointError, load_checkpoint
from mlkws.nn.network import NetworkSpec, match_params
from mlkws.nn.optim import AdamConfig, DivergenceError, check_finite, optimizer_step
from mlkws.sampling import stft_samples as samples
from mlkws.sampling.stft_samples import FbankConfig, SAMPLE_RATE, StftConfig
from mlkws.training import state as st
from mlkws.training.assignment import assign_targets
from mlkws.training.enhancement import TrainingResult
from mlkws.training.losses import binary_cross_entropy_jax, multi_look_loss_jax
from mlkws.transforms.fbank import logmel_fbank_numpy
from mlkws.transforms.stft import istft_numpy, stft_numpy

KWS_CHECKPOINT = "kws.ckpt"
JOINT_CHECKPOINT = "joint.ckpt"


class KwsExample(NamedTuple):
    """Reference-microphone classifier input of one utterance."""

    id: str
    frames: np.ndarray
    label: float


class JointExample(NamedTuple):
    """Prepared joint-training utterance.

    Attributes:
        id (str): Utterance identifier.

        features (np.ndarray): Front-end features [T, W] (zeros of shape [1, 1] for the
            beamformer front-end).

        spec_ref (np.ndarray): Reference spectrogram [T, F], complex64.

        channels (np.ndarray): Beamformer outputs [K, L'] (zeros of shape [1, 1] for
            the learned front-end).

        mic (np.ndarray): Reference microphone trimmed to [L'].

        targets (np.ndarray): Assigned references [K, L'] for the auxiliary loss.

        label (float): 1 for keyword utterances.
    """

    id: str
    features: np.ndarray
    spec_ref: np.ndarray
    channels: np.ndarray
    mic: np.ndarray
    targets: np.ndarray
    label: float


class JointSetup(NamedTuple):
    """Static description of the joint graph."""

    frontend: str
    mlenet_spec: Optional[NetworkSpec]
    kws_spec: NetworkSpec
    stft: StftConfig
    fbank: FbankConfig
    use_mic_channel: bool
    freeze_frontend: bool
    aux_weight: float
    sample_rate: int = SAMPLE_RATE


def label_of(row: dict) -> float:
    return 1.0 if row["label"] == "positive" else 0.0


def mic_fbanks(rows: Sequence[dict], run: RunConfig) -> List[np.ndarray]:
    """Unnormalised log-mel features of the reference microphone of every row."""
    ref = run.spatial.reference_mic
    return [logmel_fbank_numpy(load_audio(r)[0][ref], run.fbank) for r in rows]


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(fn, items))


@partial(jax.jit, static_argnums=(1,))
def kws_loss_and_grad(
    params: dict, spec: NetworkSpec, frames: jnp.ndarray, labels: jnp.ndarray
):
    """Mean utterance cross-entropy of the max frame posterior of a batch [B, T', D]
    and its gradient."""

    def loss(p):
        post = jax.vmap(lambda f: frame_posteriors_jax(spec, p, f))(frames)
        return jnp.mean(binary_cross_entropy_jax(jnp.max(post, axis=-1), labels))

    return jax.value_and_grad(loss)(params)


def train_kws(
    rows: Sequence[dict],
    run: RunConfig,
    seed: int,
    out_dir: Union[str, Path],
    resume: Optional[Union[str, Path]] = None,
    jobs: int = 1,
) -> TrainingResult:
    """Pre-train the keyword classifier on the reference microphone.

    Band normalisation statistics are estimated on the training split and stored in
    the checkpoint as non-trainable entries together with the (untrained) attention.

    Args:
        rows (Sequence[dict]): Manifest rows with ``positive`` / ``negative`` labels.

        run (RunConfig): Run configuration.

        seed (int): Seed.

        out_dir (str): Output directory; ``kws.ckpt`` is written after every epoch.

        resume (str, optional): Checkpoint to resume from.

        jobs (int, optional): Feature preparation threads. Defaults to 1.

    Raises:
        ValueError: Training split lacks positives or negatives.

        DivergenceError: Non-finite loss or gradient.

        CheckpointError: Checkpoint to resume from is incompatible.

    Returns:
        TrainingResult: Classifier parameters, loss curve and validation accuracy.
    """
    tcfg = run.training
    out_dir = Path(out_dir)
    cfg_hash = config_hash(run)
    train_rows, val_rows = st.split_rows(rows, tcfg.validation_fraction, seed)
    classes = {label_of(r) for r in train_rows}
    if classes != {0.0, 1.0}:
        raise ValueError("Keyword training needs positive and negative utterances")
    norm = estimate_norm(mic_fbanks(train_rows, run))
    model = init_kws(run, norm, seed)
    trainable = {"kws": model.params}
    adam_state = st.fresh_state(trainable)
    buffers = {k: v for k, v in kws_tree(model).items() if k != "kws"}
    start, history, val_history = 0, [], []
    if resume is not None:
        ckpt = load_checkpoint(resume)
        st.check_resumable(ckpt, "kws", cfg_hash, seed)
        trainable, adam_state = st.restore_state(
            ckpt, trainable, {"kws": partial(match_params, model.spec)}
        )
        restored = kws_from_checkpoint(ckpt, run, ("kws",))
        buffers = {k: v for k, v in kws_tree(restored).items() if k != "kws"}
        model = restored
        start = int(ckpt.metadata["epoch"])
        history = list(ckpt.metadata.get("train_loss", []))
        val_history = list(ckpt.metadata.get("validation_accuracy", []))

    ref = run.spatial.reference_mic

    def prepare(row):
        mic = load_audio(row)[0][ref]
        frames = channel_features(mic, model.norm, run.fbank).astype(np.float32)
        return KwsExample(row["id"], frames, label_of(row))

    train = _map(prepare, train_rows, jobs)
    val = _map(prepare, val_rows, jobs)
    lg.info_log(f"Training kws on {len(train)} utterances ({len(val)} held out)")
    adam = AdamConfig(tcfg.learning_rate, tuple(tcfg.betas), tcfg.eps)
    path = out_dir / KWS_CHECKPOINT

    def metadata(epoch):
        return {
            "kind": "kws",
            "config_hash": cfg_hash,
            "model_hash": config_hash(run, "model"),
            "seed": seed,
            "epoch": epoch,
            "train_loss": history,
            "validation_accuracy": val_history,
        }

    for epoch in range(start, tcfg.epochs):
        losses = []
        for batch in st.epoch_batches(len(train), tcfg.batch_size, seed, epoch):
            batch_examples = [train[i] for i in batch]
            frames, labels = st.stack_examples(batch_examples, ("frames", "label"))
            loss, grads = kws_loss_and_grad(
                trainable["kws"], model.spec, frames, labels.astype(np.float32)
            )
            try:
                check_finite(grads, loss)
            except DivergenceError:
                st.save_state(
                    out_dir / st.LAST_GOOD,
                    trainable,
                    adam_state,
                    metadata(epoch),
                    buffers,
                )
                raise
            trainable, adam_state = optimizer_step(
                trainable, {"kws": grads}, adam_state, adam
            )
            losses.append(float(loss))
        history.append(float(np.mean(losses)))
        scores = [
            float(jnp.max(frame_posteriors_jax(model.spec, trainable["kws"], x)))
            for x in (ex.frames for ex in val)
        ]
        val_history.append(_accuracy(scores, [ex.label for ex in val]))
        lg.info_log(
            f"epoch {epoch + 1}/{tcfg.epochs}: loss {history[-1]:.4f}, validation "
            f"accuracy {val_history[-1]:.3f}"
        )
        st.save_state(path, trainable, adam_state, metadata(epoch + 1), buffers)
    if start >= tcfg.epochs:
        st.save_state(path, trainable, adam_state, metadata(start), buffers)
    return TrainingResult(trainable["kws"], tuple(history), tuple(val_history), path)


def prepare_joint_example(
    row: dict,
    run: RunConfig,
    frontend: Optional[MlenetModel],
) -> JointExample:
    """Inputs of the joint graph for one manifest row. Without a learned front-end the
    delay-and-sum outputs of the look directions are precomputed."""
    mixture, references = load_audio(row)
    ref = run.spatial.reference_mic
    specs = stft_numpy(mixture, run.stft)
    L = samples.signal_length(specs.shape[1], run.stft)
    assignment = assign_targets(run.looks, row["doas_deg"]).sources
    targets = references[list(assignment), :L].astype(np.float32)
    empty = np.zeros((1, 1), dtype=np.float32)
    if frontend is not None:
        features = assemble_features(specs, frontend.cfg).astype(np.float32)
        channels = empty
    else:
        features = empty
        bfs = design_look_beamformers(
            run.geometry, run.looks.azimuths, run.stft, reference_mic=ref
        )
        channels = np.stack(
            [istft_numpy(apply_beamformer(bf, specs), run.stft) for bf in bfs]
        )
        channels = channels.astype(np.float32)
    return JointExample(
        row["id"],
        features,
        specs[ref].astype(np.complex64),
        channels,
        mixture[ref, :L].astype(np.float32),
        targets,
        label_of(row),
    )


def joint_channels(params: dict, setup: JointSetup, ex: dict) -> jnp.ndarray:
    """Channels entering the fusion for one utterance, [N, L'] (looks first, then the
    reference microphone when enabled)."""
    if setup.frontend == "mlenet":
        p = params["mlenet"]
        if setup.freeze_frontend:
            p = jax.lax.stop_gradient(p)
        masks = predict_masks_jax(setup.mlenet_spec, p, ex["features"])
        waves = enhance_jax(ex["spec_ref"], masks, setup.stft)
    else:
        waves = ex["channels"]
    if setup.use_mic_channel:
        waves = jnp.concatenate([waves, ex["mic"][None, : waves.shape[-1]]], axis=0)
    return waves


@partial(jax.jit, static_argnums=(1,))
def joint_score(params: dict, setup: JointSetup, norm: FbankNorm, ex: dict):
    """Keyword score of one utterance through front-end, fusion and classifier."""
    waves = joint_channels(params, setup, ex)
    z = channel_features_jax(
        waves,
        jnp.asarray(norm.mean),
        jnp.asarray(norm.std),
        setup.fbank,
        setup.sample_rate,
    )
    attention = AttentionParams(**params["attention"])
    fused = attention_fuse_jax(jnp.swapaxes(z, 0, 1), attention)
    post = frame_posteriors_jax(setup.kws_spec, params["kws"], fused.z)
    return jnp.max(post), waves


@partial(jax.jit, static_argnums=(1,))
def joint_loss_and_grad(params: dict, setup: JointSetup, norm: FbankNorm, batch: dict):
    """Mean joint loss of a batch and its gradient. The loss is the utterance
    cross-entropy, plus ``aux_weight`` times the multi-look loss when set."""

    def loss(p):
        def one(ex):
            score, waves = joint_score(p, setup, norm, ex)
            value = binary_cross_entropy_jax(score, ex["label"])
            if setup.aux_weight > 0 and setup.frontend == "mlenet":
                K = ex["targets"].shape[0]
                value = value + setup.aux_weight * multi_look_loss_jax(
                    waves[:K], ex["targets"]
                )
            return value

        return jnp.mean(jax.vmap(one)(batch))

    return jax.value_and_grad(loss)(params)


def joint_train(
    rows: Sequence[dict],
    run: RunConfig,
    seed: int,
    out_dir: Union[str, Path],
    kws_checkpoint: Union[str, Path],
    mlenet_checkpoint: Optional[Union[str, Path]] = None,
    resume: Optional[Union[str, Path]] = None,
    jobs: int = 1,
    force: bool = False,
) -> TrainingResult:
    """Fine-tune front-end, attention fusion and classifier end to end on the keyword
    cross-entropy.

    With ``training.frontend = "mlenet"`` gradients flow from the classifier through
    the fusion, the filterbank and the masks into the front-end (unless
    ``freeze_frontend``); with ``"fbf"`` the delay-and-sum outputs of the look
    directions feed the fusion. ``use_mic_channel`` appends the reference microphone
    as the last channel and ``aux_si_snr`` adds the multi-look loss.

    Args:
        rows (Sequence[dict]): Manifest rows.

        run (RunConfig): Run configuration.

        seed (int): Seed.

        out_dir (str): Output directory; ``joint.ckpt`` is written after every epoch.

        kws_checkpoint (str): Pre-trained classifier.

        mlenet_checkpoint (str, optional): Pre-trained front-end (learned front-end
            only).

        resume (str, optional): Joint checkpoint to resume from.

        jobs (int, optional): Feature preparation threads. Defaults to 1.

        force (bool, optional): Warn instead of failing when a pre-trained
            checkpoint was built under another architecture. Defaults to False.

    Raises:
        CheckpointError: Missing, mismatched or incompatible checkpoints.

        DivergenceError: Non-finite loss or gradient.

    Returns:
        TrainingResult: All parameters, loss curve and validation accuracy.
    """
    tcfg = run.training
    out_dir = Path(out_dir)
    cfg_hash = config_hash(run)
    model_hash = config_hash(run, "model")
    frontend_kind = tcfg.frontend
    kws_ckpt = load_checkpoint(kws_checkpoint)
    _check_hash(kws_ckpt, model_hash, "kws", force)
    kws = kws_from_checkpoint(kws_ckpt, run)
    trainable = {"kws": kws.params, "attention": dict(kws.attention._asdict())}
    fit = {
        "kws": partial(match_params, kws.spec),
        "attention": partial(_fit_attention, trainable["attention"]),
    }
    frontend = None
    if frontend_kind == "mlenet":
        if mlenet_checkpoint is None:
            raise CheckpointError(
                "Joint training with the mlenet front-end needs its checkpoint"
            )
        ml_ckpt = load_checkpoint(mlenet_checkpoint)
        _check_hash(ml_ckpt, model_hash, "mlenet", force)
        if ml_ckpt.metadata.get("mode", "mlenet") != "mlenet":
            raise CheckpointError(
                "Joint training needs a multi-look front-end, got a dae model"
            )
        frontend = mlenet_from_checkpoint(ml_ckpt, run)
        trainable["mlenet"] = frontend.params
        fit["mlenet"] = partial(match_params, frontend.spec)
    setup = JointSetup(
        frontend_kind,
        None if frontend is None else frontend.spec,
        kws.spec,
        run.stft,
        run.fbank,
        tcfg.use_mic_channel,
        tcfg.freeze_frontend,
        tcfg.aux_weight if tcfg.aux_si_snr else 0.0,
    )
    adam_state = st.fresh_state(trainable)
    start, history, val_history = 0, [], []
    if resume is not None:
        ckpt = load_checkpoint(resume)
        st.check_resumable(ckpt, "joint", cfg_hash, seed)
        if ckpt.metadata.get("frontend") != frontend_kind:
            raise CheckpointError(
                f"Joint checkpoint uses the {ckpt.metadata.get('frontend')} front-end"
            )
        trainable, adam_state = st.restore_state(ckpt, trainable, fit)
        start = int(ckpt.metadata["epoch"])
        history = list(ckpt.metadata.get("train_loss", []))
        val_history = list(ckpt.metadata.get("validation_accuracy", []))

    train_rows, val_rows = st.split_rows(rows, tcfg.validation_fraction, seed)
    prepare = partial(prepare_joint_example, run=run, frontend=frontend)
    train = _map(prepare, train_rows, jobs)
    val = _map(prepare, val_rows, jobs)
    fields = JointExample._fields[1:]
    buffers = {"norm": dict(kws.norm._asdict())}
    adam = AdamConfig(tcfg.learning_rate, tuple(tcfg.betas), tcfg.eps)
    path = out_dir / JOINT_CHECKPOINT
    lg.info_log(
        f"Joint training ({frontend_kind} front-end, mic channel "
        f"{'on' if tcfg.use_mic_channel else 'off'}) on {len(train)} utterances"
    )

    def metadata(epoch):
        return {
            "kind": "joint",
            "mode": "mlenet",
            "frontend": frontend_kind,
            "use_mic_channel": tcfg.use_mic_channel,
            "config_hash": cfg_hash,
            "model_hash": model_hash,
            "seed": seed,
            "epoch": epoch,
            "train_loss": history,
            "validation_accuracy": val_history,
        }

    for epoch in range(start, tcfg.epochs):
        losses = []
        for batch in st.epoch_batches(len(train), tcfg.batch_size, seed, epoch):
            arrays = st.stack_examples([train[i] for i in batch], fields)
            batch_dict = dict(zip(fields, arrays))
            batch_dict["label"] = batch_dict["label"].astype(np.float32)
            loss, grads = joint_loss_and_grad(trainable, setup, kws.norm, batch_dict)
            try:
                check_finite(grads, loss)
            except DivergenceError:
                st.save_state(
                    out_dir / st.LAST_GOOD,
                    trainable,
                    adam_state,
                    metadata(epoch),
                    buffers,
                )
                raise
            trainable, adam_state = optimizer_step(trainable, grads, adam_state, adam)
            losses.append(float(loss))
        history.append(float(np.mean(losses)))
        scores = [
            float(joint_score(trainable, setup, kws.norm, example_arrays(ex))[0])
            for ex in val
        ]
        val_history.append(_accuracy(scores, [ex.label for ex in val]))
        lg.info_log(
            f"epoch {epoch + 1}/{tcfg.epochs}: loss {history[-1]:.4f}, validation "
            f"accuracy {val_history[-1]:.3f}"
        )
        st.save_state(path, trainable, adam_state, metadata(epoch + 1), buffers)
    if start >= tcfg.epochs:
        st.save_state(path, trainable, adam_state, metadata(start), buffers)
    return TrainingResult(trainable, tuple(history), tuple(val_history), path)


def joint_model(params: dict, kws: KwsModel) -> KwsModel:
    """Classifier view of jointly trained parameters."""
    return kws._replace(
        params=params["kws"], attention=AttentionParams(**params["attention"])
    )


def example_arrays(ex: JointExample) -> dict:
    """Arrays of a prepared example as consumed by :func:`joint_score`."""
    return {k: jnp.asarray(v) for k, v in ex._asdict().items() if k != "id"}


def _fit_attention(reference: dict, loaded: dict) -> dict:
    if not isinstance(loaded, dict) or set(loaded) != set(reference):
        raise ValueError("attention entries do not match W, b, v")
    for k in reference:
        if np.shape(loaded[k]) != np.shape(reference[k]):
            raise ValueError(f"attention/{k} has shape {np.shape(loaded[k])}")
    return {k: jnp.asarray(loaded[k]) for k in reference}


def _check_hash(ckpt, model_hash: str, what: str, force: bool = False):
    found = ckpt.metadata.get("model_hash")
    if found == model_hash:
        return
    message = f"{what} checkpoint model hash {found} does not match {model_hash}"
    if not force:
        raise CheckpointError(message + " (use --force to override)")
    lg.warning_log(message + ", continuing as forced")


def _accuracy(scores: Sequence[float], labels: Sequence[float]) -> float:
    if not scores:
        return float("nan")
    return float(np.mean([(s > 0.5) == (y > 0.5) for s, y in zip(scores, labels)]))
