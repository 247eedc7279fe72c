from concurrent.futures import ThreadPoolExecutor
from functools import partial
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import jax
import jax.numpy as jnp

import mlkws.logs as lg
from mlkws.io.config import RunConfig, config_hash
from mlkws.io.manifest import load_audio
from mlkws.models.mlenet import (
    MlenetConfig,
    MlenetModel,
    assemble_features,
    enhance_jax,
    init_mlenet,
    mlenet_config,
    predict_masks_jax,
)
from mlkws.nn.checkpoint import load_checkpoint
from mlkws.nn.network import NetworkSpec, match_params
from mlkws.nn.optim import AdamConfig, DivergenceError, check_finite, optimizer_step
from mlkws.sampling.stft_samples import StftConfig
from mlkws.training import state as st
from mlkws.training.assignment import assign_targets
from mlkws.training.losses import multi_look_loss_jax, si_snr_numpy
from mlkws.transforms.stft import stft_numpy


class EnhancementExample(NamedTuple):
    """One prepared training utterance.

    Attributes:
        id (str): Utterance identifier.

        features (np.ndarray): Network input of shape [T, W], float32.

        spec_ref (np.ndarray): Reference-channel spectrogram of shape [T, F],
            complex64.

        targets (np.ndarray): Assigned reference of every output, shape [K, L],
            float32.

        target (np.ndarray): Reference of the target source, shape [L].

        assignment (Tuple[int, ...]): Source index of every output.
    """

    id: str
    features: np.ndarray
    spec_ref: np.ndarray
    targets: np.ndarray
    target: np.ndarray
    assignment: Tuple[int, ...]


class TrainingResult(NamedTuple):
    """Outcome of a training run.

    Attributes:
        params (dict): Final parameters.

        train_loss (Tuple[float, ...]): Mean training loss of every epoch.

        validation (Tuple[float, ...]): Validation metric of every epoch (NaN without
            a validation split).

        checkpoint (Path): Final checkpoint.
    """

    params: dict
    train_loss: Tuple[float, ...]
    validation: Tuple[float, ...]
    checkpoint: Path


def checkpoint_name(mode: str) -> str:
    return f"{mode}.ckpt"


def prepare_example(row: dict, cfg: MlenetConfig) -> EnhancementExample:
    """Features and aligned training targets of a manifest row.

    The multi-look variant assigns every look its circularly nearest source; the DAE
    variant steers its single directional feature to the target direction and learns
    the target.
    """
    mixture, references = load_audio(row)
    specs = stft_numpy(mixture, cfg.stft)
    if cfg.mode == "dae":
        looks, assignment = (row["doas_deg"][0],), (0,)
    else:
        looks = None
        assignment = assign_targets(cfg.looks, row["doas_deg"]).sources
    features = assemble_features(specs, cfg, looks)
    return EnhancementExample(
        row["id"],
        features.astype(np.float32),
        specs[cfg.reference_mic].astype(np.complex64),
        references[list(assignment)].astype(np.float32),
        references[0],
        tuple(assignment),
    )


def prepare_examples(
    rows: Sequence[dict], cfg: MlenetConfig, jobs: int = 1
) -> List[EnhancementExample]:
    """Prepare manifest rows, preserving their order."""
    if jobs <= 1:
        return [prepare_example(r, cfg) for r in rows]
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(partial(prepare_example, cfg=cfg), rows))


@partial(jax.jit, static_argnums=(1, 2))
def loss_and_grad(
    params: dict,
    spec: NetworkSpec,
    stft_cfg: StftConfig,
    features: jnp.ndarray,
    spec_ref: jnp.ndarray,
    targets: jnp.ndarray,
):
    """Mean multi-look loss of a batch and its gradient.

    Args:
        params (dict): Front-end parameters.

        spec (NetworkSpec): Front-end network.

        stft_cfg (StftConfig): STFT configuration.

        features (jnp.ndarray): Features of shape [B, T, W].

        spec_ref (jnp.ndarray): Reference spectrograms of shape [B, T, F].

        targets (jnp.ndarray): Assigned references of shape [B, K, L].

    Returns:
        Tuple[jnp.ndarray, dict]: Loss and gradient.
    """

    def loss(p):
        masks = jax.vmap(lambda f: predict_masks_jax(spec, p, f))(features)
        est = enhance_jax(spec_ref, masks, stft_cfg)
        return jnp.mean(multi_look_loss_jax(est, targets))

    return jax.value_and_grad(loss)(params)


def evaluate_examples(
    model: MlenetModel, examples: Sequence[EnhancementExample]
) -> List[Tuple[float, ...]]:
    """SI-SNR in dB of every output of every example against the target source."""
    out = []
    for ex in examples:
        masks = predict_masks_jax(model.spec, model.params, jnp.asarray(ex.features))
        est = np.asarray(enhance_jax(jnp.asarray(ex.spec_ref), masks, model.cfg.stft))
        L = est.shape[-1]
        out.append(tuple(si_snr_numpy(e, ex.target[:L]) for e in est))
    return out


def train_mlenet(
    rows: Sequence[dict],
    run: RunConfig,
    seed: int,
    out_dir: Union[str, Path],
    resume: Optional[Union[str, Path]] = None,
    mode: Optional[str] = None,
    jobs: int = 1,
) -> TrainingResult:
    r"""Train the enhancement front-end on a simulated manifest.

    Batches of ``training.batch_size`` utterances minimise the multi-look loss
    :math:`-\sum_k \text{SI-SNR}(\hat x^k, x^{\tilde k})` with Adam. After every epoch
    the mean best-output SI-SNR on the validation split is logged and
    ``<out_dir>/<mode>.ckpt`` is rewritten with parameters, Adam moments and history.
    Given the seed, the run is deterministic, and resuming from its checkpoint
    continues the uninterrupted trajectory exactly.

    Args:
        rows (Sequence[dict]): Manifest rows.

        run (RunConfig): Run configuration.

        seed (int): Seed of the initialisation, split and batch order.

        out_dir (str): Output directory.

        resume (str, optional): Checkpoint to resume from.

        mode (str, optional): ``"mlenet"`` or ``"dae"``; defaults to ``training.mode``.

        jobs (int, optional): Threads used to prepare features. Defaults to 1.

    Raises:
        DivergenceError: Non-finite loss or gradient; the last good state is written
            to ``<out_dir>/last_good.ckpt`` first.

        CheckpointError: Checkpoint to resume from is incompatible.

    Returns:
        TrainingResult: Parameters, loss curve and checkpoint path.
    """
    cfg = mlenet_config(run, mode)
    tcfg = run.training
    out_dir = Path(out_dir)
    cfg_hash = config_hash(run)
    train_rows, val_rows = st.split_rows(rows, tcfg.validation_fraction, seed)
    train = prepare_examples(train_rows, cfg, jobs)
    val = prepare_examples(val_rows, cfg, jobs)
    lg.info_log(
        f"Training {cfg.mode} on {len(train)} utterances ({len(val)} held out), "
        f"feature width {cfg.feature_width}"
    )
    model = init_mlenet(cfg, seed)
    trainable = {"mlenet": model.params}
    adam_state = st.fresh_state(trainable)
    start, history, val_history = 0, [], []
    if resume is not None:
        ckpt = load_checkpoint(resume)
        st.check_resumable(ckpt, cfg.mode, cfg_hash, seed)
        trainable, adam_state = st.restore_state(
            ckpt, trainable, {"mlenet": partial(match_params, model.spec)}
        )
        start = int(ckpt.metadata["epoch"])
        history = list(ckpt.metadata.get("train_loss", []))
        val_history = list(ckpt.metadata.get("validation_si_snr", []))
        lg.info_log(f"Resuming {cfg.mode} training after epoch {start}")

    adam = AdamConfig(tcfg.learning_rate, tuple(tcfg.betas), tcfg.eps)
    path = out_dir / checkpoint_name(cfg.mode)

    def metadata(epoch):
        return {
            "kind": cfg.mode,
            "mode": cfg.mode,
            "config_hash": cfg_hash,
            "model_hash": config_hash(run, "model"),
            "seed": seed,
            "epoch": epoch,
            "train_loss": history,
            "validation_si_snr": val_history,
        }

    for epoch in range(start, tcfg.epochs):
        losses = []
        for batch in st.epoch_batches(len(train), tcfg.batch_size, seed, epoch):
            features, spec_ref, targets = st.stack_examples(
                [train[i] for i in batch], ("features", "spec_ref", "targets")
            )
            loss, grads = loss_and_grad(
                trainable["mlenet"], model.spec, cfg.stft, features, spec_ref, targets
            )
            try:
                check_finite(grads, loss)
            except DivergenceError:
                st.save_state(
                    out_dir / st.LAST_GOOD, trainable, adam_state, metadata(epoch)
                )
                raise
            grads = {"mlenet": grads}
            trainable, adam_state = optimizer_step(trainable, grads, adam_state, adam)
            losses.append(float(loss))
            lg.debug_log(
                f"epoch {epoch + 1} step {adam_state.step}: loss {float(loss):.4f}"
            )
        history.append(float(np.mean(losses)))
        current = MlenetModel(model.spec, trainable["mlenet"], cfg)
        val_history.append(_best_output_mean(evaluate_examples(current, val)))
        lg.info_log(
            f"epoch {epoch + 1}/{tcfg.epochs}: loss {history[-1]:.4f}, validation "
            f"best-output SI-SNR {val_history[-1]:.2f} dB"
        )
        st.save_state(path, trainable, adam_state, metadata(epoch + 1))
    if start >= tcfg.epochs:
        st.save_state(path, trainable, adam_state, metadata(max(start, tcfg.epochs)))
    return TrainingResult(
        trainable["mlenet"], tuple(history), tuple(val_history), path
    )


def _best_output_mean(scores: List[Tuple[float, ...]]) -> float:
    if not scores:
        return float("nan")
    return float(np.mean([max(s) for s in scores]))
