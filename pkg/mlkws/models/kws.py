from functools import partial
from typing import Iterable, NamedTuple, Optional, Tuple

import numpy as np
import jax
import jax.numpy as jnp
from scipy import special

from mlkws.io.config import KwsConfig, RunConfig
from mlkws.nn import layers
from mlkws.nn.checkpoint import Checkpoint, CheckpointError
from mlkws.nn.network import NetworkSpec, apply, build, match_params
from mlkws.sampling import stft_samples as samples
from mlkws.sampling.stft_samples import FbankConfig, SAMPLE_RATE
from mlkws.transforms.fbank import (
    add_deltas_and_stack_jax,
    add_deltas_and_stack_numpy,
    logmel_fbank_jax,
    logmel_fbank_numpy,
)

KEYWORD_CLASS = 0
NORM_FLOOR = 1e-5


class FbankNorm(NamedTuple):
    """Per-band mean and standard deviation of the log-mel features. Estimated once on
    training data and never trained."""

    mean: np.ndarray
    std: np.ndarray


class AttentionParams(NamedTuple):
    r"""Parameters of the channel attention, shared by every channel.

    Attributes:
        W (np.ndarray): Projection of shape [A, D].

        b (np.ndarray): Bias of shape [A].

        v (np.ndarray): Scoring vector of shape [A].
    """

    W: np.ndarray
    b: np.ndarray
    v: np.ndarray


class FusedFrame(NamedTuple):
    r"""Output of the attention fusion.

    Attributes:
        alpha (np.ndarray): Channel weights of shape [..., N] on the simplex.

        z (np.ndarray): Fused features :math:`\sum_i \alpha_i z_i` of shape [..., D].
    """

    alpha: np.ndarray
    z: np.ndarray


class KwsModel(NamedTuple):
    """Keyword classifier with its attention fusion and feature normalisation."""

    spec: NetworkSpec
    params: dict
    attention: AttentionParams
    norm: FbankNorm
    fbank: FbankConfig
    sample_rate: int = SAMPLE_RATE


def kws_spec(cfg: KwsConfig, fbank: FbankConfig, seed: int = 0) -> NetworkSpec:
    r"""Frame classifier over context-stacked filterbank features.

    A limited-weight-sharing convolution along the mel axis (``regions`` regions with
    ``kernels`` kernels each, max-pooled within the region) is followed by ReLU dense
    layers and a two-way softmax whose channel 0 is the keyword.

    Args:
        cfg (KwsConfig): Classifier sizes.

        fbank (FbankConfig): Feature configuration fixing the input width.

        seed (int, optional): Initialisation seed. Defaults to 0.

    Returns:
        NetworkSpec: Network mapping [D, T'] to posteriors [2, T'].
    """
    D = samples.stacked_dim(fbank)
    width = cfg.regions * cfg.kernels
    stack = [
        layers.lws_conv(
            "lws", D, fbank.n_mels, cfg.regions, cfg.kernels, cfg.kernel_size
        ),
        layers.activation("lws_relu", "relu", width),
    ]
    for i, hidden in enumerate(cfg.dense):
        stack.append(layers.affine(f"dense{i}", width, hidden))
        stack.append(layers.activation(f"dense{i}_relu", "relu", hidden))
        width = hidden
    stack += [
        layers.affine("logits", width, 2),
        layers.activation("posterior", "softmax", 2),
    ]
    return NetworkSpec(tuple(stack), D, seed)


def init_attention(
    dim: int, attention_dim: int = 128, seed: int = 0
) -> AttentionParams:
    """Attention parameters with uniform fan-in weights and zero bias."""
    k1, k2 = jax.random.split(jax.random.PRNGKey(seed))
    bound_w, bound_v = 1.0 / np.sqrt(dim), 1.0 / np.sqrt(attention_dim)
    return AttentionParams(
        jax.random.uniform(k1, (attention_dim, dim), jnp.float32, -bound_w, bound_w),
        jnp.zeros(attention_dim, dtype=jnp.float32),
        jax.random.uniform(k2, (attention_dim,), jnp.float32, -bound_v, bound_v),
    )


def init_kws(run: RunConfig, norm: FbankNorm, seed: int = 0) -> KwsModel:
    """Freshly initialised classifier and attention."""
    spec = kws_spec(run.kws, run.fbank, seed)
    attention = init_attention(spec.in_channels, run.kws.attention_dim, seed + 1)
    return KwsModel(spec, build(spec), attention, norm, run.fbank)


def estimate_norm(fbanks: Iterable[np.ndarray]) -> FbankNorm:
    """Band statistics of log-mel features.

    Args:
        fbanks (Iterable[np.ndarray]): Features of shape [T', n_mels].

    Raises:
        ValueError: No frames.

    Returns:
        FbankNorm: Mean and standard deviation (floored) of every band, float32 as
        stored in checkpoints.
    """
    frames = [np.asarray(f, dtype=np.float64) for f in fbanks]
    if not frames:
        raise ValueError("Normalisation statistics need at least one utterance")
    stacked = np.concatenate(frames, axis=0)
    std = np.maximum(stacked.std(axis=0), NORM_FLOOR)
    return FbankNorm(stacked.mean(axis=0).astype(np.float32), std.astype(np.float32))


def channel_features(
    wave: np.ndarray,
    norm: FbankNorm,
    cfg: FbankConfig = FbankConfig(),
    sample_rate: int = SAMPLE_RATE,
    method: str = "numpy",
) -> np.ndarray:
    r"""Wrapper computing the classifier input of one channel: normalised log-mel
    features with deltas, context-stacked.

    Args:
        wave (np.ndarray): Waveform of shape [L].

        norm (FbankNorm): Band statistics.

        cfg (FbankConfig, optional): Feature configuration.

        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

        method (str, optional): Execution mode in {"numpy", "jax"}. Defaults to "numpy".

    Raises:
        ValueError: Method not recognised.

    Returns:
        np.ndarray: Features of shape [T', D].
    """
    if method == "numpy":
        fbank = logmel_fbank_numpy(wave, cfg, sample_rate)
        fbank = (fbank - np.asarray(norm.mean)) / np.asarray(norm.std)
        return add_deltas_and_stack_numpy(fbank, cfg)
    elif method == "jax":
        return channel_features_jax(
            jnp.asarray(wave),
            jnp.asarray(norm.mean),
            jnp.asarray(norm.std),
            cfg,
            sample_rate,
        )
    else:
        raise ValueError(
            f"Implementation {method} not recognised. Should be either numpy or jax."
        )


@partial(jax.jit, static_argnums=(3, 4))
def channel_features_jax(
    wave: jnp.ndarray,
    mean: jnp.ndarray,
    std: jnp.ndarray,
    cfg: FbankConfig = FbankConfig(),
    sample_rate: int = SAMPLE_RATE,
) -> jnp.ndarray:
    """Classifier input of channels of shape [..., L] (JAX), shape [..., T', D];
    differentiable with respect to the waveforms."""
    fbank = logmel_fbank_jax(wave, cfg, sample_rate)
    fbank = (fbank - mean.astype(fbank.dtype)) / std.astype(fbank.dtype)

    def stack(f):
        return add_deltas_and_stack_jax(f, cfg)

    for _ in range(fbank.ndim - 2):
        stack = jax.vmap(stack)
    return stack(fbank)


def attention_fuse(
    z: np.ndarray, params: AttentionParams, method: str = "numpy"
) -> FusedFrame:
    r"""Wrapper for the soft self-attention fusing N channels into one,
    :math:`e_i = v^T \tanh(W z_i + b)`, :math:`\alpha = \text{softmax}(e)`,
    :math:`\hat z = \sum_i \alpha_i z_i`.

    Channels are ordered ``[look_1 .. look_K, reference mic]``; frames are fused
    independently.

    Args:
        z (np.ndarray): Channel features of shape [..., N, D].

        params (AttentionParams): Shared attention parameters.

        method (str, optional): Execution mode in {"numpy", "jax"}. Defaults to "numpy".

    Raises:
        ValueError: Feature width does not match the projection.

        ValueError: Method not recognised.

    Returns:
        FusedFrame: Weights of shape [..., N] and fused features of shape [..., D].
    """
    if np.shape(z)[-1] != np.shape(params.W)[1]:
        raise ValueError(
            f"Features of width {np.shape(z)[-1]} do not match attention width "
            f"{np.shape(params.W)[1]}"
        )
    if method == "numpy":
        return attention_fuse_numpy(z, params)
    elif method == "jax":
        return attention_fuse_jax(jnp.asarray(z), params)
    else:
        raise ValueError(
            f"Implementation {method} not recognised. Should be either numpy or jax."
        )


def attention_fuse_numpy(z: np.ndarray, params: AttentionParams) -> FusedFrame:
    """Soft self-attention fusion (numpy)."""
    z = np.asarray(z, dtype=np.float64)
    W, b, v = (np.asarray(p, dtype=np.float64) for p in params)
    e = np.tanh(z @ W.T + b) @ v
    alpha = special.softmax(e, axis=-1)
    return FusedFrame(alpha, np.einsum("...n,...nd->...d", alpha, z))


@jax.jit
def attention_fuse_jax(z: jnp.ndarray, params: AttentionParams) -> FusedFrame:
    """Soft self-attention fusion (JAX), differentiable with respect to the features
    and the parameters."""
    W, b, v = (p.astype(z.dtype) for p in params)
    e = jnp.tanh(z @ W.T + b) @ v
    alpha = jax.nn.softmax(e, axis=-1)
    return FusedFrame(alpha, jnp.einsum("...n,...nd->...d", alpha, z))


@partial(jax.jit, static_argnums=(0,))
def frame_posteriors_jax(spec: NetworkSpec, params: dict, frames: jnp.ndarray):
    """Keyword posterior of every frame of features [T', D] (JAX)."""
    return apply(spec, params, frames.T)[KEYWORD_CLASS]


def kws_forward(model: KwsModel, frames: np.ndarray) -> Tuple[np.ndarray, float]:
    """Score an utterance.

    Args:
        model (KwsModel): Classifier.

        frames (np.ndarray): Fused (or single-channel) features of shape [T', D].

    Raises:
        ValueError: Feature width does not match the classifier.

    Returns:
        Tuple[np.ndarray, float]: Keyword posterior of every frame and the utterance
        score, the largest frame posterior.
    """
    frames = np.asarray(frames)
    if frames.ndim != 2 or frames.shape[1] != model.spec.in_channels:
        raise ValueError(
            f"Features of shape {frames.shape} do not match input width "
            f"{model.spec.in_channels}"
        )
    frames = jnp.asarray(frames)
    post = np.asarray(frame_posteriors_jax(model.spec, model.params, frames))
    return post, float(post.max())


def score_channels(model: KwsModel, waves: np.ndarray, fuse: bool = True) -> float:
    """Utterance score of one or more channels.

    Args:
        model (KwsModel): Classifier.

        waves (np.ndarray): Channels of shape [N, L], ordered looks first, reference
            microphone last.

        fuse (bool, optional): Fuse the channels with the attention; otherwise every
            channel is scored alone and the largest score wins. Defaults to True.

    Returns:
        float: Utterance score in [0, 1].
    """
    waves = np.atleast_2d(waves)
    feats = np.stack(
        [channel_features(w, model.norm, model.fbank, model.sample_rate) for w in waves]
    )
    if len(feats) == 1:
        return kws_forward(model, feats[0])[1]
    if fuse:
        fused = attention_fuse(np.swapaxes(feats, 0, 1), model.attention, "jax")
        return kws_forward(model, np.asarray(fused.z))[1]
    return max(kws_forward(model, f)[1] for f in feats)


def kws_tree(model: KwsModel) -> dict:
    """Checkpoint entries of a classifier."""
    return {
        "kws": model.params,
        "attention": dict(model.attention._asdict()),
        "norm": dict(model.norm._asdict()),
    }


def kws_from_checkpoint(
    ckpt: Checkpoint, run: RunConfig, kind: Optional[Tuple[str, ...]] = None
) -> KwsModel:
    """Rebuild a classifier from a checkpoint written by the KWS or joint trainer.

    Raises:
        CheckpointError: Wrong kind, missing entries or parameters that do not fit the
            configured classifier.
    """
    kind = ("kws", "joint") if kind is None else kind
    if ckpt.metadata.get("kind") not in kind:
        raise CheckpointError(
            f"Checkpoint of kind {ckpt.metadata.get('kind')}, expected one of {kind}"
        )
    for group in ("kws", "attention", "norm"):
        if group not in ckpt.params:
            raise CheckpointError(f"Checkpoint has no {group} entries")
    spec = kws_spec(run.kws, run.fbank)
    try:
        params = match_params(spec, ckpt.params["kws"])
        attention = AttentionParams(
            *(jnp.asarray(ckpt.params["attention"][k]) for k in AttentionParams._fields)
        )
        norm = FbankNorm(
            *(np.asarray(ckpt.params["norm"][k], np.float64) for k in FbankNorm._fields)
        )
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"kws parameters do not fit the classifier: {e}") from e
    D, A = spec.in_channels, run.kws.attention_dim
    shapes = (attention.W.shape, attention.b.shape, attention.v.shape)
    if shapes != ((A, D), (A,), (A,)):
        raise CheckpointError("Attention parameters do not fit the configured sizes")
    if norm.mean.shape != (run.fbank.n_mels,) or norm.std.shape != (run.fbank.n_mels,):
        raise CheckpointError("Normalisation statistics do not fit the mel bands")
    return KwsModel(spec, params, attention, norm, run.fbank)
