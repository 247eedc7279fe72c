from functools import partial
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
import jax
import jax.numpy as jnp

from mlkws.io.config import NetworkConfig, RunConfig
from mlkws.io.wav import MultiChannelWaveform
from mlkws.nn import layers
from mlkws.nn.checkpoint import Checkpoint, CheckpointError
from mlkws.nn.network import NetworkSpec, apply, build, match_params
from mlkws.sampling import stft_samples as samples
from mlkws.sampling.stft_samples import SAMPLE_RATE, StftConfig
from mlkws.spatial.features import directional_feature, ipds
from mlkws.spatial.geometry import ArrayGeometry, LookDirectionSet, MicPair
from mlkws.transforms.stft import istft_jax, istft_numpy, log_power_spectrum, stft_numpy

MODES = ("mlenet", "dae")


class MlenetConfig(NamedTuple):
    """Everything the enhancement front-end needs besides its parameters.

    Attributes:
        geometry (ArrayGeometry): Microphone array.

        pairs (Tuple[MicPair, ...]): The M pairs of the phase-difference features.

        looks (LookDirectionSet): The K look directions; one directional feature and
            one mask per look. The DAE variant uses a single, per-utterance look.

        stft (StftConfig): STFT configuration.

        network (NetworkConfig): Mask estimator sizes.

        mode (str): ``"mlenet"`` (K looks) or ``"dae"`` (oracle direction).

        normalize_df (bool): Average directional features over pairs.

        reference_mic (int): Channel that is masked and resynthesised.

        sample_rate (int): Sample rate in Hz.
    """

    geometry: ArrayGeometry
    pairs: Tuple[MicPair, ...]
    looks: LookDirectionSet
    stft: StftConfig
    network: NetworkConfig
    mode: str = "mlenet"
    normalize_df: bool = True
    reference_mic: int = 0
    sample_rate: int = SAMPLE_RATE

    @property
    def num_outputs(self) -> int:
        return 1 if self.mode == "dae" else len(self.looks)

    @property
    def num_bins(self) -> int:
        return samples.nbins(self.stft)

    @property
    def feature_width(self) -> int:
        return feature_width(self)


class MlenetModel(NamedTuple):
    """Network description, parameters and front-end configuration."""

    spec: NetworkSpec
    params: dict
    cfg: MlenetConfig


def mlenet_config(run: RunConfig, mode: Optional[str] = None) -> MlenetConfig:
    """Front-end configuration of a run; ``mode`` overrides ``training.mode``."""
    mode = run.training.mode if mode is None else mode
    if mode not in MODES:
        raise ValueError(f"Enhancement mode {mode} not in {MODES}")
    return MlenetConfig(
        geometry=run.geometry,
        pairs=tuple(run.pairs),
        looks=run.looks,
        stft=run.stft,
        network=run.network,
        mode=mode,
        normalize_df=run.spatial.normalize_df,
        reference_mic=run.spatial.reference_mic,
    )


def feature_width(cfg: MlenetConfig) -> int:
    r"""Input width :math:`F (1 + M + K)`, with :math:`K = 1` for the DAE variant."""
    return cfg.num_bins * (1 + len(cfg.pairs) + cfg.num_outputs)


def assemble_features(
    specs: np.ndarray, cfg: MlenetConfig, looks: Optional[Sequence[float]] = None
) -> np.ndarray:
    r"""Concatenate the spectral and spatial input features of every frame.

    The layout of a row is ``[LPS | IPD_1 .. IPD_M | DF_1 .. DF_K]``, each block
    :math:`F` wide: the log power spectrum of the reference channel, the wrapped phase
    differences of the configured pairs and the directional features of the look
    directions in their configured order.

    Args:
        specs (np.ndarray): Complex spectrograms of shape [C, T, F].

        cfg (MlenetConfig): Front-end configuration.

        looks (Sequence[float], optional): Directions of the DF blocks. Defaults to the
            configured look set; the DAE variant passes the oracle direction.

    Raises:
        ValueError: Channels or bins do not match the geometry and STFT, or the number
            of directions differs from the network outputs.

    Returns:
        np.ndarray: Features of shape [T, F (1 + M + K)].
    """
    specs = np.asarray(specs)
    F = cfg.num_bins
    C = cfg.geometry.num_mics
    if specs.ndim != 3 or specs.shape[0] != C or specs.shape[2] != F:
        raise ValueError(
            f"Spectrograms of shape {specs.shape} do not match {cfg.geometry.num_mics} "
            f"mics and {F} bins"
        )
    looks = cfg.looks.azimuths if looks is None else tuple(looks)
    if len(looks) != cfg.num_outputs:
        raise ValueError(f"{len(looks)} directions for {cfg.num_outputs} mask outputs")
    freqs = samples.bin_frequencies(cfg.stft, cfg.sample_rate)
    phase = ipds(specs, cfg.pairs)
    blocks = [log_power_spectrum(specs[cfg.reference_mic])]
    blocks.extend(phase)
    for theta in looks:
        blocks.append(
            directional_feature(
                phase,
                theta,
                cfg.pairs,
                freqs,
                cfg.geometry.sound_speed,
                cfg.normalize_df,
            )
        )
    return np.concatenate(blocks, axis=-1)


def mlenet_spec(cfg: MlenetConfig, seed: int = 0) -> NetworkSpec:
    r"""Mask estimator: a stack of dilated depthwise-separable convolution blocks with
    one sigmoid head of :math:`K F` channels split into K masks.

    Each block maps the bottleneck through a pointwise expansion, PReLU and global
    layer normalisation, a depthwise convolution with dilation :math:`2^b`, PReLU and
    normalisation, and a pointwise projection back, with a residual connection. The
    ``blocks`` dilations are repeated ``repeats`` times.

    Args:
        cfg (MlenetConfig): Front-end configuration.

        seed (int, optional): Initialisation seed. Defaults to 0.

    Returns:
        NetworkSpec: Network taking [F (1 + M + K), T] and returning K arrays [F, T].
    """
    net = cfg.network
    F, K = cfg.num_bins, cfg.num_outputs
    B, H = net.bottleneck, net.hidden
    stack = [
        layers.gln("input_norm", cfg.feature_width),
        layers.affine("bottleneck", cfg.feature_width, B),
    ]
    for r in range(net.repeats):
        for b in range(net.blocks):
            name = f"block{r}_{b}"
            body = (
                layers.affine(f"{name}_in", B, H),
                layers.activation(f"{name}_prelu1", "prelu", H),
                layers.gln(f"{name}_norm1", H),
                layers.conv1d(
                    f"{name}_dconv",
                    H,
                    H,
                    net.kernel_size,
                    dilation=2**b,
                    causal=net.causal,
                    groups=H,
                ),
                layers.activation(f"{name}_prelu2", "prelu", H),
                layers.gln(f"{name}_norm2", H),
                layers.affine(f"{name}_out", H, B),
            )
            stack.append(layers.residual(name, B, body))
    stack += [
        layers.activation("head_prelu", "prelu", B),
        layers.affine(
            "head", B, K * F, init="zero" if net.zero_init_head else "uniform"
        ),
        layers.activation("mask", "sigmoid", K * F),
        layers.split("looks", (F,) * K),
    ]
    return NetworkSpec(tuple(stack), cfg.feature_width, seed)


def init_mlenet(cfg: MlenetConfig, seed: int = 0) -> MlenetModel:
    """Freshly initialised front-end."""
    spec = mlenet_spec(cfg, seed)
    return MlenetModel(spec, build(spec), cfg)


def predict_masks(model: MlenetModel, features: np.ndarray) -> np.ndarray:
    """Masks of every look direction.

    Args:
        model (MlenetModel): Front-end.

        features (np.ndarray): Features of shape [T, W] from :func:`assemble_features`.

    Raises:
        ValueError: Feature width does not match the network.

    Returns:
        np.ndarray: Masks in [0, 1] of shape [K, T, F], in look order.
    """
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[1] != model.cfg.feature_width:
        raise ValueError(
            f"Features of shape {features.shape} do not match width "
            f"{model.cfg.feature_width}"
        )
    masks = predict_masks_jax(model.spec, model.params, jnp.asarray(features))
    return np.asarray(masks)


@partial(jax.jit, static_argnums=(0,))
def predict_masks_jax(spec: NetworkSpec, params: dict, features: jnp.ndarray):
    """Masks of shape [K, T, F] from features of shape [T, W] (JAX)."""
    out = apply(spec, params, features.T)
    return jnp.stack([m.T for m in out])


def enhance(spec_ref: np.ndarray, masks: np.ndarray, cfg: MlenetConfig) -> np.ndarray:
    r"""Apply every mask to the reference spectrogram and resynthesise,
    :math:`\hat x^k = \text{iSTFT}(M_k \odot Y_{ref})`.

    Args:
        spec_ref (np.ndarray): Complex reference spectrogram of shape [T, F].

        masks (np.ndarray): Masks of shape [K, T, F].

        cfg (MlenetConfig): Front-end configuration.

    Raises:
        ValueError: Mask and spectrogram shapes differ.

    Returns:
        np.ndarray: Waveforms of shape [K, N_w + (T - 1) H].
    """
    spec_ref = np.asarray(spec_ref)
    masks = np.asarray(masks)
    if masks.ndim != 3 or masks.shape[1:] != spec_ref.shape:
        raise ValueError(
            f"Masks of shape {masks.shape} do not match spectrogram {spec_ref.shape}"
        )
    return istft_numpy(masks * spec_ref[None], cfg.stft)


@partial(jax.jit, static_argnums=(2,))
def enhance_jax(spec_ref: jnp.ndarray, masks: jnp.ndarray, stft_cfg: StftConfig):
    """JAX counterpart of :func:`enhance` on leading batch axes."""
    return istft_jax(masks * spec_ref[..., None, :, :], stft_cfg)


def enhance_waveform(
    model: MlenetModel,
    mixture: MultiChannelWaveform,
    looks: Optional[Sequence[float]] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Run the whole front-end on a multichannel recording.

    Args:
        model (MlenetModel): Front-end.

        mixture (MultiChannelWaveform): Recording with one channel per microphone.

        looks (Sequence[float], optional): Directions of the DF blocks.

    Raises:
        ValueError: Channel count or sample rate do not match the configuration.

    Returns:
        Tuple[np.ndarray, np.ndarray]: Enhanced waveforms [K, L'] and masks [K, T, F].
    """
    cfg = model.cfg
    if mixture.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"Sample rate {mixture.sample_rate} Hz, expected {cfg.sample_rate} Hz"
        )
    specs = stft_numpy(mixture.samples, cfg.stft)
    masks = predict_masks(model, assemble_features(specs, cfg, looks))
    return enhance(specs[cfg.reference_mic], masks, cfg), masks


def enhance_oracle_dae(
    mixture: MultiChannelWaveform, theta: float, model: MlenetModel
) -> np.ndarray:
    """Single-look enhancement steered to a known target direction.

    Args:
        mixture (MultiChannelWaveform): Recording with one channel per microphone.

        theta (float): Oracle target azimuth in degrees.

        model (MlenetModel): DAE-variant front-end (one directional feature, one mask).

    Raises:
        ValueError: Model is not a DAE variant.

    Returns:
        np.ndarray: Enhanced waveform.
    """
    if model.cfg.mode != "dae":
        raise ValueError(f"Oracle enhancement needs a dae model, got {model.cfg.mode}")
    waves, _ = enhance_waveform(model, mixture, looks=(float(theta),))
    return waves[0]


def mlenet_from_checkpoint(ckpt: Checkpoint, run: RunConfig) -> MlenetModel:
    """Rebuild a front-end from a checkpoint written by the enhancement trainer.

    Raises:
        CheckpointError: The checkpoint holds no front-end or its parameters do not
            fit the configured network.
    """
    kind = ckpt.metadata.get("kind")
    if kind not in ("mlenet", "dae", "joint"):
        raise CheckpointError(f"Checkpoint of kind {kind} holds no enhancement network")
    params = ckpt.params.get("mlenet")
    if params is None:
        raise CheckpointError("Checkpoint has no mlenet parameters")
    mode = ckpt.metadata.get("mode", "dae" if kind == "dae" else "mlenet")
    cfg = mlenet_config(run, mode)
    spec = mlenet_spec(cfg)
    try:
        params = match_params(spec, params)
    except ValueError as e:
        raise CheckpointError(f"mlenet parameters do not fit the network: {e}") from e
    return MlenetModel(spec, params, cfg)
