from functools import lru_cache, partial

import librosa
import numpy as np
import jax.numpy as jnp
from jax import jit

from mlkws.sampling import stft_samples as samples
from mlkws.sampling.stft_samples import FbankConfig, LOG_FLOOR, SAMPLE_RATE


def mel_filterbank(
    cfg: FbankConfig = FbankConfig(), sample_rate: int = SAMPLE_RATE
) -> np.ndarray:
    r"""Triangular mel filterbank spanning 0 Hz to Nyquist.

    Args:
        cfg (FbankConfig, optional): Filterbank configuration.

        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

    Returns:
        np.ndarray: Filter matrix of shape [n_mels, fft_size/2 + 1].
    """
    return _mel_filterbank(cfg.n_mels, cfg.fft_size, sample_rate)


def logmel_fbank(
    wave: np.ndarray,
    cfg: FbankConfig = FbankConfig(),
    sample_rate: int = SAMPLE_RATE,
    method: str = "numpy",
) -> np.ndarray:
    r"""Wrapper for log-mel filterbank extraction.

    Args:
        wave (np.ndarray): Real waveform of shape [..., L].

        cfg (FbankConfig, optional): Filterbank configuration.

        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

        method (str, optional): Execution mode in {"numpy", "jax"}. Defaults to "numpy".

    Raises:
        ValueError: Method not recognised.

    Returns:
        np.ndarray: Log-mel features of shape [..., T', n_mels].
    """
    if method == "numpy":
        return logmel_fbank_numpy(wave, cfg, sample_rate)
    elif method == "jax":
        return logmel_fbank_jax(wave, cfg, sample_rate)
    else:
        raise ValueError(
            f"Implementation {method} not recognised. Should be either numpy or jax."
        )


def logmel_fbank_numpy(
    wave: np.ndarray, cfg: FbankConfig = FbankConfig(), sample_rate: int = SAMPLE_RATE
) -> np.ndarray:
    r"""Compute log-mel filterbank energies (numpy).

    Frames of ``frame_len_ms`` every ``frame_shift_ms`` are windowed, their power
    spectrum is projected onto the mel filters and compressed by
    :math:`\log(\cdot + \epsilon)` with :math:`\epsilon = 10^{-10}`, so digital silence
    maps to :math:`\log \epsilon` in every band.

    Args:
        wave (np.ndarray): Real waveform of shape [..., L].

        cfg (FbankConfig, optional): Filterbank configuration.

        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

    Raises:
        ValueError: Input shorter than one frame.

    Returns:
        np.ndarray: Log-mel features of shape [..., T', n_mels].
    """
    wave = np.asarray(wave, dtype=np.float64)
    frames = _frames(wave, cfg, sample_rate)
    power = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=-1)) ** 2
    return np.log(power @ mel_filterbank(cfg, sample_rate).T + LOG_FLOOR)


@partial(jit, static_argnums=(1, 2))
def logmel_fbank_jax(
    wave: jnp.ndarray, cfg: FbankConfig = FbankConfig(), sample_rate: int = SAMPLE_RATE
) -> jnp.ndarray:
    r"""Compute log-mel filterbank energies (JAX). JAX implementation of
    :func:`~logmel_fbank_numpy`, differentiable with respect to the waveform.

    Args:
        wave (jnp.ndarray): Real waveform of shape [..., L].

        cfg (FbankConfig, optional): Filterbank configuration.

        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

    Returns:
        jnp.ndarray: Log-mel features of shape [..., T', n_mels].
    """
    frames = _frames(wave, cfg, sample_rate)
    spec = jnp.fft.rfft(frames, n=cfg.fft_size, axis=-1)
    power = jnp.real(spec) ** 2 + jnp.imag(spec) ** 2
    mel = jnp.asarray(mel_filterbank(cfg, sample_rate), dtype=power.dtype)
    return jnp.log(power @ mel.T + LOG_FLOOR)


def add_deltas_and_stack(
    fbank: np.ndarray, cfg: FbankConfig = FbankConfig(), method: str = "numpy"
) -> np.ndarray:
    r"""Wrapper appending delta / delta-delta features and stacking context frames.

    Args:
        fbank (np.ndarray): Log-mel features of shape [T', n_mels].

        cfg (FbankConfig, optional): Filterbank configuration.

        method (str, optional): Execution mode in {"numpy", "jax"}. Defaults to "numpy".

    Raises:
        ValueError: Method not recognised.

    Returns:
        np.ndarray: Stacked features of shape [T', D].
    """
    if method == "numpy":
        return add_deltas_and_stack_numpy(fbank, cfg)
    elif method == "jax":
        return add_deltas_and_stack_jax(fbank, cfg)
    else:
        raise ValueError(
            f"Implementation {method} not recognised. Should be either numpy or jax."
        )


def add_deltas_and_stack_numpy(
    fbank: np.ndarray, cfg: FbankConfig = FbankConfig()
) -> np.ndarray:
    r"""Append regression deltas and stack context frames (numpy).

    Deltas use the :math:`\pm 2` frame regression
    :math:`\Delta_t = \sum_n n\,(c_{t+n} - c_{t-n}) / (2 \sum_n n^2)` with edge
    replication; delta-deltas are deltas of the deltas. Each output row concatenates
    the ``left + 1 + right`` context frames (edges replicated) in time order, each frame
    laid out as ``[static | delta | delta-delta]``.

    Args:
        fbank (np.ndarray): Log-mel features of shape [T', n_mels].

        cfg (FbankConfig, optional): Filterbank configuration.

    Raises:
        ValueError: Input not of shape [T', n_mels] with T' >= 1.

    Returns:
        np.ndarray: Stacked features of shape [T', D] with
        :math:`D = 3 n_{mels} (l + 1 + r)`.
    """
    fbank = np.asarray(fbank, dtype=np.float64)
    _check_fbank_shape(fbank.shape, cfg)
    delta = librosa.feature.delta(
        fbank, width=cfg.delta_width, order=1, axis=0, mode="nearest"
    )
    delta2 = librosa.feature.delta(
        delta, width=cfg.delta_width, order=1, axis=0, mode="nearest"
    )
    feats = np.concatenate([fbank, delta, delta2], axis=-1)
    padded = np.pad(feats, ((cfg.left, cfg.right), (0, 0)), mode="edge")
    return padded[_context_indices(fbank.shape[0], cfg)].reshape(fbank.shape[0], -1)


@partial(jit, static_argnums=(1,))
def add_deltas_and_stack_jax(
    fbank: jnp.ndarray, cfg: FbankConfig = FbankConfig()
) -> jnp.ndarray:
    r"""Append regression deltas and stack context frames (JAX). JAX implementation of
    :func:`~add_deltas_and_stack_numpy`.

    Args:
        fbank (jnp.ndarray): Log-mel features of shape [T', n_mels].

        cfg (FbankConfig, optional): Filterbank configuration.

    Returns:
        jnp.ndarray: Stacked features of shape [T', D].
    """
    _check_fbank_shape(fbank.shape, cfg)
    delta = _delta_jax(fbank, cfg.delta_width)
    delta2 = _delta_jax(delta, cfg.delta_width)
    feats = jnp.concatenate([fbank, delta, delta2], axis=-1)
    padded = jnp.pad(feats, ((cfg.left, cfg.right), (0, 0)), mode="edge")
    return padded[_context_indices(fbank.shape[0], cfg)].reshape(fbank.shape[0], -1)


def _delta_jax(x: jnp.ndarray, width: int) -> jnp.ndarray:
    half = width // 2
    T = x.shape[0]
    padded = jnp.pad(x, ((half, half), (0, 0)), mode="edge")
    num = sum(
        n * (padded[half + n : half + n + T] - padded[half - n : half - n + T])
        for n in range(1, half + 1)
    )
    return num / (2 * sum(n**2 for n in range(1, half + 1)))


def _frames(wave, cfg: FbankConfig, sample_rate: int):
    frame_len = samples.fbank_frame_len(cfg, sample_rate)
    T = samples.fbank_nframes(wave.shape[-1], cfg, sample_rate)
    shift = samples.fbank_frame_shift(cfg, sample_rate)
    idx = samples.frame_indices(T, frame_len, shift)
    return wave[..., idx] * samples.fbank_window(cfg, sample_rate).astype(wave.dtype)


def _context_indices(T: int, cfg: FbankConfig) -> np.ndarray:
    return np.arange(T)[:, None] + np.arange(cfg.left + 1 + cfg.right)[None, :]


def _check_fbank_shape(shape, cfg: FbankConfig):
    if len(shape) != 2 or shape[0] < 1 or shape[1] != cfg.n_mels:
        raise ValueError(
            f"Filterbank features of shape {tuple(shape)} must be [T', {cfg.n_mels}] "
            "with T' >= 1"
        )


@lru_cache(maxsize=None)
def _mel_filterbank(n_mels: int, fft_size: int, sample_rate: int) -> np.ndarray:
    mel = librosa.filters.mel(
        sr=sample_rate,
        n_fft=fft_size,
        n_mels=n_mels,
        fmin=0.0,
        fmax=sample_rate / 2.0,
        dtype=np.float64,
    )
    mel.flags.writeable = False
    return mel
