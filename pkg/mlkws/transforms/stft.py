from functools import partial

import numpy as np
import jax.numpy as jnp
from jax import jit

from mlkws.sampling import stft_samples as samples
from mlkws.sampling.stft_samples import StftConfig, LOG_FLOOR


def stft(
    wave: np.ndarray, cfg: StftConfig = StftConfig(), method: str = "numpy"
) -> np.ndarray:
    r"""Wrapper for the forward short-time Fourier transform.

    Args:
        wave (np.ndarray): Real waveform of shape [..., L]; leading axes (e.g. channels)
            are transformed independently.

        cfg (StftConfig, optional): STFT configuration.

        method (str, optional): Execution mode in {"numpy", "jax"}. Defaults to "numpy".

    Raises:
        ValueError: Transform method not recognised.

    Returns:
        np.ndarray: One-sided complex spectrogram of shape [..., T, F].
    """
    if method == "numpy":
        return stft_numpy(wave, cfg)
    elif method == "jax":
        return stft_jax(wave, cfg)
    else:
        raise ValueError(
            f"Implementation {method} not recognised. Should be either numpy or jax."
        )


def stft_numpy(wave: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    r"""Compute the short-time Fourier transform (numpy).

    Frames :math:`T = 1 + \lfloor (L - N_w)/H \rfloor` windows of the signal without
    padding and applies an unnormalised forward FFT, so that for a single frame
    :math:`\sum_k |Y_k|^2` (two-sided) equals :math:`N_{fft}` times the windowed frame
    energy.

    Args:
        wave (np.ndarray): Real waveform of shape [..., L].

        cfg (StftConfig, optional): STFT configuration.

    Raises:
        ValueError: Input too short for one window.

        ValueError: Input contains non-finite values.

    Returns:
        np.ndarray: One-sided complex spectrogram of shape [..., T, F].
    """
    wave = np.asarray(wave, dtype=np.float64)
    if not np.all(np.isfinite(wave)):
        raise ValueError("Waveform contains non-finite values")
    T = samples.nframes(wave.shape[-1], cfg)
    frames = wave[..., samples.frame_indices(T, cfg.window_len, cfg.hop)]
    return np.fft.rfft(frames * samples.window(cfg), n=cfg.fft_size, axis=-1)


@partial(jit, static_argnums=(1,))
def stft_jax(wave: jnp.ndarray, cfg: StftConfig = StftConfig()) -> jnp.ndarray:
    r"""Compute the short-time Fourier transform (JAX). JAX implementation of
    :func:`~stft_numpy`.

    Args:
        wave (jnp.ndarray): Real waveform of shape [..., L].

        cfg (StftConfig, optional): STFT configuration.

    Returns:
        jnp.ndarray: One-sided complex spectrogram of shape [..., T, F].
    """
    T = samples.nframes(wave.shape[-1], cfg)
    frames = wave[..., samples.frame_indices(T, cfg.window_len, cfg.hop)]
    w = jnp.asarray(samples.window(cfg), dtype=wave.dtype)
    return jnp.fft.rfft(frames * w, n=cfg.fft_size, axis=-1)


def istft(
    spec: np.ndarray, cfg: StftConfig = StftConfig(), method: str = "numpy"
) -> np.ndarray:
    r"""Wrapper for the inverse short-time Fourier transform.

    Args:
        spec (np.ndarray): One-sided complex spectrogram of shape [..., T, F].

        cfg (StftConfig, optional): STFT configuration.

        method (str, optional): Execution mode in {"numpy", "jax"}. Defaults to "numpy".

    Raises:
        ValueError: Transform method not recognised.

    Returns:
        np.ndarray: Waveform of shape [..., N_w + (T - 1) H].
    """
    if method == "numpy":
        return istft_numpy(spec, cfg)
    elif method == "jax":
        return istft_jax(spec, cfg)
    else:
        raise ValueError(
            f"Implementation {method} not recognised. Should be either numpy or jax."
        )


def istft_numpy(spec: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    r"""Compute the inverse short-time Fourier transform by weighted overlap-add
    (numpy).

    Every frame is inverted with a :math:`1/N_{fft}` normalised inverse FFT, multiplied
    by the synthesis window and overlap-added; the sum is divided by
    :math:`\sum_t w^2(n - tH)`. The analysis/synthesis pair therefore adds up to one at
    every sample covered by a non-zero window, which makes the round trip exact away
    from the signal edges.

    Args:
        spec (np.ndarray): One-sided complex spectrogram of shape [..., T, F].

        cfg (StftConfig, optional): STFT configuration.

    Raises:
        ValueError: Spectrogram shape inconsistent with the configuration.

    Returns:
        np.ndarray: Waveform of shape [..., N_w + (T - 1) H].
    """
    spec = np.asarray(spec)
    _check_spec_shape(spec.shape, cfg)
    T = spec.shape[-2]
    frames = np.fft.irfft(spec, n=cfg.fft_size, axis=-1)[..., : cfg.window_len]
    frames = frames * samples.window(cfg)
    out = np.zeros(spec.shape[:-2] + (samples.signal_length(T, cfg),))
    for t in range(T):
        out[..., t * cfg.hop : t * cfg.hop + cfg.window_len] += frames[..., t, :]
    return out / samples.synthesis_normalisation(T, cfg)


@partial(jit, static_argnums=(1,))
def istft_jax(spec: jnp.ndarray, cfg: StftConfig = StftConfig()) -> jnp.ndarray:
    r"""Compute the inverse short-time Fourier transform by weighted overlap-add (JAX).
    JAX implementation of :func:`~istft_numpy`, differentiable with respect to the
    spectrogram.

    Args:
        spec (jnp.ndarray): One-sided complex spectrogram of shape [..., T, F].

        cfg (StftConfig, optional): STFT configuration.

    Returns:
        jnp.ndarray: Waveform of shape [..., N_w + (T - 1) H].
    """
    _check_spec_shape(spec.shape, cfg)
    T = spec.shape[-2]
    frames = jnp.fft.irfft(spec, n=cfg.fft_size, axis=-1)[..., : cfg.window_len]
    frames = frames * jnp.asarray(samples.window(cfg), dtype=frames.dtype)
    out = jnp.zeros(spec.shape[:-2] + (samples.signal_length(T, cfg),), frames.dtype)
    out = out.at[..., samples.frame_indices(T, cfg.window_len, cfg.hop)].add(frames)
    norm = samples.synthesis_normalisation(T, cfg)
    return out / jnp.asarray(norm, dtype=frames.dtype)


def log_power_spectrum(spec: np.ndarray, method: str = "numpy") -> np.ndarray:
    r"""Log power spectrum :math:`\log(|Y|^2 + \epsilon)` with
    :math:`\epsilon = 10^{-10}`.

    Args:
        spec (np.ndarray): Complex spectrogram of any shape.

        method (str, optional): Execution mode in {"numpy", "jax"}. Defaults to "numpy".

    Raises:
        ValueError: Transform method not recognised.

    Returns:
        np.ndarray: Real array of the same shape.
    """
    if method == "numpy":
        return np.log(np.abs(spec) ** 2 + LOG_FLOOR)
    elif method == "jax":
        return log_power_spectrum_jax(spec)
    else:
        raise ValueError(
            f"Implementation {method} not recognised. Should be either numpy or jax."
        )


@jit
def log_power_spectrum_jax(spec: jnp.ndarray) -> jnp.ndarray:
    r"""Log power spectrum (JAX). JAX implementation of :func:`~log_power_spectrum`."""
    return jnp.log(jnp.real(spec) ** 2 + jnp.imag(spec) ** 2 + LOG_FLOOR)


def _check_spec_shape(shape, cfg: StftConfig):
    if len(shape) < 2 or shape[-1] != samples.nbins(cfg) or shape[-2] < 1:
        raise ValueError(
            f"Spectrogram shape {tuple(shape)} inconsistent with fft_size="
            f"{cfg.fft_size} (expected [..., T, {samples.nbins(cfg)}])"
        )
