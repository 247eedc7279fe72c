from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np
from scipy import signal as sps

SAMPLE_RATE = 16000
LOG_FLOOR = 1e-10
SUPPORTED_WINDOWS = ("hann", "hamming", "blackman")


@lru_cache(maxsize=None)
def _window(name: str, length: int) -> np.ndarray:
    w = sps.get_window(name, length, fftbins=True).astype(np.float64)
    w.flags.writeable = False
    return w


def _ms_to_samples(ms: float, sample_rate: int) -> int:
    return int(round(ms * 1e-3 * sample_rate))


@dataclass(frozen=True)
class StftConfig:
    r"""Framing configuration of the short-time Fourier transform.

    Defaults correspond to a 32 ms window and 16 ms hop at 16 kHz with a 512-point FFT,
    i.e. :math:`F = 257` frequency bins.

    Args:
        window_len (int, optional): Analysis window length in samples. Defaults to 512.

        hop (int, optional): Frame shift in samples. Defaults to 256.

        fft_size (int, optional): FFT length in samples. Defaults to 512.

        window (str, optional): Window name in {"hann", "hamming", "blackman"}.
            Defaults to "hann".

    Raises:
        ValueError: Ordering ``hop <= window_len <= fft_size`` violated.

        ValueError: Window not supported or overlap-add not invertible.
    """

    window_len: int = 512
    hop: int = 256
    fft_size: int = 512
    window: str = "hann"

    def __post_init__(self):
        if not 0 < self.hop <= self.window_len <= self.fft_size:
            raise ValueError(
                f"STFT requires 0 < hop <= window_len <= fft_size, got hop={self.hop}, "
                f"window_len={self.window_len}, fft_size={self.fft_size}"
            )
        if self.window.lower() not in SUPPORTED_WINDOWS:
            raise ValueError(f"Window {self.window} not supported")
        if not sps.check_NOLA(
            _window(self.window.lower(), self.window_len),
            self.window_len,
            self.window_len - self.hop,
        ):
            raise ValueError(
                f"Window {self.window} with hop={self.hop} cannot be inverted by "
                "overlap-add"
            )


@dataclass(frozen=True)
class FbankConfig:
    r"""Framing configuration of the log-mel filterbank front-end.

    Args:
        n_mels (int, optional): Number of mel bands. Defaults to 40.

        frame_len_ms (float, optional): Frame length in milliseconds. Defaults to 25.

        frame_shift_ms (float, optional): Frame shift in milliseconds. Defaults to 10.

        fft_size (int, optional): FFT length in samples. Defaults to 512.

        window (str, optional): Analysis window name. Defaults to "hamming".

        left (int, optional): Context frames stacked to the left. Defaults to 10.

        right (int, optional): Context frames stacked to the right. Defaults to 5.

        delta_width (int, optional): Odd regression window of the delta features.
            Defaults to 5 (i.e. :math:`\pm 2` frames).
    """

    n_mels: int = 40
    frame_len_ms: float = 25.0
    frame_shift_ms: float = 10.0
    fft_size: int = 512
    window: str = "hamming"
    left: int = 10
    right: int = 5
    delta_width: int = 5

    def __post_init__(self):
        if self.n_mels < 1:
            raise ValueError(f"n_mels={self.n_mels} must be positive")
        if self.left < 0 or self.right < 0:
            raise ValueError("Context sizes must be non-negative")
        if self.delta_width < 3 or self.delta_width % 2 == 0:
            raise ValueError(f"delta_width={self.delta_width} must be odd and >= 3")
        if self.window.lower() not in SUPPORTED_WINDOWS:
            raise ValueError(f"Window {self.window} not supported")
        frame_len = _ms_to_samples(self.frame_len_ms, SAMPLE_RATE)
        if frame_len > self.fft_size:
            raise ValueError(
                f"Frame of {frame_len} samples exceeds fft_size={self.fft_size}"
            )


def nbins(cfg: StftConfig = StftConfig()) -> int:
    r"""Number of one-sided frequency bins :math:`F = N_{fft}/2 + 1`.

    Args:
        cfg (StftConfig, optional): STFT configuration.

    Returns:
        int: Number of frequency bins.
    """
    return cfg.fft_size // 2 + 1


def nframes(length: int, cfg: StftConfig = StftConfig()) -> int:
    r"""Number of STFT frames :math:`T = 1 + \lfloor (L - N_w)/H \rfloor` of a signal.

    Args:
        length (int): Signal length in samples.

        cfg (StftConfig, optional): STFT configuration.

    Raises:
        ValueError: Input too short for a single window.

    Returns:
        int: Number of frames.
    """
    if length < cfg.window_len:
        raise ValueError(
            f"Input too short: {length} samples < window length {cfg.window_len}"
        )
    return 1 + (length - cfg.window_len) // cfg.hop


def signal_length(T: int, cfg: StftConfig = StftConfig()) -> int:
    r"""Length of the overlap-add synthesis of :math:`T` frames,
    :math:`N_w + (T - 1) H`.

    Args:
        T (int): Number of frames.

        cfg (StftConfig, optional): STFT configuration.

    Returns:
        int: Number of samples.
    """
    if T < 1:
        raise ValueError(f"Number of frames T={T} must be positive")
    return cfg.window_len + (T - 1) * cfg.hop


def spectrogram_shape(length: int, cfg: StftConfig = StftConfig()) -> Tuple[int, int]:
    r"""Shape :math:`(T, F)` of the spectrogram of a signal of given length.

    Args:
        length (int): Signal length in samples.

        cfg (StftConfig, optional): STFT configuration.

    Returns:
        Tuple[int, int]: Frames and bins.
    """
    return nframes(length, cfg), nbins(cfg)


def bin_frequencies(
    cfg: StftConfig = StftConfig(), sample_rate: int = SAMPLE_RATE
) -> np.ndarray:
    r"""Centre frequency in Hz of every one-sided bin, :math:`f_k = k f_s / N_{fft}`.

    Args:
        cfg (StftConfig, optional): STFT configuration.

        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

    Returns:
        np.ndarray: Frequencies of shape [F].
    """
    return np.arange(nbins(cfg)) * sample_rate / cfg.fft_size


def frame_indices(T: int, frame_len: int, hop: int) -> np.ndarray:
    r"""Sample index matrix of shape [T, frame_len] selecting every frame.

    Args:
        T (int): Number of frames.

        frame_len (int): Samples per frame.

        hop (int): Frame shift.

    Returns:
        np.ndarray: Integer indices.
    """
    return np.arange(T)[:, None] * hop + np.arange(frame_len)[None, :]


def window(cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Periodic analysis window of the STFT configuration.

    Args:
        cfg (StftConfig, optional): STFT configuration.

    Returns:
        np.ndarray: Window of length ``window_len``.
    """
    return _window(cfg.window.lower(), cfg.window_len)


def synthesis_normalisation(T: int, cfg: StftConfig = StftConfig()) -> np.ndarray:
    r"""Overlap-added squared window :math:`\sum_t w^2(n - tH)` used to normalise the
    weighted overlap-add synthesis.

    Samples where the sum vanishes (e.g. the first sample under a periodic Hann window)
    are returned as 1, which leaves those output samples at zero.

    Args:
        T (int): Number of frames.

        cfg (StftConfig, optional): STFT configuration.

    Returns:
        np.ndarray: Normalisation of length :func:`signal_length`.
    """
    w2 = window(cfg) ** 2
    norm = np.zeros(signal_length(T, cfg))
    for t in range(T):
        norm[t * cfg.hop : t * cfg.hop + cfg.window_len] += w2
    norm[norm < LOG_FLOOR] = 1.0
    return norm


def fbank_frame_len(
    cfg: FbankConfig = FbankConfig(), sample_rate: int = SAMPLE_RATE
) -> int:
    """Filterbank frame length in samples (400 for 25 ms at 16 kHz)."""
    return _ms_to_samples(cfg.frame_len_ms, sample_rate)


def fbank_frame_shift(
    cfg: FbankConfig = FbankConfig(), sample_rate: int = SAMPLE_RATE
) -> int:
    """Filterbank frame shift in samples (160 for 10 ms at 16 kHz)."""
    return _ms_to_samples(cfg.frame_shift_ms, sample_rate)


def fbank_nframes(
    length: int, cfg: FbankConfig = FbankConfig(), sample_rate: int = SAMPLE_RATE
) -> int:
    """Number of filterbank frames of a signal.

    Args:
        length (int): Signal length in samples.

        cfg (FbankConfig, optional): Filterbank configuration.

        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

    Raises:
        ValueError: Input shorter than one frame.

    Returns:
        int: Number of frames :math:`T'`.
    """
    frame_len = fbank_frame_len(cfg, sample_rate)
    if length < frame_len:
        raise ValueError(
            f"Input too short: {length} samples < fbank frame length {frame_len}"
        )
    return 1 + (length - frame_len) // fbank_frame_shift(cfg, sample_rate)


def fbank_window(
    cfg: FbankConfig = FbankConfig(), sample_rate: int = SAMPLE_RATE
) -> np.ndarray:
    """Periodic analysis window of the filterbank frames."""
    return _window(cfg.window.lower(), fbank_frame_len(cfg, sample_rate))


def stacked_dim(cfg: FbankConfig = FbankConfig()) -> int:
    r"""Width :math:`D` of the context-stacked static + delta + delta-delta features,
    :math:`D = 3 n_{mels} (l + 1 + r)` (1920 by default).

    Args:
        cfg (FbankConfig, optional): Filterbank configuration.

    Returns:
        int: Stacked feature dimension.
    """
    return 3 * cfg.n_mels * (cfg.left + 1 + cfg.right)

