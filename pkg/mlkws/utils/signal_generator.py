from typing import Optional, Sequence

import numpy as np
from scipy import signal as sps

from mlkws.sampling.stft_samples import SAMPLE_RATE

KEYWORD_SEED = 20190919
SYLLABLE_S = (0.12, 0.22)
GAP_S = (0.03, 0.08)


def generate_syllable(
    rng: np.random.Generator,
    duration: float,
    f0: float,
    formants: Sequence[float],
    sample_rate: int = SAMPLE_RATE,
) -> np.ndarray:
    r"""Generate a voiced speech-like syllable.

    A harmonic tone with slight vibrato is shaped by two second-order resonances
    placed at the formant frequencies and by an attack/decay envelope.

    Args:
        rng (Generator): Random number generator.

        duration (float): Syllable length in seconds.

        f0 (float): Fundamental frequency in Hz.

        formants (Sequence[float]): Resonance frequencies in Hz.

        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

    Returns:
        np.ndarray: Syllable waveform with unit peak amplitude.
    """
    n = max(int(duration * sample_rate), 1)
    t = np.arange(n) / sample_rate
    vibrato = 1 + 0.02 * np.sin(2 * np.pi * rng.uniform(4, 7) * t)
    phase = 2 * np.pi * np.cumsum(f0 * vibrato) / sample_rate
    n_harm = int((sample_rate / 2 - 200) // f0)
    k = np.arange(1, n_harm + 1)
    x = np.sum(np.sin(k[:, None] * phase[None, :]) / k[:, None], axis=0)
    x += 0.05 * rng.standard_normal(n)
    for fc in formants:
        b, a = sps.iirpeak(fc, Q=5.0, fs=sample_rate)
        x = sps.lfilter(b, a, x)
    attack = min(n, int(0.02 * sample_rate))
    release = min(n, int(0.06 * sample_rate))
    env = np.ones(n)
    env[:attack] = np.linspace(0, 1, attack)
    env[n - release :] *= np.linspace(1, 0, release)
    x *= env
    peak = np.max(np.abs(x))
    return x / peak if peak > 0 else x


def generate_utterance(
    rng: np.random.Generator,
    num_syllables: Optional[int] = None,
    sample_rate: int = SAMPLE_RATE,
) -> np.ndarray:
    r"""Generate a random background utterance of speech-like syllables.

    Args:
        rng (Generator): Random number generator.

        num_syllables (int, optional): Number of syllables. Defaults to a random count
            in [2, 6].

        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

    Returns:
        np.ndarray: Utterance waveform.
    """
    if num_syllables is None:
        num_syllables = int(rng.integers(2, 7))
    f0 = rng.uniform(90, 250)
    parts = []
    for _ in range(num_syllables):
        dur = rng.uniform(*SYLLABLE_S)
        formants = (rng.uniform(300, 900), rng.uniform(900, 2800))
        pitch = f0 * rng.uniform(0.85, 1.15)
        parts.append(generate_syllable(rng, dur, pitch, formants, sample_rate))
        parts.append(np.zeros(int(rng.uniform(*GAP_S) * sample_rate)))
    return np.concatenate(parts)


def generate_keyword(
    sample_rate: int = SAMPLE_RATE, seed: int = KEYWORD_SEED
) -> np.ndarray:
    r"""Generate the fixed four-syllable keyword.

    The pitch and formant contour are fixed by ``seed``; every call returns the same
    waveform.

    Args:
        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

        seed (int, optional): Seed fixing the keyword. Defaults to a package constant.

    Returns:
        np.ndarray: Keyword waveform.
    """
    rng = np.random.default_rng(seed)
    contour = (1.0, 1.2, 0.9, 0.8)
    formants = ((700, 1200), (400, 2200), (600, 1000), (300, 2500))
    parts = []
    for scale, fmt in zip(contour, formants):
        parts.append(generate_syllable(rng, 0.18, 160 * scale, fmt, sample_rate))
        parts.append(np.zeros(int(0.04 * sample_rate)))
    return np.concatenate(parts)


def vary_keyword(
    rng: np.random.Generator, keyword: np.ndarray, sample_rate: int = SAMPLE_RATE
) -> np.ndarray:
    r"""Random speaker variation of a keyword: tempo/pitch change by resampling and a
    random gain.

    Args:
        rng (Generator): Random number generator.

        keyword (np.ndarray): Keyword waveform.

        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

    Returns:
        np.ndarray: Varied keyword.
    """
    factor = rng.uniform(0.9, 1.1)
    out = sps.resample(keyword, max(int(len(keyword) * factor), 1))
    return out * rng.uniform(0.5, 1.0)


def generate_noise(
    rng: np.random.Generator, length: int, exponent: float = 1.0
) -> np.ndarray:
    r"""Generate coloured Gaussian noise with power spectrum
    :math:`\propto f^{-\gamma}`.

    Args:
        rng (Generator): Random number generator.

        length (int): Number of samples.

        exponent (float, optional): Spectral exponent :math:`\gamma` (1 for pink,
            0 for white). Defaults to 1.

    Returns:
        np.ndarray: Noise with unit variance.
    """
    if length < 1:
        raise ValueError(f"Noise length {length} must be positive")
    spec = np.fft.rfft(rng.standard_normal(length))
    f = np.arange(len(spec), dtype=np.float64)
    f[0] = 1.0
    x = np.fft.irfft(spec / f ** (exponent / 2), n=length)
    x -= x.mean()
    std = x.std()
    return x / std if std > 0 else x


def plane_wave(
    wave: np.ndarray,
    azimuth: float,
    mic_positions: np.ndarray,
    sound_speed: float = 343.0,
    sample_rate: int = SAMPLE_RATE,
) -> np.ndarray:
    r"""Render an ideal far-field plane wave on an array by frequency-domain delays.

    A microphone at position :math:`p` receives :math:`s(t + p \cdot u / c)`, where
    :math:`u` is the unit vector pointing towards the source. The delay is applied as a
    linear phase on the full-length FFT, i.e. circularly.

    Args:
        wave (np.ndarray): Source waveform of length L.

        azimuth (float): Source azimuth in degrees.

        mic_positions (np.ndarray): Microphone coordinates of shape [C, 2].

        sound_speed (float, optional): Speed of sound in m/s. Defaults to 343.

        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

    Returns:
        np.ndarray: Multichannel waveform of shape [C, L].
    """
    wave = np.asarray(wave, dtype=np.float64)
    L = wave.shape[-1]
    u = np.array([np.cos(np.deg2rad(azimuth)), np.sin(np.deg2rad(azimuth))])
    advance = np.asarray(mic_positions) @ u / sound_speed
    f = np.fft.rfftfreq(L, 1.0 / sample_rate)
    shift = np.exp(2j * np.pi * f[None, :] * advance[:, None])
    spec = np.fft.rfft(wave)[None, :] * shift
    return np.fft.irfft(spec, n=L)
