from pathlib import Path
from typing import NamedTuple, Union

import numpy as np
import soundfile as sf
from scipy.io import wavfile

from mlkws.sampling.stft_samples import SAMPLE_RATE

SUPPORTED_SUBTYPES = ("PCM_16", "FLOAT")


class MultiChannelWaveform(NamedTuple):
    """Multichannel audio.

    Attributes:
        samples (np.ndarray): Samples of shape [C, L].

        sample_rate (int): Sample rate in Hz.
    """

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    @property
    def num_channels(self) -> int:
        return self.samples.shape[0]


def read_wav(
    path: Union[str, Path], sample_rate: int = SAMPLE_RATE
) -> MultiChannelWaveform:
    r"""Read a RIFF WAV file.

    Float32 files are returned bit-exactly; PCM16 files are scaled by
    :math:`2^{-15}` into :math:`[-1, 1)`.

    Args:
        path (str): File path.

        sample_rate (int, optional): Required sample rate. Defaults to 16000.

    Raises:
        ValueError: Missing file, unsupported sample format or sample rate. Audio is
            never resampled.

    Returns:
        MultiChannelWaveform: Samples of shape [C, L].
    """
    path = Path(path)
    if not path.exists():
        raise ValueError(f"WAV file {path} does not exist")
    info = sf.info(str(path))
    if info.format != "WAV" or info.subtype not in SUPPORTED_SUBTYPES:
        raise ValueError(
            f"{path}: format {info.format}/{info.subtype} not supported, need WAV with "
            f"one of {SUPPORTED_SUBTYPES}"
        )
    if info.samplerate != sample_rate:
        raise ValueError(
            f"{path}: sample rate {info.samplerate} Hz, expected {sample_rate} Hz"
        )
    dtype = "float32" if info.subtype == "FLOAT" else "float64"
    data, rate = sf.read(str(path), dtype=dtype, always_2d=True)
    return MultiChannelWaveform(np.ascontiguousarray(data.T), rate)


def write_wav(path: Union[str, Path], wave: MultiChannelWaveform):
    r"""Write a multichannel float32 RIFF WAV file.

    The file contains no timestamps, so identical audio gives identical bytes.

    Args:
        path (str): File path.

        wave (MultiChannelWaveform): Audio of shape [C, L] (a 1-D array is written as
            one channel).

    Raises:
        ValueError: Non-finite samples or a sample rate other than 16 kHz.
    """
    samples = np.asarray(wave.samples)
    if samples.ndim == 1:
        samples = samples[None, :]
    if samples.ndim != 2 or samples.shape[0] < 1:
        raise ValueError(f"Audio of shape {samples.shape} must be [C, L]")
    if not np.all(np.isfinite(samples)):
        raise ValueError("Audio contains non-finite samples")
    if wave.sample_rate != SAMPLE_RATE:
        raise ValueError(f"Sample rate {wave.sample_rate} Hz not supported")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(str(path), wave.sample_rate, samples.T.astype(np.float32))
