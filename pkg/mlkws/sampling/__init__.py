from . import stft_samples
