from . import stft
from . import fbank
