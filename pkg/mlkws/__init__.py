from . import logs
from .transforms.stft import stft, istft, log_power_spectrum
from .transforms.fbank import logmel_fbank, add_deltas_and_stack

import logging
from jax import config

if not config.jax_enable_x64:
    logger = logging.getLogger("mlkws")
    logger.warning(
        "JAX is not using 64-bit precision. The numpy and JAX implementations then "
        "agree to single precision only."
    )
