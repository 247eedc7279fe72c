from typing import NamedTuple, Sequence, Tuple

import numpy as np
import jax.numpy as jnp
from jax import jit

from mlkws.sampling import stft_samples as samples
from mlkws.sampling.stft_samples import SAMPLE_RATE, StftConfig
from mlkws.spatial.geometry import ArrayGeometry


class FixedBeamformer(NamedTuple):
    """Frequency-domain beamformer with a fixed main lobe.

    Attributes:
        weights (np.ndarray): Complex weights of shape [F, C].

        look_azimuth (float): Steering azimuth in degrees.
    """

    weights: np.ndarray
    look_azimuth: float


def steering_vector(
    geometry: ArrayGeometry,
    theta: float,
    freqs: np.ndarray,
    reference_mic: int = 0,
) -> np.ndarray:
    r"""Unit-modulus far-field steering vector relative to a reference microphone,
    :math:`v_c(f) = e^{j 2\pi f (p_c - p_{ref}) \cdot u_\theta / c}`.

    Args:
        geometry (ArrayGeometry): Array geometry.

        theta (float): Azimuth in degrees.

        freqs (np.ndarray): Frequencies of shape [F] in Hz.

        reference_mic (int, optional): Microphone with zero phase. Defaults to 0.

    Returns:
        np.ndarray: Steering vectors of shape [F, C].
    """
    u = np.array([np.cos(np.deg2rad(theta)), np.sin(np.deg2rad(theta))])
    pos = geometry.positions - geometry.positions[reference_mic]
    advance = pos @ u / geometry.sound_speed
    return np.exp(2j * np.pi * np.asarray(freqs)[:, None] * advance[None, :])


def design_delay_and_sum(
    geometry: ArrayGeometry,
    theta: float,
    cfg: StftConfig = StftConfig(),
    sample_rate: int = SAMPLE_RATE,
    reference_mic: int = 0,
) -> FixedBeamformer:
    r"""Design a delay-and-sum beamformer, :math:`w(f) = v(f, \Theta) / C`.

    The response :math:`w^H(f) v(f, \Theta)` equals one at every frequency and the
    output is phase-aligned to the reference microphone. A single microphone gives
    identity weights.

    Args:
        geometry (ArrayGeometry): Array geometry.

        theta (float): Look azimuth in degrees.

        cfg (StftConfig, optional): STFT configuration fixing the bin frequencies.

        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

        reference_mic (int, optional): Reference microphone. Defaults to 0.

    Raises:
        ValueError: Reference microphone outside the array.

    Returns:
        FixedBeamformer: Beamformer steered to ``theta``.
    """
    if not 0 <= reference_mic < geometry.num_mics:
        raise ValueError(
            f"Reference mic {reference_mic} outside array of {geometry.num_mics} mics"
        )
    v = steering_vector(
        geometry, theta, samples.bin_frequencies(cfg, sample_rate), reference_mic
    )
    return FixedBeamformer(v / geometry.num_mics, float(theta))


def design_look_beamformers(
    geometry: ArrayGeometry,
    looks: Sequence[float],
    cfg: StftConfig = StftConfig(),
    sample_rate: int = SAMPLE_RATE,
    reference_mic: int = 0,
) -> Tuple[FixedBeamformer, ...]:
    """Delay-and-sum beamformers for every look direction."""
    return tuple(
        design_delay_and_sum(geometry, theta, cfg, sample_rate, reference_mic)
        for theta in looks
    )


def apply_beamformer(
    bf: FixedBeamformer, specs: np.ndarray, method: str = "numpy"
) -> np.ndarray:
    r"""Wrapper applying a beamformer, :math:`Z(t, f) = w^H(f) y(t, f)`.

    Args:
        bf (FixedBeamformer): Beamformer.

        specs (np.ndarray): Complex spectrograms of shape [C, T, F].

        method (str, optional): Execution mode in {"numpy", "jax"}. Defaults to "numpy".

    Raises:
        ValueError: Shapes inconsistent with the weights.

        ValueError: Method not recognised.

    Returns:
        np.ndarray: Beamformed spectrogram of shape [T, F].
    """
    weights = np.asarray(bf.weights)
    if np.ndim(specs) != 3 or (np.shape(specs)[0], np.shape(specs)[2]) != (
        weights.shape[1],
        weights.shape[0],
    ):
        raise ValueError(
            f"Spectrograms of shape {np.shape(specs)} inconsistent with weights of "
            f"shape {weights.shape} (expected [C, T, F] with F={weights.shape[0]}, "
            f"C={weights.shape[1]})"
        )
    if method == "numpy":
        return np.einsum("ctf,fc->tf", specs, weights.conj())
    elif method == "jax":
        return apply_beamformer_jax(jnp.asarray(weights), specs)
    else:
        raise ValueError(
            f"Implementation {method} not recognised. Should be either numpy or jax."
        )


@jit
def apply_beamformer_jax(weights: jnp.ndarray, specs: jnp.ndarray) -> jnp.ndarray:
    r"""Apply beamformer weights of shape [F, C] to spectrograms of shape [C, T, F]
    (JAX)."""
    return jnp.einsum("ctf,fc->tf", specs, jnp.conj(weights))
