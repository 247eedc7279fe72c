from typing import Sequence

import numpy as np

from mlkws.spatial.geometry import MicPair, SOUND_SPEED


def wrap_phase(phase: np.ndarray) -> np.ndarray:
    r"""Wrap phases to :math:`(-\pi, \pi]`."""
    return np.pi - np.mod(np.pi - np.asarray(phase, dtype=np.float64), 2 * np.pi)


def steering_phase(
    theta: float, freqs, pair: MicPair, sound_speed: float = SOUND_SPEED
) -> np.ndarray:
    r"""Phase of the far-field steering vector of a microphone pair,
    :math:`2\pi f \Delta \cos(\theta - \phi_{axis}) / c`.

    The angle between the source direction and the pair axis is taken as
    :math:`\theta - \phi_{axis}`, where the axis points from ``m2`` to ``m1``.
    The returned value is therefore the expected
    :math:`\angle Y_{m_1} - \angle Y_{m_2}` of a plane wave arriving from azimuth
    :math:`\theta`.

    Args:
        theta (float): Source azimuth in degrees.

        freqs (float or np.ndarray): Frequencies in Hz.

        pair (MicPair): Microphone pair.

        sound_speed (float, optional): Speed of sound in m/s. Defaults to 343.

    Returns:
        np.ndarray: Phase in radians (unwrapped), same shape as ``freqs``.
    """
    cos = np.cos(np.deg2rad(theta - pair.axis_azimuth))
    freqs = np.asarray(freqs, dtype=np.float64)
    return 2 * np.pi * freqs * pair.distance * cos / sound_speed


def steering_phases(
    theta: float, freqs, pairs: Sequence[MicPair], sound_speed: float = SOUND_SPEED
) -> np.ndarray:
    """Steering phases of every pair, shape [M, F]."""
    return np.stack([steering_phase(theta, freqs, p, sound_speed) for p in pairs])


def ipd(spec_m1: np.ndarray, spec_m2: np.ndarray) -> np.ndarray:
    r"""Inter-channel phase difference
    :math:`\angle Y_{m_1}(t, f) - \angle Y_{m_2}(t, f)` wrapped to
    :math:`(-\pi, \pi]`.

    Bins with zero magnitude have phase zero, which keeps degenerate inputs
    deterministic.

    Args:
        spec_m1 (np.ndarray): Complex spectrogram of the first microphone.

        spec_m2 (np.ndarray): Complex spectrogram of the second microphone.

    Raises:
        ValueError: Shapes differ.

    Returns:
        np.ndarray: Phase differences in radians.
    """
    if np.shape(spec_m1) != np.shape(spec_m2):
        raise ValueError(
            f"IPD needs equal shapes, got {np.shape(spec_m1)} and {np.shape(spec_m2)}"
        )
    return wrap_phase(np.angle(spec_m1) - np.angle(spec_m2))


def ipds(specs: np.ndarray, pairs: Sequence[MicPair]) -> np.ndarray:
    """IPD of every pair from multichannel spectrograms.

    Args:
        specs (np.ndarray): Complex spectrograms of shape [C, T, F].

        pairs (Sequence[MicPair]): Microphone pairs.

    Raises:
        ValueError: Pair index outside the channel range.

    Returns:
        np.ndarray: IPDs of shape [M, T, F].
    """
    C = np.shape(specs)[0]
    for p in pairs:
        if max(p.m1, p.m2) >= C:
            raise ValueError(f"Pair ({p.m1}, {p.m2}) needs more than {C} channels")
    return np.stack([ipd(specs[p.m1], specs[p.m2]) for p in pairs])


def directional_feature(
    ipd_maps: np.ndarray,
    theta: float,
    pairs: Sequence[MicPair],
    freqs,
    sound_speed: float = SOUND_SPEED,
    normalize: bool = True,
) -> np.ndarray:
    r"""Directional feature of azimuth :math:`\theta`,
    :math:`d_\theta(t, f) = \frac{1}{M} \sum_m \langle e^{\angle v^{(m)}_\theta(f)},
    e^{\text{IPD}^{(m)}(t, f)} \rangle` where
    :math:`e^{(\cdot)} = [\cos(\cdot), \sin(\cdot)]^T`, i.e. the mean of
    :math:`\cos(\angle v - \text{IPD})` over pairs.

    Args:
        ipd_maps (np.ndarray): IPDs of shape [M, T, F].

        theta (float): Azimuth in degrees.

        pairs (Sequence[MicPair]): The M microphone pairs, in the order of ``ipd_maps``.

        freqs (np.ndarray): Bin frequencies of shape [F] in Hz.

        sound_speed (float, optional): Speed of sound in m/s. Defaults to 343.

        normalize (bool, optional): Divide the sum over pairs by M, bounding the
            feature to :math:`[-1, 1]`. Defaults to True.

    Raises:
        ValueError: No pairs, or shapes inconsistent with the pairs and frequencies.

    Returns:
        np.ndarray: Directional feature of shape [T, F].
    """
    M = len(pairs)
    if M == 0:
        raise ValueError("Directional feature needs at least one microphone pair")
    ipd_maps = np.asarray(ipd_maps, dtype=np.float64)
    freqs = np.asarray(freqs, dtype=np.float64)
    if ipd_maps.ndim != 3 or ipd_maps.shape[0] != M or ipd_maps.shape[-1] != freqs.size:
        raise ValueError(
            f"IPDs of shape {ipd_maps.shape} inconsistent with {M} pairs and "
            f"{freqs.size} frequencies"
        )
    steer = steering_phases(theta, freqs, pairs, sound_speed)
    df = np.sum(np.cos(steer[:, None, :] - ipd_maps), axis=0)
    return df / M if normalize else df


def freefield_df_approx(
    theta_source: float,
    theta_look: float,
    pairs: Sequence[MicPair],
    freqs,
    sound_speed: float = SOUND_SPEED,
    normalize: bool = True,
) -> np.ndarray:
    r"""Free-field prediction of the directional feature of look direction
    :math:`\Theta` at bins dominated by a source from :math:`\theta`,
    :math:`\frac{1}{M}\sum_m \cos(\angle v^{(m)}_\Theta(f) - \angle v^{(m)}_\theta(f))`.

    Args:
        theta_source (float): Source azimuth in degrees.

        theta_look (float): Look azimuth in degrees.

        pairs (Sequence[MicPair]): Microphone pairs.

        freqs (float or np.ndarray): Frequencies in Hz.

        sound_speed (float, optional): Speed of sound in m/s. Defaults to 343.

        normalize (bool, optional): Divide by M. Defaults to True.

    Raises:
        ValueError: No pairs.

    Returns:
        np.ndarray: Predicted feature, same shape as ``freqs``.
    """
    M = len(pairs)
    if M == 0:
        raise ValueError("Directional feature needs at least one microphone pair")
    diff = steering_phases(theta_look, freqs, pairs, sound_speed) - steering_phases(
        theta_source, freqs, pairs, sound_speed
    )
    df = np.sum(np.cos(diff), axis=0)
    return df / M if normalize else df
