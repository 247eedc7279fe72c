from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

SOUND_SPEED = 343.0

# Index pairs of the 6-element circular array, i.e. microphones at
# (0, 180), (60, 240), (120, 300), (0, 60), (120, 180), (240, 300) degrees.
DEFAULT_PAIRS = ((0, 3), (1, 4), (2, 5), (0, 1), (2, 3), (4, 5))
DEFAULT_LOOKS = (0.0, 90.0, 180.0, 270.0)


@dataclass(frozen=True)
class ArrayGeometry:
    r"""Horizontal-plane microphone array.

    Coordinates are in metres in the array frame: :math:`x` points to azimuth
    :math:`0^\circ`, :math:`y` to :math:`90^\circ`. A single microphone is accepted
    (beamformers then degenerate to the identity); spatial features need pairs and
    therefore at least two microphones.

    Args:
        mic_positions (Tuple[Tuple[float, float], ...]): Microphone coordinates.

        sound_speed (float, optional): Speed of sound in m/s. Defaults to 343.

    Raises:
        ValueError: No microphones, coincident microphones or non-positive sound speed.
    """

    mic_positions: Tuple[Tuple[float, float], ...]
    sound_speed: float = SOUND_SPEED

    def __post_init__(self):
        pos = np.asarray(self.mic_positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[0] < 1 or pos.shape[1] != 2:
            raise ValueError(
                f"Microphone positions must have shape [C, 2], got {pos.shape}"
            )
        if not np.all(np.isfinite(pos)):
            raise ValueError("Microphone positions must be finite")
        dist = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        if np.any(dist[~np.eye(len(pos), dtype=bool)] <= 0):
            raise ValueError("Microphone positions must be distinct")
        if self.sound_speed <= 0:
            raise ValueError(f"Sound speed {self.sound_speed} must be positive")

    @property
    def num_mics(self) -> int:
        return len(self.mic_positions)

    @property
    def positions(self) -> np.ndarray:
        """Microphone coordinates as an array of shape [C, 2]."""
        return np.asarray(self.mic_positions, dtype=np.float64)


@dataclass(frozen=True)
class MicPair:
    r"""Microphone pair used for phase differences.

    Args:
        m1 (int): Index of the first microphone.

        m2 (int): Index of the second microphone.

        distance (float): Inter-microphone distance :math:`\Delta` in metres.

        axis_azimuth (float): Azimuth in degrees of the vector pointing from ``m2`` to
            ``m1``.

    Raises:
        ValueError: Identical indices or non-positive distance.
    """

    m1: int
    m2: int
    distance: float
    axis_azimuth: float

    def __post_init__(self):
        if self.m1 == self.m2:
            raise ValueError(f"Microphone pair needs two distinct mics, got {self.m1}")
        if not self.distance > 0:
            raise ValueError(f"Pair distance {self.distance} must be positive")


@dataclass(frozen=True)
class LookDirectionSet:
    r"""Fixed look directions :math:`\Theta_1, \dots, \Theta_K` in degrees.

    Args:
        azimuths (Tuple[float, ...]): Look azimuths in :math:`[0, 360)`.

    Raises:
        ValueError: Empty set, values out of range or duplicates.
    """

    azimuths: Tuple[float, ...] = DEFAULT_LOOKS

    def __post_init__(self):
        az = np.asarray(self.azimuths, dtype=np.float64)
        if az.ndim != 1 or az.size < 1:
            raise ValueError("At least one look direction is required")
        if np.any(az < 0) or np.any(az >= 360):
            raise ValueError(f"Look directions {self.azimuths} must lie in [0, 360)")
        if len(np.unique(az)) != az.size:
            raise ValueError(f"Look directions {self.azimuths} must be distinct")

    def __len__(self) -> int:
        return len(self.azimuths)


def uniform_circular_array(
    num_mics: int = 6,
    radius: float = 0.035,
    sound_speed: float = SOUND_SPEED,
    rotation_deg: float = 0.0,
) -> ArrayGeometry:
    r"""Uniform circular array with microphone :math:`c` at azimuth
    :math:`\text{rotation} + 360 c / C`.

    Args:
        num_mics (int, optional): Number of microphones. Defaults to 6.

        radius (float, optional): Radius in metres. Defaults to 0.035.

        sound_speed (float, optional): Speed of sound in m/s. Defaults to 343.

        rotation_deg (float, optional): Rotation of microphone 0. Defaults to 0.

    Returns:
        ArrayGeometry: Array geometry.
    """
    if num_mics < 1 or (radius <= 0 and num_mics > 1):
        raise ValueError(
            f"Circular array with num_mics={num_mics}, radius={radius} not supported"
        )
    phi = np.deg2rad(rotation_deg + 360.0 * np.arange(num_mics) / num_mics)
    pos = radius * np.stack([np.cos(phi), np.sin(phi)], axis=-1)
    return ArrayGeometry(tuple(map(tuple, pos.tolist())), sound_speed)


def mic_pair(geometry: ArrayGeometry, m1: int, m2: int) -> MicPair:
    """Build a :class:`MicPair` consistent with the array geometry.

    Args:
        geometry (ArrayGeometry): Array geometry.

        m1 (int): Index of the first microphone.

        m2 (int): Index of the second microphone.

    Raises:
        ValueError: Index outside the array.

    Returns:
        MicPair: Pair with distance and axis azimuth filled in.
    """
    for m in (m1, m2):
        if not 0 <= m < geometry.num_mics:
            raise ValueError(
                f"Microphone index {m} outside array of {geometry.num_mics} mics"
            )
    axis = geometry.positions[m1] - geometry.positions[m2]
    return MicPair(
        int(m1),
        int(m2),
        float(np.linalg.norm(axis)),
        wrap_azimuth(np.rad2deg(np.arctan2(axis[1], axis[0]))),
    )


def mic_pairs(
    geometry: ArrayGeometry, index_pairs: Sequence[Tuple[int, int]] = DEFAULT_PAIRS
) -> Tuple[MicPair, ...]:
    """Build the pair list from microphone index pairs.

    Args:
        geometry (ArrayGeometry): Array geometry.

        index_pairs (Sequence[Tuple[int, int]], optional): Index pairs. Defaults to the
            six pairs of the 6-element circular array.

    Raises:
        ValueError: Empty pair list.

    Returns:
        Tuple[MicPair, ...]: Microphone pairs.
    """
    if len(index_pairs) == 0:
        raise ValueError("At least one microphone pair is required")
    return tuple(mic_pair(geometry, m1, m2) for m1, m2 in index_pairs)


def circular_angle_distance(a, b):
    r"""Distance on the circle between azimuths in degrees,
    :math:`\min(|a - b| \bmod 360, 360 - |a - b| \bmod 360) \in [0, 180]`.

    Args:
        a (float or np.ndarray): Azimuth(s) in degrees.

        b (float or np.ndarray): Azimuth(s) in degrees (broadcast against ``a``).

    Returns:
        float or np.ndarray: Angular distance in degrees.
    """
    d = np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))
    d = np.mod(d, 360.0)
    return np.minimum(d, 360.0 - d)


def azimuth_deg(vector) -> float:
    """Azimuth in degrees in [0, 360) of a horizontal vector."""
    return wrap_azimuth(np.rad2deg(np.arctan2(vector[1], vector[0])))


def wrap_azimuth(deg) -> float:
    """Wrap an azimuth in degrees into [0, 360).

    Tiny negative angles, e.g. ``-1e-15`` from a rounded ``arctan2``, would otherwise
    wrap to exactly 360.0 in floating point.
    """
    wrapped = float(deg) % 360.0
    return 0.0 if wrapped >= 360.0 - 1e-9 else wrapped
