from dataclasses import dataclass
from typing import Optional, Sequence, Tuple
from warnings import warn

import numpy as np

import mlkws.logs as lg
from mlkws.sampling.stft_samples import SAMPLE_RATE
from mlkws.spatial.geometry import ArrayGeometry, wrap_azimuth

FRACTIONAL_DELAY_TAPS = 81
IMAGE_FLOOR_DB = -60.0
CALIBRATION_STEPS = 8
CALIBRATION_TOLERANCE = 0.02
_CHUNK = 4096


@dataclass(frozen=True)
class RoomSpec:
    r"""Shoebox room holding the microphone array.

    Args:
        dimensions (Tuple[float, float, float]): Length, width and height in metres.

        t60 (float): Reverberation time in seconds; 0 is anechoic.

        array_center (Tuple[float, float, float]): Array centre in room coordinates.

        array_rotation (float, optional): Rotation of the array frame in degrees.
            Defaults to 0.

    Raises:
        ValueError: Non-positive dimensions, negative T60 or array outside the room.
    """

    dimensions: Tuple[float, float, float]
    t60: float
    array_center: Tuple[float, float, float]
    array_rotation: float = 0.0

    def __post_init__(self):
        dims = np.asarray(self.dimensions, dtype=np.float64)
        if dims.shape != (3,) or np.any(dims <= 0):
            raise ValueError(
                f"Room dimensions {self.dimensions} must be 3 positive values"
            )
        if self.t60 < 0:
            raise ValueError(f"T60={self.t60} must be non-negative")
        if not _inside(np.asarray(self.array_center, dtype=np.float64), dims):
            raise ValueError(f"Array centre {self.array_center} outside the room")


def mic_positions(room: RoomSpec, geometry: ArrayGeometry) -> np.ndarray:
    """Microphone positions in room coordinates, shape [C, 3].

    Args:
        room (RoomSpec): Room with array placement.

        geometry (ArrayGeometry): Array geometry in the array frame.

    Returns:
        np.ndarray: Room coordinates of every microphone.
    """
    rot = np.deg2rad(room.array_rotation)
    R = np.array([[np.cos(rot), -np.sin(rot)], [np.sin(rot), np.cos(rot)]])
    xy = geometry.positions @ R.T + np.asarray(room.array_center[:2])
    z = np.full((geometry.num_mics, 1), room.array_center[2])
    return np.concatenate([xy, z], axis=1)


def source_doa(room: RoomSpec, src: Sequence[float]) -> float:
    r"""Azimuth of a source in the array frame, in degrees in :math:`[0, 360)`.

    A source due "east" (+x) of an unrotated array has azimuth 0.
    """
    d = np.asarray(src[:2], dtype=np.float64) - np.asarray(room.array_center[:2])
    return wrap_azimuth(np.rad2deg(np.arctan2(d[1], d[0])) - room.array_rotation)


def wall_absorption(
    dimensions: Sequence[float],
    t60: float,
    sound_speed: float = 343.0,
    formula: str = "sabine",
) -> float:
    r"""Uniform wall energy absorption that yields a given reverberation time.

    Inverts Eyring's formula, :math:`\alpha = 1 - \exp(-24 \ln(10) V / (c S T_{60}))`,
    or Sabine's, :math:`\alpha = 24 \ln(10) V / (c S T_{60})`. The two agree for small
    absorption. Either is only a starting point for :func:`simulate_rir`, which
    calibrates the absorption against the decay of the rendered image sources.

    Args:
        dimensions (Sequence[float]): Room dimensions in metres.

        t60 (float): Reverberation time in seconds.

        sound_speed (float, optional): Speed of sound in m/s. Defaults to 343.

        formula (str, optional): Either "eyring" or "sabine". Defaults to "sabine".

    Raises:
        ValueError: Formula not recognised.

    Returns:
        float: Absorption in :math:`[0, 1]`; 1 for an anechoic room.
    """
    if formula not in ("eyring", "sabine"):
        raise ValueError(
            f"Absorption formula {formula} not recognised. "
            + "Should be either eyring or sabine."
        )
    if t60 <= 0:
        return 1.0
    L, W, H = dimensions
    volume = L * W * H
    surface = 2 * (L * W + L * H + W * H)
    rate = 24 * np.log(10) * volume / (sound_speed * surface * t60)
    if formula == "eyring":
        return float(-np.expm1(-rate))
    if rate > 1:
        warn(
            f"T60={t60} s too short for a {L}x{W}x{H} m room under Sabine's formula. "
            + "Clipping absorption to 1."
        )
        return 1.0
    return float(rate)


def direct_path_delay(
    room: RoomSpec,
    src: Sequence[float],
    geometry: ArrayGeometry,
    sample_rate: int = SAMPLE_RATE,
) -> np.ndarray:
    """Direct-path delay in samples from the source to every microphone.

    Args:
        room (RoomSpec): Room with array placement.

        src (Sequence[float]): Source position in metres.

        geometry (ArrayGeometry): Array geometry.

        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

    Returns:
        np.ndarray: Fractional delays of shape [C].
    """
    d = np.linalg.norm(mic_positions(room, geometry) - np.asarray(src), axis=-1)
    return d / geometry.sound_speed * sample_rate


def simulate_rir(
    room: RoomSpec,
    src: Sequence[float],
    geometry: ArrayGeometry,
    max_order: Optional[int] = None,
    sample_rate: int = SAMPLE_RATE,
    length: Optional[int] = None,
    formula: str = "sabine",
    calibrate: bool = True,
) -> np.ndarray:
    r"""Simulate room impulse responses with the image-source method.

    Every image source contributes :math:`\beta^{o} / (4\pi d)` at delay :math:`d/c`,
    where :math:`o` is its reflection order and :math:`\beta = \sqrt{1 - \alpha}` the
    wall reflection coefficient. Delays are rendered as 81-tap Hann-windowed sinc
    fractional delays so that inter-microphone phases stay accurate for closely spaced
    microphones. Reflection orders whose attenuation :math:`\beta^o` falls below
    -60 dB are not generated.

    The absorption :math:`\alpha` starts from :func:`wall_absorption`. With
    ``calibrate`` it is then rescaled until the Schroeder T60 of the energy envelope
    of the same image set at the first microphone is within 2% of ``room.t60``.

    Args:
        room (RoomSpec): Room with array placement.

        src (Sequence[float]): Source position in metres.

        geometry (ArrayGeometry): Array geometry.

        max_order (int, optional): Maximum reflection order. Defaults to the order at
            which :math:`\beta^o` falls below -60 dB.

        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

        length (int, optional): RIR length in samples. Defaults to the direct path plus
            T60 plus the interpolation filter length.

        formula (str, optional): Absorption formula passed to
            :func:`wall_absorption`. Defaults to "sabine".

        calibrate (bool, optional): Match the decay to ``room.t60``. Defaults to True.

    Raises:
        ValueError: Source or microphones outside the room, or source on a microphone.

    Returns:
        np.ndarray: Impulse responses of shape [C, length].
    """
    dims = np.asarray(room.dimensions, dtype=np.float64)
    src = np.asarray(src, dtype=np.float64)
    mics = mic_positions(room, geometry)
    if src.shape != (3,) or not _inside(src, dims):
        raise ValueError(f"Source position {tuple(src)} outside the room")
    for m in mics:
        if not _inside(m, dims):
            raise ValueError(f"Microphone position {tuple(m)} outside the room")
    direct = np.linalg.norm(mics - src, axis=-1)
    if np.any(direct < 1e-3):
        raise ValueError("Source coincides with a microphone")

    c = geometry.sound_speed
    if length is None:
        length = int(
            np.ceil(sample_rate * (direct.max() / c + room.t60)) + FRACTIONAL_DELAY_TAPS
        )
    max_dist = length / sample_rate * c + dims.max()
    alpha = wall_absorption(dims, room.t60, c, formula)
    if calibrate and alpha < 1.0:
        alpha = _calibrated_absorption(
            alpha,
            room.t60,
            src,
            mics[0],
            dims,
            max_order,
            max_dist,
            c,
            sample_rate,
            length,
        )
    beta = np.sqrt(1.0 - alpha)
    if max_order is None:
        max_order = _order_cap(beta)

    images, orders = _image_sources(src, dims, max_order, max_dist)
    gains = beta ** orders.astype(np.float64) if max_order > 0 else np.ones(len(orders))

    h = np.zeros((len(mics), length))
    half = FRACTIONAL_DELAY_TAPS // 2
    taps = np.arange(-half, half + 1)
    for c_idx, mic in enumerate(mics):
        d = np.linalg.norm(images - mic, axis=-1)
        keep = d / c * sample_rate < length
        d = d[keep]
        amp = gains[keep] / (4 * np.pi * d)
        for start in range(0, len(d), _CHUNK):
            tau = d[start : start + _CHUNK] / c * sample_rate
            k = np.floor(tau)[:, None].astype(np.int64) + taps[None, :]
            t = k - tau[:, None]
            w = 0.5 * (1 + np.cos(2 * np.pi * t / FRACTIONAL_DELAY_TAPS)) * np.sinc(t)
            w *= amp[start : start + _CHUNK, None]
            valid = (k >= 0) & (k < length)
            h[c_idx] += np.bincount(k[valid], weights=w[valid], minlength=length)
    return h


def schroeder_t60(
    h: np.ndarray,
    sample_rate: int = SAMPLE_RATE,
    fit_range_db: Tuple[float, float] = (-5.0, -25.0),
) -> float:
    r"""Estimate T60 by Schroeder backward integration.

    A line is fitted to the energy decay curve between the two levels of
    ``fit_range_db`` and extrapolated to -60 dB.

    Args:
        h (np.ndarray): Single-channel impulse response.

        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

        fit_range_db (Tuple[float, float], optional): Fit interval in dB.
            Defaults to (-5, -25).

    Raises:
        ValueError: Impulse response is silent or decays too little.

    Returns:
        float: Estimated reverberation time in seconds.
    """
    h = np.asarray(h, dtype=np.float64)
    edc = np.cumsum(h[::-1] ** 2)[::-1]
    if edc[0] <= 0:
        raise ValueError("Impulse response is silent")
    edc_db = 10 * np.log10(np.maximum(edc / edc[0], 1e-300))
    hi, lo = fit_range_db
    idx = np.nonzero((edc_db <= hi) & (edc_db >= lo))[0]
    if len(idx) < 2:
        raise ValueError(f"Energy decay does not span {fit_range_db} dB")
    slope, _ = np.polyfit(idx / sample_rate, edc_db[idx], 1)
    return float(-60.0 / slope)


def _image_sources(
    src: np.ndarray, dims: np.ndarray, max_order: int, max_dist: float
):
    axes = []
    for x, L in zip(src, dims):
        bound = int(min(np.ceil((max_order + 1) / 2), np.ceil(max_dist / (2 * L)) + 1))
        m = np.arange(-bound, bound + 1)
        pos = np.concatenate([x + 2 * m * L, -x + 2 * m * L])
        order = np.concatenate([2 * np.abs(m), np.abs(m - 1) + np.abs(m)])
        axes.append((pos, order))
    (px, ox), (py, oy), (pz, oz) = axes
    orders = ox[:, None, None] + oy[None, :, None] + oz[None, None, :]
    keep = orders <= max_order
    X, Y, Z = np.meshgrid(px, py, pz, indexing="ij")
    images = np.stack([X[keep], Y[keep], Z[keep]], axis=-1)
    return images, orders[keep]


def _inside(p: np.ndarray, dims: np.ndarray) -> bool:
    return bool(np.all(p > 0) and np.all(p < dims))


def _order_cap(beta: float) -> int:
    if beta == 0:
        return 0
    floor = 10 ** (IMAGE_FLOOR_DB / 20)
    return int(np.ceil(np.log(floor) / np.log(beta)))


def _calibrated_absorption(
    alpha: float,
    t60: float,
    src: np.ndarray,
    mic: np.ndarray,
    dims: np.ndarray,
    max_order: Optional[int],
    max_dist: float,
    c: float,
    sample_rate: int,
    length: int,
) -> float:
    # T60 scales roughly as 1 / alpha.
    for _ in range(CALIBRATION_STEPS):
        beta = np.sqrt(1.0 - alpha)
        order = _order_cap(beta) if max_order is None else max_order
        images, orders = _image_sources(src, dims, order, max_dist)
        d = np.linalg.norm(images - mic, axis=-1)
        k = np.floor(d / c * sample_rate).astype(np.int64)
        keep = k < length
        energy = (beta ** orders[keep].astype(np.float64) / (4 * np.pi * d[keep])) ** 2
        envelope = np.bincount(k[keep], weights=energy, minlength=length)
        try:
            ratio = schroeder_t60(np.sqrt(envelope), sample_rate) / t60
        except ValueError:
            break
        if abs(ratio - 1.0) < CALIBRATION_TOLERANCE:
            break
        alpha = float(np.clip(alpha * ratio, 1e-6, 1.0))
        lg.debug_log(f"T60 calibration: estimate off by {ratio:.3f}, alpha {alpha:.4f}")
    return alpha
