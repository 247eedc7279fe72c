from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import signal as sps

from mlkws.sampling.stft_samples import SAMPLE_RATE
from mlkws.simulation.rir import RoomSpec, simulate_rir, source_doa
from mlkws.spatial.geometry import ArrayGeometry

ROLES = ("target", "interferer", "noise")
LABELS = ("positive", "negative")


@dataclass(frozen=True, eq=False)
class SourcePlacement:
    r"""Dry signal played back at a point in the room.

    Args:
        position (Tuple[float, float, float]): Position in metres.

        role (str): One of "target", "interferer", "noise".

        dry_signal (np.ndarray): Mono source waveform.

        offset (int, optional): Start sample of the dry signal within the utterance.
            Defaults to 0.

    Raises:
        ValueError: Unknown role, negative offset or non-finite signal.
    """

    position: Tuple[float, float, float]
    role: str
    dry_signal: np.ndarray
    offset: int = 0

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(
                f"Source role {self.role} not recognised, should be in {ROLES}"
            )
        if self.offset < 0:
            raise ValueError(f"Source offset {self.offset} must be non-negative")
        sig = np.asarray(self.dry_signal)
        if sig.ndim != 1 or not np.all(np.isfinite(sig)):
            raise ValueError("Dry signal must be a finite mono waveform")


@dataclass(eq=False)
class MixtureRecord:
    r"""Simulated utterance with its ground truth.

    Args:
        id (str): Utterance identifier.

        mixture (np.ndarray): Microphone signals of shape [C, L].

        references (np.ndarray): Reverberant, scaled source images at the reference
            microphone, shape [N, L]; source 0 is the target.

        doas_deg (Tuple[float, ...]): Azimuth of every speech source in the array frame.

        sirs_db (Tuple[float, ...]): Target-to-interferer ratio of every interferer.

        snr_db (float, optional): Target-to-noise ratio, None without noise.

        label (str): "positive" when the target carries the keyword.

        t60_s (float): Reverberation time of the room.

        room_dims_m (Tuple[float, float, float]): Room dimensions.

        sample_rate (int): Sample rate in Hz.
    """

    id: str
    mixture: np.ndarray
    references: np.ndarray
    doas_deg: Tuple[float, ...]
    sirs_db: Tuple[float, ...]
    snr_db: Optional[float]
    label: str
    t60_s: float
    room_dims_m: Tuple[float, float, float]
    sample_rate: int = SAMPLE_RATE
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.label not in LABELS:
            raise ValueError(
                f"Label {self.label} not recognised, should be in {LABELS}"
            )
        if not 1 <= len(self.doas_deg) <= 3:
            raise ValueError(f"{len(self.doas_deg)} sources not supported, need 1 to 3")
        if self.references.shape != (len(self.doas_deg), self.mixture.shape[-1]):
            raise ValueError(
                f"References of shape {self.references.shape} do not match "
                f"{len(self.doas_deg)} sources of length {self.mixture.shape[-1]}"
            )

    @property
    def num_sources(self) -> int:
        return len(self.doas_deg)

    @property
    def min_sir_db(self) -> Optional[float]:
        """Smallest SIR over interferers, None for a single source."""
        return min(self.sirs_db) if self.sirs_db else None


def render_source(
    room: RoomSpec,
    geometry: ArrayGeometry,
    placement: SourcePlacement,
    length: int,
    sample_rate: int = SAMPLE_RATE,
    max_order: Optional[int] = None,
) -> np.ndarray:
    """Convolve a placed dry signal with its room impulse responses.

    Args:
        room (RoomSpec): Room with array placement.

        geometry (ArrayGeometry): Array geometry.

        placement (SourcePlacement): Source.

        length (int): Utterance length in samples.

        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

        max_order (int, optional): Maximum image order, see :func:`simulate_rir`.

    Returns:
        np.ndarray: Rendered microphone signals of shape [C, length].
    """
    dry = _placed(placement, length)
    rir = simulate_rir(room, placement.position, geometry, max_order, sample_rate)
    return sps.fftconvolve(dry[None, :], rir, axes=-1)[:, :length]


def render_and_mix(
    room: RoomSpec,
    geometry: ArrayGeometry,
    placements: Sequence[SourcePlacement],
    sir_range: Tuple[float, float],
    snr_range: Optional[Tuple[float, float]],
    seed: Union[int, np.random.Generator],
    length: int,
    label: str = "positive",
    utterance_id: str = "utt",
    sample_rate: int = SAMPLE_RATE,
    reference_mic: int = 0,
    sensor_noise_snr_db: Optional[float] = None,
    max_order: Optional[int] = None,
) -> MixtureRecord:
    r"""Render placed sources in a room and mix them at random SIR and SNR.

    The target is left at its rendered level. Every interferer is scaled so that the
    target-to-interferer energy ratio at the reference microphone, measured over the
    samples where both dry signals are active, equals an SIR drawn uniformly from
    ``sir_range`` (the whole utterance is used when they do not overlap). Point noise
    sources are scaled to an SNR drawn from ``snr_range`` against the full-length target
    render; optional uncorrelated sensor noise is added at ``sensor_noise_snr_db``.

    Args:
        room (RoomSpec): Room with array placement.

        geometry (ArrayGeometry): Array geometry.

        placements (Sequence[SourcePlacement]): Exactly one target, up to two
            interferers and any number of noise sources.

        sir_range (Tuple[float, float]): SIR interval in dB.

        snr_range (Tuple[float, float], optional): SNR interval in dB; required when
            noise sources are present.

        seed (int or Generator): Seed or generator for the level draws.

        length (int): Utterance length in samples.

        label (str, optional): "positive" or "negative". Defaults to "positive".

        utterance_id (str, optional): Identifier stored in the record.

        sample_rate (int, optional): Sample rate in Hz. Defaults to 16000.

        reference_mic (int, optional): Reference microphone index. Defaults to 0.

        sensor_noise_snr_db (float, optional): Sensor noise level, None for none.

        max_order (int, optional): Maximum image order, see :func:`simulate_rir`.

    Raises:
        ValueError: Not exactly one target, too many interferers, missing SNR range or
            a source rendering to zero energy.

    Returns:
        MixtureRecord: Mixture, references and metadata.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    targets = [p for p in placements if p.role == "target"]
    interferers = [p for p in placements if p.role == "interferer"]
    noises = [p for p in placements if p.role == "noise"]
    if len(targets) != 1:
        raise ValueError(f"Mixtures need exactly one target source, got {len(targets)}")
    if len(interferers) > 2:
        raise ValueError(f"At most 2 interferers supported, got {len(interferers)}")
    if noises and snr_range is None:
        raise ValueError("Noise sources require an SNR range")
    _check_range(sir_range, "SIR")

    speech = targets + interferers
    renders = []
    for p in speech + noises:
        r = render_source(room, geometry, p, length, sample_rate, max_order)
        if not np.any(r[reference_mic]):
            raise ValueError(f"Degenerate zero-energy {p.role} source at {p.position}")
        renders.append(r)

    target = renders[0]
    active_t = _active_span(targets[0], length)
    sirs, scaled = [], [target]
    for p, r in zip(interferers, renders[1 : len(speech)]):
        sir = float(rng.uniform(*sir_range))
        span = _overlap(active_t, _active_span(p, length))
        e_t = np.sum(target[reference_mic, span] ** 2)
        e_i = np.sum(r[reference_mic, span] ** 2)
        if e_t == 0 or e_i == 0:
            e_t = np.sum(target[reference_mic] ** 2)
            e_i = np.sum(r[reference_mic] ** 2)
        scaled.append(r * np.sqrt(e_t / (e_i * 10 ** (sir / 10))))
        sirs.append(sir)

    e_target = np.sum(target[reference_mic] ** 2)
    mixture = np.sum(scaled, axis=0)
    snr = None
    if noises:
        _check_range(snr_range, "SNR")
        snr = float(rng.uniform(*snr_range))
        noise = np.sum(renders[len(speech) :], axis=0)
        e_n = np.sum(noise[reference_mic] ** 2)
        mixture = mixture + noise * np.sqrt(e_target / (e_n * 10 ** (snr / 10)))
    if sensor_noise_snr_db is not None:
        sensor = rng.standard_normal(mixture.shape)
        e_s = np.sum(sensor**2) / mixture.shape[0]
        mixture = mixture + sensor * np.sqrt(
            e_target / (e_s * 10 ** (sensor_noise_snr_db / 10))
        )

    return MixtureRecord(
        id=utterance_id,
        mixture=mixture,
        references=np.stack([s[reference_mic] for s in scaled]),
        doas_deg=tuple(source_doa(room, p.position) for p in speech),
        sirs_db=tuple(sirs),
        snr_db=snr,
        label=label,
        t60_s=float(room.t60),
        room_dims_m=tuple(float(d) for d in room.dimensions),
        sample_rate=sample_rate,
    )


def _placed(placement: SourcePlacement, length: int) -> np.ndarray:
    out = np.zeros(length)
    sig = np.asarray(placement.dry_signal, dtype=np.float64)
    n = max(0, min(len(sig), length - placement.offset))
    out[placement.offset : placement.offset + n] = sig[:n]
    return out


def _active_span(placement: SourcePlacement, length: int) -> slice:
    nz = np.nonzero(_placed(placement, length))[0]
    if len(nz) == 0:
        return slice(0, 0)
    return slice(int(nz[0]), int(nz[-1]) + 1)


def _overlap(a: slice, b: slice) -> slice:
    start, stop = max(a.start, b.start), min(a.stop, b.stop)
    return slice(start, max(start, stop))


def _check_range(r, name: str):
    if len(r) != 2 or r[0] > r[1]:
        raise ValueError(f"{name} range {r} must be an ordered (low, high) pair")
