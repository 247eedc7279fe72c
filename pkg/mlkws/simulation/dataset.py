from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np

import mlkws.logs as lg
from mlkws.io.config import RunConfig, config_hash
from mlkws.io.manifest import MANIFEST_NAME, record_to_row, write_manifest
from mlkws.io.wav import MultiChannelWaveform, read_wav, write_wav
from mlkws.sampling.stft_samples import SAMPLE_RATE
from mlkws.simulation.mixing import MixtureRecord, SourcePlacement, render_and_mix
from mlkws.simulation.rir import RoomSpec
from mlkws.spatial.geometry import wrap_azimuth
from mlkws.utils import signal_generator

WALL_MARGIN_M = 0.3
AUDIO_DIR = "audio"


class SpeechPool(NamedTuple):
    """Dry speech used as sources. ``None`` selects the synthetic generator.

    Attributes:
        keywords (Tuple[np.ndarray, ...], optional): Keyword recordings.

        backgrounds (Tuple[np.ndarray, ...], optional): Non-keyword speech.
    """

    keywords: Optional[Tuple[np.ndarray, ...]] = None
    backgrounds: Optional[Tuple[np.ndarray, ...]] = None


def load_speech_pool(
    speech_dir: Optional[str] = None, keyword_dir: Optional[str] = None
) -> SpeechPool:
    """Load mono 16 kHz WAV pools from directories.

    Args:
        speech_dir (str, optional): Background speech directory.

        keyword_dir (str, optional): Keyword directory.

    Raises:
        ValueError: A directory holds no WAV files, or a file is not mono.

    Returns:
        SpeechPool: Loaded pool; unspecified entries stay synthetic.
    """
    return SpeechPool(
        keywords=None if keyword_dir is None else _load_dir(keyword_dir),
        backgrounds=None if speech_dir is None else _load_dir(speech_dir),
    )


def draw_keyword(pool: SpeechPool, rng: np.random.Generator) -> np.ndarray:
    """A keyword utterance from the pool or the synthetic keyword generator."""
    if pool.keywords is None:
        return signal_generator.vary_keyword(rng, signal_generator.generate_keyword())
    return pool.keywords[int(rng.integers(len(pool.keywords)))]


def draw_background(pool: SpeechPool, rng: np.random.Generator) -> np.ndarray:
    """A non-keyword utterance from the pool or the synthetic syllable generator."""
    if pool.backgrounds is None:
        return signal_generator.generate_utterance(rng) * rng.uniform(0.5, 1.0)
    return pool.backgrounds[int(rng.integers(len(pool.backgrounds)))]


def utterance_rng(seed: int, index: int) -> np.random.Generator:
    """Generator of utterance ``index``, independent of generation order."""
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def simulate_utterance(
    cfg: RunConfig, seed: int, index: int, pool: SpeechPool = SpeechPool()
) -> MixtureRecord:
    r"""Simulate one utterance of the dataset recipe.

    Room size, T60, array placement and rotation, source count, azimuths, distances and
    levels are drawn from the generator of ``(seed, index)``. Sources sit at array
    height. Positives carry a keyword as target, negatives a background utterance.

    Args:
        cfg (RunConfig): Run configuration.

        seed (int): Master seed.

        index (int): Utterance index.

        pool (SpeechPool, optional): Dry speech. Defaults to synthetic.

    Returns:
        MixtureRecord: Simulated utterance.
    """
    sim = cfg.simulation
    rng = utterance_rng(seed, index)
    geometry = cfg.geometry
    length = int(round(sim.duration_s * SAMPLE_RATE))

    bounds = zip(sim.room_min, sim.room_max)
    dims = tuple(float(rng.uniform(lo, hi)) for lo, hi in bounds)
    t60 = 0.0 if sim.anechoic else float(rng.uniform(*sim.t60_range))
    margin = WALL_MARGIN_M + sim.min_source_distance_m
    center = (
        _centred(rng, dims[0], margin),
        _centred(rng, dims[1], margin),
        float(rng.uniform(1.0, min(1.6, dims[2] - WALL_MARGIN_M))),
    )
    room = RoomSpec(dims, t60, center, float(rng.uniform(0, 360)))

    label = "positive" if rng.random() < sim.positive_fraction else "negative"
    n_interf = int(rng.integers(0, sim.max_interferers + 1))
    if label == "positive":
        target = draw_keyword(pool, rng)
    else:
        target = draw_background(pool, rng)
    dry = [target] + [draw_background(pool, rng) for _ in range(n_interf)]

    placements = []
    for j, sig in enumerate(dry):
        sig = np.asarray(sig)[:length]
        doa = _draw_doa(sim, rng, j)
        pos = _position(room, doa, sim, rng)
        offset = int(rng.integers(0, length - len(sig) + 1))
        placements.append(
            SourcePlacement(pos, "target" if j == 0 else "interferer", sig, offset)
        )
    if sim.snr_range is not None:
        doa = float(rng.uniform(0, 360))
        noise = signal_generator.generate_noise(rng, length, rng.uniform(0.0, 2.0))
        position = _position(room, doa, sim, rng)
        placements.append(SourcePlacement(position, "noise", noise))

    return render_and_mix(
        room,
        geometry,
        placements,
        sim.sir_range,
        sim.snr_range,
        rng,
        length,
        label=label,
        utterance_id=f"utt{index:06d}",
        reference_mic=cfg.spatial.reference_mic,
        sensor_noise_snr_db=sim.sensor_noise_snr_db,
        max_order=sim.max_order,
    )


def generate_dataset(
    cfg: RunConfig, seed: int, out_dir: Union[str, Path], jobs: int = 1
) -> List[dict]:
    r"""Simulate the dataset recipe and write audio plus manifest.

    Every utterance writes ``audio/<id>_mix.wav`` (C channels) and
    ``audio/<id>_ref.wav`` (one reference channel per speech source, target first),
    float32 at 16 kHz. Rows of ``manifest.jsonl`` follow utterance order regardless of
    ``jobs``, so serial and parallel runs produce identical files.

    Args:
        cfg (RunConfig): Run configuration.

        seed (int): Master seed.

        out_dir (str): Output directory.

        jobs (int, optional): Worker threads. Defaults to 1.

    Raises:
        ValueError: Non-positive ``jobs`` or an empty speech pool.

    Returns:
        List[dict]: Manifest rows.
    """
    if jobs < 1:
        raise ValueError(f"jobs={jobs} must be positive")
    out_dir = Path(out_dir)
    (out_dir / AUDIO_DIR).mkdir(parents=True, exist_ok=True)
    pool = load_speech_pool(cfg.simulation.speech_dir, cfg.simulation.keyword_dir)
    cfg_hash = config_hash(cfg, "manifest")

    def work(index: int) -> dict:
        record = simulate_utterance(cfg, seed, index, pool)
        mix = f"{AUDIO_DIR}/{record.id}_mix.wav"
        ref = f"{AUDIO_DIR}/{record.id}_ref.wav"
        write_wav(out_dir / mix, MultiChannelWaveform(record.mixture, SAMPLE_RATE))
        write_wav(out_dir / ref, MultiChannelWaveform(record.references, SAMPLE_RATE))
        lg.debug_log(
            f"{record.id}: {record.label}, {record.num_sources} sources, "
            f"DOAs {np.round(record.doas_deg, 1).tolist()}"
        )
        return record_to_row(record, mix, ref, cfg_hash)

    indices = range(cfg.simulation.num_utterances)
    if jobs == 1:
        rows = [work(i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            rows = list(executor.map(work, indices))
    write_manifest(rows, out_dir / MANIFEST_NAME)
    lg.info_log(f"Simulated {len(rows)} utterances into {out_dir}")
    return rows


def _draw_doa(sim, rng: np.random.Generator, j: int) -> float:
    if sim.doa_centers_deg:
        centre = sim.doa_centers_deg[j % len(sim.doa_centers_deg)]
        spread = rng.uniform(-sim.doa_spread_deg, sim.doa_spread_deg)
        return wrap_azimuth(centre + spread)
    return float(rng.uniform(0, 360))


def _position(room: RoomSpec, doa: float, sim, rng: np.random.Generator):
    # Shrink the distance until the source fits inside the room.
    az = np.deg2rad(doa + room.array_rotation)
    u = np.array([np.cos(az), np.sin(az)])
    c = np.asarray(room.array_center[:2])
    dims = np.asarray(room.dimensions[:2])
    reach = np.inf
    for k in range(2):
        if u[k] > 1e-12:
            reach = min(reach, (dims[k] - WALL_MARGIN_M - c[k]) / u[k])
        elif u[k] < -1e-12:
            reach = min(reach, (WALL_MARGIN_M - c[k]) / u[k])
    hi = min(sim.max_source_distance_m, reach)
    lo = min(sim.min_source_distance_m, hi)
    r = float(rng.uniform(lo, hi))
    xy = c + r * u
    return (float(xy[0]), float(xy[1]), float(room.array_center[2]))


def _load_dir(directory: str) -> Tuple[np.ndarray, ...]:
    paths = sorted(Path(directory).glob("*.wav"))
    if not paths:
        raise ValueError(f"Speech pool {directory} contains no WAV files")
    out = []
    for p in paths:
        wave = read_wav(p)
        if wave.num_channels != 1:
            raise ValueError(f"Speech pool file {p} must be mono")
        out.append(wave.samples[0].astype(np.float64))
    return tuple(out)


def _centred(rng: np.random.Generator, size: float, margin: float) -> float:
    if size > 2 * margin:
        return float(rng.uniform(margin, size - margin))
    return size / 2
