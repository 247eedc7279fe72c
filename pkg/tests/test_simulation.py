import dataclasses

import numpy as np
import pytest

from mlkws.io.manifest import read_manifest
from mlkws.io.wav import MultiChannelWaveform, write_wav
from mlkws.simulation import dataset as ds
from mlkws.simulation import mixing as mx
from mlkws.simulation import rir
from mlkws.spatial.geometry import circular_angle_distance, uniform_circular_array
from mlkws.utils import signal_generator

GEOMETRY = uniform_circular_array(4, 0.05)
ROOM = rir.RoomSpec((5.0, 4.0, 3.0), 0.0, (2.5, 2.0, 1.2))


def test_room_validation():
    with pytest.raises(ValueError):
        rir.RoomSpec((5.0, 4.0, -3.0), 0.0, (2.5, 2.0, 1.2))
    with pytest.raises(ValueError):
        rir.RoomSpec((5.0, 4.0, 3.0), -0.1, (2.5, 2.0, 1.2))
    with pytest.raises(ValueError):
        rir.RoomSpec((5.0, 4.0, 3.0), 0.3, (5.5, 2.0, 1.2))


def test_source_doa_in_array_frame():
    assert rir.source_doa(ROOM, (4.0, 2.0, 1.2)) == pytest.approx(0.0)
    assert rir.source_doa(ROOM, (2.5, 3.0, 1.2)) == pytest.approx(90.0)
    rotated = dataclasses.replace(ROOM, array_rotation=30.0)
    assert rir.source_doa(rotated, (4.0, 2.0, 1.2)) == pytest.approx(330.0)
    mics = rir.mic_positions(rotated, GEOMETRY)
    assert mics.shape == (4, 3)
    np.testing.assert_allclose(np.mean(mics, axis=0), rotated.array_center, atol=1e-12)


def test_wall_absorption():
    dims = (5.0, 4.0, 3.0)
    assert rir.wall_absorption(dims, 0.0) == 1.0
    alpha = rir.wall_absorption(dims, 0.5, formula="sabine")
    assert 0.0 < alpha < 1.0
    assert rir.wall_absorption(dims, 1.0, formula="sabine") == pytest.approx(alpha / 2)
    assert rir.wall_absorption(dims, 0.5) == alpha
    eyring = rir.wall_absorption(dims, 0.5, formula="eyring")
    assert eyring == pytest.approx(-np.expm1(-alpha))
    assert rir.wall_absorption(dims, 0.01, formula="eyring") < 1.0
    with pytest.warns(UserWarning):
        assert rir.wall_absorption(dims, 0.01, formula="sabine") == 1.0
    with pytest.raises(ValueError):
        rir.wall_absorption(dims, 0.5, formula="norris")


def test_anechoic_rir_is_direct_path():
    src = (4.0, 2.6, 1.2)
    h = rir.simulate_rir(ROOM, src, GEOMETRY)
    delays = rir.direct_path_delay(ROOM, src, GEOMETRY)
    dist = delays / 16000 * GEOMETRY.sound_speed
    assert h.shape[0] == 4
    for c in range(4):
        assert abs(int(np.argmax(np.abs(h[c]))) - delays[c]) <= 1.0
        np.testing.assert_allclose(np.sum(h[c]), 1 / (4 * np.pi * dist[c]), rtol=1e-2)


def test_anechoic_peak_follows_distance(rng: np.random.Generator):
    geometry = uniform_circular_array(1, 0.0)
    delay = rir.direct_path_delay(ROOM, (3.5, 2.0, 1.2), geometry)[0]
    assert delay == pytest.approx(46.65, abs=0.01)
    dims = np.asarray(ROOM.dimensions)
    placed = 0
    while placed < 100:
        centre, src = rng.uniform(0.1, dims - 0.1, size=(2, 3))
        distance = np.linalg.norm(src - centre)
        if distance < 0.1:
            continue
        room = rir.RoomSpec(ROOM.dimensions, 0.0, tuple(centre))
        h = rir.simulate_rir(room, tuple(src), geometry)[0]
        expected = distance * 16000 / geometry.sound_speed
        assert abs(int(np.argmax(np.abs(h))) - expected) <= 1.0
        placed += 1


def test_anechoic_amplitude_follows_distance():
    geometry = uniform_circular_array(1, 0.0)
    # Distances on whole-sample delays keep the sampled peaks comparable.
    step = 343.0 * 43 / 16000
    near = rir.simulate_rir(ROOM, (2.5 + step, 2.0, 1.2), geometry)[0]
    far = rir.simulate_rir(ROOM, (2.5 + 2 * step, 2.0, 1.2), geometry)[0]
    assert int(np.argmax(near)) == 43 and int(np.argmax(far)) == 86
    assert np.max(far) / np.max(near) == pytest.approx(0.5, rel=0.05)


def test_rir_errors():
    with pytest.raises(ValueError):
        rir.simulate_rir(ROOM, (6.0, 2.0, 1.2), GEOMETRY)
    with pytest.raises(ValueError):
        rir.simulate_rir(ROOM, tuple(rir.mic_positions(ROOM, GEOMETRY)[0]), GEOMETRY)
    with pytest.raises(ValueError):
        rir.schroeder_t60(np.zeros(100))


@pytest.mark.parametrize("t60", [0.2, 0.3, 0.5])
def test_reverberant_rir_decay(t60: float):
    room = rir.RoomSpec((5.0, 4.0, 3.0), t60, (2.5, 2.0, 1.2))
    h = rir.simulate_rir(room, (3.5, 2.5, 1.4), GEOMETRY)
    assert h.shape[0] == 4
    assert np.all(np.isfinite(h))
    for channel in h:
        estimate = rir.schroeder_t60(channel)
        assert abs(estimate - t60) <= 0.2 * t60


def _placement(rng, doa, role, length=4000, offset=0, distance=1.5):
    az = np.deg2rad(doa)
    pos = (2.5 + distance * np.cos(az), 2.0 + distance * np.sin(az), 1.2)
    return mx.SourcePlacement(pos, role, rng.standard_normal(length), offset)


def test_mix_sir_over_overlap(rng: np.random.Generator):
    target = _placement(rng, 30.0, "target", 4000, 0)
    interferer = _placement(rng, 200.0, "interferer", 4000, 2000)
    record = mx.render_and_mix(
        ROOM, GEOMETRY, [target, interferer], (3.0, 3.0), None, rng, 8000
    )
    assert record.mixture.shape == (4, 8000)
    assert record.references.shape == (2, 8000)
    assert record.sirs_db == (3.0,)
    assert record.snr_db is None
    assert record.min_sir_db == 3.0
    np.testing.assert_allclose(record.mixture[0], record.references.sum(axis=0))
    span = slice(2000, 4000)
    e_t = np.sum(record.references[0, span] ** 2)
    e_i = np.sum(record.references[1, span] ** 2)
    assert 10 * np.log10(e_t / e_i) == pytest.approx(3.0, abs=1e-9)
    assert circular_angle_distance(record.doas_deg[0], 30.0) < 1e-6
    assert circular_angle_distance(record.doas_deg[1], 200.0) < 1e-6


def test_mix_snr(rng: np.random.Generator):
    target = _placement(rng, 90.0, "target")
    noise = _placement(rng, 270.0, "noise", distance=1.0)
    record = mx.render_and_mix(
        ROOM, GEOMETRY, [target, noise], (0.0, 0.0), (10.0, 10.0), rng, 4000
    )
    assert record.snr_db == 10.0
    assert record.num_sources == 1
    residual = record.mixture[0] - record.references[0]
    ratio = np.sum(record.references[0] ** 2) / np.sum(residual**2)
    assert 10 * np.log10(ratio) == pytest.approx(10.0, abs=1e-9)


def test_mix_errors(rng: np.random.Generator):
    a = _placement(rng, 0.0, "target")
    b = _placement(rng, 90.0, "target")
    n = _placement(rng, 180.0, "noise")
    with pytest.raises(ValueError):
        mx.render_and_mix(ROOM, GEOMETRY, [a, b], (0.0, 0.0), None, rng, 4000)
    with pytest.raises(ValueError):
        mx.render_and_mix(ROOM, GEOMETRY, [a, n], (0.0, 0.0), None, rng, 4000)
    with pytest.raises(ValueError):
        mx.render_and_mix(ROOM, GEOMETRY, [a], (5.0, 0.0), None, rng, 4000)
    with pytest.raises(ValueError):
        mx.SourcePlacement((1.0, 1.0, 1.0), "music", np.zeros(10))
    with pytest.raises(ValueError):
        mx.SourcePlacement((1.0, 1.0, 1.0), "target", np.zeros(10), offset=-1)


def test_synthetic_speech(rng: np.random.Generator):
    keyword = signal_generator.generate_keyword()
    np.testing.assert_array_equal(keyword, signal_generator.generate_keyword())
    varied = signal_generator.vary_keyword(rng, keyword)
    assert np.all(np.isfinite(varied)) and np.max(np.abs(varied)) > 0
    noise = signal_generator.generate_noise(rng, 1000)
    assert noise.shape == (1000,)
    assert np.std(noise) == pytest.approx(1.0)


def test_simulate_utterance_reproducible(tiny_run):
    a = ds.simulate_utterance(tiny_run, 11, 3)
    b = ds.simulate_utterance(tiny_run, 11, 3)
    np.testing.assert_array_equal(a.mixture, b.mixture)
    assert a.doas_deg == b.doas_deg
    assert a.id == "utt000003"
    assert a.mixture.shape == (4, 8000)
    assert a.t60_s == 0.0
    c = ds.simulate_utterance(tiny_run, 12, 3)
    assert not np.array_equal(a.mixture, c.mixture)


def test_simulate_utterance_doa_centres(tiny_run):
    sim = dataclasses.replace(
        tiny_run.simulation, doa_centers_deg=(45.0, 225.0), doa_spread_deg=5.0
    )
    run = dataclasses.replace(tiny_run, simulation=sim)
    for index in range(3):
        record = ds.simulate_utterance(run, 0, index)
        assert circular_angle_distance(record.doas_deg[0], 45.0) <= 5.0 + 1e-6
        if record.num_sources > 1:
            assert circular_angle_distance(record.doas_deg[1], 225.0) <= 5.0 + 1e-6


def test_generate_dataset_serial_matches_parallel(tmp_path, tiny_run):
    sim = dataclasses.replace(tiny_run.simulation, num_utterances=3)
    run = dataclasses.replace(tiny_run, simulation=sim)
    serial = ds.generate_dataset(run, 5, tmp_path / "serial")
    parallel = ds.generate_dataset(run, 5, tmp_path / "parallel", jobs=2)
    assert serial == parallel
    assert len(read_manifest(tmp_path / "serial")) == 3
    names = ("manifest.jsonl", "audio/utt000002_mix.wav", "audio/utt000002_ref.wav")
    for name in names:
        a = (tmp_path / "serial" / name).read_bytes()
        assert a == (tmp_path / "parallel" / name).read_bytes()
    with pytest.raises(ValueError):
        ds.generate_dataset(run, 5, tmp_path / "bad", jobs=0)


def test_speech_pool_directory(tmp_path, rng: np.random.Generator):
    write_wav(tmp_path / "a.wav", MultiChannelWaveform(rng.standard_normal(800) * 0.1))
    pool = ds.load_speech_pool(speech_dir=str(tmp_path))
    assert pool.keywords is None
    assert len(pool.backgrounds) == 1
    write_wav(tmp_path / "b.wav", MultiChannelWaveform(np.zeros((2, 800))))
    with pytest.raises(ValueError):
        ds.load_speech_pool(speech_dir=str(tmp_path))
    with pytest.raises(ValueError):
        ds.load_speech_pool(keyword_dir=str(tmp_path / "missing"))
