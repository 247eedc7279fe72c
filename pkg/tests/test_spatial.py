import numpy as np
import pytest

from mlkws.sampling.stft_samples import StftConfig, bin_frequencies
from mlkws.spatial import features as sf
from mlkws.spatial import geometry as geo
from mlkws.transforms.stft import stft_numpy
from mlkws.utils.signal_generator import plane_wave

CFG = StftConfig(window_len=256, hop=128, fft_size=256)
TONE_BIN = 20


def _tone_on_array(geometry: geo.ArrayGeometry, azimuth: float) -> np.ndarray:
    n = np.arange(8 * CFG.fft_size)
    tone = np.cos(2 * np.pi * TONE_BIN * n / CFG.fft_size + 0.3)
    return plane_wave(tone, azimuth, geometry.positions, geometry.sound_speed)


def test_uniform_circular_array_pairs():
    geometry = geo.uniform_circular_array(4, 0.05)
    assert geometry.num_mics == 4
    pair = geo.mic_pair(geometry, 0, 2)
    assert pair.distance == pytest.approx(0.1)
    assert 0.0 <= pair.axis_azimuth < 360.0
    assert pair.axis_azimuth == pytest.approx(0.0, abs=1e-9)
    pair = geo.mic_pair(geometry, 3, 1)
    assert pair.axis_azimuth == pytest.approx(270.0)
    default = geo.mic_pairs(geo.uniform_circular_array())
    assert len(default) == 6
    assert default[0].distance == pytest.approx(0.07)


@pytest.mark.parametrize(
    "deg, expected",
    [(-1e-15, 0.0), (360.0, 0.0), (-90.0, 270.0), (725.0, 5.0), (359.5, 359.5)],
)
def test_wrap_azimuth(deg: float, expected: float):
    wrapped = geo.wrap_azimuth(deg)
    assert 0.0 <= wrapped < 360.0
    assert wrapped == pytest.approx(expected)
    assert geo.azimuth_deg((1.0, -1e-17)) == 0.0


def test_geometry_errors():
    with pytest.raises(ValueError):
        geo.ArrayGeometry(((0.0, 0.0), (0.0, 0.0)))
    with pytest.raises(ValueError):
        geo.ArrayGeometry(((0.0, 0.0),), sound_speed=0.0)
    with pytest.raises(ValueError):
        geo.mic_pair(geo.uniform_circular_array(4), 0, 4)
    with pytest.raises(ValueError):
        geo.mic_pairs(geo.uniform_circular_array(4), ())
    with pytest.raises(ValueError):
        geo.LookDirectionSet((0.0, 0.0))
    with pytest.raises(ValueError):
        geo.LookDirectionSet((0.0, 360.0))
    with pytest.raises(ValueError):
        geo.LookDirectionSet(())


@pytest.mark.parametrize(
    "a, b, expected", [(350.0, 10.0, 20.0), (0.0, 180.0, 180.0), (45.0, 45.0, 0.0)]
)
def test_circular_angle_distance(a: float, b: float, expected: float):
    assert geo.circular_angle_distance(a, b) == pytest.approx(expected)
    assert geo.circular_angle_distance(b, a) == pytest.approx(expected)
    assert geo.circular_angle_distance(a + 720.0, b) == pytest.approx(expected)


def test_wrap_phase():
    wrapped = sf.wrap_phase([3 * np.pi, -np.pi, 0.5])
    np.testing.assert_allclose(wrapped, [np.pi, np.pi, 0.5])
    wrapped = sf.wrap_phase(np.linspace(-20, 20, 101))
    assert np.all(wrapped > -np.pi) and np.all(wrapped <= np.pi)


def test_ipd_of_silence_is_zero():
    zeros = np.zeros((3, 5), dtype=complex)
    np.testing.assert_array_equal(sf.ipd(zeros, zeros), 0.0)
    with pytest.raises(ValueError):
        sf.ipd(zeros, np.zeros((3, 4), dtype=complex))


@pytest.mark.parametrize("azimuth", [0.0, 60.0, 225.0])
def test_directional_feature_peaks_at_source(azimuth: float):
    geometry = geo.uniform_circular_array(4, 0.05)
    pairs = geo.mic_pairs(geometry, ((0, 2), (1, 3)))
    specs = stft_numpy(_tone_on_array(geometry, azimuth), CFG)
    ipd_maps = sf.ipds(specs, pairs)
    freqs = bin_frequencies(CFG)
    df = sf.directional_feature(ipd_maps, azimuth, pairs, freqs)
    np.testing.assert_allclose(df[:, TONE_BIN], 1.0, atol=1e-8)
    for look in (azimuth + 90.0, azimuth + 180.0):
        df = sf.directional_feature(ipd_maps, look % 360, pairs, freqs)
        expected = sf.freefield_df_approx(azimuth, look % 360, pairs, freqs[TONE_BIN])
        np.testing.assert_allclose(df[:, TONE_BIN], expected, atol=1e-8)
        assert expected < 1.0


def test_directional_feature_normalisation(rng: np.random.Generator):
    geometry = geo.uniform_circular_array()
    pairs = geo.mic_pairs(geometry)
    ipd_maps = rng.uniform(-np.pi, np.pi, (len(pairs), 4, 9))
    freqs = np.linspace(0, 8000, 9)
    df = sf.directional_feature(ipd_maps, 30.0, pairs, freqs)
    assert np.all(np.abs(df) <= 1.0)
    summed = sf.directional_feature(ipd_maps, 30.0, pairs, freqs, normalize=False)
    np.testing.assert_allclose(summed, len(pairs) * df)
    with pytest.raises(ValueError):
        sf.directional_feature(ipd_maps[:2], 30.0, pairs, freqs)
    with pytest.raises(ValueError):
        sf.directional_feature(ipd_maps, 30.0, (), freqs)
    with pytest.raises(ValueError):
        sf.ipds(np.zeros((2, 4, 9), dtype=complex), pairs)
