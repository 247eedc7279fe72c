from jax import config

config.update("jax_enable_x64", True)

import numpy as np
import pytest

from mlkws.beamforming import fixed
from mlkws.sampling.stft_samples import StftConfig, bin_frequencies
from mlkws.spatial.geometry import uniform_circular_array
from mlkws.transforms.stft import stft_numpy
from mlkws.utils.signal_generator import plane_wave

CFG = StftConfig(window_len=256, hop=128, fft_size=256)
GEOMETRY = uniform_circular_array(6, 0.035)
TONE_BIN = 40


def _tone(azimuth: float) -> np.ndarray:
    n = np.arange(8 * CFG.fft_size)
    tone = np.cos(2 * np.pi * TONE_BIN * n / CFG.fft_size)
    return plane_wave(tone, azimuth, GEOMETRY.positions, GEOMETRY.sound_speed)


@pytest.mark.parametrize("theta", [0.0, 90.0, 200.0])
def test_delay_and_sum_is_distortionless(theta: float):
    bf = fixed.design_delay_and_sum(GEOMETRY, theta, CFG)
    assert bf.weights.shape == (CFG.fft_size // 2 + 1, 6)
    assert bf.look_azimuth == theta
    v = fixed.steering_vector(GEOMETRY, theta, bin_frequencies(CFG))
    np.testing.assert_allclose(np.sum(bf.weights.conj() * v, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(v[:, 0], 1.0)


@pytest.mark.parametrize("theta", [30.0, 250.0])
def test_delay_and_sum_recovers_look_direction(theta: float):
    specs = stft_numpy(_tone(theta), CFG)
    bf = fixed.design_delay_and_sum(GEOMETRY, theta, CFG)
    out = fixed.apply_beamformer(bf, specs)
    np.testing.assert_allclose(out[:, TONE_BIN], specs[0, :, TONE_BIN], atol=1e-9)
    away = fixed.design_delay_and_sum(GEOMETRY, (theta + 180.0) % 360, CFG)
    attenuated = fixed.apply_beamformer(away, specs)[:, TONE_BIN]
    assert np.all(np.abs(attenuated) < np.abs(specs[0, :, TONE_BIN]))


def test_look_beamformers_numpy_jax_agree(rng: np.random.Generator):
    specs = rng.standard_normal((6, 4, 129)) + 1j * rng.standard_normal((6, 4, 129))
    for bf in fixed.design_look_beamformers(GEOMETRY, (0.0, 90.0, 180.0, 270.0), CFG):
        np.testing.assert_allclose(
            np.asarray(fixed.apply_beamformer(bf, specs, "jax")),
            fixed.apply_beamformer(bf, specs, "numpy"),
            atol=1e-12,
        )


def test_single_microphone_is_identity(rng: np.random.Generator):
    geometry = uniform_circular_array(1, 0.0)
    bf = fixed.design_delay_and_sum(geometry, 45.0, CFG)
    specs = rng.standard_normal((1, 3, 129)) + 1j * rng.standard_normal((1, 3, 129))
    np.testing.assert_allclose(fixed.apply_beamformer(bf, specs), specs[0])


def test_beamformer_errors():
    bf = fixed.design_delay_and_sum(GEOMETRY, 0.0, CFG)
    with pytest.raises(ValueError):
        fixed.apply_beamformer(bf, np.zeros((4, 3, 129), dtype=complex))
    with pytest.raises(ValueError):
        fixed.apply_beamformer(bf, np.zeros((6, 3, 129), dtype=complex), "torch")
    with pytest.raises(ValueError):
        fixed.design_delay_and_sum(GEOMETRY, 0.0, CFG, reference_mic=6)
