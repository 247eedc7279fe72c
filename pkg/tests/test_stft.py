from jax import config

config.update("jax_enable_x64", True)

import importlib.util

import numpy as np
import pytest

from mlkws.sampling import stft_samples as samples
from mlkws.sampling.stft_samples import StftConfig
from mlkws.transforms import stft as tr

configs_to_test = [
    StftConfig(),
    StftConfig(window_len=256, hop=128, fft_size=256),
    StftConfig(window_len=400, hop=160, fft_size=512, window="hamming"),
]
method_to_test = ["numpy", "jax"]


@pytest.mark.parametrize("cfg", configs_to_test)
def test_stft_shapes(cfg: StftConfig):
    L = cfg.window_len + 7 * cfg.hop + 3
    assert samples.nframes(L, cfg) == 8
    assert samples.nbins(cfg) == cfg.fft_size // 2 + 1
    assert samples.spectrogram_shape(L, cfg) == (8, cfg.fft_size // 2 + 1)
    assert samples.signal_length(8, cfg) == cfg.window_len + 7 * cfg.hop
    indices = samples.frame_indices(8, cfg.window_len, cfg.hop)
    assert indices.shape == (8, cfg.window_len)


@pytest.mark.parametrize("cfg", configs_to_test)
@pytest.mark.parametrize("method", method_to_test)
def test_stft_round_trip(rng: np.random.Generator, cfg: StftConfig, method: str):
    L = samples.signal_length(12, cfg)
    wave = rng.standard_normal((2, L))
    spec = tr.stft(wave, cfg, method)
    assert spec.shape == (2, 12, cfg.fft_size // 2 + 1)
    recovered = np.asarray(tr.istft(spec, cfg, method))
    assert recovered.shape == wave.shape
    # Exact wherever the squared windows overlap-add to a non-zero value.
    inner = slice(cfg.window_len, L - cfg.window_len)
    np.testing.assert_allclose(recovered[:, inner], wave[:, inner], atol=1e-10)


@pytest.mark.parametrize("cfg", configs_to_test)
def test_stft_numpy_jax_agree(rng: np.random.Generator, cfg: StftConfig):
    wave = rng.standard_normal(samples.signal_length(5, cfg) + 11)
    spec_numpy = tr.stft_numpy(wave, cfg)
    spec_jax = np.asarray(tr.stft_jax(wave, cfg))
    np.testing.assert_allclose(spec_jax, spec_numpy, atol=1e-10)
    np.testing.assert_allclose(
        np.asarray(tr.log_power_spectrum(spec_numpy, "jax")),
        tr.log_power_spectrum(spec_numpy, "numpy"),
        atol=1e-10,
    )


def test_stft_parseval_single_frame(rng: np.random.Generator):
    cfg = StftConfig(window_len=64, hop=32, fft_size=64)
    frame = rng.standard_normal(64)
    spec = tr.stft_numpy(frame, cfg)[0]
    # Two-sided energy from the one-sided spectrum.
    two_sided = np.abs(spec[0]) ** 2 + np.abs(spec[-1]) ** 2
    two_sided += 2 * np.sum(np.abs(spec[1:-1]) ** 2)
    windowed = frame * samples.window(cfg)
    np.testing.assert_allclose(two_sided, 64 * np.sum(windowed**2), rtol=1e-10)


def test_log_power_of_silence():
    cfg = StftConfig(window_len=64, hop=32, fft_size=64)
    spec = tr.stft_numpy(np.zeros(128), cfg)
    np.testing.assert_allclose(tr.log_power_spectrum(spec), np.log(1e-10))


def test_stft_errors():
    cfg = StftConfig(window_len=64, hop=32, fft_size=64)
    with pytest.raises(ValueError):
        tr.stft_numpy(np.zeros(63), cfg)
    with pytest.raises(ValueError):
        tr.stft_numpy(np.array([0.0] * 63 + [np.nan]), cfg)
    with pytest.raises(ValueError):
        tr.istft_numpy(np.zeros((3, 10), dtype=complex), cfg)
    with pytest.raises(ValueError):
        tr.stft(np.zeros(128), cfg, method="torch")
    with pytest.raises(ValueError):
        tr.istft(np.zeros((3, 33), dtype=complex), cfg, method="torch")
    with pytest.raises(ValueError):
        tr.log_power_spectrum(np.zeros((3, 33), dtype=complex), method="torch")


def test_stft_config_validation():
    with pytest.raises(ValueError):
        StftConfig(window_len=256, hop=300, fft_size=512)
    with pytest.raises(ValueError):
        StftConfig(window_len=512, hop=256, fft_size=256)
    with pytest.raises(ValueError):
        StftConfig(window="kaiser")


def test_framing_defaults_on_fresh_import():
    spec = importlib.util.spec_from_file_location("fresh_samples", samples.__file__)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    assert module.nbins() == 257
    assert module.window().shape == (512,)
    assert module.fbank_frame_len() == 400
    assert module.fbank_frame_shift() == 160
    assert module.stacked_dim() == 1920
    assert module.bin_frequencies()[-1] == pytest.approx(8000.0)
