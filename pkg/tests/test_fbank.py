from jax import config

config.update("jax_enable_x64", True)

import numpy as np
import pytest

from mlkws.sampling import stft_samples as samples
from mlkws.sampling.stft_samples import FbankConfig
from mlkws.transforms import fbank as fb

configs_to_test = [
    FbankConfig(),
    FbankConfig(n_mels=24, left=2, right=1, delta_width=3),
]


def test_fbank_frame_counts():
    cfg = FbankConfig()
    assert samples.fbank_frame_len(cfg) == 400
    assert samples.fbank_frame_shift(cfg) == 160
    assert samples.fbank_nframes(16000, cfg) == 98
    assert samples.stacked_dim(cfg) == 1920
    with pytest.raises(ValueError):
        samples.fbank_nframes(399, cfg)


@pytest.mark.parametrize("cfg", configs_to_test)
def test_logmel_shape_and_filters(rng: np.random.Generator, cfg: FbankConfig):
    mel = fb.mel_filterbank(cfg)
    assert mel.shape == (cfg.n_mels, cfg.fft_size // 2 + 1)
    assert np.all(mel >= 0)
    assert np.all(mel.sum(axis=1) > 0)
    wave = rng.standard_normal((2, 4000))
    feats = fb.logmel_fbank(wave, cfg)
    assert feats.shape == (2, samples.fbank_nframes(4000, cfg), cfg.n_mels)


@pytest.mark.parametrize("cfg", configs_to_test)
def test_logmel_numpy_jax_agree(rng: np.random.Generator, cfg: FbankConfig):
    wave = rng.standard_normal(3000)
    np.testing.assert_allclose(
        np.asarray(fb.logmel_fbank(wave, cfg, method="jax")),
        fb.logmel_fbank(wave, cfg, method="numpy"),
        atol=1e-8,
    )


def test_logmel_of_silence():
    feats = fb.logmel_fbank_numpy(np.zeros(800))
    np.testing.assert_allclose(feats, np.log(1e-10))


@pytest.mark.parametrize("cfg", configs_to_test)
def test_deltas_and_stack_layout(rng: np.random.Generator, cfg: FbankConfig):
    T = 9
    feats = rng.standard_normal((T, cfg.n_mels))
    stacked = fb.add_deltas_and_stack(feats, cfg)
    assert stacked.shape == (T, samples.stacked_dim(cfg))
    width = 3 * cfg.n_mels
    # Centre frame of row t holds the static features of frame t.
    centre = stacked[:, cfg.left * width : cfg.left * width + cfg.n_mels]
    np.testing.assert_allclose(centre, feats)
    # First row replicates frame 0 into its left context.
    for j in range(cfg.left):
        np.testing.assert_allclose(
            stacked[0, j * width : j * width + cfg.n_mels], feats[0]
        )


def test_deltas_of_linear_ramp():
    cfg = FbankConfig(n_mels=2, left=0, right=0, delta_width=5)
    feats = np.stack([np.arange(10.0), 3 * np.arange(10.0)], axis=1)
    stacked = fb.add_deltas_and_stack_numpy(feats, cfg)
    # Away from the replicated edges the regression slope is exact.
    np.testing.assert_allclose(stacked[2:-2, 2:4], [[1.0, 3.0]] * 6, atol=1e-12)
    np.testing.assert_allclose(stacked[4:-4, 4:6], 0.0, atol=1e-12)


@pytest.mark.parametrize("cfg", configs_to_test)
def test_deltas_numpy_jax_agree(rng: np.random.Generator, cfg: FbankConfig):
    feats = rng.standard_normal((7, cfg.n_mels))
    np.testing.assert_allclose(
        np.asarray(fb.add_deltas_and_stack(feats, cfg, method="jax")),
        fb.add_deltas_and_stack(feats, cfg, method="numpy"),
        atol=1e-12,
    )


def test_fbank_errors():
    with pytest.raises(ValueError):
        fb.add_deltas_and_stack_numpy(np.zeros((5, 3)))
    with pytest.raises(ValueError):
        fb.logmel_fbank(np.zeros(800), method="torch")
    with pytest.raises(ValueError):
        fb.add_deltas_and_stack(np.zeros((5, 40)), method="torch")
    with pytest.raises(ValueError):
        FbankConfig(delta_width=4)
    with pytest.raises(ValueError):
        FbankConfig(frame_len_ms=40.0, fft_size=512)
