from jax import config

config.update("jax_enable_x64", True)

import dataclasses

import numpy as np
import jax.numpy as jnp
import pytest

from mlkws.io.wav import MultiChannelWaveform
from mlkws.models import kws as kw
from mlkws.models import mlenet as ml
from mlkws.nn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from mlkws.sampling import stft_samples as samples
from mlkws.spatial.features import directional_feature, ipds
from mlkws.transforms.stft import istft_numpy, log_power_spectrum, stft_numpy


@pytest.fixture
def mixture(rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((4, 2048))


def test_feature_layout(tiny_run, mixture: np.ndarray):
    cfg = ml.mlenet_config(tiny_run)
    assert cfg.num_bins == 129
    assert cfg.feature_width == 129 * (1 + 2 + 4)
    assert ml.mlenet_config(tiny_run, "dae").feature_width == 129 * (1 + 2 + 1)
    specs = stft_numpy(mixture, cfg.stft)
    feats = ml.assemble_features(specs, cfg)
    assert feats.shape == (15, cfg.feature_width)
    F = cfg.num_bins
    np.testing.assert_allclose(feats[:, :F], log_power_spectrum(specs[0]))
    phase = ipds(specs, cfg.pairs)
    np.testing.assert_allclose(feats[:, 2 * F : 3 * F], phase[1])
    freqs = samples.bin_frequencies(cfg.stft)
    df = directional_feature(phase, 180.0, cfg.pairs, freqs, cfg.geometry.sound_speed)
    np.testing.assert_allclose(feats[:, 5 * F : 6 * F], df)


def test_feature_errors(tiny_run, mixture: np.ndarray):
    cfg = ml.mlenet_config(tiny_run)
    specs = stft_numpy(mixture, cfg.stft)
    with pytest.raises(ValueError):
        ml.assemble_features(specs[:3], cfg)
    with pytest.raises(ValueError):
        ml.assemble_features(specs, cfg, looks=(0.0,))
    with pytest.raises(ValueError):
        ml.mlenet_config(tiny_run, "beamformer")


def test_masks_and_enhancement(tiny_run, mixture: np.ndarray):
    model = ml.init_mlenet(ml.mlenet_config(tiny_run), seed=2)
    waves, masks = ml.enhance_waveform(model, MultiChannelWaveform(mixture))
    assert masks.shape == (4, 15, 129)
    assert np.all((masks >= 0) & (masks <= 1))
    assert waves.shape == (4, samples.signal_length(15, model.cfg.stft))
    again, _ = ml.enhance_waveform(model, MultiChannelWaveform(mixture))
    np.testing.assert_array_equal(waves, again)
    with pytest.raises(ValueError):
        ml.predict_masks(model, np.zeros((15, 10)))
    with pytest.raises(ValueError):
        ml.enhance_waveform(model, MultiChannelWaveform(mixture, sample_rate=8000))


def test_zero_head_gives_half_masks(tiny_run, mixture: np.ndarray):
    network = dataclasses.replace(tiny_run.network, zero_init_head=True)
    run = dataclasses.replace(tiny_run, network=network)
    model = ml.init_mlenet(ml.mlenet_config(run))
    _, masks = ml.enhance_waveform(model, MultiChannelWaveform(mixture))
    np.testing.assert_array_equal(masks, 0.5)


def test_unit_mask_resynthesises_reference(tiny_run, mixture: np.ndarray):
    cfg = ml.mlenet_config(tiny_run)
    specs = stft_numpy(mixture, cfg.stft)
    ones = np.ones((2,) + specs.shape[1:])
    out = ml.enhance(specs[0], ones, cfg)
    inner = slice(cfg.stft.window_len, mixture.shape[1] - cfg.stft.window_len)
    np.testing.assert_allclose(out[:, inner], mixture[[0, 0], inner], atol=1e-10)
    np.testing.assert_allclose(out, istft_numpy(specs[[0, 0]], cfg.stft))
    np.testing.assert_allclose(
        np.asarray(ml.enhance_jax(jnp.asarray(specs[0]), jnp.asarray(ones), cfg.stft)),
        out,
        atol=1e-10,
    )
    with pytest.raises(ValueError):
        ml.enhance(specs[0], ones[:, :3], cfg)


def test_oracle_dae(tiny_run, mixture: np.ndarray):
    dae = ml.init_mlenet(ml.mlenet_config(tiny_run, "dae"))
    wave = ml.enhance_oracle_dae(MultiChannelWaveform(mixture), 45.0, dae)
    assert wave.ndim == 1
    multi = ml.init_mlenet(ml.mlenet_config(tiny_run))
    with pytest.raises(ValueError):
        ml.enhance_oracle_dae(MultiChannelWaveform(mixture), 45.0, multi)


def test_mlenet_checkpoint(tmp_path, tiny_run):
    model = ml.init_mlenet(ml.mlenet_config(tiny_run), seed=4)
    save_checkpoint(tmp_path / "m.ckpt", {"mlenet": model.params}, {"kind": "mlenet"})
    loaded = ml.mlenet_from_checkpoint(load_checkpoint(tmp_path / "m.ckpt"), tiny_run)
    np.testing.assert_array_equal(
        loaded.params["head"]["w"], np.asarray(model.params["head"]["w"])
    )
    save_checkpoint(tmp_path / "k.ckpt", {"mlenet": model.params}, {"kind": "kws"})
    with pytest.raises(CheckpointError):
        ml.mlenet_from_checkpoint(load_checkpoint(tmp_path / "k.ckpt"), tiny_run)
    dae_params = {"mlenet": model.params}
    save_checkpoint(tmp_path / "d.ckpt", dae_params, {"kind": "dae", "mode": "dae"})
    with pytest.raises(CheckpointError):
        ml.mlenet_from_checkpoint(load_checkpoint(tmp_path / "d.ckpt"), tiny_run)


def _norm(n_mels: int = 40) -> kw.FbankNorm:
    return kw.FbankNorm(np.zeros(n_mels, np.float32), np.ones(n_mels, np.float32))


def test_estimate_norm(rng: np.random.Generator):
    a = rng.standard_normal((10, 3)) * [1.0, 2.0, 0.0]
    b = rng.standard_normal((5, 3)) * [1.0, 2.0, 0.0]
    norm = kw.estimate_norm([a, b])
    stacked = np.concatenate([a, b])
    np.testing.assert_allclose(norm.mean, stacked.mean(axis=0), rtol=1e-6)
    np.testing.assert_allclose(norm.std[:2], stacked.std(axis=0)[:2], rtol=1e-6)
    assert norm.std[2] == np.float32(kw.NORM_FLOOR)
    assert norm.mean.dtype == np.float32
    with pytest.raises(ValueError):
        kw.estimate_norm([])


def test_channel_features_numpy_jax_agree(rng: np.random.Generator):
    wave = rng.standard_normal(4000)
    norm = kw.FbankNorm(
        rng.standard_normal(40).astype(np.float32),
        rng.uniform(1, 2, 40).astype(np.float32),
    )
    feats = kw.channel_features(wave, norm)
    assert feats.shape == (samples.fbank_nframes(4000, samples.FbankConfig()), 1920)
    np.testing.assert_allclose(
        np.asarray(kw.channel_features(wave, norm, method="jax")), feats, atol=1e-8
    )
    pair = np.stack([wave, wave])
    batched = np.asarray(kw.channel_features(pair, norm, method="jax"))
    np.testing.assert_allclose(batched[1], feats, atol=1e-8)
    with pytest.raises(ValueError):
        kw.channel_features(wave, norm, method="torch")


def test_attention_fusion(rng: np.random.Generator):
    params = kw.init_attention(6, 4, seed=1)
    z = rng.standard_normal((7, 5, 6))
    fused = kw.attention_fuse(z, params)
    assert fused.alpha.shape == (7, 5) and fused.z.shape == (7, 6)
    np.testing.assert_allclose(fused.alpha.sum(axis=-1), 1.0)
    assert np.all(fused.alpha > 0)
    jax_fused = kw.attention_fuse(z, params, method="jax")
    np.testing.assert_allclose(np.asarray(jax_fused.alpha), fused.alpha, atol=1e-6)
    np.testing.assert_allclose(np.asarray(jax_fused.z), fused.z, atol=1e-6)

    flat = kw.AttentionParams(np.zeros((4, 6)), np.zeros(4), np.zeros(4))
    uniform = kw.attention_fuse(z, flat)
    np.testing.assert_allclose(uniform.alpha, 0.2)
    np.testing.assert_allclose(uniform.z, z.mean(axis=1))

    same = np.repeat(z[:, :1], 5, axis=1)
    np.testing.assert_allclose(kw.attention_fuse(same, params).z, z[:, 0])

    with pytest.raises(ValueError):
        kw.attention_fuse(z[..., :5], params)
    with pytest.raises(ValueError):
        kw.attention_fuse(z, params, method="torch")


def test_kws_scoring(tiny_run, rng: np.random.Generator):
    model = kw.init_kws(tiny_run, _norm(), seed=5)
    assert model.spec.in_channels == 1920
    waves = rng.standard_normal((3, 4000))
    feats = kw.channel_features(waves[0], model.norm)
    post, score = kw.kws_forward(model, feats)
    assert post.shape == (feats.shape[0],)
    assert np.all((post >= 0) & (post <= 1))
    assert score == pytest.approx(float(post.max()))
    assert kw.score_channels(model, waves[:1]) == pytest.approx(score)
    separate = kw.score_channels(model, waves, fuse=False)
    singles = [kw.score_channels(model, w[None]) for w in waves]
    assert separate == pytest.approx(max(singles))
    copies = np.repeat(waves[:1], 3, axis=0)
    assert kw.score_channels(model, copies) == pytest.approx(score, abs=1e-6)
    with pytest.raises(ValueError):
        kw.kws_forward(model, feats[:, :100])


def test_kws_checkpoint(tmp_path, tiny_run):
    model = kw.init_kws(tiny_run, _norm(), seed=5)
    save_checkpoint(tmp_path / "k.ckpt", kw.kws_tree(model), {"kind": "kws"})
    loaded = kw.kws_from_checkpoint(load_checkpoint(tmp_path / "k.ckpt"), tiny_run)
    np.testing.assert_array_equal(
        loaded.params["logits"]["w"], np.asarray(model.params["logits"]["w"])
    )
    np.testing.assert_array_equal(loaded.attention.W, np.asarray(model.attention.W))
    np.testing.assert_array_equal(loaded.norm.std, 1.0)

    save_checkpoint(tmp_path / "m.ckpt", kw.kws_tree(model), {"kind": "mlenet"})
    with pytest.raises(CheckpointError):
        kw.kws_from_checkpoint(load_checkpoint(tmp_path / "m.ckpt"), tiny_run)
    partial = {"kws": model.params, "norm": dict(model.norm._asdict())}
    save_checkpoint(tmp_path / "p.ckpt", partial, {"kind": "kws"})
    with pytest.raises(CheckpointError):
        kw.kws_from_checkpoint(load_checkpoint(tmp_path / "p.ckpt"), tiny_run)
