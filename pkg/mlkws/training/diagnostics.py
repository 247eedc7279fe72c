from typing import List

import numpy as np
import jax.numpy as jnp

import mlkws.logs as lg
from mlkws.io.config import KwsConfig, NetworkConfig
from mlkws.models.kws import (
    AttentionParams,
    attention_fuse_jax,
    channel_features_jax,
    frame_posteriors_jax,
    init_attention,
    kws_spec,
)
from mlkws.models.mlenet import (
    MlenetConfig,
    assemble_features,
    enhance_jax,
    init_mlenet,
    predict_masks_jax,
)
from mlkws.nn.gradcheck import (
    TOLERANCE,
    GradCheckResult,
    check_gradient,
    layer_checks,
)
from mlkws.nn.network import build
from mlkws.sampling.stft_samples import FbankConfig, StftConfig
from mlkws.spatial.geometry import LookDirectionSet, mic_pairs, uniform_circular_array
from mlkws.training.losses import (
    binary_cross_entropy_jax,
    multi_look_loss_jax,
    si_snr_jax,
)
from mlkws.transforms.fbank import add_deltas_and_stack_jax, logmel_fbank_jax
from mlkws.transforms.stft import (
    istft_jax,
    log_power_spectrum_jax,
    stft_jax,
    stft_numpy,
)

TOY_STFT = StftConfig(window_len=16, hop=8, fft_size=16)
TOY_FBANK = FbankConfig(
    n_mels=4,
    frame_len_ms=4.0,
    frame_shift_ms=2.0,
    fft_size=64,
    left=1,
    right=0,
    delta_width=3,
)


def toy_mlenet_config() -> MlenetConfig:
    """Two-microphone, two-look front-end small enough for finite differences."""
    geometry = uniform_circular_array(2, 0.05)
    return MlenetConfig(
        geometry=geometry,
        pairs=mic_pairs(geometry, ((0, 1),)),
        looks=LookDirectionSet((0.0, 180.0)),
        stft=TOY_STFT,
        network=NetworkConfig(repeats=1, blocks=2, bottleneck=4, hidden=8),
    )


def gradient_checks(seed: int = 0) -> List[GradCheckResult]:
    """Gradient checks of every differentiable operation used in training.

    Covers every layer kind, the spectral transforms, the losses, the attention fusion
    and two composites on two-frame inputs: the multi-look front-end from features to
    loss, and the keyword spotter from waveforms through attention to its
    cross-entropy.

    Args:
        seed (int, optional): Seed of inputs, parameters and coordinates. Defaults to 0.

    Returns:
        List[GradCheckResult]: One result per check.
    """
    rng = np.random.default_rng(seed)
    results = layer_checks(seed)

    def projected(fn, shape):
        direction = rng.standard_normal(shape)
        return lambda args: jnp.sum(fn(args) * direction)

    F = TOY_STFT.fft_size // 2 + 1
    wave = rng.standard_normal(40)
    results.append(
        check_gradient(
            "stft_log_power",
            projected(lambda w: log_power_spectrum_jax(stft_jax(w, TOY_STFT)), (4, F)),
            wave,
            rng,
        )
    )
    parts = rng.standard_normal((2, 3, F))
    results.append(
        check_gradient(
            "istft",
            projected(lambda p: istft_jax(p[0] + 1j * p[1], TOY_STFT), (32,)),
            parts,
            rng,
        )
    )
    wave = rng.standard_normal(128)
    results.append(
        check_gradient(
            "logmel_fbank",
            projected(lambda w: logmel_fbank_jax(w, TOY_FBANK), (3, TOY_FBANK.n_mels)),
            wave,
            rng,
        )
    )
    fbank = rng.standard_normal((4, TOY_FBANK.n_mels))
    D = 3 * TOY_FBANK.n_mels * 2
    results.append(
        check_gradient(
            "deltas_and_stack",
            projected(lambda f: add_deltas_and_stack_jax(f, TOY_FBANK), (4, D)),
            fbank,
            rng,
        )
    )
    ref = rng.standard_normal(32)
    results.append(
        check_gradient(
            "si_snr", lambda e: si_snr_jax(e, ref), ref + rng.standard_normal(32), rng
        )
    )
    spec_ref = rng.standard_normal((3, F)) + 1j * rng.standard_normal((3, F))
    targets = rng.standard_normal((2, 32))
    results.append(
        check_gradient(
            "multi_look_loss_istft",
            lambda m: multi_look_loss_jax(enhance_jax(spec_ref, m, TOY_STFT), targets),
            0.2 + 0.6 * rng.random((2, 3, F)),
            rng,
        )
    )
    label = np.asarray(1.0)
    results.append(
        check_gradient(
            "binary_cross_entropy",
            lambda s: binary_cross_entropy_jax(s, label),
            np.asarray(0.1 + 0.8 * rng.random()),
            rng,
        )
    )
    z = rng.standard_normal((2, 3, 5))
    attention = AttentionParams(*(0.5 * rng.standard_normal(s) for s in ((3, 5), 3, 3)))
    results.append(
        check_gradient(
            "attention_fusion",
            projected(lambda a: attention_fuse_jax(a[1], a[0]).z, (2, 5)),
            (attention, z),
            rng,
        )
    )
    results.append(_mlenet_toy_check(rng, seed))
    results.append(_kws_toy_check(rng, seed))
    for r in results:
        status = "ok" if r.passed else "FAILED"
        lg.debug_log(
            f"gradient check {r.name}: relative error {r.max_rel_error:.2e} over "
            f"{r.coords} coordinates ({r.skipped} at kinks) {status}"
        )
    failed = [r.name for r in results if not r.passed]
    if failed:
        lg.warning_log(f"Gradient checks above {TOLERANCE:g}: {', '.join(failed)}")
    return results


def _mlenet_toy_check(rng: np.random.Generator, seed: int) -> GradCheckResult:
    cfg = toy_mlenet_config()
    model = init_mlenet(cfg, seed)
    L = TOY_STFT.window_len + TOY_STFT.hop
    mixture = rng.standard_normal((cfg.geometry.num_mics, L))
    # Kept as numpy so that they enter the 64-bit trace unrounded.
    specs = stft_numpy(mixture, TOY_STFT)
    features = assemble_features(specs, cfg)
    spec_ref = specs[cfg.reference_mic]
    targets = rng.standard_normal((cfg.num_outputs, L))

    def loss(params):
        masks = predict_masks_jax(model.spec, params, features)
        return multi_look_loss_jax(enhance_jax(spec_ref, masks, TOY_STFT), targets)

    return check_gradient("mlenet_toy", loss, model.params, rng, coords=3)


def _kws_toy_check(rng: np.random.Generator, seed: int) -> GradCheckResult:
    spec = kws_spec(
        KwsConfig(regions=2, kernels=2, kernel_size=2, dense=(4,), attention_dim=3),
        TOY_FBANK,
        seed,
    )
    params = build(spec)
    attention = init_attention(spec.in_channels, 3, seed + 1)
    # Two filterbank frames on each of three channels.
    waves = rng.standard_normal((3, 96))
    mean, std = np.zeros(TOY_FBANK.n_mels), np.full(TOY_FBANK.n_mels, 5.0)
    label = np.asarray(1.0)

    def loss(args):
        p, a, w = args
        z = channel_features_jax(w, mean, std, TOY_FBANK, 16000)
        fused = attention_fuse_jax(jnp.swapaxes(z, 0, 1), a).z
        score = jnp.max(frame_posteriors_jax(spec, p, fused))
        return binary_cross_entropy_jax(score, label)

    return check_gradient(
        "kws_attention_toy", loss, (params, attention, waves), rng, coords=3
    )

