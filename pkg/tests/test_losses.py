from jax import config

config.update("jax_enable_x64", True)

import numpy as np
import jax.numpy as jnp
import pytest

from mlkws.spatial.geometry import LookDirectionSet
from mlkws.training import assignment as am
from mlkws.training import losses

LOOKS = LookDirectionSet((0.0, 90.0, 180.0, 270.0))


def test_si_snr_hand_example():
    ref = np.array([1.0, -1.0, 1.0, -1.0])
    noise = np.array([1.0, 1.0, -1.0, -1.0]) / np.sqrt(3)
    assert losses.si_snr(ref + noise, ref) == pytest.approx(10 * np.log10(3), abs=1e-9)


def test_si_snr_scale_and_offset_invariance(rng: np.random.Generator):
    ref = rng.standard_normal(400)
    est = ref + 0.5 * rng.standard_normal(400)
    value = losses.si_snr(est, ref)
    assert losses.si_snr(3.0 * est + 2.0, ref) == pytest.approx(value, abs=1e-9)
    assert losses.si_snr(est, 5.0 * ref - 1.0) == pytest.approx(value, abs=1e-9)


def test_si_snr_limits(rng: np.random.Generator):
    ref = rng.standard_normal(100)
    assert losses.si_snr(2.0 * ref, ref) == losses.SI_SNR_CAP
    assert losses.si_snr(np.zeros(100), ref) == -losses.SI_SNR_CAP
    assert losses.si_snr(np.full(100, 0.5), ref) == -losses.SI_SNR_CAP
    with pytest.raises(ValueError):
        losses.si_snr(ref, np.full(100, 2.0))
    with pytest.raises(ValueError):
        losses.si_snr(ref, ref[:50])
    with pytest.raises(ValueError):
        losses.si_snr(ref, ref, method="torch")


def test_si_snr_numpy_jax_agree(rng: np.random.Generator):
    ref = rng.standard_normal((3, 200))
    est = ref + rng.standard_normal((3, 200))
    batched = np.asarray(losses.si_snr(est, ref, method="jax"))
    assert batched.shape == (3,)
    for b in range(3):
        assert batched[b] == pytest.approx(losses.si_snr(est[b], ref[b]), abs=1e-8)
    perfect = losses.si_snr_jax(jnp.asarray(ref[0]), jnp.asarray(ref[0]))
    assert float(perfect) == pytest.approx(losses.SI_SNR_CAP)


def test_multi_look_loss(rng: np.random.Generator):
    references = rng.standard_normal((2, 310))
    est = [references[0, :300] + 0.1 * rng.standard_normal(300) for _ in range(3)]
    est[1] = references[1, :300] + 0.2 * rng.standard_normal(300)
    report = losses.multi_look_loss(est, references, (0, 1, 0))
    expected = [
        losses.si_snr(est[0], references[0, :300]),
        losses.si_snr(est[1], references[1, :300]),
        losses.si_snr(est[2], references[0, :300]),
    ]
    np.testing.assert_allclose(report.per_look, expected)
    assert report.total == pytest.approx(-sum(expected))

    targets = references[[0, 1, 0]]
    total = losses.multi_look_loss_jax(jnp.asarray(np.stack(est)), jnp.asarray(targets))
    assert float(total) == pytest.approx(report.total, abs=1e-7)

    with pytest.raises(ValueError):
        losses.multi_look_loss(est, references, (0, 1))
    with pytest.raises(ValueError):
        losses.multi_look_loss(est, references, (0, 1, 2))


def test_binary_cross_entropy():
    score = jnp.array([0.5, 1.0, 0.0, 0.25])
    label = jnp.array([1, 1, 1, 0])
    loss = np.asarray(losses.binary_cross_entropy_jax(score, label))
    np.testing.assert_allclose(
        loss, [np.log(2), -np.log1p(-1e-7), -np.log(1e-7), -np.log(0.75)], rtol=1e-6
    )


def test_assign_targets():
    a = am.assign_targets(LOOKS, (10.0, 200.0))
    assert a.sources == (0, 0, 1, 1)
    np.testing.assert_allclose(a.distances, (10.0, 80.0, 20.0, 70.0))
    # Look 0 sits halfway between both sources.
    assert am.assign_targets(LOOKS, (45.0, 315.0)).sources == (0, 0, 0, 1)
    with pytest.raises(ValueError):
        am.assign_targets(LOOKS, ())


def test_off_target_flag():
    a = am.assign_targets(LOOKS, (10.0, 20.0, 30.0))
    assert a.sources == (0, 2, 2, 0)
    assert not am.is_off_target(a)
    assert am.is_off_target(a, source=1)


def test_off_target_probability_two_sources_one_look():
    single = LookDirectionSet((0.0,))
    assert am.off_target_probability(single, num_sources=2) == pytest.approx(0.5)
    assert am.off_target_probability(LOOKS, num_sources=1) == 0.0


def test_off_target_monte_carlo_matches_exhaustive(rng: np.random.Generator):
    exact = am.off_target_probability(LOOKS, num_sources=3, grid_deg=2.0)
    sampled = am.off_target_rate_monte_carlo(LOOKS, rng, num_sources=3, draws=100000)
    assert 0.0 < exact < 1.0
    assert abs(sampled - exact) < 0.01


def test_off_target_errors(rng: np.random.Generator):
    with pytest.raises(ValueError):
        am.off_target_probability(LOOKS, num_sources=4)
    with pytest.raises(ValueError):
        am.off_target_probability(LOOKS, num_sources=3, source=3)
    with pytest.raises(ValueError):
        am.off_target_probability(LOOKS, grid_deg=7.0)
    with pytest.raises(ValueError):
        am.off_target_rate_monte_carlo(LOOKS, rng, draws=0)
