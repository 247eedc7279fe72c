from typing import NamedTuple, Sequence, Tuple

import numpy as np
import jax.numpy as jnp
from jax import jit

SI_SNR_CAP = 60.0
PERFECT_RATIO = 1e-12
BCE_CLIP = 1e-7


class LossReport(NamedTuple):
    """Multi-look loss of one example.

    Attributes:
        total (float): :math:`-\\sum_k` SI-SNR, the minimised objective.

        per_look (Tuple[float, ...]): SI-SNR of every look in dB.

        step (int): Optimiser step.

        example_id (str): Utterance identifier.
    """

    total: float
    per_look: Tuple[float, ...]
    step: int = 0
    example_id: str = ""


def si_snr(est: np.ndarray, ref: np.ndarray, method: str = "numpy") -> float:
    r"""Wrapper for the scale-invariant signal-to-noise ratio.

    Args:
        est (np.ndarray): Estimated waveform of shape [L].

        ref (np.ndarray): Reference waveform of shape [L].

        method (str, optional): Execution mode in {"numpy", "jax"}. Defaults to "numpy".

    Raises:
        ValueError: Method not recognised.

    Returns:
        float: SI-SNR in dB.
    """
    if method == "numpy":
        return si_snr_numpy(est, ref)
    elif method == "jax":
        return si_snr_jax(est, ref)
    else:
        raise ValueError(
            f"Implementation {method} not recognised. Should be either numpy or jax."
        )


def si_snr_numpy(est: np.ndarray, ref: np.ndarray) -> float:
    r"""Scale-invariant signal-to-noise ratio (numpy).

    Both signals are made zero-mean, :math:`x_t = \langle \hat x, x\rangle x / \|x\|^2`,
    :math:`e = \hat x - x_t` and the result is :math:`10 \log_{10}(\|x_t\|^2/\|e\|^2)`,
    limited to :math:`\pm 60` dB. Estimates with
    :math:`\|e\|^2 < 10^{-12} \|x_t\|^2` score +60 dB; an all-zero (after zero-mean)
    estimate scores -60 dB.

    Args:
        est (np.ndarray): Estimated waveform of shape [L].

        ref (np.ndarray): Reference waveform of shape [L].

    Raises:
        ValueError: Lengths differ or the zero-mean reference is identically zero.

    Returns:
        float: SI-SNR in dB.
    """
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 1:
        raise ValueError(
            "SI-SNR needs two waveforms of equal length, "
            + f"got {est.shape} and {ref.shape}"
        )
    est = est - est.mean()
    ref = ref - ref.mean()
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0:
        raise ValueError("SI-SNR reference is identically zero")
    target = np.dot(est, ref) / ref_energy * ref
    noise = est - target
    t_energy = np.dot(target, target)
    n_energy = np.dot(noise, noise)
    if not np.any(est):
        return -SI_SNR_CAP
    if n_energy < PERFECT_RATIO * t_energy:
        return SI_SNR_CAP
    if t_energy == 0:
        return -SI_SNR_CAP
    return float(np.clip(10 * np.log10(t_energy / n_energy), -SI_SNR_CAP, SI_SNR_CAP))


@jit
def si_snr_jax(est: jnp.ndarray, ref: jnp.ndarray) -> jnp.ndarray:
    r"""Scale-invariant signal-to-noise ratio (JAX). Differentiable counterpart of
    :func:`~si_snr_numpy` on leading batch axes, with the ratio computed as
    :math:`10 \log_{10}((\|x_t\|^2 + \delta)/(\|e\|^2 + \delta))` for a tiny
    :math:`\delta` and clipped to :math:`\pm 60` dB.

    Args:
        est (jnp.ndarray): Estimated waveforms of shape [..., L].

        ref (jnp.ndarray): Reference waveforms of shape [..., L].

    Returns:
        jnp.ndarray: SI-SNR in dB of shape [...].
    """
    est = est - jnp.mean(est, axis=-1, keepdims=True)
    ref = ref - jnp.mean(ref, axis=-1, keepdims=True)
    tiny = jnp.finfo(est.dtype).tiny
    ref_energy = jnp.sum(ref * ref, axis=-1, keepdims=True)
    scale = jnp.sum(est * ref, axis=-1, keepdims=True) / (ref_energy + tiny)
    target = scale * ref
    noise = est - target
    t_energy = jnp.sum(target * target, axis=-1)
    n_energy = jnp.sum(noise * noise, axis=-1)
    ratio = (t_energy + tiny) / (n_energy + PERFECT_RATIO * t_energy + tiny)
    return jnp.clip(10 * jnp.log10(ratio), -SI_SNR_CAP, SI_SNR_CAP)


def multi_look_loss(
    est: Sequence[np.ndarray], references: np.ndarray, assignment: Sequence[int]
) -> LossReport:
    r"""Multi-look objective :math:`-\sum_k \text{SI-SNR}(\hat x^k, x^{\tilde k})`.

    References are trimmed to the estimate length.

    Args:
        est (Sequence[np.ndarray]): K estimated waveforms.

        references (np.ndarray): Source references of shape [N, L].

        assignment (Sequence[int]): Source index of every look.

    Raises:
        ValueError: Number of estimates differs from the assignment, or an index is out
            of range.

    Returns:
        LossReport: Total loss and per-look SI-SNR.
    """
    if len(est) != len(assignment):
        raise ValueError(f"{len(est)} estimates for {len(assignment)} assigned looks")
    references = np.atleast_2d(references)
    per_look = []
    for x_hat, j in zip(est, assignment):
        if not 0 <= j < len(references):
            raise ValueError(
                f"Assigned source {j} outside {len(references)} references"
            )
        x_hat = np.asarray(x_hat)
        per_look.append(si_snr_numpy(x_hat, references[j, : x_hat.shape[-1]]))
    return LossReport(-float(np.sum(per_look)), tuple(per_look))


def multi_look_loss_jax(est: jnp.ndarray, targets: jnp.ndarray) -> jnp.ndarray:
    r"""Multi-look objective (JAX) on pre-gathered targets.

    Args:
        est (jnp.ndarray): Estimates of shape [..., K, L].

        targets (jnp.ndarray): Assigned references of shape [..., K, L'] with
            :math:`L' \geq L`.

    Returns:
        jnp.ndarray: Loss of shape [...].
    """
    L = est.shape[-1]
    return -jnp.sum(si_snr_jax(est, targets[..., :L]), axis=-1)


@jit
def binary_cross_entropy_jax(score: jnp.ndarray, label: jnp.ndarray) -> jnp.ndarray:
    r"""Utterance-level cross-entropy
    :math:`-(y \log s + (1 - y) \log(1 - s))` of keyword scores, with the scores kept
    :math:`10^{-7}` away from 0 and 1.

    Args:
        score (jnp.ndarray): Keyword scores in [0, 1].

        label (jnp.ndarray): 1 for keyword utterances, 0 otherwise.

    Returns:
        jnp.ndarray: Loss per utterance.
    """
    s = jnp.clip(score, BCE_CLIP, 1 - BCE_CLIP)
    label = label.astype(s.dtype)
    return -(label * jnp.log(s) + (1 - label) * jnp.log1p(-s))
