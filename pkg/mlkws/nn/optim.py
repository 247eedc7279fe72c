from functools import partial
from typing import NamedTuple, Tuple

import numpy as np
import jax
import jax.numpy as jnp

import mlkws.logs as lg


class DivergenceError(FloatingPointError):
    """Non-finite loss or gradient during optimisation."""


class AdamConfig(NamedTuple):
    """Adam hyper-parameters.

    Attributes:
        learning_rate (float): Step size. Defaults to 1e-3.

        betas (Tuple[float, float]): Decay of the first and second moments.
            Defaults to (0.9, 0.999).

        eps (float): Denominator floor. Defaults to 1e-8.
    """

    learning_rate: float = 1e-3
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


class AdamState(NamedTuple):
    """Adam moments and step count, with the structure of the parameters."""

    step: int
    m: dict
    v: dict


def init_adam(params: dict) -> AdamState:
    """Zero moments for a parameter tree."""
    zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
    return AdamState(0, zeros, jax.tree_util.tree_map(jnp.zeros_like, params))


def check_finite(grads: dict, loss=None):
    """Raise :class:`DivergenceError` naming every non-finite gradient entry.

    Args:
        grads (dict): Gradient tree.

        loss (float, optional): Loss value to check as well.

    Raises:
        DivergenceError: Non-finite loss or gradient.
    """
    problems = []
    if loss is not None and not np.isfinite(float(loss)):
        problems.append(f"loss={float(loss)}")
    flat, _ = jax.tree_util.tree_flatten_with_path(grads)
    for path, g in flat:
        if not np.all(np.isfinite(np.asarray(g))):
            problems.append(jax.tree_util.keystr(path))
    if problems:
        message = "Non-finite values in " + ", ".join(problems)
        lg.critical_log(message)
        raise DivergenceError(message)


def optimizer_step(
    params: dict, grads: dict, state: AdamState, cfg: AdamConfig = AdamConfig()
) -> Tuple[dict, AdamState]:
    r"""One Adam update with bias-corrected moments,
    :math:`w \leftarrow w - \eta \hat m / (\sqrt{\hat v} + \epsilon)`.

    Args:
        params (dict): Parameters.

        grads (dict): Gradients with the same structure.

        state (AdamState): Optimiser state.

        cfg (AdamConfig, optional): Hyper-parameters.

    Raises:
        ValueError: Gradient structure or shapes differ from the parameters.

        DivergenceError: Non-finite gradients.

    Returns:
        Tuple[dict, AdamState]: Updated parameters and state.
    """
    p_shapes = jax.tree_util.tree_map(np.shape, params)
    g_shapes = jax.tree_util.tree_map(np.shape, grads)
    if p_shapes != g_shapes:
        raise ValueError("Gradient shapes do not match the parameters")
    check_finite(grads)
    step = state.step + 1
    new_params, m, v = _adam_update(
        params, grads, state.m, state.v, jnp.asarray(step, jnp.float32), cfg
    )
    return new_params, AdamState(step, m, v)


@partial(jax.jit, static_argnums=(5,))
def _adam_update(params, grads, m, v, step, cfg):
    b1, b2 = cfg.betas
    m = jax.tree_util.tree_map(
        lambda m_, g: (b1 * m_ + (1 - b1) * g).astype(m_.dtype), m, grads
    )
    v = jax.tree_util.tree_map(
        lambda v_, g: (b2 * v_ + (1 - b2) * g * g).astype(v_.dtype), v, grads
    )
    c1 = 1 - b1**step
    c2 = 1 - b2**step

    def update(p, m_, v_):
        delta = cfg.learning_rate * (m_ / c1) / (jnp.sqrt(v_ / c2) + cfg.eps)
        return (p - delta).astype(p.dtype)

    return jax.tree_util.tree_map(update, params, m, v), m, v
