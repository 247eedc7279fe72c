from dataclasses import dataclass
from typing import Callable, Tuple, Union

import numpy as np
import jax
import jax.numpy as jnp

from mlkws.nn.layers import Layer, apply_layer, check_layer, init_layer


class TapeConsumedError(RuntimeError):
    """Backward pass requested twice from the same forward tape."""


@dataclass(frozen=True)
class NetworkSpec:
    r"""Sequential network description.

    Args:
        layers (Tuple[Layer, ...]): Layers applied in order.

        in_channels (int or Tuple[int, ...]): Input channels (a tuple when the first
            layer is ``concat``).

        seed (int, optional): Seed of the parameter initialisation. Defaults to 0.

    Raises:
        ValueError: Empty network, duplicate layer names or shapes that do not chain,
            naming the offending layer.
    """

    layers: Tuple[Layer, ...]
    in_channels: Union[int, Tuple[int, ...]]
    seed: int = 0

    def __post_init__(self):
        if len(self.layers) == 0:
            raise ValueError("Network needs at least one layer")
        names = [layer.name for layer in self.layers]
        if len(set(names)) != len(names):
            raise ValueError(f"Layer names must be unique, got {names}")
        c = self.in_channels
        for layer in self.layers:
            if isinstance(c, tuple) and layer.kind != "concat":
                raise ValueError(
                    f"Layer {layer.name}: split outputs must end the network"
                )
            c = check_layer(layer, c)

    @property
    def out_channels(self) -> Union[int, Tuple[int, ...]]:
        c = self.in_channels
        for layer in self.layers:
            c = check_layer(layer, c)
        return c


class Tape:
    """Record of a forward pass, consumed by :func:`backward`."""

    def __init__(self, vjp_fn: Callable):
        self._vjp_fn = vjp_fn
        self.consumed = False


def build(spec: NetworkSpec) -> dict:
    """Initialise the parameters of a network.

    Every layer draws from its own key split from ``spec.seed``, so parameters are
    identical across runs.

    Args:
        spec (NetworkSpec): Network.

    Returns:
        dict: Nested parameters ``{layer name: {param name: array}}``.
    """
    keys = jax.random.split(jax.random.PRNGKey(spec.seed), len(spec.layers))
    return {layer.name: init_layer(k, layer) for k, layer in zip(keys, spec.layers)}


def apply(spec: NetworkSpec, params: dict, x, debug: bool = False):
    """Run a network on an input of shape [C, T].

    Args:
        spec (NetworkSpec): Network.

        params (dict): Parameters from :func:`build`.

        x (jnp.ndarray): Input of shape [C, T], or a tuple of them for a leading
            ``concat``.

        debug (bool, optional): Check every layer output for non-finite values.
            Requires eager execution. Defaults to False.

    Raises:
        ValueError: Input channels do not match the first layer.

        FloatingPointError: Non-finite values in debug mode, naming the layer.

    Returns:
        jnp.ndarray or Tuple[jnp.ndarray, ...]: Network output.
    """
    _check_input(spec, x)
    for layer in spec.layers:
        x = apply_layer(layer, params[layer.name], x)
        if debug:
            for y in x if isinstance(x, tuple) else (x,):
                if not np.all(np.isfinite(np.asarray(y))):
                    raise FloatingPointError(f"Layer {layer.name}: non-finite output")
    return x


def forward(spec: NetworkSpec, params: dict, x):
    """Run a network and record a tape for :func:`backward`.

    Args:
        spec (NetworkSpec): Network.

        params (dict): Parameters.

        x (jnp.ndarray): Input of shape [C, T].

    Returns:
        Tuple[jnp.ndarray, Tape]: Output and tape.
    """
    _check_input(spec, x)
    out, vjp_fn = jax.vjp(lambda p: apply(spec, p, x), params)
    return out, Tape(vjp_fn)


def backward(tape: Tape, upstream) -> dict:
    """Back-propagate an upstream gradient through a recorded forward pass.

    Args:
        tape (Tape): Tape from :func:`forward`.

        upstream (jnp.ndarray): Gradient of the loss with respect to the output.

    Raises:
        TapeConsumedError: The tape was already used.

    Returns:
        dict: Gradients with the structure of the parameters.
    """
    if tape.consumed:
        raise TapeConsumedError("Tape already consumed by a previous backward pass")
    tape.consumed = True
    (grads,) = tape._vjp_fn(upstream)
    return grads


def num_parameters(params: dict) -> int:
    """Total number of scalar parameters."""
    return int(sum(np.size(p) for p in jax.tree_util.tree_leaves(params)))


def _check_input(spec: NetworkSpec, x):
    first = spec.layers[0]
    if isinstance(x, (tuple, list)):
        got = tuple(int(np.shape(a)[0]) for a in x)
    else:
        if np.ndim(x) != 2:
            raise ValueError(
                f"Layer {first.name}: expected input of shape [C, T], got {np.shape(x)}"
            )
        got = int(np.shape(x)[0])
    if got != spec.in_channels:
        raise ValueError(
            f"Layer {first.name}: expected {spec.in_channels} input channels, got {got}"
        )


def param_shapes(spec: NetworkSpec) -> dict:
    """Parameter shapes of a network, computed without drawing random numbers."""
    return jax.tree_util.tree_map(
        lambda a: tuple(a.shape), jax.eval_shape(lambda: build(spec))
    )


def match_params(spec: NetworkSpec, params: dict) -> dict:
    """Fit loaded parameters to a network.

    Parameter-free layers, which leave no trace in a checkpoint, get empty entries.

    Args:
        spec (NetworkSpec): Network.

        params (dict): Nested parameter arrays.

    Raises:
        ValueError: Missing, unexpected or misshapen parameters, naming the first one.

    Returns:
        dict: Parameters as JAX arrays with the structure of :func:`build`.
    """

    def fit(ref, got, path):
        if isinstance(ref, dict):
            got = {} if got is None else got
            if not isinstance(got, dict):
                raise ValueError(f"Parameter {path}: expected a group, got an array")
            extra = sorted(set(got) - set(ref))
            if extra:
                raise ValueError(f"Unexpected parameters {path}/{extra[0]}")
            return {k: fit(ref[k], got.get(k), f"{path}/{k}") for k in ref}
        if got is None or isinstance(got, dict) or tuple(np.shape(got)) != ref:
            shape = None if got is None else np.shape(got)
            raise ValueError(f"Parameter {path}: expected shape {ref}, got {shape}")
        return jnp.asarray(got)

    return fit(param_shapes(spec), params, "")
