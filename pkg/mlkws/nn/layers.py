from typing import NamedTuple, Tuple, Union

import numpy as np
import jax
import jax.numpy as jnp

KINDS = (
    "conv1d",
    "affine",
    "prelu",
    "relu",
    "sigmoid",
    "tanh",
    "softmax",
    "gln",
    "residual",
    "concat",
    "split",
    "lws_conv",
)
INITS = ("uniform", "identity", "zero")
GLN_EPS = 1e-8
PRELU_INIT = 0.25


class Layer(NamedTuple):
    r"""One layer of a sequential network operating on [channels, time] arrays.

    Attributes:
        name (str): Unique layer name, used for parameter names and error messages.

        kind (str): One of :data:`KINDS`.

        in_channels (int): Input channels.

        out_channels (int): Output channels.

        kernel_size (int): Taps of ``conv1d`` along time, or along frequency for
            ``lws_conv``.

        dilation (int): Dilation of ``conv1d``.

        causal (bool): Left-only padding for ``conv1d``; otherwise "same" padding.

        groups (int): Channel groups of ``conv1d`` (``in_channels`` for depthwise), or
            number of frequency regions of ``lws_conv``.

        init (str): Weight initialisation in :data:`INITS`.

        body (Tuple[Layer, ...]): Layers of a ``residual`` branch.

        sections (Tuple[int, ...]): Channel counts of ``concat`` inputs and ``split``
            outputs; ``(n_freq,)`` for ``lws_conv``.
    """

    name: str
    kind: str
    in_channels: int
    out_channels: int
    kernel_size: int = 1
    dilation: int = 1
    causal: bool = False
    groups: int = 1
    init: str = "uniform"
    body: Tuple["Layer", ...] = ()
    sections: Tuple[int, ...] = ()


def conv1d(
    name, in_channels, out_channels, kernel_size, dilation=1, causal=False, groups=1
):
    """Dilated 1-D convolution along time."""
    return Layer(
        name, "conv1d", in_channels, out_channels, kernel_size, dilation, causal, groups
    )


def affine(name, in_channels, out_channels, init="uniform"):
    """Pointwise affine map of every frame."""
    return Layer(name, "affine", in_channels, out_channels, init=init)


def activation(name, kind, channels):
    """Parameter-free or PReLU activation, or channel-wise softmax."""
    return Layer(name, kind, channels, channels)


def gln(name, channels):
    """Global layer normalisation over channels and time."""
    return Layer(name, "gln", channels, channels)


def residual(name, channels, body):
    """Residual connection around ``body``."""
    return Layer(name, "residual", channels, channels, body=tuple(body))


def concat(name, sections):
    """Concatenation of a tuple of inputs along channels."""
    total = int(sum(sections))
    return Layer(name, "concat", total, total, sections=tuple(sections))


def split(name, sections):
    """Split of the channels into a tuple of outputs."""
    total = int(sum(sections))
    return Layer(name, "split", total, total, sections=tuple(sections))


def lws_conv(name, in_channels, n_freq, regions, kernels, kernel_size):
    r"""Limited-weight-sharing convolution along frequency.

    The input channels are read as ``in_channels / n_freq`` feature maps over
    ``n_freq`` bins. The bins are cut into ``regions`` equal regions, each with its own
    ``kernels`` filters of ``kernel_size`` bins; responses are max-pooled over the
    positions within the region.
    """
    return Layer(
        name,
        "lws_conv",
        in_channels,
        regions * kernels,
        kernel_size=kernel_size,
        groups=regions,
        sections=(n_freq,),
    )


def check_layer(
    layer: Layer, in_channels: Union[int, Tuple[int, ...]]
) -> Union[int, Tuple[int, ...]]:
    """Check a layer against its input channels and return its output channels.

    Args:
        layer (Layer): Layer.

        in_channels (int or Tuple[int, ...]): Channels of the incoming array, or of
            every incoming array for ``concat``.

    Raises:
        ValueError: Unknown kind or initialisation, or inconsistent shapes, naming the
            layer.

    Returns:
        int or Tuple[int, ...]: Output channels (a tuple after ``split``).
    """
    if layer.kind not in KINDS:
        raise ValueError(f"Layer {layer.name}: kind {layer.kind} not recognised")
    if layer.init not in INITS:
        raise ValueError(f"Layer {layer.name}: init {layer.init} not recognised")
    if layer.kind == "concat":
        if tuple(np.atleast_1d(in_channels)) != layer.sections:
            raise ValueError(
                f"Layer {layer.name}: expected inputs with channels {layer.sections}, "
                f"got {in_channels}"
            )
        return layer.out_channels
    if not isinstance(in_channels, (int, np.integer)):
        raise ValueError(f"Layer {layer.name}: expected one input, got {in_channels}")
    if in_channels != layer.in_channels:
        raise ValueError(
            f"Layer {layer.name}: expected {layer.in_channels} input channels, "
            f"got {in_channels}"
        )
    if layer.kind == "conv1d":
        g = layer.groups
        if g < 1 or layer.in_channels % g or layer.out_channels % g:
            raise ValueError(f"Layer {layer.name}: groups={g} must divide the channels")
        if layer.kernel_size < 1 or layer.dilation < 1:
            raise ValueError(
                f"Layer {layer.name}: kernel and dilation must be positive"
            )
    elif layer.kind == "affine":
        if layer.init == "identity" and layer.in_channels != layer.out_channels:
            raise ValueError(f"Layer {layer.name}: identity init needs square weights")
    elif layer.kind == "residual":
        c = in_channels
        for sub in layer.body:
            c = check_layer(sub, c)
        if c != in_channels:
            raise ValueError(
                f"Layer {layer.name}: residual body maps {in_channels} to {c} channels"
            )
    elif layer.kind == "split":
        return layer.sections
    elif layer.kind == "lws_conv":
        (n_freq,) = layer.sections
        if layer.in_channels % n_freq:
            raise ValueError(
                f"Layer {layer.name}: {n_freq} bins do not divide channels"
            )
        if n_freq % layer.groups:
            raise ValueError(
                f"Layer {layer.name}: {layer.groups} regions do not divide "
                f"{n_freq} bins"
            )
        if not 1 <= layer.kernel_size <= n_freq // layer.groups:
            raise ValueError(f"Layer {layer.name}: kernel larger than a region")
    elif layer.in_channels != layer.out_channels:
        raise ValueError(f"Layer {layer.name}: {layer.kind} cannot change channels")
    return layer.out_channels


def init_layer(key: jax.Array, layer: Layer) -> dict:
    r"""Initialise the parameters of a layer.

    Weights are drawn uniformly from :math:`\pm 1/\sqrt{\text{fan-in}}`, biases start
    at zero, PReLU slopes at 0.25 and normalisation gains at one.

    Args:
        key (jax.Array): PRNG key.

        layer (Layer): Layer.

    Returns:
        dict: Parameter arrays (float32) keyed by name; empty for parameter-free layers.
    """
    if layer.kind == "conv1d":
        fan_in = layer.in_channels // layer.groups * layer.kernel_size
        shape = (
            layer.out_channels,
            layer.in_channels // layer.groups,
            layer.kernel_size,
        )
        return {
            "w": _weights(key, shape, fan_in, layer.init),
            "b": _zeros(layer.out_channels),
        }
    if layer.kind == "affine":
        shape = (layer.out_channels, layer.in_channels)
        return {
            "w": _weights(key, shape, layer.in_channels, layer.init),
            "b": _zeros(layer.out_channels),
        }
    if layer.kind == "prelu":
        return {"alpha": jnp.full((1,), PRELU_INIT, dtype=jnp.float32)}
    if layer.kind == "gln":
        return {
            "gamma": jnp.ones(layer.in_channels, dtype=jnp.float32),
            "beta": _zeros(layer.in_channels),
        }
    if layer.kind == "residual":
        keys = jax.random.split(key, max(len(layer.body), 1))
        return {sub.name: init_layer(k, sub) for k, sub in zip(keys, layer.body)}
    if layer.kind == "lws_conv":
        channels = layer.in_channels // layer.sections[0]
        kernels = layer.out_channels // layer.groups
        fan_in = channels * layer.kernel_size
        shape = (layer.groups, kernels, channels, layer.kernel_size)
        return {
            "w": _weights(key, shape, fan_in, layer.init),
            "b": _zeros((layer.groups, kernels)),
        }
    return {}


def apply_layer(layer: Layer, params: dict, x):
    """Apply a layer to an array of shape [C, T] (or a tuple of them for ``concat``).

    Args:
        layer (Layer): Layer.

        params (dict): Parameters from :func:`init_layer`.

        x (jnp.ndarray): Input.

    Returns:
        jnp.ndarray or Tuple[jnp.ndarray, ...]: Output of shape [C', T].
    """
    kind = layer.kind
    if kind == "conv1d":
        total = layer.dilation * (layer.kernel_size - 1)
        left = total if layer.causal else total // 2
        y = jax.lax.conv_general_dilated(
            x[None],
            params["w"].astype(x.dtype),
            window_strides=(1,),
            padding=[(left, total - left)],
            rhs_dilation=(layer.dilation,),
            dimension_numbers=("NCH", "OIH", "NCH"),
            feature_group_count=layer.groups,
        )[0]
        return y + params["b"].astype(x.dtype)[:, None]
    if kind == "affine":
        return params["w"].astype(x.dtype) @ x + params["b"].astype(x.dtype)[:, None]
    if kind == "prelu":
        return jnp.where(x >= 0, x, params["alpha"].astype(x.dtype) * x)
    if kind == "relu":
        return jax.nn.relu(x)
    if kind == "sigmoid":
        return jax.nn.sigmoid(x)
    if kind == "tanh":
        return jnp.tanh(x)
    if kind == "softmax":
        return jax.nn.softmax(x, axis=0)
    if kind == "gln":
        mean = jnp.mean(x)
        var = jnp.mean((x - mean) ** 2)
        y = (x - mean) / jnp.sqrt(var + GLN_EPS)
        gamma = params["gamma"].astype(x.dtype)[:, None]
        return gamma * y + params["beta"].astype(x.dtype)[:, None]
    if kind == "residual":
        y = x
        for sub in layer.body:
            y = apply_layer(sub, params[sub.name], y)
        return x + y
    if kind == "concat":
        return jnp.concatenate(x, axis=0)
    if kind == "split":
        bounds = np.cumsum(layer.sections)[:-1]
        return tuple(jnp.split(x, bounds, axis=0))
    if kind == "lws_conv":
        return _lws(layer, params, x)
    raise ValueError(f"Layer {layer.name}: kind {kind} not recognised")


def _lws(layer: Layer, params: dict, x):
    n_freq = layer.sections[0]
    R, k = layer.groups, layer.kernel_size
    width = n_freq // R
    T = x.shape[-1]
    maps = x.reshape(-1, R, width, T)
    pos = np.arange(width - k + 1)[:, None] + np.arange(k)[None, :]
    patches = maps[:, :, pos, :]
    y = jnp.einsum("crpkt,rnck->rnpt", patches, params["w"].astype(x.dtype))
    y = jnp.max(y, axis=2) + params["b"].astype(x.dtype)[:, :, None]
    return y.reshape(layer.out_channels, T)


def _weights(key, shape, fan_in, init):
    if init == "zero":
        return jnp.zeros(shape, dtype=jnp.float32)
    if init == "identity":
        return jnp.eye(shape[0], shape[1], dtype=jnp.float32)
    bound = 1.0 / np.sqrt(fan_in)
    return jax.random.uniform(key, shape, jnp.float32, -bound, bound)


def _zeros(shape):
    return jnp.zeros(shape, dtype=jnp.float32)
