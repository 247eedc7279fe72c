from typing import Callable, List, NamedTuple

import numpy as np
import jax
import jax.numpy as jnp
from jax.experimental import enable_x64

from mlkws.nn import layers
from mlkws.nn.network import NetworkSpec, apply, build

STEP = 1e-4
TOLERANCE = 1e-4
SCALE_FLOOR = 1e-6
# Disagreement between steps h and h/2 (relative to the gradient scale) above which a
# coordinate is taken to straddle a kink of relu, prelu or max.
KINK_TOLERANCE = 1e-5


class GradCheckResult(NamedTuple):
    """Outcome of one gradient check.

    Attributes:
        name (str): Checked operation.

        max_rel_error (float): Largest absolute difference between analytic and
            numerical partial derivatives over the coordinates, relative to the largest
            analytic derivative.

        coords (int): Coordinates compared.

        skipped (int): Coordinates discarded because the finite difference straddled a
            non-differentiable point.
    """

    name: str
    max_rel_error: float
    coords: int
    skipped: int

    @property
    def passed(self) -> bool:
        return self.coords > 0 and self.max_rel_error < TOLERANCE


def check_gradient(
    name: str,
    fn: Callable,
    args,
    rng: np.random.Generator,
    coords: int = 6,
    h: float = STEP,
) -> GradCheckResult:
    r"""Compare reverse-mode gradients with central finite differences.

    Everything is evaluated in 64-bit precision. For up to ``coords`` random
    coordinates of every leaf of ``args`` the central difference
    :math:`(f(p + h e_i) - f(p - h e_i)) / 2h` is compared with the analytic partial
    derivative. A coordinate whose differences with steps :math:`h` and :math:`h/2`
    disagree lies next to a kink and is skipped.

    Args:
        name (str): Name reported in the result.

        fn (Callable): Scalar function of ``args``.

        args: Pytree of real arrays.

        rng (np.random.Generator): Generator choosing the compared coordinates.

        coords (int, optional): Coordinates per leaf. Defaults to 6.

        h (float, optional): Finite-difference step. Defaults to 1e-4.

    Returns:
        GradCheckResult: Relative error and coordinate counts.
    """
    with enable_x64():
        args = jax.tree_util.tree_map(lambda a: np.array(a, dtype=np.float64), args)
        analytic = jax.grad(fn)(args)
        leaves, treedef = jax.tree_util.tree_flatten(args)
        grads = [np.asarray(g) for g in jax.tree_util.tree_leaves(analytic)]
        scale = max([SCALE_FLOOR] + [float(np.max(np.abs(g))) for g in grads if g.size])

        def shifted(i, idx, step):
            moved = [leaf.copy() for leaf in leaves]
            moved[i][idx] += step
            return float(fn(jax.tree_util.tree_unflatten(treedef, moved)))

        def central(i, idx, step):
            return (shifted(i, idx, step) - shifted(i, idx, -step)) / (2 * step)

        worst, used, skipped = 0.0, 0, 0
        for i, leaf in enumerate(leaves):
            if leaf.size == 0:
                continue
            flat = rng.choice(leaf.size, size=min(coords, leaf.size), replace=False)
            for k in flat:
                idx = np.unravel_index(k, leaf.shape)
                numerical = central(i, idx, h)
                if abs(numerical - central(i, idx, h / 2)) > KINK_TOLERANCE * scale:
                    skipped += 1
                    continue
                worst = max(worst, abs(numerical - float(grads[i][idx])))
                used += 1
    return GradCheckResult(name, worst / scale, used, skipped)


def away_from_zero(rng: np.random.Generator, shape, margin: float = 0.2) -> np.ndarray:
    """Random values with magnitudes in ``[margin, margin + 1)``."""
    return rng.choice([-1.0, 1.0], size=shape) * (margin + rng.random(shape))


def layer_checks(seed: int = 0) -> List[GradCheckResult]:
    """Gradient checks of every layer kind in isolation, with respect to both the
    parameters and the input.

    Each layer sits in a one- or two-layer network whose output is projected onto a
    fixed random direction to give a scalar.
    """
    rng = np.random.default_rng(seed)
    T = 5
    cases = {
        "conv1d": [layers.conv1d("c", 3, 4, 3, dilation=2)],
        "conv1d_causal_depthwise": [layers.conv1d("c", 4, 4, 3, 2, True, 4)],
        "affine": [layers.affine("a", 4, 3)],
        "prelu": [layers.activation("p", "prelu", 4)],
        "relu": [layers.activation("r", "relu", 4)],
        "sigmoid": [layers.activation("s", "sigmoid", 4)],
        "tanh": [layers.activation("t", "tanh", 4)],
        "softmax": [layers.activation("s", "softmax", 4)],
        "gln": [layers.gln("n", 4)],
        "residual": [
            layers.residual(
                "res",
                4,
                [
                    layers.affine("a", 4, 6),
                    layers.activation("t", "tanh", 6),
                    layers.affine("b", 6, 4),
                ],
            )
        ],
        "split": [layers.affine("a", 4, 5), layers.split("s", (2, 3))],
        "lws_conv": [layers.lws_conv("l", 2 * 8, 8, 2, 3, 2)],
    }
    results = []
    for name, stack in cases.items():
        spec = NetworkSpec(tuple(stack), stack[0].in_channels, seed)
        params = _perturbed(build(spec), rng)
        x = away_from_zero(rng, (spec.in_channels, T))
        results.append(_network_check(name, spec, params, x, rng))

    stack = (layers.concat("c", (2, 3)), layers.affine("a", 5, 2))
    spec = NetworkSpec(stack, (2, 3), seed)
    x = tuple(away_from_zero(rng, (c, T)) for c in (2, 3))
    results.append(_network_check("concat", spec, build(spec), x, rng))
    return results


def _perturbed(params: dict, rng: np.random.Generator) -> dict:
    # Moves zero-initialised biases and unit gains off their initial values.
    return jax.tree_util.tree_map(
        lambda p: np.asarray(p, np.float64) + 0.1 * rng.standard_normal(np.shape(p)),
        params,
    )


def _network_check(name, spec, params, x, rng) -> GradCheckResult:
    with enable_x64():
        out = apply(spec, params, jax.tree_util.tree_map(jnp.asarray, x))
    outs = out if isinstance(out, tuple) else (out,)
    directions = [rng.standard_normal(np.shape(o)) for o in outs]

    def loss(args):
        p, inp = args
        y = apply(spec, p, inp)
        y = y if isinstance(y, tuple) else (y,)
        return sum(jnp.sum(a * d) for a, d in zip(y, directions))

    return check_gradient(name, loss, (params, x), rng)
