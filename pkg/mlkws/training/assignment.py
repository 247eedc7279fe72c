from typing import NamedTuple, Sequence, Tuple

import numpy as np

from mlkws.spatial.geometry import LookDirectionSet, circular_angle_distance


class AssignmentMap(NamedTuple):
    """Source assigned to every look direction.

    Attributes:
        sources (Tuple[int, ...]): Zero-based source index per look.

        distances (Tuple[float, ...]): Circular distance in degrees between each look
            and its source.
    """

    sources: Tuple[int, ...]
    distances: Tuple[float, ...]


def assign_targets(looks: LookDirectionSet, doas: Sequence[float]) -> AssignmentMap:
    r"""Assign every look direction the circularly nearest source,
    :math:`\tilde k = \arg\min_j d(\Theta_k, \theta_j)`, ties going to the lowest source
    index.

    Args:
        looks (LookDirectionSet): Look directions.

        doas (Sequence[float]): Source azimuths in degrees, target first.

    Raises:
        ValueError: Empty DOA list.

    Returns:
        AssignmentMap: Assigned sources and distances.
    """
    doas = np.asarray(doas, dtype=np.float64)
    if doas.ndim != 1 or doas.size == 0:
        raise ValueError("Assignment needs at least one source DOA")
    dist = circular_angle_distance(np.asarray(looks.azimuths)[:, None], doas[None, :])
    idx = np.argmin(dist, axis=1)
    return AssignmentMap(
        tuple(int(i) for i in idx), tuple(float(dist[k, i]) for k, i in enumerate(idx))
    )


def is_off_target(assignment: AssignmentMap, source: int = 0) -> bool:
    """Whether a source (the target by default) is absent from every look output."""
    return source not in assignment.sources


def off_target_probability(
    looks: LookDirectionSet,
    num_sources: int = 3,
    grid_deg: float = 1.0,
    source: int = 0,
) -> float:
    r"""Probability that a source is nearest to no look direction when all source
    azimuths are independent and uniform.

    Every configuration of the ``num_sources`` azimuths on a grid of ``grid_deg`` steps
    is enumerated (the watched source in an outer loop, the other sources vectorised).
    The watched source sits at cell centres and the others at cell edges, so for
    looks on the grid no two sources are ever equally close to a look.

    Args:
        looks (LookDirectionSet): Look directions.

        num_sources (int, optional): Number of sources, 1 to 3. Defaults to 3.

        grid_deg (float, optional): Grid step in degrees; must divide 360.
            Defaults to 1.

        source (int, optional): Watched source index. Defaults to 0.

    Raises:
        ValueError: Unsupported source count, watched index or grid.

    Returns:
        float: Off-target probability.
    """
    if not 1 <= num_sources <= 3:
        raise ValueError(f"num_sources={num_sources} must lie in [1, 3]")
    if not 0 <= source < num_sources:
        raise ValueError(f"Watched source {source} outside {num_sources} sources")
    n = 360.0 / grid_deg
    if abs(n - round(n)) > 1e-9:
        raise ValueError(f"Grid step {grid_deg} must divide 360")
    grid = np.arange(int(round(n))) * grid_deg
    if num_sources == 1:
        return 0.0
    others = np.stack(np.meshgrid(*([grid] * (num_sources - 1)), indexing="ij"), -1)
    others = others.reshape(-1, num_sources - 1)
    count = 0
    for theta in grid + grid_deg / 2:
        doas = np.insert(others, source, theta, axis=1)
        count += int(np.sum(_off_target(looks, doas, source)))
    return count / (len(grid) * len(others))


def off_target_rate_monte_carlo(
    looks: LookDirectionSet,
    rng: np.random.Generator,
    num_sources: int = 3,
    draws: int = 100000,
    source: int = 0,
) -> float:
    """Monte-Carlo estimate of :func:`off_target_probability` with continuous uniform
    azimuths.

    Args:
        looks (LookDirectionSet): Look directions.

        rng (Generator): Random number generator.

        num_sources (int, optional): Number of sources. Defaults to 3.

        draws (int, optional): Sampled configurations. Defaults to 100000.

        source (int, optional): Watched source index. Defaults to 0.

    Returns:
        float: Off-target rate.
    """
    if draws < 1:
        raise ValueError(f"draws={draws} must be positive")
    doas = rng.uniform(0, 360, size=(draws, num_sources))
    return float(np.mean(_off_target(looks, doas, source)))


def _off_target(looks: LookDirectionSet, doas: np.ndarray, source: int) -> np.ndarray:
    # doas: [B, N] -> [B] booleans
    azimuths = np.asarray(looks.azimuths)[None, :, None]
    dist = circular_angle_distance(azimuths, doas[:, None, :])
    nearest = np.argmin(dist, axis=-1)
    return ~np.any(nearest == source, axis=-1)
