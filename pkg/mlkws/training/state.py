from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import jax

from mlkws.nn.checkpoint import Checkpoint, CheckpointError, save_checkpoint
from mlkws.nn.optim import AdamState, init_adam

LAST_GOOD = "last_good.ckpt"
_SPLIT_STREAM = 0
_ORDER_STREAM = 1


def split_rows(
    rows: Sequence[dict], validation_fraction: float, seed: int
) -> Tuple[List[dict], List[dict]]:
    """Seeded split of manifest rows into training and validation parts.

    Args:
        rows (Sequence[dict]): Manifest rows.

        validation_fraction (float): Held-out share in [0, 1).

        seed (int): Seed.

    Raises:
        ValueError: No rows left for training.

    Returns:
        Tuple[List[dict], List[dict]]: Training and validation rows, in manifest order.
    """
    n = len(rows)
    n_val = int(round(validation_fraction * n))
    if validation_fraction > 0 and n > 1:
        n_val = max(n_val, 1)
    if n - n_val < 1:
        raise ValueError(f"{n} utterances leave nothing to train on")
    rng = np.random.default_rng(np.random.SeedSequence([seed, _SPLIT_STREAM]))
    held_out = set(rng.permutation(n)[:n_val].tolist())
    train = [r for i, r in enumerate(rows) if i not in held_out]
    val = [r for i, r in enumerate(rows) if i in held_out]
    return train, val


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> List[np.ndarray]:
    """Batch indices of one epoch. The order depends only on ``(seed, epoch)``, so a
    resumed run visits the same batches as an uninterrupted one."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _ORDER_STREAM, epoch]))
    order = rng.permutation(n)
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


def stack_examples(examples: Sequence, fields: Sequence[str]) -> Tuple[np.ndarray, ...]:
    """Stack named fields of a list of examples along a new batch axis.

    Raises:
        ValueError: Examples of different shapes, naming the field.
    """
    out = []
    for name in fields:
        values = [getattr(e, name) for e in examples]
        shapes = {np.shape(v) for v in values}
        if len(shapes) != 1:
            raise ValueError(
                f"Utterances differ in {name} shape {sorted(shapes)}; training needs "
                "equal-length utterances"
            )
        out.append(np.stack(values))
    return tuple(out)


def save_state(
    path: Union[str, Path],
    trainable: dict,
    state: AdamState,
    metadata: dict,
    buffers: Optional[dict] = None,
):
    """Checkpoint trainable parameters, their Adam moments (under ``opt/m`` and
    ``opt/v``) and non-trainable buffers."""
    tree = dict(trainable)
    tree["opt"] = {"m": state.m, "v": state.v}
    tree.update(buffers or {})
    tree = jax.tree_util.tree_map(np.asarray, tree)
    save_checkpoint(path, tree, dict(metadata, step=int(state.step)))


def check_resumable(ckpt: Checkpoint, kind: str, cfg_hash: str, seed: int):
    """Refuse to resume from a checkpoint of another kind, configuration or seed.

    Raises:
        CheckpointError: Incompatible checkpoint.
    """
    meta = ckpt.metadata
    if meta.get("kind") != kind:
        raise CheckpointError(
            f"Cannot resume {kind} training from a {meta.get('kind')} checkpoint"
        )
    if meta.get("config_hash") != cfg_hash:
        raise CheckpointError(
            f"Checkpoint config hash {meta.get('config_hash')} "
            f"does not match {cfg_hash}"
        )
    if meta.get("seed") != seed:
        raise CheckpointError(
            f"Checkpoint seed {meta.get('seed')} does not match {seed}"
        )
    if "opt" not in ckpt.params:
        raise CheckpointError("Checkpoint has no optimiser state")


def restore_state(
    ckpt: Checkpoint, trainable: dict, fit: Dict[str, Callable[[dict], dict]]
) -> Tuple[dict, AdamState]:
    """Restore trainable parameters and Adam moments from a checkpoint.

    Args:
        ckpt (Checkpoint): Checkpoint written by :func:`save_state`.

        trainable (dict): Freshly initialised parameters fixing the structure.

        fit (Dict[str, Callable]): Per top-level group, a function fitting loaded
            arrays to the structure (raising ``ValueError`` when they do not fit).

    Raises:
        CheckpointError: Missing groups or misshapen arrays.

    Returns:
        Tuple[dict, AdamState]: Parameters and optimiser state.
    """
    opt = ckpt.params.get("opt", {})
    trees = []
    for source in (ckpt.params, opt.get("m", {}), opt.get("v", {})):
        tree = {}
        for group in trainable:
            if group not in source:
                raise CheckpointError(f"Checkpoint has no {group} entries")
            try:
                tree[group] = fit[group](source[group])
            except ValueError as e:
                raise CheckpointError(f"{group}: {e}") from e
        trees.append(tree)
    params, m, v = trees
    return params, AdamState(int(ckpt.metadata.get("step", 0)), m, v)


def fresh_state(params: dict) -> AdamState:
    """Optimiser state of a run starting from scratch."""
    return init_adam(params)
