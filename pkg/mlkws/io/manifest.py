import json
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, List, Union

import numpy as np

from mlkws.io.wav import read_wav

if TYPE_CHECKING:
    from mlkws.simulation.mixing import MixtureRecord

MANIFEST_NAME = "manifest.jsonl"
REQUIRED_FIELDS = (
    "id",
    "path",
    "label",
    "doas_deg",
    "sirs_db",
    "snr_db",
    "t60_s",
    "room_dims_m",
    "num_sources",
    "references_path",
    "config_hash",
)


NO_INTERFERENCE = "w/o Intf."


class ConfigHashMismatch(ValueError):
    """Artifacts produced under different configurations were paired."""


def record_to_row(
    record: "MixtureRecord", path: str, references_path: str, cfg_hash: str
) -> dict:
    """Manifest row of a simulated utterance; audio paths are relative to the
    manifest."""
    return {
        "id": record.id,
        "path": path,
        "references_path": references_path,
        "label": record.label,
        "doas_deg": [float(d) for d in record.doas_deg],
        "sirs_db": [float(s) for s in record.sirs_db],
        "snr_db": None if record.snr_db is None else float(record.snr_db),
        "t60_s": float(record.t60_s),
        "room_dims_m": [float(d) for d in record.room_dims_m],
        "num_sources": record.num_sources,
        "config_hash": cfg_hash,
    }


def write_manifest(rows: Iterable[dict], path: Union[str, Path]):
    """Write one canonical JSON object per line (sorted keys)."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wt", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def read_manifest(path: Union[str, Path]) -> List[dict]:
    """Read a manifest; a directory resolves to its ``manifest.jsonl``.

    Raises:
        ValueError: Missing file, malformed line, missing fields or empty manifest.
    """
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise ValueError(f"Manifest {path} does not exist")
    rows = []
    with open(path, "rt", encoding="utf-8") as f:
        for n, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{n}: malformed manifest line ({e})") from e
            missing = [k for k in REQUIRED_FIELDS if k not in row]
            if missing:
                raise ValueError(f"{path}:{n}: missing fields {missing}")
            row["_root"] = str(path.parent)
            rows.append(row)
    if not rows:
        raise ValueError(f"Manifest {path} is empty")
    return rows


def check_config_hash(
    rows: List[dict], expected: str, force: bool = False, what: str = "manifest"
):
    """Refuse artifacts produced under another configuration.

    Raises:
        ConfigHashMismatch: Some row carries a hash other than ``expected`` and
            ``force`` is not set.
    """
    found = sorted({row["config_hash"] for row in rows})
    if found != [expected] and not force:
        raise ConfigHashMismatch(
            f"{what} config hash {', '.join(found)} does not match {expected} "
            "(use --force to override)"
        )


def load_audio(row: dict):
    """Mixture of shape [C, L] and references of shape [N, L] of a manifest row."""
    root = Path(row.get("_root", "."))
    mixture = read_wav(root / row["path"]).samples.astype(np.float64)
    references = read_wav(root / row["references_path"]).samples.astype(np.float64)
    return mixture, references


def condition_bucket(row: dict, split_db: float = 6.0) -> str:
    """Condition bucket of an utterance: ``"w/o Intf."`` for a single source, else
    ``"<6dB"`` or ``">=6dB"`` by the smallest SIR (the boundary belongs to the upper
    bucket)."""
    if row["num_sources"] == 1 or not row["sirs_db"]:
        return NO_INTERFERENCE
    if min(row["sirs_db"]) < split_db:
        return low_bucket(split_db)
    return high_bucket(split_db)


def low_bucket(split_db: float = 6.0) -> str:
    return f"<{split_db:g}dB"


def high_bucket(split_db: float = 6.0) -> str:
    return f">={split_db:g}dB"


def bucket_names(split_db: float = 6.0):
    return (low_bucket(split_db), high_bucket(split_db), NO_INTERFERENCE)
