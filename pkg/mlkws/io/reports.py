import json
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, List, NamedTuple, Sequence, Union

import pandas as pd

if TYPE_CHECKING:
    from mlkws.training.evaluation import EnhancementReport, SweepPoint, WakeupRow

METRIC_COLUMNS = ("system", "bucket", "metric", "value", "n")
ENHANCEMENT_COLUMNS = ("bucket", "system", "mean_si_snr_db", "n")
UTTERANCE_COLUMNS = ("id", "bucket", "system", "si_snr_db", "off_target")
WAKEUP_COLUMNS = ("system", "bucket", "accuracy", "fa_count", "off_target_pct", "n")
SWEEP_COLUMNS = ("system", "threshold", "fa_count", "accuracy")


class MetricRow(NamedTuple):
    system: str
    bucket: str
    metric: str
    value: float
    n: int


class MetricsTable:
    """Append-only table of ``(system, bucket, metric, value, n)`` rows with a stable
    column order, written as CSV next to a JSON sidecar holding the config hash."""

    def __init__(self, cfg_hash: str):
        self.cfg_hash = cfg_hash
        self._rows: List[MetricRow] = []

    def append(self, system: str, bucket: str, metric: str, value: float, n: int):
        self._rows.append(MetricRow(system, bucket, metric, float(value), int(n)))

    def extend(self, rows: Iterable[MetricRow]):
        for row in rows:
            self.append(*row)

    @property
    def rows(self) -> tuple:
        return tuple(self._rows)

    def __len__(self) -> int:
        return len(self._rows)

    def to_frame(self) -> pd.DataFrame:
        return _frame(self._rows, METRIC_COLUMNS)

    def format(self) -> str:
        """Human-readable rendering, one metric per column."""
        if not self._rows:
            return "(no metrics)"
        wide = self.to_frame().pivot_table(
            index=["system", "bucket"], columns="metric", values="value", sort=False
        )
        return wide.to_string(float_format=lambda v: f"{v:.3f}")

    def write(self, path: Union[str, Path]) -> Path:
        """Write ``path`` (CSV) and ``path`` with suffix ``.json`` (metadata)."""
        path = Path(path)
        write_csv(self.to_frame(), path)
        meta = {"config_hash": self.cfg_hash, "columns": list(METRIC_COLUMNS)}
        with open(path.with_suffix(".json"), "wt") as f:
            f.write(json.dumps(meta, sort_keys=True, indent=2) + "\n")
        return path


def write_csv(frame: pd.DataFrame, path: Union[str, Path]):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False)


def enhancement_metrics(
    report: "EnhancementReport", cfg_hash: str
) -> MetricsTable:
    table = MetricsTable(cfg_hash)
    for m in report.means:
        table.append(m.system, m.bucket, "si_snr_db", m.mean_si_snr_db, m.n)
    return table


def wakeup_metrics(rows: Sequence["WakeupRow"], cfg_hash: str) -> MetricsTable:
    table = MetricsTable(cfg_hash)
    for r in rows:
        table.append(r.system, r.bucket, "accuracy", r.accuracy, r.n)
        table.append(r.system, r.bucket, "fa_count", r.fa_count, r.n)
        table.append(r.system, r.bucket, "off_target_pct", r.off_target_pct, r.n)
    return table


def write_enhancement_report(
    report: "EnhancementReport", out_dir: Union[str, Path], cfg_hash: str
) -> MetricsTable:
    """Write the SI-SNR evaluation.

    Files under ``out_dir``: ``enhancement.csv`` (bucket means),
    ``enhancement_utterances.csv`` (per-utterance best-output SI-SNR and off-target
    flag) and ``enhancement_metrics.csv`` / ``.json`` (metrics table).

    Args:
        report (EnhancementReport): Evaluation result.

        out_dir (str): Output directory.

        cfg_hash (str): Hash of the producing configuration.

    Returns:
        MetricsTable: Metrics written.
    """
    out_dir = Path(out_dir)
    write_csv(_frame(report.means, ENHANCEMENT_COLUMNS), out_dir / "enhancement.csv")
    write_csv(
        _frame(report.utterances, UTTERANCE_COLUMNS),
        out_dir / "enhancement_utterances.csv",
    )
    table = enhancement_metrics(report, cfg_hash)
    table.write(out_dir / "enhancement_metrics.csv")
    return table


def write_wakeup_report(
    rows: Sequence["WakeupRow"],
    sweep: Sequence["SweepPoint"],
    out_dir: Union[str, Path],
    cfg_hash: str,
) -> MetricsTable:
    """Write the wake-up evaluation: ``wakeup.csv`` (accuracy at the false-alarm
    budget per system and bucket), ``sweep.csv`` (threshold sweep for plotting) and
    ``wakeup_metrics.csv`` / ``.json``."""
    out_dir = Path(out_dir)
    write_csv(_frame(rows, WAKEUP_COLUMNS), out_dir / "wakeup.csv")
    write_csv(_frame(sweep, SWEEP_COLUMNS), out_dir / "sweep.csv")
    table = wakeup_metrics(rows, cfg_hash)
    table.write(out_dir / "wakeup_metrics.csv")
    return table


def _frame(rows: Sequence[NamedTuple], columns: Sequence[str]) -> pd.DataFrame:
    records = [{c: getattr(r, c) for c in columns} for r in rows]
    return pd.DataFrame.from_records(records, columns=list(columns))
