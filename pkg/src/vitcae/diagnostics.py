"""Per-head diagnostics records and their CSV / JSON export."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ContractError, TrainingError

CSV_HEADER = ("epoch", "layer", "head", "drift", "kappa", "tau", "frozen")


@dataclass
class DiagnosticsRecord:
    epoch: int
    layer: int
    head: int
    drift: float
    kappa: int
    tau: float
    frozen: bool
    losses: dict[str, float] = field(default_factory=dict)
    trainable_params: int = 0

    def row(self) -> list[str]:
        return [str(self.epoch), str(self.layer), str(self.head), repr(float(self.drift)),
                str(int(self.kappa)), repr(float(self.tau)), "true" if self.frozen else "false"]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> DiagnosticsRecord:
        return cls(**d)


def records_to_csv(records: list[DiagnosticsRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow(r.row())
    return buf.getvalue()


def read_csv(path) -> list[DiagnosticsRecord]:
    """Reload the record stream (CSV columns only)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ContractError(f"unexpected diagnostics header {header}")
        return [
            DiagnosticsRecord(int(e), int(l), int(h), float(d), int(k), float(t), f == "true")
            for e, l, h, d, k, t, f in reader
        ]


def summarize(records: list[DiagnosticsRecord], total_params: int | None = None,
              frozen_params: int | None = None) -> dict:
    heads: dict[tuple[int, int], dict] = {}
    for r in records:
        entry = heads.setdefault((r.layer, r.head), {"layer": r.layer, "head": r.head, "freeze_epoch": None})
        if r.frozen and entry["freeze_epoch"] is None:
            entry["freeze_epoch"] = r.epoch
        entry["final_kappa"] = r.kappa
        entry["final_drift"] = r.drift
        entry["final_tau"] = r.tau
    last = max(r.epoch for r in records)
    summary = {
        "epochs": last,
        "heads": [heads[k] for k in sorted(heads)],
        "frozen_heads": sum(1 for v in heads.values() if v["freeze_epoch"] is not None),
    }
    if total_params:
        frozen = frozen_params if frozen_params is not None else 0
        summary["total_params"] = total_params
        summary["frozen_params"] = frozen
        summary["frozen_param_fraction"] = frozen / total_params
    final = [r for r in records if r.epoch == last]
    if final and final[0].losses:
        summary["final_losses"] = final[0].losses
        summary["final_trainable_params"] = final[0].trainable_params
    return summary


def export_diagnostics(records: list[DiagnosticsRecord], out_dir, total_params: int | None = None,
                       frozen_params: int | None = None, stem: str = "diagnostics") -> tuple[Path, Path]:
    """Write ``<stem>.csv`` and ``<stem>.json``; both are byte-stable for fixed input."""
    if not records:
        raise ContractError("export_diagnostics needs at least one record")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{stem}.csv"
        json_path = out / f"{stem}.json"
        csv_path.write_text(records_to_csv(records))
        summary = summarize(records, total_params, frozen_params)
        json_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise TrainingError(f"cannot write diagnostics to {out}: {exc}") from exc
    return csv_path, json_path
