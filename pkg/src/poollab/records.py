"""JSONL result records for runs and sweeps.

Two line kinds share a file: one "snapshot" line per evaluation point and
one "summary" line per run. Every line carries the cell identity, so files
can be filtered, merged, and resumed. Serialization round-trips exactly
(floats go through repr).
"""

from __future__ import annotations

import json

from .trainer import MetricRecord, Snapshot

SUMMARY = "summary"
SNAPSHOT = "snapshot"


def record_to_lines(record: MetricRecord, cell: dict | None = None) -> list[str]:
    """Serialize a MetricRecord as snapshot lines plus one summary line."""
    ident = dict(record.run)
    if cell:
        ident.update(cell)
    lines = []
    for s in record.snapshots:
        lines.append(json.dumps({
            "kind": SNAPSHOT, "cell": ident, "step": s.step,
            "train_acc": s.train_acc, "val_acc": s.val_acc,
            "case_train": list(s.case_train) if s.case_train else None,
            "case_val": list(s.case_val) if s.case_val else None,
        }, sort_keys=True))
    summary = {"kind": SUMMARY, "cell": ident, "status": record.status}
    summary.update(record.summary)
    lines.append(json.dumps(summary, sort_keys=True))
    return lines


def parse_line(line: str) -> dict:
    obj = json.loads(line)
    if obj.get("kind") not in (SUMMARY, SNAPSHOT):
        raise ValueError(f"unknown record kind {obj.get('kind')!r}")
    return obj


def record_from_lines(lines: list[str]) -> MetricRecord:
    """Rebuild a MetricRecord from its serialized lines (inverse of
    record_to_lines for records without extra cell fields)."""
    snapshots = []
    summary_obj = None
    ident = None
    for line in lines:
        obj = parse_line(line)
        ident = obj["cell"]
        if obj["kind"] == SNAPSHOT:
            snapshots.append(Snapshot(
                step=obj["step"], train_acc=obj["train_acc"], val_acc=obj["val_acc"],
                case_train=tuple(obj["case_train"]) if obj["case_train"] else None,
                case_val=tuple(obj["case_val"]) if obj["case_val"] else None))
        else:
            summary_obj = obj
    if summary_obj is None:
        raise ValueError("no summary line present")
    summary = {k: v for k, v in summary_obj.items()
               if k not in ("kind", "cell", "status")}
    return MetricRecord(run=ident, snapshots=snapshots, summary=summary,
                        status=summary_obj["status"])


def read_records(path: str) -> list[dict]:
    """All parsed JSONL objects in the file."""
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(parse_line(line))
    return out


def read_summaries(path: str) -> list[dict]:
    return [r for r in read_records(path) if r["kind"] == SUMMARY]
