"""Deterministic JSON and CSV serialisation of command reports.

Every emitted document carries the resolved config and a sha256 of its own
content, computed with the checksum field absent.  Key order is sorted and
floats use ``repr`` so reruns with an equal config give identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

# the table each command exposes as CSV
PRIMARY_TABLE = {
    "frd-report": "modes",
    "flow": "trajectory",
    "mc": "observables",
    "validate": "criteria",
    "inequalities": "checks",
}

CSV_COLUMNS = {
    "modes": ["p1", "p2", "j", "gamma_hat"],
    "observables": ["name", "mean", "stderr", "tau_int", "n_samples", "seed"],
}


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=True, allow_nan=False) + "\n"


def checksum(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def to_json(report: dict) -> str:
    body = {k: v for k, v in report.items() if k != "checksum"}
    return canonical_json(dict(body, checksum=checksum(canonical_json(body))))


def _cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True)
    return "" if v is None else str(v)


def table_csv(rows: list[dict], columns: list[str] | None = None) -> str:
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


def to_csv(report: dict) -> str:
    """Primary table as CSV behind ``#`` lines holding the config and checksum."""
    name = PRIMARY_TABLE[report["command"]]
    body = table_csv(report["tables"].get(name, []), CSV_COLUMNS.get(name))
    head = (f"# command: {report['command']}\n"
            f"# status: {report['status']}\n"
            f"# config: {json.dumps(report['config'], sort_keys=True)}\n")
    return head + f"# sha256: {checksum(head + body)}\n" + body


def verify(text: str) -> bool:
    """Check the embedded checksum of an emitted JSON or CSV document."""
    if text.startswith("#"):
        lines = text.splitlines(keepends=True)
        marks = [i for i, ln in enumerate(lines) if ln.startswith("# sha256: ")]
        if not marks:
            return False
        i = marks[0]
        digest = lines[i].split(": ", 1)[1].strip()
        return checksum("".join(lines[:i] + lines[i + 1:])) == digest
    doc = json.loads(text)
    digest = doc.pop("checksum", None)
    return digest == checksum(canonical_json(doc))


def render(report: dict, fmt: str) -> str:
    if fmt == "json":
        return to_json(report)
    if fmt == "csv":
        return to_csv(report)
    raise ValueError(f"unknown format {fmt!r}")


def write(report: dict, fmt: str, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{report['command']}.{fmt}"
    path.write_text(render(report, fmt))
    return path
