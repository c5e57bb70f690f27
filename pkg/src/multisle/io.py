"""Output emitters and the matching parsers.

Every file carries the schema tag and the effective configuration. CSV files
put both in leading ``#`` lines; JSON documents hold them as top-level keys.
JSON-lines files start with one header object.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence, TextIO

import numpy as np

SCHEMA = "multisle/1"
TRACE_COLUMNS = ("sample_id", "curve_id", "point_index", "re", "im")


class SchemaError(ValueError):
    pass


def _clean(obj: Any) -> Any:
    """Make numpy scalars, tuples and non-finite floats JSON friendly."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def json_document(kind: str, config: dict, result: Any) -> dict:
    return {"schema": SCHEMA, "kind": kind, "config": _clean(config), "result": _clean(result)}


def write_json(stream: TextIO, kind: str, config: dict, result: Any) -> None:
    json.dump(json_document(kind, config, result), stream, indent=2)
    stream.write("\n")


def write_csv(stream: TextIO, kind: str, config: dict, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    stream.write(f"# schema: {SCHEMA}\n# kind: {kind}\n# config: {json.dumps(_clean(config))}\n")
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_jsonl(stream: TextIO, kind: str, config: dict, records: Iterable[dict]) -> None:
    stream.write(json.dumps({"schema": SCHEMA, "kind": kind, "config": _clean(config)}) + "\n")
    for rec in records:
        stream.write(json.dumps(_clean(rec)) + "\n")


def trace_rows(sample_id: int, traces: dict[int, np.ndarray]):
    for curve, pts in sorted(traces.items()):
        for k, z in enumerate(pts):
            yield sample_id, curve + 1, k, float(z.real), float(z.imag)


def read_output(source: str | Path | TextIO) -> dict:
    """Parse any emitted file back into {"schema", "kind", "config", ...}.

    CSV gives "header" and "rows" (numeric cells as floats); JSON gives
    "result"; JSON lines give "records".
    """
    text = source.read() if hasattr(source, "read") else Path(source).read_text()
    stripped = text.lstrip()
    if stripped.startswith("#"):
        return _read_csv(text)
    first, _, rest = stripped.partition("\n")
    try:
        doc = json.loads(stripped)
    except json.JSONDecodeError:
        doc = None
    if isinstance(doc, dict) and "result" in doc:
        _check_schema(doc)
        return doc
    head = json.loads(first)
    _check_schema(head)
    head["records"] = [json.loads(line) for line in rest.splitlines() if line.strip()]
    return head


def _check_schema(doc: dict) -> None:
    if doc.get("schema") != SCHEMA:
        raise SchemaError(f"unsupported schema {doc.get('schema')!r}")
    for key in ("kind", "config"):
        if key not in doc:
            raise SchemaError(f"missing {key!r}")


def _read_csv(text: str) -> dict:
    meta: dict[str, Any] = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(":")
            meta[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    doc = {"schema": meta.get("schema"), "kind": meta.get("kind"),
           "config": json.loads(meta["config"]) if "config" in meta else None}
    _check_schema(doc)
    reader = csv.reader(io.StringIO("\n".join(body)))
    header = next(reader)
    rows = [[_cell(v) for v in row] for row in reader]
    if any(len(r) != len(header) for r in rows):
        raise SchemaError("ragged CSV rows")
    doc["header"] = header
    doc["rows"] = rows
    return doc


def _cell(v: str):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v
