"""
CSV and JSON metadata output.

Floats are written in fixed 9-significant-digit scientific notation so
identical runs produce identical bytes; inf and nan sentinels are written
as "inf" and "nan".
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any

logger = logging.getLogger(__name__)


def format_value(value: Any) -> str:
    """CSV cell text for one value."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.8e}"
    if value is None:
        return ""
    return str(value)


def render_csv(fieldnames: list[str], rows: list[dict[str, Any]]) -> str:
    """Render rows under an exact header, columns in ``fieldnames`` order."""
    buffer = io.StringIO()
    writer = csv.DictWriter(
        buffer, fieldnames=fieldnames, extrasaction="ignore", lineterminator="\n"
    )
    writer.writeheader()
    for row in rows:
        writer.writerow({k: format_value(row.get(k, "")) for k in fieldnames})
    return buffer.getvalue()


def write_csv(fieldnames: list[str], rows: list[dict[str, Any]], path: Path | str | None) -> None:
    """Write CSV to ``path``, or to stdout when path is None."""
    text = render_csv(fieldnames, rows)
    if path is None:
        sys.stdout.write(text)
        sys.stdout.flush()
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as f:
        f.write(text)
    logger.info(f"Wrote {len(rows)} rows to {path}")


def metadata_path(path: Path | str) -> Path:
    """Sidecar location ``<out>.meta.json``."""
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def write_metadata(path: Path | str, metadata: dict[str, Any]) -> Path:
    """Write the JSON sidecar for the CSV at ``path``."""
    target = metadata_path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8") as f:
        json.dump(metadata, f, indent=2, sort_keys=True, default=str)
        f.write("\n")
    logger.info(f"Wrote metadata to {target}")
    return target
