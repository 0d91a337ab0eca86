"""Atomic artifact writing and metadata helpers."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

from . import __version__


class IoError(OSError):
    pass


def atomic_write_bytes(path, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise IoError(f"cannot write {path}: {exc}") from exc


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, doc: dict) -> None:
    atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=False, default=str) + "\n")


def csv_text(header, rows, meta: dict | None = None) -> str:
    """CSV body with optional leading '#' metadata lines."""
    buf = io.StringIO()
    if meta:
        for key, val in meta.items():
            buf.write(f"# {key}: {json.dumps(val, default=str)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def version_string() -> str:
    """Package version plus the git revision when available."""
    rev = None
    try:
        head = Path(__file__).resolve().parents[2] / ".git" / "HEAD"
        ref = head.read_text().strip()
        if ref.startswith("ref: "):
            ref_path = head.parent / ref[5:]
            rev = ref_path.read_text().strip()[:12] if ref_path.exists() else None
        else:
            rev = ref[:12]
    except OSError:
        pass
    return f"{__version__}+{rev}" if rev else __version__
