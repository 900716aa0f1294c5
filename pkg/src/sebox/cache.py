"""Content-addressed walk cache: (commit hash, config digest) -> payload.

The payload is the gzip-compressed canonical sorted box dump plus a JSON
metrics sidecar. Entries are bit-reproducible (gzip mtime pinned to zero,
fixed compression level, sorted JSON keys) and writes are atomic
(temp file then rename), so a crashed walk never leaves a partial entry
visible.
"""

from __future__ import annotations

import gzip
import io
import json
import os
import tempfile
from pathlib import Path

from .metrics import MetricsRow

_SIDEBAR_SCHEMA = 1


class WalkCache:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0

    def _entry_paths(self, commit: str, digest: str) -> tuple[Path, Path]:
        base = self.root / digest
        return base / f"{commit}.metrics.json", base / f"{commit}.boxes.gz"

    def get(self, commit: str, digest: str) -> MetricsRow | None:
        metrics_path, boxes_path = self._entry_paths(commit, digest)
        if not (metrics_path.exists() and boxes_path.exists()):
            self.misses += 1
            return None
        data = json.loads(metrics_path.read_text())
        if data.get("schema") != _SIDEBAR_SCHEMA:
            self.misses += 1
            return None
        self.hits += 1
        return MetricsRow.from_json_dict(data["metrics"])

    def get_box_lines(self, commit: str, digest: str) -> list[str] | None:
        _, boxes_path = self._entry_paths(commit, digest)
        if not boxes_path.exists():
            return None
        with gzip.open(boxes_path, "rt") as fh:
            return fh.read().splitlines()

    def put(self, commit: str, digest: str, row: MetricsRow, box_lines: list[str]) -> None:
        metrics_path, boxes_path = self._entry_paths(commit, digest)
        metrics_path.parent.mkdir(parents=True, exist_ok=True)

        buf = io.BytesIO()
        # mtime=0 keeps the gzip container byte-identical across runs
        with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0, compresslevel=9) as gz:
            payload = "\n".join(box_lines)
            gz.write((payload + "\n" if payload else "").encode())
        _atomic_write_bytes(boxes_path, buf.getvalue())

        sidecar = json.dumps(
            {"schema": _SIDEBAR_SCHEMA, "commit": commit, "metrics": row.to_json_dict()},
            sort_keys=True,
        )
        _atomic_write_bytes(metrics_path, (sidecar + "\n").encode())


def _atomic_write_bytes(target: Path, data: bytes) -> None:
    fd, tmp = tempfile.mkstemp(dir=str(target.parent), prefix=f".{target.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, target)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
