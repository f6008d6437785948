"""CSV writing helpers: locale-independent, atomic, full double precision."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

#: 17 significant digits round-trip IEEE doubles exactly.
FLOAT_FORMAT = "%.17g"


def atomic_write_csv(frame, path, header_comments=()):
    """Write a DataFrame to CSV via a temp file + rename in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            for line in header_comments:
                handle.write(f"# {line}\n")
            frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
