"""Artifact output: atomic writes, CSV series and the run manifest."""
import csv
import hashlib
import io
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .snapshot import pack_snapshot


def atomic_write(path, data):
    """Write bytes or text to ``path`` through a temporary file and rename."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def csv_text(columns, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        if len(r) != len(columns):
            raise ValueError(f"row has {len(r)} fields, expected {len(columns)}")
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def export_csv(path, columns, rows):
    """CSV with a header and 17 significant digits; an empty series gives the header only."""
    return atomic_write(path, csv_text(columns, rows))


def read_csv(path):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [row for row in r]


def export_snapshots(path, grid, frames, times):
    return atomic_write(path, b"".join(pack_snapshot(grid, f, t) for f, t in zip(frames, times)))


def source_date():
    v = os.environ.get("SOURCE_DATE_EPOCH")
    return v if v else "unset"


def file_digest(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


@dataclass
class RunManifest:
    command: str
    config_hash: str
    tool_version: str = __version__
    source_date_epoch: str = field(default_factory=source_date)
    seed: int = 0
    artifacts: dict = field(default_factory=dict)     # name -> sha256
    certificates: dict = field(default_factory=dict)  # name -> PASS/FAIL
    summary: dict = field(default_factory=dict)

    def add_artifact(self, path, out_dir):
        self.artifacts[os.path.relpath(path, out_dir)] = file_digest(path)

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True, default=_json_default) + "\n"

    def write(self, out_dir):
        return atomic_write(os.path.join(out_dir, f"manifest_{self.command}.json"), self.to_json())


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def read_manifest(path):
    with open(path) as fh:
        return json.load(fh)
