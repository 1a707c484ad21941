"""On-disk dataset archive.

Layout (all paths relative to the archive root)::

    manifest.json            schema id, config hash, seed, per-subject status,
                             sha256 of every array file
    config.json              the canonical configuration that produced it
    units.jsonl              append-only ledger of finished (subject, frequency) units
    dataset/                 training set (generated datasets only)
    model/                   shape model: model.json, mean.f8, basis.f8, sigmas.f8
    draws/weights.f8         N x (n - 1) drawn PC weights
    draws/draws.json         kept mask, rejection reasons, gate report
    grid.csv                 microphone directions and Voronoi weights
    subjects/<id>/shape.f8   3 n_v coordinates (x..x y..y z..z, mm)
    subjects/<id>/mesh_band<b>.ply, mesh_band<b>.json
    subjects/<id>/units/f<iii>.f8   2 x n_d: real plane then imaginary plane
    subjects/<id>/prtf_raw_{re,im}.f8   n_f x n_d
    subjects/<id>/prtf_eq_{re,im}.f8    (n_f + 1) x n_d, row 0 is the padded 0 Hz bin
    subjects/<id>/ctf_{re,im}.f8        n_f + 1
    stats/                   PRTF model, CPV table and normality reports

Arrays are raw little-endian float64 in row-major order with no header; the
manifest records their shapes.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

import numpy as np

ARCHIVE_SCHEMA = "pinnagen.archive/1"


def sha256_bytes(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def sha256_file(path: str | Path) -> str:
    return sha256_bytes(Path(path).read_bytes())


def atomic_write_bytes(path: str | Path, raw: bytes) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(raw)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return sha256_bytes(raw)


def atomic_write_text(path: str | Path, text: str) -> str:
    return atomic_write_bytes(path, text.encode())


def write_array(path: str | Path, array: np.ndarray) -> str:
    return atomic_write_bytes(path, np.ascontiguousarray(array, dtype="<f8").tobytes())


def read_array(path: str | Path, shape) -> np.ndarray:
    arr = np.fromfile(path, dtype="<f8")
    if arr.size != int(np.prod(shape)):
        raise ValueError(f"{path}: expected shape {tuple(shape)}, found {arr.size} values")
    return arr.reshape(shape).astype(float)


def write_complex(prefix: str | Path, values: np.ndarray) -> dict[str, str]:
    """Write real and imaginary planes as ``<prefix>_re.f8`` / ``<prefix>_im.f8``."""
    prefix = Path(prefix)
    values = np.asarray(values, dtype=complex)
    return {
        prefix.name + "_re.f8": write_array(prefix.with_name(prefix.name + "_re.f8"), values.real),
        prefix.name + "_im.f8": write_array(prefix.with_name(prefix.name + "_im.f8"), values.imag),
    }


def read_complex(prefix: str | Path, shape) -> np.ndarray:
    prefix = Path(prefix)
    re = read_array(prefix.with_name(prefix.name + "_re.f8"), shape)
    im = read_array(prefix.with_name(prefix.name + "_im.f8"), shape)
    return re + 1j * im


def write_json(path: str | Path, obj) -> str:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path):
    return json.loads(Path(path).read_text())


class Manifest:
    def __init__(self, root: str | Path, data: dict | None = None):
        self.root = Path(root)
        self.data = data or {"schema": ARCHIVE_SCHEMA, "subjects": {}, "arrays": {}}

    @classmethod
    def load(cls, root: str | Path) -> "Manifest":
        path = Path(root) / "manifest.json"
        data = read_json(path)
        if data.get("schema") != ARCHIVE_SCHEMA:
            raise ValueError(f"{path}: unsupported archive schema {data.get('schema')!r}")
        return cls(root, data)

    @staticmethod
    def exists(root: str | Path) -> bool:
        return (Path(root) / "manifest.json").exists()

    def save(self) -> None:
        write_json(self.root / "manifest.json", self.data)

    def record_array(self, rel: str, digest: str, shape=None) -> None:
        entry = {"sha256": digest}
        if shape is not None:
            entry["shape"] = [int(s) for s in shape]
        self.data["arrays"][rel] = entry

    def subject(self, sid: str) -> dict:
        return self.data["subjects"].setdefault(sid, {"status": "pending", "files": {}})

    def verify(self) -> list[str]:
        """Relative paths whose content does not match the recorded checksum."""
        bad = []
        for rel, entry in self.data["arrays"].items():
            p = self.root / rel
            if not p.exists() or sha256_file(p) != entry["sha256"]:
                bad.append(rel)
        for sid, subj in self.data["subjects"].items():
            for name, digest in subj.get("files", {}).items():
                p = self.root / "subjects" / sid / name
                if not p.exists() or sha256_file(p) != digest:
                    bad.append(f"subjects/{sid}/{name}")
        if (self.root / "units.jsonl").exists():
            for (sid, k), rec in sorted(UnitLedger(self.root / "units.jsonl").done.items()):
                rel = f"subjects/{sid}/units/f{k:03d}.f8"
                p = self.root / rel
                if not p.exists() or sha256_file(p) != rec["sha256"]:
                    bad.append(rel)
        return bad


class UnitLedger:
    """Append-only record of finished (subject, frequency index) units."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.done: dict[tuple[str, int], dict] = {}
        if self.path.exists():
            text = self.path.read_text()
            if text and not text.endswith("\n"):
                # drop a torn final line so later appends start on a fresh line
                text = text[: text.rfind("\n") + 1]
                atomic_write_text(self.path, text)
            for line in text.splitlines():
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    continue  # torn final line from an interrupted append
                self.done[(rec["subject"], int(rec["index"]))] = rec

    def append(self, record: dict) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a") as fh:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self.done[(record["subject"], int(record["index"]))] = record

    def get(self, subject: str, index: int) -> dict | None:
        return self.done.get((subject, index))
