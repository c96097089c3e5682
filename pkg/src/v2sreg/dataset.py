"""Bit-exact sample serialization (`V2SD` container), the JSON-lines
manifest, and the deterministic train/validation split."""

from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .fields import GridField, GridSpec, Sample
from .scenario import SampleMeta

MAGIC = b"V2SD"
VERSION = 1
# channel-set descriptors
CHANNELS_FULL = 1  # sdf_p + df_i + u
CHANNELS_INPUT = 2  # sdf_p + df_i
CHANNELS_U = 3  # u only

_HEADER = struct.Struct("<4sIIf3fB")
_CHANNEL_LAYOUT = {
    CHANNELS_FULL: (("sdf_p", 1), ("df_i", 1), ("u", 3)),
    CHANNELS_INPUT: (("sdf_p", 1), ("df_i", 1)),
    CHANNELS_U: (("u", 3),),
}

VAL_FRACTION = 0.1


class SampleFormatError(RuntimeError):
    pass


def _grid_bytes(field: GridField) -> bytes:
    # stored x fastest, then y, z, channel
    v = field.values.transpose(3, 2, 1, 0)
    return np.ascontiguousarray(v).astype("<f4").tobytes()


def _descriptor_for(sample: Sample) -> int:
    have = (sample.sdf_p is not None, sample.df_i is not None,
            sample.u is not None)
    if have == (True, True, True):
        return CHANNELS_FULL
    if have == (True, True, False):
        return CHANNELS_INPUT
    if have == (False, False, True):
        return CHANNELS_U
    raise ValueError(f"unsupported channel combination {have}")


def channel_layout(descriptor: int):
    """(name, channel count) pairs stored for a channel-set descriptor."""
    if descriptor not in _CHANNEL_LAYOUT:
        raise SampleFormatError(f"unknown channel descriptor {descriptor}")
    return _CHANNEL_LAYOUT[descriptor]


def peek_header(path) -> dict:
    """Parse just the fixed-size header of a sample file."""
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise SampleFormatError(f"{path}: truncated header")
    magic, version, res, spacing, ox, oy, oz, desc = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise SampleFormatError(f"{path}: bad magic {magic!r}")
    return {"version": version, "resolution": res, "spacing": spacing,
            "origin": (ox, oy, oz), "descriptor": desc}


def write_sample(sample: Sample, path) -> None:
    spec = sample.spec
    desc = _descriptor_for(sample)
    tmp = str(path) + ".tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, spec.resolution,
                                  spec.spacing, *spec.origin, desc))
            for name, _ in _CHANNEL_LAYOUT[desc]:
                fh.write(_grid_bytes(getattr(sample, name)))
        os.replace(tmp, path)
    except OSError as exc:
        raise SampleFormatError(f"{path}: {exc}") from exc
    sidecar = str(path) + ".json"
    with open(sidecar + ".tmp", "w", encoding="utf-8") as fh:
        json.dump(sample.meta.to_dict(), fh, sort_keys=True,
                  separators=(",", ":"))
        fh.write("\n")
    os.replace(sidecar + ".tmp", sidecar)


def read_sample(path) -> Sample:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise SampleFormatError(f"{path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise SampleFormatError(f"{path}: truncated header")
    magic, version, res, spacing, ox, oy, oz, desc = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise SampleFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise SampleFormatError(f"{path}: unsupported version {version}")
    if desc not in _CHANNEL_LAYOUT:
        raise SampleFormatError(f"{path}: unknown channel set {desc}")
    layout = _CHANNEL_LAYOUT[desc]
    n_floats = res ** 3 * sum(c for _, c in layout)
    expected = _HEADER.size + 4 * n_floats
    if len(raw) != expected:
        raise SampleFormatError(
            f"{path}: length mismatch (got {len(raw)}, expected {expected})")
    spec = GridSpec(resolution=res, origin=(ox, oy, oz), spacing=spacing)
    grids = {"sdf_p": None, "df_i": None, "u": None}
    offset = _HEADER.size
    for name, c in layout:
        count = res ** 3 * c
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        if not np.isfinite(arr).all():
            raise SampleFormatError(f"{path}: NaN/Inf in channel {name}")
        vals = arr.reshape(c, res, res, res).transpose(3, 2, 1, 0)
        grids[name] = GridField(spec, np.ascontiguousarray(vals))
    sidecar = str(path) + ".json"
    if os.path.exists(sidecar):
        with open(sidecar, "r", encoding="utf-8") as fh:
            meta = SampleMeta.from_dict(json.load(fh))
    else:
        meta = SampleMeta(seed=-1, reason="no sidecar")
    return Sample(sdf_p=grids["sdf_p"], df_i=grids["df_i"], u=grids["u"],
                  meta=meta)


def assign_split(seed: int) -> str:
    """Deterministic 90/10 split tag from the sample seed."""
    digest = hashlib.sha256(b"v2s-split:" + str(int(seed)).encode()).digest()
    x = int.from_bytes(digest[:8], "little") / 2.0 ** 64
    return "val" if x < VAL_FRACTION else "train"


def sample_filename(seed: int) -> str:
    return f"sample_{int(seed):08d}.v2sd"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(config_dict: dict) -> str:
    return hashlib.sha256(canonical_json(config_dict).encode()).hexdigest()


@dataclass
class Manifest:
    """JSONL manifest: one header line, then one record per attempted seed."""

    header: dict
    records: dict  # seed -> record dict

    FORMAT_VERSION = 1

    @classmethod
    def new(cls, config_dict: dict) -> "Manifest":
        return cls(header={
            "kind": "header",
            "format_version": cls.FORMAT_VERSION,
            "config": config_dict,
            "config_hash": config_hash(config_dict),
        }, records={})

    @classmethod
    def load(cls, path) -> "Manifest":
        header = None
        records = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                if rec.get("kind") == "header":
                    header = rec
                else:
                    records[int(rec["seed"])] = rec
        if header is None:
            raise SampleFormatError(f"{path}: manifest has no header line")
        return cls(header=header, records=records)

    def add(self, seed: int, accepted: bool, reason: str,
            path: Optional[str], meta: SampleMeta) -> None:
        self.records[int(seed)] = {
            "kind": "sample",
            "seed": int(seed),
            "accepted": bool(accepted),
            "reason": reason,
            "split": assign_split(seed) if accepted else None,
            "path": path,
            "meta": meta.to_dict(),
        }

    def write(self, path) -> None:
        tmp = str(path) + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(self.header) + "\n")
            for seed in sorted(self.records):
                fh.write(canonical_json(self.records[seed]) + "\n")
        os.replace(tmp, path)

    def counts(self) -> dict:
        out = {"attempted": len(self.records), "accepted": 0, "discarded": {}}
        for rec in self.records.values():
            if rec["accepted"]:
                out["accepted"] += 1
            else:
                reason = rec["reason"]
                out["discarded"][reason] = out["discarded"].get(reason, 0) + 1
        return out

    def accepted_records(self, split: Optional[str] = None):
        out = [r for r in self.records.values() if r["accepted"]]
        if split is not None:
            out = [r for r in out if r["split"] == split]
        return sorted(out, key=lambda r: r["seed"])
