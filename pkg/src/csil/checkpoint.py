"""Portable checkpoint container: JSON header plus raw float64 blocks.

Layout: magic "CSCK", u32 version, u64 header length, the UTF-8 JSON header,
then each array's little-endian float64 bytes in header order. Round-trips
are bit-exact, which is what makes resume-from-checkpoint reproducible.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .continual import StageContext, StageSpan
from .model import Classifier, build_classifier_from_meta

MAGIC = b"CSCK"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class CheckpointFormatError(ValueError):
    pass


def _pack_arrays(arrays: dict[str, np.ndarray]) -> tuple[list[dict], bytes]:
    entries, blobs = [], []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        entries.append({"name": name, "shape": list(arr.shape)})
        blobs.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return entries, b"".join(blobs)


def save_checkpoint(path, model: Classifier, ctx: StageContext | None = None,
                    extra: dict | None = None) -> None:
    arrays: dict[str, np.ndarray] = {}
    for name, p in model.named_params().items():
        arrays[f"param.{name}"] = p.data
    meta: dict = {"model": model.meta(), "extra": extra or {}}
    if ctx is not None:
        meta["stage"] = ctx.stage
        meta["channel_map"] = [s.to_json() for s in ctx.channel_map]
        for name, m in ctx.masks.items():
            arrays[f"mask.{name}"] = m
        if ctx.theta_prev is not None:
            for name, a in ctx.theta_prev.items():
                arrays[f"prev.{name}"] = a
        if ctx.fisher is not None:
            for name, a in ctx.fisher.items():
                arrays[f"fisher.{name}"] = a
    entries, blob = _pack_arrays(arrays)
    meta["arrays"] = entries
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        fh.write(blob)


def load_checkpoint(path) -> tuple[Classifier, StageContext | None, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _PREFIX.size:
        raise CheckpointFormatError(f"{path}: shorter than prefix")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise CheckpointFormatError(f"{path}: unsupported version {version}")
    try:
        meta = json.loads(raw[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{path}: bad header ({exc})") from exc
    offset = _PREFIX.size + hlen
    arrays: dict[str, np.ndarray] = {}
    for entry in meta["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * 8
        if end > len(raw):
            raise CheckpointFormatError(f"{path}: truncated at array {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(
            raw, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset = end
    if offset != len(raw):
        raise CheckpointFormatError(f"{path}: {len(raw) - offset} trailing bytes")

    model = build_classifier_from_meta(meta["model"])
    model.load_snapshot({name[len("param."):]: arr for name, arr in arrays.items()
                         if name.startswith("param.")})
    ctx = None
    if "stage" in meta:
        masks = {n[len("mask."):]: a for n, a in arrays.items() if n.startswith("mask.")}
        prev = {n[len("prev."):]: a for n, a in arrays.items() if n.startswith("prev.")}
        fisher = {n[len("fisher."):]: a for n, a in arrays.items() if n.startswith("fisher.")}
        ctx = StageContext(
            stage=meta["stage"], masks=masks,
            channel_map=[StageSpan.from_json(s) for s in meta["channel_map"]],
            theta_prev=prev or None, fisher=fisher or None)
    return model, ctx, meta.get("extra", {})
