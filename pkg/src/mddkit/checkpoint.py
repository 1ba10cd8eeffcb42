"""Versioned binary checkpoints.

Layout: 8 magic bytes, a uint32 format version, a JSON block (kind,
model configs, scalar extras), then the named parameter tensors sorted
by name, each as a length-prefixed name, a shape header, and raw
little-endian float64 data. Everything is fixed-order so a save/load
round trip is bit-exact and reruns produce identical files.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .models import DecoderConfig, EncoderConfig, Model, TeacherConfig

__all__ = ["save_checkpoint", "load_checkpoint", "save_model", "load_model"]

MAGIC = b"MDDKIT\x00\x01"
VERSION = 1


def save_checkpoint(path: Path, kind: str, configs: dict, tensors: dict,
                    extra: dict | None = None) -> None:
    header = {
        "kind": kind,
        "configs": configs,
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype=np.float64)
            enc = name.encode("utf-8")
            fh.write(struct.pack("<I", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.astype("<f8").tobytes(order="C"))


def load_checkpoint(path: Path) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (blob_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(blob_len).decode("utf-8"))
        tensors = {}
        while True:
            raw = fh.read(4)
            if not raw:
                break
            (name_len,) = struct.unpack("<I", raw)
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8")
            tensors[name] = data.reshape(shape).astype(np.float64)
    header["tensors"] = tensors
    return header


def save_model(path: Path, model: Model, kind: str,
               extra: dict | None = None,
               optimizer_state: dict | None = None) -> None:
    """Model parameters plus (optionally) optimizer moments for resume."""
    configs = {
        "encoder": asdict(model.enc_cfg),
        "decoder": asdict(model.dec_cfg),
        "teacher": asdict(model.teach_cfg) if model.teach_cfg else None,
        "seed": model.seed,
    }
    tensors = {f"param/{k}": v.data for k, v in model.params().items()}
    extra = dict(extra or {})
    if optimizer_state is not None:
        for k, v in optimizer_state.items():
            if isinstance(v, np.ndarray):
                tensors[f"opt/{k}"] = v
            else:
                extra[f"opt/{k}"] = v
    save_checkpoint(path, kind, configs, tensors, extra)


def load_model(path: Path) -> tuple[Model, dict, dict | None]:
    """Returns (model, extra, optimizer_state or None)."""
    payload = load_checkpoint(path)
    cfgs = payload["configs"]
    enc_cfg = EncoderConfig(**cfgs["encoder"])
    dec_cfg = DecoderConfig(**{k: v for k, v in cfgs["decoder"].items()})
    teach_cfg = TeacherConfig(**cfgs["teacher"]) if cfgs.get("teacher") else None
    model = Model(enc_cfg, dec_cfg, teach_cfg, seed=cfgs.get("seed", 0))
    params = model.params()
    seen = set()
    opt_state: dict = {}
    for name, arr in payload["tensors"].items():
        if name.startswith("param/"):
            key = name[len("param/"):]
            if key not in params:
                raise ValueError(f"{path}: unknown parameter {key!r}")
            if params[key].data.shape != arr.shape:
                raise ValueError(f"{path}: shape mismatch for {key!r}")
            params[key].data[...] = arr
            seen.add(key)
        elif name.startswith("opt/"):
            opt_state[name[len("opt/"):]] = arr
    missing = set(params) - seen
    if missing:
        raise ValueError(f"{path}: checkpoint missing parameters {sorted(missing)[:4]}")
    extra = payload["extra"]
    for k in list(extra):
        if k.startswith("opt/"):
            opt_state[k[len("opt/"):]] = extra.pop(k)
    return model, extra, (opt_state or None)
