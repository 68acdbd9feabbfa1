"""Binary checkpoint: magic, version, JSON header, then float32 arrays."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from ..errors import FormatVersionError, ShapeMismatchError, TruncatedPayloadError
from .models import ModelSpec, build_model

CKPT_MAGIC = b"HANOCKPT"
CKPT_VERSION = 1


def save_checkpoint(path, model, normalizer=None, epoch: int = 0, history=None, extra=None) -> None:
    state = model.state_dict()
    arrays = [(name, t.detach().cpu().numpy().astype("<f4")) for name, t in state.items()]
    header = {
        "spec": model.spec.to_dict(),
        "normalizer": None if normalizer is None else normalizer.to_dict(),
        "epoch": int(epoch),
        "history": history or [],
        "extra": extra or {},
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(blob)))
        fh.write(blob)
        for _, a in arrays:
            fh.write(a.tobytes())


def load_checkpoint(path):
    """Return (model, header); the model is in float32 eval mode."""
    from ..dataio import ChannelNormalizer

    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise FormatVersionError(f"{path}: not a checkpoint (bad magic)")
    if len(raw) < 20:
        raise TruncatedPayloadError(f"{path}: header truncated")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != CKPT_VERSION:
        raise FormatVersionError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20 : 20 + hlen].decode("utf-8"))
    model = build_model(ModelSpec.from_dict(header["spec"]))
    state = model.state_dict()
    offset = 20 + hlen
    loaded = {}
    for entry in header["arrays"]:
        name, shape = entry["name"], tuple(entry["shape"])
        if name not in state or tuple(state[name].shape) != shape:
            raise ShapeMismatchError(f"array {name} {shape} does not fit the model")
        n = int(np.prod(shape)) * 4
        if offset + n > len(raw):
            raise TruncatedPayloadError(f"{path}: array {name} truncated")
        loaded[name] = torch.from_numpy(np.frombuffer(raw, dtype="<f4", count=n // 4, offset=offset).reshape(shape).copy())
        offset += n
    if offset != len(raw):
        raise ShapeMismatchError(f"{path}: trailing bytes after declared arrays")
    model.load_state_dict(loaded)
    model.eval()
    header["normalizer"] = ChannelNormalizer.from_dict(header.get("normalizer"))
    return model, header
