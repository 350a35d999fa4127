"""Checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic  b"SSUDACKP"
    uint32    format version
    uint64    header length L
    L bytes   UTF-8 JSON header (sorted keys): config echo, metadata, and an
              "arrays" table of {name, dtype, shape, offset, nbytes}
    ...       raw C-order array bytes, concatenated in table order

Writing is deterministic, so identical runs produce identical files.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .gradcore import BatchNormState, OptimizerState, Tensor
from .model import EncoderConfig, HeadConfig, ModelParams

MAGIC = b"SSUDACKP"
FORMAT_VERSION = 1


class CheckpointVersionError(ValueError):
    pass


def _pack(header: dict, arrays: dict) -> bytes:
    table, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        table.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                      "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = dict(header, arrays=table)
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(hbytes)) + hbytes + b"".join(blobs)


def _unpack(raw: bytes, path) -> tuple:
    if raw[:8] != MAGIC:
        raise CheckpointVersionError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    base = 20 + hlen
    arrays = {}
    for entry in header["arrays"]:
        start = base + entry["offset"]
        buf = raw[start:start + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(buf, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"]).copy()
    return header, arrays


def save_checkpoint(path, params: ModelParams, meta: dict | None = None,
                    optimizer: OptimizerState | None = None) -> None:
    arrays = {f"param/{n}": t.data for n, t in params.named_tensors().items()}
    for name, st in params.bn.items():
        arrays[f"bn/{name}/mean"] = st.running_mean
        arrays[f"bn/{name}/var"] = st.running_var
    header = {
        "encoder": params.encoder_cfg.to_dict(),
        "heads": [params.heads[k].to_dict() for k in sorted(params.heads)],
        "meta": meta or {},
    }
    if optimizer is not None:
        header["optimizer"] = {"lr": optimizer.lr, "base_lr": optimizer.base_lr,
                               "momentum": optimizer.momentum, "weight_decay": optimizer.weight_decay,
                               "milestones": [list(m) for m in optimizer.milestones]}
        for n, buf in optimizer.buffers.items():
            arrays[f"opt/{n}"] = buf
    Path(path).write_bytes(_pack(header, arrays))


def load_checkpoint(path) -> tuple:
    """Returns (params, meta, optimizer-or-None)."""
    header, arrays = _unpack(Path(path).read_bytes(), path)
    enc = header["encoder"]
    cfg = EncoderConfig(enc["in_channels"], tuple(enc["widths"]), enc["feature_dim"], enc["residual"])
    heads = {h["task_id"]: HeadConfig(h["task_id"], h["out_dim"], h["kind"]) for h in header["heads"]}
    encoder, head_params, bn = {}, {k: {} for k in heads}, {}
    for name, a in arrays.items():
        if name.startswith("param/enc."):
            encoder[name[len("param/enc."):]] = Tensor(a, requires_grad=True)
        elif name.startswith("param/head"):
            key, part = name[len("param/head"):].split(".", 1)
            head_params[int(key)][part] = Tensor(a, requires_grad=True)
    for name in {n.split("/")[1] for n in arrays if n.startswith("bn/")}:
        bn[name] = BatchNormState(arrays[f"bn/{name}/mean"], arrays[f"bn/{name}/var"])
    params = ModelParams(cfg, heads, encoder, head_params, bn)
    opt = None
    if "optimizer" in header:
        o = header["optimizer"]
        opt = OptimizerState(lr=o["lr"], momentum=o["momentum"], weight_decay=o["weight_decay"],
                             milestones=[tuple(m) for m in o["milestones"]], base_lr=o["base_lr"])
        opt.buffers = {n[len("opt/"):]: a for n, a in arrays.items() if n.startswith("opt/")}
    return params, header["meta"], opt


def params_checksum(params: ModelParams) -> str:
    h = hashlib.sha256()
    for name, t in sorted(params.named_tensors().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()
