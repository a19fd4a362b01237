"""Binary checkpoints.

Layout (all integers little-endian)::

    b"INDR"  u32 version
    record*  each: u8 tag, u32 payload length, payload, u32 crc32(tag + length + payload)

Record tags: C = canonical config text, S = scalars (JSON), R = RNG state
(name + four u64 words), A = array (name, u8 ndim, u64 dims, f64 data),
E = end marker. A damaged record is reported with the byte offset at which
it starts.
"""
import json
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, VersionMismatchError

MAGIC = b"INDR"
VERSION = 1


@dataclass
class Checkpoint:
    config_text: str
    step: int
    arrays: dict = field(default_factory=dict)      # name -> float64 ndarray
    rng_states: dict = field(default_factory=dict)  # name -> 4-tuple of u64
    scalars: dict = field(default_factory=dict)     # JSON-serialisable loop state


def _record(tag, payload):
    head = tag + struct.pack("<I", len(payload))
    return head + payload + struct.pack("<I", zlib.crc32(head + payload))


def _name_bytes(name):
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def encode_checkpoint(ckpt, version=VERSION):
    out = [MAGIC, struct.pack("<I", version)]
    out.append(_record(b"C", ckpt.config_text.encode("utf-8")))
    scalars = dict(ckpt.scalars, step=int(ckpt.step))
    out.append(_record(b"S", json.dumps(scalars, sort_keys=True, allow_nan=True).encode("utf-8")))
    for name in sorted(ckpt.rng_states):
        words = ckpt.rng_states[name]
        out.append(_record(b"R", _name_bytes(name) + struct.pack("<4Q", *words)))
    for name in sorted(ckpt.arrays):
        arr = np.ascontiguousarray(ckpt.arrays[name], dtype="<f8")
        body = _name_bytes(name) + struct.pack("<B", arr.ndim)
        body += struct.pack(f"<{arr.ndim}Q", *arr.shape) + arr.tobytes()
        out.append(_record(b"A", body))
    out.append(_record(b"E", b""))
    return b"".join(out)


def save_checkpoint(path, ckpt):
    """Write atomically: a crash mid-write never leaves a half-written file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encode_checkpoint(ckpt))
    os.replace(tmp, path)


def _read_name(payload, pos, base):
    if pos + 2 > len(payload):
        raise FormatError("truncated name", base + pos)
    (n,) = struct.unpack_from("<H", payload, pos)
    if pos + 2 + n > len(payload):
        raise FormatError("truncated name", base + pos)
    return payload[pos + 2:pos + 2 + n].decode("utf-8"), pos + 2 + n


def decode_checkpoint(raw):
    if len(raw) < 8:
        raise FormatError("file too short for a checkpoint header", len(raw))
    if raw[:4] != MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}", 0)
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != VERSION:
        raise VersionMismatchError(f"checkpoint version {version}, this build reads {VERSION}", 4)
    pos = 8
    config_text, scalars, rngs, arrays, ended = None, None, {}, {}, False
    while pos < len(raw):
        start = pos
        if pos + 5 > len(raw):
            raise FormatError("truncated record header", start)
        tag = raw[pos:pos + 1]
        (length,) = struct.unpack_from("<I", raw, pos + 1)
        end = pos + 5 + length
        if end + 4 > len(raw):
            raise FormatError(f"record {tag!r} runs past end of file", start)
        payload = raw[pos + 5:end]
        (crc,) = struct.unpack_from("<I", raw, end)
        if zlib.crc32(raw[pos:end]) != crc:
            raise FormatError(f"checksum mismatch in record {tag!r}", start)
        base = pos + 5
        pos = end + 4
        if tag == b"C":
            config_text = payload.decode("utf-8")
        elif tag == b"S":
            scalars = json.loads(payload.decode("utf-8"))
        elif tag == b"R":
            name, p = _read_name(payload, 0, base)
            if len(payload) - p != 32:
                raise FormatError("RNG record has wrong size", start)
            rngs[name] = struct.unpack_from("<4Q", payload, p)
        elif tag == b"A":
            name, p = _read_name(payload, 0, base)
            (ndim,) = struct.unpack_from("<B", payload, p)
            dims = struct.unpack_from(f"<{ndim}Q", payload, p + 1)
            p += 1 + 8 * ndim
            count = int(np.prod(dims, dtype=np.int64))
            if len(payload) - p != 8 * count:
                raise FormatError(f"array {name!r} payload size mismatch", start)
            arrays[name] = np.frombuffer(payload, dtype="<f8", count=count, offset=p).reshape(dims).copy()
        elif tag == b"E":
            ended = True
            if pos != len(raw):
                raise FormatError("trailing bytes after end marker", pos)
            break
        else:
            raise FormatError(f"unknown record tag {tag!r}", start)
    if not ended:
        raise FormatError("missing end marker (file truncated)", len(raw))
    if config_text is None or scalars is None:
        raise FormatError("checkpoint lacks config or scalar record", 8)
    step = scalars.pop("step")
    return Checkpoint(config_text=config_text, step=step, arrays=arrays, rng_states=rngs, scalars=scalars)


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())


# Training-state adapters -----------------------------------------------------

def capture(config_text, net, state, rngs, scalars=None):
    """Snapshot parameters, BN buffers, Adam moments, schedule and RNG states."""
    arrays = {}
    for k, v in net.parameters().items():
        arrays["param/" + k] = v
        arrays["adam_m/" + k] = state.adam_m[k]
        arrays["adam_v/" + k] = state.adam_v[k]
    for k, v in net.buffers().items():
        arrays["buffer/" + k] = v
    pl = state.plateau
    sc = dict(scalars or {})
    sc.update(lr=state.lr, plateau_best=pl.best, plateau_counter=pl.counter,
              net_version=net.version)
    return Checkpoint(config_text=config_text, step=state.step,
                      arrays={k: np.array(v, dtype=np.float64) for k, v in arrays.items()},
                      rng_states={k: r.state for k, r in rngs.items()}, scalars=sc)


def restore(ckpt, net, state, rngs):
    """Load a snapshot into an already-built network and train state, in place."""
    params, buffers = net.parameters(), net.buffers()
    for prefix, table in (("param/", params), ("buffer/", buffers),
                          ("adam_m/", state.adam_m), ("adam_v/", state.adam_v)):
        for k, dst in table.items():
            src = ckpt.arrays.get(prefix + k)
            if src is None or src.shape != dst.shape:
                raise FormatError(f"checkpoint entry {prefix + k} missing or mis-shaped")
            dst[...] = src
    for k, r in rngs.items():
        if k not in ckpt.rng_states:
            raise FormatError(f"checkpoint has no RNG state {k!r}")
        r.state = ckpt.rng_states[k]
    sc = dict(ckpt.scalars)
    state.step = ckpt.step
    state.lr = sc.pop("lr")
    state.plateau.best = sc.pop("plateau_best")
    state.plateau.counter = sc.pop("plateau_counter")
    sc.pop("net_version", None)
    net.touch()
    return sc
