"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"MFNN"  u16 version
    u16 n_fields, then per field:
        u16 name_len, name (UTF-8), u8 type tag ('i' or 's'),
        'i' -> i64 value | 's' -> u16 len, UTF-8 bytes
    u32 n_tensors, then per tensor in declaration order:
        u8 ndim, ndim x u32 dims, prod(dims) x f32 values

A text manifest ``<path>.manifest`` lists ``name shape offset crc32`` per
tensor, where ``offset`` is the byte offset of the tensor's first value.
"""

import struct
import zlib
from dataclasses import fields

import numpy as np

from .errors import FormatError
from .model import ModelConfig, build_model

MAGIC = b"MFNN"
VERSION = 1


def _encode_config(config):
    out = [struct.pack("<H", len(fields(ModelConfig)))]
    for f in fields(ModelConfig):
        value = getattr(config, f.name)
        name = f.name.encode()
        out.append(struct.pack("<H", len(name)) + name)
        if isinstance(value, str):
            raw = value.encode()
            out.append(b"s" + struct.pack("<H", len(raw)) + raw)
        else:
            out.append(b"i" + struct.pack("<q", int(value)))
    return b"".join(out)


class _Reader:
    def __init__(self, buf, path):
        self.buf, self.pos, self.path = buf, 0, path

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.path}: truncated at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def encode_checkpoint(model):
    """Return ``(payload, manifest_lines)`` for ``model``."""
    parts = [MAGIC, struct.pack("<H", VERSION), _encode_config(model.config)]
    named = model.named_parameters()
    parts.append(struct.pack("<I", len(named)))
    offset = sum(len(p) for p in parts)
    manifest = []
    for name, p in named:
        header = struct.pack("<B", p.value.ndim) + struct.pack(f"<{p.value.ndim}I", *p.value.shape)
        data = np.ascontiguousarray(p.value, dtype="<f4").tobytes()
        offset += len(header)
        shape = "x".join(str(d) for d in p.value.shape)
        manifest.append(f"{name}\t{shape}\t{offset}\t{zlib.crc32(data):08x}")
        parts.extend([header, data])
        offset += len(data)
    return b"".join(parts), manifest


def save_checkpoint(model, path, manifest=True):
    payload, lines = encode_checkpoint(model)
    with open(path, "wb") as fh:
        fh.write(payload)
    if manifest:
        with open(f"{path}.manifest", "w", encoding="utf-8") as fh:
            fh.write("name\tshape\toffset\tcrc32\n")
            fh.write("\n".join(lines) + "\n")
    return path


def decode_checkpoint(buf, path="<bytes>"):
    r = _Reader(buf, path)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: not an MFNN checkpoint (bad magic)")
    (version,) = r.unpack("<H")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (n_fields,) = r.unpack("<H")
    values = {}
    for _ in range(n_fields):
        (n,) = r.unpack("<H")
        name = r.take(n).decode()
        tag = r.take(1)
        if tag == b"i":
            (values[name],) = r.unpack("<q")
        elif tag == b"s":
            (n,) = r.unpack("<H")
            values[name] = r.take(n).decode()
        else:
            raise FormatError(f"{path}: unknown field tag {tag!r} for {name}")
    try:
        config = ModelConfig.from_dict(values)
    except (TypeError, ValueError) as e:
        raise FormatError(f"{path}: invalid model config: {e}") from e
    model = build_model(config)
    named = model.named_parameters()
    (n_tensors,) = r.unpack("<I")
    if n_tensors != len(named):
        raise FormatError(f"{path}: {n_tensors} tensors stored, model declares {len(named)}")
    for name, p in named:
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        if tuple(shape) != p.value.shape:
            raise FormatError(f"{path}: tensor {name} has shape {shape}, expected {p.value.shape}")
        count = int(np.prod(shape))
        data = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape)
        p.value[...] = data
    if r.pos != len(buf):
        raise FormatError(f"{path}: {len(buf) - r.pos} trailing bytes")
    return model


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read(), path)
