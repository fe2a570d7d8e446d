"""Binary checkpoint format and parameter hashing.

Layout (all integers little-endian):

    magic "FWMK" | u16 version=1 | u32 descriptor length | descriptor JSON
    | per-parameter records (u32 name length, name, u8 ndim, u32 dims...,
      float32 little-endian data)
    | trailing 32-byte SHA-256 digest of all preceding bytes

The descriptor JSON carries the arch identity plus a "metadata" object
(seed, epochs, final metrics).  ``parameter_hash`` covers the arch identity
and the raw parameter bytes, but not the metadata, so bookkeeping edits
cannot masquerade as model changes.
"""

import hashlib
import json
import os
import struct

import numpy as np

from .models import ClassifierModel, GeneratorModel, build_classifier, build_generator

MAGIC = b"FWMK"
VERSION = 1


class CheckpointError(IOError):
    """Base class for checkpoint format failures."""


class BadMagic(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class TruncatedFile(CheckpointError):
    pass


class DigestMismatch(CheckpointError):
    pass


class DescriptorMismatch(CheckpointError):
    """Stored parameters do not fit the model the descriptor describes."""


def parameter_hash(model):
    """Hex SHA-256 over the arch descriptor and all parameter bytes."""
    h = hashlib.sha256()
    h.update(json.dumps(model.descriptor, sort_keys=True).encode())
    for name, p in model.named_params():
        h.update(struct.pack("<I", len(name)))
        h.update(name.encode())
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        h.update(struct.pack("<B", arr.ndim))
        h.update(struct.pack(f"<{arr.ndim}I", *arr.shape))
        h.update(arr.tobytes())
    return h.hexdigest()


def _serialize(model):
    descriptor = dict(model.descriptor)
    descriptor["metadata"] = model.metadata
    desc_bytes = json.dumps(descriptor, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<H", VERSION),
             struct.pack("<I", len(desc_bytes)), desc_bytes]
    for name, p in model.named_params():
        name_b = name.encode()
        arr = np.ascontiguousarray(p.data, dtype="<f4")
        parts.append(struct.pack("<I", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save(model, path):
    """Write a checkpoint atomically (no partial file on failure)."""
    blob = _serialize(model)
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise TruncatedFile(
                f"needed {n} bytes at offset {self.pos}, file ends at {len(self.buf)}")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return self.take(1)[0]

    def u16(self):
        return struct.unpack("<H", self.take(2))[0]

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]


def _rebuild(descriptor):
    kind = descriptor.get("kind")
    if kind == "classifier":
        return build_classifier(descriptor["arch"], descriptor["input_shape"],
                                descriptor["M"])
    if kind == "generator":
        return build_generator(descriptor["input_shape"])
    raise DescriptorMismatch(f"unknown model kind {kind!r}")


def load(path):
    """Read a checkpoint; raises before returning any partially-built model."""
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < len(MAGIC) + 2 + 4 + 32:
        raise TruncatedFile(f"{len(buf)} bytes is below the minimum header size")
    if buf[:4] != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, found {buf[:4]!r}")
    if hashlib.sha256(buf[:-32]).digest() != buf[-32:]:
        raise DigestMismatch("checkpoint digest mismatch (corrupt or truncated file)")

    r = _Reader(buf[:-32])
    r.take(4)
    version = r.u16()
    if version != VERSION:
        raise VersionMismatch(f"format version {version}, expected {VERSION}")
    descriptor = json.loads(r.take(r.u32()).decode())
    metadata = descriptor.pop("metadata", {})

    try:
        model = _rebuild(descriptor)
    except DescriptorMismatch:
        raise
    except Exception as exc:
        raise DescriptorMismatch(f"cannot rebuild model from descriptor: {exc}")
    if model.descriptor != descriptor:
        raise DescriptorMismatch(
            f"descriptor {descriptor} does not match rebuilt model {model.descriptor}")

    expected = dict(model.named_params())
    seen = []
    while r.pos < len(r.buf):
        name = r.take(r.u32()).decode()
        ndim = r.u8()
        dims = tuple(r.u32() for _ in range(ndim))
        data = np.frombuffer(r.take(4 * int(np.prod(dims, dtype=np.int64))),
                             dtype="<f4").reshape(dims)
        if name not in expected:
            raise DescriptorMismatch(f"unexpected parameter {name!r}")
        p = expected[name]
        if p.data.shape != dims:
            raise DescriptorMismatch(
                f"parameter {name!r} has shape {dims}, arch expects {p.data.shape}")
        p.data = np.ascontiguousarray(data, dtype=np.float32)
        seen.append(name)
    if len(seen) != len(expected):
        missing = sorted(set(expected) - set(seen))
        raise DescriptorMismatch(f"missing parameters: {missing}")
    model.metadata = metadata
    return model
