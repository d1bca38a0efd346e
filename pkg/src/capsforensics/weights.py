"""Binary weight files.

Format "CFW1": 4 magic bytes followed by a flat sequence of records,
all little-endian:

    name_length  u32
    name         UTF-8 bytes
    ndim         u32
    dims         u32 x ndim
    payload      f32 x prod(dims), row-major

Record names must be unique; readers reject malformed input naming the
first offending record so broken files are diagnosable.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import WeightFormatError

MAGIC = b"CFW1"

_U32 = struct.Struct("<I")


def write_weight_records(fh, arrays):
    """Write ``{name: ndarray}`` to an open binary stream."""
    fh.write(MAGIC)
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f4")
        encoded = name.encode("utf-8")
        fh.write(_U32.pack(len(encoded)))
        fh.write(encoded)
        fh.write(_U32.pack(data.ndim))
        for d in data.shape:
            fh.write(_U32.pack(d))
        fh.write(data.tobytes())


def read_weight_records(fh):
    """Read every record from an open binary stream into ``{name: ndarray}``."""
    magic = fh.read(4)
    if magic != MAGIC:
        raise WeightFormatError(
            "bad magic %r (expected %r); not a weight file" % (magic, MAGIC))
    arrays = {}
    index = 0
    while True:
        head = fh.read(4)
        if head == b"":
            return arrays
        if len(head) < 4:
            raise WeightFormatError(
                "truncated name length in record %d" % index)
        (name_len,) = _U32.unpack(head)
        raw = fh.read(name_len)
        if len(raw) < name_len:
            raise WeightFormatError("truncated name in record %d" % index)
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFormatError(
                "record %d has a non-UTF-8 name" % index) from exc
        ndim_raw = fh.read(4)
        if len(ndim_raw) < 4:
            raise WeightFormatError("truncated rank in record %r" % name)
        (ndim,) = _U32.unpack(ndim_raw)
        dims_raw = fh.read(4 * ndim)
        if len(dims_raw) < 4 * ndim:
            raise WeightFormatError("truncated dims in record %r" % name)
        dims = struct.unpack("<%dI" % ndim, dims_raw) if ndim else ()
        count = 1
        for d in dims:
            count *= d
        payload = fh.read(4 * count)
        if len(payload) < 4 * count:
            raise WeightFormatError(
                "truncated payload in record %r (wanted %d floats)" % (name, count))
        if name in arrays:
            raise WeightFormatError("duplicate record name %r" % name)
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
        index += 1


def save_weights(path, arrays):
    """Write ``{name: ndarray}`` to ``path`` in CFW1 layout."""
    with open(Path(path), "wb") as fh:
        write_weight_records(fh, arrays)


def load_weights(path):
    """Read a CFW1 file back into ``{name: ndarray}`` (float32)."""
    with open(Path(path), "rb") as fh:
        return read_weight_records(fh)
