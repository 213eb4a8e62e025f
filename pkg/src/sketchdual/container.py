"""Text-header + little-endian float32 payload files.

Layout::

    SKETCHDUAL <kind> <version>
    <key> = <json value>
    ...
    <empty line>
    <payload: float32 little-endian, arrays concatenated in order, row-major>
"""

import json

import numpy as np

MAGIC = "SKETCHDUAL"
VERSION = 1


class ContainerError(ValueError):
    pass


def write_container(path, kind, header, arrays):
    lines = [f"{MAGIC} {kind} {VERSION}"]
    for key, value in header.items():
        if "\n" in key or "=" in key:
            raise ContainerError(f"bad header key {key!r}")
        lines.append(f"{key} = {json.dumps(value, sort_keys=True)}")
    blob = "\n".join(lines).encode("utf-8") + b"\n\n"
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(payload)


def read_container(path, kind):
    """Return ``(header, float32 payload)``; checks magic, kind and version."""
    with open(path, "rb") as fh:
        raw = fh.read()
    end = raw.find(b"\n\n")
    if end < 0:
        raise ContainerError(f"{path}: missing header terminator")
    lines = raw[:end].decode("utf-8").split("\n")
    parts = lines[0].split()
    if len(parts) != 3 or parts[0] != MAGIC:
        raise ContainerError(f"{path}: not a {MAGIC} file")
    if parts[1] != kind:
        raise ContainerError(f"{path}: expected a {kind} file, found {parts[1]}")
    if int(parts[2]) > VERSION:
        raise ContainerError(f"{path}: unsupported version {parts[2]}")
    header = {}
    for line in lines[1:]:
        key, sep, value = line.partition(" = ")
        if not sep:
            raise ContainerError(f"{path}: malformed header line {line!r}")
        header[key] = json.loads(value)
    payload = np.frombuffer(raw[end + 2 :], dtype="<f4")
    return header, payload
