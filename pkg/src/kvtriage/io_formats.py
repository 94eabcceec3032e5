"""On-disk formats: head dump tensor files and tabular reports.

Head dump layout (one head per file, a directory is a layer):

    bytes 0..3    magic "KVHD"
    bytes 4..31   seven little-endian u32: format_version, n, n_window,
                  head_dim, model_dim, layer, head
    bytes 32..    four row-major little-endian f32 tensors, in order:
                  q_window [n_window x head_dim], keys [n x head_dim],
                  values [n x head_dim], w_o_slice [head_dim x model_dim]

The layout is the contract between the exporter and this package; it is
frozen per format_version. Reads validate magic, version, exact byte
length against the header dims, and payload finiteness. Writes are atomic
(temp file + rename) and round-trip bit-identically.

Reports are comma-separated text: '#'-prefixed ``key=value`` lines carry
the fully resolved configuration, then one header row, then data rows.
"""

import os
import struct
import tempfile

import numpy as np

from .pipeline import HeadSnapshot

MAGIC = b"KVHD"
FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (1,)
_HEADER = struct.Struct("<4s7I")

DUMP_SUFFIX = ".kvhd"


class HeadDumpError(Exception):
    """Malformed or unreadable head dump file."""


def _payload_bytes(n, n_window, head_dim, model_dim):
    return 4 * (n_window * head_dim + 2 * n * head_dim + head_dim * model_dim)


def write_head_dump(snap, path):
    """Write one snapshot in the frozen byte layout, atomically."""
    path = os.fspath(path)
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        snap.n,
        snap.n_window,
        snap.head_dim,
        snap.model_dim,
        snap.layer,
        snap.head,
    )
    payload = b"".join(
        np.ascontiguousarray(t, dtype="<f4").tobytes()
        for t in (snap.q_window, snap.keys, snap.values, snap.w_o_slice)
    )
    _atomic_write_bytes(path, header + payload)


def read_head_dump(path):
    """Read and validate one head dump file."""
    path = os.fspath(path)
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise HeadDumpError(f"{path}: {exc}") from exc
    if len(blob) < _HEADER.size:
        raise HeadDumpError(
            f"{path}: truncated header, expected {_HEADER.size} bytes, got {len(blob)}"
        )
    magic, version, n, n_window, head_dim, model_dim, layer, head = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise HeadDumpError(f"{path}: not a HeadDump (magic {magic!r})")
    if version not in SUPPORTED_VERSIONS:
        raise HeadDumpError(
            f"{path}: unsupported format_version {version}, supported: {SUPPORTED_VERSIONS}"
        )
    if min(n, n_window, head_dim, model_dim) < 1 or n_window > n:
        raise HeadDumpError(
            f"{path}: invalid dims n={n} n_window={n_window} "
            f"head_dim={head_dim} model_dim={model_dim}"
        )
    expected = _HEADER.size + _payload_bytes(n, n_window, head_dim, model_dim)
    if len(blob) != expected:
        raise HeadDumpError(
            f"{path}: length mismatch, expected {expected} bytes for header dims, got {len(blob)}"
        )
    flat = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    if not np.all(np.isfinite(flat)):
        raise HeadDumpError(f"{path}: payload contains non-finite values")
    sizes = (n_window * head_dim, n * head_dim, n * head_dim, head_dim * model_dim)
    offsets = np.cumsum((0,) + sizes)
    q_window = flat[offsets[0]:offsets[1]].reshape(n_window, head_dim)
    keys = flat[offsets[1]:offsets[2]].reshape(n, head_dim)
    values = flat[offsets[2]:offsets[3]].reshape(n, head_dim)
    w_o = flat[offsets[3]:offsets[4]].reshape(head_dim, model_dim)
    return HeadSnapshot(
        layer=layer, head=head, q_window=q_window, keys=keys, values=values, w_o_slice=w_o
    )


def dump_path(root, layer, head):
    return os.path.join(root, f"layer_{layer:02d}", f"head_{head:03d}{DUMP_SUFFIX}")


def write_dump_tree(snaps, root):
    """Write snapshots as <root>/layer_XX/head_YYY.kvhd; returns the paths."""
    paths = []
    for snap in snaps:
        path = dump_path(root, snap.layer, snap.head)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        write_head_dump(snap, path)
        paths.append(path)
    return paths


def iter_dump_paths(root):
    """All dump files under a directory tree, sorted for determinism."""
    root = os.fspath(root)
    if os.path.isfile(root):
        return [root]
    found = []
    for dirpath, _dirnames, filenames in os.walk(root):
        for name in filenames:
            if name.endswith(DUMP_SUFFIX):
                found.append(os.path.join(dirpath, name))
    return sorted(found)


def read_dump_tree(root):
    paths = iter_dump_paths(root)
    if not paths:
        raise HeadDumpError(f"{root}: no {DUMP_SUFFIX} files found")
    return [read_head_dump(p) for p in paths]


def _atomic_write_bytes(path, blob):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _format_cell(value):
    if isinstance(value, bool) or isinstance(value, np.bool_):
        return "1" if value else "0"
    if isinstance(value, float) or isinstance(value, np.floating):
        return format(float(value), ".12g")
    return str(value)


def write_report(path, columns, rows, config=None):
    """Comma-separated report with the resolved config in '#' header lines."""
    lines = []
    for key in sorted(config or {}):
        lines.append(f"# {key}={_format_cell((config or {})[key])}")
    lines.append(",".join(columns))
    for row in rows:
        cells = [_format_cell(v) for v in row]
        if len(cells) != len(columns):
            raise ValueError("row width does not match the column count")
        lines.append(",".join(cells))
    _atomic_write_bytes(os.fspath(path), ("\n".join(lines) + "\n").encode("utf-8"))


def _parse_cell(text):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_report(path):
    """Inverse of :func:`write_report`: (config, columns, rows)."""
    config = {}
    columns = None
    rows = []
    with open(os.fspath(path), "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, value = body.split("=", 1)
                    config[key.strip()] = _parse_cell(value.strip())
                continue
            if columns is None:
                columns = line.split(",")
                continue
            rows.append([_parse_cell(c) for c in line.split(",")])
    if columns is None:
        raise ValueError(f"{path}: no header row")
    return config, columns, rows


def write_text(path, text):
    _atomic_write_bytes(os.fspath(path), text.encode("utf-8"))
