"""Readers and writers for factor files, tree files and basket files.

Factor files (``NDPF`` version 1) are little-endian::

    b"NDPF"  u32 version  u64 M  u64 K  u8 flags      (25 bytes)
    V  (M*K f64, row-major)  B  (M*K f64)  D  (K*K f64)

Flag bit 0 marks orthogonal factors (V perpendicular to B, B orthonormal).
An optional JSON sidecar with the same stem carries free-form metadata.

Tree files (``NDPT`` version 1)::

    b"NDPT"  u32 version  u64 M  u64 r  u64 leaf_size  u64 n_nodes
    Sigma blocks (n_nodes * r * r f64) in breadth-first node order

The node layout is a pure function of ``(M, leaf_size)`` so only the Gram
blocks are stored.

Basket files hold one basket per line as whitespace-separated item ids;
lines starting with ``#`` are comments.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError
from .kernel import KernelFactors
from .tree import SampleTree, tree_layout

NDPF_MAGIC = b"NDPF"
NDPT_MAGIC = b"NDPT"
VERSION = 1
FLAG_ONDPP = 0x01

_NDPF_HEADER = struct.Struct("<4sIQQB")
_NDPT_HEADER = struct.Struct("<4sIQQQQ")
_F64 = np.dtype("<f8")


def sidecar_path(path):
    return Path(path).with_suffix(".json")


def _read_exact(buf, offset, nbytes, what):
    if len(buf) - offset < nbytes:
        raise FormatError(
            f"truncated file: expected {nbytes} bytes of {what}, found {len(buf) - offset}",
            offset=len(buf),
        )
    return buf[offset : offset + nbytes]


def _read_f64(buf, offset, shape, what):
    n = int(np.prod(shape))
    raw = _read_exact(buf, offset, n * 8, what)
    return np.frombuffer(raw, dtype=_F64).astype(np.float64).reshape(shape), offset + n * 8


def encode_factors(f: KernelFactors) -> bytes:
    flags = FLAG_ONDPP if f.ondpp else 0
    parts = [_NDPF_HEADER.pack(NDPF_MAGIC, VERSION, f.M, f.K, flags)]
    parts += [np.ascontiguousarray(a, dtype=_F64).tobytes() for a in (f.V, f.B, f.D)]
    return b"".join(parts)


def decode_factors(buf: bytes) -> KernelFactors:
    head = _read_exact(buf, 0, _NDPF_HEADER.size, "header")
    magic, version, M, K, flags = _NDPF_HEADER.unpack(head)
    if magic != NDPF_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {NDPF_MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported NDPF version {version}", offset=4)
    if flags & ~FLAG_ONDPP:
        raise FormatError(f"unknown flag bits {flags:#04x}", offset=24)
    off = _NDPF_HEADER.size
    V, off = _read_f64(buf, off, (M, K), "V")
    B, off = _read_f64(buf, off, (M, K), "B")
    D, off = _read_f64(buf, off, (K, K), "D")
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after payload", offset=off)
    try:
        return KernelFactors(V, B, D, ondpp=bool(flags & FLAG_ONDPP))
    except ValueError as exc:
        raise FormatError(f"invalid factors: {exc}", offset=_NDPF_HEADER.size) from exc


def save_factors(path, f, metadata=None):
    """Write ``f`` to ``path``; ``metadata`` (a dict) goes to the JSON sidecar."""
    path = Path(path)
    path.write_bytes(encode_factors(f))
    if metadata is not None:
        sidecar_path(path).write_text(json.dumps(metadata, indent=2, sort_keys=True) + "\n")


def load_factors(path) -> KernelFactors:
    return decode_factors(Path(path).read_bytes())


def load_metadata(path):
    side = sidecar_path(path)
    if not side.exists():
        return None
    return json.loads(side.read_text())


def encode_tree(tree: SampleTree) -> bytes:
    head = _NDPT_HEADER.pack(NDPT_MAGIC, VERSION, tree.M, tree.r, tree.leaf_size, tree.n_nodes)
    return head + np.ascontiguousarray(tree.sigma, dtype=_F64).tobytes()


def decode_tree(buf: bytes, rows) -> SampleTree:
    """Rebuild a tree from its bytes and the ``M x r`` eigenvector rows."""
    head = _read_exact(buf, 0, _NDPT_HEADER.size, "header")
    magic, version, M, r, leaf_size, n_nodes = _NDPT_HEADER.unpack(head)
    if magic != NDPT_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {NDPT_MAGIC!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"unsupported NDPT version {version}", offset=4)
    if M < 1 or leaf_size < 1:
        raise FormatError("M and leaf_size must be positive", offset=8)
    start, stop, left, right, level = tree_layout(M, leaf_size)
    if start.size != n_nodes:
        raise FormatError(
            f"node count {n_nodes} does not match layout ({start.size})", offset=32
        )
    off = _NDPT_HEADER.size
    sigma, off = _read_f64(buf, off, (n_nodes, r, r), "node blocks")
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after payload", offset=off)
    rows = np.ascontiguousarray(rows, dtype=np.float64)
    if rows.shape != (M, r):
        raise ValueError(f"rows have shape {rows.shape}, tree expects {(M, r)}")
    for a in (start, stop, left, right, level, sigma):
        a.setflags(write=False)
    return SampleTree(start, stop, left, right, level, sigma, rows, int(leaf_size))


def save_tree(path, tree):
    Path(path).write_bytes(encode_tree(tree))


def load_tree(path, rows) -> SampleTree:
    return decode_tree(Path(path).read_bytes(), rows)


def parse_baskets(lines, *, allow_empty=True):
    """Parse basket lines into sorted unique ``int64`` arrays.

    Blank lines are empty baskets unless ``allow_empty`` is false.
    """
    out = []
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if text.startswith("#"):
            continue
        items = []
        for tok in text.split():
            try:
                v = int(tok)
            except ValueError:
                raise FormatError(f"non-integer item id {tok!r}", line=lineno) from None
            if v < 0:
                raise FormatError(f"negative item id {v}", line=lineno)
            items.append(v)
        if not items and not allow_empty:
            raise FormatError("empty basket", line=lineno)
        if len(set(items)) != len(items):
            raise FormatError("repeated item id in basket", line=lineno)
        out.append((lineno, np.array(sorted(items), dtype=np.int64)))
    return out


def read_baskets(path, *, allow_empty=True):
    with open(path, encoding="utf-8") as fh:
        return [b for _, b in parse_baskets(fh, allow_empty=allow_empty)]


def format_baskets(baskets, header=None):
    lines = [f"# {h}" for h in (header or [])]
    lines += [" ".join(str(int(i)) for i in b) for b in baskets]
    return "".join(line + "\n" for line in lines)


def write_baskets(path, baskets, header=None):
    Path(path).write_text(format_baskets(baskets, header), encoding="utf-8")
