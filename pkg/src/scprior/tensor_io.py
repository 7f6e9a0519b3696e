"""Latent/mask data model and the bit-exact array file formats.

Arrays live in the plain binary container used across the ML ecosystem:
a magic string, a version, a literal header dict (dtype, fortran_order,
shape) padded to 64 bytes, then the raw little-endian C-order payload.
Any stack can emit it without custom code, which is what the export
adapters rely on.  Masks are single-channel integer arrays in the same
container; palette translation is an adapter concern.
"""

from __future__ import annotations

import ast
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import CorpusError, DataError, FormatError, ParameterError, ShapeError

MAGIC = b"\x93NUMPY"
DEFAULT_IGNORE_ID = 255
DEFAULT_CHANNELS = 4

# Little-endian numeric dtypes the container accepts, as header descr strings.
SUPPORTED_DESCRS = {
    np.dtype(t).newbyteorder("<").str if np.dtype(t).itemsize > 1 else np.dtype(t).str
    for t in (
        np.float32,
        np.float64,
        np.int8,
        np.int16,
        np.int32,
        np.int64,
        np.uint8,
        np.uint16,
        np.uint32,
        np.uint64,
    )
}


def _normalize_dtype(dtype: np.dtype) -> np.dtype:
    if dtype.byteorder == ">":
        dtype = dtype.newbyteorder("<")
    descr = dtype.str
    if descr not in SUPPORTED_DESCRS:
        raise FormatError(f"unsupported dtype {descr!r}")
    return dtype


def write_array(path: str | Path, array: np.ndarray) -> None:
    """Serialize one dense array; round-trips bit-exactly with read_array."""
    array = np.asarray(array)
    dtype = _normalize_dtype(array.dtype)
    # note: ascontiguousarray would promote 0-d arrays to 1-d
    data = np.asarray(array.astype(dtype, copy=False), order="C")
    header = (
        "{'descr': %r, 'fortran_order': False, 'shape': %s, }"
        % (dtype.str, repr(data.shape))
    ).encode("latin1")
    # Pad so the payload starts on a 64-byte boundary, newline-terminated.
    unpadded = len(MAGIC) + 2 + 2 + len(header) + 1
    header = header + b" " * (-unpadded % 64) + b"\n"
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes((1, 0)))
        fh.write(len(header).to_bytes(2, "little"))
        fh.write(header)
        fh.write(data.tobytes())


def read_array(path: str | Path) -> np.ndarray:
    """Load an array written by write_array (or any compatible producer)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 10 or raw[:6] != MAGIC:
        raise FormatError(f"{path}: not an array file (bad magic)")
    major, minor = raw[6], raw[7]
    if (major, minor) != (1, 0):
        raise FormatError(f"{path}: unsupported container version {major}.{minor}")
    header_len = int.from_bytes(raw[8:10], "little")
    header_end = 10 + header_len
    if len(raw) < header_end:
        raise FormatError(f"{path}: truncated header")
    try:
        header = ast.literal_eval(raw[10:header_end].decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})") from exc
    if (
        not isinstance(header, dict)
        or set(header) != {"descr", "fortran_order", "shape"}
    ):
        raise FormatError(f"{path}: malformed header dict")
    if header["fortran_order"] is not False:
        raise FormatError(f"{path}: fortran-order payloads are not supported")
    descr = header["descr"]
    if descr not in SUPPORTED_DESCRS:
        raise FormatError(f"{path}: unsupported dtype {descr!r}")
    shape = header["shape"]
    if not isinstance(shape, tuple) or not all(
        isinstance(n, int) and n >= 0 for n in shape
    ):
        raise FormatError(f"{path}: malformed shape {shape!r}")
    dtype = np.dtype(descr)
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    payload = raw[header_end:]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload has {len(payload)} bytes, expected {expected}"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy()


@dataclass(frozen=True, eq=False)
class LatentImage:
    """A C-channel spatial latent, stored as an (H', W', C) array of reals."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeError(f"latent must be (H', W', C), got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.floating):
            raise DataError(f"latent must be a float array, got {data.dtype}")
        if not np.all(np.isfinite(data)):
            raise DataError("latent contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class LabelMask:
    """An (H, W) grid of non-negative class ids; ignore_id marks unlabeled pixels."""

    ids: np.ndarray
    ignore_id: int = DEFAULT_IGNORE_ID

    def __post_init__(self):
        ids = np.asarray(self.ids)
        if ids.ndim != 2 or min(ids.shape) < 1:
            raise ShapeError(f"mask must be (H, W), got shape {ids.shape}")
        if not np.issubdtype(ids.dtype, np.integer):
            raise DataError(f"mask ids must be integers, got {ids.dtype}")
        if np.any(ids < 0):
            raise DataError("mask ids must be non-negative")
        object.__setattr__(self, "ids", ids)

    @property
    def height(self) -> int:
        return self.ids.shape[0]

    @property
    def width(self) -> int:
        return self.ids.shape[1]


@dataclass(frozen=True, eq=False)
class CorpusRecord:
    """One (latent, mask) pair; mask dims are the latent dims times one factor."""

    latent: LatentImage
    mask: LabelMask
    id: str

    def __post_init__(self):
        lh, lw = self.latent.height, self.latent.width
        mh, mw = self.mask.height, self.mask.width
        if mh % lh != 0 or mw % lw != 0 or mh // lh != mw // lw:
            raise DataError(
                f"record '{self.id}': mask {mh}x{mw} is not an integer multiple "
                f"of latent {lh}x{lw} with a common factor"
            )

    @property
    def factor(self) -> int:
        return self.mask.height // self.latent.height


def downsample_mask(mask: LabelMask, target_h: int, target_w: int) -> LabelMask:
    """Nearest-pixel mask downsampling on the center-aligned grid.

    Output pixel (x, y) takes the id of the source pixel nearest the center
    of its footprint.  For odd factors that center is exact; for even
    factors the tie between the two central pixels is broken toward the
    upper-left one.  ignore ids pass through untouched.
    """
    h, w = mask.height, mask.width
    if target_h < 1 or target_w < 1:
        raise ParameterError("target dims must be positive")
    if h % target_h != 0 or w % target_w != 0 or h // target_h != w // target_w:
        raise ParameterError(
            f"cannot downsample {h}x{w} to {target_h}x{target_w}: "
            "dims must share one integer factor"
        )
    factor = h // target_h
    if factor == 1:
        return mask
    offset = (factor - 1) // 2
    rows = np.arange(target_h) * factor + offset
    cols = np.arange(target_w) * factor + offset
    return LabelMask(mask.ids[np.ix_(rows, cols)].copy(), mask.ignore_id)


def read_manifest(manifest: str | Path) -> list[tuple[Path, Path, str]]:
    """Parse a manifest into (latent_path, mask_path, id) triples.

    One tab-separated record per line; blank lines and '#' comment lines are
    skipped; paths are resolved relative to the manifest's directory.
    """
    manifest = Path(manifest)
    entries: list[tuple[Path, Path, str]] = []
    base = manifest.parent
    with open(manifest, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(
                    f"{manifest}:{lineno}: expected 'latent\\tmask\\tid', "
                    f"got {len(parts)} fields"
                )
            latent_path, mask_path, record_id = parts
            entries.append((base / latent_path, base / mask_path, record_id))
    return entries


def load_records(
    entries: Iterable[tuple[Path, Path, str]], ignore_id: int = DEFAULT_IGNORE_ID
) -> Iterator[CorpusRecord]:
    """Stream records for manifest entries, validating each one."""
    for latent_path, mask_path, record_id in entries:
        latent_arr = read_array(latent_path)
        mask_arr = read_array(mask_path)
        try:
            yield CorpusRecord(
                latent=LatentImage(latent_arr),
                mask=LabelMask(mask_arr, ignore_id),
                id=record_id,
            )
        except (DataError, ShapeError) as exc:
            raise CorpusError(f"record '{record_id}': {exc}") from exc


def load_corpus(
    manifest: str | Path, ignore_id: int = DEFAULT_IGNORE_ID
) -> Iterator[CorpusRecord]:
    """Stream corpus records in manifest order, validating each one.

    The manifest is UTF-8 text with one tab-separated ``latent\\tmask\\tid``
    record per line ('#' lines are comments); paths are relative to the
    manifest's directory.  Latent dims and channel count must be constant
    across the corpus.
    """
    expected_shape: tuple[int, int, int] | None = None
    for record in load_records(read_manifest(manifest), ignore_id):
        if expected_shape is None:
            expected_shape = record.latent.data.shape
        elif record.latent.data.shape != expected_shape:
            raise CorpusError(
                f"record '{record.id}': latent shape {record.latent.data.shape} "
                f"differs from corpus shape {expected_shape}"
            )
        yield record


def save_corpus(
    records: Iterable[CorpusRecord], out_dir: str | Path
) -> Path:
    """Write records as array files plus a manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "latents").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    lines = []
    for record in records:
        latent_rel = f"latents/{record.id}.arr"
        mask_rel = f"masks/{record.id}.arr"
        write_array(out_dir / latent_rel, record.latent.data)
        write_array(out_dir / mask_rel, record.mask.ids)
        lines.append(f"{latent_rel}\t{mask_rel}\t{record.id}\n")
    manifest = out_dir / "manifest.tsv"
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.writelines(lines)
    return manifest
