"""Segmentation-mask contract and a bit-exact interchange codec.

A KnobMask is the only thing the estimator knows about a knob: a binary
bitmap cropped to its bounding box plus the crop origin in image
coordinates. Observations bundle the masks of one frame with the
optional ring-light reflection point and the nominal capture distance.

The byte layout of the container is documented in
docs/observation-format.md and version-tagged; decode(encode(x)) == x
holds bit-exactly for every valid Observation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from .errors import MaskFormatError, ObservationError

MAGIC = b"KOBS"
VERSION = 1
_FLAG_REFLECTION = 0x01


@dataclass(frozen=True, eq=False)
class KnobMask:
    """Binary raster of one segmented knob, cropped to its bounding box.

    bitmap[r, c] covers the image pixel (x0_px + c, y0_px + r).
    """

    label: int
    bitmap: np.ndarray
    x0_px: int = 0
    y0_px: int = 0

    def __post_init__(self):
        bm = np.ascontiguousarray(self.bitmap, dtype=bool)
        if bm.ndim != 2 or bm.size == 0:
            raise ValueError(f"bitmap must be a nonempty 2-D array, got shape {bm.shape}")
        if not bm.any():
            raise ValueError("mask has no set pixels")
        if self.x0_px < 0 or self.y0_px < 0:
            raise ValueError(f"crop origin must be non-negative, got ({self.x0_px}, {self.y0_px})")
        bm.setflags(write=False)
        object.__setattr__(self, "bitmap", bm)

    @classmethod
    def from_full(cls, label: int, full: np.ndarray) -> "KnobMask":
        """Crop a full-image boolean raster to its tight bounding box."""
        full = np.asarray(full, dtype=bool)
        ys, xs = np.nonzero(full)
        if ys.size == 0:
            raise ValueError("mask has no set pixels")
        y0, y1 = int(ys.min()), int(ys.max())
        x0, x1 = int(xs.min()), int(xs.max())
        return cls(label, full[y0 : y1 + 1, x0 : x1 + 1], x0, y0)

    @property
    def height(self) -> int:
        return self.bitmap.shape[0]

    @property
    def width(self) -> int:
        return self.bitmap.shape[1]

    @property
    def pixel_count(self) -> int:
        return int(self.bitmap.sum())

    def pixels_xy(self) -> tuple[np.ndarray, np.ndarray]:
        """Image coordinates (xs, ys) of all set pixel centers."""
        ys, xs = np.nonzero(self.bitmap)
        return xs + self.x0_px, ys + self.y0_px

    def centroid_xy(self) -> tuple[float, float]:
        xs, ys = self.pixels_xy()
        return float(xs.mean()), float(ys.mean())

    def __eq__(self, other):
        if not isinstance(other, KnobMask):
            return NotImplemented
        return (
            self.label == other.label
            and self.x0_px == other.x0_px
            and self.y0_px == other.y0_px
            and self.bitmap.shape == other.bitmap.shape
            and bool(np.array_equal(self.bitmap, other.bitmap))
        )


@dataclass(frozen=True, eq=False)
class Observation:
    """One frame's worth of perception input.

    meta carries free-form string pairs (scenario name, trial id, ...);
    it is stored sorted by key so equality and encoding are canonical.
    """

    width_px: int
    height_px: int
    z_mm: float
    masks: tuple[KnobMask, ...] = ()
    reflection_px: Optional[tuple[float, float]] = None
    meta: tuple[tuple[str, str], ...] = field(default=())

    def __post_init__(self):
        if self.width_px < 1 or self.height_px < 1:
            raise ValueError(f"image size must be positive, got {self.width_px}x{self.height_px}")
        if not (self.z_mm > 0 and np.isfinite(self.z_mm)):
            raise ValueError(f"z_mm must be positive and finite, got {self.z_mm}")
        object.__setattr__(self, "masks", tuple(self.masks))
        for m in self.masks:
            if m.x0_px + m.width > self.width_px or m.y0_px + m.height > self.height_px:
                raise ValueError(
                    f"mask {m.label} crop ({m.x0_px},{m.y0_px})+{m.width}x{m.height} "
                    f"exceeds image {self.width_px}x{self.height_px}"
                )
        if self.reflection_px is not None:
            rx, ry = self.reflection_px
            if not (0 <= rx < self.width_px and 0 <= ry < self.height_px):
                raise ValueError(f"reflection {self.reflection_px} outside image bounds")
            object.__setattr__(self, "reflection_px", (float(rx), float(ry)))
        meta = tuple(sorted((str(k), str(v)) for k, v in self.meta))
        keys = [k for k, _ in meta]
        if len(set(keys)) != len(keys):
            raise ValueError("meta keys must be unique")
        object.__setattr__(self, "meta", meta)

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return (
            self.width_px == other.width_px
            and self.height_px == other.height_px
            and self.z_mm == other.z_mm
            and self.reflection_px == other.reflection_px
            and self.meta == other.meta
            and self.masks == other.masks
        )


def _rle_encode(bitmap: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-major run-length encoding; returns (starts, lengths)."""
    flat = bitmap.ravel().astype(np.int8)
    edges = np.diff(np.concatenate(([0], flat, [0])))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    return starts.astype(np.uint32), (ends - starts).astype(np.uint32)


def encode_observation(obs: Observation) -> bytes:
    """Serialize an Observation to the versioned binary container."""
    parts = [MAGIC, struct.pack("<BB", VERSION, _FLAG_REFLECTION if obs.reflection_px else 0)]
    parts.append(struct.pack("<HHd", obs.width_px, obs.height_px, obs.z_mm))
    if obs.reflection_px is not None:
        parts.append(struct.pack("<dd", *obs.reflection_px))
    meta_blob = json.dumps(dict(obs.meta), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts.append(struct.pack("<I", len(meta_blob)))
    parts.append(meta_blob)
    parts.append(struct.pack("<H", len(obs.masks)))
    for m in obs.masks:
        if not (-(2**31) <= m.label < 2**31):
            raise ValueError(f"label {m.label} does not fit the container's 32-bit field")
        starts, lengths = _rle_encode(m.bitmap)
        parts.append(
            struct.pack("<iHHHHI", m.label, m.x0_px, m.y0_px, m.width, m.height, len(starts))
        )
        runs = np.empty(2 * len(starts), dtype=np.uint32)
        runs[0::2] = starts
        runs[1::2] = lengths
        parts.append(runs.astype("<u4").tobytes())
    return b"".join(parts)


class _Cursor:
    """struct.unpack_from wrapper that reports the failing byte offset."""

    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.blob):
            raise MaskFormatError(f"truncated while reading {what}", self.pos)
        out = struct.unpack_from(fmt, self.blob, self.pos)
        self.pos += size
        return out

    def take_bytes(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise MaskFormatError(f"truncated while reading {what}", self.pos)
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out


def decode_observation(blob: bytes) -> Observation:
    """Parse the binary container; complains with a byte offset on any
    malformed input."""
    cur = _Cursor(blob)
    magic = cur.take_bytes(4, "magic")
    if magic != MAGIC:
        raise MaskFormatError(f"bad magic {magic!r}", 0)
    version, flags = cur.take("<BB", "header")
    if version != VERSION:
        raise MaskFormatError(f"unsupported version {version}", 4)
    if flags & ~_FLAG_REFLECTION:
        raise MaskFormatError(f"unknown flag bits 0x{flags:02x}", 5)
    width, height, z_mm = cur.take("<HHd", "image header")
    reflection = None
    if flags & _FLAG_REFLECTION:
        reflection = cur.take("<dd", "reflection point")
    (meta_len,) = cur.take("<I", "meta length")
    meta_start = cur.pos
    meta_blob = cur.take_bytes(meta_len, "meta blob")
    try:
        meta_doc = json.loads(meta_blob.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MaskFormatError(f"bad meta blob: {exc}", meta_start) from None
    if not isinstance(meta_doc, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in meta_doc.items()
    ):
        raise MaskFormatError("meta blob is not a string-to-string map", meta_start)
    (mask_count,) = cur.take("<H", "mask count")
    masks = []
    for i in range(mask_count):
        rec_start = cur.pos
        label, x0, y0, w, h, run_count = cur.take("<iHHHHI", f"mask {i} header")
        if w == 0 or h == 0:
            raise MaskFormatError(f"mask {i} has empty crop {w}x{h}", rec_start)
        if x0 + w > width or y0 + h > height:
            raise MaskFormatError(f"mask {i} crop exceeds image bounds", rec_start)
        if run_count == 0:
            raise MaskFormatError(f"mask {i} has no runs", rec_start)
        runs_start = cur.pos
        raw = cur.take_bytes(8 * run_count, f"mask {i} runs")
        runs = np.frombuffer(raw, dtype="<u4")
        starts, lengths = runs[0::2].astype(np.int64), runs[1::2].astype(np.int64)
        ends = starts + lengths
        if (lengths <= 0).any() or ends[-1] > w * h or (starts[1:] < ends[:-1]).any():
            raise MaskFormatError(f"mask {i} has invalid or overlapping runs", runs_start)
        flat = np.zeros(w * h, dtype=bool)
        for s, e in zip(starts, ends):
            flat[s:e] = True
        masks.append(KnobMask(label, flat.reshape(h, w), int(x0), int(y0)))
    if cur.pos != len(blob):
        raise MaskFormatError(f"{len(blob) - cur.pos} trailing bytes", cur.pos)
    try:
        return Observation(
            width_px=width,
            height_px=height,
            z_mm=z_mm,
            masks=tuple(masks),
            reflection_px=reflection,
            meta=tuple(meta_doc.items()),
        )
    except ValueError as exc:
        raise MaskFormatError(f"decoded container violates invariants: {exc}", 0) from None


def write_observation(path, obs: Observation) -> None:
    Path(path).write_bytes(encode_observation(obs))


def read_observation(path) -> Observation:
    return decode_observation(Path(path).read_bytes())


class ObservationProvider(Protocol):
    """Anything that can produce Observations: the simulator during
    tests and experiments, a replay of recorded files, or (out of
    scope here) a real camera feeding real segmentation output."""

    def capture(self, tool_pose=None) -> Observation: ...


class ReplayProvider:
    """Replays recorded observation containers.

    Pointed at a file it returns that observation on every capture;
    pointed at a directory it steps through the files in name order and
    raises ObservationError when exhausted.
    """

    def __init__(self, path):
        self.path = Path(path)
        if self.path.is_dir():
            self._files = sorted(p for p in self.path.iterdir() if p.is_file())
            if not self._files:
                raise ObservationError(f"no observation files in {self.path}")
            self._single = None
        elif self.path.is_file():
            self._files = None
            self._single = read_observation(self.path)
        else:
            raise ObservationError(f"no such file or directory: {self.path}")
        self._index = 0

    def capture(self, tool_pose=None) -> Observation:
        if self._single is not None:
            return self._single
        if self._index >= len(self._files):
            raise ObservationError(
                f"replay exhausted after {len(self._files)} observations from {self.path}"
            )
        obs = read_observation(self._files[self._index])
        self._index += 1
        return obs
