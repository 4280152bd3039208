"""
Data model and on-disk formats for volumes, centerlines and dataset splits.

VOL format: a one-line ASCII header ``VOL <V_x> <V_y> <V_z>\\n`` followed by
raw little-endian float32 voxels with x fastest, i.e. the voxel (x, y, z)
lives at flat index ``x + V_x * (y + V_y * z)``.

Centerline format: one ``x y z`` integer triple per line, sorted
lexicographically.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from errors import DataError, FormatError

logger = logging.getLogger(__name__)

VOLUME_MAGIC = "VOL"
VOXEL_DTYPE = np.dtype("<f4")


@dataclass(frozen=True, eq=False)
class Volume:
    """Dense 3D intensity grid indexed as ``voxels[x, y, z]``"""

    voxels: np.ndarray

    def __post_init__(self):
        voxels = np.asarray(self.voxels, dtype=np.float32)
        if voxels.ndim != 3 or min(voxels.shape) < 1:
            raise DataError(f"volume must be 3D with positive dims, got shape {voxels.shape}")
        if not np.all(np.isfinite(voxels)):
            raise DataError("volume contains non-finite intensities")
        voxels = voxels.copy()
        voxels.setflags(write=False)
        object.__setattr__(self, "voxels", voxels)

    @classmethod
    def from_flat(cls, dims, values):
        """Build from an x-fastest flat array"""
        values = np.asarray(values, dtype=np.float32)
        if values.size != int(np.prod(dims)):
            raise DataError(f"expected {int(np.prod(dims))} voxels for dims {tuple(dims)}, got {values.size}")
        return cls(values.reshape(tuple(dims), order="F"))

    @property
    def dims(self):
        return tuple(int(v) for v in self.voxels.shape)

    @property
    def flat(self):
        return self.voxels.ravel(order="F")

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.voxels, other.voxels)


@dataclass(frozen=True, eq=False)
class Centerline:
    """Set of integer voxel coordinates, kept unique and lexicographically sorted"""

    points: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.size == 0:
            pts = np.zeros((0, 3), dtype=np.int64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DataError(f"centerline points must have shape (M, 3), got {pts.shape}")
        if not np.issubdtype(pts.dtype, np.integer):
            if not np.all(np.equal(np.mod(pts, 1), 0)):
                raise DataError("centerline points must be integer triples")
        pts = np.unique(pts.astype(np.int64), axis=0)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def from_points(cls, points: Iterable[Sequence[int]]):
        return cls(np.array(list(points), dtype=np.int64).reshape(-1, 3))

    def __len__(self):
        return int(self.points.shape[0])

    def __iter__(self):
        return (tuple(int(c) for c in row) for row in self.points)

    def __eq__(self, other):
        if not isinstance(other, Centerline):
            return NotImplemented
        return np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())

    def as_set(self):
        return frozenset(iter(self))

    def inside(self, dims):
        """True when every point lies in [0, V_a) on each axis"""
        if len(self) == 0:
            return True
        return bool(np.all(self.points >= 0) and np.all(self.points < np.asarray(dims)))

    def check_inside(self, dims, label="centerline"):
        if not self.inside(dims):
            bad = self.points[np.any((self.points < 0) | (self.points >= np.asarray(dims)), axis=1)][0]
            raise DataError(f"{label} point {tuple(int(c) for c in bad)} lies outside dims {tuple(dims)}")


@dataclass(frozen=True)
class DatasetCase:
    id: str
    volume: Volume
    centerline: Centerline

    def __post_init__(self):
        self.centerline.check_inside(self.volume.dims, label=f"case {self.id}")


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple = (0.7, 0.1, 0.2)
    seed: int = 0

    def __post_init__(self):
        ratios = tuple(float(r) for r in self.ratios)
        if len(ratios) != 3:
            raise DataError(f"split needs (train, val, test) ratios, got {ratios}")
        if any(r < 0 for r in ratios):
            raise DataError(f"split ratios must be non-negative, got {ratios}")
        if abs(sum(ratios) - 1.0) > 1e-9:
            raise DataError(f"split ratios must sum to 1, got {ratios} (sum {sum(ratios)})")
        object.__setattr__(self, "ratios", ratios)


def save_volume(v: Volume, path):
    """Write a volume in VOL format"""
    path = Path(path)
    header = f"{VOLUME_MAGIC} {v.dims[0]} {v.dims[1]} {v.dims[2]}\n".encode("ascii")
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(v.flat.astype(VOXEL_DTYPE).tobytes())
    except OSError as e:
        raise FormatError(f"cannot write volume: {e}", path=path) from e
    return path


def load_volume(path) -> Volume:
    """Read a VOL file, validating header, payload length and finiteness"""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise FormatError(f"cannot read volume: {e}", path=path) from e

    newline = raw.find(b"\n")
    if newline < 0:
        raise FormatError("missing header line", path=path, offset=0)
    try:
        tokens = raw[:newline].decode("ascii").split()
    except UnicodeDecodeError:
        raise FormatError("header is not ASCII", path=path, offset=0)
    if len(tokens) != 4 or tokens[0] != VOLUME_MAGIC:
        raise FormatError(f"malformed header {raw[:newline]!r}", path=path, offset=0)
    try:
        dims = tuple(int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"non-integer dims in header {raw[:newline]!r}", path=path, offset=0)
    if min(dims) < 1:
        raise FormatError(f"dims must be positive, got {dims}", path=path, offset=0)

    offset = newline + 1
    expected = math.prod(dims) * VOXEL_DTYPE.itemsize
    payload = raw[offset:]
    if len(payload) < expected:
        raise FormatError(
            f"truncated payload: expected {expected} bytes, found {len(payload)}",
            path=path, offset=offset + len(payload),
        )
    if len(payload) > expected:
        raise FormatError(
            f"trailing data after {expected} payload bytes", path=path, offset=offset + expected
        )

    values = np.frombuffer(payload, dtype=VOXEL_DTYPE)
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError("non-finite voxel", path=path, offset=offset + int(bad[0]) * VOXEL_DTYPE.itemsize)
    return Volume.from_flat(dims, values)


def save_centerline(c: Centerline, path):
    """Write one sorted ``x y z`` line per point"""
    path = Path(path)
    lines = "".join(f"{x} {y} {z}\n" for x, y, z in c)
    try:
        path.write_text(lines, encoding="ascii")
    except OSError as e:
        raise FormatError(f"cannot write centerline: {e}", path=path) from e
    return path


def load_centerline(path) -> Centerline:
    """Parse a centerline text file; duplicates collapse, bad tokens raise with the line number"""
    path = Path(path)
    try:
        text = path.read_text(encoding="ascii")
    except (OSError, UnicodeDecodeError) as e:
        raise FormatError(f"cannot read centerline: {e}", path=path) from e

    points = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        tokens = stripped.split()
        if len(tokens) != 3:
            raise FormatError(f"expected 3 integers, got {len(tokens)} tokens", path=path, line=lineno)
        try:
            points.append(tuple(int(t) for t in tokens))
        except ValueError:
            raise FormatError(f"non-integer token in {stripped!r}", path=path, line=lineno)
    return Centerline.from_points(points)


def split_dataset(cases: list, spec: SplitSpec):
    """Shuffle with the split seed and cut into (train, val, test); the remainder goes to train"""
    n = len(cases)
    nonzero = sum(1 for r in spec.ratios if r > 0)
    if n < nonzero:
        raise DataError(f"{n} cases cannot fill {nonzero} non-empty splits")

    n_val = int(math.floor(n * spec.ratios[1] + 1e-9))
    n_test = int(math.floor(n * spec.ratios[2] + 1e-9))
    n_train = n - n_val - n_test

    order = np.random.default_rng(spec.seed).permutation(n)
    shuffled = [cases[i] for i in order]
    train = shuffled[:n_train]
    val = shuffled[n_train:n_train + n_val]
    test = shuffled[n_train + n_val:]
    logger.debug(f"split {n} cases into {len(train)}/{len(val)}/{len(test)}")
    return train, val, test
