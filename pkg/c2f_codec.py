"""
Coarse-to-fine (C2F) coordinate codec.

A centerline point becomes one row of a fixed L x d matrix:

    (flag, b_x^1..b_x^Bx, b_y^1..b_y^By, b_z^1..b_z^Bz, dx, dy, dz)

where the bits are the most-significant-first binary grid-cell index and the
offsets are the point's displacement from its cell centre, divided by the
cell size s_a = V_a / G_a. Binary values are embedded as bit_low / bit_high
so they can be diffused as continuous variables.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from errors import CapacityError, ConfigError, DataError
from volume_io import Centerline

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class C2FConfig:
    grid: tuple = (8, 8, 8)
    max_len: int = 64
    bit_low: float = -1.0
    bit_high: float = 1.0
    lam: float = 0.0
    flag_threshold: float = 0.0
    zero_padding: bool = False

    def __post_init__(self):
        grid = self.grid
        if isinstance(grid, int):
            grid = (grid, grid, grid)
        grid = tuple(int(g) for g in grid)
        if len(grid) != 3:
            raise ConfigError(f"grid needs three axes, got {grid}")
        for g in grid:
            if g < 2 or g & (g - 1):
                raise ConfigError(f"grid sizes must be powers of two >= 2, got {grid}")
        object.__setattr__(self, "grid", grid)
        if self.max_len < 1:
            raise ConfigError(f"max_len must be >= 1, got {self.max_len}")
        if not self.bit_low < self.lam < self.bit_high:
            raise ConfigError(f"need bit_low < lambda < bit_high, got {self.bit_low}, {self.lam}, {self.bit_high}")
        if not self.bit_low < self.flag_threshold < self.bit_high:
            raise ConfigError(
                f"need bit_low < flag_threshold < bit_high, got {self.bit_low}, {self.flag_threshold}, {self.bit_high}"
            )

    @property
    def bits_per_axis(self):
        return tuple(int(g).bit_length() - 1 for g in self.grid)

    @property
    def width(self):
        return 1 + sum(self.bits_per_axis) + 3

    @property
    def pad_value(self):
        return 0.0 if self.zero_padding else self.bit_low

    def bit_slices(self):
        """Column slice of each axis' bits within a row"""
        slices = []
        start = 1
        for b in self.bits_per_axis:
            slices.append(slice(start, start + b))
            start += b
        return slices

    @property
    def offset_slice(self):
        return slice(self.width - 3, self.width)

    def cell_sizes(self, dims):
        return np.asarray(dims, dtype=np.float64) / np.asarray(self.grid, dtype=np.float64)


@dataclass(frozen=True)
class C2FElement:
    flag: float
    bits: np.ndarray
    offsets: np.ndarray

    def as_row(self):
        return np.concatenate([[self.flag], self.bits, self.offsets]).astype(np.float64)


def binary_encode(g, n_bits):
    """MSB-first bits of a non-negative integer"""
    g = int(g)
    if n_bits < 1:
        raise ValueError(f"bit count must be >= 1, got {n_bits}")
    if not 0 <= g < (1 << n_bits):
        raise ValueError(f"index {g} out of range for {n_bits} bits")
    return np.array([(g >> (n_bits - 1 - k)) & 1 for k in range(n_bits)], dtype=np.int64)


def binary_decode(bits):
    """Inverse of binary_encode; accepts a (..., B) array of 0/1"""
    bits = np.asarray(bits, dtype=np.int64)
    weights = 1 << np.arange(bits.shape[-1] - 1, -1, -1, dtype=np.int64)
    return (bits * weights).sum(axis=-1)


def _grid_index(coords, dims, cfg):
    s = cfg.cell_sizes(dims)
    g = np.floor(np.asarray(coords, dtype=np.float64) / s).astype(np.int64)
    return np.clip(g, 0, np.asarray(cfg.grid) - 1), s


def encode_point(p, dims, cfg: C2FConfig) -> C2FElement:
    """Encode one voxel coordinate as a clean C2F element"""
    p = np.asarray(p, dtype=np.int64)
    if p.shape != (3,) or np.any(p < 0) or np.any(p >= np.asarray(dims)):
        raise DataError(f"point {tuple(p.tolist())} lies outside dims {tuple(dims)}")
    row = encode_rows(p[None, :], dims, cfg)[0]
    return C2FElement(flag=row[0], bits=row[1:cfg.width - 3], offsets=row[cfg.width - 3:])


def encode_rows(points, dims, cfg):
    """Clean valid rows for an (n, 3) array of in-bounds voxel coordinates"""
    g, s = _grid_index(points, dims, cfg)
    rows = np.empty((points.shape[0], cfg.width), dtype=np.float64)
    rows[:, 0] = cfg.bit_high
    for axis, (sl, n_bits) in enumerate(zip(cfg.bit_slices(), cfg.bits_per_axis)):
        shifts = np.arange(n_bits - 1, -1, -1)
        bits = (g[:, axis, None] >> shifts) & 1
        rows[:, sl] = np.where(bits == 1, cfg.bit_high, cfg.bit_low)
    centres = s * (g + 0.5)
    rows[:, cfg.offset_slice] = (points - centres) / s
    return rows


def encode_centerline(c: Centerline, dims, cfg: C2FConfig):
    """Valid rows in lexicographic point order, then padding"""
    if len(c) > cfg.max_len:
        raise CapacityError(len(c), cfg.max_len)
    c.check_inside(dims)
    v = np.full((cfg.max_len, cfg.width), cfg.pad_value, dtype=np.float64)
    if len(c):
        v[:len(c)] = encode_rows(c.points, dims, cfg)
    return v


def row_positions(v, dims, cfg: C2FConfig):
    """Unrounded voxel coordinates s * (g + 1/2 + offset) of every row, flags ignored"""
    s = cfg.cell_sizes(dims)
    g = np.stack([binary_decode(v[:, sl] > cfg.lam) for sl in cfg.bit_slices()], axis=1)
    return s * (g + 0.5 + v[:, cfg.offset_slice])


def decode_matrix(v, dims, cfg: C2FConfig) -> Centerline:
    """Threshold flags and bits, rebuild coordinates, round, clamp and deduplicate"""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2 or v.shape[1] != cfg.width:
        raise ValueError(f"expected a (L, {cfg.width}) matrix, got {v.shape}")
    valid = v[v[:, 0] > cfg.flag_threshold]
    if valid.shape[0] == 0:
        return Centerline()

    coords = np.rint(row_positions(valid, dims, cfg))
    coords = np.clip(coords, 0, np.asarray(dims) - 1)
    return Centerline(coords.astype(np.int64))


@dataclass(frozen=True)
class C2FCodec:
    """C2F codec bound to its config, sharing the surface of RawCoordinateCodec"""

    cfg: C2FConfig
    name: str = "c2f"

    @property
    def width(self):
        return self.cfg.width

    def encode_centerline(self, c, dims):
        return encode_centerline(c, dims, self.cfg)

    def decode_matrix(self, v, dims):
        return decode_matrix(v, dims, self.cfg)


@dataclass(frozen=True)
class RawCoordinateCodec:
    """Ablation codec: flag plus the coordinates rescaled to (-1, 1)"""

    max_len: int = 64
    bit_low: float = -1.0
    bit_high: float = 1.0
    flag_threshold: float = 0.0
    name: str = "raw"

    @property
    def width(self):
        return 4

    def encode_centerline(self, c, dims):
        if len(c) > self.max_len:
            raise CapacityError(len(c), self.max_len)
        c.check_inside(dims)
        v = np.full((self.max_len, 4), self.bit_low, dtype=np.float64)
        if len(c):
            v[:len(c), 0] = self.bit_high
            v[:len(c), 1:] = 2.0 * (c.points + 0.5) / np.asarray(dims, dtype=np.float64) - 1.0
        return v

    def decode_matrix(self, v, dims):
        v = np.asarray(v, dtype=np.float64)
        valid = v[v[:, 0] > self.flag_threshold]
        if valid.shape[0] == 0:
            return Centerline()
        dims_f = np.asarray(dims, dtype=np.float64)
        coords = np.rint((valid[:, 1:] + 1.0) * dims_f / 2.0 - 0.5)
        coords = np.clip(coords, 0, dims_f - 1)
        return Centerline(coords.astype(np.int64))


def count_roundtrip_failures(codec, centerlines, dims, noise_sigma, rng):
    """Perturb the valid rows of each encoding with N(0, sigma^2) and count changed decodes"""
    failures = 0
    for c in centerlines:
        v = codec.encode_centerline(c, dims)
        noisy = v.copy()
        n = len(c)
        noisy[:n] += rng.normal(0.0, noise_sigma, size=(n, v.shape[1]))
        if codec.decode_matrix(noisy, dims) != c:
            failures += 1
    logger.debug(f"{codec.name}: {failures}/{len(centerlines)} failures at sigma={noise_sigma}")
    return failures
