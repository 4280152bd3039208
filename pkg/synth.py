"""
Procedural synthetic vessel trees and their conditioning volumes.

Trees are grown voxel by voxel from a root on one volume face. A voxel is
only accepted if it is free and its single occupied 26-neighbour is the
voxel it grows from, so the 26-adjacency graph of every generated tree is
itself a tree (one component, no cycles).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import distance_transform_edt

from errors import CapacityError, ConfigError, DataError
from volume_io import Centerline, DatasetCase, Volume

logger = logging.getLogger(__name__)

MAX_RETRIES = 10
RETRY_SHRINK = 0.75
STEP_ATTEMPTS = 8
BRANCH_ANGLE = 0.6
INWARD_PULL = 0.15
NOISE_CLIP = 0.49

_NEIGHBOUR_OFFSETS = np.array(
    [(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1) if (dx, dy, dz) != (0, 0, 0)]
)


@dataclass(frozen=True)
class TreeSpec:
    dims: tuple = (32, 32, 32)
    depth: int = 3
    branch_prob: float = 0.4
    segment_len: tuple = (4, 8)
    curl: float = 0.35
    tube_radius: float = 1.5
    noise_sigma: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        object.__setattr__(self, "segment_len", tuple(int(v) for v in self.segment_len))
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ConfigError(f"dims must be three positive sizes, got {self.dims}")
        if not 0.0 <= self.branch_prob <= 1.0:
            raise ConfigError(f"branch_prob must lie in [0, 1], got {self.branch_prob}")
        lo, hi = self.segment_len
        if lo < 0 or lo > hi:
            raise ConfigError(f"segment_len needs 0 <= min <= max, got {self.segment_len}")
        if self.depth < 0:
            raise ConfigError(f"depth must be >= 0, got {self.depth}")
        if self.tube_radius < 0 or self.noise_sigma < 0 or self.curl < 0:
            raise ConfigError("tube_radius, noise_sigma and curl must be non-negative")


class _TreeGrower:
    """Random branching walk with the single-neighbour acceptance rule"""

    def __init__(self, spec: TreeSpec, rng):
        self.spec = spec
        self.rng = rng
        self.dims = np.asarray(spec.dims)
        self.centre = (self.dims - 1) / 2.0
        self.occupied = np.zeros(spec.dims, dtype=bool)
        self.points = []

    def _inside(self, v):
        return bool(np.all(v >= 0) and np.all(v < self.dims))

    def _occupied_neighbours(self, v):
        around = v + _NEIGHBOUR_OFFSETS
        ok = np.all((around >= 0) & (around < self.dims), axis=1)
        around = around[ok]
        return around[self.occupied[around[:, 0], around[:, 1], around[:, 2]]]

    def _accepts(self, v, parent):
        if not self._inside(v) or self.occupied[tuple(v)]:
            return False
        neighbours = self._occupied_neighbours(v)
        return len(neighbours) == 1 and np.array_equal(neighbours[0], parent)

    def _add(self, v):
        self.occupied[tuple(v)] = True
        self.points.append(tuple(int(c) for c in v))

    def _perturb(self, direction, amount):
        d = direction + self.rng.normal(0.0, amount, size=3)
        n = np.linalg.norm(d)
        return direction if n == 0 else d / n

    def _step(self, current, direction):
        """Next voxel one Chebyshev step along direction, or None"""
        for attempt in range(STEP_ATTEMPTS):
            d = self._perturb(direction, self.spec.curl * (1 + attempt))
            step = np.rint(d / np.max(np.abs(d))).astype(np.int64)
            if not np.any(step):
                continue
            candidate = current + step
            if self._accepts(candidate, current):
                return candidate, d
        return None, direction

    def root(self):
        axis = int(self.rng.integers(3))
        side = int(self.rng.integers(2))
        margin = np.maximum(self.dims // 4, 0)
        start = np.array([
            self.rng.integers(margin[a], max(self.dims[a] - margin[a], margin[a] + 1)) for a in range(3)
        ])
        start[axis] = 0 if side == 0 else self.dims[axis] - 1
        inward = np.zeros(3)
        inward[axis] = 1.0 if side == 0 else -1.0
        self._add(start)
        return start, self._perturb(inward, self.spec.curl)

    def grow(self, start, direction, depth, segment_len):
        """Trace one segment, then continue or bifurcate until depth runs out"""
        lo, hi = segment_len
        length = int(self.rng.integers(lo, hi + 1))
        current = start
        for _ in range(length):
            nxt, direction = self._step(current, direction)
            if nxt is None:
                return
            self._add(nxt)
            current = nxt
            to_centre = self.centre - current
            if np.any(to_centre):
                pulled = direction + INWARD_PULL * to_centre / np.linalg.norm(to_centre)
                direction = pulled / np.linalg.norm(pulled)
        if depth >= self.spec.depth:
            return
        if self.rng.random() < self.spec.branch_prob:
            axis = self._perturb(np.cross(direction, self.rng.normal(size=3)), 0.0)
            for sign in (1.0, -1.0):
                child = direction + sign * BRANCH_ANGLE * axis
                self.grow(current, child / np.linalg.norm(child), depth + 1, segment_len)
        else:
            self.grow(current, direction, depth + 1, segment_len)


def generate_tree(spec: TreeSpec, seed) -> Centerline:
    """Connected, loop-free voxel tree; deterministic given seed"""
    if spec.segment_len[1] == 0:
        raise ConfigError("segment_len max is 0: every segment would be empty")
    if min(spec.dims) < 2:
        raise ConfigError(f"dims {spec.dims} too small for a segment")
    rng = np.random.default_rng([seed, 0])
    grower = _TreeGrower(spec, rng)
    start, direction = grower.root()
    grower.grow(start, direction, 0, spec.segment_len)
    return Centerline.from_points(grower.points)


def rasterize(tree: Centerline, spec: TreeSpec, seed=0) -> Volume:
    """Unit intensity within tube_radius of the centerline plus truncated Gaussian noise, clamped to [-0.5, 1.5]"""
    tree.check_inside(spec.dims, label="tree")
    mask = np.ones(spec.dims, dtype=bool)
    if len(tree):
        mask[tuple(tree.points.T)] = False
        distance = distance_transform_edt(mask)
        voxels = (distance <= spec.tube_radius).astype(np.float64)
    else:
        voxels = np.zeros(spec.dims)
    if spec.noise_sigma > 0:
        noise = np.random.default_rng([seed, 1]).normal(0.0, spec.noise_sigma, size=spec.dims)
        # a 0.5 threshold always recovers the tube
        voxels += np.clip(noise, -NOISE_CLIP, NOISE_CLIP)
    return Volume(np.clip(voxels, -0.5, 1.5))


def make_case(spec: TreeSpec, seed, max_len, case_id):
    """One case, shrinking segments on overflow until the tree fits max_len"""
    current = spec
    for attempt in range(MAX_RETRIES + 1):
        tree = generate_tree(current, seed)
        if len(tree) <= max_len:
            return DatasetCase(case_id, rasterize(tree, spec, seed), tree)
        lo, hi = current.segment_len
        shrunk = (max(1, int(lo * RETRY_SHRINK)), max(1, int(hi * RETRY_SHRINK)))
        logger.debug(f"{case_id}: {len(tree)} points > L={max_len}, retry {attempt + 1} with segments {shrunk}")
        current = replace(current, segment_len=shrunk)
    raise DataError(
        f"{case_id}: {CapacityError(len(tree), max_len)} after {MAX_RETRIES} retries; increase max_len"
    )


def make_dataset(n, spec: TreeSpec, seed, max_len):
    """n cases seeded seed..seed+n-1, each with at most max_len centerline points"""
    if n < 1:
        raise ConfigError(f"number of cases must be >= 1, got {n}")
    cases = [make_case(spec, seed + i, max_len, f"case_{i:03d}") for i in range(n)]
    sizes = [len(c.centerline) for c in cases]
    logger.info(f"generated {n} cases, centerline sizes {min(sizes)}..{max(sizes)}")
    return cases
