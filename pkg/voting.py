"""
Voxel-wise voting over K independently sampled centerlines.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from tqdm import tqdm

from c2f_codec import decode_matrix
from diffusion import sample
from errors import ConfigError, DataError
from volume_io import Centerline

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class VotingConfig:
    K: int = 10
    tau: int | None = None
    seed_base: int = 1000
    max_seeds: int = 100
    workers: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if self.tau is not None and not 1 <= self.tau <= self.K:
            raise ConfigError(f"tau must lie in 1..K={self.K}, got {self.tau}")
        if self.K > self.max_seeds:
            raise ConfigError(f"K={self.K} exceeds max_seeds={self.max_seeds}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")


@dataclass(frozen=True, eq=False)
class VoteGrid:
    """Sparse per-voxel vote counts; voxels with zero votes are absent"""

    dims: tuple
    counts: dict
    K: int

    def as_arrays(self):
        """Sorted (M, 3) voxel array and matching counts"""
        if not self.counts:
            return np.zeros((0, 3), dtype=np.int64), np.zeros(0, dtype=np.int64)
        keys = sorted(self.counts)
        return np.array(keys, dtype=np.int64), np.array([self.counts[k] for k in keys], dtype=np.int64)

    def size_at(self, tau):
        return sum(1 for c in self.counts.values() if c >= tau)


@dataclass(frozen=True)
class VoteResult:
    aggregated: Centerline
    tau_used: int
    per_sample_sizes: tuple
    grid: VoteGrid | None = None

    @property
    def K(self):
        return len(self.per_sample_sizes)


def vote(samples, dims) -> VoteGrid:
    """psi(x) = number of samples containing x (membership, not multiplicity)"""
    if len(samples) < 1:
        raise DataError("voting needs at least one sample")
    for k, s in enumerate(samples):
        if not s.inside(dims):
            raise DataError(f"sample {k} has points outside dims {tuple(dims)}")
    stacked = [s.points for s in samples if len(s)]
    if not stacked:
        return VoteGrid(tuple(dims), {}, len(samples))
    voxels, counts = np.unique(np.concatenate(stacked), axis=0, return_counts=True)
    grid = {tuple(int(c) for c in v): int(n) for v, n in zip(voxels, counts)}
    return VoteGrid(tuple(dims), grid, len(samples))


def threshold_votes(grid: VoteGrid, tau) -> Centerline:
    """Voxels with at least tau votes"""
    if not 1 <= tau <= grid.K:
        raise ValueError(f"tau must lie in 1..K={grid.K}, got {tau}")
    return Centerline.from_points(v for v, c in grid.counts.items() if c >= tau)


def auto_tau(grid: VoteGrid, sizes) -> int:
    """argmin over tau of | mean sample size - |vote^tau| |, ties to the smallest tau"""
    if len(sizes) != grid.K:
        raise ValueError(f"expected {grid.K} sample sizes, got {len(sizes)}")
    _, counts = grid.as_arrays()
    histogram = np.bincount(counts, minlength=grid.K + 1)
    # |vote^tau| for tau = 1..K
    at_least = np.cumsum(histogram[::-1])[::-1][1:grid.K + 1]
    objective = np.abs(np.mean(sizes) - at_least)
    return int(np.argmin(objective)) + 1


def aggregate_samples(samples, dims, tau=None) -> VoteResult:
    """Vote over decoded samples and threshold at tau (auto when None)"""
    grid = vote(samples, dims)
    sizes = tuple(len(s) for s in samples)
    tau_used = auto_tau(grid, sizes) if tau is None else int(tau)
    aggregated = threshold_votes(grid, tau_used)
    logger.debug(f"K={grid.K} tau={tau_used} |vote|={len(aggregated)} mean size={np.mean(sizes):.1f}")
    return VoteResult(aggregated, tau_used, sizes, grid)


def draw_samples(denoiser, volume, seeds, sampler_cfg, codec_cfg, workers=1, progress=False):
    """Sample and decode one centerline per seed, returned in seed order"""

    def run(seed):
        v0 = sample(denoiser, volume, replace(sampler_cfg, seed=int(seed)))
        return decode_matrix(v0, volume.dims, codec_cfg)

    seeds = list(seeds)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(tqdm(pool.map(run, seeds), total=len(seeds), desc="sample", disable=not progress))
    else:
        results = [run(s) for s in tqdm(seeds, desc="sample", disable=not progress)]
    return results


def aggregate(denoiser, volume, voting_cfg: VotingConfig, sampler_cfg, codec_cfg, progress=False) -> VoteResult:
    """K samples with seeds seed_base..seed_base+K-1, voted and thresholded"""
    seeds = range(voting_cfg.seed_base, voting_cfg.seed_base + voting_cfg.K)
    samples = draw_samples(denoiser, volume, seeds, sampler_cfg, codec_cfg, voting_cfg.workers, progress)
    result = aggregate_samples(samples, volume.dims, voting_cfg.tau)
    logger.info(f"aggregated K={voting_cfg.K} samples at tau={result.tau_used}: {len(result.aggregated)} voxels")
    return result


def dump_vote_grid(grid: VoteGrid, path):
    """Write ``x y z count`` lines in voxel order"""
    voxels, counts = grid.as_arrays()
    lines = "".join(f"{x} {y} {z} {n}\n" for (x, y, z), n in zip(voxels.tolist(), counts.tolist()))
    Path(path).write_text(lines, encoding="ascii")
    return Path(path)
