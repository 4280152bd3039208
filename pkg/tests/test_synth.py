import numpy as np
import pytest

from errors import ConfigError, DataError
from metrics import betti_numbers
from synth import TreeSpec, generate_tree, make_case, make_dataset, rasterize
from volume_io import Centerline


def test_single_polyline_topology():
    spec = TreeSpec(dims=(24, 24, 24), depth=0, branch_prob=0.0, segment_len=(6, 10))
    tree = generate_tree(spec, seed=3)
    report = betti_numbers(tree)
    assert (report.betti0, report.betti1) == (1, 0)
    assert len(tree) >= 2


def test_trees_are_connected_and_loop_free():
    spec = TreeSpec()
    for seed in range(100):
        report = betti_numbers(generate_tree(spec, seed))
        assert (report.betti0, report.betti1) == (1, 0), seed


def test_tree_is_seed_deterministic():
    spec = TreeSpec(branch_prob=0.8)
    assert generate_tree(spec, 11) == generate_tree(spec, 11)
    assert generate_tree(spec, 11) != generate_tree(spec, 12)


def test_tree_inside_dims():
    spec = TreeSpec(dims=(10, 12, 14), depth=4, branch_prob=1.0)
    for seed in range(20):
        assert generate_tree(spec, seed).inside(spec.dims)


def test_degenerate_specs():
    with pytest.raises(ConfigError):
        generate_tree(TreeSpec(segment_len=(0, 0)), 0)
    with pytest.raises(ConfigError):
        TreeSpec(branch_prob=1.5)
    with pytest.raises(ConfigError):
        TreeSpec(segment_len=(5, 2))
    with pytest.raises(ConfigError):
        TreeSpec(tube_radius=-1)


def test_zero_radius_noise_free_volume_marks_only_the_centerline():
    spec = TreeSpec(dims=(16, 16, 16), tube_radius=0.0, noise_sigma=0.0)
    tree = generate_tree(spec, 4)
    voxels = rasterize(tree, spec).voxels
    assert {tuple(int(c) for c in p) for p in np.argwhere(voxels == 1.0)} == tree.as_set()
    assert np.all((voxels == 0.0) | (voxels == 1.0))


def test_noise_free_centerline_intensity():
    spec = TreeSpec(noise_sigma=0.0)
    tree = generate_tree(spec, 5)
    voxels = rasterize(tree, spec).voxels
    assert np.all(voxels[tuple(tree.points.T)] == 1.0)


def test_foreground_and_background_separate():
    spec = TreeSpec(noise_sigma=0.1)
    tree = generate_tree(spec, 6)
    clean = rasterize(tree, TreeSpec(noise_sigma=0.0)).voxels
    noisy = rasterize(tree, spec, seed=6).voxels
    assert noisy[clean == 1.0].mean() - noisy[clean == 0.0].mean() > 0.8
    assert noisy.min() >= -0.5 and noisy.max() <= 1.5


@pytest.mark.parametrize("sigma", [0.1, 0.2])
def test_half_threshold_contains_the_centerline(sigma):
    spec = TreeSpec(noise_sigma=sigma)
    for seed in range(5):
        tree = generate_tree(spec, seed)
        voxels = rasterize(tree, spec, seed=seed).voxels
        assert np.all(voxels[tuple(tree.points.T)] > 0.5)


def test_rasterize_is_seed_deterministic():
    spec = TreeSpec()
    tree = generate_tree(spec, 7)
    assert rasterize(tree, spec, 7) == rasterize(tree, spec, 7)


def test_rasterize_empty_tree():
    spec = TreeSpec(dims=(4, 4, 4), noise_sigma=0.0)
    assert np.all(rasterize(Centerline(), spec).voxels == 0.0)


def test_dataset_cases_fit_max_len():
    spec = TreeSpec(depth=4, branch_prob=0.9)
    cases = make_dataset(10, spec, seed=0, max_len=40)
    assert [c.id for c in cases] == [f"case_{i:03d}" for i in range(10)]
    assert all(len(c.centerline) <= 40 for c in cases)


def test_dataset_of_one():
    assert len(make_dataset(1, TreeSpec(), seed=0, max_len=64)) == 1


def test_dataset_cases_are_distinct():
    cases = make_dataset(100, TreeSpec(dims=(16, 16, 16)), seed=100, max_len=64)
    assert len({c.centerline for c in cases}) == 100


def test_persistent_overflow_advises_larger_max_len():
    with pytest.raises(DataError) as info:
        make_case(TreeSpec(depth=3, branch_prob=1.0), seed=0, max_len=1, case_id="case_000")
    assert "max_len" in str(info.value)


def test_empty_dataset_request():
    with pytest.raises(ConfigError):
        make_dataset(0, TreeSpec(), seed=0, max_len=64)
