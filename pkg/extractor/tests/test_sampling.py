"""Patch-grid geometry: scale sizes, grid arithmetic, source mapping."""

import pytest

from patchextract.errors import ConfigError
from patchextract.sampling import (
    SamplingSpec,
    grid_positions,
    plan_patches,
    resized_dims,
    source_bbox,
)


def test_default_scale_sizes_shrink_geometrically():
    assert SamplingSpec().scale_sizes() == [256, 181, 128]
    assert SamplingSpec(n_scales=1).scale_sizes() == [256]
    assert SamplingSpec(n_scales=4).scale_sizes() == [256, 181, 128, 91]


def test_grid_on_256_is_5_by_5():
    positions = grid_positions(256, 256, 128, 32)
    assert len(positions) == 25
    assert positions[0] == (0, 0)
    assert positions[4] == (128, 0)  # row-major: x varies first
    assert positions[-1] == (128, 128)


def test_grid_empty_when_patch_does_not_fit():
    assert grid_positions(100, 256, 128, 32) == []
    assert grid_positions(128, 128, 128, 32) == [(0, 0)]


def test_resized_dims_preserve_aspect():
    assert resized_dims(256, 256, 256) == (256, 256)
    assert resized_dims(512, 384, 256) == (341, 256)
    assert resized_dims(384, 512, 256) == (256, 341)
    assert resized_dims(512, 512, 128) == (128, 128)


def test_source_bbox_maps_back_to_source_pixels():
    # 512x512 seen at 256x256: factor 2 everywhere
    assert source_bbox(32, 64, 128, (256, 256), (512, 512)) == (
        64,
        128,
        256,
        256,
    )
    # identity when no resizing happened
    assert source_bbox(0, 0, 128, (256, 256), (256, 256)) == (0, 0, 128, 128)


def test_plan_counts_per_scale_for_square_256():
    plan = plan_patches(256, 256, SamplingSpec())
    by_scale = {}
    for pp in plan:
        by_scale.setdefault(pp.scale_index, []).append(pp)
    assert {s: len(v) for s, v in by_scale.items()} == {0: 25, 1: 4, 2: 1}
    # scales ascend and the grid within a scale is row-major
    assert [pp.scale_index for pp in plan] == sorted(
        pp.scale_index for pp in plan
    )
    assert [pp.crop for pp in by_scale[0][:5]] == [
        (0, 0),
        (32, 0),
        (64, 0),
        (96, 0),
        (128, 0),
    ]


def test_plan_is_deterministic():
    a = plan_patches(500, 300, SamplingSpec())
    b = plan_patches(500, 300, SamplingSpec())
    assert a == b


def test_non_square_grid_count():
    # 256x512 resized keeps 256 as the smaller side: 5 x 13 grid at scale 0
    plan = [
        pp
        for pp in plan_patches(256, 512, SamplingSpec(n_scales=1))
        if pp.scale_index == 0
    ]
    assert len(plan) == 65


def test_spec_invariants():
    with pytest.raises(ConfigError):
        SamplingSpec(stride=129).validate()
    with pytest.raises(ConfigError):
        SamplingSpec(stride=0).validate()
    with pytest.raises(ConfigError):
        SamplingSpec(n_scales=0).validate()
    with pytest.raises(ConfigError):
        SamplingSpec(patch=0).validate()
    SamplingSpec().validate()
