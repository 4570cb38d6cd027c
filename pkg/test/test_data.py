import math
from pathlib import Path

import numpy as np
import pytest
import torch

from depthsr.data import (
    DepthMap,
    RgbImage,
    SampleBank,
    StructureMap,
    TrainingSample,
    augment_rotate180,
    bicubic_downsample,
    bicubic_upsample,
    compute_structure_gt,
    extract_patches,
    fill_invalid,
    generate_toy_scene,
    load_rgbd_pairs,
    make_toy_dataset,
    modcrop,
    read_pfm,
    read_shards,
    save_rgb,
    write_pfm,
    write_png16,
    write_shards,
)
from depthsr.errors import ArchiveError, PairingError, ShapeError
from .conftest import pytest_assertrepr_compare


def keys_cubic(x: float) -> float:
    x = abs(x)
    if x <= 1:
        return 1.5 * x**3 - 2.5 * x**2 + 1
    if x <= 2:
        return -0.5 * x**3 + 2.5 * x**2 - 4 * x + 2
    return 0.0


def reference_resize_weights(in_len: int, out_len: int) -> np.ndarray:
    scale = out_len / in_len
    width = 4.0 / scale if scale < 1 else 4.0
    weights = np.zeros((out_len, in_len))
    for i in range(1, out_len + 1):
        u = i / scale + 0.5 * (1 - 1 / scale)
        left = math.floor(u - width / 2)
        row = {}
        for k in range(int(math.ceil(width)) + 2):
            j = left + k
            w = scale * keys_cubic((u - j) * scale) if scale < 1 else keys_cubic(u - j)
            m = j
            while m < 1 or m > in_len:
                m = 1 - m if m < 1 else 2 * in_len + 1 - m
            row[m - 1] = row.get(m - 1, 0.0) + w
        total = sum(row.values())
        for m, w in row.items():
            weights[i - 1, m] = w / total
    return weights


def reference_laplacian(values: np.ndarray) -> np.ndarray:
    h, w = values.shape
    out = np.zeros_like(values)
    for y in range(h):
        for x in range(w):
            def at(yy, xx):
                return values[min(max(yy, 0), h - 1), min(max(xx, 0), w - 1)]

            out[y, x] = 4 * at(y, x) - at(y - 1, x) - at(y + 1, x) - at(y, x - 1) - at(y, x + 1)
    return out


def make_sample(seed: int = 0, size: int = 16, scale: int = 4) -> TrainingSample:
    rng = np.random.default_rng(seed)
    d_hr = DepthMap(rng.uniform(0.1, 0.9, size=(size, size)), name=f"s{seed}")
    return TrainingSample(
        d_lr=bicubic_downsample(d_hr, scale),
        d_hr=d_hr,
        rgb=RgbImage(rng.uniform(0.0, 1.0, size=(size, size, 3))),
        s_gt=compute_structure_gt(d_hr),
        scale=scale,
        provenance={"source": d_hr.name, "origin": [0, 0], "rotated": False},
    )


def write_pair(directory: Path, stem: str, depth: np.ndarray, rgb: np.ndarray = None) -> None:
    if rgb is None:
        rgb = np.full(depth.shape + (3,), 0.5)
    save_rgb(directory / f"{stem}_color.png", rgb)
    write_png16(directory / f"{stem}_depth.png", depth)


def test_depth_map_rejects_out_of_range():
    with pytest.raises(ValueError):
        DepthMap(np.full((4, 4), 1.5))
    with pytest.raises(ValueError):
        DepthMap(np.array([[0.5, np.nan]]))
    with pytest.raises(ShapeError):
        DepthMap(np.zeros(4))


def test_depth_map_comparison_report():
    a, b = DepthMap(np.zeros((2, 2))), DepthMap(np.full((2, 2), 0.5))
    lines = pytest_assertrepr_compare("==", a, b)
    assert lines[0] == "DepthMaps differ:"
    assert lines[1].endswith("max abs diff 0.5")
    assert "inf" in pytest_assertrepr_compare("==", a, DepthMap(np.zeros((2, 3))))[1]
    assert pytest_assertrepr_compare("==", a, 1) is None


def test_training_sample_dimensions():
    d_hr = DepthMap(np.full((16, 16), 0.5))
    rgb = RgbImage(np.zeros((16, 16, 3)))
    s_gt = compute_structure_gt(d_hr)
    with pytest.raises(ShapeError):
        TrainingSample(DepthMap(np.full((5, 4), 0.5)), d_hr, rgb, s_gt, scale=4)
    with pytest.raises(ShapeError):
        TrainingSample(bicubic_downsample(d_hr, 4), d_hr, RgbImage(np.zeros((8, 8, 3))), s_gt, scale=4)
    with pytest.raises(ShapeError):
        TrainingSample(bicubic_downsample(d_hr, 4), d_hr, rgb, s_gt, scale=3)


def test_load_rgbd_pairs(tmp_path):
    depth = np.arange(1, 65, dtype=np.float64).reshape(8, 8) * 100
    write_pair(tmp_path, "art", depth)
    pairs = load_rgbd_pairs(tmp_path)
    assert len(pairs) == 1
    rgb, d = pairs[0]
    assert rgb.size == d.size == (8, 8)
    assert d.name == "art"
    assert d.values.max() == 1.0
    assert d.unit_scale == 6400.0
    np.testing.assert_allclose(d.values * d.unit_scale, depth)


def test_load_rgbd_pairs_normalizes_per_dataset(tmp_path):
    write_pair(tmp_path, "a", np.full((4, 4), 1000.0))
    write_pair(tmp_path, "b", np.full((4, 4), 4000.0))
    pairs = load_rgbd_pairs(tmp_path)
    assert [d.name for _, d in pairs] == ["a", "b"]
    assert pairs[0][1].values[0, 0] == 0.25
    assert pairs[1][1].values[0, 0] == 1.0


def test_load_rgbd_pairs_empty_directory(tmp_path):
    assert load_rgbd_pairs(tmp_path) == []


def test_load_rgbd_pairs_orphan(tmp_path):
    save_rgb(tmp_path / "art_color.png", np.zeros((4, 4, 3)))
    with pytest.raises(PairingError, match="art_depth"):
        load_rgbd_pairs(tmp_path)


def test_load_rgbd_pairs_unreadable(tmp_path):
    save_rgb(tmp_path / "art_color.png", np.zeros((4, 4, 3)))
    (tmp_path / "art_depth.png").write_bytes(b"not a png")
    with pytest.raises(OSError, match="art_depth.png"):
        load_rgbd_pairs(tmp_path)


def test_load_rgbd_pairs_pfm(tmp_path):
    depth = np.linspace(1.0, 2.0, 12).reshape(3, 4)
    save_rgb(tmp_path / "cones_color.png", np.zeros((3, 4, 3)))
    write_pfm(tmp_path / "cones_depth.pfm", depth)
    _, d = load_rgbd_pairs(tmp_path, "pfm")[0]
    np.testing.assert_allclose(d.values * d.unit_scale, depth, rtol=1e-6)


def test_pfm_row_order(tmp_path):
    values = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    write_pfm(tmp_path / "d.pfm", values)
    np.testing.assert_array_equal(read_pfm(tmp_path / "d.pfm"), values)


def test_fill_invalid_nearest():
    raw = np.array([[5.0, 0.0, 0.0, 9.0]])
    np.testing.assert_array_equal(fill_invalid(raw), [[5.0, 5.0, 9.0, 9.0]])
    with pytest.raises(ValueError):
        fill_invalid(np.zeros((2, 2)))


def test_bicubic_preserves_constants():
    d = bicubic_downsample(DepthMap(np.full((64, 64), 0.5)), 4)
    assert d.size == (16, 16)
    np.testing.assert_allclose(d.values, 0.5, atol=1e-9)

    up = bicubic_upsample(DepthMap(np.full((8, 8), 0.3)), 4)
    np.testing.assert_allclose(bicubic_downsample(up, 4).values, 0.3, atol=1e-9)


def test_bicubic_matches_reference_on_ramp():
    yy, xx = np.mgrid[0:256, 0:256]
    ramp = 0.2 + 0.6 * (yy + 2 * xx) / (3 * 255)
    out = bicubic_downsample(DepthMap(ramp), 2)
    rows = reference_resize_weights(256, 128)
    expected = rows @ ramp @ rows.T
    assert out.size == (128, 128)
    np.testing.assert_allclose(out.values, expected, atol=1e-6)


def test_bicubic_upsample_matches_reference():
    rng = np.random.default_rng(3)
    lr = rng.uniform(0.3, 0.7, size=(6, 5))
    up = bicubic_upsample(DepthMap(lr), 2)
    expected = reference_resize_weights(6, 12) @ lr @ reference_resize_weights(5, 10).T
    np.testing.assert_allclose(up.values, np.clip(expected, 0, 1), atol=1e-9)


def test_bicubic_requires_divisible_size():
    with pytest.raises(ShapeError):
        bicubic_downsample(DepthMap(np.zeros((65, 65))), 2)


def test_modcrop():
    d = modcrop(DepthMap(np.zeros((65, 70)), name="x"), 4)
    assert d.size == (64, 68)
    assert d.name == "x"


def test_structure_gt_constant_is_zero():
    s = compute_structure_gt(DepthMap(np.full((9, 7), 0.42)))
    np.testing.assert_array_equal(s.values, 0.0)


def test_structure_gt_impulse():
    values = np.zeros((5, 5))
    values[2, 2] = 1.0
    s = compute_structure_gt(DepthMap(values)).values
    expected = np.zeros((5, 5))
    expected[2, 2] = 4.0
    expected[1, 2] = expected[3, 2] = expected[2, 1] = expected[2, 3] = -1.0
    np.testing.assert_array_equal(s, expected)


def test_structure_gt_step_edge():
    values = np.zeros((6, 8))
    values[:, 4:] = 1.0
    s = compute_structure_gt(DepthMap(values)).values
    np.testing.assert_allclose(s, reference_laplacian(values))
    np.testing.assert_array_equal(s[:, 3], -1.0)
    np.testing.assert_array_equal(s[:, 4], 1.0)
    assert np.count_nonzero(s) == 12


def test_structure_gt_is_linear():
    rng = np.random.default_rng(1)
    d1, d2 = rng.uniform(size=(10, 12)), rng.uniform(size=(10, 12))
    a, b = 0.3, 0.6
    combined = compute_structure_gt(DepthMap(a * d1 + b * d2)).values
    separate = a * compute_structure_gt(DepthMap(d1)).values + b * compute_structure_gt(DepthMap(d2)).values
    np.testing.assert_allclose(combined, separate, atol=1e-9)
    np.testing.assert_allclose(compute_structure_gt(DepthMap(d1)).values, reference_laplacian(d1), atol=1e-12)


def test_extract_patches():
    rgb, depth = generate_toy_scene(0, 512)
    samples = extract_patches([(rgb, depth)], 256, 10, 4, seed=7)
    assert len(samples) == 10
    for s in samples:
        assert s.d_hr.size == (256, 256)
        assert s.d_lr.size == (64, 64)
        assert s.rgb.size == s.s_gt.size == (256, 256)
        top, left = s.provenance["origin"]
        np.testing.assert_array_equal(s.d_hr.values, depth.values[top : top + 256, left : left + 256])
        assert s.s_gt == compute_structure_gt(s.d_hr)
        assert s.d_lr == bicubic_downsample(s.d_hr, 4)


def test_extract_patches_deterministic():
    pairs = [generate_toy_scene(1, 64), generate_toy_scene(2, 64)]
    first = extract_patches(pairs, 32, 6, 2, seed=11)
    second = extract_patches(pairs, 32, 6, 2, seed=11)
    assert [s.provenance for s in first] == [s.provenance for s in second]
    assert first == second


def test_extract_patches_edge_cases():
    pairs = [generate_toy_scene(0, 64)]
    assert extract_patches(pairs, 32, 0, 4, seed=0) == []
    with pytest.raises(ShapeError, match="toy0"):
        extract_patches(pairs, 128, 1, 4, seed=0)
    with pytest.raises(ShapeError):
        extract_patches(pairs, 30, 1, 4, seed=0)


def test_augment_rotate180():
    sample = make_sample()
    rotated = augment_rotate180(sample)
    assert rotated.d_hr.values[-1, -1] == sample.d_hr.values[0, 0]
    assert rotated.rgb.values[-1, -1, 2] == sample.rgb.values[0, 0, 2]
    assert rotated.provenance["rotated"] is True
    assert augment_rotate180(rotated) == sample
    assert augment_rotate180(rotated).provenance == sample.provenance


def test_augment_rotate180_constant():
    d_hr = DepthMap(np.full((8, 8), 0.5))
    sample = TrainingSample(
        bicubic_downsample(d_hr, 2), d_hr, RgbImage(np.full((8, 8, 3), 0.2)), compute_structure_gt(d_hr), 2
    )
    assert augment_rotate180(sample) == sample


def test_toy_scene_deterministic():
    rgb1, d1 = generate_toy_scene(5, 48)
    rgb2, d2 = generate_toy_scene(5, 48)
    assert rgb1 == rgb2
    assert d1 == d2
    assert d1.values.min() >= 0.0 and d1.values.max() <= 1.0


def test_toy_scene_modes():
    _, depth = generate_toy_scene(0, 64)
    values, counts = np.unique(depth.values, return_counts=True)
    plateaus = values[counts >= 16]
    # object planes sit below the sloped background
    assert len(plateaus[plateaus < 0.6]) >= 3
    assert np.count_nonzero(depth.values > 0.6) >= 16


def test_toy_scene_minimum_size():
    with pytest.raises(ValueError):
        generate_toy_scene(0, 31)


def test_make_toy_dataset_loads(tmp_path):
    stems = make_toy_dataset(tmp_path, 3, 40, seed=4)
    assert stems == ["toy00004", "toy00005", "toy00006"]
    pairs = load_rgbd_pairs(tmp_path)
    assert [d.name for _, d in pairs] == stems
    assert all(d.size == (40, 40) for _, d in pairs)


def test_shards_round_trip(tmp_path):
    samples = [make_sample(seed) for seed in range(5)]
    manifest = write_shards(samples, tmp_path, shard_size=2)
    assert manifest["count"] == 5
    assert [e["count"] for e in manifest["shards"]] == [2, 2, 1]
    loaded = read_shards(tmp_path)
    assert loaded == samples
    assert [s.provenance for s in loaded] == [s.provenance for s in samples]


def test_shards_reproducible(tmp_path):
    pairs = [generate_toy_scene(3, 64)]
    first = write_shards(extract_patches(pairs, 32, 4, 4, seed=2), tmp_path / "a")
    second = write_shards(extract_patches(pairs, 32, 4, 4, seed=2), tmp_path / "b")
    assert first["shards"] == second["shards"]


def test_shards_checksum(tmp_path):
    samples = [make_sample(seed) for seed in range(2)]
    write_shards(samples, tmp_path)
    archive = torch.load(tmp_path / "shard0000.pt", weights_only=True)
    archive["d_hr"][0, 0, 0] += 0.01
    torch.save(archive, tmp_path / "shard0000.pt")
    with pytest.raises(ArchiveError, match="checksum"):
        read_shards(tmp_path)


def test_sample_bank_batches():
    bank = SampleBank([make_sample(seed) for seed in range(5)], augment=True)
    assert len(bank) == 10
    d_lr, d_hr, rgb, s_gt = next(iter(bank.batches(4, seed=0, epoch=1)))
    assert d_lr.shape == (4, 1, 4, 4)
    assert d_hr.shape == s_gt.shape == (4, 1, 16, 16)
    assert rgb.shape == (4, 3, 16, 16)
    assert d_hr.dtype == torch.float32

    order = [b[1] for b in bank.batches(3, seed=2, epoch=5)]
    again = [b[1] for b in bank.batches(3, seed=2, epoch=5)]
    assert all(torch.equal(a, b) for a, b in zip(order, again))


def test_structure_map_to_tensor():
    s = StructureMap(np.ones((3, 5)))
    assert s.to_tensor().shape == (1, 1, 3, 5)
