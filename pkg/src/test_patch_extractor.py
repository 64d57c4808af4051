import math

import cv2
import numpy as np
import pytest
from scipy import stats

from errors import ContractViolationError
from patches.image_handler import ImageHandler, RawImage
from patches.patch_extractor import (
    PatchRecord,
    augment,
    center_crop_32,
    crop_side,
    extract_patch,
    sample_augmentation,
    to_grayscale,
)
from scene.model import Observation


def _textured(height=200, width=240, seed=0):
    rng = np.random.default_rng(seed)
    return RawImage.from_array(rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8))


def _bar_image(theta, size=201):
    """White bar through the image center along angle theta (image x right, y down)."""
    img = np.zeros((size, size), dtype=np.uint8)
    c = size // 2
    dx, dy = math.cos(theta), math.sin(theta)
    p0 = (int(round(c - 80 * dx)), int(round(c - 80 * dy)))
    p1 = (int(round(c + 80 * dx)), int(round(c + 80 * dy)))
    cv2.line(img, p0, p1, 255, thickness=5, lineType=cv2.LINE_AA)
    return RawImage.from_array(img), (float(c), float(c))


def test_crop_side_clamp():
    assert crop_side(1.0) == 20.0
    assert crop_side(4.0) == 48.0
    assert crop_side(15.0) == 128.0
    sides = [crop_side(s) for s in np.linspace(0.1, 20.0, 200)]
    assert sides == sorted(sides)


def test_identity_resample_matches_source_window():
    image = _textured()
    obs = Observation(image_id=3, xy=(100.0, 90.0), scale=4.0, orientation_rad=0.0)
    patch = extract_patch(image, obs, track_id=11)
    np.testing.assert_array_equal(patch.pixels, image.data[90 - 24:90 + 24, 100 - 24:100 + 24])
    assert (patch.image_id, patch.track_id, patch.crop_side_px) == (3, 11, 48.0)


def test_small_scale_records_clamped_side():
    patch = extract_patch(_textured(), Observation(1, (100.0, 100.0), 1.0))
    assert patch.crop_side_px == 20.0
    assert patch.pixels.shape == (48, 48, 3)


@pytest.mark.parametrize("theta_deg", [0.0, 30.0, 75.0, -45.0, 120.0])
def test_rotated_bar_comes_out_horizontal(theta_deg):
    image, center = _bar_image(math.radians(theta_deg))
    patch = extract_patch(image, Observation(1, center, 5.0, orientation_rad=math.radians(theta_deg)))
    gray = patch.pixels[:, :, 0].astype(float)
    # the bar mass concentrates on the center rows
    row_profile = gray.sum(axis=1)
    peak = int(np.argmax(row_profile))
    assert abs(peak - 24) <= 1
    assert gray[22:27, 4:44].mean() > 4 * gray[:10].mean() + 10
    assert gray[:10].mean() < 20 and gray[-10:].mean() < 20


def test_rotation_by_full_turn_is_equivalent():
    image = _textured()
    a = extract_patch(image, Observation(1, (120.0, 100.0), 3.0, orientation_rad=0.7))
    b = extract_patch(image, Observation(1, (120.0, 100.0), 3.0, orientation_rad=0.7 + 2 * math.pi))
    np.testing.assert_allclose(a.pixels.astype(int), b.pixels.astype(int), atol=1)


def test_edge_replication_near_border():
    image = _textured()
    patch = extract_patch(image, Observation(1, (2.0, 2.0), 8.0))
    assert patch.pixels.shape == (48, 48, 3)
    # top-left region samples only the replicated corner pixel
    np.testing.assert_array_equal(patch.pixels[0, 0], image.data[0, 0])


def test_center_crop_indexing():
    gradient = np.add.outer(np.arange(48), np.arange(48) * 100).astype(np.int64)
    crop = center_crop_32(gradient)
    assert crop.shape == (32, 32)
    np.testing.assert_array_equal(crop, gradient[8:40, 8:40])
    assert crop[0, 0] == 8 + 800 and crop[-1, -1] == 39 + 3900


def test_center_crop_rejects_wrong_size():
    with pytest.raises(ContractViolationError):
        center_crop_32(np.zeros((32, 32)))


def test_augment_identity_is_center_crop():
    pixels = _textured(48, 48).data
    np.testing.assert_array_equal(augment(pixels, angle_deg=0.0, scale=1.0), center_crop_32(pixels))


def test_augment_is_deterministic_per_seed():
    pixels = _textured(48, 48).data
    np.testing.assert_array_equal(augment(pixels, rng_seed=5), augment(pixels, rng_seed=5))
    assert augment(pixels, rng_seed=5).shape == (32, 32, 3)


def test_augmentation_ranges():
    rng = np.random.default_rng(0)
    draws = np.array([sample_augmentation(rng) for _ in range(10_000)])
    assert draws[:, 0].min() >= -22.5 and draws[:, 0].max() <= 22.5
    assert draws[:, 1].min() >= 1.0 and draws[:, 1].max() <= 1.1
    assert draws[:, 0].min() < -20 and draws[:, 0].max() > 20
    assert stats.kstest(draws[:, 0], "uniform", args=(-22.5, 45.0)).pvalue > 0.01


def test_grayscale_is_bt601():
    pixels = np.zeros((32, 32, 3), dtype=np.uint8)
    pixels[..., 0] = 255
    assert to_grayscale(pixels)[0, 0] == 76


def test_patch_record_rejects_bad_side():
    with pytest.raises(ContractViolationError):
        PatchRecord(np.zeros((48, 48, 3), np.uint8), 1, 1, (0.0, 0.0), 1.0, 0.0, 10.0)


def test_image_handler_round_trip(tmp_path):
    handler = ImageHandler(tmp_path)
    image = _textured(30, 40)
    handler.save("a.ppm", image)
    np.testing.assert_array_equal(handler.load("a.ppm").data, image.data)
    gray = RawImage.from_array(image.data[:, :, 0])
    handler.save("b.pgm", gray)
    loaded = handler.load("b.pgm")
    assert loaded.channels == 1
    np.testing.assert_array_equal(loaded.as_rgb()[:, :, 2], image.data[:, :, 0])
    assert handler.missing(["a.ppm", "c.ppm"]) == ["c.ppm"]
