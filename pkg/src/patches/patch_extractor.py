"""
Scale/rotation-normalized patch extraction and train-time augmentation.

A patch is cropped around the feature point with side 12 x scale (clamped to
[20, 128] px), rotated so the feature orientation maps onto the +x axis, and
resampled to 48 x 48 with bilinear interpolation and edge replication.
"""
from dataclasses import dataclass
from typing import Tuple, Union
import math

import cv2
import numpy as np

from errors import ContractViolationError
from patches.image_handler import RawImage
from scene.model import Observation

PATCH_SIZE = 48
CROP_SIZE = 32
CROP_SCALE_FACTOR = 12.0
MIN_CROP_SIDE = 20.0
MAX_CROP_SIDE = 128.0
AUGMENT_MAX_ROTATION_DEG = 22.5
AUGMENT_SCALE_RANGE = (1.0, 1.1)

# output pixel treated as the feature location
PATCH_CENTER = PATCH_SIZE // 2
CROP_OFFSET = (PATCH_SIZE - CROP_SIZE) // 2


@dataclass(frozen=True, eq=False)
class PatchRecord:
    pixels: np.ndarray
    image_id: int
    track_id: int
    center_xy: Tuple[float, float]
    scale: float
    rotation_rad: float
    crop_side_px: float

    def __post_init__(self):
        if not MIN_CROP_SIDE <= self.crop_side_px <= MAX_CROP_SIDE:
            raise ContractViolationError(f"crop_side_px {self.crop_side_px} outside [20, 128]")


def crop_side(scale: float) -> float:
    return float(min(max(CROP_SCALE_FACTOR * scale, MIN_CROP_SIDE), MAX_CROP_SIDE))


def normalization_matrix(center_xy, side: float, rotation_rad: float) -> np.ndarray:
    """2x3 map from patch pixel (u, v) to source pixel, for cv2.WARP_INVERSE_MAP."""
    k = side / PATCH_SIZE
    c, s = math.cos(rotation_rad), math.sin(rotation_rad)
    cx, cy = center_xy
    return np.array([
        [k * c, -k * s, cx - k * (c - s) * PATCH_CENTER],
        [k * s, k * c, cy - k * (s + c) * PATCH_CENTER],
    ])


def extract_patch(image: RawImage, obs: Observation, track_id: int = -1, rotation_sign: int = 1) -> PatchRecord:
    """Crop, rotation-normalize and resample the patch around an observation.

    rotation_sign=1 maps the feature orientation onto the patch +x axis;
    -1 applies the opposite rotation.
    """
    side = crop_side(obs.scale)
    M = normalization_matrix(obs.xy, side, rotation_sign * obs.orientation_rad)
    pixels = cv2.warpAffine(
        image.as_rgb(), M, (PATCH_SIZE, PATCH_SIZE),
        flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
        borderMode=cv2.BORDER_REPLICATE,
    )
    return PatchRecord(
        pixels=pixels.reshape(PATCH_SIZE, PATCH_SIZE, 3),
        image_id=obs.image_id,
        track_id=track_id,
        center_xy=tuple(obs.xy),
        scale=obs.scale,
        rotation_rad=obs.orientation_rad,
        crop_side_px=side,
    )


def _pixels(patch: Union[PatchRecord, np.ndarray]) -> np.ndarray:
    pixels = patch.pixels if isinstance(patch, PatchRecord) else np.asarray(patch)
    if pixels.shape[:2] != (PATCH_SIZE, PATCH_SIZE):
        raise ContractViolationError(f"Expected a 48x48 patch, got shape {pixels.shape}")
    return pixels


def center_crop_32(patch: Union[PatchRecord, np.ndarray]) -> np.ndarray:
    pixels = _pixels(patch)
    return pixels[CROP_OFFSET:CROP_OFFSET + CROP_SIZE, CROP_OFFSET:CROP_OFFSET + CROP_SIZE].copy()


def sample_augmentation(rng: np.random.Generator) -> Tuple[float, float]:
    angle = rng.uniform(-AUGMENT_MAX_ROTATION_DEG, AUGMENT_MAX_ROTATION_DEG)
    scale = rng.uniform(*AUGMENT_SCALE_RANGE)
    return float(angle), float(scale)


def augment(patch: Union[PatchRecord, np.ndarray], rng_seed: int = None,
            angle_deg: float = None, scale: float = None) -> np.ndarray:
    """Random rotation in [-22.5, 22.5] deg and scale in [1.0, 1.1] about the center, then 32x32 crop.

    Passing angle_deg and scale fixes the transform instead of drawing it.
    """
    pixels = _pixels(patch)
    drawn_angle, drawn_scale = sample_augmentation(np.random.default_rng(rng_seed))
    angle_deg = drawn_angle if angle_deg is None else angle_deg
    scale = drawn_scale if scale is None else scale
    M = cv2.getRotationMatrix2D((float(PATCH_CENTER), float(PATCH_CENTER)), angle_deg, scale)
    warped = cv2.warpAffine(pixels, M, (PATCH_SIZE, PATCH_SIZE),
                            flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE)
    return center_crop_32(warped.reshape(pixels.shape))


def to_grayscale(pixels: np.ndarray) -> np.ndarray:
    """ITU-R BT.601 luma of an RGB patch."""
    return cv2.cvtColor(np.ascontiguousarray(pixels), cv2.COLOR_RGB2GRAY)
