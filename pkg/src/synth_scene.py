"""
Synthetic scenes with exact geometry.

Cameras sit on a ring (or a sphere) around the origin and look at it; points
fill a cube around the origin. Observations are exact projections, optionally
jittered, so a generated scene exercises the whole pipeline without an SFM run.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple
import logging
import math

import cv2
import numpy as np

from errors import ContractViolationError
from geometry import project_points
from patches.image_handler import ImageHandler, RawImage
from scene.colmap_handler import ColmapHandler
from scene.model import CameraIntrinsics, ImageView, Observation, SceneModel, Track, validate_scene

logger = logging.getLogger(__name__)

LAYOUTS = ("ring", "sphere")
TEXTURE_CELL_PX = 8
WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class SynthConfig:
    n_points: int = 50
    n_cameras: int = 8
    radius: float = 10.0
    focal_range: Tuple[float, float] = (300.0, 600.0)
    rng_seed: int = 0
    width: int = 640
    height: int = 480
    # half side of the point cube
    extent: float = 1.0
    layout: str = "ring"
    # max camera elevation above the ring plane, degrees
    elevation_deg: float = 0.0
    # physical feature size; observed scale = f * size / depth, clamped
    feature_size: Tuple[float, float] = (0.05, 0.15)
    scale_clamp: Tuple[float, float] = (1.6, 15.0)
    jitter_px: float = 0.0

    def __post_init__(self):
        if self.n_points <= 0 or self.n_cameras <= 0:
            raise ContractViolationError("n_points and n_cameras must be positive")
        if not self.radius > self.extent * math.sqrt(3):
            raise ContractViolationError(f"radius {self.radius} must exceed the scene extent")
        if not 0 < self.focal_range[0] <= self.focal_range[1]:
            raise ContractViolationError(f"Invalid focal range {self.focal_range}")
        if self.layout not in LAYOUTS:
            raise ContractViolationError(f"layout must be one of {LAYOUTS}, got {self.layout!r}")
        if self.width <= 0 or self.height <= 0:
            raise ContractViolationError("Image size must be positive")


def look_at(center: np.ndarray, target: np.ndarray = None) -> np.ndarray:
    """World-to-camera rotation whose +z axis points from center to target, y pointing down."""
    target = np.zeros(3) if target is None else np.asarray(target, dtype=np.float64)
    z = target - center
    z = z / np.linalg.norm(z)
    up = WORLD_UP if abs(np.dot(z, WORLD_UP)) < 1 - 1e-6 else np.array([0.0, 1.0, 0.0])
    x = np.cross(z, up)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    return np.vstack([x, y, z])


def _camera_centers(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.layout == "sphere":
        directions = rng.normal(size=(cfg.n_cameras, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        return cfg.radius * directions
    azimuth = 2 * np.pi * np.arange(cfg.n_cameras) / cfg.n_cameras
    elevation = np.radians(rng.uniform(-cfg.elevation_deg, cfg.elevation_deg, cfg.n_cameras)) \
        if cfg.elevation_deg > 0 else np.zeros(cfg.n_cameras)
    return cfg.radius * np.column_stack([
        np.cos(elevation) * np.cos(azimuth),
        np.cos(elevation) * np.sin(azimuth),
        np.sin(elevation),
    ])


def image_name(image_id: int) -> str:
    return f"img_{image_id:04d}.ppm"


def generate_scene(cfg: SynthConfig) -> SceneModel:
    """Deterministic scene for cfg.rng_seed; ids are 0-based and follow generation order."""
    rng = np.random.default_rng(cfg.rng_seed)
    centers = _camera_centers(cfg, rng)
    focals = rng.uniform(*cfg.focal_range, size=cfg.n_cameras)

    cameras, views = {}, {}
    for image_id in range(cfg.n_cameras):
        cameras[image_id] = CameraIntrinsics(
            camera_id=image_id, focal_px=float(focals[image_id]),
            principal_point=(cfg.width / 2.0, cfg.height / 2.0),
            width=cfg.width, height=cfg.height)
        views[image_id] = ImageView(
            image_id=image_id, camera_id=image_id, orientation=look_at(centers[image_id]),
            center=centers[image_id], name=image_name(image_id))

    positions = rng.uniform(-cfg.extent, cfg.extent, size=(cfg.n_points, 3))
    sizes = rng.uniform(*cfg.feature_size, size=cfg.n_points)
    orientations = rng.uniform(-np.pi, np.pi, size=(cfg.n_points, cfg.n_cameras))
    colors = rng.integers(0, 256, size=(cfg.n_points, 3))
    jitter = rng.normal(0.0, cfg.jitter_px, size=(cfg.n_points, cfg.n_cameras, 2)) \
        if cfg.jitter_px > 0 else np.zeros((cfg.n_points, cfg.n_cameras, 2))

    projections = [project_points(positions, views[i], cameras[i]) for i in range(cfg.n_cameras)]
    next_index = {image_id: 0 for image_id in views}
    tracks = {}
    for point_id in range(cfg.n_points):
        observations = []
        for image_id in range(cfg.n_cameras):
            xy, z = projections[image_id]
            if not z[point_id] > 0:
                continue
            x, y = xy[point_id] + jitter[point_id, image_id]
            if not (0 <= x <= cfg.width and 0 <= y <= cfg.height):
                continue
            scale = float(np.clip(focals[image_id] * sizes[point_id] / z[point_id], *cfg.scale_clamp))
            observations.append(Observation(
                image_id=image_id, xy=(float(x), float(y)), scale=scale,
                orientation_rad=float(orientations[point_id, image_id]),
                point2d_idx=next_index[image_id]))
            next_index[image_id] += 1
        if observations:
            tracks[point_id] = Track(point_id=point_id, position=positions[point_id],
                                     observations=tuple(observations),
                                     rgb=tuple(int(c) for c in colors[point_id]))

    scene = validate_scene(SceneModel(cameras=cameras, views=views, tracks=tracks))
    logger.debug(f"Generated synthetic scene: {len(views)} views, {len(tracks)} tracks")
    return scene


def render_image(width: int, height: int, seed: int) -> RawImage:
    """Smooth random RGB texture, deterministic per seed."""
    rng = np.random.default_rng(seed)
    cells = rng.integers(0, 256, size=(max(1, height // TEXTURE_CELL_PX), max(1, width // TEXTURE_CELL_PX), 3),
                         dtype=np.uint8)
    return RawImage.from_array(cv2.resize(cells, (width, height), interpolation=cv2.INTER_LINEAR))


def render_images(scene: SceneModel, rng_seed: int = 0) -> Dict[str, RawImage]:
    images = {}
    for image_id in sorted(scene.views):
        cam = scene.camera_for(image_id)
        images[scene.views[image_id].name] = render_image(cam.width, cam.height, rng_seed + image_id)
    return images


def write_synthetic(cfg: SynthConfig, out_dir) -> Tuple[SceneModel, Path, Path]:
    """Write the COLMAP text model to out_dir/sparse and PPM images to out_dir/images."""
    out_dir = Path(out_dir)
    scene = generate_scene(cfg)
    scene_dir, images_dir = out_dir / "sparse", out_dir / "images"
    ColmapHandler(scene_dir).write_model(scene)
    image_handler = ImageHandler(images_dir)
    written: List[Path] = [image_handler.save(name, image)
                           for name, image in render_images(scene, cfg.rng_seed).items()]
    logger.info(f"Wrote synthetic scene with {len(scene.tracks)} points and {len(written)} images to {out_dir}")
    return scene, scene_dir, images_dir
