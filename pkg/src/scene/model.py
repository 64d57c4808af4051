from dataclasses import dataclass, field
from typing import FrozenSet, Mapping, Optional, Tuple

import numpy as np

from errors import SceneIntegrityError

ROTATION_TOLERANCE = 1e-9
UNIT_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class CameraIntrinsics:
    camera_id: int
    focal_px: float
    principal_point: Tuple[float, float]
    width: int
    height: int
    model: str = "SIMPLE_PINHOLE"
    # PINHOLE cameras keep a separate fy; SIMPLE_PINHOLE uses focal_px for both axes
    focal_y_px: float = None

    @property
    def fy(self) -> float:
        return self.focal_y_px if self.focal_y_px is not None else self.focal_px


@dataclass(frozen=True, eq=False)
class ImageView:
    image_id: int
    camera_id: int
    orientation: np.ndarray
    center: np.ndarray
    name: str
    viewing_direction: np.ndarray = None

    def __post_init__(self):
        orientation = np.asarray(self.orientation, dtype=np.float64)
        object.__setattr__(self, "orientation", orientation)
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64))
        if self.viewing_direction is None:
            # camera +z axis in world frame: R^T (0, 0, 1)
            object.__setattr__(self, "viewing_direction", orientation[2, :].copy())
        else:
            object.__setattr__(self, "viewing_direction",
                               np.asarray(self.viewing_direction, dtype=np.float64))

    @property
    def translation(self) -> np.ndarray:
        return -self.orientation @ self.center


@dataclass(frozen=True, eq=False)
class Observation:
    image_id: int
    xy: Tuple[float, float]
    scale: float
    orientation_rad: float = 0.0
    # None lets write_scene assign the next free keypoint slot
    point2d_idx: Optional[int] = None


@dataclass(frozen=True, eq=False)
class Track:
    point_id: int
    position: np.ndarray
    observations: Tuple[Observation, ...]
    rgb: Tuple[int, int, int] = (128, 128, 128)
    error: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=np.float64))
        object.__setattr__(self, "observations", tuple(self.observations))

    @property
    def image_ids(self) -> Tuple[int, ...]:
        return tuple(obs.image_id for obs in self.observations)


@dataclass(frozen=True, eq=False)
class SceneModel:
    cameras: Mapping[int, CameraIntrinsics] = field(default_factory=dict)
    views: Mapping[int, ImageView] = field(default_factory=dict)
    tracks: Mapping[int, Track] = field(default_factory=dict)

    def camera_for(self, image_id: int) -> CameraIntrinsics:
        return self.cameras[self.views[image_id].camera_id]


def common_images(track_a: Track, track_b: Track) -> FrozenSet[int]:
    """Image ids observed by both tracks."""
    return frozenset(track_a.image_ids) & frozenset(track_b.image_ids)


def validate_scene(scene: SceneModel) -> SceneModel:
    """Check every cross-reference and per-type invariant, raising SceneIntegrityError."""
    for camera_id, camera in scene.cameras.items():
        if camera_id != camera.camera_id:
            raise SceneIntegrityError(f"Camera key {camera_id} does not match camera_id {camera.camera_id}")
        if not camera.focal_px > 0 or not camera.fy > 0:
            raise SceneIntegrityError(f"Camera {camera_id} has non-positive focal length")
        if camera.width <= 0 or camera.height <= 0:
            raise SceneIntegrityError(f"Camera {camera_id} has non-positive image size")
        cx, cy = camera.principal_point
        if not (0 <= cx <= camera.width and 0 <= cy <= camera.height):
            raise SceneIntegrityError(f"Camera {camera_id} principal point ({cx}, {cy}) outside the image")

    for image_id, view in scene.views.items():
        if image_id != view.image_id:
            raise SceneIntegrityError(f"View key {image_id} does not match image_id {view.image_id}")
        if view.camera_id not in scene.cameras:
            raise SceneIntegrityError(f"Image {image_id} references missing camera {view.camera_id}")
        R = view.orientation
        if R.shape != (3, 3) or not np.all(np.isfinite(R)):
            raise SceneIntegrityError(f"Image {image_id} orientation is not a finite 3x3 matrix")
        if not np.allclose(R @ R.T, np.eye(3), atol=ROTATION_TOLERANCE, rtol=0.0):
            raise SceneIntegrityError(f"Image {image_id} orientation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > ROTATION_TOLERANCE:
            raise SceneIntegrityError(f"Image {image_id} orientation has determinant != +1")
        if abs(np.linalg.norm(view.viewing_direction) - 1.0) > ROTATION_TOLERANCE:
            raise SceneIntegrityError(f"Image {image_id} viewing direction is not unit length")
        if not np.allclose(view.viewing_direction, R[2], atol=UNIT_TOLERANCE, rtol=0.0):
            raise SceneIntegrityError(f"Image {image_id} viewing direction is not the optical axis")

    for point_id, track in scene.tracks.items():
        if point_id != track.point_id:
            raise SceneIntegrityError(f"Track key {point_id} does not match point_id {track.point_id}")
        if not track.observations:
            raise SceneIntegrityError(f"Track {point_id} has no observations")
        seen = set()
        for obs in track.observations:
            if obs.image_id in seen:
                raise SceneIntegrityError(f"Track {point_id} observes image {obs.image_id} twice")
            seen.add(obs.image_id)
            view = scene.views.get(obs.image_id)
            if view is None:
                raise SceneIntegrityError(f"Track {point_id} references missing image {obs.image_id}")
            camera = scene.cameras[view.camera_id]
            x, y = obs.xy
            if not (0 <= x <= camera.width and 0 <= y <= camera.height):
                raise SceneIntegrityError(
                    f"Track {point_id} observation ({x}, {y}) outside image {obs.image_id}")
            if not obs.scale > 0:
                raise SceneIntegrityError(f"Track {point_id} observation in image {obs.image_id} has scale <= 0")
    return scene
