"""
COLMAP sparse text model I/O.

Reads cameras.txt, images.txt and points3D.txt (plus the optional keypoints.txt
sidecar holding feature scale and orientation) into a validated SceneModel,
and writes a SceneModel back to the same texts.
"""
from pathlib import Path
from typing import Dict, Iterator, List, NamedTuple, Optional, Tuple
import logging
import os

import numpy as np
from scipy.spatial.transform import Rotation

from errors import InputNotFoundError, SceneIntegrityError, SceneParseError
from scene.model import (
    CameraIntrinsics,
    ImageView,
    Observation,
    SceneModel,
    Track,
    validate_scene,
)

logger = logging.getLogger(__name__)

SUPPORTED_MODELS = {"SIMPLE_PINHOLE": 3, "PINHOLE": 4}
DEFAULT_KEYPOINT_SCALE = 1.6
DEFAULT_KEYPOINT_ORIENTATION = 0.0

CAMERAS_FILE = "cameras.txt"
IMAGES_FILE = "images.txt"
POINTS_FILE = "points3D.txt"
KEYPOINTS_FILE = "keypoints.txt"


class SceneText(NamedTuple):
    cameras: str
    images: str
    points: str
    keypoints: str = ""


def _content_lines(text: str) -> Iterator[Tuple[int, str]]:
    for line_number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            yield line_number, stripped


def _fmt(value: float) -> str:
    return repr(float(value))


def quaternion_to_rotation(qvec, line_number: int = None) -> np.ndarray:
    qw, qx, qy, qz = qvec
    try:
        return Rotation.from_quat([qx, qy, qz, qw]).as_matrix()
    except ValueError as e:
        location = f" (images.txt:{line_number})" if line_number is not None else ""
        raise SceneIntegrityError(f"Invalid quaternion {tuple(qvec)}{location}: {e}") from e


def rotation_to_quaternion(R: np.ndarray) -> np.ndarray:
    qx, qy, qz, qw = Rotation.from_matrix(R).as_quat()
    qvec = np.array([qw, qx, qy, qz])
    if qvec[0] < 0:
        qvec *= -1
    return qvec


def _parse_cameras(text: str) -> Dict[int, CameraIntrinsics]:
    cameras = {}
    for line_number, line in _content_lines(text):
        elems = line.split()
        if len(elems) < 4:
            raise SceneParseError("expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS...", line_number, CAMERAS_FILE)
        model = elems[1]
        if model not in SUPPORTED_MODELS:
            raise SceneParseError(f"unsupported camera model {model}", line_number, CAMERAS_FILE)
        try:
            camera_id = int(elems[0])
            width = int(elems[2])
            height = int(elems[3])
            params = [float(p) for p in elems[4:]]
        except ValueError as e:
            raise SceneParseError(str(e), line_number, CAMERAS_FILE) from e
        if len(params) != SUPPORTED_MODELS[model]:
            raise SceneParseError(
                f"{model} expects {SUPPORTED_MODELS[model]} parameters, got {len(params)}",
                line_number, CAMERAS_FILE)
        if camera_id in cameras:
            raise SceneParseError(f"duplicate camera id {camera_id}", line_number, CAMERAS_FILE)

        if model == "SIMPLE_PINHOLE":
            f, cx, cy = params
            fy = None
        else:
            f, fy, cx, cy = params
        cameras[camera_id] = CameraIntrinsics(
            camera_id=camera_id, focal_px=f, principal_point=(cx, cy),
            width=width, height=height, model=model, focal_y_px=fy)
    return cameras


def _parse_images(text: str) -> Tuple[Dict[int, ImageView], Dict[int, np.ndarray]]:
    # images.txt holds pairs of lines; the POINTS2D line may be blank, so only comments are skipped
    lines = [(n, line.strip()) for n, line in enumerate(text.splitlines(), start=1)
             if not line.strip().startswith("#")]
    views, points2d = {}, {}
    i = 0
    while i < len(lines):
        line_number, header = lines[i]
        if not header:
            i += 1
            continue
        elems = header.split()
        if len(elems) < 10:
            raise SceneParseError("expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME", line_number, IMAGES_FILE)
        try:
            image_id = int(elems[0])
            qvec = [float(v) for v in elems[1:5]]
            tvec = np.array([float(v) for v in elems[5:8]])
            camera_id = int(elems[8])
        except ValueError as e:
            raise SceneParseError(str(e), line_number, IMAGES_FILE) from e
        name = " ".join(elems[9:])
        if image_id in views:
            raise SceneParseError(f"duplicate image id {image_id}", line_number, IMAGES_FILE)

        points_line = ""
        points_line_number = line_number + 1
        if i + 1 < len(lines):
            points_line_number, points_line = lines[i + 1]
        tokens = points_line.split()
        if len(tokens) % 3 != 0:
            raise SceneParseError("POINTS2D line must hold (X Y POINT3D_ID) triplets",
                                  points_line_number, IMAGES_FILE)
        try:
            xys = np.array(tokens, dtype=np.float64).reshape(-1, 3)[:, :2]
        except ValueError as e:
            raise SceneParseError(str(e), points_line_number, IMAGES_FILE) from e

        R = quaternion_to_rotation(qvec, line_number)
        views[image_id] = ImageView(
            image_id=image_id, camera_id=camera_id, orientation=R,
            center=-R.T @ tvec, name=name)
        points2d[image_id] = xys
        i += 2
    return views, points2d


def _parse_keypoints(text: Optional[str]) -> Dict[Tuple[int, int], Tuple[float, float]]:
    keypoints = {}
    if not text:
        return keypoints
    for line_number, line in _content_lines(text):
        elems = line.split()
        if len(elems) != 4:
            raise SceneParseError("expected IMAGE_ID POINT2D_IDX SCALE ORIENTATION", line_number, KEYPOINTS_FILE)
        try:
            key = (int(elems[0]), int(elems[1]))
            keypoints[key] = (float(elems[2]), float(elems[3]))
        except ValueError as e:
            raise SceneParseError(str(e), line_number, KEYPOINTS_FILE) from e
    return keypoints


def _parse_points(text: str, points2d: Dict[int, np.ndarray],
                  keypoints: Dict[Tuple[int, int], Tuple[float, float]]) -> Dict[int, Track]:
    tracks = {}
    for line_number, line in _content_lines(text):
        elems = line.split()
        if len(elems) < 8 or (len(elems) - 8) % 2 != 0:
            raise SceneParseError("expected POINT3D_ID X Y Z R G B ERROR (IMAGE_ID POINT2D_IDX)...",
                                  line_number, POINTS_FILE)
        try:
            point_id = int(elems[0])
            position = np.array([float(v) for v in elems[1:4]])
            rgb = tuple(int(v) for v in elems[4:7])
            error = float(elems[7])
            track_elems = [int(v) for v in elems[8:]]
        except ValueError as e:
            raise SceneParseError(str(e), line_number, POINTS_FILE) from e
        if point_id in tracks:
            raise SceneParseError(f"duplicate point id {point_id}", line_number, POINTS_FILE)

        observations = []
        for image_id, point2d_idx in zip(track_elems[0::2], track_elems[1::2]):
            if image_id not in points2d:
                raise SceneIntegrityError(
                    f"Point {point_id} (points3D.txt:{line_number}) references missing image {image_id}")
            xys = points2d[image_id]
            if not 0 <= point2d_idx < len(xys):
                raise SceneIntegrityError(
                    f"Point {point_id} (points3D.txt:{line_number}) references missing keypoint "
                    f"{point2d_idx} of image {image_id}")
            scale, orientation = keypoints.get(
                (image_id, point2d_idx), (DEFAULT_KEYPOINT_SCALE, DEFAULT_KEYPOINT_ORIENTATION))
            x, y = xys[point2d_idx]
            observations.append(Observation(
                image_id=image_id, xy=(float(x), float(y)), scale=scale,
                orientation_rad=orientation, point2d_idx=point2d_idx))
        tracks[point_id] = Track(point_id=point_id, position=position,
                                 observations=tuple(observations), rgb=rgb, error=error)
    return tracks


def parse_scene(cameras_text: str, images_text: str, points_text: str,
                keypoints_text: str = None) -> SceneModel:
    """Parse the COLMAP text model into a cross-referenced, validated SceneModel."""
    cameras = _parse_cameras(cameras_text)
    views, points2d = _parse_images(images_text)
    keypoints = _parse_keypoints(keypoints_text)
    tracks = _parse_points(points_text, points2d, keypoints)
    scene = SceneModel(cameras=cameras, views=views, tracks=tracks)
    validate_scene(scene)
    logger.debug(f"Parsed scene: {len(cameras)} cameras, {len(views)} views, {len(tracks)} tracks")
    return scene


def _assign_keypoint_slots(scene: SceneModel) -> Dict[int, Dict[int, Tuple[int, Tuple[float, float]]]]:
    """Map image_id -> point_id -> (POINT2D_IDX, xy).

    Explicit indices are kept when unclaimed; missing or clashing ones get the
    lowest free index of their image.
    """
    slots = {image_id: {} for image_id in scene.views}
    taken = {image_id: set() for image_id in scene.views}
    pending = []
    for point_id in sorted(scene.tracks):
        for obs in scene.tracks[point_id].observations:
            idx = obs.point2d_idx
            if idx is None or idx < 0 or idx in taken[obs.image_id]:
                pending.append((point_id, obs))
                continue
            taken[obs.image_id].add(idx)
            slots[obs.image_id][point_id] = (idx, obs.xy)
    for point_id, obs in pending:
        idx = 0
        while idx in taken[obs.image_id]:
            idx += 1
        taken[obs.image_id].add(idx)
        slots[obs.image_id][point_id] = (idx, obs.xy)
    return slots


def write_scene(scene: SceneModel) -> SceneText:
    """Serialize a SceneModel; parse_scene(*write_scene(m)) reproduces m."""
    validate_scene(scene)

    camera_lines = ["# Camera list with one line of data per camera:",
                    "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]"]
    for camera_id in sorted(scene.cameras):
        cam = scene.cameras[camera_id]
        cx, cy = cam.principal_point
        if cam.model == "PINHOLE":
            params = [cam.focal_px, cam.fy, cx, cy]
        else:
            params = [cam.focal_px, cx, cy]
        camera_lines.append(" ".join(
            [str(camera_id), cam.model, str(cam.width), str(cam.height)] + [_fmt(p) for p in params]))

    slots = _assign_keypoint_slots(scene)
    keypoint_lines = ["# Keypoint attributes: IMAGE_ID, POINT2D_IDX, SCALE, ORIENTATION_RAD"]
    point_lines = ["# 3D point list with one line of data per point:",
                   "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)"]
    for point_id in sorted(scene.tracks):
        track = scene.tracks[point_id]
        track_tokens = []
        for obs in track.observations:
            idx, _ = slots[obs.image_id][point_id]
            track_tokens += [str(obs.image_id), str(idx)]
            keypoint_lines.append(f"{obs.image_id} {idx} {_fmt(obs.scale)} {_fmt(obs.orientation_rad)}")
        point_lines.append(" ".join(
            [str(point_id)] + [_fmt(v) for v in track.position]
            + [str(int(c)) for c in track.rgb] + [_fmt(track.error)] + track_tokens))

    image_lines = ["# Image list with two lines of data per image:",
                   "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
                   "#   POINTS2D[] as (X, Y, POINT3D_ID)"]
    for image_id in sorted(scene.views):
        view = scene.views[image_id]
        qvec = rotation_to_quaternion(view.orientation)
        tvec = view.translation
        image_lines.append(" ".join(
            [str(image_id)] + [_fmt(v) for v in qvec] + [_fmt(v) for v in tvec]
            + [str(view.camera_id), view.name]))
        by_index = {idx: (point_id, xy) for point_id, (idx, xy) in slots[image_id].items()}
        tokens = []
        for idx in range(max(by_index) + 1 if by_index else 0):
            if idx in by_index:
                point_id, (x, y) = by_index[idx]
                tokens += [_fmt(x), _fmt(y), str(point_id)]
            else:
                tokens += ["0.0", "0.0", "-1"]
        image_lines.append(" ".join(tokens))

    return SceneText(
        cameras="\n".join(camera_lines) + "\n",
        images="\n".join(image_lines) + "\n",
        points="\n".join(point_lines) + "\n",
        keypoints="\n".join(keypoint_lines) + "\n",
    )


class ColmapHandler:
    """Reads and writes a COLMAP text model directory."""

    def __init__(self, model_dir=None):
        self.model_dir = Path(model_dir or os.getenv('PSFORGE_SCENE_DIR', '.'))
        self.logger = logging.getLogger(__name__)

    def _read(self, file_name: str, required: bool = True) -> Optional[str]:
        path = self.model_dir / file_name
        if not path.exists():
            if required:
                self.logger.error(f"Missing model file: {path}")
                raise InputNotFoundError(f"Missing model file: {path}")
            return None
        return path.read_text(encoding="utf-8")

    def read_model(self) -> SceneModel:
        """Read cameras.txt, images.txt, points3D.txt and the optional keypoints.txt"""
        self.logger.info(f"Reading COLMAP text model from {self.model_dir}")
        try:
            scene = parse_scene(
                self._read(CAMERAS_FILE),
                self._read(IMAGES_FILE),
                self._read(POINTS_FILE),
                self._read(KEYPOINTS_FILE, required=False),
            )
        except (SceneParseError, SceneIntegrityError) as e:
            self.logger.error(f"Failed to read model in {self.model_dir}: {e}")
            raise
        self.logger.info(
            f"Loaded {len(scene.cameras)} cameras, {len(scene.views)} images, {len(scene.tracks)} points")
        return scene

    def write_model(self, scene: SceneModel) -> List[Path]:
        """Write the scene as COLMAP text files; returns the written paths"""
        text = write_scene(scene)
        self.model_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for file_name, content in zip((CAMERAS_FILE, IMAGES_FILE, POINTS_FILE, KEYPOINTS_FILE), text):
            path = self.model_dir / file_name
            path.write_text(content, encoding="utf-8")
            written.append(path)
        self.logger.info(f"Wrote COLMAP text model to {self.model_dir}")
        return written
