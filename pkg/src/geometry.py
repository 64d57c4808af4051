"""Projection, depth, scale-ratio and viewpoint-angle kernels. Angles are in degrees."""
from typing import Sequence, Tuple, Union

import numpy as np

from errors import BehindCameraError, ContractViolationError
from scene.model import CameraIntrinsics, ImageView

UNIT_NORM_TOLERANCE = 1e-9


def _check_unit(v: np.ndarray, name: str):
    norm = np.linalg.norm(v)
    if not abs(norm - 1.0) <= UNIT_NORM_TOLERANCE:
        raise ContractViolationError(f"{name} must be unit length, got norm {norm}")


def angle_between(v_i, v_j) -> float:
    v_i = np.asarray(v_i, dtype=np.float64)
    v_j = np.asarray(v_j, dtype=np.float64)
    _check_unit(v_i, "v_i")
    _check_unit(v_j, "v_j")
    cos = np.clip(np.dot(v_i, v_j), -1.0, 1.0)
    return float(np.degrees(np.arccos(cos)))


def depth(P, view: ImageView) -> float:
    """Signed distance of P from the camera center along the viewing direction."""
    return float(np.dot(view.viewing_direction, np.asarray(P, dtype=np.float64) - view.center))


def scale_ratio(f_i: float, d_i: float, f_j: float, d_j: float) -> float:
    if f_i <= 0 or f_j <= 0:
        raise ContractViolationError(f"Focal lengths must be positive, got {f_i}, {f_j}")
    if d_i <= 0 or d_j <= 0:
        raise BehindCameraError(f"Depths must be positive (point behind camera), got {d_i}, {d_j}")
    r_i = f_i / d_i
    r_j = f_j / d_j
    return max(r_i, r_j) / min(r_i, r_j)


def project(P, view: ImageView, cam: CameraIntrinsics) -> Tuple[float, float]:
    X = view.orientation @ (np.asarray(P, dtype=np.float64) - view.center)
    if X[2] <= 0:
        raise BehindCameraError(f"Point {tuple(P)} is behind camera of image {view.image_id}")
    cx, cy = cam.principal_point
    return (float(cam.focal_px * X[0] / X[2] + cx), float(cam.fy * X[1] / X[2] + cy))


def project_points(points: np.ndarray, view: ImageView, cam: CameraIntrinsics) -> Tuple[np.ndarray, np.ndarray]:
    """Vectorised projection of an (N, 3) array; returns (xy (N, 2), depth (N,)).

    Rows with depth <= 0 get NaN coordinates.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    X = (points - view.center) @ view.orientation.T
    z = X[:, 2]
    xy = np.full((len(points), 2), np.nan)
    front = z > 0
    cx, cy = cam.principal_point
    xy[front, 0] = cam.focal_px * X[front, 0] / z[front] + cx
    xy[front, 1] = cam.fy * X[front, 1] / z[front] + cy
    return xy, z


def angle_matrix(directions: Union[Sequence[ImageView], np.ndarray]) -> np.ndarray:
    """Pairwise viewpoint angles (degrees) between viewing directions; symmetric with zero diagonal."""
    if isinstance(directions, np.ndarray):
        V = directions.reshape(-1, 3).astype(np.float64)
    else:
        V = np.array([view.viewing_direction for view in directions], dtype=np.float64).reshape(-1, 3)
    for k, v in enumerate(V):
        _check_unit(v, f"direction {k}")
    cos = np.clip(V @ V.T, -1.0, 1.0)
    A = np.triu(np.degrees(np.arccos(cos)), k=1)
    return A + A.T
