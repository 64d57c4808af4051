import math

import numpy as np
import pytest

from sampler import SamplingThresholds, TrackGeometry
from scene.model import CameraIntrinsics, ImageView, Observation, SceneModel, Track
from synth_scene import SynthConfig, generate_scene, look_at

IDENTITY_CAMERAS = "1 PINHOLE 100 100 100.0 100.0 50.0 50.0\n"
IDENTITY_IMAGES = "1 1.0 0.0 0.0 0.0 0.0 0.0 0.0 1 identity.ppm\n\n"


def planar_directions(angles_deg):
    """Unit vectors in the x-z plane at the given angles from +z."""
    return np.array([[math.sin(math.radians(a)), 0.0, math.cos(math.radians(a))] for a in angles_deg])


def view_looking(image_id, direction, distance=10.0, camera_id=1):
    """A view on the axis -direction at `distance` from the origin, looking at the origin."""
    direction = np.asarray(direction, dtype=np.float64)
    center = -distance * direction / np.linalg.norm(direction)
    return ImageView(image_id=image_id, camera_id=camera_id, orientation=look_at(center),
                     center=center, name=f"view_{image_id}.ppm")


@pytest.fixture
def identity_texts():
    return IDENTITY_CAMERAS, IDENTITY_IMAGES, ""


@pytest.fixture
def hand_trace_geometry():
    """Four cameras at 0, 10, 30 and 60 degrees from patch 0 with equal f/d."""
    return TrackGeometry(track_id=7, focal=[500.0] * 4, depth=[10.0] * 4,
                         directions=planar_directions([0.0, 10.0, 30.0, 60.0]))


@pytest.fixture
def hand_trace_thresholds():
    return SamplingThresholds(sc_th=2.5, min_v_th=25.0, max_v_th=100.0, scale_jump=1.5)


@pytest.fixture
def two_point_scene():
    """Identity camera at the origin and two points 10 px apart in its image."""
    camera = CameraIntrinsics(camera_id=1, focal_px=100.0, principal_point=(50.0, 50.0), width=100, height=100)
    view = ImageView(image_id=1, camera_id=1, orientation=np.eye(3), center=np.zeros(3), name="a.ppm")
    other = ImageView(image_id=2, camera_id=1, orientation=np.eye(3), center=np.array([0.0, 0.0, -1.0]),
                      name="b.ppm")
    tracks = {
        1: Track(1, np.array([0.0, 0.0, 10.0]), (Observation(1, (50.0, 50.0), 4.0),)),
        2: Track(2, np.array([1.0, 0.0, 10.0]), (Observation(1, (60.0, 50.0), 4.0, point2d_idx=1),)),
        3: Track(3, np.array([0.0, 1.0, 10.0]), (Observation(2, (50.0, 59.0909), 4.0),)),
    }
    return SceneModel(cameras={1: camera}, views={1: view, 2: other}, tracks=tracks)


@pytest.fixture(scope="session")
def synth_scene():
    return generate_scene(SynthConfig(n_points=50, n_cameras=8, rng_seed=3, elevation_deg=20.0))
