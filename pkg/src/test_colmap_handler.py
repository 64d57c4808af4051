import numpy as np
import pytest

from errors import InputNotFoundError, SceneIntegrityError, SceneParseError
from scene.colmap_handler import (
    ColmapHandler,
    parse_scene,
    quaternion_to_rotation,
    rotation_to_quaternion,
    write_scene,
)
from scene.model import Observation, SceneModel, Track
from synth_scene import SynthConfig, generate_scene


def assert_scenes_equal(a: SceneModel, b: SceneModel, tol=1e-9):
    assert sorted(a.cameras) == sorted(b.cameras)
    for camera_id, cam in a.cameras.items():
        other = b.cameras[camera_id]
        assert (cam.model, cam.width, cam.height) == (other.model, other.width, other.height)
        assert cam.focal_px == pytest.approx(other.focal_px, abs=tol)
        assert cam.fy == pytest.approx(other.fy, abs=tol)
        np.testing.assert_allclose(cam.principal_point, other.principal_point, atol=tol, rtol=0)
    assert sorted(a.views) == sorted(b.views)
    for image_id, view in a.views.items():
        other = b.views[image_id]
        assert (view.camera_id, view.name) == (other.camera_id, other.name)
        np.testing.assert_allclose(view.orientation, other.orientation, atol=tol, rtol=0)
        np.testing.assert_allclose(view.center, other.center, atol=tol, rtol=0)
    assert sorted(a.tracks) == sorted(b.tracks)
    for point_id, track in a.tracks.items():
        other = b.tracks[point_id]
        np.testing.assert_allclose(track.position, other.position, atol=tol, rtol=0)
        assert track.image_ids == other.image_ids
        for obs, other_obs in zip(track.observations, other.observations):
            np.testing.assert_allclose(obs.xy, other_obs.xy, atol=tol, rtol=0)
            assert obs.scale == pytest.approx(other_obs.scale, abs=tol)
            assert obs.orientation_rad == pytest.approx(other_obs.orientation_rad, abs=tol)


def test_identity_pose_scene(identity_texts):
    scene = parse_scene(*identity_texts)
    assert len(scene.views) == 1
    assert not scene.tracks
    np.testing.assert_allclose(scene.views[1].viewing_direction, [0.0, 0.0, 1.0])
    cam = scene.cameras[1]
    assert (cam.focal_px, cam.fy, cam.principal_point) == (100.0, 100.0, (50.0, 50.0))


def test_zero_norm_quaternion_is_rejected(identity_texts):
    cameras, _, points = identity_texts
    with pytest.raises(SceneIntegrityError):
        parse_scene(cameras, "1 0 0 0 0 0 0 0 1 bad.ppm\n\n", points)


def test_malformed_line_reports_line_number(identity_texts):
    cameras, images, _ = identity_texts
    with pytest.raises(SceneParseError) as excinfo:
        parse_scene(cameras + "2 PINHOLE 100 oops 1 1 1 1\n", images, "")
    assert excinfo.value.line_number == 2


def test_unsupported_camera_model(identity_texts):
    _, images, points = identity_texts
    with pytest.raises(SceneParseError):
        parse_scene("1 OPENCV 100 100 1 1 50 50 0 0 0 0\n", images, points)


def test_dangling_camera_reference(identity_texts):
    cameras, _, points = identity_texts
    with pytest.raises(SceneIntegrityError):
        parse_scene(cameras, "1 1 0 0 0 0 0 0 9 x.ppm\n\n", points)


def test_points_and_keypoints_are_joined(identity_texts):
    cameras, _, _ = identity_texts
    images = "1 1 0 0 0 0 0 0 1 a.ppm\n10.0 20.0 5 30.0 40.0 -1\n"
    points = "5 0.1 0.2 3.0 255 0 0 0.5 1 0\n"
    keypoints = "1 0 4.5 0.25\n"
    scene = parse_scene(cameras, images, points, keypoints)
    obs = scene.tracks[5].observations[0]
    assert obs.xy == (10.0, 20.0)
    assert (obs.scale, obs.orientation_rad) == (4.5, 0.25)
    assert scene.tracks[5].rgb == (255, 0, 0)


def test_missing_keypoint_attributes_default():
    scene = parse_scene("1 SIMPLE_PINHOLE 100 100 100 50 50\n",
                        "1 1 0 0 0 0 0 0 1 a.ppm\n10.0 20.0 5\n",
                        "5 0.1 0.2 3.0 1 2 3 0.5 1 0\n")
    obs = scene.tracks[5].observations[0]
    assert (obs.scale, obs.orientation_rad) == (1.6, 0.0)


def test_identity_round_trip(identity_texts):
    scene = parse_scene(*identity_texts)
    assert_scenes_equal(parse_scene(*write_scene(scene)), scene)


@pytest.mark.parametrize("seed", range(100))
def test_synthetic_round_trip(seed):
    cfg = SynthConfig(n_points=20, n_cameras=int(2 + seed % 19), rng_seed=seed,
                      layout="sphere" if seed % 2 else "ring", elevation_deg=15.0, jitter_px=0.3)
    scene = generate_scene(cfg)
    assert_scenes_equal(parse_scene(*write_scene(scene)), scene)


def test_write_refuses_dangling_track(identity_texts):
    scene = parse_scene(*identity_texts)
    broken = SceneModel(cameras=scene.cameras, views=scene.views,
                        tracks={1: Track(1, np.zeros(3), (Observation(42, (1.0, 1.0), 2.0),))})
    with pytest.raises(SceneIntegrityError):
        write_scene(broken)


def test_write_numbers_keypoints_left_unindexed(identity_texts):
    scene = parse_scene(*identity_texts)
    image_id = min(scene.views)
    built = SceneModel(cameras=scene.cameras, views=scene.views, tracks={
        1: Track(1, np.array([0.0, 0.0, 10.0]), (Observation(image_id, (10.0, 20.0), 2.0),)),
        2: Track(2, np.array([1.0, 0.0, 10.0]), (Observation(image_id, (30.0, 40.0), 3.0),)),
    })
    reparsed = parse_scene(*write_scene(built))
    assert_scenes_equal(reparsed, built)
    assert [t.observations[0].point2d_idx for t in reparsed.tracks.values()] == [0, 1]


def test_write_moves_clashing_keypoint_index(identity_texts):
    scene = parse_scene(*identity_texts)
    image_id = min(scene.views)
    built = SceneModel(cameras=scene.cameras, views=scene.views, tracks={
        1: Track(1, np.zeros(3), (Observation(image_id, (10.0, 20.0), 2.0, point2d_idx=1),)),
        2: Track(2, np.ones(3), (Observation(image_id, (30.0, 40.0), 3.0, point2d_idx=1),)),
    })
    reparsed = parse_scene(*write_scene(built))
    assert_scenes_equal(reparsed, built)
    assert reparsed.tracks[1].observations[0].point2d_idx == 1
    assert reparsed.tracks[2].observations[0].point2d_idx == 0


def test_quaternion_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        R = quaternion_to_rotation(q)
        np.testing.assert_allclose(quaternion_to_rotation(rotation_to_quaternion(R)), R, atol=1e-12)


def test_handler_reads_what_it_writes(tmp_path, synth_scene):
    handler = ColmapHandler(tmp_path / "sparse")
    written = handler.write_model(synth_scene)
    assert [p.name for p in written] == ["cameras.txt", "images.txt", "points3D.txt", "keypoints.txt"]
    assert_scenes_equal(handler.read_model(), synth_scene)


def test_handler_missing_file(tmp_path):
    with pytest.raises(InputNotFoundError):
        ColmapHandler(tmp_path).read_model()
