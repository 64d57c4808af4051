"""End-to-end runs of the psforge command line on a generated scene."""
import json

import numpy as np
import pandas as pd
import pytest

from config import RunConfig
from descriptor_handler import DescriptorHandler
from main import main
from patches.dataset_handler import DatasetHandler
from patches.image_handler import ImageHandler, RawImage
from sampler import sample_scene
from scene.colmap_handler import ColmapHandler

DATASET_FILES = ("patches.psds", "pairs.tsv", "manifest.json")


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["gen-synth", "--out", str(out), "--elevation", "20", "--seed", "3"]) == 0
    return out


@pytest.fixture(scope="module")
def built(synth_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("dataset")
    assert main(["build", "--scene", str(synth_dir / "sparse"), "--images", str(synth_dir / "images"),
                 "--out", str(out), "--threads", "1"]) == 0
    return out


def _eval(task, synth_dir, dataset_dir, *extra):
    return main(["eval", task, "--scene", str(synth_dir / "sparse"), "--out", str(dataset_dir), *extra])


def _track_one_hot(dataset_dir, path):
    """Descriptors equal for every patch of a track and orthogonal across tracks."""
    track_ids = DatasetHandler(dataset_dir).read_patches().records["track_id"]
    _, column = np.unique(track_ids, return_inverse=True)
    descriptors = np.eye(column.max() + 1)[column]
    DescriptorHandler().write(path, descriptors)
    return path


def test_gen_synth_writes_model_and_images(synth_dir):
    scene = ColmapHandler(synth_dir / "sparse").read_model()
    assert len(scene.views) == 8 and len(scene.tracks) == 50
    assert ImageHandler(synth_dir / "images").missing([v.name for v in scene.views.values()]) == []


def test_build_output_does_not_depend_on_threads(synth_dir, built, tmp_path):
    assert main(["build", "--scene", str(synth_dir / "sparse"), "--images", str(synth_dir / "images"),
                 "--out", str(tmp_path), "--threads", "8"]) == 0
    for name in DATASET_FILES:
        assert (tmp_path / name).read_bytes() == (built / name).read_bytes()


def test_manifest_counts(built):
    manifest = json.loads((built / "manifest.json").read_text())
    assert (manifest["counts"]["images"], manifest["counts"]["tracks"]) == (8, 50)
    assert manifest["counts"]["pairs"] > 0
    assert manifest["counts"]["patches"] == len(DatasetHandler(built).read_patches())
    assert manifest["config"]["max_v_th"] == 50.0
    assert len(manifest["config_hash"]) == 64


def test_pair_list_equals_sampler_output(synth_dir, built, tmp_path):
    scene = ColmapHandler(synth_dir / "sparse").read_model()
    result = sample_scene(scene, RunConfig().thresholds())
    DatasetHandler(tmp_path).write_pairs(result.pairs)
    assert (tmp_path / "pairs.tsv").read_bytes() == (built / "pairs.tsv").read_bytes()


def test_stats_histograms_cover_every_pair(built):
    assert main(["stats", "--out", str(built)]) == 0
    stats = json.loads((built / "stats.json").read_text())
    pairs = len(pd.read_csv(built / "pairs.tsv", sep="\t"))
    assert stats["pairs"] == pairs
    assert sum(stats["angle_histogram"]) == pairs == sum(stats["scale_histogram"])
    assert (built / "stats.txt").exists()


def test_empty_scene_builds_empty_dataset(tmp_path):
    scene_dir = tmp_path / "empty"
    scene_dir.mkdir()
    (scene_dir / "cameras.txt").write_text("1 PINHOLE 100 100 100.0 100.0 50.0 50.0\n")
    (scene_dir / "images.txt").write_text("1 1.0 0.0 0.0 0.0 0.0 0.0 0.0 1 identity.ppm\n\n")
    (scene_dir / "points3D.txt").write_text("")
    ImageHandler(scene_dir).save("identity.ppm", RawImage.from_array(np.zeros((100, 100, 3), np.uint8)))
    out = tmp_path / "out"
    assert main(["build", "--scene", str(scene_dir), "--out", str(out)]) == 0
    assert main(["stats", "--out", str(out)]) == 0
    stats = json.loads((out / "stats.json").read_text())
    assert (stats["patches"], stats["pairs"], stats["tracks"]) == (0, 0, 0)
    assert sum(stats["angle_histogram"]) == 0


def test_eval_match_with_perfect_descriptors(synth_dir, built, tmp_path):
    descriptors = _track_one_hot(built, tmp_path / "perfect.psde")
    assert _eval("match", synth_dir, built, "--descriptors", str(descriptors)) == 0
    report = json.loads((built / "report.json").read_text())["reports"][0]
    assert report["task"] == "match"
    assert report["mean_ap"] == 1.0


def test_eval_verify_and_retrieve_with_perfect_descriptors(synth_dir, built, tmp_path):
    descriptors = _track_one_hot(built, tmp_path / "perfect.psde")
    assert _eval("verify", synth_dir, built, "--descriptors", str(descriptors)) == 0
    assert json.loads((built / "report.json").read_text())["reports"][0]["mean_ap"] == 1.0
    assert _eval("retrieve", synth_dir, built, "--descriptors", str(descriptors), "--distractors", "5,20") == 0
    report = json.loads((built / "report.json").read_text())["reports"][0]
    assert report["per_category"] == {"distractors_5": 1.0, "distractors_20": 1.0}


def test_eval_verify_with_labels_file(synth_dir, built, tmp_path):
    track_ids = DatasetHandler(built).read_patches().records["track_id"]
    same = np.flatnonzero(track_ids == track_ids[0])
    other = int(np.flatnonzero(track_ids != track_ids[0])[0])
    labels = tmp_path / "labels.tsv"
    labels.write_text(f"row_a\trow_b\tlabel\n{same[0]}\t{same[1]}\t1\n{same[0]}\t{other}\t0\n")
    descriptors = _track_one_hot(built, tmp_path / "perfect.psde")
    assert _eval("verify", synth_dir, built, "--descriptors", str(descriptors), "--labels", str(labels)) == 0
    report = json.loads((built / "report.json").read_text())["reports"][0]
    assert report["counts"] == {"positives": 1, "negatives": 1}
    assert report["mean_ap"] == 1.0


def test_eval_strecha_with_perfect_descriptors(synth_dir, built, tmp_path):
    scene = ColmapHandler(synth_dir / "sparse").read_model()
    keypoints = np.array([obs.xy for track in scene.tracks.values() for obs in track.observations
                          if obs.image_id == 5])
    np.savetxt(tmp_path / "keypoints.txt", keypoints)
    handler = DescriptorHandler()
    for view in scene.views.values():
        handler.write(tmp_path / "desc" / view.name.replace(".ppm", ".psde"), np.eye(len(keypoints)))
    assert _eval("strecha", synth_dir, built, "--keypoints", str(tmp_path / "keypoints.txt"),
                 "--descriptors-dir", str(tmp_path / "desc")) == 0
    report = json.loads((built / "report.json").read_text())["reports"][0]
    assert report["mean_ap"] == 1.0
    assert report["counts"]["pairs"] == 7
    assert "strecha pairs:" in (built / "report.txt").read_text()


def test_eval_mine_writes_masks(synth_dir, built, tmp_path):
    descriptors = _track_one_hot(built, tmp_path / "perfect.psde")
    assert _eval("mine", synth_dir, built, "--descriptors", str(descriptors), "--batch-size", "8") == 0
    masks = DescriptorHandler().read_masks(built / "masks.bin")
    assert masks.anchor_vs_positive.shape == (8, 8)
    mining = json.loads((built / "mining.json").read_text())
    assert len(set(mining["track_ids"])) == 8
    assert mining["loss"] >= 0


def test_missing_descriptors_exit_code(synth_dir, built, tmp_path):
    assert _eval("retrieve", synth_dir, built, "--descriptors", str(tmp_path / "absent.psde")) == 7


def test_misaligned_descriptors_exit_code(synth_dir, built, tmp_path):
    path = DescriptorHandler().write(tmp_path / "short.psde", np.ones((3, 4)))
    assert _eval("retrieve", synth_dir, built, "--descriptors", str(path)) == 4


def test_corrupt_patch_file_exit_code(built, tmp_path):
    for name in DATASET_FILES:
        (tmp_path / name).write_bytes((built / name).read_bytes())
    blob = (tmp_path / "patches.psds").read_bytes()
    (tmp_path / "patches.psds").write_bytes(b"XXXX" + blob[4:])
    assert main(["stats", "--out", str(tmp_path)]) == 5


def test_parse_error_exit_code(synth_dir, tmp_path):
    scene_dir = tmp_path / "broken"
    scene_dir.mkdir()
    for name in ("images.txt", "points3D.txt"):
        (scene_dir / name).write_text((synth_dir / "sparse" / name).read_text())
    (scene_dir / "cameras.txt").write_text("0 SIMPLE_PINHOLE 640 not-a-number 300 320 240\n")
    assert main(["build", "--scene", str(scene_dir), "--out", str(tmp_path / "out")]) == 2


def test_missing_scene_exit_code(tmp_path):
    assert main(["build", "--scene", str(tmp_path / "nowhere"), "--out", str(tmp_path / "out")]) == 7


def test_eval_verify_hand_fixture(synth_dir, built, tmp_path):
    """Pairs at distances 0.1, 0.2, 0.3, 0.4 labelled P, N, P, N score AP 0.8333."""
    n_patches = len(DatasetHandler(built).read_patches())
    descriptors = np.zeros((n_patches, 1))
    descriptors[[1, 3, 5, 7], 0] = [0.1, 0.2, 0.3, 0.4]
    path = DescriptorHandler().write(tmp_path / "line.psde", descriptors)
    labels = tmp_path / "labels.tsv"
    labels.write_text("row_a\trow_b\tlabel\n0\t1\t1\n2\t3\t0\n4\t5\t1\n6\t7\t0\n")
    assert _eval("verify", synth_dir, built, "--descriptors", str(path), "--labels", str(labels)) == 0
    report = json.loads((built / "report.json").read_text())["reports"][0]
    assert report["mean_ap"] == pytest.approx((1 + 2 / 3) / 2, abs=1e-6)
