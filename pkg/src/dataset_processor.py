"""Builds a patch-correspondence dataset from a COLMAP model and summarizes built datasets."""
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Dict, List, Tuple
import logging

import numpy as np
import pandas as pd

from config import RunConfig
from errors import InputNotFoundError
from patches.dataset_handler import (
    CAMERAS_FILE,
    GRAY_FILE,
    PAIRS_FILE,
    PATCHES_FILE,
    DatasetHandler,
    PatchStore,
)
from patches.image_handler import ImageHandler
from patches.patch_extractor import PatchRecord, center_crop_32, extract_patch, to_grayscale
from sampler import SamplingResult, sample_scene
from scene.colmap_handler import ColmapHandler
from scene.model import Observation, SceneModel

ANGLE_BUCKET_DEG = 10.0
ANGLE_BUCKETS = 18
SCALE_EDGES = 2.0 ** np.arange(0.0, 3.25, 0.25)
STATS_JSON = "stats.json"
STATS_TEXT = "stats.txt"


def angle_histogram(angles: np.ndarray) -> List[int]:
    """18 ten-degree buckets over [0, 180]; 180 falls in the last bucket."""
    edges = np.arange(ANGLE_BUCKETS + 1) * ANGLE_BUCKET_DEG
    counts, _ = np.histogram(np.asarray(angles, dtype=np.float64), bins=edges)
    return counts.astype(int).tolist()


def scale_histogram(ratios: np.ndarray) -> List[int]:
    """Log2-spaced buckets [2^(k/4), 2^((k+1)/4)) from 1 to 8, plus [8, inf)."""
    ratios = np.asarray(ratios, dtype=np.float64)
    bucket = np.clip(np.searchsorted(SCALE_EDGES, ratios, side="right") - 1, 0, len(SCALE_EDGES) - 1)
    return np.bincount(bucket, minlength=len(SCALE_EDGES)).astype(int).tolist()


def angle_bucket_labels() -> List[str]:
    labels = [f"[{k * ANGLE_BUCKET_DEG:.0f}, {(k + 1) * ANGLE_BUCKET_DEG:.0f})" for k in range(ANGLE_BUCKETS)]
    labels[-1] = labels[-1][:-1] + "]"
    return labels


def scale_bucket_labels() -> List[str]:
    uppers = list(SCALE_EDGES[1:]) + [np.inf]
    return [f"[{lo:.3f}, {hi:.3f})" for lo, hi in zip(SCALE_EDGES, uppers)]


class DatasetProcessor:
    def __init__(self, config: RunConfig):
        self.config = config
        self.logger = logging.getLogger(__name__)
        self.dataset_handler = DatasetHandler(config.out_dir)

    def load_scene(self) -> SceneModel:
        if not self.config.scene_dir:
            raise InputNotFoundError("No scene directory configured (--scene or SCENE_DIR)")
        return ColmapHandler(self.config.scene_dir).read_model()

    def _patch_jobs(self, scene: SceneModel, sampling: SamplingResult) -> Dict[int, List[Tuple[int, Observation]]]:
        jobs: Dict[int, List[Tuple[int, Observation]]] = {}
        for track_id in sorted(sampling.kept_observations):
            track = scene.tracks[track_id]
            for obs_index in sampling.kept_observations[track_id]:
                obs = track.observations[obs_index]
                jobs.setdefault(obs.image_id, []).append((track_id, obs))
        return jobs

    def extract_patches(self, scene: SceneModel, sampling: SamplingResult) -> List[PatchRecord]:
        """One patch per kept observation, extracted image by image on the worker pool."""
        image_handler = ImageHandler(self.config.images_dir or self.config.scene_dir)
        jobs = self._patch_jobs(scene, sampling)
        names = [scene.views[image_id].name for image_id in sorted(scene.views)]
        missing = image_handler.missing(names)
        if missing:
            self.logger.error(f"{len(missing)} images referenced by the model are missing: {missing[:5]}")
            raise InputNotFoundError(f"Missing image file(s) in {image_handler.images_dir}: {', '.join(missing)}")

        def work(image_id):
            image = image_handler.load(scene.views[image_id].name)
            return [extract_patch(image, obs, track_id, self.config.rotation_sign)
                    for track_id, obs in jobs[image_id]]

        image_ids = sorted(jobs)
        if self.config.threads > 1:
            with ThreadPoolExecutor(max_workers=self.config.threads) as pool:
                per_image = list(pool.map(work, image_ids))
        else:
            per_image = [work(image_id) for image_id in image_ids]
        patches = [patch for image_patches in per_image for patch in image_patches]
        patches.sort(key=lambda p: (p.track_id, p.image_id))
        return patches

    def build(self, grayscale: bool = False) -> Dict[str, Any]:
        """Sample pairs, extract patches and write the dataset files plus manifest"""
        scene = self.load_scene()
        thresholds = self.config.thresholds()
        self.logger.info(f"Building dataset with thresholds {thresholds} and {self.config.threads} thread(s)")
        sampling = sample_scene(scene, thresholds, self.config.scale_clamp, self.config.threads)
        patches = self.extract_patches(scene, sampling)
        store = PatchStore.from_patches(patches)

        self.dataset_handler.write_patches(store)
        self.dataset_handler.write_pairs(sampling.pairs)
        self.dataset_handler.write_cameras(scene)
        files = [PATCHES_FILE, PAIRS_FILE, CAMERAS_FILE]
        if grayscale:
            crops = np.stack([to_grayscale(center_crop_32(p)) for p in patches]) if patches \
                else np.zeros((0, 32, 32), dtype=np.uint8)
            self.dataset_handler.write_grayscale(crops)
            files.append(GRAY_FILE)

        tracks_with_pairs = len({pair.track_id for pair in sampling.pairs.pairs})
        manifest = {
            "scene": self.config.resolved_scene_name,
            "config_hash": self.config.config_hash(),
            "config": self.config.content_settings(),
            "counts": {
                "images": len(scene.views),
                "tracks": len(scene.tracks),
                "patches": len(store),
                "pairs": len(sampling.pairs),
                "tracks_with_pairs": tracks_with_pairs,
                "dropped_depth": sampling.dropped_depth,
                "dropped_scale": sampling.dropped_scale,
            },
            "files": sorted(files),
        }
        self.dataset_handler.write_manifest(manifest)
        self.logger.info(f"Built dataset: {len(store)} patches, {len(sampling.pairs)} pairs, "
                         f"{tracks_with_pairs} tracks with pairs")
        return manifest

    def stats(self) -> Dict[str, Any]:
        """Counts plus viewpoint-angle and scale-ratio histograms of a built dataset"""
        store = self.dataset_handler.read_patches()
        pairs = self.dataset_handler.read_pairs().to_frame()
        summary = {
            "tracks": int(len(store.track_ids)),
            "images": int(len(np.unique(store.records["image_id"]))),
            "patches": len(store),
            "pairs": int(len(pairs)),
            "tracks_with_pairs": int(pairs["track_id"].nunique()),
            "angle_histogram": angle_histogram(pairs["angle_deg"].to_numpy()),
            "scale_histogram": scale_histogram(pairs["scale_ratio"].to_numpy()),
        }
        if len(pairs):
            summary["mean_angle_deg"] = float(pairs["angle_deg"].mean())
            summary["mean_scale_ratio"] = float(pairs["scale_ratio"].mean())
        self.dataset_handler.write_json(STATS_JSON, summary)
        text_path = self.dataset_handler.dataset_dir / STATS_TEXT
        text_path.write_text(format_stats(summary), encoding="utf-8")
        self.logger.info(f"Dataset stats: {summary['tracks']} tracks, {summary['patches']} patches, "
                         f"{summary['pairs']} pairs")
        return summary


def format_stats(summary: Dict[str, Any]) -> str:
    counts = pd.DataFrame([{k: summary[k] for k in ("tracks", "images", "patches", "pairs", "tracks_with_pairs")}])
    angles = pd.DataFrame({
        "angle_deg": angle_bucket_labels(),
        "pairs": summary["angle_histogram"],
    })
    scales = pd.DataFrame({"scale_ratio": scale_bucket_labels(), "pairs": summary["scale_histogram"]})
    return "\n\n".join(frame.to_string(index=False) for frame in (counts, angles, scales)) + "\n"
