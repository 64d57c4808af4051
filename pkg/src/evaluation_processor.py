"""
Runs the descriptor evaluation tasks against a built dataset (or a scene for
the point-transfer protocol) and writes the reports.

Descriptor files for match, verify, retrieve and mine hold one row per patch
in patch-file order. The strecha task reads one descriptor file per image,
named after the image with a .psde suffix, each with one row per keypoint of
the keypoint-source image.
"""
from itertools import combinations
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
import pandas as pd

from descriptor_handler import DescriptorHandler
from errors import ContractViolationError, DatasetFormatError, InputNotFoundError, InsufficientDataError
from evaluation import (
    DEFAULT_KEYPOINT_SOURCE,
    DEFAULT_N_POINTS,
    DEFAULT_PAIRING_ANCHOR,
    EvalReport,
    categorize_baseline,
    matching_map,
    retrieval_ap_by_distractors,
    strecha_pairs,
    strecha_protocol,
    verification_ap,
)
from geometry import angle_between
from mining import DEFAULT_MARGIN, batch_hard_loss, distance_matrix, sample_batch
from patches.dataset_handler import DatasetHandler, PatchStore
from report_handler import ReportHandler
from sampler import PairList
from scene.model import SceneModel

TASKS = ("match", "verify", "retrieve", "strecha", "mine")
DEFAULT_DISTRACTORS = (1000, 5000, 10000)
DEFAULT_BATCH_SIZE = 128
MASKS_FILE = "masks.bin"
MINING_FILE = "mining.json"
LABEL_COLUMNS = ["row_a", "row_b", "label"]


def descriptor_file_for(image_name: str) -> str:
    return f"{Path(image_name).stem}.psde"


def pair_rows(pairs: PairList, store: PatchStore, scene: SceneModel) -> List[Tuple[int, int]]:
    """Patch-file rows of each pair; patch indices are observation indices of the track."""
    rows = []
    for pair in pairs.pairs:
        observations = scene.tracks[pair.track_id].observations
        rows.append((store.row_for(pair.track_id, observations[pair.patch_a].image_id),
                     store.row_for(pair.track_id, observations[pair.patch_b].image_id)))
    return rows


class EvaluationProcessor:
    def __init__(self, dataset_dir=None, scene: Optional[SceneModel] = None, seed: int = 0):
        self.dataset_handler = DatasetHandler(dataset_dir)
        self.descriptor_handler = DescriptorHandler()
        self.report_handler = ReportHandler(self.dataset_handler.dataset_dir)
        self.scene = scene
        self.seed = seed
        self.logger = logging.getLogger(__name__)

    def _require_scene(self, task: str) -> SceneModel:
        if self.scene is None:
            raise InputNotFoundError(f"The {task} task needs the source scene (--scene)")
        return self.scene

    def _patch_descriptors(self, descriptor_path) -> Tuple[PatchStore, np.ndarray]:
        store = self.dataset_handler.read_patches()
        descriptors = self.descriptor_handler.read(descriptor_path, expected_rows=len(store))
        return store, descriptors

    def match(self, descriptor_path) -> EvalReport:
        """Nearest-neighbour matching between every image pair sharing tracks; ground truth is the shared track."""
        store, descriptors = self._patch_descriptors(descriptor_path)
        directions = self.dataset_handler.read_viewing_directions()
        image_ids = store.records["image_id"].astype(np.int64)
        track_ids = store.records["track_id"].astype(np.int64)
        rows_by_image = {int(i): np.flatnonzero(image_ids == i) for i in np.unique(image_ids)}

        details, by_category = [], {}
        for image_a, image_b in combinations(sorted(rows_by_image), 2):
            rows_a, rows_b = rows_by_image[image_a], rows_by_image[image_b]
            shared = np.intersect1d(track_ids[rows_a], track_ids[rows_b])
            if len(shared) == 0:
                continue
            pair_map = matching_map(descriptors[rows_a], track_ids[rows_a], descriptors[rows_b], track_ids[rows_b],
                                    {int(t): int(t) for t in shared})
            angle = angle_between(directions[image_a], directions[image_b])
            category = categorize_baseline(angle)
            by_category.setdefault(category.value, []).append(pair_map)
            details.append({"anchor": image_a, "target": image_b, "angle_deg": angle,
                            "category": category.value, "points": int(len(shared)), "map": pair_map})
        if not details:
            raise InsufficientDataError("No image pair shares a track; nothing to match")
        return EvalReport(task="match", mean_ap=float(np.mean([d["map"] for d in details])),
                          per_category={k: float(np.mean(v)) for k, v in by_category.items()},
                          counts={"image_pairs": len(details), "patches": len(store)}, details=details)

    def read_labels(self, labels_path, n_rows: int) -> pd.DataFrame:
        path = Path(labels_path)
        if not path.is_file():
            raise InputNotFoundError(f"Missing labels file: {path}")
        frame = pd.read_csv(path, sep="\t")
        if list(frame.columns) != LABEL_COLUMNS:
            raise DatasetFormatError(f"{path}: expected columns {LABEL_COLUMNS}, got {list(frame.columns)}")
        rows = frame[["row_a", "row_b"]].to_numpy()
        if rows.size and (rows.min() < 0 or rows.max() >= n_rows):
            raise ContractViolationError(f"{path}: patch row out of range for {n_rows} patches")
        return frame.astype({"row_a": "int64", "row_b": "int64", "label": "bool"})

    def verification_pairs(self, store: PatchStore) -> pd.DataFrame:
        """Positives from the pair list and as many random different-track negatives."""
        scene = self._require_scene("verify")
        positives = pair_rows(self.dataset_handler.read_pairs(), store, scene)
        if not positives:
            raise InsufficientDataError("Dataset has no positive pairs to verify")
        track_ids = store.records["track_id"]
        if len(np.unique(track_ids)) < 2:
            raise InsufficientDataError("Need patches from at least two tracks for negatives")
        rng = np.random.default_rng(self.seed)
        negatives: List[Tuple[int, int]] = []
        while len(negatives) < len(positives):
            need = len(positives) - len(negatives)
            a = rng.integers(len(store), size=need)
            b = rng.integers(len(store), size=need)
            keep = track_ids[a] != track_ids[b]
            negatives.extend(zip(a[keep].tolist(), b[keep].tolist()))
        rows = [(a, b, True) for a, b in positives] + [(a, b, False) for a, b in negatives]
        return pd.DataFrame(rows, columns=LABEL_COLUMNS)

    def verify(self, descriptor_path, labels_path=None) -> EvalReport:
        store, descriptors = self._patch_descriptors(descriptor_path)
        frame = self.read_labels(labels_path, len(store)) if labels_path else self.verification_pairs(store)
        a = descriptors[frame["row_a"].to_numpy()]
        b = descriptors[frame["row_b"].to_numpy()]
        distances = np.linalg.norm(a - b, axis=1)
        ap = verification_ap(distances, frame["label"].to_numpy())
        return EvalReport(task="verify", mean_ap=ap,
                          counts={"positives": int(frame["label"].sum()),
                                  "negatives": int((~frame["label"]).sum())})

    def retrieve(self, descriptor_path, distractor_counts: Sequence[int] = DEFAULT_DISTRACTORS) -> EvalReport:
        """The first patch of every multi-patch track queries the remaining patches of the dataset."""
        store, descriptors = self._patch_descriptors(descriptor_path)
        track_ids = store.records["track_id"]
        _, first_rows, sizes = np.unique(track_ids, return_index=True, return_counts=True)
        query_rows = np.sort(first_rows[sizes > 1])
        if len(query_rows) == 0:
            raise InsufficientDataError("No track has two patches; nothing to retrieve")
        pool_rows = np.setdiff1d(np.arange(len(store)), query_rows)
        pool_tracks = track_ids[pool_rows]
        relevant = [set(np.flatnonzero(pool_tracks == track_ids[q]).tolist()) for q in query_rows]
        by_count = retrieval_ap_by_distractors(descriptors[query_rows], descriptors[pool_rows], relevant,
                                               distractor_counts)
        return EvalReport(task="retrieve", mean_ap=float(np.mean(list(by_count.values()))),
                          per_category={f"distractors_{c}": v for c, v in by_count.items()},
                          counts={"queries": len(query_rows), "pool": int(len(pool_rows))})

    def strecha(self, keypoints_path, descriptors_dir, keypoint_source: int = DEFAULT_KEYPOINT_SOURCE,
                anchor: int = DEFAULT_PAIRING_ANCHOR, n_points: int = DEFAULT_N_POINTS) -> EvalReport:
        scene = self._require_scene("strecha")
        for image_id in (keypoint_source, anchor):
            if image_id not in scene.views:
                raise ContractViolationError(f"Image {image_id} is not in the scene")
        path = Path(keypoints_path)
        if not path.is_file():
            raise InputNotFoundError(f"Missing keypoint file: {path}")
        try:
            keypoints = np.loadtxt(path, dtype=np.float64, ndmin=2)[:, :2]
        except (ValueError, IndexError) as e:
            raise DatasetFormatError(f"{path}: expected one 'x y' keypoint per line: {e}") from e
        pairs = strecha_pairs(scene, anchor)
        descriptors_dir = Path(descriptors_dir)
        descriptors = {}
        for image_id in sorted({i for pair in pairs for i in pair}):
            file_path = descriptors_dir / descriptor_file_for(scene.views[image_id].name)
            descriptors[image_id] = self.descriptor_handler.read(file_path, expected_rows=len(keypoints))
        return strecha_protocol(scene, keypoint_source, pairs, keypoints, descriptors,
                                n_points=n_points, rng_seed=self.seed)

    def mine(self, descriptor_path, batch_size: int = DEFAULT_BATCH_SIZE,
             margin: float = DEFAULT_MARGIN) -> Dict[str, Any]:
        """Sample a hardest-positive batch, compute the hardest-negative loss and export its masks"""
        scene = self._require_scene("mine")
        store, descriptors = self._patch_descriptors(descriptor_path)
        pairs = self.dataset_handler.read_pairs()
        scaffold = sample_batch(pairs, store, batch_size, self.seed, scene, descriptors)
        batch = scaffold.to_descriptor_batch(descriptors)
        result = batch_hard_loss(distance_matrix(batch), scaffold.masks, margin)
        self.descriptor_handler.write_masks(self.dataset_handler.dataset_dir / MASKS_FILE, scaffold.masks)
        summary = {
            "batch_size": batch_size,
            "seed": self.seed,
            "margin": margin,
            "loss": result.loss,
            "active_rows": result.active_rows,
            "track_ids": scaffold.track_ids.tolist(),
            "anchor_rows": scaffold.anchor_rows.tolist(),
            "positive_rows": scaffold.positive_rows.tolist(),
        }
        self.dataset_handler.write_json(MINING_FILE, summary)
        self.logger.info(f"Batch of {batch_size}: loss {result.loss:.6f} over {result.active_rows} active rows")
        return summary

    def write_report(self, report: EvalReport) -> List[Path]:
        return self.report_handler.write([report], extra={"seed": self.seed})
