"""
Descriptor evaluation: average precision for patch verification, image
matching and patch retrieval, and the wide-baseline point-transfer protocol
with Narrow / Wide / Very-Wide baseline categories.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple
import logging

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from errors import ContractViolationError, UndefinedAPError
from geometry import angle_between, project_points
from scene.model import SceneModel

logger = logging.getLogger(__name__)

TRANSFER_RADIUS_PX = 3.0
DEFAULT_N_POINTS = 2000
DEFAULT_KEYPOINT_SOURCE = 5
DEFAULT_PAIRING_ANCHOR = 0


class BaselineCategory(str, Enum):
    NARROW = "Narrow"
    WIDE = "Wide"
    VERY_WIDE = "VeryWide"
    OUT_OF_RANGE = "OutOfRange"


BASELINE_UPPER_BOUNDS = (
    (30.0, BaselineCategory.NARROW),
    (75.0, BaselineCategory.WIDE),
)
MAX_BASELINE_DEG = 130.0


@dataclass(frozen=True, eq=False)
class RankedList:
    scores: np.ndarray
    relevant: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "relevant", np.asarray(self.relevant, dtype=bool).reshape(-1))
        if self.scores.shape != self.relevant.shape:
            raise ContractViolationError("scores and relevance flags must have the same length")

    @classmethod
    def from_items(cls, items: Sequence[Tuple[float, bool]]) -> "RankedList":
        items = list(items)
        return cls([s for s, _ in items], [r for _, r in items])


@dataclass
class EvalReport:
    task: str
    mean_ap: float
    per_category: Dict[str, float] = field(default_factory=dict)
    counts: Dict[str, int] = field(default_factory=dict)
    details: List[Dict] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "task": self.task,
            "mean_ap": self.mean_ap,
            "per_category": dict(self.per_category),
            "counts": dict(self.counts),
            "details": list(self.details),
        }


def average_precision(ranked: RankedList) -> float:
    """Mean of precision@k over the ranks k holding relevant items.

    Items are ranked by descending score; equal scores keep input order.
    """
    n_relevant = int(ranked.relevant.sum())
    if n_relevant == 0:
        raise UndefinedAPError("Average precision is undefined without relevant items")
    order = np.argsort(-ranked.scores, kind="stable")
    hits = ranked.relevant[order]
    precision_at_k = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision_at_k[hits].sum() / n_relevant)


def verification_ap(distances: Sequence[float], labels: Sequence[bool]) -> float:
    """AP of matching/non-matching classification with similarity = -L2 distance."""
    return average_precision(RankedList(-np.asarray(distances, dtype=np.float64), labels))


def matching_map(ref_descriptors: np.ndarray, ref_ids: Sequence[int],
                 target_descriptors: np.ndarray, target_ids: Sequence[int],
                 ground_truth: Mapping[int, int]) -> float:
    """Nearest-neighbour matching from reference to target keypoints, scored by AP.

    A prediction is relevant when the matched target id is the ground-truth
    partner of the reference id. With no correct prediction the AP is 0.
    """
    if not ground_truth:
        raise ContractViolationError("Ground truth correspondences must not be empty")
    target_descriptors = np.atleast_2d(target_descriptors)
    if len(target_ids) == 0 or target_descriptors.size == 0:
        raise ContractViolationError("Target keypoint set is empty")
    ref_descriptors = np.atleast_2d(ref_descriptors)
    distances = cdist(ref_descriptors, target_descriptors, metric="euclidean")
    nn = np.argmin(distances, axis=1)
    nn_distance = distances[np.arange(len(nn)), nn]
    target_ids = np.asarray(target_ids)
    relevant = np.array([ground_truth.get(int(r)) == int(target_ids[j]) for r, j in zip(ref_ids, nn)], dtype=bool)
    if not relevant.any():
        return 0.0
    return average_precision(RankedList(-nn_distance, relevant))


def retrieval_ap_by_distractors(queries: np.ndarray, pool: np.ndarray, relevant: Sequence[Set[int]],
                                distractor_counts: Sequence[int] = None) -> Dict[int, float]:
    """Mean AP over queries for each distractor count.

    For a query the candidate set is its relevant pool items plus the first
    `count` non-relevant pool items in pool order.
    """
    queries = np.atleast_2d(queries)
    pool = np.atleast_2d(pool)
    if len(queries) != len(relevant):
        raise ContractViolationError("Need one relevant set per query")
    distances = cdist(queries, pool, metric="euclidean")
    if distractor_counts is None:
        distractor_counts = [len(pool)]
    results = {}
    for count in distractor_counts:
        aps = []
        for q, rel in enumerate(relevant):
            rel = sorted(int(r) for r in rel)
            if not rel:
                raise UndefinedAPError(f"Query {q} has no relevant pool item")
            rel_set = set(rel)
            distractors = [k for k in range(len(pool)) if k not in rel_set][:count]
            candidates = rel + distractors
            aps.append(average_precision(RankedList(
                -distances[q, candidates], [k in rel_set for k in candidates])))
        results[int(count)] = float(np.mean(aps))
    return results


def retrieval_map(queries: np.ndarray, pool: np.ndarray, relevant: Sequence[Set[int]],
                  distractor_counts: Sequence[int] = None, weights: Sequence[float] = None) -> float:
    by_count = retrieval_ap_by_distractors(queries, pool, relevant, distractor_counts)
    values = np.array(list(by_count.values()))
    if weights is None:
        return float(values.mean())
    return float(np.average(values, weights=np.asarray(weights, dtype=np.float64)))


def categorize_baseline(angle: float) -> BaselineCategory:
    if not 0.0 <= angle <= 180.0:
        raise ContractViolationError(f"Baseline angle must lie in [0, 180], got {angle}")
    for upper, category in BASELINE_UPPER_BOUNDS:
        if angle < upper:
            return category
    if angle <= MAX_BASELINE_DEG:
        return BaselineCategory.VERY_WIDE
    logger.warning(f"Baseline angle {angle:.2f} deg exceeds {MAX_BASELINE_DEG} deg; reported as out of range")
    return BaselineCategory.OUT_OF_RANGE


class PointTransfer:
    """Transfers keypoints of one reference image to other images through the nearest reconstructed point."""

    def __init__(self, scene: SceneModel, ref_image_id: int, radius: float = TRANSFER_RADIUS_PX):
        self.scene = scene
        self.ref_image_id = ref_image_id
        self.radius = radius
        self.point_ids = np.array(sorted(scene.tracks), dtype=np.int64)
        self.positions = np.array([scene.tracks[p].position for p in self.point_ids]).reshape(-1, 3)
        view = scene.views[ref_image_id]
        xy, z = project_points(self.positions, view, scene.camera_for(ref_image_id))
        self._front = np.flatnonzero(z > 0)
        self._ref_xy = xy[self._front]
        self._tree = cKDTree(self._ref_xy) if len(self._front) else None

    def nearest_point(self, p_r) -> Optional[int]:
        """Row (into positions) of the point whose reference projection is nearest p_r within the radius."""
        if self._tree is None:
            return None
        p_r = np.asarray(p_r, dtype=np.float64)
        hits = self._tree.query_ball_point(p_r, r=self.radius)
        if not hits:
            return None
        hits = np.array(sorted(hits))
        d = np.linalg.norm(self._ref_xy[hits] - p_r, axis=1)
        # ties go to the lowest point id
        return int(self._front[hits[int(np.argmin(d))]])

    def transfer(self, p_r, target_image_id: int) -> Optional[Tuple[float, float]]:
        row = self.nearest_point(p_r)
        if row is None:
            return None
        view = self.scene.views[target_image_id]
        xy, z = project_points(self.positions[row], view, self.scene.camera_for(target_image_id))
        if not z[0] > 0:
            return None
        return float(xy[0, 0]), float(xy[0, 1])

    def transfer_keypoints(self, keypoints: np.ndarray, target_image_id: int,
                           inside_only: bool = True) -> np.ndarray:
        """(K, 2) transferred coordinates; NaN rows where transfer fails or falls outside the target image."""
        keypoints = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
        cam = self.scene.camera_for(target_image_id)
        out = np.full((len(keypoints), 2), np.nan)
        for k, p_r in enumerate(keypoints):
            xy = self.transfer(p_r, target_image_id)
            if xy is None:
                continue
            if inside_only and not (0 <= xy[0] < cam.width and 0 <= xy[1] < cam.height):
                continue
            out[k] = xy
        return out


def transfer_point(p_r, ref_view: int, target_view: int, scene: SceneModel,
                   radius: float = TRANSFER_RADIUS_PX) -> Optional[Tuple[float, float]]:
    return PointTransfer(scene, ref_view, radius).transfer(p_r, target_view)


def strecha_pairs(scene: SceneModel, anchor: int = DEFAULT_PAIRING_ANCHOR) -> List[Tuple[int, int]]:
    return [(anchor, image_id) for image_id in sorted(scene.views) if image_id != anchor]


def baseline_angle(scene: SceneModel, image_a: int, image_b: int) -> float:
    return angle_between(scene.views[image_a].viewing_direction, scene.views[image_b].viewing_direction)


def strecha_protocol(scene: SceneModel, ref_index: int, pairs: Sequence[Tuple[int, int]],
                     keypoints: np.ndarray, descriptors: Mapping[int, np.ndarray],
                     n_points: int = DEFAULT_N_POINTS, rng_seed: int = 0,
                     radius: float = TRANSFER_RADIUS_PX) -> EvalReport:
    """Keypoint-matching mAP per image pair on points transferred from the keypoint-source image.

    descriptors[image_id] holds one row per keypoint of the source image,
    computed at that keypoint's transferred location in image_id.
    """
    rng = np.random.default_rng(rng_seed)
    transfer = PointTransfer(scene, ref_index, radius)
    keypoints = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
    transferred: Dict[int, np.ndarray] = {}

    def visible_in(image_id):
        if image_id not in transferred:
            transferred[image_id] = ~np.isnan(transfer.transfer_keypoints(keypoints, image_id)[:, 0])
        return transferred[image_id]

    by_category: Dict[str, List[float]] = {}
    details, all_aps = [], []
    skipped = 0
    for anchor, target in pairs:
        ids = np.flatnonzero(visible_in(anchor) & visible_in(target))
        angle = baseline_angle(scene, anchor, target)
        category = categorize_baseline(angle)
        if len(ids) == 0:
            logger.warning(f"No co-visible transferred points for pair ({anchor}, {target}); skipped")
            skipped += 1
            details.append({"anchor": anchor, "target": target, "angle_deg": angle,
                            "category": category.value, "points": 0, "map": None})
            continue
        if len(ids) > n_points:
            ids = np.sort(rng.choice(ids, size=n_points, replace=False))
        pair_map = matching_map(descriptors[anchor][ids], ids, descriptors[target][ids], ids,
                                {int(k): int(k) for k in ids})
        by_category.setdefault(category.value, []).append(pair_map)
        all_aps.append(pair_map)
        details.append({"anchor": anchor, "target": target, "angle_deg": angle,
                        "category": category.value, "points": int(len(ids)), "map": pair_map})
        logger.info(f"Pair ({anchor}, {target}) {category.value} {angle:.1f} deg: "
                    f"mAP {pair_map:.4f} on {len(ids)} points")

    return EvalReport(
        task="strecha",
        mean_ap=float(np.mean(all_aps)) if all_aps else 0.0,
        per_category={name: float(np.mean(v)) for name, v in by_category.items()},
        counts={"pairs": len(pairs), "evaluated_pairs": len(all_aps), "skipped_pairs": skipped,
                "keypoints": int(len(keypoints))},
        details=details,
    )
