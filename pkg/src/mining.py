"""
Valid-negative rule and the hardest-in-batch margin loss.

A batch holds m matching pairs (a_i, b_i) from m distinct tracks. For every
row the hardest valid negative is searched on both sides (b_j for a_i, a_k for
b_i); a negative is valid when its track is different and, in every image both
tracks are observed in, their projections are more than half of the larger
un-normalized crop side apart.
"""
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np
from scipy.spatial.distance import cdist

from errors import BehindCameraError, ContractViolationError, InsufficientDataError
from geometry import project
from patches.dataset_handler import PatchStore
from sampler import PairList
from scene.model import SceneModel, Track, common_images

logger = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-6
SEPARATION_FRACTION = 0.5
DEFAULT_MARGIN = 1.0


@dataclass(frozen=True, eq=False)
class DescriptorBatch:
    anchors: np.ndarray
    positives: np.ndarray
    anchor_track: np.ndarray
    positive_track: np.ndarray

    def __post_init__(self):
        anchors = np.atleast_2d(np.asarray(self.anchors, dtype=np.float64))
        positives = np.atleast_2d(np.asarray(self.positives, dtype=np.float64))
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "positives", positives)
        object.__setattr__(self, "anchor_track", np.asarray(self.anchor_track, dtype=np.int64))
        object.__setattr__(self, "positive_track", np.asarray(self.positive_track, dtype=np.int64))
        if anchors.shape != positives.shape:
            raise ContractViolationError(f"Anchor shape {anchors.shape} != positive shape {positives.shape}")
        for name, vectors in (("anchor", anchors), ("positive", positives)):
            norms = np.linalg.norm(vectors, axis=1)
            if np.any(np.abs(norms - 1.0) > UNIT_TOLERANCE):
                raise ContractViolationError(f"Every {name} descriptor must be L2-normalized")
        if not np.array_equal(self.anchor_track, self.positive_track):
            raise ContractViolationError("anchor_track and positive_track must agree row by row")

    @property
    def m(self) -> int:
        return len(self.anchors)


@dataclass(frozen=True, eq=False)
class ValidityMask:
    # entry (i, j): b_j is a valid negative for a_i
    anchor_vs_positive: np.ndarray
    # entry (i, k): a_k is a valid negative for b_i
    positive_vs_anchor: np.ndarray

    def __post_init__(self):
        for name in ("anchor_vs_positive", "positive_vs_anchor"):
            mask = np.asarray(getattr(self, name), dtype=bool)
            object.__setattr__(self, name, mask)
            if mask.ndim != 2 or mask.shape[0] != mask.shape[1]:
                raise ContractViolationError(f"{name} must be square, got {mask.shape}")
            if np.any(np.diag(mask)):
                raise ContractViolationError(f"{name} must have a false diagonal")

    @classmethod
    def full(cls, m: int) -> "ValidityMask":
        mask = ~np.eye(m, dtype=bool)
        return cls(mask, mask.copy())


@dataclass(frozen=True)
class LossResult:
    loss: float
    hardest_neg_for_anchor: Tuple[Optional[int], ...]
    hardest_neg_for_positive: Tuple[Optional[int], ...]
    active_rows: int


@dataclass(frozen=True, eq=False)
class BatchScaffold:
    """Patch rows of a sampled batch plus its validity masks; descriptors are attached later."""
    anchor_rows: np.ndarray
    positive_rows: np.ndarray
    track_ids: np.ndarray
    masks: ValidityMask

    @property
    def m(self) -> int:
        return len(self.track_ids)

    def to_descriptor_batch(self, descriptors: np.ndarray) -> DescriptorBatch:
        return DescriptorBatch(
            anchors=descriptors[self.anchor_rows],
            positives=descriptors[self.positive_rows],
            anchor_track=self.track_ids,
            positive_track=self.track_ids,
        )


def _track_projections(track: Track, scene: SceneModel) -> Dict[int, Optional[np.ndarray]]:
    projections = {}
    for image_id in track.image_ids:
        view = scene.views[image_id]
        try:
            projections[image_id] = np.array(project(track.position, view, scene.cameras[view.camera_id]))
        except BehindCameraError:
            projections[image_id] = None
    return projections


def _separated(proj_p: Dict[int, Optional[np.ndarray]], proj_q: Dict[int, Optional[np.ndarray]],
               common: Iterable[int], threshold: float) -> bool:
    for image_id in common:
        xy_p, xy_q = proj_p[image_id], proj_q[image_id]
        # a point behind a camera it was observed in cannot be checked; treat as too close
        if xy_p is None or xy_q is None:
            return False
        if not np.linalg.norm(xy_p - xy_q) > threshold:
            return False
    return True


def valid_negative(track_p: Track, track_q: Track, scene: SceneModel,
                   crop_side_p: float, crop_side_q: float) -> bool:
    if track_p.point_id == track_q.point_id:
        return False
    common = common_images(track_p, track_q)
    if not common:
        return True
    threshold = SEPARATION_FRACTION * max(crop_side_p, crop_side_q)
    return _separated(_track_projections(track_p, scene), _track_projections(track_q, scene),
                      sorted(common), threshold)


def distance_matrix(batch: DescriptorBatch) -> np.ndarray:
    """D[i, j] = ||a_i - b_j||."""
    return cdist(batch.anchors, batch.positives, metric="euclidean")


def batch_hard_loss(D: np.ndarray, masks: ValidityMask, margin: float = DEFAULT_MARGIN) -> LossResult:
    if not margin > 0:
        raise ContractViolationError(f"margin must be positive, got {margin}")
    D = np.asarray(D, dtype=np.float64)
    m = D.shape[0]
    if D.shape != (m, m) or masks.anchor_vs_positive.shape != (m, m):
        raise ContractViolationError(f"Distance matrix {D.shape} and masks {masks.anchor_vs_positive.shape} disagree")
    if m == 0:
        return LossResult(0.0, (), (), 0)

    positive_distance = np.diag(D)
    anchor_candidates = np.where(masks.anchor_vs_positive, D, np.inf)
    # positive side of row i looks down column i: D[k, i] = dist(a_k, b_i)
    positive_candidates = np.where(masks.positive_vs_anchor, D.T, np.inf)
    has_anchor_neg = masks.anchor_vs_positive.any(axis=1)
    has_positive_neg = masks.positive_vs_anchor.any(axis=1)
    anchor_idx = np.argmin(anchor_candidates, axis=1)
    positive_idx = np.argmin(positive_candidates, axis=1)

    hardest = np.minimum(anchor_candidates.min(axis=1), positive_candidates.min(axis=1))
    active = has_anchor_neg | has_positive_neg
    terms = np.maximum(0.0, margin + positive_distance[active] - hardest[active])
    loss = float(terms.mean()) if terms.size else 0.0

    return LossResult(
        loss=loss,
        hardest_neg_for_anchor=tuple(int(j) if ok else None for j, ok in zip(anchor_idx, has_anchor_neg)),
        hardest_neg_for_positive=tuple(int(k) if ok else None for k, ok in zip(positive_idx, has_positive_neg)),
        active_rows=int(active.sum()),
    )


def compute_masks(scene: SceneModel, track_ids: Sequence[int],
                  anchor_sides: Sequence[float], positive_sides: Sequence[float]) -> ValidityMask:
    m = len(track_ids)
    tracks = [scene.tracks[t] for t in track_ids]
    projections = [_track_projections(track, scene) for track in tracks]
    image_sets = [frozenset(track.image_ids) for track in tracks]
    anchor_vs_positive = np.zeros((m, m), dtype=bool)
    positive_vs_anchor = np.zeros((m, m), dtype=bool)
    for i in range(m):
        for j in range(m):
            if track_ids[i] == track_ids[j]:
                continue
            common = sorted(image_sets[i] & image_sets[j])
            if not common:
                anchor_vs_positive[i, j] = positive_vs_anchor[i, j] = True
                continue
            anchor_vs_positive[i, j] = _separated(
                projections[i], projections[j], common,
                SEPARATION_FRACTION * max(anchor_sides[i], positive_sides[j]))
            positive_vs_anchor[i, j] = _separated(
                projections[i], projections[j], common,
                SEPARATION_FRACTION * max(positive_sides[i], anchor_sides[j]))
    return ValidityMask(anchor_vs_positive, positive_vs_anchor)


def _pairs_by_track(pairlists: Union[PairList, Iterable[PairList]], scene: SceneModel,
                    store: PatchStore) -> Dict[int, List[Tuple[int, int]]]:
    if isinstance(pairlists, PairList):
        pairlists = [pairlists]
    by_track: Dict[int, List[Tuple[int, int]]] = {}
    for pairlist in pairlists:
        for pair in pairlist.sorted().pairs:
            track = scene.tracks.get(pair.track_id)
            if track is None:
                continue
            image_a = track.observations[pair.patch_a].image_id
            image_b = track.observations[pair.patch_b].image_id
            if not (store.has(pair.track_id, image_a) and store.has(pair.track_id, image_b)):
                continue
            by_track.setdefault(pair.track_id, []).append(
                (store.row_for(pair.track_id, image_a), store.row_for(pair.track_id, image_b)))
    return by_track


def sample_batch(pairlists: Union[PairList, Iterable[PairList]], store: PatchStore, m: int, rng_seed: int,
                 scene: SceneModel, descriptors: np.ndarray = None) -> BatchScaffold:
    """Draw m distinct tracks and one (anchor, positive) patch pair from each.

    With descriptors (rows aligned with the patch store) each track contributes
    its hardest positive pair, otherwise a uniformly drawn one.
    """
    by_track = _pairs_by_track(pairlists, scene, store)
    track_ids = sorted(by_track)
    if len(track_ids) < m:
        raise InsufficientDataError(f"Need {m} tracks with pairs, only {len(track_ids)} available")

    rng = np.random.default_rng(rng_seed)
    chosen = [track_ids[k] for k in rng.choice(len(track_ids), size=m, replace=False)]
    anchor_rows, positive_rows = [], []
    for track_id in chosen:
        candidates = by_track[track_id]
        if descriptors is not None:
            rows = np.array(candidates)
            distances = np.linalg.norm(descriptors[rows[:, 0]] - descriptors[rows[:, 1]], axis=1)
            a, b = candidates[int(np.argmax(distances))]
        else:
            a, b = candidates[int(rng.integers(len(candidates)))]
        anchor_rows.append(a)
        positive_rows.append(b)

    masks = compute_masks(scene, chosen,
                          [store.crop_side(r) for r in anchor_rows],
                          [store.crop_side(r) for r in positive_rows])
    logger.debug(f"Sampled batch of {m} tracks with seed {rng_seed}")
    return BatchScaffold(anchor_rows=np.array(anchor_rows, dtype=np.int64),
                         positive_rows=np.array(positive_rows, dtype=np.int64),
                         track_ids=np.array(chosen, dtype=np.int64), masks=masks)
