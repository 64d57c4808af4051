"""
Viewpoint/scale-diverse sampling of matching correspondences.

For every reference patch of a track a matching set is grown greedily: each
iteration considers the candidate whose minimum viewpoint difference (MVD) to
the current set is largest, and keeps it only if it adds viewpoint or scale
diversity while staying within the scale threshold. Members paired with the
reference patch become positive correspondences.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Sequence, Tuple
import logging

import numpy as np
import pandas as pd

from errors import ContractViolationError
from geometry import angle_matrix, depth
from scene.model import SceneModel, Track

logger = logging.getLogger(__name__)

PAIR_COLUMNS = ["track_id", "patch_a", "patch_b", "angle_deg", "scale_ratio"]


@dataclass(frozen=True)
class SamplingThresholds:
    sc_th: float = 2.5
    min_v_th: float = 25.0
    max_v_th: float = 50.0
    scale_jump: float = 1.5

    def __post_init__(self):
        if not self.sc_th > 1:
            raise ContractViolationError(f"sc_th must be > 1, got {self.sc_th}")
        if not 0 <= self.min_v_th <= self.max_v_th <= 180:
            raise ContractViolationError(
                f"Need 0 <= min_v_th <= max_v_th <= 180, got {self.min_v_th}, {self.max_v_th}")
        if not self.scale_jump > 1:
            raise ContractViolationError(f"scale_jump must be > 1, got {self.scale_jump}")

    @classmethod
    def for_scene(cls, planar: bool = False, **overrides) -> "SamplingThresholds":
        """Defaults with MAX_V_TH raised to 75 degrees for scenes with planar structures"""
        values = {"max_v_th": 75.0 if planar else 50.0}
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


@dataclass(frozen=True, eq=False)
class TrackGeometry:
    """Per-patch focal length, depth and viewing direction of one track's kept observations."""
    track_id: int
    focal: np.ndarray
    depth: np.ndarray
    directions: np.ndarray
    # original observation index of each row
    obs_indices: Tuple[int, ...] = None

    def __post_init__(self):
        object.__setattr__(self, "focal", np.asarray(self.focal, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "depth", np.asarray(self.depth, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "directions", np.asarray(self.directions, dtype=np.float64).reshape(-1, 3))
        if self.obs_indices is None:
            object.__setattr__(self, "obs_indices", tuple(range(len(self.focal))))

    def __len__(self):
        return len(self.focal)

    @property
    def fd(self) -> np.ndarray:
        return self.focal / self.depth

    def scale_between(self, a: int, b: int) -> float:
        fd = self.fd
        return float(max(fd[a], fd[b]) / min(fd[a], fd[b]))


@dataclass(frozen=True)
class MatchSet:
    reference: int
    members: Tuple[int, ...]


class Pair(NamedTuple):
    track_id: int
    patch_a: int
    patch_b: int
    angle_deg: float
    scale_ratio: float


@dataclass
class PairList:
    pairs: List[Pair] = field(default_factory=list)

    def __len__(self):
        return len(self.pairs)

    def sorted(self) -> "PairList":
        return PairList(sorted(self.pairs, key=lambda p: (p.track_id, p.patch_a, p.patch_b)))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.pairs, columns=PAIR_COLUMNS).astype(
            {"track_id": "int64", "patch_a": "int64", "patch_b": "int64",
             "angle_deg": "float64", "scale_ratio": "float64"})

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "PairList":
        return cls([Pair(int(r.track_id), int(r.patch_a), int(r.patch_b), float(r.angle_deg), float(r.scale_ratio))
                    for r in frame.itertuples(index=False)])


@dataclass
class SamplingResult:
    pairs: PairList
    match_sets: Dict[int, List[MatchSet]]
    kept_observations: Dict[int, Tuple[int, ...]]
    dropped_depth: int = 0
    dropped_scale: int = 0


def build_match_set(i: int, track_geom: TrackGeometry, A: np.ndarray, th: SamplingThresholds) -> MatchSet:
    n = len(track_geom)
    if not 0 <= i < n:
        raise ContractViolationError(f"Patch index {i} out of range for track of size {n}")
    if A.shape != (n, n):
        raise ContractViolationError(f"Angle matrix shape {A.shape} does not match track size {n}")
    if np.any(track_geom.depth <= 0):
        raise ContractViolationError("All depths must be positive before sampling")

    fd = track_geom.fd
    indices = np.arange(n)
    candidates = (indices > i) & (A[i] <= th.max_v_th)
    in_set = np.zeros(n, dtype=bool)
    in_set[i] = True
    members = [i]
    # running min over members of A[h][k] and the member attaining it
    mvd = A[i].astype(np.float64)
    nearest = np.full(n, i)

    while True:
        available = candidates & ~in_set
        if not available.any():
            break
        j = int(np.argmax(np.where(available, mvd, -np.inf)))
        r = int(nearest[j])
        s_ij = max(fd[i], fd[j]) / min(fd[i], fd[j])
        s_rj = max(fd[r], fd[j]) / min(fd[r], fd[j])
        if not ((mvd[j] >= th.min_v_th or s_rj > th.scale_jump) and s_ij < th.sc_th):
            break

        members.append(j)
        in_set[j] = True
        row = A[j]
        closer = (row < mvd) | ((row == mvd) & (j < nearest))
        nearest = np.where(closer, j, nearest)
        mvd = np.minimum(mvd, row)

    return MatchSet(reference=i, members=tuple(members))


def sample_track_pairs(track_geom: TrackGeometry, th: SamplingThresholds) -> PairList:
    pairs, _ = _sample_track(track_geom, th)
    return pairs


def _sample_track(track_geom: TrackGeometry, th: SamplingThresholds) -> Tuple[PairList, List[MatchSet]]:
    n = len(track_geom)
    if n == 0:
        return PairList(), []
    A = angle_matrix(track_geom.directions)
    original = track_geom.obs_indices
    pairs, match_sets = [], []
    for i in range(n):
        match_set = build_match_set(i, track_geom, A, th)
        match_sets.append(MatchSet(reference=original[i],
                                   members=tuple(original[k] for k in match_set.members)))
        for j in match_set.members[1:]:
            pairs.append(Pair(track_geom.track_id, original[i], original[j],
                              float(A[i, j]), track_geom.scale_between(i, j)))
    return PairList(pairs).sorted(), match_sets


def track_geometry(scene: SceneModel, track: Track,
                   scale_clamp: Sequence[float] = (1.6, 15.0)) -> Tuple[TrackGeometry, int, int]:
    """Geometry of a track's usable observations, with counts dropped for depth and for scale."""
    scale_min, scale_max = scale_clamp
    focal, depths, directions, kept = [], [], [], []
    dropped_depth = dropped_scale = 0
    for obs_index, obs in enumerate(track.observations):
        view = scene.views[obs.image_id]
        d = depth(track.position, view)
        if d <= 0:
            dropped_depth += 1
            continue
        if not scale_min <= obs.scale <= scale_max:
            dropped_scale += 1
            continue
        focal.append(scene.cameras[view.camera_id].focal_px)
        depths.append(d)
        directions.append(view.viewing_direction)
        kept.append(obs_index)
    geom = TrackGeometry(track_id=track.point_id, focal=focal, depth=depths,
                         directions=np.array(directions).reshape(-1, 3), obs_indices=tuple(kept))
    return geom, dropped_depth, dropped_scale


def sample_scene(scene: SceneModel, th: SamplingThresholds,
                 scale_clamp: Sequence[float] = (1.6, 15.0), threads: int = 1) -> SamplingResult:
    """Sample every track of the scene; output is identical for any thread count."""
    track_ids = sorted(scene.tracks)

    def work(track_id):
        geom, dropped_depth, dropped_scale = track_geometry(scene, scene.tracks[track_id], scale_clamp)
        pairs, match_sets = _sample_track(geom, th)
        return track_id, geom.obs_indices, pairs, match_sets, dropped_depth, dropped_scale

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, track_ids))
    else:
        results = [work(track_id) for track_id in track_ids]

    all_pairs, match_sets, kept = [], {}, {}
    dropped_depth = dropped_scale = 0
    for track_id, obs_indices, pairs, track_sets, n_depth, n_scale in results:
        all_pairs.extend(pairs.pairs)
        match_sets[track_id] = track_sets
        kept[track_id] = obs_indices
        dropped_depth += n_depth
        dropped_scale += n_scale

    if dropped_depth:
        logger.warning(f"Dropped {dropped_depth} observations with non-positive depth")
    if dropped_scale:
        logger.info(f"Dropped {dropped_scale} observations with scale outside {tuple(scale_clamp)}")
    result = SamplingResult(pairs=PairList(all_pairs).sorted(), match_sets=match_sets,
                            kept_observations=kept, dropped_depth=dropped_depth,
                            dropped_scale=dropped_scale)
    logger.info(f"Sampled {len(result.pairs)} pairs from {len(track_ids)} tracks")
    return result
