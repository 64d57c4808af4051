"""
Dataset files: the binary patch file, the pair list, the manifest and the
supplementary camera export.

Patch file layout (little-endian): magic "PSDS", version u16, record count u64,
then fixed-size records of track_id u64, image_id u32, center_xy 2 x f32,
scale f32, rotation f32, crop_side f32 and 48 x 48 x 3 u8 pixels.
"""
from pathlib import Path
from typing import Dict, Iterable
import json
import logging
import os
import struct

import numpy as np
import pandas as pd

from errors import DatasetFormatError, InputNotFoundError
from patches.patch_extractor import PATCH_SIZE, PatchRecord
from sampler import PAIR_COLUMNS, PairList
from scene.model import SceneModel

PATCH_MAGIC = b"PSDS"
PATCH_VERSION = 1
PATCH_HEADER = struct.Struct("<4sHQ")
PATCH_RECORD = np.dtype([
    ("track_id", "<u8"),
    ("image_id", "<u4"),
    ("center_xy", "<f4", (2,)),
    ("scale", "<f4"),
    ("rotation", "<f4"),
    ("crop_side", "<f4"),
    ("pixels", "u1", (PATCH_SIZE, PATCH_SIZE, 3)),
])

PATCHES_FILE = "patches.psds"
PAIRS_FILE = "pairs.tsv"
MANIFEST_FILE = "manifest.json"
CAMERAS_FILE = "cameras.json"
GRAY_FILE = "patches_gray.npy"


class PatchStore:
    """Read-only view over patch records, addressable by row or by (track_id, image_id)."""

    def __init__(self, records: np.ndarray):
        self.records = records
        self._rows = {(int(t), int(i)): row
                      for row, (t, i) in enumerate(zip(records["track_id"], records["image_id"]))}

    @classmethod
    def from_patches(cls, patches: Iterable[PatchRecord]) -> "PatchStore":
        patches = list(patches)
        records = np.zeros(len(patches), dtype=PATCH_RECORD)
        for row, patch in enumerate(patches):
            records[row] = (patch.track_id, patch.image_id, patch.center_xy, patch.scale,
                            patch.rotation_rad, patch.crop_side_px, patch.pixels)
        return cls(records)

    def __len__(self):
        return len(self.records)

    def row_for(self, track_id: int, image_id: int) -> int:
        return self._rows[(track_id, image_id)]

    def has(self, track_id: int, image_id: int) -> bool:
        return (track_id, image_id) in self._rows

    def record(self, row: int) -> PatchRecord:
        r = self.records[row]
        return PatchRecord(
            pixels=np.array(r["pixels"]),
            image_id=int(r["image_id"]),
            track_id=int(r["track_id"]),
            center_xy=(float(r["center_xy"][0]), float(r["center_xy"][1])),
            scale=float(r["scale"]),
            rotation_rad=float(r["rotation"]),
            crop_side_px=float(r["crop_side"]),
        )

    def crop_side(self, row: int) -> float:
        return float(self.records["crop_side"][row])

    @property
    def track_ids(self) -> np.ndarray:
        return np.unique(self.records["track_id"])


def encode_patches(store: PatchStore) -> bytes:
    return PATCH_HEADER.pack(PATCH_MAGIC, PATCH_VERSION, len(store)) + store.records.tobytes()


def decode_patches(blob: bytes, source: str = "patch file") -> PatchStore:
    if len(blob) < PATCH_HEADER.size:
        raise DatasetFormatError(f"{source}: truncated header")
    magic, version, count = PATCH_HEADER.unpack_from(blob)
    if magic != PATCH_MAGIC:
        raise DatasetFormatError(f"{source}: bad magic {magic!r}")
    if version != PATCH_VERSION:
        raise DatasetFormatError(f"{source}: unsupported version {version}")
    body = blob[PATCH_HEADER.size:]
    if len(body) != count * PATCH_RECORD.itemsize:
        raise DatasetFormatError(
            f"{source}: expected {count} records ({count * PATCH_RECORD.itemsize} bytes), got {len(body)} bytes")
    return PatchStore(np.frombuffer(body, dtype=PATCH_RECORD, count=count).copy())


def scene_cameras_export(scene: SceneModel) -> Dict:
    """Intrinsics and extrinsics of every image."""
    images = []
    for image_id in sorted(scene.views):
        view = scene.views[image_id]
        cam = scene.cameras[view.camera_id]
        images.append({
            "image_id": image_id,
            "name": view.name,
            "camera_id": cam.camera_id,
            "model": cam.model,
            "width": cam.width,
            "height": cam.height,
            "focal_px": [cam.focal_px, cam.fy],
            "principal_point": list(cam.principal_point),
            "orientation": view.orientation.tolist(),
            "center": view.center.tolist(),
            "viewing_direction": view.viewing_direction.tolist(),
        })
    return {"images": images}


class DatasetHandler:
    """Reads and writes the files of one built dataset directory."""

    def __init__(self, dataset_dir=None):
        self.dataset_dir = Path(dataset_dir or os.getenv('PSFORGE_OUT_DIR', 'dataset'))
        self.logger = logging.getLogger(__name__)

    def _path(self, name: str) -> Path:
        return self.dataset_dir / name

    def _require(self, name: str) -> Path:
        path = self._path(name)
        if not path.is_file():
            self.logger.error(f"Dataset file missing: {path}")
            raise InputNotFoundError(f"Missing dataset file: {path}")
        return path

    def write_patches(self, store: PatchStore) -> Path:
        self.dataset_dir.mkdir(parents=True, exist_ok=True)
        path = self._path(PATCHES_FILE)
        path.write_bytes(encode_patches(store))
        self.logger.info(f"Wrote {len(store)} patches to {path}")
        return path

    def read_patches(self) -> PatchStore:
        path = self._require(PATCHES_FILE)
        try:
            store = decode_patches(path.read_bytes(), str(path))
        except DatasetFormatError as e:
            self.logger.error(f"Corrupt patch file: {e}")
            raise
        self.logger.info(f"Read {len(store)} patches from {path}")
        return store

    def write_pairs(self, pairs: PairList) -> Path:
        self.dataset_dir.mkdir(parents=True, exist_ok=True)
        path = self._path(PAIRS_FILE)
        pairs.sorted().to_frame().to_csv(path, sep="\t", index=False, float_format="%.6f", lineterminator="\n")
        self.logger.info(f"Wrote {len(pairs)} pairs to {path}")
        return path

    def read_pairs(self) -> PairList:
        path = self._require(PAIRS_FILE)
        frame = pd.read_csv(path, sep="\t")
        if list(frame.columns) != PAIR_COLUMNS:
            raise DatasetFormatError(f"{path}: expected columns {PAIR_COLUMNS}, got {list(frame.columns)}")
        return PairList.from_frame(frame)

    def write_json(self, name: str, payload: Dict) -> Path:
        self.dataset_dir.mkdir(parents=True, exist_ok=True)
        path = self._path(name)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path

    def write_manifest(self, manifest: Dict) -> Path:
        path = self.write_json(MANIFEST_FILE, manifest)
        self.logger.info(f"Wrote manifest to {path}")
        return path

    def read_manifest(self) -> Dict:
        path = self._require(MANIFEST_FILE)
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DatasetFormatError(f"{path}: invalid JSON: {e}") from e

    def write_cameras(self, scene: SceneModel) -> Path:
        return self.write_json(CAMERAS_FILE, scene_cameras_export(scene))

    def read_viewing_directions(self) -> Dict[int, np.ndarray]:
        """image_id -> viewing direction, from the camera export"""
        path = self._require(CAMERAS_FILE)
        try:
            images = json.loads(path.read_text(encoding="utf-8"))["images"]
        except (json.JSONDecodeError, KeyError) as e:
            raise DatasetFormatError(f"{path}: invalid camera export: {e}") from e
        return {int(image["image_id"]): np.array(image["viewing_direction"], dtype=np.float64) for image in images}

    def write_grayscale(self, crops: np.ndarray) -> Path:
        self.dataset_dir.mkdir(parents=True, exist_ok=True)
        path = self._path(GRAY_FILE)
        np.save(path, crops)
        self.logger.info(f"Wrote {len(crops)} grayscale crops to {path}")
        return path
