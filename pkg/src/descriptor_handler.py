"""
Descriptor and validity-mask files.

Descriptor file (little-endian): magic "PSDE", count u64, dim u32, then
count x dim f32 values; row order matches the patch (or keypoint) file.
Mask file: m u64, then m packed bit rows of anchor_vs_positive followed by
m packed bit rows of positive_vs_anchor.
"""
from pathlib import Path
import logging
import struct

import numpy as np

from errors import AlignmentError, DatasetFormatError, InputNotFoundError
from mining import ValidityMask

DESCRIPTOR_MAGIC = b"PSDE"
DESCRIPTOR_HEADER = struct.Struct("<4sQI")
MASK_HEADER = struct.Struct("<Q")


def encode_descriptors(descriptors: np.ndarray) -> bytes:
    descriptors = np.ascontiguousarray(np.atleast_2d(descriptors), dtype="<f4")
    count, dim = descriptors.shape
    return DESCRIPTOR_HEADER.pack(DESCRIPTOR_MAGIC, count, dim) + descriptors.tobytes()


def decode_descriptors(blob: bytes, source: str = "descriptor file") -> np.ndarray:
    if len(blob) < DESCRIPTOR_HEADER.size:
        raise DatasetFormatError(f"{source}: truncated header")
    magic, count, dim = DESCRIPTOR_HEADER.unpack_from(blob)
    if magic != DESCRIPTOR_MAGIC:
        raise DatasetFormatError(f"{source}: bad magic {magic!r}")
    body = blob[DESCRIPTOR_HEADER.size:]
    if len(body) != count * dim * 4:
        raise DatasetFormatError(f"{source}: expected {count} x {dim} f32 values, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(count, dim).astype(np.float64)


def encode_masks(masks: ValidityMask) -> bytes:
    m = masks.anchor_vs_positive.shape[0]
    return (MASK_HEADER.pack(m)
            + np.packbits(masks.anchor_vs_positive, axis=1).tobytes()
            + np.packbits(masks.positive_vs_anchor, axis=1).tobytes())


def decode_masks(blob: bytes, source: str = "mask file") -> ValidityMask:
    if len(blob) < MASK_HEADER.size:
        raise DatasetFormatError(f"{source}: truncated header")
    (m,) = MASK_HEADER.unpack_from(blob)
    row_bytes = (m + 7) // 8
    body = np.frombuffer(blob[MASK_HEADER.size:], dtype=np.uint8)
    if body.size != 2 * m * row_bytes:
        raise DatasetFormatError(f"{source}: expected {2 * m * row_bytes} mask bytes, got {body.size}")
    rows = body.reshape(2 * m, row_bytes) if m else body.reshape(0, 0)
    unpacked = np.unpackbits(rows, axis=1, count=m).astype(bool) if m else np.zeros((0, 0), dtype=bool)
    return ValidityMask(unpacked[:m], unpacked[m:])


class DescriptorHandler:
    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def read(self, path, expected_rows: int = None) -> np.ndarray:
        """Read a descriptor file, optionally checking it is aligned with expected_rows"""
        path = Path(path)
        if not path.is_file():
            self.logger.error(f"Descriptor file missing: {path}")
            raise InputNotFoundError(f"Missing descriptor file: {path}")
        descriptors = decode_descriptors(path.read_bytes(), str(path))
        if expected_rows is not None and len(descriptors) != expected_rows:
            self.logger.error(f"{path} has {len(descriptors)} rows, expected {expected_rows}")
            raise AlignmentError(
                f"{path}: {len(descriptors)} descriptor rows do not match {expected_rows} patches/keypoints")
        self.logger.info(f"Read {descriptors.shape[0]} descriptors of dimension {descriptors.shape[1]} from {path}")
        return descriptors

    def write(self, path, descriptors: np.ndarray) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_descriptors(descriptors))
        self.logger.info(f"Wrote {len(descriptors)} descriptors to {path}")
        return path

    def write_masks(self, path, masks: ValidityMask) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_masks(masks))
        self.logger.info(f"Wrote validity masks for m={masks.anchor_vs_positive.shape[0]} to {path}")
        return path

    def read_masks(self, path) -> ValidityMask:
        path = Path(path)
        if not path.is_file():
            raise InputNotFoundError(f"Missing mask file: {path}")
        return decode_masks(path.read_bytes(), str(path))
