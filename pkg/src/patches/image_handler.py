from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List
import logging
import os

import cv2
import numpy as np

from errors import ContractViolationError, DatasetFormatError, InputNotFoundError

SUPPORTED_SUFFIXES = {".pgm", ".ppm", ".pnm"}


@dataclass(frozen=True, eq=False)
class RawImage:
    width: int
    height: int
    channels: int
    # row-major H x W x C, uint8, RGB order for 3 channels
    data: np.ndarray

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ContractViolationError(f"Images must have 1 or 3 channels, got {self.channels}")
        if self.data.size != self.width * self.height * self.channels:
            raise ContractViolationError(
                f"Image data has {self.data.size} samples, expected "
                f"{self.width} x {self.height} x {self.channels}")
        object.__setattr__(self, "data", self.data.reshape(self.height, self.width, self.channels))

    @classmethod
    def from_array(cls, array: np.ndarray) -> "RawImage":
        array = np.ascontiguousarray(array, dtype=np.uint8)
        channels = 1 if array.ndim == 2 else array.shape[2]
        return cls(width=array.shape[1], height=array.shape[0], channels=channels, data=array)

    def as_rgb(self) -> np.ndarray:
        if self.channels == 3:
            return self.data
        return np.repeat(self.data, 3, axis=2)


class ImageHandler:
    """Reads and writes binary PGM (P5) / PPM (P6) images under one directory."""

    def __init__(self, images_dir=None):
        self.images_dir = Path(images_dir or os.getenv('PSFORGE_IMAGES_DIR', '.'))
        self.logger = logging.getLogger(__name__)

    def path_for(self, name: str) -> Path:
        return self.images_dir / name

    def missing(self, names: Iterable[str]) -> List[str]:
        return [name for name in names if not self.path_for(name).is_file()]

    def load(self, name: str) -> RawImage:
        path = self.path_for(name)
        if not path.is_file():
            self.logger.error(f"Image referenced by the model is missing: {path}")
            raise InputNotFoundError(f"Missing image file: {path}")
        if path.suffix.lower() not in SUPPORTED_SUFFIXES:
            raise DatasetFormatError(f"Unsupported image format {path.suffix} ({path}); convert to PGM/PPM")
        data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
        if data is None or data.dtype != np.uint8:
            raise DatasetFormatError(f"Could not decode 8-bit image {path}")
        if data.ndim == 3:
            data = cv2.cvtColor(data, cv2.COLOR_BGR2RGB)
        self.logger.debug(f"Loaded image {path} with shape {data.shape}")
        return RawImage.from_array(data)

    def save(self, name: str, image: RawImage) -> Path:
        path = self.path_for(name)
        path.parent.mkdir(parents=True, exist_ok=True)
        data = image.data
        if image.channels == 3:
            data = cv2.cvtColor(data, cv2.COLOR_RGB2BGR)
        else:
            data = data[:, :, 0]
        if not cv2.imwrite(str(path), data):
            raise DatasetFormatError(f"Could not write image {path}")
        return path
