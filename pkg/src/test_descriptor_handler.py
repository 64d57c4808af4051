import numpy as np
import pytest

from descriptor_handler import (
    DESCRIPTOR_HEADER,
    DescriptorHandler,
    decode_descriptors,
    decode_masks,
    encode_descriptors,
    encode_masks,
)
from errors import AlignmentError, DatasetFormatError, InputNotFoundError
from mining import ValidityMask


def test_descriptor_file_layout():
    descriptors = np.arange(12, dtype=np.float64).reshape(3, 4) / 10
    blob = encode_descriptors(descriptors)
    assert blob[:4] == b"PSDE"
    assert DESCRIPTOR_HEADER.unpack_from(blob)[1:] == (3, 4)
    assert len(blob) == DESCRIPTOR_HEADER.size + 3 * 4 * 4
    np.testing.assert_allclose(decode_descriptors(blob), descriptors, rtol=1e-6)


@pytest.mark.parametrize("mutate", [
    lambda b: b"PSDX" + b[4:],
    lambda b: b[:-2],
    lambda b: b[:6],
])
def test_corrupt_descriptor_file(mutate):
    blob = encode_descriptors(np.ones((2, 8)))
    with pytest.raises(DatasetFormatError):
        decode_descriptors(mutate(blob))


def test_handler_checks_alignment(tmp_path):
    handler = DescriptorHandler()
    path = handler.write(tmp_path / "d.psde", np.ones((5, 8)))
    assert handler.read(path, expected_rows=5).shape == (5, 8)
    with pytest.raises(AlignmentError):
        handler.read(path, expected_rows=6)
    with pytest.raises(InputNotFoundError):
        handler.read(tmp_path / "missing.psde")


@pytest.mark.parametrize("m", [0, 1, 7, 8, 13])
def test_mask_file(tmp_path, m):
    rng = np.random.default_rng(m)
    off_diagonal = ~np.eye(m, dtype=bool)
    masks = ValidityMask((rng.random((m, m)) < 0.3) & off_diagonal, (rng.random((m, m)) < 0.7) & off_diagonal)
    handler = DescriptorHandler()
    path = handler.write_masks(tmp_path / "masks.bin", masks)
    assert path.stat().st_size == 8 + 2 * m * ((m + 7) // 8)
    decoded = handler.read_masks(path)
    np.testing.assert_array_equal(decoded.anchor_vs_positive, masks.anchor_vs_positive)
    np.testing.assert_array_equal(decoded.positive_vs_anchor, masks.positive_vs_anchor)


def test_truncated_mask_file():
    blob = encode_masks(ValidityMask.full(9))
    with pytest.raises(DatasetFormatError):
        decode_masks(blob[:-1])
    with pytest.raises(DatasetFormatError):
        decode_masks(blob[:3])
