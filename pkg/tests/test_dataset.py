import json

import numpy as np
import pytest

from dsta.dataset import (
    BLOB,
    MANIFEST,
    Dataset,
    DatasetFormatError,
    DatasetVersionError,
    read_dataset,
    write_dataset,
)
from dsta.synth import CorruptionConfig, generate_samples


@pytest.fixture(scope="module")
def samples():
    return generate_samples(10, "train", seed=1, T=1, H=32, W=24)


def test_round_trip_bit_exact(tmp_path, samples):
    data = Dataset.from_samples(samples, corruption=CorruptionConfig(), split="train")
    write_dataset(data, tmp_path)
    back = read_dataset(tmp_path)
    assert len(back) == 10
    for name in ("observations", "gt", "visibility", "seeds", "crops"):
        a, b = getattr(data, name), getattr(back, name)
        assert a.dtype == b.dtype and a.tobytes() == b.tobytes(), name
    assert (back.n, back.T, back.H, back.W, back.K) == (15, 1, 32, 24, 5)
    assert back.corruption == CorruptionConfig().to_dict()
    assert back.split == "train"


def test_samples_list_accepted(tmp_path, samples):
    write_dataset(samples, tmp_path)
    back = read_dataset(tmp_path).samples()
    for a, b in zip(samples, back):
        assert a.observations.tobytes() == b.observations.tobytes()
        assert a.seed == b.seed and a.crop == b.crop


def test_truncated_blob_is_a_parse_error(tmp_path, samples):
    write_dataset(Dataset.from_samples(samples), tmp_path)
    blob = (tmp_path / BLOB).read_bytes()
    (tmp_path / BLOB).write_bytes(blob[:-7])
    with pytest.raises(DatasetFormatError, match="byte"):
        read_dataset(tmp_path)


def test_malformed_manifest_reports_offset(tmp_path, samples):
    write_dataset(Dataset.from_samples(samples[:1]), tmp_path)
    (tmp_path / MANIFEST).write_text('{"format_version": 1, "n": ')
    with pytest.raises(DatasetFormatError, match="byte"):
        read_dataset(tmp_path)


def test_version_mismatch(tmp_path, samples):
    write_dataset(Dataset.from_samples(samples[:1]), tmp_path)
    m = json.loads((tmp_path / MANIFEST).read_text())
    m["format_version"] = 99
    (tmp_path / MANIFEST).write_text(json.dumps(m))
    with pytest.raises(DatasetVersionError):
        read_dataset(tmp_path)


def test_empty_dataset(tmp_path):
    data = Dataset.from_samples([], n=15, T=1, H=32, W=24)
    write_dataset(data, tmp_path)
    back = read_dataset(tmp_path)
    assert len(back) == 0 and json.loads((tmp_path / MANIFEST).read_text())["count"] == 0
    assert back.observations.shape == (0, 3, 32, 24)


def test_blob_layout_little_endian(tmp_path, samples):
    data = Dataset.from_samples(samples[:2])
    write_dataset(data, tmp_path)
    raw = (tmp_path / BLOB).read_bytes()
    m = json.loads((tmp_path / MANIFEST).read_text())
    off = m["records"][1]["offset"]
    pix = np.frombuffer(raw, "<f4", 3 * 32 * 24, off)
    np.testing.assert_array_equal(pix.reshape(3, 32, 24), data.observations[1])
    vis = np.frombuffer(raw, np.uint8, 15, off + 3 * 32 * 24 * 4 + 15 * 8)
    np.testing.assert_array_equal(vis, data.visibility[1])
