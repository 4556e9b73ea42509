import gzip

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qnnlab.dataset import (
    amplitudes_to_image,
    encode_amplitudes,
    filter_split,
    load_encoded,
    load_mnist,
    max_pool_2x2,
    parse_idx,
)
from qnnlab.errors import ConsistencyError, DomainError, EncodingError, ParseError, ShapeError
from qnnlab.mottonen import compute_angle_tree


def idx_bytes(images: np.ndarray, labels: np.ndarray) -> tuple[bytes, bytes]:
    n, r, c = images.shape
    img = (0x803).to_bytes(4, "big") + b"".join(v.to_bytes(4, "big") for v in (n, r, c))
    lab = (0x801).to_bytes(4, "big") + len(labels).to_bytes(4, "big")
    return img + images.astype(np.uint8).tobytes(), lab + labels.astype(np.uint8).tobytes()


def block_max_oracle(img):
    out = np.zeros((14, 14))
    for r in range(14):
        for c in range(14):
            out[r, c] = max(img[2 * r, 2 * c], img[2 * r, 2 * c + 1], img[2 * r + 1, 2 * c], img[2 * r + 1, 2 * c + 1])
    return out


def test_parse_synthetic_idx(rng):
    imgs = rng.integers(0, 256, size=(3, 28, 28))
    img_b, lab_b = idx_bytes(imgs, np.array([4, 0, 9]))
    pixels, labels = parse_idx(img_b, lab_b)
    assert pixels.shape == (3, 28, 28)
    assert np.allclose(pixels, imgs / 255.0)
    assert list(labels) == [4, 0, 9]


def test_parse_errors(rng):
    imgs = rng.integers(0, 256, size=(2, 28, 28))
    img_b, lab_b = idx_bytes(imgs, np.array([1, 2]))
    with pytest.raises(ParseError, match="magic"):
        parse_idx(b"\x00\x00\x08\x04" + img_b[4:], lab_b)
    with pytest.raises(ParseError, match="truncated"):
        parse_idx(img_b[:-10], lab_b)
    with pytest.raises(ConsistencyError):
        parse_idx(img_b, idx_bytes(imgs[:1], np.array([1]))[1])
    with pytest.raises(ParseError):
        parse_idx(b"\x00\x00", lab_b)


def test_gzip_files_are_read(tmp_path, rng):
    imgs = rng.integers(0, 256, size=(2, 28, 28))
    img_b, lab_b = idx_bytes(imgs, np.array([3, 1]))
    (tmp_path / "t10k-images-idx3-ubyte.gz").write_bytes(gzip.compress(img_b))
    (tmp_path / "t10k-labels-idx1-ubyte").write_bytes(lab_b)
    pixels, labels = load_mnist(tmp_path, "test")
    assert pixels.shape == (2, 28, 28) and list(labels) == [3, 1]


def test_missing_files_raise(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_mnist(tmp_path, "train")


def test_max_pool_examples(rng):
    assert np.allclose(max_pool_2x2(np.full((28, 28), 0.3)), 0.3)
    img = np.zeros((28, 28))
    img[:2, :2] = [[1, 2], [3, 4]]
    assert max_pool_2x2(img)[0, 0] == 4
    rnd = rng.random((28, 28))
    assert np.array_equal(max_pool_2x2(rnd), block_max_oracle(rnd))
    with pytest.raises(ShapeError):
        max_pool_2x2(np.zeros((27, 28)))


def test_encode_examples(rng):
    one_hot = np.zeros((14, 14))
    one_hot[3, 5] = 0.7
    assert np.allclose(encode_amplitudes(one_hot), np.eye(256)[3 * 14 + 5])
    uniform = encode_amplitudes(np.ones((14, 14)))
    assert np.allclose(uniform[:196], 1 / 14) and np.all(uniform[196:] == 0)
    rnd = encode_amplitudes(rng.random((14, 14)))
    assert np.linalg.norm(rnd) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(EncodingError):
        encode_amplitudes(np.zeros((14, 14)))


def test_filter_split_examples():
    imgs = np.arange(5)[:, None, None] * np.ones((5, 28, 28))
    labels = np.array([0, 5, 1, 3, 9])
    _, kept = filter_split(imgs, labels, "0-1")
    assert list(kept) == [0, 1]
    _, kept = filter_split(imgs, labels, "0-3")
    assert list(kept) == [0, 1, 3]
    _, kept = filter_split(imgs, labels, "0-9")
    assert list(kept) == list(labels)
    empty_imgs, empty = filter_split(np.zeros((0, 28, 28)), np.zeros(0, dtype=int), "0-1")
    assert empty.size == 0 and empty_imgs.shape[0] == 0
    with pytest.raises(DomainError):
        filter_split(imgs, labels, "0-5")


def test_image_roundtrip():
    probs = np.zeros(256)
    probs[14 * 2 + 7] = 1.0
    img = amplitudes_to_image(probs)
    assert img.shape == (14, 14) and img[2, 7] == 1.0


@settings(max_examples=40, deadline=None)
@given(img=arrays(np.float64, (28, 28), elements=st.floats(0, 1)))
def test_encoding_invariants(img):
    if max_pool_2x2(img).max() == 0:
        img[0, 0] = 0.5
    amps = encode_amplitudes(max_pool_2x2(img))
    assert np.all(amps >= 0) and np.all(amps[196:] == 0)
    assert np.linalg.norm(amps) == pytest.approx(1.0, abs=1e-9)


def test_official_test_set_facts(mnist_dir):
    pixels, labels = load_mnist(mnist_dir, "test")
    assert pixels.shape == (10000, 28, 28)
    assert labels[0] == 7
    assert pixels.min() == 0.0 and pixels.max() == 1.0
    _, kept = filter_split(pixels, labels, "0-1")
    assert kept.size == int(np.sum(labels <= 1)) == 2115


def test_real_samples_satisfy_prep_preconditions(mnist_dir):
    data = load_encoded(mnist_dir, "train", "0-9", limit=1000)
    assert data.amplitudes.shape == (1000, 256)
    assert np.all(data.amplitudes[:, 196:] == 0)
    assert np.allclose(np.linalg.norm(data.amplitudes, axis=1), 1.0, atol=1e-9)
    compute_angle_tree(data.amplitudes)


def test_encoding_preserves_order(mnist_dir):
    a = load_encoded(mnist_dir, "test", "0-3", limit=20)
    b = load_encoded(mnist_dir, "test", "0-3", limit=40)
    assert np.array_equal(a.amplitudes, b.amplitudes[:20])
    assert np.array_equal(a.labels, b.labels[:20])
