import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from paragan.dataset import (BACKGROUND, DOMAINS, SPLITS, AugmentParams, DatasetError, ShapeSpec,
                             apply_augment, batch_iterator, conventional_augment,
                             draw_augment_params, epoch_rng, from_uint8, generate_shapes_dataset,
                             load_manifest, load_split, pair_indices, render_shape, to_uint8)


def _tree_bytes(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*.png"))}


def test_generate_layout_and_determinism(tmp_path):
    spec = ShapeSpec(image_size=32, n_per_domain_per_split=4, seed=7)
    man = generate_shapes_dataset(spec, tmp_path / "a")
    generate_shapes_dataset(spec, tmp_path / "b")
    for split in SPLITS:
        for dom in DOMAINS:
            assert len(list((tmp_path / "a" / split / dom).glob("*.png"))) == 4
    assert _tree_bytes(tmp_path / "a") == _tree_bytes(tmp_path / "b")
    assert man["seed"] == 7 and len(man["files"]) == 24
    assert load_manifest(tmp_path / "a") == man


def test_zero_counts_rejected(tmp_path):
    with pytest.raises(DatasetError, match="zero counts"):
        generate_shapes_dataset(ShapeSpec(n_per_domain_per_split=0), tmp_path)
    with pytest.raises(DatasetError, match="zero counts"):
        generate_shapes_dataset(ShapeSpec(split_counts={"val": 0}), tmp_path)


def test_hole_area_matches_severity(tmp_path):
    man = generate_shapes_dataset(ShapeSpec(image_size=64, n_per_domain_per_split=5, seed=3,
                                            severity_range=(0.5, 0.5), noise_sigma=0.0), tmp_path)
    dark = np.uint8(round((BACKGROUND + 1) * 127.5))
    for rec in man["files"]:
        if rec["domain"] != "Y":
            continue
        pix = np.asarray(Image.open(tmp_path / rec["path"]))
        cy, cx = rec["center"]
        r = rec["radius"]
        # brute force: dark pixels whose centre lies inside the outer disc
        count = 0
        for i in range(pix.shape[0]):
            for j in range(pix.shape[1]):
                if math.hypot(i + 0.5 - cy, j + 0.5 - cx) < r and pix[i, j] == dark:
                    count += 1
        expected = math.pi * (0.5 * r) ** 2
        assert abs(count - expected) <= 0.1 * expected


def test_splits_disjoint(tmp_path):
    man = generate_shapes_dataset(ShapeSpec(image_size=32, n_per_domain_per_split=20, seed=5), tmp_path)
    by_split = {s: {f["sha256"] for f in man["files"] if f["split"] == s} for s in SPLITS}
    assert not (by_split["train"] & by_split["val"])
    assert not (by_split["train"] & by_split["test"])
    assert not (by_split["val"] & by_split["test"])
    for f in man["files"][:5]:
        assert hashlib.sha256((tmp_path / f["path"]).read_bytes()).hexdigest() == f["sha256"]


def test_roundtrip_within_quantization(tmp_path, rng):
    img = np.clip(rng.normal(0, 0.5, (32, 32)), -1, 1)
    Image.fromarray(to_uint8(img)).save(tmp_path / "a.png")
    back = from_uint8(np.asarray(Image.open(tmp_path / "a.png")))
    assert np.abs(back - img).max() <= 1 / 255 + 1e-7


def _write(path, value, size=16, mode="L"):
    path.parent.mkdir(parents=True, exist_ok=True)
    shape = (size, size) if mode == "L" else (size, size, 3)
    Image.fromarray(np.full(shape, value, np.uint8)).save(path)


def test_load_split_counts_order_and_normalization(tmp_path):
    for i in range(3):
        _write(tmp_path / "train" / "X" / f"x{2 - i}.png", 255)
    for i in range(5):
        _write(tmp_path / "train" / "Y" / f"y{i}.png", [0, 128, 255, 0, 0][i])
    samples = load_split(tmp_path, "train")
    assert len(samples) == 8
    assert sum(s.label == -1 for s in samples) == 3
    assert [s.name for s in samples[:3]] == ["train/X/x0.png", "train/X/x1.png", "train/X/x2.png"]
    assert samples[0].image.shape == (16, 16, 1)
    assert samples[0].image.max() == 1.0
    assert samples[3].image.min() == -1.0
    assert samples[4].image[0, 0, 0] == pytest.approx(128 / 127.5 - 1, abs=1e-6)
    assert samples[4].image[0, 0, 0] == pytest.approx(0.00392, abs=1e-5)


def test_load_split_rgb(tmp_path):
    _write(tmp_path / "val" / "X" / "a.png", 10, mode="RGB")
    _write(tmp_path / "val" / "Y" / "b.png", 10, mode="RGB")
    assert load_split(tmp_path, "val")[0].image.shape == (16, 16, 3)


def test_load_split_errors(tmp_path):
    with pytest.raises(DatasetError, match="missing directory"):
        load_split(tmp_path, "train")
    _write(tmp_path / "train" / "X" / "a.png", 0)
    with pytest.raises(DatasetError, match="empty domain folder"):
        load_split(tmp_path, "train")
    (tmp_path / "train" / "Y").mkdir()
    with pytest.raises(DatasetError, match="empty domain folder"):
        load_split(tmp_path, "train")
    (tmp_path / "train" / "Y" / "bad.png").write_bytes(b"not an image")
    with pytest.raises(DatasetError, match="bad.png"):
        load_split(tmp_path, "train")


def _samples(n_x, n_y, size=16):
    from paragan.dataset import DomainSample
    return ([DomainSample(np.full((size, size, 1), i, np.float32), "X", f"x{i}") for i in range(n_x)]
            + [DomainSample(np.full((size, size, 1), 100 + i, np.float32), "Y", f"y{i}") for i in range(n_y)])


def test_paired_epoch_covers_majority_once():
    pairs = list(batch_iterator(_samples(10, 10), 1, seed=3))
    assert len(pairs) == 10
    xs = sorted(int(bx[0, 0, 0, 0]) for bx, _ in pairs)
    ys = sorted(int(by[0, 0, 0, 0]) - 100 for _, by in pairs)
    assert xs == list(range(10)) and ys == list(range(10))


def test_pairing_deterministic():
    a = [(bx.copy(), by.copy()) for bx, by in batch_iterator(_samples(4, 9), 2, seed=8, epochs=3)]
    b = list(batch_iterator(_samples(4, 9), 2, seed=8, epochs=3))
    assert all(np.array_equal(p[0], q[0]) and np.array_equal(p[1], q[1]) for p, q in zip(a, b))


def _reference_pairing(n_x, n_y, seed, epoch):
    # independent re-statement of the documented pairing rule
    rng = np.random.default_rng([seed, epoch])
    big, small = max(n_x, n_y), min(n_x, n_y)
    major = list(rng.permutation(big))
    minor = []
    while len(minor) < big:
        minor.extend(rng.permutation(small))
    minor = minor[:big]
    return (major, minor) if n_x >= n_y else (minor, major)


def test_minority_resampled_at_least_twice():
    ix, iy = _reference_pairing(3, 7, seed=21, epoch=0)
    got = pair_indices(3, 7, 1, epoch_rng(21, 0))
    assert [int(b[0][0]) for b in got] == [int(i) for i in ix]
    assert [int(b[1][0]) for b in got] == [int(i) for i in iy]
    assert len(got) == 7
    counts = np.bincount([int(b[0][0]) for b in got], minlength=3)
    assert counts.min() >= 2
    assert sorted(int(b[1][0]) for b in got) == list(range(7))


@settings(max_examples=40, deadline=None)
@given(n_x=st.integers(1, 12), n_y=st.integers(1, 12), bs=st.integers(1, 5), seed=st.integers(0, 10**6))
def test_pairing_coverage_property(n_x, n_y, bs, seed):
    batches = pair_indices(n_x, n_y, bs, epoch_rng(seed, 0))
    ix = np.concatenate([b[0] for b in batches])
    iy = np.concatenate([b[1] for b in batches])
    major = ix if n_x >= n_y else iy
    minor = iy if n_x >= n_y else ix
    assert sorted(major) == list(range(max(n_x, n_y)))
    counts = np.bincount(minor, minlength=min(n_x, n_y))
    assert counts.min() >= max(n_x, n_y) // min(n_x, n_y)


def test_iterator_errors():
    with pytest.raises(DatasetError, match="empty"):
        list(batch_iterator([], 1, 0))
    with pytest.raises(DatasetError):
        list(batch_iterator(_samples(3, 0), 1, 0))


def test_unpaired_iterator_visits_everything():
    seen = []
    for bx, by in batch_iterator(_samples(5, 4), 3, seed=0, paired=False):
        seen += [int(v) for v in bx[:, 0, 0, 0]] + [int(v) for v in by[:, 0, 0, 0]]
    assert sorted(seen) == [0, 1, 2, 3, 4, 100, 101, 102, 103]


def test_augment_identity_when_off(rng):
    img = rng.uniform(-1, 1, (32, 32, 1)).astype(np.float32)
    out = conventional_augment(img, rng, hflip=False, vflip=False, crop_pad=0)
    assert np.array_equal(out, img)


def test_hflip_involution(rng):
    img = rng.uniform(-1, 1, (16, 20, 1))
    p = AugmentParams(hflip=True, vflip=False, shift=(0, 0), pad=0)
    assert np.array_equal(apply_augment(apply_augment(img, p), p), img)
    assert np.array_equal(apply_augment(img, p), img[:, ::-1])


def _reflect(k, n):
    if k < 0:
        return -k
    if k >= n:
        return 2 * (n - 1) - k
    return k


def test_crop_pad_matches_index_oracle(rng):
    img = rng.uniform(-1, 1, (64, 64, 1))
    for _ in range(5):
        p = draw_augment_params(rng, hflip=False, vflip=False, crop_pad=4)
        out = apply_augment(img, p)
        assert out.shape == (64, 64, 1)
        for i in range(64):
            for j in range(64):
                src = img[_reflect(i + p.shift[0] - 4, 64), _reflect(j + p.shift[1] - 4, 64)]
                assert out[i, j, 0] == src[0]
    corner = apply_augment(img, AugmentParams(False, False, (0, 0), 4))
    assert corner[0, 0, 0] == img[4, 4, 0]


def test_crop_pad_precondition(rng):
    with pytest.raises(DatasetError):
        conventional_augment(np.zeros((16, 16, 1)), rng, crop_pad=8)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), pad=st.integers(0, 7))
def test_augment_range_and_shape(seed, pad):
    r = np.random.default_rng(seed)
    img = r.uniform(-1, 1, (16, 16, 3)).astype(np.float32)
    out = conventional_augment(img, r, crop_pad=pad)
    assert out.shape == img.shape
    assert out.min() >= -1 and out.max() <= 1


def test_render_shape_hole_is_background():
    img = render_shape(32, (16, 16), 10, 0.5)
    assert img[16, 16] == BACKGROUND and img[16, 24] > 0
