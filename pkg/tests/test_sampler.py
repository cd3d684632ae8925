import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from scribe_verify.dataset import PreprocessConfig, ScribeCorpus, scan_corpus
from scribe_verify.sampler import (
    BatchLoader,
    PairFileError,
    SamplingError,
    draw_pairs,
    draw_triplets,
    make_test_pairs,
    read_pairs,
    sample_pair_batch,
    sample_triplet_batch,
    stream,
)


def fake_corpus(sizes, root="/virtual"):
    from pathlib import Path

    root = Path(root)
    return ScribeCorpus(root, [(f"s{c}", [root / f"s{c}" / f"{i}.png" for i in range(n)]) for c, n in enumerate(sizes)])


def disk_corpus(tmp_path, sizes, split="train"):
    r = np.random.default_rng(0)
    for c, n in enumerate(sizes):
        d = tmp_path / f"s{c}"
        d.mkdir(parents=True)
        for i in range(n):
            Image.fromarray(r.integers(0, 256, (12, 12, 3), dtype=np.uint8)).save(d / f"{i:02d}.png")
    return scan_corpus(tmp_path, split)


def test_pair_batch_is_balanced():
    draws = draw_pairs(fake_corpus([5, 3, 7]), 32, np.random.default_rng(0))
    assert sum(d.y for d in draws) == 16 and len(draws) == 32


def test_label_histogram_exact_over_many_batches():
    corpus, r = fake_corpus([4, 9, 2, 6]), np.random.default_rng(1)
    labels = [d.y for _ in range(1000) for d in draw_pairs(corpus, 32, r)]
    assert np.mean(labels) == 0.5


def test_pair_errors():
    with pytest.raises(SamplingError):
        draw_pairs(fake_corpus([10]), 4, np.random.default_rng(0))
    with pytest.raises(SamplingError):
        draw_pairs(fake_corpus([3, 3]), 5, np.random.default_rng(0))
    with pytest.raises(SamplingError):
        draw_pairs(fake_corpus([1, 1]), 4, np.random.default_rng(0))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 6), min_size=2, max_size=6), st.integers(0, 2**32 - 1), st.sampled_from(["uniform", "proportional"]))
def test_pair_invariants(sizes, seed, mode):
    if max(sizes) < 2:
        sizes[0] = 2
    for d in draw_pairs(fake_corpus(sizes), 8, np.random.default_rng(seed), mode):
        assert 0 <= d.i1 < sizes[d.c1] and 0 <= d.i2 < sizes[d.c2]
        if d.y == 1:
            assert d.c1 == d.c2 and d.i1 != d.i2
        else:
            assert d.c1 != d.c2


def test_triplets_exhaustive_on_tiny_corpus():
    valid = {(ca, ia, ip, 1 - ca, i_n) for ca in (0, 1) for ia in (0, 1) for ip in (0, 1) if ip != ia for i_n in (0, 1)}
    draws = draw_triplets(fake_corpus([2, 2]), 500, np.random.default_rng(3))
    seen = {(d.ca, d.ia, d.ip, d.cn, d.i_n) for d in draws}
    assert seen <= valid
    assert seen == valid  # 500 draws hit all 8 combinations


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(1, 5), min_size=2, max_size=5), st.integers(0, 2**32 - 1))
def test_triplet_invariants(sizes, seed):
    if max(sizes) < 2:
        sizes[-1] = 2
    for d in draw_triplets(fake_corpus(sizes), 16, np.random.default_rng(seed)):
        assert sizes[d.ca] >= 2 and d.ia != d.ip and d.cn != d.ca


def test_triplet_positive_never_equals_anchor_over_many_samples():
    draws = draw_triplets(fake_corpus([3, 1, 4, 2]), 10_000, np.random.default_rng(9))
    assert all(d.ia != d.ip for d in draws)


def test_same_seed_same_sequences():
    c = fake_corpus([3, 4, 5])
    assert draw_triplets(c, 50, np.random.default_rng(4)) == draw_triplets(c, 50, np.random.default_rng(4))
    assert draw_pairs(c, 50, np.random.default_rng(4)) == draw_pairs(c, 50, np.random.default_rng(4))


def test_loaded_batches_and_parallel_equivalence(tmp_path):
    corpus = disk_corpus(tmp_path, [4, 3, 5])
    cfg = PreprocessConfig(target_size=(8, 8), augment=True)
    serial = sample_pair_batch(corpus, 6, np.random.default_rng(0), cfg)
    with BatchLoader(corpus, cfg, workers=3) as loader:
        parallel = sample_pair_batch(corpus, 6, np.random.default_rng(0), loader=loader)
    for a, b in zip(serial, parallel):
        assert a.y == b.y and a.x1.tobytes() == b.x1.tobytes() and a.x2.tobytes() == b.x2.tobytes()
    trip = sample_triplet_batch(corpus, 4, np.random.default_rng(0), cfg)
    assert len(trip) == 4 and trip[0].x_a.shape == (3, 8, 8)


def test_streams_are_independent():
    a = stream(42, 2).random(5)
    b = stream(42, 4).random(5)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a, stream(42, 2).random(5))


def test_make_test_pairs_balanced_unique_and_reproducible(tmp_path):
    corpus = disk_corpus(tmp_path, [30, 25, 40, 20], split="test")
    pairs = make_test_pairs(corpus, 400, seed=42)
    assert pairs.n_pos == 200 and pairs.n_neg == 200
    assert all(p1 != p2 for p1, p2, _ in pairs.rows)
    keys = {frozenset(r[:2]) for r in pairs.rows}
    assert len(keys) == 400
    assert all(not p.startswith("/") for r in pairs.rows for p in r[:2])
    assert make_test_pairs(corpus, 400, seed=42).to_csv() == pairs.to_csv()
    assert make_test_pairs(corpus, 400, seed=43).to_csv() != pairs.to_csv()
    out = tmp_path / "pairs.csv"
    pairs.write(out)
    assert read_pairs(out) == pairs
    assert b"\r\n" not in out.read_bytes()


def test_make_test_pairs_exhaustive_regime():
    # 2 classes x 3 images: 6 positive and 9 negative pairs exist
    pairs = make_test_pairs(fake_corpus([3, 3]), 12, seed=1)
    assert pairs.n_pos == 6 and len({frozenset(r[:2]) for r in pairs.rows}) == 12
    with pytest.raises(SamplingError):
        make_test_pairs(fake_corpus([3, 3]), 14, seed=1)
    with pytest.raises(SamplingError):
        make_test_pairs(fake_corpus([3, 3]), 7, seed=1)


@pytest.mark.parametrize(
    "text,line",
    [
        ("a,b,c\nx,y,1\n", 1),
        ("path1,path2,label\nx,y,1\nx,y\n", 3),
        ("path1,path2,label\nx,y,2\n", 2),
    ],
)
def test_malformed_pair_files(tmp_path, text, line):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(PairFileError) as info:
        read_pairs(p)
    assert info.value.line == line
    assert f"line {line}" in str(info.value)
