import numpy as np
import pytest

from diffmark.errors import DataError, ParameterError
from diffmark.imstats import (
    STAT_KINDS,
    ArrayEmbedder,
    compute_statistic,
    diff_report,
    fid,
    inception_score,
    percentage_difference,
)
from diffmark.toydata import make_toy_corpus

from oracles import EXACT_KINDS, ORACLES, hand_corpus_4x4


def test_exactly_ten_kinds():
    assert len(STAT_KINDS) == 10


def test_entropy_of_constant_image_is_zero():
    img = np.full((3, 8, 8), 0.3, dtype=np.float32)
    assert compute_statistic(img, "entropy") == 0.0


def test_glcm_energy_of_constant_image_is_one():
    img = np.full((3, 8, 8), -0.2, dtype=np.float32)
    assert compute_statistic(img, "glcm_energy") == pytest.approx(1.0)
    assert compute_statistic(img, "glcm_contrast") == pytest.approx(0.0)


def test_glcm_contrast_checkerboard_matches_pair_enumeration():
    img = hand_corpus_4x4()[1]  # two-level checkerboard
    got = compute_statistic(img, "glcm_contrast")
    expected = ORACLES["glcm_contrast"](img)
    assert got == pytest.approx(expected, abs=1e-12)
    # every horizontal pair spans the two levels, so contrast = (a - b)^2
    from diffmark.imutils import gray_u8
    q = gray_u8(img)
    a, b = int(q[0, 0]), int(q[0, 1])
    assert got == pytest.approx(float((a - b) ** 2))


@pytest.mark.parametrize("kind", STAT_KINDS)
def test_statistics_match_bruteforce_oracles_4x4(kind):
    for img in hand_corpus_4x4():
        got = compute_statistic(img, kind)
        expected = ORACLES[kind](img)
        if kind in EXACT_KINDS:
            assert got == expected
        else:
            scale = max(abs(expected), 1.0)
            assert abs(got - expected) <= 1e-9 * scale, (kind, got, expected)


@pytest.mark.parametrize("kind", STAT_KINDS)
def test_statistics_match_oracles_on_natural_16x16(kind):
    imgs, _ = make_toy_corpus(3, resolution=16, seed=9)
    for img in imgs:
        got = compute_statistic(img, kind)
        expected = ORACLES[kind](img)
        scale = max(abs(expected), 1.0)
        tol = 0 if kind in EXACT_KINDS else 1e-9 * scale
        assert abs(got - expected) <= tol, (kind, got, expected)


def test_edge_histogram_counts_tiles_on_32x32():
    imgs, _ = make_toy_corpus(2, resolution=32, seed=4)
    for img in imgs:
        assert compute_statistic(img, "edge_histogram") == 4.0
    flat = np.zeros((3, 32, 32), dtype=np.float32)
    assert compute_statistic(flat, "edge_histogram") == 0.0


def test_batch_mean_equals_loop():
    imgs, _ = make_toy_corpus(4, resolution=16, seed=1)
    for kind in ("entropy", "sharpness", "saturation"):
        batch = compute_statistic(imgs, kind)
        loop = np.mean([compute_statistic(imgs[i], kind) for i in range(4)])
        assert batch == pytest.approx(loop)


def test_batch_permutation_invariance():
    imgs, _ = make_toy_corpus(5, resolution=16, seed=2)
    perm = imgs[[3, 0, 4, 1, 2]]
    for kind in STAT_KINDS:
        assert compute_statistic(imgs, kind) == pytest.approx(
            compute_statistic(perm, kind))


def test_statistic_ranges():
    imgs, _ = make_toy_corpus(6, resolution=16, seed=8)
    for img in imgs:
        e = compute_statistic(img, "glcm_energy")
        assert 0.0 < e <= 1.0
        ent = compute_statistic(img, "entropy")
        assert 0.0 <= ent <= 8.0
        assert compute_statistic(img, "saturation") >= 0.0
        for kind in STAT_KINDS:
            assert np.isfinite(compute_statistic(img, kind))


def test_unknown_kind_rejected():
    with pytest.raises(ParameterError):
        compute_statistic(np.zeros((3, 4, 4)), "glcm_mojo")


# --- IS / FID -----------------------------------------------------------------

def test_inception_score_identical_rows_is_one():
    probs = np.tile([0.2, 0.5, 0.3], (7, 1))
    emb = ArrayEmbedder(probabilities=probs)
    assert inception_score(np.zeros((7, 3, 4, 4)), emb) == pytest.approx(1.0, abs=1e-9)


def test_inception_score_two_onehots_is_two():
    probs = np.array([[1.0, 0.0], [0.0, 1.0]])
    emb = ArrayEmbedder(probabilities=probs)
    assert inception_score(np.zeros((2, 3, 4, 4)), emb) == pytest.approx(2.0, rel=1e-6)


def test_inception_score_empty_set_rejected():
    with pytest.raises(DataError):
        inception_score(np.zeros((0, 3, 4, 4)), ArrayEmbedder(probabilities=np.zeros((0, 2))))


def test_fid_identical_sets_is_zero():
    rng = np.random.default_rng(0)
    feats = rng.normal(size=(40, 6))
    emb = ArrayEmbedder(features=feats)
    x = np.zeros((40, 3, 4, 4))
    assert fid(x, x, emb) == pytest.approx(0.0, abs=1e-6)


def test_fid_singletons_is_squared_mean_distance():
    mu_a = np.array([1.0, 2.0, 3.0])
    mu_b = np.array([0.0, 0.0, 1.0])

    class TwoSetEmbedder:
        def __init__(self):
            self.calls = 0

        def features(self, images):
            self.calls += 1
            return (mu_a if self.calls == 1 else mu_b)[None, :]

    d = fid(np.zeros((1, 3, 4, 4)), np.zeros((1, 3, 4, 4)), TwoSetEmbedder())
    assert d == pytest.approx(float(np.sum((mu_a - mu_b) ** 2)), rel=1e-9)


def test_fid_dimension_mismatch_rejected():
    class Mismatch:
        def __init__(self):
            self.calls = 0

        def features(self, images):
            self.calls += 1
            return np.zeros((2, 3)) if self.calls == 1 else np.zeros((2, 5))

    with pytest.raises(DataError):
        fid(np.zeros((2, 3, 4, 4)), np.zeros((2, 3, 4, 4)), Mismatch())


def test_fid_empty_set_rejected():
    with pytest.raises(DataError):
        fid(np.zeros((0, 3, 4, 4)), np.zeros((2, 3, 4, 4)), ArrayEmbedder())


# --- diff report ----------------------------------------------------------------

def test_percentage_difference_matches_published_rows():
    # GLCM contrast row and FID/GLCM-energy rows pin the clean-denominator
    # formula; the canny row is off by one rounding cent of unprinted precision
    assert percentage_difference(467.90, 470.65) == pytest.approx(0.58, abs=0.005)
    assert percentage_difference(967.63, 1046.52) == pytest.approx(7.54, abs=0.005)
    assert percentage_difference(0.025, 0.022) == pytest.approx(13.63, abs=0.01)
    assert percentage_difference(61.91, 62.57) == pytest.approx(1.06, abs=0.01)
    assert percentage_difference(0.0, 0.0) == 0.0
    assert percentage_difference(1.0, 0.0) == float("inf")


def test_diff_report_identical_sets_all_zero():
    imgs, _ = make_toy_corpus(4, resolution=16, seed=6)
    rep = diff_report(imgs, imgs)
    assert all(v == 0.0 for v in rep.diff_percent.values())
    assert rep.resolution == 16


def test_diff_report_consistency_invariant():
    a, _ = make_toy_corpus(4, resolution=16, seed=6)
    b, _ = make_toy_corpus(4, resolution=16, seed=7)
    rep = diff_report(a, b, kinds=("entropy", "sharpness"))
    for k in rep.kinds:
        recomputed = percentage_difference(rep.wm_means[k], rep.clean_means[k])
        assert round(recomputed, 2) == round(rep.diff_percent[k], 2)
    assert "entropy" in rep.as_table()
    assert "sharpness" in rep.to_json()


def test_diff_report_guards():
    a, _ = make_toy_corpus(2, resolution=16, seed=1)
    b, _ = make_toy_corpus(2, resolution=8, seed=1)
    with pytest.raises(DataError):
        diff_report(a, b)
    with pytest.raises(DataError):
        diff_report(a[:0], a)
    with pytest.raises(ParameterError):
        diff_report(a, a, kinds=("entropy", "bogus"))
