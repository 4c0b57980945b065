import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_image
from spnlens.errors import DegenerateInputError, IngestionError, ProtocolError, ValidationError
from spnlens.fingerprint import (
    SCORE_COLUMNS,
    ReferencePattern,
    ScoreTable,
    batch_match,
    build_reference,
    correlate,
    match,
)
from spnlens.raster import CFA_LABELS, CfaStack, RasterImage, save_raw, split_cfa, zero_mean


def stack_of(arrs):
    return CfaStack(dict(zip(CFA_LABELS, arrs)))


def noise_stack(rng, shape=(32, 32), scale=1.0):
    return stack_of([rng.normal(0, scale, shape) for _ in CFA_LABELS])


finite = st.floats(-1e3, 1e3, allow_nan=False)
vectors = arrays(np.float64, st.integers(3, 40), elements=finite)


class TestCorrelate:
    def test_hand_cases(self):
        assert correlate([1, 2, 3, 4], [2, 4, 6, 8]) == pytest.approx(1.0, abs=1e-12)
        assert correlate([1, 2, 3, 4], [1, 3, 2, 4]) == pytest.approx(0.8, abs=1e-12)

    def test_self_and_negation(self, rng):
        x = rng.normal(size=(16, 16))
        assert correlate(x, x) == pytest.approx(1.0, abs=1e-12)
        assert correlate(x, -x) == pytest.approx(-1.0, abs=1e-12)

    def test_constant_is_degenerate(self):
        with pytest.raises(DegenerateInputError):
            correlate([1, 1, 1], [1, 2, 3])

    def test_size_mismatch(self):
        with pytest.raises(ValidationError):
            correlate([1, 2, 3], [1, 2])

    @settings(max_examples=100, deadline=None)
    @given(vectors, st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.floats(-100, 100))
    def test_properties(self, x, seed, a, b):
        assume(np.ptp(x) > 1e-3)
        y = np.random.default_rng(seed).normal(size=x.size) + 0.3 * x / np.ptp(x)
        r = correlate(x, y)
        assert -1.0 <= r <= 1.0
        assert correlate(y, x) == pytest.approx(r, abs=1e-12)
        assert correlate(a * x + b, y) == pytest.approx(r, abs=1e-12)
        assert correlate(-a * x + b, y) == pytest.approx(-r, abs=1e-12)


class TestReference:
    def test_identical_stacks(self, rng):
        s = noise_stack(rng)
        ref = build_reference([s] * 5)
        for k in CFA_LABELS:
            np.testing.assert_allclose(ref.planes[k], s[k], atol=1e-15)
        assert ref.frame_count == 5

    def test_cancellation(self, rng):
        s = noise_stack(rng)
        ref = build_reference([s, s.map(np.negative)])
        for k in CFA_LABELS:
            assert np.all(ref.planes[k] == 0)

    def test_converges_to_pattern(self):
        rng = np.random.default_rng(7)
        sigma, n = 0.05, 50
        pattern = noise_stack(rng, (64, 64), 0.01)
        stacks = [pattern.map(lambda p: p + rng.normal(0, sigma, p.shape)) for _ in range(n)]
        ref = build_reference(stacks)
        rms = np.sqrt(np.mean([np.mean((ref.planes[k] - pattern[k]) ** 2) for k in CFA_LABELS]))
        assert rms == pytest.approx(sigma / np.sqrt(n), rel=0.05)

    def test_averaging_law_slope(self):
        rng = np.random.default_rng(3)
        pattern = noise_stack(rng, (64, 64), 0.01)
        ns = [1, 2, 4, 8, 16, 32, 64]
        powers = []
        for n in ns:
            ref = build_reference(pattern.map(lambda p: p + rng.normal(0, 0.05, p.shape)) for _ in range(n))
            powers.append(np.mean([np.mean((ref.planes[k] - pattern[k]) ** 2) for k in CFA_LABELS]))
        slope = np.polyfit(np.log(ns), np.log(powers), 1)[0]
        assert slope == pytest.approx(-1.0, abs=0.15)

    @settings(max_examples=20, deadline=None)
    @given(st.permutations(range(6)))
    def test_permutation_invariant(self, order):
        rng = np.random.default_rng(0)
        stacks = [noise_stack(rng, (8, 8)) for _ in range(6)]
        a = build_reference(stacks)
        b = build_reference([stacks[i] for i in order])
        for k in CFA_LABELS:
            np.testing.assert_allclose(a.planes[k], b.planes[k], atol=1e-14)

    def test_empty(self):
        with pytest.raises(ProtocolError):
            build_reference([])

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValidationError):
            build_reference([noise_stack(rng, (8, 8)), noise_stack(rng, (8, 10))])

    def test_roundtrip(self, tmp_path, rng):
        ref = build_reference([noise_stack(rng)], "camA", "lensB", "abc123")
        path = ref.save(tmp_path / f"{ref.ref_id}.ref")
        assert path.name == "camA_lensB.ref"
        back = ReferencePattern.load(path)
        assert (back.camera_id, back.lens_id, back.config_hash, back.frame_count) == ("camA", "lensB", "abc123", 1)
        for k in CFA_LABELS:
            assert back.planes[k].tobytes() == ref.planes[k].tobytes()


class TestMatch:
    def test_self_match(self, rng):
        s = noise_stack(rng)
        score = match(build_reference([s]), s)
        assert score.value == pytest.approx(1.0, abs=1e-12)

    def test_value_is_plane_mean(self, rng):
        score = match(build_reference([noise_stack(rng)]), noise_stack(rng))
        assert score.value == np.mean([score.per_plane[k] for k in CFA_LABELS])

    def test_null_bound(self):
        n_pix = 32 * 32
        hits = 0
        for seed in range(200):
            rng = np.random.default_rng(seed)
            hits += abs(match(build_reference([noise_stack(rng)]), noise_stack(rng)).value) < 3 / np.sqrt(n_pix)
        assert hits / 200 >= 0.99

    def test_degenerate_names_plane(self, rng):
        s = noise_stack(rng)
        planes = dict(s.planes)
        planes["G2"] = np.zeros_like(planes["G2"])
        with pytest.raises(DegenerateInputError) as err:
            match(build_reference([s]), CfaStack(planes))
        assert err.value.plane == "G2"


def _cheap(img):
    return split_cfa(img).map(zero_mean)


class TestBatch:
    def test_single(self, rng):
        img = make_image(rng.random((8, 8)), camera_id="c", lens_id="l")
        t = batch_match([build_reference([_cheap(img)], "c", "l")], [("i0", img)], residue_fn=_cheap)
        assert len(t) == 1

    def test_cardinality(self, rng):
        images = [(f"i{j}", make_image(rng.random((8, 8)), camera_id=f"c{j % 3}")) for j in range(100)]
        refs = [build_reference([noise_stack(rng, (4, 4))], f"c{i % 3}", f"l{i}") for i in range(21)]
        t = batch_match(refs, images, residue_fn=_cheap)
        assert len(t) == 2100
        assert len({(r["ref_id"], r["image_id"]) for r in t.rows}) == 2100

    def test_missing_file_listed(self, tmp_path, rng):
        good = save_raw(RasterImage(rng.random((8, 8))), tmp_path / "good.raw")
        with pytest.raises(IngestionError) as err:
            batch_match([], [("g", good), ("m", tmp_path / "gone.raw")])
        assert "gone.raw" in str(err.value)

    def test_csv_roundtrip_and_order(self, tmp_path, rng):
        imgs = [(f"i{j}", make_image(rng.random((8, 8)), camera_id="c", lens_id="l")) for j in range(4)]
        refs = [build_reference([noise_stack(rng, (4, 4))], "c", lid) for lid in ("b", "a")]
        t = batch_match(refs, list(reversed(imgs)), residue_fn=_cheap)
        text = t.to_csv()
        assert text.splitlines()[0] == ",".join(SCORE_COLUMNS)
        assert [l.split(",")[2] for l in text.splitlines()[1:]] == ["c_a"] * 4 + ["c_b"] * 4
        back = ScoreTable.read(t.write(tmp_path / "s.csv"))
        assert back.to_csv() == text
