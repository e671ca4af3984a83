import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.ndimage import gaussian_filter

from sdesr.metrics import (
    MetricError,
    MetricReport,
    average_cs,
    consistency,
    cosine_similarity,
    default_feature_extract,
    evaluate_image,
    gaussian_window,
    high_frequency_energy,
    metric_correlation,
    mse,
    psnr,
    read_fvec,
    ssim,
    write_fvec,
)
from sdesr.sde import make_rng
from sdesr.training import DegradationSpec, degrade, downsample

from oracles import block_mean_loop, cosine_loop, mse_loop, psnr_loop, ssim_loop


def random_pair(rng, shape=(16, 16, 1)):
    a = rng.random(shape)
    return a, np.clip(a + 0.1 * rng.standard_normal(shape), 0, 1)


class TestPsnr:
    def test_identical_is_inf(self):
        a = make_rng(0).random((8, 8))
        assert psnr(a, a) == math.inf

    def test_twenty_db(self):
        a = np.zeros((10, 10))
        assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-12)

    def test_oracle(self):
        rng = make_rng(1)
        for _ in range(20):
            a, b = random_pair(rng)
            assert abs(psnr(a, b) - psnr_loop(a, b)) < 1e-9

    def test_symmetric(self):
        a, b = random_pair(make_rng(2))
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(MetricError):
            psnr(np.zeros((4, 4)), np.zeros((4, 5)))


class TestSsim:
    def test_identity(self):
        a = make_rng(0).random((16, 16, 1))
        assert ssim(a, a) == pytest.approx(1.0, abs=1e-15)

    def test_inverted_binary_is_negative(self):
        a = (make_rng(1).random((16, 16)) > 0.5).astype(float)
        assert ssim(a, 1 - a) < 0

    def test_constant_vs_small_noise(self):
        a = np.full((24, 24), 0.5)
        b = a + 0.005 * make_rng(2).standard_normal(a.shape)
        v = ssim(a, b)
        assert 0.9 < v < 1.0
        assert v == pytest.approx(ssim_loop(a[..., None], b[..., None]), abs=1e-12)

    def test_oracle(self):
        rng = make_rng(3)
        for _ in range(5):
            a, b = random_pair(rng, (14, 15, 2))
            assert abs(ssim(a, b) - ssim_loop(a, b)) < 1e-9

    def test_window(self):
        w = gaussian_window()
        assert w.sum() == pytest.approx(1.0)
        assert w[5] == w.max()

    def test_symmetric(self):
        a, b = random_pair(make_rng(4))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-15)

    def test_too_small(self):
        with pytest.raises(MetricError):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))


class TestConsistency:
    spec = DegradationSpec(4, "area")

    def test_exact_reconstruction(self):
        y_lr = make_rng(0).random((4, 4, 1))
        sr = np.repeat(np.repeat(y_lr, 4, axis=0), 4, axis=1)
        assert consistency(sr, y_lr, self.spec) == 0.0

    def test_own_downsample(self):
        sr = make_rng(1).random((16, 16, 1))
        assert consistency(sr, downsample(sr, self.spec), self.spec) == 0.0

    def test_constant_offset(self):
        hr = make_rng(2).random((16, 16, 1)) * 0.5
        y_lr, y_up = degrade(hr, self.spec)
        delta = 0.03
        base = downsample(y_up, self.spec) - y_lr
        got = consistency(y_up + delta, y_lr, self.spec)
        assert got == pytest.approx(np.mean((base + delta) ** 2), rel=1e-12)
        if np.allclose(base, 0):
            assert got == pytest.approx(delta**2)

    def test_offset_on_exact_inverse(self):
        y_lr = make_rng(3).random((4, 4, 1)) * 0.5
        sr = np.repeat(np.repeat(y_lr, 4, axis=0), 4, axis=1)
        assert consistency(sr + 0.02, y_lr, self.spec) == pytest.approx(0.02**2, rel=1e-12)

    def test_oracle(self):
        rng = make_rng(4)
        for _ in range(10):
            sr, y = rng.random((16, 16, 1)), rng.random((4, 4, 1))
            assert abs(consistency(sr, y, self.spec) - mse_loop(block_mean_loop(sr, 4), y)) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(MetricError):
            consistency(np.zeros((16, 16, 1)), np.zeros((8, 8, 1)), self.spec)


class TestCosine:
    def test_cases(self):
        z = make_rng(0).standard_normal(16)
        assert cosine_similarity(z, z) == pytest.approx(1.0, abs=1e-15)
        assert cosine_similarity(z, -z) == pytest.approx(-1.0, abs=1e-15)
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    @given(st.floats(1e-3, 1e3))
    def test_scale_invariance(self, c):
        z = make_rng(1).standard_normal(8)
        assert cosine_similarity(z, c * z) == pytest.approx(1.0, abs=1e-14)
        assert cosine_similarity(z, -c * z) == pytest.approx(-1.0, abs=1e-14)

    def test_zero_vector(self):
        with pytest.raises(MetricError):
            cosine_similarity(np.zeros(3), np.ones(3))

    def test_length_mismatch(self):
        with pytest.raises(MetricError):
            cosine_similarity(np.ones(3), np.ones(4))


class TestAverageCs:
    def test_identical(self):
        z = make_rng(0).standard_normal(5)
        assert average_cs([(z, z)] * 3)[0] == pytest.approx(1.0)

    def test_half(self):
        assert average_cs([([1, 0], [1, 0]), ([1, 0], [0, 1])]) == pytest.approx((0.5, 0.5))

    def test_oracle(self):
        rng = make_rng(1)
        pairs = [(rng.standard_normal(32), rng.standard_normal(32)) for _ in range(1024)]
        ref = sum(cosine_loop(a, b) for a, b in pairs) / len(pairs)
        assert average_cs(pairs)[0] == pytest.approx(ref, abs=1e-12)

    def test_copies(self):
        a, b = make_rng(2).standard_normal((2, 6))
        assert average_cs([(a, b)] * 7)[0] == pytest.approx(cosine_similarity(a, b), abs=1e-15)

    def test_empty(self):
        with pytest.raises(MetricError):
            average_cs([])


class TestFeatures:
    img = make_rng(0).random((32, 32, 1))

    def test_deterministic(self):
        z1, z2 = default_feature_extract(self.img), default_feature_extract(self.img)
        np.testing.assert_array_equal(z1, z2)
        assert cosine_similarity(z1, z2) == pytest.approx(1.0)

    def test_unit_norm(self):
        z = default_feature_extract(self.img)
        assert z.shape == (512,)
        assert abs(np.linalg.norm(z) - 1) < 1e-9

    def test_rotation_changes_features(self):
        rot = np.rot90(self.img)
        assert cosine_similarity(default_feature_extract(self.img), default_feature_extract(rot)) < 1 - 1e-6

    def test_similar_images_score_higher(self):
        rng = make_rng(5)
        near = np.clip(self.img + 0.01 * rng.standard_normal(self.img.shape), 0, 1)
        far = rng.random(self.img.shape)
        z = default_feature_extract(self.img)
        assert cosine_similarity(z, default_feature_extract(near)) > cosine_similarity(z, default_feature_extract(far))

    def test_too_small(self):
        with pytest.raises(MetricError):
            default_feature_extract(np.zeros((4, 4)))

    def test_fvec_roundtrip(self, tmp_path):
        z = default_feature_extract(self.img)
        write_fvec(tmp_path / "a.fvec", z)
        raw = (tmp_path / "a.fvec").read_bytes()
        assert raw[:4] == b"FVEC" and len(raw) == 16 + 4 * 512
        np.testing.assert_array_equal(read_fvec(tmp_path / "a.fvec"), z.astype(np.float32))

    def test_fvec_errors(self, tmp_path):
        (tmp_path / "bad.fvec").write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(MetricError):
            read_fvec(tmp_path / "bad.fvec")
        write_fvec(tmp_path / "short.fvec", np.ones(4))
        (tmp_path / "short.fvec").write_bytes((tmp_path / "short.fvec").read_bytes()[:-4])
        with pytest.raises(MetricError):
            read_fvec(tmp_path / "short.fvec")


class TestHighFrequency:
    def test_constant(self):
        assert high_frequency_energy(np.full((8, 8), 0.3)) == 0.0

    def test_checkerboard_is_maximal(self):
        yy, xx = np.mgrid[0:16, 0:16]
        checker = ((xx + yy) % 2).astype(float)
        # every interior response is +-4
        assert high_frequency_energy(checker) == pytest.approx(16.0)
        rng = make_rng(0)
        for img in (rng.random((16, 16)), (xx % 2).astype(float), rng.random((16, 16)) > 0.5):
            assert high_frequency_energy(img) < high_frequency_energy(checker)

    def test_blur_reduces_energy(self):
        img = make_rng(1).random((32, 32))
        assert high_frequency_energy(gaussian_filter(img, 1.0)) < high_frequency_energy(img)


class TestCorrelation:
    def test_linear(self):
        xs = np.array([0.1, 0.5, 0.2, 0.9])
        assert metric_correlation(xs, 2 * xs).pearson == pytest.approx(1.0)
        assert metric_correlation(xs, -xs).pearson == pytest.approx(-1.0)

    def test_five_points(self):
        # dx = (-2,-1,0,1,2), dy = (-1,-2,1,0,2): sum dx dy = 8, sum dx^2 = sum dy^2 = 10
        c = metric_correlation([1, 2, 3, 4, 5], [2, 1, 4, 3, 5])
        assert abs(c.pearson - 0.8) < 1e-12
        assert abs(c.spearman - 0.8) < 1e-12

    def test_spearman_monotone(self):
        xs = np.arange(6.0)
        c = metric_correlation(xs, np.exp(xs))
        assert c.spearman == pytest.approx(1.0)
        assert c.pearson < 1.0

    def test_constant_is_nan(self):
        c = metric_correlation([1, 2, 3], [4, 4, 4])
        assert math.isnan(c.pearson) and math.isnan(c.spearman)

    def test_too_short(self):
        with pytest.raises(MetricError):
            metric_correlation([1, 2], [1, 2])


class TestReport:
    def test_csv_and_aggregates(self, tmp_path):
        rng = make_rng(0)
        spec = DegradationSpec(4)
        rep = MetricReport()
        for i in range(5):
            hr = rng.random((16, 16, 1))
            y_lr, y_up = degrade(hr, spec)
            rep.add(f"img{i}", *evaluate_image(y_up, hr, y_lr, spec))
        hr = rng.random((16, 16, 1))
        rep.add("same", *evaluate_image(hr, hr, downsample(hr, spec), spec))
        rep.write_csv(tmp_path / "per.csv")
        rep.write_summary(tmp_path / "sum.csv")
        with open(tmp_path / "per.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0]) == ["image_id", "psnr_db", "ssim", "consistency_x1e4", "cosine"]
        assert float(rows[-1]["psnr_db"]) == 100.0
        assert float(rows[-1]["ssim"]) == pytest.approx(1.0)
        assert float(rows[-1]["cosine"]) == pytest.approx(1.0)
        with open(tmp_path / "sum.csv") as fh:
            summary = {r["metric"]: r for r in csv.DictReader(fh)}
        for col in ("psnr_db", "ssim", "consistency_x1e4", "cosine"):
            vals = [float(r[col]) for r in rows]
            assert float(summary[col]["mean"]) == pytest.approx(sum(vals) / len(vals), rel=1e-9)
            assert int(summary[col]["L"]) == 6

    def test_consistency_scaled(self):
        rep = MetricReport()
        rep.add("a", 30.0, 0.9, 2.5e-4, 0.99)
        assert rep.records[0]["consistency_x1e4"] == pytest.approx(2.5)

    def test_empty(self):
        with pytest.raises(MetricError):
            MetricReport().aggregates()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_metric_ranges(seed):
    a, b = random_pair(make_rng(seed))
    assert -1 <= ssim(a, b) <= 1
    assert mse(a, b) >= 0
    assert consistency(a, downsample(b, DegradationSpec(4)), DegradationSpec(4)) >= 0
