"""Baseline descriptor, extractor plumbing and the binary feature cache."""

import numpy as np
import pytest
from oracles import baseline_features_oracle

from bmodelab.errors import (DataFormatError, DegenerateInputError,
                             DimensionMismatchError, ValidationError)
from bmodelab.features import (BASELINE_DIM, BASELINE_ID, ExtractorSpec,
                               FeatureCache, FeatureVector, baseline_extract,
                               baseline_spec, cache_key, extract_features,
                               extract_for_variant)
from bmodelab.prep import ImageVariant


def _image(rng, side=64, scale=255.0):
    gray = rng.uniform(0, scale, (side, side))
    return np.repeat(gray[:, :, None], 3, axis=2)


def _variant(rng, lesion_id="v", side=64):
    return ImageVariant(lesion_id=lesion_id, scan_index=0, threshold_db=50.0,
                        margin_mm=5.0, pixels=_image(rng, side))


class TestBaselineExtract:
    def test_dimension_and_id(self, rng):
        vec = baseline_extract(_image(rng))
        assert vec.dim == BASELINE_DIM == 64
        assert vec.extractor_id == BASELINE_ID
        assert vec.values.shape == (64,)

    def test_histogram_block_sums_to_one(self, rng):
        vec = baseline_extract(_image(rng))
        assert vec.values[:32].sum() == pytest.approx(1.0, abs=1e-12)

    def test_matches_scalar_oracle(self, rng):
        for side in (16, 33, 64):
            img = _image(rng, side)
            np.testing.assert_allclose(baseline_extract(img).values,
                                       baseline_features_oracle(img),
                                       rtol=1e-9, atol=1e-9)

    def test_constant_image(self):
        vec = baseline_extract(np.full((32, 32, 3), 7.0)).values
        assert vec[0] == 1.0 and np.all(vec[1:32] == 0.0)
        mean, std, skew, entropy, grad = vec[32:37]
        assert mean == 7.0
        assert std == 0.0 and skew == 0.0 and entropy == 0.0 and grad == 0.0
        np.testing.assert_array_equal(vec[37:41], 0.0)

    def test_statistics_invariant_under_rotation(self, rng):
        img = _image(rng, 48)
        rotated = np.rot90(img, axes=(0, 1)).copy()
        a = baseline_extract(img).values
        b = baseline_extract(rotated).values
        # histogram, moments, entropy, gradient mean and fractions only;
        # the thumbnail projection is orientation sensitive by design
        np.testing.assert_allclose(a[:41], b[:41], rtol=1e-9, atol=1e-12)
        assert not np.allclose(a[41:], b[41:])

    def test_uses_first_channel_only(self, rng):
        img = _image(rng)
        tweaked = img.copy()
        tweaked[:, :, 1] += 5.0
        np.testing.assert_array_equal(baseline_extract(img).values,
                                      baseline_extract(tweaked).values)

    def test_input_validation(self, rng):
        with pytest.raises(ValidationError):
            baseline_extract(np.zeros((32, 32)))
        with pytest.raises(ValidationError):
            baseline_extract(np.zeros((32, 40, 3)))
        bad = _image(rng)
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValidationError):
            baseline_extract(bad)
        with pytest.raises(DegenerateInputError):
            baseline_extract(np.zeros((7, 7, 3)))


class TestVectorAndSpec:
    def test_vector_dim_enforced(self):
        with pytest.raises(ValidationError):
            FeatureVector(values=np.zeros(5), extractor_id="x", dim=6)

    def test_vector_finite_enforced(self):
        with pytest.raises(ValidationError):
            FeatureVector(values=np.array([1.0, np.inf]), extractor_id="x", dim=2)

    def test_baseline_spec(self):
        spec = baseline_spec()
        assert spec.extractor_id == "baseline"
        assert spec.expected_dim == 64
        assert spec.model_path is None

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValidationError):
            ExtractorSpec(extractor_id="x", kind="magic", expected_dim=4)

    def test_portable_needs_model_path(self):
        with pytest.raises(ValidationError):
            ExtractorSpec(extractor_id="x", kind="portable_model", expected_dim=4)

    def test_dim_mismatch_detected(self, rng):
        spec = ExtractorSpec(extractor_id="baseline", kind="baseline",
                             expected_dim=32)
        with pytest.raises(DimensionMismatchError):
            extract_features(_image(rng), spec)


class TestFeatureCache:
    def test_put_get_round_trip(self, rng):
        cache = FeatureCache()
        values = rng.standard_normal(16)
        cache.put("k", values)
        hit = cache.get("k")
        np.testing.assert_array_equal(hit, values.astype(np.float32))
        assert "k" in cache and len(cache) == 1
        assert cache.get("missing") is None

    def test_get_returns_a_copy(self):
        cache = FeatureCache()
        cache.put("k", np.ones(4))
        cache.get("k")[:] = 99.0
        np.testing.assert_array_equal(cache.get("k"), 1.0)

    def test_save_load_round_trip(self, tmp_path, rng):
        cache = FeatureCache()
        for i in range(5):
            cache.put(f"entry|{i}", rng.standard_normal(8 + i))
        path = tmp_path / "f.bmlfc"
        cache.save(path)
        loaded = FeatureCache.load(path)
        assert len(loaded) == 5
        for i in range(5):
            np.testing.assert_array_equal(loaded.get(f"entry|{i}"),
                                          cache.get(f"entry|{i}"))

    def test_save_is_insertion_order_independent(self, tmp_path, rng):
        values = {f"k{i}": rng.standard_normal(6) for i in range(4)}
        a, b = FeatureCache(), FeatureCache()
        for key in sorted(values):
            a.put(key, values[key])
        for key in reversed(sorted(values)):
            b.put(key, values[key])
        a.save(tmp_path / "a.bmlfc")
        b.save(tmp_path / "b.bmlfc")
        assert (tmp_path / "a.bmlfc").read_bytes() == (tmp_path / "b.bmlfc").read_bytes()

    def test_empty_cache_round_trip(self, tmp_path):
        FeatureCache().save(tmp_path / "e.bmlfc")
        assert len(FeatureCache.load(tmp_path / "e.bmlfc")) == 0

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "x.bmlfc"
        path.write_bytes(b"NOTCACHE" + b"\x00" * 16)
        with pytest.raises(DataFormatError, match="magic"):
            FeatureCache.load(path)

    def test_truncated_payload_rejected(self, tmp_path):
        cache = FeatureCache()
        cache.put("k", np.ones(8))
        path = tmp_path / "t.bmlfc"
        cache.save(path)
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(DataFormatError, match="truncated"):
            FeatureCache.load(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        cache = FeatureCache()
        cache.put("k", np.ones(8))
        path = tmp_path / "t.bmlfc"
        cache.save(path)
        path.write_bytes(path.read_bytes() + b"\x00\x00")
        with pytest.raises(DataFormatError, match="trailing"):
            FeatureCache.load(path)

    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError):
            FeatureCache().put("k", np.array([1.0, np.nan]))


class TestExtractForVariant:
    def test_cold_and_warm_runs_are_bit_identical(self, rng):
        variant = _variant(rng)
        spec = baseline_spec()
        no_cache = extract_for_variant(variant, spec)
        cache = FeatureCache()
        cold = extract_for_variant(variant, spec, cache)
        warm = extract_for_variant(variant, spec, cache)
        np.testing.assert_array_equal(no_cache.values, cold.values)
        np.testing.assert_array_equal(cold.values, warm.values)

    def test_values_carry_cache_precision(self, rng):
        vec = extract_for_variant(_variant(rng), baseline_spec())
        np.testing.assert_array_equal(
            vec.values, vec.values.astype(np.float32).astype(np.float64))

    def test_populates_cache_under_composite_key(self, rng):
        variant = _variant(rng, lesion_id="abc")
        cache = FeatureCache()
        extract_for_variant(variant, baseline_spec(), cache)
        assert cache_key(variant.key, "baseline") == "abc|s0|m5|t50|baseline"
        assert "abc|s0|m5|t50|baseline" in cache

    def test_cached_dim_mismatch_detected(self, rng):
        variant = _variant(rng)
        cache = FeatureCache()
        cache.put(cache_key(variant.key, "baseline"), np.ones(10))
        with pytest.raises(DimensionMismatchError):
            extract_for_variant(variant, baseline_spec(), cache)
