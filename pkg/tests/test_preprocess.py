import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glycast.dataset import IMPUTABLE_FEATURES
from glycast.errors import EncodingError, ImputationError, FoodLookupError, RangeError
from glycast.preprocess import (
    DiscreteDataset,
    build_meal_regressor,
    exclude_incomplete,
    glycemic_load,
    impute_means,
    standardize_encode,
)
from glycast.dataset import GlycemicTable


class TestExclusion:
    def test_missing_fpg_excluded(self, complete_record):
        kept, report = exclude_incomplete([complete_record(fpg=None)])
        assert kept == []
        assert report == [{"subject_id": "P1", "reason": "missing FPG or 2HPP"}]

    def test_complete_record_kept(self, complete_record):
        record = complete_record()
        kept, report = exclude_incomplete([record])
        assert report == []
        assert len(kept) == 1
        # UA and BUN are dropped as variables for every kept record.
        assert kept[0].ua is None and kept[0].bun is None
        assert kept[0].hba1c == record.hba1c

    def test_too_many_missing(self, complete_record):
        record = complete_record(tc=None, tg=None, hdl=None, ldl=None)
        kept, report = exclude_incomplete([record], max_missing=3)
        assert kept == []
        assert "too many missing" in report[0]["reason"]

    def test_exactly_max_missing_kept(self, complete_record):
        record = complete_record(tc=None, tg=None, hdl=None)
        kept, report = exclude_incomplete([record], max_missing=3)
        assert len(kept) == 1 and report == []

    def test_empty_input(self):
        assert exclude_incomplete([]) == ([], [])


class TestImputation:
    def test_mean_fill(self, complete_record):
        records = [
            complete_record("A", hba1c=2.0),
            complete_record("B", hba1c=4.0),
            complete_record("C", hba1c=None),
        ]
        imputed = impute_means(records)
        assert imputed[2].hba1c == 3.0

    def test_identity_when_complete(self, complete_record):
        records = [complete_record("A"), complete_record("B", age=60.0)]
        assert impute_means(records) == records

    def test_no_donor_values(self, complete_record):
        records = [complete_record("A", ga=None), complete_record("B", ga=None)]
        with pytest.raises(ImputationError, match="ga"):
            impute_means(records)

    def test_mean_preservation(self, complete_record):
        rng = np.random.default_rng(0)
        records = []
        for i in range(40):
            overrides = {f: float(rng.uniform(1, 30)) for f in IMPUTABLE_FEATURES}
            overrides["height_m"] = float(rng.uniform(1.4, 2.0))
            if rng.random() < 0.3:
                overrides[IMPUTABLE_FEATURES[int(rng.integers(len(IMPUTABLE_FEATURES)))]] = None
            records.append(complete_record(f"S{i}", **overrides))
        donors = {
            f: np.mean([getattr(r, f) for r in records if getattr(r, f) is not None])
            for f in IMPUTABLE_FEATURES
        }
        imputed = impute_means(records)
        for f in IMPUTABLE_FEATURES:
            column = [getattr(r, f) for r in imputed]
            assert abs(np.mean(column) - donors[f]) < 1e-12


def records_with_column(values, complete_record):
    """Records where every numeric feature carries the same ordering as `values`."""
    records = []
    for i, v in enumerate(values):
        overrides = {f: float(v + 10 * (j + 1)) for j, f in enumerate(IMPUTABLE_FEATURES)}
        overrides["height_m"] = 1.4 + 0.05 * (v % 10)
        records.append(
            complete_record(
                f"S{i}",
                gender="male" if i % 2 == 0 else "female",
                fpg=100.0 + v,
                hpp2=200.0 + v,
                **overrides,
            )
        )
    return records


class TestStandardizeEncode:
    def test_quartile_classes(self, complete_record):
        records = records_with_column(range(1, 9), complete_record)
        data = standardize_encode(records, n_bins=4)
        np.testing.assert_array_equal(data.column("hba1c"), [0, 0, 1, 1, 2, 2, 3, 3])
        np.testing.assert_array_equal(data.column("fpg"), [0, 0, 1, 1, 2, 2, 3, 3])

    def test_gender_binary(self, complete_record):
        records = records_with_column([3.0, 7.0, 11.0], complete_record)
        records = [r.with_values(gender=g) for r, g in zip(records, ["male", "female", "male"])]
        data = standardize_encode(records)
        np.testing.assert_array_equal(data.column("gender"), [0, 1, 0])
        assert data.card_of("gender") == 2

    def test_constant_column_rejected(self, complete_record):
        records = records_with_column(np.arange(1.0, 7.0), complete_record)
        records = [r.with_values(bmi=25.0) for r in records]
        with pytest.raises(EncodingError, match="bmi.*zero variance"):
            standardize_encode(records)

    def test_zscore_stats(self, complete_record):
        records = records_with_column(np.arange(1, 13) * 1.7, complete_record)
        data = standardize_encode(records)
        codec = data.codec_of("tc")
        raw = np.array([getattr(r, "tc") for r in records])
        z = (raw - codec.mean) / codec.sd
        assert abs(z.mean()) < 1e-10
        assert abs(z.std() - 1.0) < 1e-10

    def test_representatives_land_in_own_bin(self, complete_record):
        rng = np.random.default_rng(3)
        records = records_with_column(rng.uniform(0, 50, 24), complete_record)
        data = standardize_encode(records)
        for codec in data.codecs:
            if codec.kind != "numeric":
                continue
            for k in range(codec.card):
                assert codec.encode_value(codec.representatives[k]) == k

    @settings(max_examples=25, deadline=None)
    @given(
        st.integers(min_value=1, max_value=6),
        st.randoms(use_true_random=False),
    )
    def test_equal_frequency_binning(self, multiplier, rnd):
        n_bins = 4
        n = n_bins * multiplier * 2
        values = rnd.sample(range(10_000), n)
        column = np.asarray(values, dtype=float)
        mean, sd = column.mean(), column.std()
        z = (column - mean) / sd
        edges = np.quantile(z, [0.25, 0.5, 0.75])
        classes = np.searchsorted(edges, z, side="right")
        counts = np.bincount(classes, minlength=n_bins)
        assert set(counts) == {n // n_bins}


class TestGlycemicLoad:
    def test_paper_value(self):
        assert glycemic_load(60, 23) == 13.8

    def test_zero_cho(self):
        assert glycemic_load(95, 0) == 0.0

    def test_gi_100_identity(self):
        assert glycemic_load(100, 50) == 50.0

    def test_negative_rejected(self):
        with pytest.raises(RangeError):
            glycemic_load(-1, 10)
        with pytest.raises(RangeError):
            glycemic_load(10, -1)

    @settings(max_examples=60, deadline=None)
    @given(
        st.floats(min_value=0, max_value=150, allow_nan=False),
        st.floats(min_value=0, max_value=100, allow_nan=False),
        st.floats(min_value=0, max_value=8, allow_nan=False),
    )
    def test_bilinearity(self, gi, cho, a):
        assert glycemic_load(a * gi, cho) == pytest.approx(a * glycemic_load(gi, cho), rel=1e-12, abs=1e-12)
        assert glycemic_load(gi, a * cho) == pytest.approx(a * glycemic_load(gi, cho), rel=1e-12, abs=1e-12)


TABLE = GlycemicTable(entries=(("rice", 60.0, 23.0), ("tofu", 15.0, 2.0)))


class TestMealRegressor:
    def test_single_item_meal(self, simple_series, meal_at):
        series = simple_series(n=96, meals=(meal_at(28, description="rice", grams=100.0),))
        regressor = build_meal_regressor(series, TABLE)
        assert regressor.values[28] == pytest.approx(13.8)
        assert np.count_nonzero(regressor.values) == 1

    def test_no_meals(self, simple_series):
        regressor = build_meal_regressor(simple_series(n=48), TABLE)
        assert not np.any(regressor.values)

    def test_multi_item_meal_sums(self, simple_series, meal_at):
        series = simple_series(n=48, meals=(meal_at(10, gl=10.0), meal_at(10, gl=5.0)))
        regressor = build_meal_regressor(series)
        assert regressor.values[10] == 15.0

    def test_portion_scaling(self, simple_series, meal_at):
        series = simple_series(n=48, meals=(meal_at(5, description="rice", grams=50.0),))
        regressor = build_meal_regressor(series, TABLE)
        assert regressor.values[5] == pytest.approx(13.8 / 2)

    def test_unmatched_description(self, simple_series, meal_at):
        series = simple_series(n=48, meals=(meal_at(5, description="mystery stew", grams=100.0),))
        with pytest.raises(FoodLookupError, match="mystery stew"):
            build_meal_regressor(series, TABLE)

    def test_total_gl_preserved(self, simple_series, meal_at):
        rng = np.random.default_rng(5)
        gls = rng.uniform(0, 30, 7)
        meals = tuple(meal_at(int(rng.integers(0, 48)), gl=float(g)) for g in gls)
        series = simple_series(n=48, meals=meals)
        regressor = build_meal_regressor(series)
        assert regressor.values.sum() == pytest.approx(gls.sum(), rel=1e-12)


class TestDiscreteDatasetIO:
    def test_round_trip(self, tmp_path, complete_record):
        records = records_with_column(np.arange(12, dtype=float), complete_record)
        data = standardize_encode(records)
        data.to_files(tmp_path / "enc.csv", tmp_path / "meta.json")
        back = DiscreteDataset.from_files(tmp_path / "enc.csv", tmp_path / "meta.json")
        assert back.variables == data.variables
        assert back.cards == data.cards
        np.testing.assert_array_equal(back.matrix, data.matrix)
        assert back.codec_of("tc").representatives == data.codec_of("tc").representatives
