from __future__ import annotations

import json
import math
from collections import Counter

import pytest
from hypothesis import given, strategies as st

from floodrag.records import (
    DEFAULT_DICTIONARY,
    DatasetError,
    PDECategory,
    PREDICTOR_KEYS,
    Record,
    class_distribution,
    label_from_sum_pde,
    load_dataset,
    record_to_dict,
    save_dataset,
)

from conftest import APPENDIX_TRAIN_ROW, simple_record


class TestLabelFromSumPde:
    def test_zero_is_low(self):
        assert label_from_sum_pde(0.0) == PDECategory.LOW

    def test_published_sample_value_is_medium(self):
        assert label_from_sum_pde(0.453263300885126) == PDECategory.MEDIUM

    def test_train_sample_value_is_medium(self):
        assert label_from_sum_pde(0.045665492259151) == PDECategory.MEDIUM

    def test_upper_threshold_is_strict(self):
        assert label_from_sum_pde(1.0) == PDECategory.MEDIUM
        assert label_from_sum_pde(1.0000001) == PDECategory.HIGH

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            label_from_sum_pde(-0.1)

    @given(st.floats(min_value=0, max_value=1e6), st.floats(min_value=0, max_value=1e6))
    def test_monotone(self, a, b):
        lo, hi = sorted((a, b))
        assert label_from_sum_pde(lo) <= label_from_sum_pde(hi)


class TestVariableDictionary:
    def test_covers_all_predictors(self):
        for key in PREDICTOR_KEYS:
            entry = DEFAULT_DICTIONARY.lookup(key)
            assert entry.full_name

    def test_hand_unit_is_meters(self):
        assert DEFAULT_DICTIONARY.lookup("hand").unit == "m"

    def test_legend_mentions_key_and_unit(self):
        legend = DEFAULT_DICTIONARY.legend(["hand"])
        assert "hand=" in legend and "(m)" in legend

    def test_duplicate_key_rejected(self):
        from floodrag.records import VariableDictionary

        entries = DEFAULT_DICTIONARY.entries + (DEFAULT_DICTIONARY.entries[0],)
        with pytest.raises(ValueError):
            VariableDictionary(entries=entries)


class TestRecordInvariants:
    def test_bad_longitude(self):
        with pytest.raises(ValueError):
            simple_record(1, x=181.0)

    def test_bad_huc12(self):
        with pytest.raises(ValueError):
            simple_record(1, huc12="12AB")

    def test_label_matches_sum_pde_helper(self):
        record = Record(row_id=1, x=0, y=0, huc12="120401020103",
                        predictors={}, sum_pde=0.5, label=PDECategory.MEDIUM)
        assert record.label == label_from_sum_pde(record.sum_pde)


class TestLoadDataset:
    def _write_jsonl(self, tmp_path, rows, name="data.jsonl"):
        path = tmp_path / name
        path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
        return path

    def test_published_row_roundtrips(self, tmp_path):
        path = self._write_jsonl(tmp_path, [APPENDIX_TRAIN_ROW])
        records, warnings = load_dataset(path)
        assert warnings == []
        record = records[0]
        assert record.row_id == 429
        assert record.huc12 == "120401020103"
        assert record.label == PDECategory.MEDIUM
        assert record.predictors["Rain_max"] == 13.24
        assert record.predictors["hand"] == pytest.approx(19.75105811403509)

    def test_malformed_huc12_skipped_with_warning(self, tmp_path):
        bad = dict(APPENDIX_TRAIN_ROW, huc12="12AB", index=430)
        path = self._write_jsonl(tmp_path, [APPENDIX_TRAIN_ROW, bad])
        records, warnings = load_dataset(path)
        assert [r.row_id for r in records] == [429]
        assert any("malformed huc12" in w for w in warnings)

    def test_unparseable_coordinates_skipped(self, tmp_path):
        bad = dict(APPENDIX_TRAIN_ROW, x="not-a-number", index=431)
        path = self._write_jsonl(tmp_path, [APPENDIX_TRAIN_ROW, bad])
        records, warnings = load_dataset(path)
        assert [r.row_id for r in records] == [429]
        assert any("coordinates" in w for w in warnings)

    def test_empty_file_errors(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        with pytest.raises(DatasetError, match="empty dataset"):
            load_dataset(path)

    def test_missing_mandatory_column_errors(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("row_id,x,y\n1,0,0\n")
        with pytest.raises(DatasetError, match="huc12"):
            load_dataset(path)

    def test_missing_file_errors(self, tmp_path):
        with pytest.raises(DatasetError, match="not found"):
            load_dataset(tmp_path / "nope.jsonl")

    def test_csv_with_index_alias(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text(
            "index,x,y,huc12,elevation,Sum_PDE\n"
            "10,-95.4,29.8,120401020101,55.5,0.0\n"
            "11,-95.4,29.8,120401020101,,2.5\n"
        )
        records, warnings = load_dataset(path)
        assert [r.row_id for r in records] == [10, 11]
        assert records[0].label == PDECategory.LOW
        assert records[1].label == PDECategory.HIGH
        assert "elevation" not in records[1].predictors  # blank stays missing

    def test_label_sum_pde_inconsistency_warns_but_keeps_row(self, tmp_path):
        row = dict(APPENDIX_TRAIN_ROW, PDE_category=2)
        path = self._write_jsonl(tmp_path, [row])
        records, warnings = load_dataset(path)
        assert records[0].label == PDECategory.HIGH
        assert any("inconsistent" in w for w in warnings)

    def test_save_then_load_is_identity(self, tmp_path, synthetic_records):
        first = tmp_path / "a.jsonl"
        second = tmp_path / "b.jsonl"
        save_dataset(synthetic_records, first)
        loaded, warnings = load_dataset(first)
        assert warnings == []
        save_dataset(loaded, second)
        assert first.read_bytes() == second.read_bytes()
        assert [record_to_dict(r) for r in loaded] == [
            record_to_dict(r) for r in synthetic_records
        ]


class TestClassDistribution:
    def test_direct_counting(self):
        records = [simple_record(i, label) for i, label in enumerate([0, 0, 1, 2])]
        dist = class_distribution(records)
        assert dist[PDECategory.LOW] == 0.5
        assert dist[PDECategory.MEDIUM] == 0.25
        assert dist[PDECategory.HIGH] == 0.25

    def test_fractions_sum_to_one(self, synthetic_records):
        assert abs(sum(class_distribution(synthetic_records).values()) - 1.0) < 1e-12

    def test_matches_counting_oracle_on_random_labels(self):
        import random

        rng = random.Random(13)
        labels = [rng.randrange(3) for _ in range(1000)]
        records = [simple_record(i, label) for i, label in enumerate(labels)]
        expected = Counter(labels)
        dist = class_distribution(records)
        for level in PDECategory:
            assert dist[level] == expected[int(level)] / 1000

    def test_no_labels_errors(self):
        with pytest.raises(DatasetError):
            class_distribution([simple_record(1, None)])
