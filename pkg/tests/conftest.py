from __future__ import annotations

import json

import pytest

from floodrag.knowledge import KBEntry
from floodrag.prompts import audit_kb_trajectory, parse_trajectory
from floodrag.records import PDECategory, Record
from floodrag.synth import make_synthetic_records

# Published sample row for a training record (Mallard Lake-Cypress Creek cell).
APPENDIX_TRAIN_ROW = {
    "index": 429, "zip": "77447", "x": -95.8234621479532, "y": 30.0165830483419,
    "age": 27.0, "FAR": 0.020766014868859997, "poi_num": 0.0,
    "Popu_num": 21.871354761343653, "claims_past_50yr": 18,
    "dis_stream": 24.14419964597232, "elevation": 67.1029411764706,
    "dis_coa": 73.44553213879476, "hand": 19.75105811403509,
    "impervious": 10.078431, "roughness": 0.186187946428571, "Poly_num": 39.0,
    "Rain_max": 13.24, "fndn": 1.661290322580647, "Cluster": "0",
    "Sum_PDE": 0.045665492259151, "huc12": "120401020103", "PDE_category": 1,
    "imp_bin": "all", "strata_key": "PDE_category",
}

# Published sample row for a test record (Willow Creek cell).
APPENDIX_TEST_ROW = {
    "index": 5448, "zip": "77389", "x": -95.50207982520224, "y": 30.106515152470354,
    "age": 30.0, "FAR": 0.12494365122514271, "poi_num": 1.0,
    "Popu_num": 593.229423749367, "claims_past_50yr": 26,
    "dis_stream": 4.273092975385168, "elevation": 47.25,
    "dis_coa": 50.1185255739239, "hand": 14.415917024704619,
    "impervious": 30.820312, "roughness": 0.103759821428571, "Poly_num": 146.0,
    "Rain_max": 15.04, "fndn": 1.566091954022989, "Cluster": "0",
    "Sum_PDE": 0.453263300885126, "huc12": "120401020210", "PDE_category": 1,
    "imp_bin": "all", "strata_key": "PDE_category",
}

SAMPLE_TEXT_MODE = (
    "Poly_num is 39, Popu_num is about 21.87. The fndn is 1.66 ft, hand measures "
    "19.75 m, and Rain_max is 13.24 inches. Elevation averages 67.1 ft, dis_coa is "
    "73.45 km. There have been 18 claims_past_50yr. Roughness is 0.19, FAR is "
    "0.021, and impervious surface is 10.08%."
)

# Reference trajectory for the training sample, ground truth medium (1).
SAMPLE_TRAJECTORY_RAW = (
    "<think>For occurrence, the foundation is moderate (1.66 ft), and HAND is "
    "very high (19.75 m), which is highly protective. Elevation is also high "
    "(67.1 ft). However, there are 18 claims in the past 50 years, indicating "
    "repeated flood impacts. Rainfall is significant (13.24 inches), and "
    "impervious surface is moderate (10.08%). Given the repeated claim history, "
    "occurrence resolves to damage rather than zero. For severity, the "
    "protective drainage standing caps the expected losses, so severity "
    "resolves to 1. Despite the strongly protective drainage indicators, the "
    "sustained claim record keeps this cell in the damage class. Based on these "
    "factors, it is reasonable to claim PDE_category is 1.</think>"
    "<answer>1</answer>"
)

# Reference prediction line for the test sample, predicted and answered 1.
SAMPLE_PREDICTION_LINE = json.dumps({
    "row_id": 5448,
    "pred_label": 1,
    "r1": (
        "<think>Target shows several opposing signals: relatively large "
        "population (~593), nontrivial FAR (~0.125) and impervious (~30.8%), "
        "with 26 prior claims and rainfall near 15 inches. Neighbors within one "
        "kilometer lean toward class 1 with similar exposure profiles. Despite "
        "moderate protective cues from HAND (14.4 m) and elevation (47.3 ft), "
        "the exposure and claim history support a damage outcome. Occurrence "
        "resolves to damage on that basis, and severity resolves to 1 given the "
        "moderate depth indicators. Based on these factors, it is reasonable to "
        "claim PDE_category is 1.</think><answer>1</answer>"
    ),
})


def record_from_row(row: dict) -> Record:
    from floodrag.records import PREDICTOR_KEYS

    return Record(
        row_id=row["index"],
        x=row["x"],
        y=row["y"],
        huc12=row["huc12"],
        predictors={k: float(row[k]) for k in PREDICTOR_KEYS if k in row},
        sum_pde=row.get("Sum_PDE"),
        label=PDECategory(row["PDE_category"]),
    )


def compliant_raw(label: int) -> str:
    """A minimal trajectory satisfying every knowledge-base audit rule."""
    if label == 0:
        think = (
            "The exposure cues stay weak while the protection cues hold, so "
            "occurrence resolves to 0. Severity would only matter if occurrence "
            "flipped. Despite the recorded rainfall, the protective standing "
            "prevails. Based on these factors, it is reasonable to claim "
            "PDE_category is 0."
        )
    else:
        think = (
            "The exposure cues outweigh the protection cues, so occurrence "
            f"resolves to damage, and severity resolves to {label}. Despite the "
            "protective notes, the exposure record dominates. Based on these "
            f"factors, it is reasonable to claim PDE_category is {label}."
        )
    return f"<think>{think}</think><answer>{label}</answer>"


def make_entry(
    record: Record,
    think_raw: str | None = None,
    text_mode: str = "features summarized",
) -> KBEntry:
    raw = think_raw if think_raw is not None else compliant_raw(int(record.label))
    trajectory, violations = parse_trajectory(raw)
    assert trajectory is not None, violations
    audit = audit_kb_trajectory(trajectory, record.label)
    assert not audit.violations, audit.violations
    return KBEntry(record=record, text_mode=text_mode, trajectory=trajectory, audit=audit)


def simple_record(
    row_id: int,
    label: int | None = None,
    predictors: dict | None = None,
    x: float = -95.4,
    y: float = 29.8,
    huc12: str = "120401020101",
) -> Record:
    return Record(
        row_id=row_id, x=x, y=y, huc12=huc12,
        predictors=predictors if predictors is not None else {"elevation": 50.0, "hand": 10.0},
        sum_pde=None,
        label=None if label is None else PDECategory(label),
    )


@pytest.fixture(scope="session")
def synthetic_records():
    return make_synthetic_records()


@pytest.fixture()
def appendix_train_record():
    return record_from_row(APPENDIX_TRAIN_ROW)


@pytest.fixture()
def appendix_test_record():
    return record_from_row(APPENDIX_TEST_ROW)
