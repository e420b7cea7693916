"""Domain types, the variable reference dictionary, ingestion, and labeling.

A record is one 500 m grid cell with 14 numeric predictors, coordinates,
a HUC12 watershed code, and an optional ordinal property-damage-extent
(PDE) label derived from a normalized claim amount. Everything downstream
(divergence profiling, knowledge-base construction, retrieval, evaluation)
consumes these types.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping


class DatasetError(ValueError):
    """Raised for dataset-level ingestion failures (row-level problems warn)."""


class RiskDirection(str, enum.Enum):
    HIGHER_IS_RISKIER = "higher_is_riskier"
    HIGHER_IS_PROTECTIVE = "higher_is_protective"
    NEUTRAL = "neutral"


class PDECategory(enum.IntEnum):
    """Ordinal damage level; the integer ordering 0 < 1 < 2 is meaningful."""

    LOW = 0
    MEDIUM = 1
    HIGH = 2


#: Canonical predictor keys, in the order they appear in raw rows.
PREDICTOR_KEYS: tuple[str, ...] = (
    "age",
    "FAR",
    "Poly_num",
    "poi_num",
    "fndn",
    "Popu_num",
    "elevation",
    "dis_coa",
    "impervious",
    "roughness",
    "dis_stream",
    "hand",
    "claims_past_50yr",
    "Rain_max",
)

#: Label key used in raw rows and canonical output.
LABEL_KEY = "PDE_category"
SUM_PDE_KEY = "Sum_PDE"

#: Default directional priors, overridable in configuration.
DEFAULT_RISK_DIRECTIONS: dict[str, RiskDirection] = {
    "elevation": RiskDirection.HIGHER_IS_PROTECTIVE,
    "fndn": RiskDirection.HIGHER_IS_PROTECTIVE,
    "hand": RiskDirection.HIGHER_IS_PROTECTIVE,
    "dis_stream": RiskDirection.HIGHER_IS_PROTECTIVE,
    "dis_coa": RiskDirection.HIGHER_IS_PROTECTIVE,
    "roughness": RiskDirection.HIGHER_IS_PROTECTIVE,
    "Rain_max": RiskDirection.HIGHER_IS_RISKIER,
    "impervious": RiskDirection.HIGHER_IS_RISKIER,
    "claims_past_50yr": RiskDirection.HIGHER_IS_RISKIER,
    "Poly_num": RiskDirection.HIGHER_IS_RISKIER,
    "Popu_num": RiskDirection.HIGHER_IS_RISKIER,
    "FAR": RiskDirection.HIGHER_IS_RISKIER,
    "poi_num": RiskDirection.HIGHER_IS_RISKIER,
    "age": RiskDirection.HIGHER_IS_RISKIER,
}


@dataclass(frozen=True)
class VariableEntry:
    """One reference-dictionary entry: abbreviation, meaning, unit, prior."""

    key: str
    full_name: str
    unit: str
    description: str
    risk_direction: RiskDirection

    def __post_init__(self) -> None:
        if not self.key:
            raise ValueError("variable key must be non-empty")


@dataclass(frozen=True)
class VariableDictionary:
    """Ordered reference dictionary over the 14 predictors plus the label."""

    entries: tuple[VariableEntry, ...]
    _by_key: Mapping[str, VariableEntry] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        by_key = {}
        for entry in self.entries:
            if entry.key in by_key:
                raise ValueError(f"duplicate variable key: {entry.key}")
            by_key[entry.key] = entry
        missing = [k for k in PREDICTOR_KEYS if k not in by_key]
        if missing:
            raise ValueError(f"dictionary missing predictor keys: {missing}")
        object.__setattr__(self, "_by_key", by_key)

    def lookup(self, key: str) -> VariableEntry:
        return self._by_key[key]

    def __contains__(self, key: str) -> bool:
        return key in self._by_key

    @property
    def predictor_entries(self) -> list[VariableEntry]:
        return [e for e in self.entries if e.key in PREDICTOR_KEYS]

    def legend(self, keys: Iterable[str] | None = None) -> str:
        """Compact ``key=Full Name (unit)`` legend string for prompts."""
        parts = []
        for key in keys if keys is not None else PREDICTOR_KEYS:
            entry = self.lookup(key)
            unit = f" ({entry.unit})" if entry.unit else ""
            parts.append(f"{entry.key}={entry.full_name}{unit}")
        return "; ".join(parts)


def _default_entries() -> tuple[VariableEntry, ...]:
    rd = DEFAULT_RISK_DIRECTIONS
    rows = [
        ("age", "Building Age", "yr", "Mean age of buildings in the cell"),
        ("FAR", "Floor Area Ratio", "", "Total building floor area divided by cell land area"),
        ("Poly_num", "Building Number", "count", "Number of building footprints in the cell"),
        ("poi_num", "POI Number", "count", "Number of points of interest in the cell"),
        ("fndn", "Foundation Height", "ft", "Mean foundation height of buildings"),
        ("Popu_num", "Population Number", "count", "Resident population of the cell"),
        ("elevation", "Elevation", "ft", "Mean ground elevation of the cell"),
        ("dis_coa", "Distance to Coast", "km", "Distance from cell centroid to the coastline"),
        ("impervious", "Imperviousness", "%", "Impervious surface share of the cell"),
        ("roughness", "Terrain Roughness", "", "Terrain roughness index of the cell"),
        ("dis_stream", "Distance to Stream", "m", "Distance from cell centroid to the nearest stream"),
        ("hand", "Height Above Nearest Drainage", "m", "Height of the cell above the nearest drainage line"),
        ("claims_past_50yr", "Flood Claims in the Past 50 Years", "count", "Historical flood claims filed in the cell"),
        ("Rain_max", "Maximum Rainfall", "in", "Maximum event rainfall accumulation over the cell"),
    ]
    entries = [VariableEntry(k, n, u, d, rd[k]) for k, n, u, d in rows]
    entries.append(
        VariableEntry(
            LABEL_KEY,
            "Property Damage Extent Category",
            "",
            "Ordinal damage level: 0 low, 1 medium, 2 high",
            RiskDirection.NEUTRAL,
        )
    )
    return tuple(entries)


DEFAULT_DICTIONARY = VariableDictionary(entries=_default_entries())


@dataclass(frozen=True)
class Record:
    """One grid cell. Immutable after construction; safe to share."""

    row_id: int
    x: float
    y: float
    huc12: str
    predictors: dict[str, float]
    sum_pde: float | None = None
    label: PDECategory | None = None

    def __post_init__(self) -> None:
        if not -180.0 <= self.x <= 180.0:
            raise ValueError(f"row {self.row_id}: longitude {self.x} out of range")
        if not -90.0 <= self.y <= 90.0:
            raise ValueError(f"row {self.row_id}: latitude {self.y} out of range")
        if len(self.huc12) != 12 or not self.huc12.isdigit():
            raise ValueError(f"row {self.row_id}: malformed huc12 {self.huc12!r}")
        if self.sum_pde is not None and self.sum_pde < 0:
            raise ValueError(f"row {self.row_id}: negative Sum_PDE")

    def value(self, key: str) -> float | None:
        return self.predictors.get(key)


def label_from_sum_pde(sum_pde: float) -> PDECategory:
    """Map a normalized claim amount to an ordinal damage level.

    Zero claims mean low, amounts in (0, 1] medium, and anything above 1 high.
    """
    if sum_pde < 0 or math.isnan(sum_pde):
        raise ValueError(f"Sum_PDE must be a nonnegative real, got {sum_pde}")
    if sum_pde == 0:
        return PDECategory.LOW
    if sum_pde <= 1:
        return PDECategory.MEDIUM
    return PDECategory.HIGH


def class_distribution(records: Iterable[Record]) -> dict[PDECategory, float]:
    """Fraction of labeled records per damage level; fractions sum to 1."""
    counts = {level: 0 for level in PDECategory}
    total = 0
    for record in records:
        if record.label is not None:
            counts[record.label] += 1
            total += 1
    if total == 0:
        raise DatasetError("no labeled records")
    return {level: counts[level] / total for level in PDECategory}


_MANDATORY_COLUMNS = ("row_id", "x", "y", "huc12")
_ROW_ID_ALIASES = ("row_id", "index")


def _parse_float(value: object) -> float | None:
    if value is None:
        return None
    if isinstance(value, (int, float)):
        result = float(value)
    else:
        text = str(value).strip()
        if text == "" or text.lower() in ("na", "nan", "null", "none"):
            return None
        result = float(text)
    if math.isnan(result):
        return None
    return result


def _row_to_record(raw: Mapping[str, object], warnings: list[str]) -> Record | None:
    row_id_value = None
    for alias in _ROW_ID_ALIASES:
        if raw.get(alias) not in (None, ""):
            row_id_value = raw[alias]
            break
    try:
        row_id = int(str(row_id_value))
    except (TypeError, ValueError):
        warnings.append(f"skipped row with unparseable row id {row_id_value!r}")
        return None

    try:
        x = float(str(raw["x"]))
        y = float(str(raw["y"]))
    except (KeyError, TypeError, ValueError):
        warnings.append(f"row {row_id}: skipped, unparseable coordinates")
        return None

    huc12 = str(raw.get("huc12", "")).strip()
    if len(huc12) != 12 or not huc12.isdigit():
        warnings.append(f"row {row_id}: skipped, malformed huc12 {huc12!r}")
        return None

    predictors: dict[str, float] = {}
    for key in PREDICTOR_KEYS:
        if key in raw:
            try:
                value = _parse_float(raw[key])
            except ValueError:
                warnings.append(f"row {row_id}: unparseable value for {key}, treated as missing")
                continue
            if value is not None:
                predictors[key] = value

    sum_pde = None
    if SUM_PDE_KEY in raw:
        try:
            sum_pde = _parse_float(raw[SUM_PDE_KEY])
        except ValueError:
            warnings.append(f"row {row_id}: unparseable Sum_PDE, treated as missing")
        if sum_pde is not None and sum_pde < 0:
            warnings.append(f"row {row_id}: negative Sum_PDE, treated as missing")
            sum_pde = None

    label: PDECategory | None = None
    if raw.get(LABEL_KEY) not in (None, ""):
        try:
            label = PDECategory(int(str(raw[LABEL_KEY])))
        except ValueError:
            warnings.append(f"row {row_id}: bad {LABEL_KEY} value {raw[LABEL_KEY]!r}, label dropped")
    if label is None and sum_pde is not None:
        label = label_from_sum_pde(sum_pde)
    elif label is not None and sum_pde is not None and label != label_from_sum_pde(sum_pde):
        warnings.append(
            f"row {row_id}: label {int(label)} inconsistent with Sum_PDE {sum_pde}"
        )

    try:
        return Record(row_id=row_id, x=x, y=y, huc12=huc12,
                      predictors=predictors, sum_pde=sum_pde, label=label)
    except ValueError as exc:
        warnings.append(f"row {row_id}: skipped, {exc}")
        return None


def _iter_delimited(path: Path, delimiter: str) -> Iterable[Mapping[str, object]]:
    import csv

    with path.open(newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle, delimiter=delimiter)
        if reader.fieldnames is None:
            return
        fields = set(reader.fieldnames)
        if not any(a in fields for a in _ROW_ID_ALIASES):
            raise DatasetError(f"{path.name}: header missing a row_id/index column")
        for column in ("x", "y", "huc12"):
            if column not in fields:
                raise DatasetError(f"{path.name}: header missing mandatory column {column!r}")
        for row in reader:
            yield row


def _iter_jsonl(path: Path) -> Iterable[Mapping[str, object]]:
    with path.open(encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path.name}:{lineno}: invalid JSON line: {exc}") from exc
            if not isinstance(row, dict):
                raise DatasetError(f"{path.name}:{lineno}: JSON line is not an object")
            yield row


def load_dataset(
    path: str | Path,
    dictionary: VariableDictionary = DEFAULT_DICTIONARY,
) -> tuple[list[Record], list[str]]:
    """Load records from a delimited table or JSON Lines file.

    Format is autodetected by extension (.jsonl/.json vs .csv/.tsv/.txt).
    Rows with unparseable coordinates or huc12 codes are skipped with a
    warning; missing predictor values stay missing. Returns the surviving
    records plus the row-level warnings.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    suffix = path.suffix.lower()
    if suffix in (".jsonl", ".json"):
        rows = _iter_jsonl(path)
    elif suffix == ".tsv":
        rows = _iter_delimited(path, "\t")
    else:
        rows = _iter_delimited(path, ",")

    warnings: list[str] = []
    records: list[Record] = []
    for raw in rows:
        record = _row_to_record(raw, warnings)
        if record is not None:
            records.append(record)
    if not records:
        raise DatasetError(f"{path.name}: empty dataset")
    return records, warnings


def record_to_dict(record: Record) -> dict[str, object]:
    """Canonical plain-dict form with stable key order."""
    out: dict[str, object] = {
        "row_id": record.row_id,
        "x": record.x,
        "y": record.y,
        "huc12": record.huc12,
    }
    for key in PREDICTOR_KEYS:
        if key in record.predictors:
            out[key] = record.predictors[key]
    if record.sum_pde is not None:
        out[SUM_PDE_KEY] = record.sum_pde
    if record.label is not None:
        out[LABEL_KEY] = int(record.label)
    return out


def save_dataset(records: Iterable[Record], path: str | Path) -> None:
    """Write canonical JSON Lines, one record per line, stable key order."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record_to_dict(record)) + "\n")
