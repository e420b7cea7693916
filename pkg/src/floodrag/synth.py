"""Deterministic synthetic dataset for offline runs and tests.

Three watershed clusters with different densities give targets a mix of
zero to many sub-kilometer neighbors, and the latent risk construction
ties labels to the predictors so the divergence analysis has real signal.
Roughly 45/40/15 percent of records land in the low/medium/high classes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .records import Record, label_from_sum_pde, save_dataset

_CLUSTERS = (
    # (huc12, count weight, center lon, center lat, jitter degrees)
    ("120401020101", 0.60, -95.40, 29.80, 0.012),
    ("120401020102", 0.25, -95.65, 30.00, 0.030),
    ("120401020103", 0.15, -95.15, 29.60, 0.090),
)


def make_synthetic_records(n: int = 200, seed: int = 7) -> list[Record]:
    rng = np.random.default_rng(seed)
    counts = [int(round(n * w)) for _, w, *_ in _CLUSTERS]
    counts[0] += n - sum(counts)

    rows = []
    row_id = 1000
    for (huc12, _, lon0, lat0, jitter), count in zip(_CLUSTERS, counts):
        for _ in range(count):
            predictors = {
                "age": float(rng.uniform(5, 60)),
                "FAR": float(rng.lognormal(-3.0, 1.0)),
                "Poly_num": float(rng.integers(0, 300)),
                "poi_num": float(rng.integers(0, 25)),
                "fndn": float(rng.uniform(0.3, 4.0)),
                "Popu_num": float(rng.uniform(0, 1500)),
                "elevation": float(rng.uniform(20, 120)),
                "dis_coa": float(rng.uniform(20, 90)),
                "impervious": float(rng.uniform(0, 95)),
                "roughness": float(rng.uniform(0.05, 0.35)),
                "dis_stream": float(rng.uniform(5, 2000)),
                "hand": float(rng.uniform(0.5, 25)),
                "claims_past_50yr": float(rng.integers(0, 40)),
                "Rain_max": float(rng.uniform(8, 20)),
            }
            rows.append((
                row_id,
                float(np.clip(lon0 + rng.normal(0, jitter), -180, 180)),
                float(np.clip(lat0 + rng.normal(0, jitter), -90, 90)),
                huc12,
                predictors,
            ))
            row_id += 1

    # Latent risk mixes exposure positively and protection negatively, so
    # labels are predictable from the features up to noise.
    latent = []
    for _, _, _, _, p in rows:
        risk = (
            p["Poly_num"] / 300 + p["Popu_num"] / 1500 + p["impervious"] / 95
            + p["claims_past_50yr"] / 40 + p["Rain_max"] / 20 + p["FAR"]
            + p["poi_num"] / 25 + 0.2 * p["age"] / 60
            - p["elevation"] / 120 - p["hand"] / 25 - p["fndn"] / 4
            - p["roughness"] / 0.35 - p["dis_stream"] / 2000 - 0.3 * p["dis_coa"] / 90
        )
        latent.append(risk + rng.normal(0, 0.35))
    order = np.argsort(np.argsort(latent))  # rank of each row
    n_rows = len(rows)

    records = []
    for (row_id, x, y, huc12, predictors), rank in zip(rows, order):
        percentile = (rank + 0.5) / n_rows
        if percentile < 0.45:
            sum_pde = 0.0
        else:
            sum_pde = float(((percentile - 0.45) / 0.55) ** 3 * 2.5)
        if rng.random() < 0.05:
            drop = str(rng.choice(sorted(predictors)))
            predictors = {k: v for k, v in predictors.items() if k != drop}
        records.append(Record(
            row_id=row_id, x=x, y=y, huc12=huc12, predictors=predictors,
            sum_pde=sum_pde, label=label_from_sum_pde(sum_pde),
        ))
    return records


def write_synthetic_dataset(path: str | Path, n: int = 200, seed: int = 7) -> list[Record]:
    records = make_synthetic_records(n=n, seed=seed)
    save_dataset(records, path)
    return records
