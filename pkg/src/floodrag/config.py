"""Run configuration: one dataclass tree, JSON round-trip, echoed per run."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .divergence import DivergenceConfig
from .downgrade import DowngradeThresholds
from .gateway import BackendConfig, Pricing


@dataclass(frozen=True)
class FreeShotSettings:
    min_scope: int = 100
    epsilon: float = 1e-6
    pas_top_k: int = 3


@dataclass(frozen=True)
class RetrievalSettings:
    radius_km: float = 1.0
    k_max: int = 3


@dataclass(frozen=True)
class EvaluationSettings:
    bts_quantile: float = 0.1


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; defaults match the module-level defaults."""

    dataset: str = ""
    targets: str = ""
    out_dir: str = "run"
    mock_script: str | None = None
    ablation: str = "IV"
    batch_size: int = 20
    max_reasks: int = 1
    seed: int = 0
    divergence: DivergenceConfig = field(default_factory=DivergenceConfig)
    freeshot: FreeShotSettings = field(default_factory=FreeShotSettings)
    retrieval: RetrievalSettings = field(default_factory=RetrievalSettings)
    downgrade: DowngradeThresholds = field(default_factory=DowngradeThresholds)
    evaluation: EvaluationSettings = field(default_factory=EvaluationSettings)
    backend: BackendConfig = field(default_factory=lambda: BackendConfig(
        backend_id="mock",
        endpoint="mock",
        model_name="simulated-analyst",
        pricing=Pricing(input_rate=1e-7, output_rate=4e-7),
    ))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, payload: dict) -> "RunConfig":
        kwargs = dict(payload)
        if "divergence" in kwargs:
            kwargs["divergence"] = DivergenceConfig(**kwargs["divergence"])
        if "freeshot" in kwargs:
            kwargs["freeshot"] = FreeShotSettings(**kwargs["freeshot"])
        if "retrieval" in kwargs:
            kwargs["retrieval"] = RetrievalSettings(**kwargs["retrieval"])
        if "downgrade" in kwargs:
            kwargs["downgrade"] = DowngradeThresholds(**kwargs["downgrade"])
        if "evaluation" in kwargs:
            kwargs["evaluation"] = EvaluationSettings(**kwargs["evaluation"])
        if "backend" in kwargs:
            backend = dict(kwargs["backend"])
            backend["pricing"] = Pricing(**backend["pricing"])
            kwargs["backend"] = BackendConfig(**backend)
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
