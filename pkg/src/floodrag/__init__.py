"""Training-free retrieval-augmented nowcasting of ordinal flood damage.

The pipeline profiles feature divergence over labeled grid cells, builds a
reasoning-centric knowledge base, selects free-shot exemplars per
watershed, assembles context-augmented prediction prompts for a pluggable
model backend, post-checks predictions with a rule-based downgrade, and
scores both predictions and rationales.
"""

from .records import (
    DEFAULT_DICTIONARY,
    PDECategory,
    PREDICTOR_KEYS,
    Record,
    VariableDictionary,
    class_distribution,
    label_from_sum_pde,
    load_dataset,
    save_dataset,
)
from .divergence import (
    DivergenceConfig,
    DivergenceProfile,
    build_profile,
    composite_score,
    js_divergence,
    ks_statistic,
)
from .prompts import (
    PromptBundle,
    PromptKind,
    Trajectory,
    TrajectoryAudit,
    audit_kb_trajectory,
    build_kb_reasoning_prompt,
    build_prediction_prompt,
    build_text_mode_prompt,
    parse_prediction,
    parse_trajectory,
    validate_text_mode,
)
from .knowledge import (
    FreeShot,
    FreeShotLibrary,
    KBEntry,
    boundary_margins,
    build_libraries,
    select_hard_examples,
    select_prototypes,
    standardized_distance,
    weighted_zdistance,
)
from .retrieval import (
    InjectionPlan,
    NeighborContext,
    SpatialIndex,
    find_neighbors,
    haversine_km,
    plan_injection,
    resolve_free_shots,
)
from .gateway import (
    BackendConfig,
    MockBackend,
    Pricing,
    UsageLedger,
    cost_index,
    invoke,
    invoke_validated,
)
from .downgrade import (
    CueLexicon,
    DowngradeDecision,
    DowngradeThresholds,
    apply_downgrade,
    scan_cues,
)
from .metrics import (
    PredictionMetrics,
    ReasoningMetrics,
    classification_metrics,
    efficiency,
    severity_score,
)
from .config import RunConfig

__version__ = "0.1.0"
