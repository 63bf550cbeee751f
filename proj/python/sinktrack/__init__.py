"""Context anchoring through the BOS attention sink on a small reference decoder."""

from ._sinktrack import (
    AttentionTrace,
    CANONICAL_SEED,
    CacheError,
    CapacityError,
    ConfigError,
    DimensionError,
    Error,
    FormatError,
    InfoSource,
    InjectionPlan,
    InputError,
    IoError,
    Model,
    ModelConfig,
    PlanError,
    PlanValidationError,
    TraceError,
    ValidatedPlan,
    VocabError,
    bos_attention_by_layer,
    canonical_config,
    drift_report,
    drift_test,
    generate,
    load_model,
    make_toy_model,
    read_trace_jsonl,
    save_model,
    spearman_layers,
    synthetic_prompt,
    validate_plan,
    value_norm_report,
)

__all__ = [name for name in dir() if not name.startswith("_")]
