"""Distribution-level diagnostics for per-token language-model losses.

Per-token cross-entropy dumps go in; what comes out is everything needed to
compare checkpoints beyond the mean: exact and sketched percentile
summaries, cross-summary concordance, standardized distribution shapes and
loss-band masses, summary-vs-metric correlation and selection, and a small
synthetic distillation lab that reproduces the mean/median divergence of
top-K-trained students end to end.
"""

from __future__ import annotations

from .concordance import ConcordanceReport, concordance, kendall_tau
from .correlate import (
    MetricSeries,
    SelectionRule,
    SelectionTable,
    SweepRow,
    crossing_step,
    default_rules,
    normalize_series,
    passk_ci,
    pearson,
    percentile_sweep,
    select,
    spearman,
)
from .distill import (
    DoseResponseRow,
    DoseResult,
    LabConfig,
    OracleResult,
    TabularLM,
    chain_fidelity,
    converged_oracle,
    converged_student,
    distill_loss,
    distill_student,
    dose_response,
    fit_teacher,
    kl,
    kl_grad_logits,
    log_softmax,
    next_token_accuracy,
    per_token_ce,
    softmax,
    synth_corpus,
    topk_renormalize,
    true_chain,
    zipf_weights,
)
from .errors import (
    BadMagicError,
    CountMismatchError,
    DegenerateInputError,
    DivergenceError,
    LossDiagError,
    ManifestError,
    StoreFormatError,
    TruncatedDumpError,
    UsageError,
    ValidationError,
)
from .quantiles import (
    DEFAULT_KS,
    EXACT_PATH_MAX,
    GroupedMeans,
    StreamingSummary,
    SummarySet,
    grouped_summary,
    summarize_chunks,
    summarize_exact,
)
from .shape import (
    DEFAULT_BAND_BOUNDS,
    PROFILE_GRID,
    BandTable,
    PercentileProfile,
    band_delta,
    band_masses,
    profile_distance,
    standardize_profile,
)
from .sketch import QuantileSketch, build_sketch
from .store import (
    CheckpointMeta,
    LossVector,
    Manifest,
    dump_manifest,
    iter_loss_chunks,
    load_manifest,
    peek_dump_count,
    read_loss_dump,
    read_metric_file,
    write_loss_dump,
    write_metric_file,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # store
    "LossVector", "write_loss_dump", "read_loss_dump", "iter_loss_chunks",
    "peek_dump_count", "CheckpointMeta", "Manifest", "load_manifest",
    "dump_manifest", "read_metric_file", "write_metric_file",
    # quantiles
    "DEFAULT_KS", "EXACT_PATH_MAX", "SummarySet", "summarize_exact",
    "summarize_chunks", "StreamingSummary", "GroupedMeans", "grouped_summary",
    # sketch
    "QuantileSketch", "build_sketch",
    # concordance
    "ConcordanceReport", "concordance", "kendall_tau",
    # shape
    "PROFILE_GRID", "DEFAULT_BAND_BOUNDS", "PercentileProfile",
    "standardize_profile", "profile_distance", "BandTable", "band_masses",
    "band_delta",
    # correlate
    "MetricSeries", "pearson", "spearman", "SweepRow", "percentile_sweep",
    "SelectionRule", "SelectionTable", "select", "default_rules",
    "normalize_series", "crossing_step", "passk_ci",
    # distill
    "TabularLM", "LabConfig", "DoseResponseRow", "DoseResult", "OracleResult",
    "synth_corpus", "true_chain", "zipf_weights", "fit_teacher", "softmax",
    "log_softmax", "topk_renormalize", "kl", "kl_grad_logits",
    "distill_student", "distill_loss", "converged_student", "converged_oracle",
    "per_token_ce", "next_token_accuracy", "chain_fidelity", "dose_response",
    # errors
    "LossDiagError", "UsageError", "ValidationError", "StoreFormatError",
    "BadMagicError", "TruncatedDumpError", "CountMismatchError",
    "ManifestError", "DegenerateInputError", "DivergenceError",
]
