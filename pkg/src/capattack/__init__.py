"""Decision-based black-box targeted attacks on image-to-text models.

Given only an oracle that maps images to captions, the pipeline finds a
minimally perturbed image whose caption matches an attacker-chosen target
text, using differential evolution in three stages: harvest a dictionary
of reachable content words, obtain an attention heatmap that shrinks the
search space, then minimize the embedding distance between the oracle's
caption and the target text under a mean-perturbation budget.
"""

from .ask import TargetDictionary, extract_content_words, run_ask
from .attack import AttackResult, run_attack, write_bundle
from .attend import choose_category, fetch_heatmap, load_categories
from .engine import (
    DEConfig,
    Individual,
    RunAborted,
    RunTrace,
    crossover_binomial,
    init_masked,
    init_uniform,
    mutate_current_to_best,
    mutate_rand1,
    run,
    select,
)
from .image import (
    HeatmapFormatError,
    ImageFormatError,
    PerturbationStats,
    load_heatmap,
    load_image,
    perturbation_stats,
    project_to_budget,
    resample_heatmap,
    save_heatmap,
    save_image,
)
from .metrics import (
    Alignment,
    MetricsReport,
    SemParams,
    SynonymLexicon,
    align,
    bleu4,
    eval_report,
    s_clip,
    s_sem,
    tokenize,
)
from .oracle import (
    BridgeClient,
    EmbeddingDimensionError,
    HashingTextEmbedder,
    OracleConnectionError,
    OracleError,
    OracleProtocolError,
    OracleSchemaError,
    OracleStats,
    QuadrantCaptioner,
    margin_image,
    quadrant_heatmap,
    toy_lexicon,
)

__version__ = "0.1.0"

__all__ = [
    "AttackResult",
    "Alignment",
    "BridgeClient",
    "DEConfig",
    "EmbeddingDimensionError",
    "HashingTextEmbedder",
    "HeatmapFormatError",
    "ImageFormatError",
    "Individual",
    "MetricsReport",
    "OracleConnectionError",
    "OracleError",
    "OracleProtocolError",
    "OracleSchemaError",
    "OracleStats",
    "PerturbationStats",
    "QuadrantCaptioner",
    "RunAborted",
    "RunTrace",
    "SemParams",
    "SynonymLexicon",
    "TargetDictionary",
    "align",
    "bleu4",
    "choose_category",
    "crossover_binomial",
    "eval_report",
    "extract_content_words",
    "fetch_heatmap",
    "init_masked",
    "init_uniform",
    "load_categories",
    "load_heatmap",
    "load_image",
    "margin_image",
    "mutate_current_to_best",
    "mutate_rand1",
    "perturbation_stats",
    "project_to_budget",
    "quadrant_heatmap",
    "resample_heatmap",
    "run",
    "run_ask",
    "run_attack",
    "s_clip",
    "s_sem",
    "save_heatmap",
    "save_image",
    "select",
    "toy_lexicon",
    "tokenize",
    "write_bundle",
]
