"""Phase two: generalize descriptions, cluster tips, consolidate clusters."""

from tmem.curation.clustering import agglomerate, check_threshold, cluster_embeddings, quantize, quantized_similarities
from tmem.curation.consolidate import (
    DEFAULT_THRESHOLD,
    ConsolidationReport,
    ConsolidationResult,
    cluster_tips,
    consolidate_cluster,
    precedence_key,
    run_consolidation,
)
from tmem.curation.generalize import EntityLexicon, generalize_description, repair, violations

__all__ = [
    "DEFAULT_THRESHOLD",
    "ConsolidationReport",
    "ConsolidationResult",
    "EntityLexicon",
    "agglomerate",
    "check_threshold",
    "cluster_embeddings",
    "cluster_tips",
    "consolidate_cluster",
    "generalize_description",
    "precedence_key",
    "quantize",
    "quantized_similarities",
    "repair",
    "run_consolidation",
    "violations",
]
