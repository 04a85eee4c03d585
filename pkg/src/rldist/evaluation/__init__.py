"""Policy evaluation: sample batch production, multi-agent collation, and
per-column batch compression."""

from ..sample_batch import MissingColumn, SampleBatch, SchemaMismatch
from .compression import (
    CODEC_LZ4,
    CompressedBatch,
    compress_batch,
    compress_block,
    decompress_batch,
    decompress_block,
    ensure_batch,
    maybe_compress,
)
from .evaluator import (
    EvaluatorConfig,
    MisalignedEpisodes,
    MultiAgentEvaluator,
    PolicyEvaluator,
    collate_multiagent,
)

__all__ = [
    "CODEC_LZ4",
    "CompressedBatch",
    "EvaluatorConfig",
    "MisalignedEpisodes",
    "MissingColumn",
    "MultiAgentEvaluator",
    "PolicyEvaluator",
    "SampleBatch",
    "SchemaMismatch",
    "collate_multiagent",
    "compress_batch",
    "compress_block",
    "decompress_batch",
    "decompress_block",
    "ensure_batch",
    "maybe_compress",
]
