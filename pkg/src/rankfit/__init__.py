"""rankfit: listwise re-ranking toolkit for person-job fit.

Builds 4-candidate training windows from labeled retrieval pools, re-ranks
top-N pools with a multi-pass sliding window through a pluggable ranker,
scores runs with nDCG/Recall, filters training data by empirical difficulty,
extracts teacher-distillation records, and verifies the group-relative RL
objective with a small Plackett-Luce policy simulator.
"""

__version__ = "0.1.0"

from .core import Document, Label, RankedPool, load_corpus, load_labels, load_pools
from .engine import EngineConfig, evaluate_run, rerank_pool
from .errors import RankfitError
from .metrics import dcg, group_advantages, ndcg, rearank_reward, recall_at_k
from .ranker import IdentityRanker, LlmRanker, NoisyOracleRanker, OracleRanker, parse_answer
from .windows import PipelineConfig, Window, build_all_windows

__all__ = [
    "__version__",
    "Document",
    "Label",
    "RankedPool",
    "load_corpus",
    "load_labels",
    "load_pools",
    "EngineConfig",
    "evaluate_run",
    "rerank_pool",
    "RankfitError",
    "dcg",
    "ndcg",
    "recall_at_k",
    "rearank_reward",
    "group_advantages",
    "IdentityRanker",
    "OracleRanker",
    "NoisyOracleRanker",
    "LlmRanker",
    "parse_answer",
    "PipelineConfig",
    "Window",
    "build_all_windows",
]
