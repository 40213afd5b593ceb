"""proofkit: tools for hierarchical theorem-proof corpora.

Parsing and rendering of the tagged record format, LLM annotation
pipelines, curriculum emission, verifier-based rewards with
group-relative advantages, judge harnesses, entropy diagnostics, and a
human audit workflow with an HTTP service in front of it.
"""

__version__ = "0.1.0"

from .hierarchy import (
    HierarchicalRecord,
    InsightBlock,
    StageView,
    TechniqueAnnotation,
    TechniqueCategory,
    TheoremRecord,
    parse_hierarchical,
    render_hierarchical,
)

__all__ = [
    "HierarchicalRecord",
    "InsightBlock",
    "StageView",
    "TechniqueAnnotation",
    "TechniqueCategory",
    "TheoremRecord",
    "parse_hierarchical",
    "render_hierarchical",
    "__version__",
]
