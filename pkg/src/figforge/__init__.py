"""figforge: evolving middleware repositories for method-figure drawing."""

from .agents import (
    Concept,
    ConceptGraph,
    DrawingChoice,
    EvaluationResult,
    apply_choice,
    draw_concept,
    evaluate_canvas,
    evaluate_concept_rendering,
    parse_paper,
    refine,
)
from .backends import RecordingBackend, RemoteBackend, ScriptedBackend, request_key
from .embeddings import HashedTrigramEmbedder, RemoteEmbedder
from .errors import FigforgeError
from .evolution import (
    EvolutionConfig,
    IterationRecord,
    ObjectiveResult,
    evaluate_objective,
    evolve,
    incorporate_new_pairs,
    op_crossover,
    op_mutation,
    op_selection,
)
from .pipeline import (
    ExperiencePair,
    ExperienceStore,
    build_repository,
    generate,
    ingest,
)
from .repository import (
    Middleware,
    MiddlewareRepository,
    Provenance,
    create_from_pair,
    middleware_from_proposal,
)
from .retrieval import (
    CandidateSet,
    filter_candidates,
    resolve_theme,
    retrieve_candidates,
)
from .rulebased import RuleBasedBackend
from .scene import (
    Canvas,
    Connector,
    SceneElement,
    StyleSpec,
    canvases_equal,
    read_mxgraph_xml,
)
from .search import DrawingNode, DrawingTree, SearchParams, run, uct_value
from .template import MiddlewareBody, ParamSpec, expand_body

__version__ = "0.1.0"

__all__ = [
    "Canvas",
    "CandidateSet",
    "Concept",
    "ConceptGraph",
    "Connector",
    "DrawingChoice",
    "DrawingNode",
    "DrawingTree",
    "EvaluationResult",
    "EvolutionConfig",
    "ExperiencePair",
    "ExperienceStore",
    "FigforgeError",
    "HashedTrigramEmbedder",
    "IterationRecord",
    "Middleware",
    "MiddlewareBody",
    "MiddlewareRepository",
    "ObjectiveResult",
    "ParamSpec",
    "Provenance",
    "RecordingBackend",
    "RemoteBackend",
    "RemoteEmbedder",
    "RuleBasedBackend",
    "SceneElement",
    "ScriptedBackend",
    "SearchParams",
    "StyleSpec",
    "apply_choice",
    "build_repository",
    "canvases_equal",
    "create_from_pair",
    "draw_concept",
    "evaluate_canvas",
    "evaluate_concept_rendering",
    "evaluate_objective",
    "evolve",
    "expand_body",
    "filter_candidates",
    "generate",
    "incorporate_new_pairs",
    "ingest",
    "middleware_from_proposal",
    "op_crossover",
    "op_mutation",
    "op_selection",
    "parse_paper",
    "read_mxgraph_xml",
    "refine",
    "request_key",
    "resolve_theme",
    "retrieve_candidates",
    "run",
    "uct_value",
]
