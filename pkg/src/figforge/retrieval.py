"""Candidate retrieval: cosine top-K over concept embeddings within a theme,
plus backend-assisted pruning of the retrieved set.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from . import prompts
from .errors import BackendError, DimensionMismatchError, UnknownThemeError
from .util import extract_json

log = logging.getLogger(__name__)


def cosine_similarity(u: list[float], v: list[float]) -> float:
    if len(u) != len(v):
        raise DimensionMismatchError(f"vector dimensions differ: {len(u)} vs {len(v)}")
    return sum(a * b for a, b in zip(u, v))


@dataclass
class CandidateMember:
    middleware_id: str
    source_concept: str
    similarity: float


@dataclass
class CandidateSet:
    concept: str  # target concept text/id the query was made for
    theme: str
    members: list[CandidateMember] = field(default_factory=list)

    def ids(self) -> list[str]:
        return [m.middleware_id for m in self.members]


def retrieve_candidates(repository, theme: str, concept_text: str, k: int, provider=None) -> CandidateSet:
    """Middlewares of the K concepts most similar to ``concept_text`` under
    ``theme``; deterministic order (similarity desc, concept id, middleware id).
    """
    if theme not in repository.entries:
        raise UnknownThemeError(f"theme {theme!r} not in repository")
    if k < 1:
        raise ValueError("k must be >= 1")
    provider = provider or repository.provider
    if provider is None:
        raise UnknownThemeError("no embedding provider available for retrieval")
    target = provider.embed(concept_text)
    scored = sorted(
        (
            (-cosine_similarity(target, repository.concept_embeddings[c]), c)
            for c in repository.entries[theme]
        ),
    )
    members = [
        CandidateMember(middleware_id=mid, source_concept=concept, similarity=-neg_sim)
        for neg_sim, concept in scored[:k]
        for mid in sorted(repository.entries[theme][concept])
    ]
    return CandidateSet(concept=concept_text, theme=theme, members=members)


def filter_candidates(candidate_set: CandidateSet, concept_text: str, theme: str, backend) -> CandidateSet:
    """Backend-pruned subset of the candidates; never empty, never additive.

    Backend failure (including unparseable output) degrades to the unfiltered
    set with a logged warning.
    """
    if not candidate_set.members:
        raise ValueError("candidate set must be non-empty")
    lines = [
        f"target concept: {concept_text}",
        f"theme: {theme}",
        "candidates:",
    ]
    for m in candidate_set.members:
        lines.append(
            f"- id={m.middleware_id} source_concept={m.source_concept} "
            f"similarity={m.similarity:.4f}"
        )
    try:
        response = backend.complete("retrieval_filter", prompts.FILTER_SYSTEM, "\n".join(lines))
        keep = extract_json(response)["keep"]
        if not isinstance(keep, list):
            raise ValueError("'keep' must be a list")
        keep_ids = {str(x) for x in keep}
    except (BackendError, ValueError, KeyError, TypeError) as exc:
        log.warning("candidate filtering degraded to unfiltered set: %s", exc)
        return CandidateSet(candidate_set.concept, candidate_set.theme, list(candidate_set.members))
    members = [m for m in candidate_set.members if m.middleware_id in keep_ids]
    if not members:
        members = [candidate_set.members[0]]  # backend pruned everything
    return CandidateSet(candidate_set.concept, candidate_set.theme, members)


def resolve_theme(repository, theme_text: str, provider=None) -> str:
    """Exact theme match, else the nearest stored theme by name embedding."""
    if theme_text in repository.entries:
        return theme_text
    themes = repository.themes()
    if not themes:
        raise UnknownThemeError("repository has no themes")
    provider = provider or repository.provider
    if provider is None:
        raise UnknownThemeError(f"theme {theme_text!r} unknown and no provider for fallback")
    target = provider.embed(theme_text)
    best = min((-cosine_similarity(target, provider.embed(t)), t) for t in themes)
    resolved = best[1]
    if resolved != theme_text:
        log.info("theme %r resolved to nearest stored theme %r", theme_text, resolved)
    return resolved


def unit_vector_check(vector: list[float], tolerance: float = 1e-6) -> None:
    norm = math.sqrt(sum(v * v for v in vector))
    if abs(norm - 1.0) > tolerance:
        raise DimensionMismatchError(f"vector norm {norm} is not unit within {tolerance}")
