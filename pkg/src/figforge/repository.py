"""The middleware repository: a three-level index theme -> concept -> drawing
templates, with usage statistics, semantic concept merging, and persistence.
"""

from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    BackendError,
    CorruptFileError,
    DuplicateIdError,
    ScoreRangeError,
    UnknownMiddlewareError,
    VersionMismatchError,
)
from .template import MiddlewareBody, ParamSpec
from .util import canonical_json

SCHEMA_VERSION = 1

PROVENANCE_KINDS = ("extracted", "mutated", "crossover")


@dataclass
class Provenance:
    kind: str  # extracted | mutated | crossover
    sources: list[str] = field(default_factory=list)  # paper id or parent middleware ids

    def validate(self) -> None:
        if self.kind not in PROVENANCE_KINDS:
            raise ValueError(f"unknown provenance kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sources": list(self.sources)}

    @staticmethod
    def from_dict(data: dict) -> "Provenance":
        p = Provenance(kind=data["kind"], sources=list(data.get("sources", [])))
        p.validate()
        return p


@dataclass
class Middleware:
    """A parameterized drawing template plus its lifetime usage statistics."""

    id: str
    name: str
    theme: str
    concept: str
    params: list[ParamSpec]
    body: MiddlewareBody
    usage_S: float = 0.0
    usage_N: int = 0
    provenance: Provenance = field(default_factory=lambda: Provenance("extracted"))

    def mes(self) -> float | None:
        """Mean quality over recorded usages; None while never used."""
        if self.usage_N == 0:
            return None
        return self.usage_S / self.usage_N

    def validate(self) -> None:
        if not self.id or not self.name:
            raise ValueError("middleware id and name are required")
        if self.usage_N < 0 or self.usage_S < 0:
            raise ValueError("usage statistics must be non-negative")
        if self.usage_N == 0 and self.usage_S != 0:
            raise ValueError("usage_S must be 0 while usage_N is 0")
        for p in self.params:
            p.validate()
        self.body.validate(self.params)
        self.provenance.validate()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "theme": self.theme,
            "concept": self.concept,
            "params": [p.to_dict() for p in self.params],
            "body": self.body.to_dict(),
            "usage_S": self.usage_S,
            "usage_N": self.usage_N,
            "provenance": self.provenance.to_dict(),
        }

    @staticmethod
    def from_dict(data: dict) -> "Middleware":
        mw = Middleware(
            id=data["id"],
            name=data["name"],
            theme=data["theme"],
            concept=data["concept"],
            params=[ParamSpec.from_dict(p) for p in data["params"]],
            body=MiddlewareBody.from_dict(data["body"]),
            usage_S=float(data.get("usage_S", 0.0)),
            usage_N=int(data.get("usage_N", 0)),
            provenance=Provenance.from_dict(data["provenance"]),
        )
        mw.validate()
        return mw


class MiddlewareRepository:
    """Index of drawing templates: theme -> concept -> ordered middleware ids.

    All mutations go through a single internal lock; reads are lock-free over
    immutable snapshots of the entry lists.
    """

    def __init__(self, provider=None):
        self.provider = provider  # EmbeddingProvider; not persisted
        self.entries: dict[str, dict[str, list[str]]] = {}
        self.store: dict[str, Middleware] = {}
        self.concept_embeddings: dict[str, list[float]] = {}
        self._lock = threading.Lock()

    # ------------------------------------------------------------- queries

    def themes(self) -> list[str]:
        return sorted(self.entries)

    def concepts(self, theme: str) -> list[str]:
        return sorted(self.entries.get(theme, {}))

    def middleware_ids(self, theme: str, concept: str) -> list[str]:
        return list(self.entries.get(theme, {}).get(concept, []))

    def get(self, middleware_id: str) -> Middleware:
        mw = self.store.get(middleware_id)
        if mw is None:
            raise UnknownMiddlewareError(f"no middleware with id {middleware_id!r}")
        return mw

    def __len__(self) -> int:
        return len(self.store)

    def is_empty(self) -> bool:
        return not self.store

    def has_source_paper(self, paper_id: str) -> bool:
        return any(
            mw.provenance.kind == "extracted" and paper_id in mw.provenance.sources
            for mw in self.store.values()
        )

    # ----------------------------------------------------------- mutation

    def _embed_concept(self, concept: str) -> None:
        if concept not in self.concept_embeddings:
            if self.provider is None:
                raise CorruptFileError(
                    f"no embedding provider configured; cannot embed concept {concept!r}"
                )
            self.concept_embeddings[concept] = list(self.provider.embed(concept))

    def add(self, middleware: Middleware) -> None:
        """Index a validated middleware under its (theme, concept)."""
        middleware.validate()
        with self._lock:
            if middleware.id in self.store:
                raise DuplicateIdError(f"middleware id {middleware.id!r} already present")
            self._embed_concept(middleware.concept)
            bucket = self.entries.setdefault(middleware.theme, {})
            bucket.setdefault(middleware.concept, []).append(middleware.id)
            self.store[middleware.id] = middleware

    def delete(self, middleware_id: str) -> None:
        """Remove a middleware; drops its entry (and theme) when emptied."""
        with self._lock:
            mw = self.get(middleware_id)
            ids = self.entries[mw.theme][mw.concept]
            ids.remove(middleware_id)
            if not ids:
                del self.entries[mw.theme][mw.concept]
                if not self.entries[mw.theme]:
                    del self.entries[mw.theme]
            del self.store[middleware_id]
            self._prune_embeddings()

    def _prune_embeddings(self) -> None:
        live = {c for theme in self.entries.values() for c in theme}
        for gone in set(self.concept_embeddings) - live:
            del self.concept_embeddings[gone]

    def record_usage(self, middleware_id: str, quality_score: float) -> None:
        if not (isinstance(quality_score, (int, float)) and 0.0 <= quality_score <= 1.0):
            raise ScoreRangeError(f"quality score {quality_score!r} outside [0, 1]")
        with self._lock:
            mw = self.get(middleware_id)
            mw.usage_S += float(quality_score)
            mw.usage_N += 1

    # -------------------------------------------------------------- merge

    def merge(self, similarity_threshold: float = 0.85, constructor_backend=None) -> list[str]:
        """Unify near-duplicate concepts within each theme; returns a log.

        When a backend is given, each merged entry is additionally screened
        for redundant middlewares. Backend failure aborts the whole merge and
        leaves the repository unchanged. Idempotent.
        """
        snapshot = self.to_dict()
        log: list[str] = []
        try:
            with self._lock:
                merged_entries = self._merge_concepts(similarity_threshold, log)
            for theme, concept in merged_entries:
                self._screen_entry(theme, concept, constructor_backend, log)
        except BackendError:
            self.restore(snapshot)
            raise
        return log

    def _merge_concepts(self, threshold: float, log: list[str]) -> list[tuple[str, str]]:
        from .retrieval import cosine_similarity

        merged: list[tuple[str, str]] = []
        for theme in sorted(self.entries):
            concepts = sorted(self.entries[theme])
            parent = {c: c for c in concepts}

            def find(c: str) -> str:
                while parent[c] != c:
                    parent[c] = parent[parent[c]]
                    c = parent[c]
                return c

            for i, a in enumerate(concepts):
                for b in concepts[i + 1 :]:
                    sim = cosine_similarity(self.concept_embeddings[a], self.concept_embeddings[b])
                    if sim >= threshold and find(a) != find(b):
                        parent[find(b)] = find(a)
            groups: dict[str, list[str]] = {}
            for c in concepts:
                groups.setdefault(find(c), []).append(c)
            for members in groups.values():
                if len(members) == 1:
                    continue
                # canonical name: most middlewares in this theme, ties lexicographic
                members.sort(key=lambda c: (-len(self.entries[theme][c]), c))
                canonical, rest = members[0], members[1:]
                for other in rest:
                    for mid in self.entries[theme][other]:
                        self.store[mid].concept = canonical
                    self.entries[theme][canonical].extend(self.entries[theme][other])
                    del self.entries[theme][other]
                    log.append(f"theme {theme}: concept {other!r} merged into {canonical!r}")
                merged.append((theme, canonical))
        self._prune_embeddings()
        return merged

    def _screen_entry(self, theme: str, concept: str, backend, log: list[str]) -> None:
        if backend is None:
            return
        ids = self.middleware_ids(theme, concept)
        if len(ids) < 2:
            return
        from .agents import screen_redundant_middlewares

        removable = screen_redundant_middlewares(self, theme, concept, backend)
        keep_at_least_one = [m for m in ids if m not in removable]
        if not keep_at_least_one:
            removable = removable[1:]  # never empty an entry
        for mid in removable:
            if mid in ids:
                self.delete(mid)
                log.append(f"entry ({theme}, {concept}): removed redundant middleware {mid}")

    # -------------------------------------------------------- persistence

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "themes": sorted(self.entries),
            "entries": {
                theme: {concept: list(ids) for concept, ids in sorted(bucket.items())}
                for theme, bucket in sorted(self.entries.items())
            },
            "middlewares": {mid: mw.to_dict() for mid, mw in sorted(self.store.items())},
            "embeddings": {c: list(v) for c, v in sorted(self.concept_embeddings.items())},
        }

    @classmethod
    def from_dict(cls, data: dict, provider=None) -> "MiddlewareRepository":
        if not isinstance(data, dict):
            raise CorruptFileError("repository document must be a JSON object")
        version = data.get("schema_version")
        if version != SCHEMA_VERSION:
            raise VersionMismatchError(
                f"repository schema version {version!r} unsupported (expected {SCHEMA_VERSION})"
            )
        repo = cls(provider=provider)
        try:
            for mid, raw in data["middlewares"].items():
                mw = Middleware.from_dict(raw)
                if mw.id != mid:
                    raise CorruptFileError(f"middleware key {mid!r} does not match id {mw.id!r}")
                repo.store[mid] = mw
            for theme, bucket in data["entries"].items():
                repo.entries[theme] = {c: list(ids) for c, ids in bucket.items()}
            for concept, vector in data["embeddings"].items():
                repo.concept_embeddings[concept] = [float(v) for v in vector]
        except (KeyError, TypeError, AttributeError, ValueError) as exc:
            raise CorruptFileError(f"malformed repository document: {exc}") from exc
        repo._check_integrity()
        return repo

    def _check_integrity(self) -> None:
        seen: dict[str, tuple[str, str]] = {}
        for theme, bucket in self.entries.items():
            for concept, ids in bucket.items():
                if not ids:
                    raise CorruptFileError(f"entry ({theme}, {concept}) has no middlewares")
                if concept not in self.concept_embeddings:
                    raise CorruptFileError(f"concept {concept!r} has no embedding")
                for mid in ids:
                    if mid not in self.store:
                        raise CorruptFileError(f"entry id {mid!r} missing from store")
                    if mid in seen:
                        raise CorruptFileError(f"middleware {mid!r} indexed twice")
                    seen[mid] = (theme, concept)
                    mw = self.store[mid]
                    if (mw.theme, mw.concept) != (theme, concept):
                        raise CorruptFileError(
                            f"middleware {mid!r} entry/(theme, concept) mismatch"
                        )
        orphans = set(self.store) - set(seen)
        if orphans:
            raise CorruptFileError(f"middlewares not reachable from entries: {sorted(orphans)}")

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )

    @classmethod
    def load(cls, path: str | Path, provider=None) -> "MiddlewareRepository":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise CorruptFileError(f"cannot read repository file: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CorruptFileError(f"repository file is not valid JSON: {exc}") from exc
        return cls.from_dict(data, provider=provider)

    # ------------------------------------------------- snapshots, equality

    def restore(self, snapshot: dict) -> None:
        """Replace all state from a to_dict snapshot (provider kept)."""
        fresh = MiddlewareRepository.from_dict(snapshot, provider=self.provider)
        with self._lock:
            self.entries = fresh.entries
            self.store = fresh.store
            self.concept_embeddings = fresh.concept_embeddings

    def canonically_equal(self, other: "MiddlewareRepository") -> bool:
        return canonical_json(self.to_dict()) == canonical_json(other.to_dict())

    # --------------------------------------------------------------- misc

    def mes_overview(self) -> list[tuple[str, str, str, float | None, int]]:
        """(theme, concept, middleware id, mes, usage count) rows, sorted."""
        rows = []
        for theme in sorted(self.entries):
            for concept in sorted(self.entries[theme]):
                for mid in self.entries[theme][concept]:
                    mw = self.store[mid]
                    rows.append((theme, concept, mid, mw.mes(), mw.usage_N))
        return rows


def unit_norm_ok(vector: list[float], tolerance: float = 1e-6) -> bool:
    return abs(math.sqrt(sum(v * v for v in vector)) - 1.0) <= tolerance


def middleware_from_proposal(
    proposal: dict,
    middleware_id: str,
    theme: str,
    concept: str,
    provenance: Provenance,
) -> Middleware:
    """Build and validate a Middleware from a constructor proposal dict."""
    if not isinstance(proposal, dict):
        raise ValueError("proposal must be an object")
    mw = Middleware(
        id=middleware_id,
        name=str(proposal.get("name") or middleware_id),
        theme=theme,
        concept=concept,
        params=[ParamSpec.from_dict(p) for p in proposal.get("params", [])],
        body=MiddlewareBody.from_dict(proposal.get("body", {})),
        provenance=provenance,
    )
    mw.validate()
    return mw


@dataclass
class CreationReport:
    middlewares: list[Middleware]
    problems: list[str]


def create_from_pair(paper_text, mi_canvas, theme, concepts, constructor_backend, paper_id="pair"):
    """Extract drawing templates from one paper/figure pair, one concept at a
    time. Invalid proposals are dropped and described in the report."""
    from .agents import constructor_extract

    middlewares: list[Middleware] = []
    problems: list[str] = []
    used_ids: set[str] = set()
    for concept in concepts:
        try:
            proposals = constructor_extract(
                paper_id, paper_text, mi_canvas, theme, concept, constructor_backend
            )
        except BackendError as exc:
            problems.append(f"concept {concept.id}: extraction failed: {exc}")
            continue
        for k, proposal in enumerate(proposals):
            mid = f"mw_{paper_id}_{concept.id}_{k}"
            n = 2
            while mid in used_ids:
                mid = f"mw_{paper_id}_{concept.id}_{k}_{n}"
                n += 1
            try:
                mw = middleware_from_proposal(
                    proposal, mid, theme, concept.id, Provenance("extracted", [paper_id])
                )
            except Exception as exc:
                problems.append(f"concept {concept.id}: proposal {k} rejected: {exc}")
                continue
            used_ids.add(mid)
            middlewares.append(mw)
    return CreationReport(middlewares=middlewares, problems=problems)
