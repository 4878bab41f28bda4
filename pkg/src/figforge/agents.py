"""The five drawing-agent roles over a pluggable chat backend: paper parsing,
concept drawing, canvas evaluation, refinement, and template construction.

Every role builds a text request, sends it with the canvas attached where
vision matters, and schema-validates the JSON reply before anything touches
the scene graph or the repository.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field

from . import prompts
from .errors import (
    BackendError,
    InvalidInvocationError,
    NoElementsForConceptError,
    SchemaInvalidError,
    TemplateError,
)
from .scene import Canvas, Connector, absolute_origin, bounds, to_mxgraph_xml, to_svg
from .template import (
    MiddlewareBody,
    ShapeInstruction,
    _instruction_from_dict,
    expand_body,
    resolve_bindings,
)
from .util import canonical_json, extract_json

log = logging.getLogger(__name__)

PARSE_RETRIES = 2
DRAW_RETRIES = 1


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------

@dataclass
class Concept:
    id: str
    name: str
    description: str = ""
    order_hint: int = 0


@dataclass
class ConceptGraph:
    theme: str
    concepts: list[Concept]
    edges: list[tuple[str, str, str]] = field(default_factory=list)

    def validate(self) -> None:
        if not self.theme.strip():
            raise SchemaInvalidError("theme is empty")
        if not self.concepts:
            raise SchemaInvalidError("concept graph needs at least one concept")
        ids = [c.id for c in self.concepts]
        if len(set(ids)) != len(ids):
            raise SchemaInvalidError("concept ids are not unique")
        known = set(ids)
        for src, dst, _label in self.edges:
            if src not in known or dst not in known:
                raise SchemaInvalidError(f"edge endpoint {src!r}->{dst!r} not a concept id")

    def concept(self, concept_id: str) -> Concept:
        for c in self.concepts:
            if c.id == concept_id:
                return c
        raise KeyError(concept_id)

    def topological_order(self) -> list[Concept]:
        """Dependency-respecting rendering order; ties by order_hint then id."""
        incoming: dict[str, set[str]] = {c.id: set() for c in self.concepts}
        for src, dst, _ in self.edges:
            if src != dst:
                incoming[dst].add(src)
        by_id = {c.id: c for c in self.concepts}
        ordered: list[Concept] = []
        remaining = set(incoming)
        while remaining:
            ready = [c for c in remaining if not (incoming[c] & remaining)]
            if not ready:  # cycle: fall back to hint order for the rest
                ready = list(remaining)
            ready.sort(key=lambda cid: (by_id[cid].order_hint, cid))
            ordered.append(by_id[ready[0]])
            remaining.discard(ready[0])
        return ordered


@dataclass
class EvaluationResult:
    score: float  # always within [0, 1] after clamping
    feedback: str = ""


@dataclass
class HistoryRecord:
    concept_id: str
    middleware_ids: list[str]
    bindings_summary: str
    score: float
    feedback: str


@dataclass
class DrawingHistory:
    records: list[HistoryRecord] = field(default_factory=list)

    def append(self, record: HistoryRecord) -> None:
        self.records.append(record)

    def render(self, limit: int = 8) -> str:
        if not self.records:
            return "(none)"
        lines = []
        for r in self.records[-limit:]:
            lines.append(
                f"- concept={r.concept_id} middlewares={','.join(r.middleware_ids) or '-'} "
                f"score={r.score:.3f} note={r.feedback[:80]}"
            )
        return "\n".join(lines)


@dataclass
class MiddlewareInvocation:
    middleware_id: str
    bindings: dict


@dataclass
class DrawingChoice:
    """One Drawer answer: how to render the next concept."""

    concept_id: str
    invocations: list[MiddlewareInvocation]
    extra: list[ShapeInstruction] = field(default_factory=list)
    note: str = ""

    def middleware_ids(self) -> list[str]:
        return [inv.middleware_id for inv in self.invocations]


# --------------------------------------------------------------------------
# shared request plumbing
# --------------------------------------------------------------------------

def _slug(text: str) -> str:
    s = re.sub(r"[^a-z0-9]+", "_", text.strip().lower()).strip("_")
    return s or "item"


def canvas_attachments(canvas: Canvas) -> dict[str, str]:
    return {"canvas_xml": to_mxgraph_xml(canvas), "canvas_svg": to_svg(canvas)}


def _canvas_summary(canvas: Canvas) -> str:
    if not canvas.elements:
        return "empty"
    x0, y0, x1, y1 = bounds(canvas)
    return f"{len(canvas.elements)} elements, bounds=({x0:.0f},{y0:.0f},{x1:.0f},{y1:.0f})"


def concept_regions(canvas: Canvas) -> dict[str, tuple[float, float, float, float]]:
    """Absolute bounding box of every concept's tagged elements."""
    regions: dict[str, list[float]] = {}
    for e in canvas.elements:
        if e.concept_tag is None:
            continue
        x, y = absolute_origin(canvas, e)
        box = regions.setdefault(e.concept_tag, [x, y, x + e.width, y + e.height])
        box[0] = min(box[0], x)
        box[1] = min(box[1], y)
        box[2] = max(box[2], x + e.width)
        box[3] = max(box[3], y + e.height)
    return {k: tuple(v) for k, v in regions.items()}


def _representative_element(canvas: Canvas, concept_id: str):
    """Largest tagged element stands in for the concept when wiring arrows."""
    tagged = [e for e in canvas.elements if e.concept_tag == concept_id]
    if not tagged:
        return None
    return max(tagged, key=lambda e: (e.width * e.height, e.id))


# --------------------------------------------------------------------------
# Parser role
# --------------------------------------------------------------------------

def parse_paper(paper_text: str, backend) -> ConceptGraph:
    """Extract theme, concepts, and relations from paper text."""
    if not paper_text or not paper_text.strip():
        raise ValueError("paper text is empty")
    content = f"paper text:\n<<<\n{paper_text}\n>>>"
    last_error = "no attempt made"
    for _attempt in range(PARSE_RETRIES + 1):
        response = backend.complete("parser", prompts.PARSER_SYSTEM, content)
        try:
            return _graph_from_response(response)
        except (SchemaInvalidError, ValueError, KeyError, TypeError) as exc:
            last_error = str(exc)
            content += f"\n\nYour previous answer was invalid: {last_error}. Answer again."
    raise SchemaInvalidError(f"parser output invalid after retries: {last_error}")


def _graph_from_response(response: str) -> ConceptGraph:
    data = extract_json(response)
    concepts = []
    for i, c in enumerate(data["concepts"]):
        concepts.append(
            Concept(
                id=_slug(str(c["id"])),
                name=str(c.get("name", c["id"])),
                description=str(c.get("description", "")),
                order_hint=int(c.get("order", i)),
            )
        )
    edges = [
        (_slug(str(e["source"])), _slug(str(e["target"])), str(e.get("label", "")))
        for e in data.get("edges", [])
    ]
    graph = ConceptGraph(theme=str(data["theme"]).strip(), concepts=concepts, edges=edges)
    graph.validate()
    return graph


# --------------------------------------------------------------------------
# Drawer role
# --------------------------------------------------------------------------

def draw_concept(
    theme: str,
    concept: Concept,
    partial_canvas: Canvas,
    candidates,
    history: DrawingHistory,
    backend,
    repository,
    variant: int = 0,
    feedback: str = "",
) -> DrawingChoice:
    """Ask the Drawer for one way to render ``concept`` on the canvas."""
    if not candidates.members:
        raise ValueError("filtered candidate set is empty")
    candidate_blobs = []
    for m in candidates.members:
        mw = repository.get(m.middleware_id)
        candidate_blobs.append(
            {
                "id": mw.id,
                "name": mw.name,
                "source_concept": m.source_concept,
                "params": [p.to_dict() for p in mw.params],
            }
        )
    regions = concept_regions(partial_canvas)
    region_lines = "\n".join(
        f"- concept={cid} x={x0:.0f} y={y0:.0f} w={x1 - x0:.0f} h={y1 - y0:.0f}"
        for cid, (x0, y0, x1, y1) in sorted(regions.items())
    ) or "(none)"
    content = (
        f"theme: {theme}\n"
        f"concept: {concept.id} | {concept.name} | {concept.description}\n"
        f"concepts_done: {len(regions)}\n"
        f"variant: {variant}\n"
        f"canvas: {_canvas_summary(partial_canvas)}\n"
        f"occupied regions:\n{region_lines}\n"
        f"candidates: {canonical_json(candidate_blobs)}\n"
        f"history:\n{history.render()}\n"
        f"feedback: {feedback or '-'}"
    )
    attachments = canvas_attachments(partial_canvas)
    allowed = set(candidates.ids())
    last_error = "no attempt made"
    for _attempt in range(DRAW_RETRIES + 1):
        response = backend.complete("drawer", prompts.DRAWER_SYSTEM, content, attachments)
        try:
            return _choice_from_response(response, concept.id, allowed, repository)
        except (InvalidInvocationError, TemplateError, ValueError, KeyError, TypeError) as exc:
            last_error = str(exc)
            content += f"\n\nYour previous answer was invalid: {last_error}. Answer again."
    raise InvalidInvocationError(f"drawer output invalid after retry: {last_error}")


def _choice_from_response(response: str, concept_id: str, allowed: set[str], repository) -> DrawingChoice:
    data = extract_json(response)
    raw_invocations = data.get("invocations", [])
    if not isinstance(raw_invocations, list):
        raise InvalidInvocationError("'invocations' must be a list")
    invocations = []
    for inv in raw_invocations:
        mid = str(inv["middleware"])
        if mid not in allowed:
            raise InvalidInvocationError(f"middleware {mid!r} is not among the candidates")
        bindings = inv.get("bindings", {})
        if not isinstance(bindings, dict):
            raise InvalidInvocationError(f"bindings for {mid!r} must be an object")
        mw = repository.get(mid)
        resolve_bindings(mw.params, bindings)  # raises on unknown names / bad values
        invocations.append(MiddlewareInvocation(middleware_id=mid, bindings=dict(bindings)))
    extra_raw = data.get("extra_elements", []) or []
    extra = []
    for i, item in enumerate(extra_raw):
        ins = _instruction_from_dict(dict(item), i)
        if not isinstance(ins, ShapeInstruction):
            raise InvalidInvocationError("extra_elements may only contain shapes")
        extra.append(ins)
    if extra:
        MiddlewareBody(extra).validate([])  # literal-only: no params in scope
    if not invocations and not extra:
        raise InvalidInvocationError("choice renders nothing (no invocations, no elements)")
    return DrawingChoice(
        concept_id=concept_id,
        invocations=invocations,
        extra=extra,
        note=str(data.get("note", "")),
    )


def apply_choice(canvas: Canvas, choice: DrawingChoice, repository, id_prefix: str) -> Canvas:
    """New canvas with the choice's fragments appended and concept-tagged."""
    out = canvas.clone()
    base_z = max((e.z_order for e in out.elements), default=-1) + 1
    for j, inv in enumerate(choice.invocations):
        mw = repository.get(inv.middleware_id)
        fragment = expand_body(mw.body, mw.params, inv.bindings, f"{id_prefix}m{j}")
        _append_fragment(out, fragment, choice.concept_id, base_z)
        base_z += len(fragment.elements)
    if choice.extra:
        fragment = expand_body(MiddlewareBody(list(choice.extra)), [], {}, f"{id_prefix}x")
        _append_fragment(out, fragment, choice.concept_id, base_z)
    return out


def _append_fragment(canvas: Canvas, fragment, concept_id: str, base_z: int) -> None:
    for e in fragment.elements:
        e.concept_tag = concept_id
        e.z_order = base_z + e.z_order
        canvas.add_element(e)
    for c in fragment.connectors:
        canvas.add_connector(c)


# --------------------------------------------------------------------------
# Evaluator role
# --------------------------------------------------------------------------

def _clamped_score(data: dict) -> EvaluationResult:
    score = float(data["score"])
    if not (0.0 <= score <= 1.0):
        clamped = min(1.0, max(0.0, score))
        log.warning("evaluator score %s clamped to %s", score, clamped)
        score = clamped
    return EvaluationResult(score=score, feedback=str(data.get("feedback", "")))


def evaluate_canvas(canvas: Canvas, concept_graph: ConceptGraph | None, backend) -> EvaluationResult:
    """Whole-canvas quality in [0, 1]. Empty canvases score 0 by convention."""
    if not canvas.elements:
        return EvaluationResult(score=0.0, feedback="canvas is empty")
    if concept_graph is None:
        concept_line = "concepts: - (total 0)"
        rendered_line = "rendered: - (0)"
        edges_line = "edges: -"
        theme = "-"
    else:
        ids = [c.id for c in concept_graph.concepts]
        rendered = sorted({e.concept_tag for e in canvas.elements if e.concept_tag in set(ids)})
        concept_line = f"concepts: {', '.join(ids)} (total {len(ids)})"
        rendered_line = f"rendered: {', '.join(rendered) or '-'} ({len(rendered)})"
        edges_line = "edges: " + (
            ", ".join(f"{s}->{t}" for s, t, _ in concept_graph.edges) or "-"
        )
        theme = concept_graph.theme
    content = (
        f"theme: {theme}\n{concept_line}\n{rendered_line}\n{edges_line}\n"
        f"canvas elements: {len(canvas.elements)}\n"
        f"canvas: {_canvas_summary(canvas)}"
    )
    response = backend.complete(
        "evaluator", prompts.EVALUATOR_SYSTEM, content, canvas_attachments(canvas)
    )
    try:
        return _clamped_score(extract_json(response))
    except (ValueError, KeyError, TypeError) as exc:
        raise BackendError(f"evaluator returned unusable output: {exc}") from exc


def evaluate_concept_rendering(canvas: Canvas, concept_id: str, backend) -> EvaluationResult:
    """Quality of one concept's tagged region; feeds middleware usage stats."""
    tagged = [e for e in canvas.elements if e.concept_tag == concept_id]
    if not tagged:
        raise NoElementsForConceptError(f"no elements tagged with concept {concept_id!r}")
    content = f"concept: {concept_id}\ntagged elements: {len(tagged)}"
    response = backend.complete(
        "concept_evaluator", prompts.CONCEPT_EVALUATOR_SYSTEM, content, canvas_attachments(canvas)
    )
    try:
        return _clamped_score(extract_json(response))
    except (ValueError, KeyError, TypeError) as exc:
        raise BackendError(f"concept evaluator returned unusable output: {exc}") from exc


# --------------------------------------------------------------------------
# Refiner role
# --------------------------------------------------------------------------

def missing_edge_connectors(canvas: Canvas, graph: ConceptGraph) -> list[tuple[str, str, str]]:
    """Graph edges with no connector between the two concepts' elements."""
    tag_of = {e.id: e.concept_tag for e in canvas.elements}
    covered = set()
    for c in canvas.connectors:
        if isinstance(c.source, str) and isinstance(c.target, str):
            pair = (tag_of.get(c.source), tag_of.get(c.target))
            if pair[0] and pair[1]:
                covered.add(pair)
    return [(s, t, label) for s, t, label in graph.edges if (s, t) not in covered]


def refine(canvas: Canvas, concept_graph: ConceptGraph, backend) -> Canvas:
    """Alignment pass plus connectors for uncovered concept relations.

    Best-effort: on backend failure the input canvas object is returned
    unchanged (callers can detect degradation by identity).
    """
    missing = missing_edge_connectors(canvas, concept_graph)
    element_lines = "\n".join(
        f"- id={e.id} concept={e.concept_tag or '-'} x={absolute_origin(canvas, e)[0]:.0f} "
        f"y={absolute_origin(canvas, e)[1]:.0f} w={e.width:.0f} h={e.height:.0f}"
        for e in canvas.elements
    ) or "(none)"
    content = (
        f"theme: {concept_graph.theme}\n"
        "edges without connectors:\n"
        + ("\n".join(f"- {s} -> {t} | {label}" for s, t, label in missing) or "(none)")
        + f"\nelement index:\n{element_lines}"
    )
    try:
        response = backend.complete(
            "refiner", prompts.REFINER_SYSTEM, content, canvas_attachments(canvas)
        )
        moves = extract_json(response).get("moves", [])
        if not isinstance(moves, list):
            raise ValueError("'moves' must be a list")
    except (BackendError, ValueError, KeyError, TypeError) as exc:
        log.warning("refinement skipped (backend failure): %s", exc)
        return canvas
    out = canvas.clone()
    ids = {e.id for e in out.elements}
    for move in moves[:64]:
        try:
            eid = str(move["element"])
            dx, dy = float(move["dx"]), float(move["dy"])
        except (KeyError, TypeError, ValueError):
            continue
        if eid not in ids or abs(dx) > 2000 or abs(dy) > 2000:
            continue
        e = out.element(eid)
        if e.parent_group is None:  # children follow their group automatically
            e.x += dx
            e.y += dy
    for s, t, label in missing_edge_connectors(out, concept_graph):
        src = _representative_element(out, s)
        dst = _representative_element(out, t)
        if src is None or dst is None:
            continue
        cid = f"rel_{s}_{t}"
        n = 2
        while cid in out.ids():
            cid = f"rel_{s}_{t}_{n}"
            n += 1
        out.add_connector(
            Connector(id=cid, source=src.id, target=dst.id, label=label or None, arrow_head="filled")
        )
    out.validate()
    return out


# --------------------------------------------------------------------------
# Constructor role
# --------------------------------------------------------------------------

def constructor_extract(paper_id: str, paper_text: str, mi_canvas: Canvas, theme: str, concept: Concept, backend) -> list[dict]:
    """Raw template proposals for one concept; validation happens at callers."""
    content = (
        f"paper: {paper_id}\n"
        f"theme: {theme}\n"
        f"concept: {concept.id} | {concept.name} | {concept.description}\n"
        f"paper excerpt:\n<<<\n{paper_text[:800]}\n>>>"
    )
    response = backend.complete(
        "constructor_extract", prompts.CONSTRUCTOR_EXTRACT_SYSTEM, content,
        canvas_attachments(mi_canvas),
    )
    try:
        proposals = extract_json(response)["proposals"]
        if not isinstance(proposals, list):
            raise ValueError("'proposals' must be a list")
        return [dict(p) for p in proposals]
    except (ValueError, KeyError, TypeError) as exc:
        raise BackendError(f"constructor extract returned unusable output: {exc}") from exc


def _proposal_from(response: str) -> dict | None:
    data = extract_json(response)
    proposal = data.get("proposal")
    if proposal is None:
        return None
    if not isinstance(proposal, dict):
        raise ValueError("'proposal' must be an object or null")
    return proposal


def constructor_mutate(middleware, backend) -> dict | None:
    """One mutated-variant proposal (or None when the backend declines)."""
    content = f"middleware: {canonical_json(middleware.to_dict())}"
    response = backend.complete("constructor_mutate", prompts.CONSTRUCTOR_MUTATE_SYSTEM, content)
    try:
        return _proposal_from(response)
    except (ValueError, KeyError, TypeError) as exc:
        raise BackendError(f"constructor mutate returned unusable output: {exc}") from exc


def constructor_crossover(parent_a, parent_b, backend) -> dict | None:
    """One offspring proposal combining two parents (or None)."""
    content = (
        f"parent_a: {canonical_json(parent_a.to_dict())}\n"
        f"parent_b: {canonical_json(parent_b.to_dict())}"
    )
    response = backend.complete(
        "constructor_crossover", prompts.CONSTRUCTOR_CROSSOVER_SYSTEM, content
    )
    try:
        return _proposal_from(response)
    except (ValueError, KeyError, TypeError) as exc:
        raise BackendError(f"constructor crossover returned unusable output: {exc}") from exc


def screen_redundant_middlewares(repository, theme: str, concept: str, backend) -> list[str]:
    """Ids the Constructor marks redundant within one merged entry (sanitized)."""
    ids = repository.middleware_ids(theme, concept)
    blobs = [
        {
            "id": mid,
            "name": repository.get(mid).name,
            "params": [p.to_dict() for p in repository.get(mid).params],
            "body": repository.get(mid).body.to_dict(),
        }
        for mid in ids
    ]
    content = f"theme: {theme}\nconcept: {concept}\nmiddlewares: {canonical_json(blobs)}"
    response = backend.complete("constructor_screen", prompts.CONSTRUCTOR_SCREEN_SYSTEM, content)
    try:
        remove = extract_json(response)["remove"]
        if not isinstance(remove, list):
            raise ValueError("'remove' must be a list")
    except (ValueError, KeyError, TypeError) as exc:
        raise BackendError(f"constructor screen returned unusable output: {exc}") from exc
    known = set(ids)
    return [str(r) for r in remove if str(r) in known]
