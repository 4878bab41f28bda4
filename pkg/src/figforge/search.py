"""Explore-and-Select drawing search.

Each iteration advances the figure by one concept: widen the current terminal
with several alternative drawings (expand), spend a lookahead budget on the
most promising nodes (simulate, UCT-guided), score the iteration subtree
bottom-up (backpropagate), and commit to the best expansion child (select).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from .agents import (
    DrawingHistory,
    HistoryRecord,
    apply_choice,
    draw_concept,
    evaluate_canvas,
    evaluate_concept_rendering,
    parse_paper,
)
from .errors import (
    BackendError,
    ChoiceExhaustedError,
    ExpansionFailureError,
    InvalidInvocationError,
)
from .retrieval import filter_candidates, resolve_theme, retrieve_candidates
from .scene import Canvas

log = logging.getLogger(__name__)


@dataclass
class SearchParams:
    a1: int = 3                   # expansion width
    a2: int = 3                   # simulation budget per iteration
    beta: float = 1.0             # exploration weight
    regen_threshold: float = 0.05  # minimum acceptable incremental gain
    max_regen_rounds: int = 1

    def validate(self) -> None:
        if self.a1 < 1 or self.a2 < 0 or self.beta < 0 or self.max_regen_rounds < 0:
            raise ValueError("search parameters out of range")

    def to_dict(self) -> dict:
        return {
            "a1": self.a1,
            "a2": self.a2,
            "beta": self.beta,
            "regen_threshold": self.regen_threshold,
            "max_regen_rounds": self.max_regen_rounds,
        }


@dataclass
class DrawingNode:
    id: int
    parent: int | None
    canvas: Canvas
    concepts_done: int
    absolute_quality: float
    own_score: float  # incremental gain over the parent; root holds 0
    rank: int = 0     # position among this iteration's siblings, 0 = best
    child_ids: list[int] = field(default_factory=list)
    choice: object = None  # DrawingChoice that produced this node
    feedback: str = ""
    draw_attempts: int = 0  # variant counter handed to the drawer
    eligible: bool = True   # cleared when the drawer is exhausted for this node


@dataclass
class DrawingTree:
    params: SearchParams
    seed: int
    total_concepts: int
    nodes: dict[int, DrawingNode] = field(default_factory=dict)
    root_id: int = 0
    terminal_id: int = 0
    _next_id: int = 0

    def new_node(self, **kwargs) -> DrawingNode:
        node = DrawingNode(id=self._next_id, **kwargs)
        self._next_id += 1
        self.nodes[node.id] = node
        return node

    def path_to_terminal(self) -> list[DrawingNode]:
        path = []
        cursor: int | None = self.terminal_id
        while cursor is not None:
            node = self.nodes[cursor]
            path.append(node)
            cursor = node.parent
        return list(reversed(path))

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "seed": self.seed,
            "total_concepts": self.total_concepts,
            "root": self.root_id,
            "terminal": self.terminal_id,
            "nodes": {
                str(n.id): {
                    "parent": n.parent,
                    "concepts_done": n.concepts_done,
                    "absolute_quality": n.absolute_quality,
                    "own_score": n.own_score,
                    "rank": n.rank,
                    "children": list(n.child_ids),
                    "middlewares": list(n.choice.middleware_ids()) if n.choice else [],
                    "concept": n.choice.concept_id if n.choice else None,
                }
                for n in sorted(self.nodes.values(), key=lambda x: x.id)
            },
        }


def uct_formula(rank: int, child_count: int, beta: float) -> float:
    """Exploitation by sibling rank plus exploration decaying with children."""
    return 2.0 / (rank + 1) + beta * math.sqrt(2.0 / (child_count + 1))


def uct_value(node: DrawingNode, beta: float) -> float:
    return uct_formula(node.rank, len(node.child_ids), beta)


# --------------------------------------------------------------------------
# the four steps
# --------------------------------------------------------------------------

def _draw_child(tree: DrawingTree, parent: DrawingNode, drawer, evaluator, feedback: str) -> DrawingNode | None:
    """One drawing + evaluation; None when this attempt failed recoverably."""
    variant = parent.draw_attempts
    parent.draw_attempts += 1
    try:
        choice, canvas = drawer(parent, variant, feedback)
        evaluation = evaluator(canvas)
    except ChoiceExhaustedError:
        parent.eligible = False
        raise
    except (BackendError, InvalidInvocationError) as exc:
        log.warning("drawing attempt %d on node %d dropped: %s", variant, parent.id, exc)
        return None
    return tree.new_node(
        parent=parent.id,
        canvas=canvas,
        concepts_done=parent.concepts_done + 1,
        absolute_quality=evaluation.score,
        own_score=evaluation.score - parent.absolute_quality,
        choice=choice,
        feedback=evaluation.feedback,
    )


def _assign_ranks(siblings: list[DrawingNode]) -> None:
    for rank, node in enumerate(sorted(siblings, key=lambda n: (-n.own_score, n.id))):
        node.rank = rank


def expand(tree: DrawingTree, node_id: int, drawer, evaluator) -> list[int]:
    """Create a1 alternative children; regenerate once with evaluator feedback
    if every child falls below the acceptance threshold."""
    node = tree.nodes[node_id]
    if node.concepts_done >= tree.total_concepts:
        raise ValueError("cannot expand a node with all concepts rendered")
    params = tree.params
    survivors: list[DrawingNode] = []
    feedback = ""
    for round_index in range(params.max_regen_rounds + 1):
        batch: list[DrawingNode] = []
        for _slot in range(params.a1):
            try:
                child = _draw_child(tree, node, drawer, evaluator, feedback)
            except ChoiceExhaustedError:
                break
            if child is not None:
                batch.append(child)
        if not batch:
            continue  # give remaining rounds a chance
        _assign_ranks(batch)
        survivors = batch
        below = all(c.own_score < params.regen_threshold for c in batch)
        if below and round_index < params.max_regen_rounds:
            feedback = "; ".join(
                f"attempt scored {c.own_score:.3f}: {c.feedback}" for c in batch if c.feedback
            ) or f"all attempts gained under {params.regen_threshold}"
            for c in batch:
                del tree.nodes[c.id]
            survivors = []
            continue
        break
    if not survivors:
        raise ExpansionFailureError(f"no surviving children when expanding node {node_id}")
    node.child_ids.extend(c.id for c in survivors)
    return [c.id for c in survivors]


def simulate(tree: DrawingTree, expansion_children: list[int], drawer, evaluator) -> list[int]:
    """Spend a2 single-child expansions on the max-UCT nodes of this iteration.

    Pool: the expansion children plus nodes this call created, restricted to
    nodes that still have unrendered concepts. Ties break toward lower rank,
    then earlier creation.
    """
    if not expansion_children:
        raise ValueError("simulate needs at least one expansion child")
    params = tree.params
    new_ids: list[int] = []
    groups: dict[int, list[int]] = {}  # parent id -> children created this iteration
    for _step in range(params.a2):
        pool = [
            tree.nodes[nid]
            for nid in [*expansion_children, *new_ids]
            if tree.nodes[nid].eligible and tree.nodes[nid].concepts_done < tree.total_concepts
        ]
        if not pool:
            break
        target = min(pool, key=lambda n: (-uct_value(n, params.beta), n.rank, n.id))
        try:
            child = _draw_child(tree, target, drawer, evaluator, "")
        except ChoiceExhaustedError:
            continue  # step consumed; node now ineligible
        if child is None:
            continue
        target.child_ids.append(child.id)
        group = groups.setdefault(target.id, [])
        group.append(child.id)
        _assign_ranks([tree.nodes[nid] for nid in group])
        new_ids.append(child.id)
    return new_ids


def backpropagate(tree: DrawingTree, iteration_nodes: list[int]) -> dict[int, float]:
    """final(n) = own(n) + mean(final of n's children within this iteration).

    Computed from scratch over the iteration subtree; earlier iterations never
    leak in, so nothing is double counted.
    """
    members = set(iteration_nodes)
    finals: dict[int, float] = {}

    def final(nid: int) -> float:
        if nid in finals:
            return finals[nid]
        node = tree.nodes[nid]
        kids = [c for c in node.child_ids if c in members]
        value = node.own_score
        if kids:
            value += sum(final(k) for k in kids) / len(kids)
        finals[nid] = value
        return value

    for nid in sorted(members):
        if tree.nodes[nid].parent not in members:
            final(nid)
    for nid in members:  # children of failed branches still get values
        final(nid)
    return finals


def select_best(tree: DrawingTree, expansion_children: list[int], finals: dict[int, float]) -> int:
    """Commit the terminal to the expansion child with the best final score."""
    best = min(
        (tree.nodes[nid] for nid in expansion_children),
        key=lambda n: (-finals[n.id], n.rank, n.id),
    )
    tree.terminal_id = best.id
    return best.id


# --------------------------------------------------------------------------
# full run
# --------------------------------------------------------------------------

@dataclass
class RunResult:
    canvas: Canvas        # terminal canvas, before refinement
    tree: DrawingTree
    graph: object         # ConceptGraph
    theme: str
    concept_order: list[str]
    usage_records: list[dict]
    history: DrawingHistory


def run(
    paper_text: str,
    repository,
    backend,
    params: SearchParams,
    seed: int = 0,
    provider=None,
    k: int = 3,
) -> RunResult:
    """Parse the paper and grow the figure one concept per iteration."""
    params.validate()
    provider = provider or repository.provider
    graph = parse_paper(paper_text, backend)
    theme = resolve_theme(repository, graph.theme, provider)
    order = [c for c in graph.topological_order()]
    history = DrawingHistory()
    tree = DrawingTree(params=params, seed=seed, total_concepts=len(order))
    root = tree.new_node(
        parent=None,
        canvas=Canvas(),
        concepts_done=0,
        absolute_quality=evaluate_canvas(Canvas(), graph, backend).score,
        own_score=0.0,
    )
    tree.root_id = tree.terminal_id = root.id

    candidate_cache: dict[str, object] = {}

    def candidates_for(concept):
        if concept.id not in candidate_cache:
            retrieved = retrieve_candidates(repository, theme, concept.id, k, provider)
            candidate_cache[concept.id] = filter_candidates(retrieved, concept.id, theme, backend)
        return candidate_cache[concept.id]

    def drawer(node: DrawingNode, variant: int, feedback: str):
        concept = order[node.concepts_done]
        choice = draw_concept(
            theme,
            concept,
            node.canvas,
            candidates_for(concept),
            history,
            backend,
            repository,
            variant=variant,
            feedback=feedback,
        )
        canvas = apply_choice(node.canvas, choice, repository, f"n{node.id}v{variant}")
        return choice, canvas

    def evaluator(canvas: Canvas):
        return evaluate_canvas(canvas, graph, backend)

    while tree.nodes[tree.terminal_id].concepts_done < tree.total_concepts:
        children = expand(tree, tree.terminal_id, drawer, evaluator)
        sims = simulate(tree, children, drawer, evaluator)
        finals = backpropagate(tree, [*children, *sims])
        best = select_best(tree, children, finals)
        chosen = tree.nodes[best]
        history.append(
            HistoryRecord(
                concept_id=chosen.choice.concept_id,
                middleware_ids=chosen.choice.middleware_ids(),
                bindings_summary="; ".join(
                    f"{inv.middleware_id}({len(inv.bindings)} bindings)"
                    for inv in chosen.choice.invocations
                ),
                score=chosen.own_score,
                feedback=chosen.feedback,
            )
        )

    terminal = tree.nodes[tree.terminal_id]
    usage_records: list[dict] = []
    for node in tree.path_to_terminal()[1:]:
        concept_id = node.choice.concept_id
        result = evaluate_concept_rendering(terminal.canvas, concept_id, backend)
        for mid in node.choice.middleware_ids():
            repository.record_usage(mid, result.score)
        usage_records.append(
            {
                "concept": concept_id,
                "middlewares": node.choice.middleware_ids(),
                "score": result.score,
            }
        )
    return RunResult(
        canvas=terminal.canvas,
        tree=tree,
        graph=graph,
        theme=theme,
        concept_order=[c.id for c in order],
        usage_records=usage_records,
        history=history,
    )
