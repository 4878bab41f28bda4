"""Repository evolution: objective evaluation, genetic operators, rollback.

The objective L for a repository state is the mean final-canvas quality over a
batch of papers plus the mean effectiveness score of the middlewares those
runs invoked. Each iteration applies selection, mutation, and crossover, then
keeps the new state only if L did not drop; otherwise the snapshot is
restored. Stops early after a run of iterations with no significant gain.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field

from . import search
from .agents import constructor_crossover, constructor_mutate
from .errors import (
    BackendError,
    FigforgeError,
    ObjectiveFailureError,
    TemplateError,
)
from .repository import Provenance, middleware_from_proposal
from .util import stable_hash

log = logging.getLogger(__name__)


@dataclass
class EvolutionConfig:
    batch_size: int = 4
    max_iterations: int = 5
    patience: int = 3
    epsilon: float = 0.01
    mes_delete_threshold: float = 0.5
    min_usages_for_selection: int = 3
    mutation_count: int = 2
    crossover_count: int = 1

    def validate(self) -> None:
        counts = (
            self.batch_size,
            self.max_iterations,
            self.patience,
            self.mutation_count,
            self.crossover_count,
            self.min_usages_for_selection,
        )
        if any(c < 0 for c in counts) or self.epsilon < 0:
            raise ValueError("evolution configuration values must be non-negative")
        if not (0.0 <= self.mes_delete_threshold <= 1.0):
            raise ValueError("mes_delete_threshold must lie in [0, 1]")


@dataclass
class IterationRecord:
    index: int
    objective_before: float
    objective_after: float | None  # None when the batch evaluation failed
    operations: list[dict]
    accepted: bool
    snapshot_ref: str
    objective_detail: dict | None = None  # qualities + invoked MES behind objective_after


@dataclass
class ObjectiveResult:
    value: float
    qualities: dict[str, float]          # paper id -> final canvas quality
    invoked_mes: dict[str, float]        # middleware id -> mes after the batch
    exclusions: list[tuple[str, str]] = field(default_factory=list)
    mes_term_empty: bool = False

    def __float__(self) -> float:
        return self.value

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "qualities": dict(self.qualities),
            "invoked_mes": dict(self.invoked_mes),
            "exclusions": [list(e) for e in self.exclusions],
            "mes_term_empty": self.mes_term_empty,
        }


def evaluate_objective(
    repository,
    paper_batch: list[tuple[str, str]],
    backend,
    search_params: search.SearchParams | None = None,
    provider=None,
    k: int = 3,
    seed: int = 0,
) -> ObjectiveResult:
    """Mean final quality over the batch plus mean MES of invoked middlewares.

    Papers whose generation fails are excluded and reported; when every paper
    fails the objective is undefined.
    """
    if not paper_batch:
        raise ValueError("paper batch must be non-empty")
    params = search_params or search.SearchParams()
    qualities: dict[str, float] = {}
    invoked: set[str] = set()
    exclusions: list[tuple[str, str]] = []
    for index, (paper_id, paper_text) in enumerate(paper_batch):
        try:
            result = search.run(
                paper_text, repository, backend, params,
                seed=seed + index, provider=provider, k=k,
            )
        except FigforgeError as exc:
            log.warning("objective run for %s excluded: %s", paper_id, exc)
            exclusions.append((paper_id, f"{type(exc).__name__}: {exc}"))
            continue
        terminal = result.tree.nodes[result.tree.terminal_id]
        qualities[paper_id] = terminal.absolute_quality
        for record in result.usage_records:
            invoked.update(record["middlewares"])
    if not qualities:
        raise ObjectiveFailureError("every paper in the batch failed to generate")
    invoked_mes = {}
    for mid in sorted(invoked):
        mes = repository.get(mid).mes()
        if mes is not None:
            invoked_mes[mid] = mes
    quality_term = sum(qualities.values()) / len(qualities)
    mes_term = sum(invoked_mes.values()) / len(invoked_mes) if invoked_mes else 0.0
    return ObjectiveResult(
        value=quality_term + mes_term,
        qualities=qualities,
        invoked_mes=invoked_mes,
        exclusions=exclusions,
        mes_term_empty=not invoked_mes,
    )


# --------------------------------------------------------------------------
# genetic operators
# --------------------------------------------------------------------------

def op_selection(repository, config: EvolutionConfig) -> list[str]:
    """Delete middlewares with enough usage evidence and a poor track record."""
    doomed = []
    for mid in sorted(repository.store):
        mw = repository.get(mid)
        mes = mw.mes()
        if (
            mw.usage_N >= config.min_usages_for_selection
            and mes is not None
            and mes < config.mes_delete_threshold
        ):
            doomed.append(mid)
    for mid in doomed:
        repository.delete(mid)
    return doomed


def _unique_id(repository, base: str, tag: str) -> str:
    n = 0
    while f"{base}_{tag}{n}" in repository.store:
        n += 1
    return f"{base}_{tag}{n}"


def op_mutation(repository, middleware_id: str, backend) -> str | None:
    """Add a validated variant beside the original; None when nothing usable
    came back."""
    parent = repository.get(middleware_id)
    proposal = constructor_mutate(parent, backend)
    if proposal is None:
        log.info("mutation of %s declined by constructor", middleware_id)
        return None
    new_id = _unique_id(repository, middleware_id, "m")
    try:
        variant = middleware_from_proposal(
            proposal, new_id, parent.theme, parent.concept,
            Provenance(kind="mutated", sources=[middleware_id]),
        )
    except (TemplateError, KeyError, TypeError, ValueError) as exc:
        log.warning("mutation of %s rejected: %s", middleware_id, exc)
        return None
    repository.add(variant)
    return new_id


def op_crossover(repository, parent_ids: list[str], backend) -> str | None:
    """Combine two parents from one theme; offspring lands under the concept
    of the highest-MES parent (ties: first listed)."""
    if len(parent_ids) < 2:
        raise ValueError("crossover needs at least two parents")
    parents = [repository.get(pid) for pid in parent_ids]
    themes = {p.theme for p in parents}
    if len(themes) > 1:
        raise ValueError(f"crossover parents span multiple themes: {sorted(themes)}")
    proposal = constructor_crossover(parents[0], parents[1], backend)
    if proposal is None:
        log.info("crossover of %s declined by constructor", parent_ids)
        return None
    best = max(parents, key=lambda p: (p.mes() if p.mes() is not None else float("-inf"), -parent_ids.index(p.id)))
    new_id = _unique_id(repository, best.id, "x")
    try:
        offspring = middleware_from_proposal(
            proposal, new_id, best.theme, best.concept,
            Provenance(kind="crossover", sources=list(parent_ids)),
        )
    except (TemplateError, KeyError, TypeError, ValueError) as exc:
        log.warning("crossover of %s rejected: %s", parent_ids, exc)
        return None
    repository.add(offspring)
    return new_id


def _mutation_targets(repository, count: int) -> list[str]:
    scored = [
        (mw.mes(), mid)
        for mid, mw in repository.store.items()
        if mw.mes() is not None
    ]
    scored.sort(key=lambda pair: (pair[0], pair[1]))
    return [mid for _, mid in scored[:count]]


def _crossover_pairs(repository, count: int) -> list[tuple[str, str]]:
    by_theme: dict[str, list[tuple[float, str]]] = {}
    for mid, mw in repository.store.items():
        mes = mw.mes()
        if mes is not None:
            by_theme.setdefault(mw.theme, []).append((mes, mid))
    pairs: list[tuple[float, str, str, str]] = []
    for theme, members in by_theme.items():
        members.sort(key=lambda pair: (-pair[0], pair[1]))
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                score = members[i][0] + members[j][0]
                pairs.append((-score, theme, members[i][1], members[j][1]))
    pairs.sort()
    return [(a, b) for _, _, a, b in pairs[:count]]


# --------------------------------------------------------------------------
# the loop
# --------------------------------------------------------------------------

def evolve(
    repository,
    experience_store,
    config: EvolutionConfig,
    backend,
    seed: int = 0,
    provider=None,
    search_params: search.SearchParams | None = None,
    k: int = 3,
) -> list[IterationRecord]:
    """Run up to max_iterations of operator application with rollback.

    The accepted objective sequence never decreases: a new state is kept only
    when its batch objective matches or beats the last accepted one.
    """
    config.validate()
    population = experience_store.accepted_pairs()
    if not population:
        raise ValueError("experience store has no accepted pairs")
    if config.max_iterations == 0:
        return []
    rng = random.Random(seed)

    def sample_batch() -> list[tuple[str, str]]:
        size = min(config.batch_size, len(population))
        return rng.sample(population, size)

    def objective(batch, batch_seed):
        return evaluate_objective(
            repository, batch, backend, search_params,
            provider=provider, k=k, seed=batch_seed,
        )

    current = objective(sample_batch(), seed).value
    records: list[IterationRecord] = []
    stall = 0
    for index in range(config.max_iterations):
        before = current
        snapshot = repository.to_dict()
        snapshot_ref = stable_hash(snapshot)[:12]
        operations: list[dict] = []
        deleted = op_selection(repository, config)
        operations.append({"kind": "selection", "deleted": deleted})
        for target in _mutation_targets(repository, config.mutation_count):
            try:
                result = op_mutation(repository, target, backend)
            except BackendError as exc:
                log.warning("mutation backend failure on %s: %s", target, exc)
                result = None
            operations.append({"kind": "mutation", "parent": target, "result": result})
        for pair in _crossover_pairs(repository, config.crossover_count):
            try:
                result = op_crossover(repository, list(pair), backend)
            except BackendError as exc:
                log.warning("crossover backend failure on %s: %s", pair, exc)
                result = None
            operations.append({"kind": "crossover", "parents": list(pair), "result": result})

        try:
            outcome = objective(sample_batch(), seed + index + 1)
            after = outcome.value
        except ObjectiveFailureError as exc:
            log.warning("iteration %d objective failed, rolling back: %s", index, exc)
            repository.restore(snapshot)
            records.append(IterationRecord(
                index=index, objective_before=before, objective_after=None,
                operations=operations, accepted=False, snapshot_ref=snapshot_ref,
            ))
            stall += 1
            if stall >= config.patience:
                break
            continue

        accepted = after >= before
        if accepted:
            gain = after - before
            current = after
        else:
            repository.restore(snapshot)
            gain = 0.0
        records.append(IterationRecord(
            index=index, objective_before=before, objective_after=after,
            operations=operations, accepted=accepted, snapshot_ref=snapshot_ref,
            objective_detail=outcome.to_dict(),
        ))
        stall = stall + 1 if gain < config.epsilon else 0
        if stall >= config.patience:
            break
    return records


def incorporate_new_pairs(repository, new_pairs, backend, merge_threshold: float = 0.85) -> list[str]:
    """Extract middlewares from fresh paper/figure pairs, then merge.

    Pairs whose source paper already contributed are skipped, making the
    operation idempotent. Returns a report line per pair.
    """
    from .agents import parse_paper
    from .repository import create_from_pair

    report: list[str] = []
    added_any = False
    for pair in new_pairs:
        if repository.has_source_paper(pair.id):
            report.append(f"{pair.id}: skipped (already incorporated)")
            continue
        try:
            graph = parse_paper(pair.paper_text, backend)
            creation = create_from_pair(
                pair.paper_text, pair.mi_canvas, graph.theme,
                graph.concepts, backend, paper_id=pair.id,
            )
            for mw in creation.middlewares:
                repository.add(mw)
                added_any = True
            note = f"added {len(creation.middlewares)}"
            if creation.problems:
                note += f", {len(creation.problems)} proposals rejected"
            report.append(f"{pair.id}: {note}")
        except FigforgeError as exc:
            report.append(f"{pair.id}: skipped ({type(exc).__name__}: {exc})")
    if added_any:
        for line in repository.merge(similarity_threshold=merge_threshold, constructor_backend=backend):
            report.append(f"merge: {line}")
    return report


def format_report(records: list[IterationRecord], repository) -> str:
    """Readable evolution trace: trajectory, operations, final lineage."""
    lines = ["evolution report", "================"]
    for rec in records:
        after = "failed" if rec.objective_after is None else f"{rec.objective_after:.6f}"
        lines.append(
            f"iteration {rec.index}: before={rec.objective_before:.6f} "
            f"after={after} accepted={rec.accepted} snapshot={rec.snapshot_ref}"
        )
        for op in rec.operations:
            if op["kind"] == "selection":
                lines.append(f"  selection deleted: {', '.join(op['deleted']) or '-'}")
            elif op["kind"] == "mutation":
                lines.append(f"  mutation {op['parent']} -> {op['result'] or 'rejected'}")
            else:
                lines.append(
                    f"  crossover {' + '.join(op['parents'])} -> {op['result'] or 'rejected'}"
                )
    lines.append("lineage:")
    for mid in sorted(repository.store):
        prov = repository.get(mid).provenance
        lines.append(f"  {mid}: {prov.kind}({', '.join(prov.sources) or '-'})")
    return "\n".join(lines)
