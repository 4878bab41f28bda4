"""End-to-end orchestration: corpus ingestion, repository bootstrap, and
figure generation with artifact persistence."""

from __future__ import annotations

import datetime
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import search
from .agents import parse_paper, refine
from .errors import FigforgeError, MalformedXmlError
from .repository import MiddlewareRepository, create_from_pair
from .scene import Canvas, read_mxgraph_xml

log = logging.getLogger(__name__)

STORE_VERSION = 1


@dataclass
class ExperiencePair:
    id: str
    paper_text: str
    mi_canvas: Canvas
    quality: float
    accepted: bool

    def validate(self) -> None:
        if self.accepted and self.quality < 0.0:
            raise ValueError("accepted pair with negative quality")


@dataclass
class ExperienceStore:
    threshold: float
    pairs: dict[str, ExperiencePair] = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    report: list[str] = field(default_factory=list)

    def accepted(self) -> list[ExperiencePair]:
        return [self.pairs[i] for i in sorted(self.pairs) if self.pairs[i].accepted]

    def accepted_pairs(self) -> list[tuple[str, str]]:
        """(id, paper text) rows for batch sampling."""
        return [(p.id, p.paper_text) for p in self.accepted()]

    def to_dict(self) -> dict:
        return {
            "store_version": STORE_VERSION,
            "threshold": self.threshold,
            "provenance": self.provenance,
            "report": list(self.report),
            "pairs": {
                pid: {
                    "paper_text": p.paper_text,
                    "mi_xml": p.mi_canvas.to_mxgraph_xml(),
                    "quality": p.quality,
                    "accepted": p.accepted,
                }
                for pid, p in sorted(self.pairs.items())
            },
        }

    @staticmethod
    def from_dict(data: dict) -> "ExperienceStore":
        store = ExperienceStore(
            threshold=float(data["threshold"]),
            provenance=dict(data.get("provenance", {})),
            report=list(data.get("report", [])),
        )
        for pid, row in data["pairs"].items():
            store.pairs[pid] = ExperiencePair(
                id=pid,
                paper_text=row["paper_text"],
                mi_canvas=read_mxgraph_xml(row["mi_xml"]).canvas,
                quality=float(row["quality"]),
                accepted=bool(row["accepted"]),
            )
        return store

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )

    @staticmethod
    def load(path: str | Path) -> "ExperienceStore":
        return ExperienceStore.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _ingest_date() -> str:
    """Honors SOURCE_DATE_EPOCH so repeated runs can be byte-identical."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch:
        return datetime.datetime.fromtimestamp(int(epoch), datetime.timezone.utc).date().isoformat()
    return datetime.date.today().isoformat()


def ingest(directory: str | Path, backend, threshold: float = 0.5) -> ExperienceStore:
    """Score every <id>.txt + <id>.drawio pair in the directory.

    Pairs below the threshold stay in the store with accepted=False; broken
    files are skipped and noted in the store report.
    """
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory {root} does not exist")
    from .agents import evaluate_canvas

    store = ExperienceStore(threshold=threshold)
    store.provenance = {"source": str(root), "ingested": _ingest_date()}
    for text_path in sorted(root.glob("*.txt")):
        pair_id = text_path.stem
        xml_path = text_path.with_suffix(".drawio")
        if not xml_path.exists():
            store.report.append(f"{pair_id}: skipped (no matching .drawio)")
            continue
        try:
            paper_text = text_path.read_text(encoding="utf-8")
            canvas = read_mxgraph_xml(xml_path.read_text(encoding="utf-8")).canvas
        except (OSError, MalformedXmlError) as exc:
            store.report.append(f"{pair_id}: skipped ({type(exc).__name__}: {exc})")
            continue
        quality = evaluate_canvas(canvas, None, backend).score
        accepted = quality >= threshold
        store.pairs[pair_id] = ExperiencePair(
            id=pair_id, paper_text=paper_text, mi_canvas=canvas,
            quality=quality, accepted=accepted,
        )
        store.report.append(
            f"{pair_id}: quality {quality:.3f} -> {'accepted' if accepted else 'filtered'}"
        )
    return store


@dataclass
class BuildResult:
    repository: MiddlewareRepository
    report: list[str]


def build_repository(
    store: ExperienceStore,
    backend,
    provider,
    merge_threshold: float = 0.85,
) -> BuildResult:
    """Extract middlewares from every accepted pair, then merge the result."""
    accepted = store.accepted()
    if not accepted:
        raise ValueError("experience store has no accepted pairs")
    repository = MiddlewareRepository(provider=provider)
    report: list[str] = []
    for pair in accepted:
        try:
            graph = parse_paper(pair.paper_text, backend)
            creation = create_from_pair(
                pair.paper_text, pair.mi_canvas, graph.theme,
                graph.concepts, backend, paper_id=pair.id,
            )
            for mw in creation.middlewares:
                repository.add(mw)
            note = f"added {len(creation.middlewares)}"
            if creation.problems:
                note += f", rejected {len(creation.problems)}"
            report.append(f"{pair.id}: {note}")
        except FigforgeError as exc:
            report.append(f"{pair.id}: skipped ({type(exc).__name__}: {exc})")
    for line in repository.merge(similarity_threshold=merge_threshold, constructor_backend=backend):
        report.append(f"merge: {line}")
    return BuildResult(repository=repository, report=report)


@dataclass
class GenerationResult:
    canvas: Canvas
    xml: str
    svg: str
    manifest: dict
    refined: bool
    run: search.RunResult


def generate(
    paper_text: str,
    repository,
    backend,
    params: search.SearchParams | None = None,
    seed: int = 0,
    out_dir: str | Path | None = None,
    provider=None,
    k: int = 3,
) -> GenerationResult:
    """Full generation: search, refinement, serialization, artifacts.

    Refinement failure degrades to the pre-refinement canvas with a warning.
    On a search failure, whatever partial state exists is still written out.
    """
    if repository.is_empty():
        raise ValueError("repository has no middlewares")
    params = params or search.SearchParams()
    try:
        result = search.run(
            paper_text, repository, backend, params,
            seed=seed, provider=provider, k=k,
        )
    except FigforgeError as exc:
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            (out / "manifest.json").write_text(
                json.dumps(
                    {"error": f"{type(exc).__name__}: {exc}", "seed": seed,
                     "params": params.to_dict()},
                    indent=2, sort_keys=True,
                ) + "\n",
                encoding="utf-8",
            )
        raise

    refined_canvas = refine(result.canvas, result.graph, backend)
    refined = refined_canvas is not result.canvas
    if not refined:
        log.warning("refinement unavailable; keeping the pre-refinement canvas")
    final = refined_canvas if refined else result.canvas

    xml = final.to_mxgraph_xml()
    svg = final.to_svg()
    manifest = {
        "seed": seed,
        "params": params.to_dict(),
        "theme": result.theme,
        "concept_order": result.concept_order,
        "refined": refined,
        "usages": result.usage_records,
        "tree": {
            "nodes": len(result.tree.nodes),
            "terminal": result.tree.terminal_id,
            "iterations": result.tree.total_concepts,
        },
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "figure.drawio").write_text(xml, encoding="utf-8")
        (out / "figure.svg").write_text(svg, encoding="utf-8")
        (out / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        (out / "tree.json").write_text(
            json.dumps(result.tree.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )
    return GenerationResult(
        canvas=final, xml=xml, svg=svg, manifest=manifest, refined=refined, run=result,
    )
