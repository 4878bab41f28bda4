"""Agent roles: parsing, drawing, evaluating, refining, constructing."""

import pytest

from figforge.agents import (
    Concept,
    ConceptGraph,
    DrawingHistory,
    apply_choice,
    constructor_crossover,
    constructor_mutate,
    draw_concept,
    evaluate_canvas,
    evaluate_concept_rendering,
    missing_edge_connectors,
    parse_paper,
    refine,
    screen_redundant_middlewares,
)
from figforge.embeddings import HashedTrigramEmbedder
from figforge.errors import (
    BackendError,
    InvalidInvocationError,
    NoElementsForConceptError,
)
from figforge.repository import MiddlewareRepository
from figforge.retrieval import retrieve_candidates
from figforge.rulebased import RuleBasedBackend
from figforge.scene import Canvas, Connector, SceneElement, StyleSpec
from figforge.util import canonical_json

from test_repository import simple_middleware

PAPER = """theme: detection
concept: backbone | conv stack
concept: feature_pyramid | multi scale pyramid
concept: det_head | prediction head
edge: backbone -> feature_pyramid | features
edge: feature_pyramid -> det_head | levels

Body text describing the detector.
"""


def element(eid, x=0.0, y=0.0, tag=None, w=80.0, h=40.0):
    return SceneElement(
        id=eid, kind="rect", x=x, y=y, width=w, height=h,
        style=StyleSpec(), concept_tag=tag,
    )


class Exploding:
    def complete(self, *a, **k):
        raise BackendError("down")


class TestParsePaper:
    def test_structured_headers(self):
        graph = parse_paper(PAPER, RuleBasedBackend())
        assert graph.theme == "detection"
        assert [c.id for c in graph.concepts] == ["backbone", "feature_pyramid", "det_head"]
        assert graph.edges == [
            ("backbone", "feature_pyramid", "features"),
            ("feature_pyramid", "det_head", "levels"),
        ]

    def test_headerless_text_falls_back(self):
        graph = parse_paper("We present a method without structure.", RuleBasedBackend())
        assert len(graph.concepts) == 1

    def test_garbage_response_raises(self):
        class Garbage:
            def complete(self, *a, **k):
                return "word salad"

        with pytest.raises(BackendError):
            parse_paper(PAPER, Garbage())


class TestTopologicalOrder:
    def test_edge_order_respected(self):
        graph = ConceptGraph(
            theme="t",
            concepts=[
                Concept("c", "c", "", 0),
                Concept("a", "a", "", 1),
                Concept("b", "b", "", 2),
            ],
            edges=[("b", "c", ""), ("a", "b", "")],
        )
        assert [c.id for c in graph.topological_order()] == ["a", "b", "c"]

    def test_ties_break_by_hint_then_id(self):
        graph = ConceptGraph(
            theme="t",
            concepts=[Concept("z", "z", "", 0), Concept("a", "a", "", 1)],
            edges=[],
        )
        assert [c.id for c in graph.topological_order()] == ["z", "a"]

    def test_cycle_falls_back_to_listed_order(self):
        graph = ConceptGraph(
            theme="t",
            concepts=[Concept("a", "a", "", 0), Concept("b", "b", "", 1)],
            edges=[("a", "b", ""), ("b", "a", "")],
        )
        assert [c.id for c in graph.topological_order()] == ["a", "b"]


def drawing_setup():
    repo = MiddlewareRepository(provider=HashedTrigramEmbedder())
    repo.add(simple_middleware("mw_a", "detection", "backbone"))
    repo.add(simple_middleware("mw_b", "detection", "backbone"))
    candidates = retrieve_candidates(repo, "detection", "backbone", 1)
    concept = Concept("backbone", "backbone", "conv stack", 0)
    return repo, candidates, concept


class TestDrawConcept:
    def test_rulebased_choice(self):
        repo, candidates, concept = drawing_setup()
        choice = draw_concept(
            "detection", concept, Canvas(), candidates, DrawingHistory(),
            RuleBasedBackend(), repo,
        )
        assert choice.concept_id == "backbone"
        assert choice.middleware_ids() == ["mw_a"]

    def test_variant_changes_selection(self):
        repo, candidates, concept = drawing_setup()
        first = draw_concept("detection", concept, Canvas(), candidates,
                             DrawingHistory(), RuleBasedBackend(), repo, variant=0)
        second = draw_concept("detection", concept, Canvas(), candidates,
                              DrawingHistory(), RuleBasedBackend(), repo, variant=1)
        assert first.middleware_ids() != second.middleware_ids()

    def test_non_candidate_middleware_rejected_after_retry(self):
        repo, candidates, concept = drawing_setup()

        class AlwaysWrong:
            def complete(self, *a, **k):
                return canonical_json(
                    {"invocations": [{"middleware": "mw_zz", "bindings": {}}]}
                )

        with pytest.raises(InvalidInvocationError):
            draw_concept("detection", concept, Canvas(), candidates,
                         DrawingHistory(), AlwaysWrong(), repo)

    def test_corrective_retry_recovers(self):
        repo, candidates, concept = drawing_setup()

        class WrongThenRight:
            def __init__(self):
                self.calls = 0

            def complete(self, role, system_prompt, user_content, attachments=None):
                self.calls += 1
                if self.calls == 1:
                    return canonical_json({"invocations": [{"middleware": "nope", "bindings": {}}]})
                return canonical_json({"invocations": [{"middleware": "mw_a", "bindings": {"x": 5}}]})

        backend = WrongThenRight()
        choice = draw_concept("detection", concept, Canvas(), candidates,
                              DrawingHistory(), backend, repo)
        assert backend.calls == 2
        assert choice.middleware_ids() == ["mw_a"]

    def test_bad_binding_value_rejected(self):
        repo, candidates, concept = drawing_setup()

        class BadBinding:
            def complete(self, *a, **k):
                return canonical_json(
                    {"invocations": [{"middleware": "mw_a", "bindings": {"x": 99999}}]}
                )

        with pytest.raises(InvalidInvocationError):
            draw_concept("detection", concept, Canvas(), candidates,
                         DrawingHistory(), BadBinding(), repo)

    def test_empty_choice_rejected(self):
        repo, candidates, concept = drawing_setup()

        class Empty:
            def complete(self, *a, **k):
                return canonical_json({"invocations": [], "extra_elements": []})

        with pytest.raises(InvalidInvocationError):
            draw_concept("detection", concept, Canvas(), candidates,
                         DrawingHistory(), Empty(), repo)


class TestApplyChoice:
    def test_fragment_added_with_prefix_and_tag(self):
        repo, candidates, concept = drawing_setup()
        base = Canvas()
        base.add_element(element("existing", z := 0.0))
        choice = draw_concept("detection", concept, base, candidates,
                              DrawingHistory(), RuleBasedBackend(), repo)
        out = apply_choice(base, choice, repo, "n1v0")
        new = [e for e in out.elements if e.id != "existing"]
        assert new, "expected the choice to add elements"
        for e in new:
            assert e.id.startswith("n1v0")
            assert e.concept_tag == "backbone"
        assert len(base.elements) == 1  # input untouched

    def test_z_order_rebased_above_existing(self):
        repo, candidates, concept = drawing_setup()
        base = Canvas()
        high = element("existing")
        high.z_order = 7
        base.add_element(high)
        choice = draw_concept("detection", concept, base, candidates,
                              DrawingHistory(), RuleBasedBackend(), repo)
        out = apply_choice(base, choice, repo, "p")
        new = [e for e in out.elements if e.id != "existing"]
        assert all(e.z_order > 7 for e in new)


class TestEvaluate:
    def test_empty_canvas_scores_zero_without_backend(self):
        result = evaluate_canvas(Canvas(), None, Exploding())
        assert result.score == 0.0

    def test_rulebased_coverage_score(self):
        graph = parse_paper(PAPER, RuleBasedBackend())
        canvas = Canvas()
        canvas.add_element(element("e1", tag="backbone"))
        partial = evaluate_canvas(canvas, graph, RuleBasedBackend()).score
        canvas.add_element(element("e2", x=100, tag="feature_pyramid"))
        canvas.add_element(element("e3", x=200, tag="det_head"))
        full = evaluate_canvas(canvas, graph, RuleBasedBackend()).score
        assert 0.0 < partial < full <= 1.0

    def test_out_of_range_score_clamped(self, caplog):
        class Overeager:
            def complete(self, *a, **k):
                return canonical_json({"score": 1.7, "feedback": "great"})

        canvas = Canvas()
        canvas.add_element(element("e1"))
        with caplog.at_level("WARNING"):
            result = evaluate_canvas(canvas, None, Overeager())
        assert result.score == 1.0
        assert any("clamp" in r.message for r in caplog.records)

    def test_unusable_output_raises(self):
        class Garbage:
            def complete(self, *a, **k):
                return "not json"

        canvas = Canvas()
        canvas.add_element(element("e1"))
        with pytest.raises(BackendError):
            evaluate_canvas(canvas, None, Garbage())

    def test_concept_rendering_requires_tagged_elements(self):
        canvas = Canvas()
        canvas.add_element(element("e1", tag="other"))
        with pytest.raises(NoElementsForConceptError):
            evaluate_concept_rendering(canvas, "backbone", RuleBasedBackend())

    def test_concept_rendering_scores(self):
        canvas = Canvas()
        canvas.add_element(element("e1", tag="backbone"))
        result = evaluate_concept_rendering(canvas, "backbone", RuleBasedBackend())
        assert 0.0 <= result.score <= 1.0


class TestRefine:
    def graph(self):
        return parse_paper(PAPER, RuleBasedBackend())

    def canvas(self):
        c = Canvas()
        c.add_element(element("b1", x=63.0, y=118.0, tag="backbone"))
        c.add_element(element("p1", x=301.0, y=122.0, tag="feature_pyramid"))
        c.add_element(element("h1", x=540.0, y=120.0, tag="det_head"))
        return c

    def test_missing_edges_detected(self):
        graph = self.graph()
        c = self.canvas()
        missing = missing_edge_connectors(c, graph)
        assert ("backbone", "feature_pyramid", "features") in missing
        c.add_connector(Connector(id="k1", source="b1", target="p1"))
        missing = missing_edge_connectors(c, graph)
        assert ("backbone", "feature_pyramid", "features") not in missing
        assert ("feature_pyramid", "det_head", "levels") in missing

    def test_refine_snaps_and_connects(self):
        out = refine(self.canvas(), self.graph(), RuleBasedBackend())
        assert out.element("b1").x == 60.0  # snapped to the 20-unit grid
        assert out.element("p1").x == 300.0
        ids = {c.id for c in out.connectors}
        assert "rel_backbone_feature_pyramid" in ids
        assert "rel_feature_pyramid_det_head" in ids
        out.validate()

    def test_refine_failure_returns_input_object(self):
        canvas = self.canvas()
        out = refine(canvas, self.graph(), Exploding())
        assert out is canvas

    def test_refine_does_not_duplicate_existing_connectors(self):
        c = self.canvas()
        c.add_connector(Connector(id="k1", source="b1", target="p1"))
        out = refine(c, self.graph(), RuleBasedBackend())
        pairs = [(k.source, k.target) for k in out.connectors]
        assert pairs.count(("b1", "p1")) == 1

    def test_refine_output_parses_after_serialization(self):
        from figforge.scene import read_mxgraph_xml
        out = refine(self.canvas(), self.graph(), RuleBasedBackend())
        read_mxgraph_xml(out.to_mxgraph_xml()).canvas.validate()


class TestConstructorHelpers:
    def test_mutate_none_when_declined(self):
        class Declines:
            def complete(self, *a, **k):
                return canonical_json({"proposal": None})

        assert constructor_mutate(simple_middleware("m1"), Declines()) is None

    def test_mutate_garbage_raises(self):
        class Garbage:
            def complete(self, *a, **k):
                return "???"

        with pytest.raises(BackendError):
            constructor_mutate(simple_middleware("m1"), Garbage())

    def test_rulebased_mutate_widens_numeric_range(self):
        proposal = constructor_mutate(simple_middleware("m1"), RuleBasedBackend())
        assert proposal is not None
        x = next(p for p in proposal["params"] if p["name"] == "x")
        assert x["constraint"][1] > 1600

    def test_rulebased_crossover_unions_params(self):
        a = simple_middleware("m1")
        b = simple_middleware("m2")
        b.params = [a.params[0].__class__("y", "number", 0.0, [0, 900])]
        proposal = constructor_crossover(a, b, RuleBasedBackend())
        names = {p["name"] for p in proposal["params"]}
        assert names == {"x", "y"}
        assert len(proposal["body"]["instructions"]) == 2

    def test_screen_sanitizes_unknown_ids(self):
        repo = MiddlewareRepository(provider=HashedTrigramEmbedder())
        repo.add(simple_middleware("m1", "detection", "backbone"))
        repo.add(simple_middleware("m2", "detection", "backbone"))

        class Overzealous:
            def complete(self, *a, **k):
                return canonical_json({"remove": ["m2", "ghost"]})

        removed = screen_redundant_middlewares(repo, "detection", "backbone", Overzealous())
        assert removed == ["m2"]
