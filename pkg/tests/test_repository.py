"""Repository index: storage, usage stats, persistence, merging, creation."""

import pytest

from figforge.embeddings import HashedTrigramEmbedder
from figforge.errors import (
    BackendError,
    CorruptFileError,
    DuplicateIdError,
    ScoreRangeError,
    UnknownMiddlewareError,
    VersionMismatchError,
)
from figforge.repository import (
    Middleware,
    MiddlewareRepository,
    Provenance,
    create_from_pair,
    middleware_from_proposal,
)
from figforge.rulebased import RuleBasedBackend
from figforge.scene import Canvas, SceneElement, StyleSpec
from figforge.template import MiddlewareBody, ParamSpec, ShapeInstruction


def simple_middleware(mid, theme="detection", concept="backbone", name=None):
    return Middleware(
        id=mid,
        name=name or mid,
        theme=theme,
        concept=concept,
        params=[ParamSpec("x", "number", 0.0, [0, 1600])],
        body=MiddlewareBody([
            ShapeInstruction(shape="rect", x="x", y="0", width="80", height="40")
        ]),
    )


def fresh_repo():
    return MiddlewareRepository(provider=HashedTrigramEmbedder())


class TestStorage:
    def test_add_get_len(self):
        repo = fresh_repo()
        repo.add(simple_middleware("m1"))
        assert repo.get("m1").id == "m1"
        assert len(repo) == 1
        assert not repo.is_empty()

    def test_duplicate_id_rejected(self):
        repo = fresh_repo()
        repo.add(simple_middleware("m1"))
        with pytest.raises(DuplicateIdError):
            repo.add(simple_middleware("m1"))

    def test_unknown_id(self):
        with pytest.raises(UnknownMiddlewareError):
            fresh_repo().get("ghost")

    def test_index_layout(self):
        repo = fresh_repo()
        repo.add(simple_middleware("m1", "detection", "backbone"))
        repo.add(simple_middleware("m2", "detection", "backbone"))
        repo.add(simple_middleware("m3", "segmentation", "encoder"))
        assert repo.themes() == ["detection", "segmentation"]
        assert repo.concepts("detection") == ["backbone"]
        assert repo.middleware_ids("detection", "backbone") == ["m1", "m2"]

    def test_delete_prunes_empty_entries(self):
        repo = fresh_repo()
        repo.add(simple_middleware("m1", "detection", "backbone"))
        repo.add(simple_middleware("m2", "detection", "head", name="head"))
        repo.delete("m1")
        assert repo.concepts("detection") == ["head"]
        repo.delete("m2")
        assert repo.themes() == []
        assert repo.is_empty()

    def test_concept_embedding_registered(self):
        repo = fresh_repo()
        repo.add(simple_middleware("m1", concept="feature_pyramid"))
        assert "feature_pyramid" in repo.concept_embeddings
        vec = repo.concept_embeddings["feature_pyramid"]
        assert abs(sum(v * v for v in vec) - 1.0) < 1e-6


class TestUsageStats:
    def test_mes_undefined_before_use(self):
        mw = simple_middleware("m1")
        assert mw.mes() is None

    def test_record_usage_accumulates(self):
        repo = fresh_repo()
        repo.add(simple_middleware("m1"))
        repo.record_usage("m1", 0.9)
        repo.record_usage("m1", 0.9)
        repo.record_usage("m1", 0.6)
        mw = repo.get("m1")
        assert mw.usage_N == 3
        assert mw.usage_S == pytest.approx(2.4)
        assert mw.mes() == pytest.approx(0.8)

    def test_score_range_enforced(self):
        repo = fresh_repo()
        repo.add(simple_middleware("m1"))
        for bad in (-0.1, 1.5, float("nan")):
            with pytest.raises(ScoreRangeError):
                repo.record_usage("m1", bad)

    def test_unknown_target(self):
        with pytest.raises(UnknownMiddlewareError):
            fresh_repo().record_usage("ghost", 0.5)

    def test_stats_survive_persistence(self, tmp_path):
        repo = fresh_repo()
        repo.add(simple_middleware("m1"))
        repo.record_usage("m1", 0.7)
        path = tmp_path / "repo.json"
        repo.save(path)
        loaded = MiddlewareRepository.load(path, provider=HashedTrigramEmbedder())
        assert loaded.get("m1").usage_S == pytest.approx(0.7)
        assert loaded.get("m1").usage_N == 1


class TestPersistence:
    def test_roundtrip_canonical_equality(self, tmp_path):
        repo = fresh_repo()
        repo.add(simple_middleware("m1", "detection", "backbone"))
        repo.add(simple_middleware("m2", "segmentation", "encoder"))
        path = tmp_path / "repo.json"
        repo.save(path)
        loaded = MiddlewareRepository.load(path, provider=HashedTrigramEmbedder())
        assert repo.canonically_equal(loaded)

    def test_version_mismatch(self):
        data = fresh_repo().to_dict()
        data["schema_version"] = 99
        with pytest.raises(VersionMismatchError):
            MiddlewareRepository.from_dict(data, provider=HashedTrigramEmbedder())

    def test_corrupt_json(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(CorruptFileError):
            MiddlewareRepository.load(path, provider=HashedTrigramEmbedder())

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorruptFileError):
            MiddlewareRepository.load(tmp_path / "absent.json", provider=HashedTrigramEmbedder())

    def test_orphan_middleware_detected(self):
        repo = fresh_repo()
        repo.add(simple_middleware("m1"))
        data = repo.to_dict()
        data["entries"]["detection"]["backbone"] = []
        with pytest.raises(CorruptFileError):
            MiddlewareRepository.from_dict(data, provider=HashedTrigramEmbedder())

    def test_entry_field_mismatch_detected(self):
        repo = fresh_repo()
        repo.add(simple_middleware("m1"))
        data = repo.to_dict()
        data["middlewares"]["m1"]["concept"] = "other"
        with pytest.raises(CorruptFileError):
            MiddlewareRepository.from_dict(data, provider=HashedTrigramEmbedder())

    def test_snapshot_restore_roundtrip(self):
        repo = fresh_repo()
        repo.add(simple_middleware("m1"))
        snapshot = repo.to_dict()
        repo.add(simple_middleware("m2"))
        repo.record_usage("m1", 0.4)
        repo.restore(snapshot)
        assert len(repo) == 1
        assert repo.get("m1").usage_N == 0
        rebuilt = MiddlewareRepository.from_dict(snapshot, provider=HashedTrigramEmbedder())
        assert repo.canonically_equal(rebuilt)


class TestMerge:
    def test_near_duplicate_concepts_unify(self):
        repo = fresh_repo()
        repo.add(simple_middleware("m1", "detection", "feature pyramid"))
        repo.add(simple_middleware("m2", "detection", "feature pyramids"))
        log = repo.merge(similarity_threshold=0.85)
        assert log, "expected at least one merge log line"
        assert len(repo.concepts("detection")) == 1
        [winner] = repo.concepts("detection")
        assert sorted(repo.middleware_ids("detection", winner)) == ["m1", "m2"]
        assert repo.get("m1").concept == winner
        assert repo.get("m2").concept == winner

    def test_canonical_name_prefers_larger_entry(self):
        repo = fresh_repo()
        repo.add(simple_middleware("m1", "detection", "feature pyramid"))
        repo.add(simple_middleware("m2", "detection", "feature pyramids"))
        repo.add(simple_middleware("m3", "detection", "feature pyramids"))
        repo.merge(similarity_threshold=0.85)
        assert repo.concepts("detection") == ["feature pyramids"]

    def test_distinct_concepts_untouched(self):
        repo = fresh_repo()
        repo.add(simple_middleware("m1", "detection", "backbone"))
        repo.add(simple_middleware("m2", "detection", "margin loss"))
        before = repo.to_dict()
        repo.merge(similarity_threshold=0.85)
        assert repo.to_dict() == before

    def test_merge_is_idempotent(self):
        repo = fresh_repo()
        repo.add(simple_middleware("m1", "detection", "feature pyramid"))
        repo.add(simple_middleware("m2", "detection", "feature pyramids"))
        repo.add(simple_middleware("m3", "detection", "backbone"))
        repo.merge(similarity_threshold=0.85)
        once = repo.to_dict()
        repo.merge(similarity_threshold=0.85)
        assert repo.to_dict() == once

    def test_screening_drops_exact_duplicates_but_keeps_one(self):
        repo = fresh_repo()
        repo.add(simple_middleware("m1", "detection", "feature pyramid"))
        repo.add(simple_middleware("m2", "detection", "feature pyramids"))
        repo.merge(similarity_threshold=0.85, constructor_backend=RuleBasedBackend())
        [winner] = repo.concepts("detection")
        ids = repo.middleware_ids("detection", winner)
        assert len(ids) == 1  # identical body+params collapse to one
        assert len(repo) == 1

    def test_backend_failure_aborts_and_restores(self):
        class Exploding:
            def complete(self, *a, **k):
                raise BackendError("boom")

        repo = fresh_repo()
        repo.add(simple_middleware("m1", "detection", "feature pyramid"))
        repo.add(simple_middleware("m2", "detection", "feature pyramids"))
        before = repo.to_dict()
        with pytest.raises(BackendError):
            repo.merge(similarity_threshold=0.85, constructor_backend=Exploding())
        assert repo.to_dict() == before

    def test_cross_theme_never_merges(self):
        repo = fresh_repo()
        repo.add(simple_middleware("m1", "detection", "encoder"))
        repo.add(simple_middleware("m2", "segmentation", "encoder"))
        repo.merge(similarity_threshold=0.85)
        assert repo.themes() == ["detection", "segmentation"]


class TestCreation:
    def test_proposal_to_middleware(self):
        proposal = {
            "name": "Block",
            "params": [{"name": "x", "kind": "number", "default": 0, "constraint": [0, 100]}],
            "body": {"instructions": [
                {"op": "shape", "shape": "rect", "x": "x", "y": "0", "width": "40", "height": "20"}
            ]},
        }
        mw = middleware_from_proposal(
            proposal, "mw_1", "detection", "backbone", Provenance("extracted", ["p1"]),
        )
        assert mw.id == "mw_1"
        assert mw.usage_N == 0 and mw.usage_S == 0.0
        assert mw.provenance.kind == "extracted"

    def test_create_from_pair_with_figure(self):
        from figforge.agents import parse_paper

        text = (
            "theme: detection\n"
            "concept: backbone | conv stack\n"
            "concept: feature_pyramid | multi scale pyramid\n"
        )
        canvas = Canvas()
        for i, label in enumerate(["A", "B", "C"]):
            canvas.add_element(SceneElement(
                id=f"e{i}", kind="rect", x=i * 100.0, y=0.0, width=80.0, height=40.0,
                label=label, style=StyleSpec(),
            ))
        backend = RuleBasedBackend()
        graph = parse_paper(text, backend)
        report = create_from_pair(text, canvas, "detection", graph.concepts, backend, "p9")
        ids = [m.id for m in report.middlewares]
        assert ids == ["mw_p9_backbone_0", "mw_p9_feature_pyramid_0"]
        assert report.problems == []
        for mw in report.middlewares:
            mw.validate()
            assert mw.provenance.sources == ["p9"]

    def test_create_from_blank_figure_yields_nothing(self):
        from figforge.agents import parse_paper

        text = "theme: detection\nconcept: backbone | conv stack\n"
        backend = RuleBasedBackend()
        graph = parse_paper(text, backend)
        report = create_from_pair(text, Canvas(), "detection", graph.concepts, backend, "p0")
        assert report.middlewares == []

    def test_has_source_paper(self):
        repo = fresh_repo()
        mw = simple_middleware("m1")
        mw.provenance = Provenance("extracted", ["paper_7"])
        repo.add(mw)
        assert repo.has_source_paper("paper_7")
        assert not repo.has_source_paper("paper_8")
