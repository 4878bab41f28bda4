"""Retrieval: cosine top-K, backend filtering, theme resolution, embeddings."""

import math
import random

import pytest

from figforge.embeddings import HashedTrigramEmbedder
from figforge.errors import BackendError, DimensionMismatchError, UnknownThemeError
from figforge.repository import MiddlewareRepository
from figforge.retrieval import (
    CandidateSet,
    cosine_similarity,
    filter_candidates,
    resolve_theme,
    retrieve_candidates,
    unit_vector_check,
)
from figforge.rulebased import RuleBasedBackend
from figforge.util import canonical_json

from test_repository import simple_middleware


def repo_with(concepts, theme="detection"):
    repo = MiddlewareRepository(provider=HashedTrigramEmbedder())
    n = 0
    for concept, count in concepts.items():
        for _ in range(count):
            repo.add(simple_middleware(f"m{n}", theme, concept))
            n += 1
    return repo


class TestCosine:
    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_identical_unit(self):
        v = [3 / 5, 4 / 5]
        assert cosine_similarity(v, v) == pytest.approx(1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            cosine_similarity([1.0], [1.0, 0.0])


class TestEmbedder:
    def test_unit_norm(self):
        e = HashedTrigramEmbedder()
        for text in ("attention", "feature pyramid", "x", ""):
            unit_vector_check(e.embed(text))

    def test_deterministic(self):
        e = HashedTrigramEmbedder()
        assert e.embed("backbone") == e.embed("backbone")

    def test_similar_texts_score_higher(self):
        e = HashedTrigramEmbedder()
        q = e.embed("feature pyramid")
        close = cosine_similarity(q, e.embed("feature pyramids"))
        far = cosine_similarity(q, e.embed("margin loss"))
        assert close > far

    def test_identical_text_gives_similarity_one(self):
        e = HashedTrigramEmbedder()
        assert cosine_similarity(e.embed("backbone"), e.embed("backbone")) == pytest.approx(1.0)


class TestRetrieve:
    def test_exact_concept_ranks_first(self):
        repo = repo_with({"backbone": 1, "feature_pyramid": 2, "det_head": 1})
        result = retrieve_candidates(repo, "detection", "feature_pyramid", 2)
        assert result.members[0].source_concept == "feature_pyramid"
        assert result.members[0].similarity == pytest.approx(1.0)

    def test_k_limits_concepts_not_middlewares(self):
        repo = repo_with({"backbone": 3, "det_head": 1})
        result = retrieve_candidates(repo, "detection", "backbone", 1)
        assert len(result.members) == 3  # one concept, all its middlewares
        assert {m.source_concept for m in result.members} == {"backbone"}

    def test_members_sorted_by_similarity_then_concept_then_id(self):
        repo = repo_with({"backbone": 2, "feature_pyramid": 1, "det_head": 1})
        result = retrieve_candidates(repo, "detection", "backbone", 3)
        sims = [m.similarity for m in result.members]
        assert sims == sorted(sims, reverse=True) or len(set(sims)) < len(sims)
        first_ids = [m.middleware_id for m in result.members if m.source_concept == "backbone"]
        assert first_ids == sorted(first_ids)

    def test_unknown_theme(self):
        repo = repo_with({"backbone": 1})
        with pytest.raises(UnknownThemeError):
            retrieve_candidates(repo, "biology", "cell", 1)

    def test_k_must_be_positive(self):
        repo = repo_with({"backbone": 1})
        with pytest.raises(ValueError):
            retrieve_candidates(repo, "detection", "backbone", 0)

    def test_matches_brute_force(self):
        rng = random.Random(42)
        e = HashedTrigramEmbedder()
        words = ["encoder", "decoder", "pyramid", "attention", "anchor", "mask",
                 "loss", "head", "backbone", "fusion", "token", "query"]
        for _ in range(10):
            concepts = rng.sample(words, rng.randint(2, 8))
            repo = repo_with({c: rng.randint(1, 3) for c in concepts})
            query = rng.choice(words)
            k = rng.randint(1, 4)
            got = retrieve_candidates(repo, "detection", query, k)
            target = e.embed(query)
            ranked = sorted(
                concepts,
                key=lambda c: (-cosine_similarity(target, e.embed(c)), c),
            )[:k]
            expected = [
                mid for c in ranked for mid in sorted(repo.entries["detection"][c])
            ]
            assert got.ids() == expected


class TestFilter:
    def make_set(self, n=3):
        from figforge.retrieval import CandidateMember
        return CandidateSet(
            concept="feature_pyramid",
            theme="detection",
            members=[
                CandidateMember(f"mw_{i}", ["feature_pyramid", "backbone", "det_head"][i % 3], 1.0 - 0.1 * i)
                for i in range(n)
            ],
        )

    def test_rulebased_keeps_token_overlap(self):
        cs = self.make_set(3)
        out = filter_candidates(cs, "feature_pyramid", "detection", RuleBasedBackend())
        assert out.members
        assert set(out.ids()) <= set(cs.ids())

    def test_subset_enforced_against_bogus_ids(self):
        class Bogus:
            def complete(self, *a, **k):
                return canonical_json({"keep": ["mw_0", "not_a_candidate"]})

        cs = self.make_set(3)
        out = filter_candidates(cs, "x", "detection", Bogus())
        assert out.ids() == ["mw_0"]

    def test_empty_keep_falls_back_to_top_one(self):
        class Nothing:
            def complete(self, *a, **k):
                return canonical_json({"keep": []})

        cs = self.make_set(3)
        out = filter_candidates(cs, "x", "detection", Nothing())
        assert out.ids() == ["mw_0"]

    def test_backend_failure_returns_unfiltered_copy(self, caplog):
        class Exploding:
            def complete(self, *a, **k):
                raise BackendError("down")

        cs = self.make_set(3)
        with caplog.at_level("WARNING"):
            out = filter_candidates(cs, "x", "detection", Exploding())
        assert out.ids() == cs.ids()
        assert out is not cs and out.members is not cs.members
        assert any("unfiltered" in r.message for r in caplog.records)

    def test_garbage_response_returns_unfiltered(self):
        class Garbage:
            def complete(self, *a, **k):
                return "no json here"

        cs = self.make_set(2)
        out = filter_candidates(cs, "x", "detection", Garbage())
        assert out.ids() == cs.ids()

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            filter_candidates(CandidateSet("c", "t", []), "c", "t", RuleBasedBackend())


class TestResolveTheme:
    def test_exact_match(self):
        repo = repo_with({"backbone": 1}, theme="detection")
        assert resolve_theme(repo, "detection") == "detection"

    def test_nearest_fallback(self):
        repo = MiddlewareRepository(provider=HashedTrigramEmbedder())
        repo.add(simple_middleware("m1", "object detection", "backbone"))
        repo.add(simple_middleware("m2", "semantic segmentation", "encoder"))
        assert resolve_theme(repo, "detection methods") == "object detection"

    def test_empty_repository(self):
        repo = MiddlewareRepository(provider=HashedTrigramEmbedder())
        with pytest.raises(UnknownThemeError):
            resolve_theme(repo, "anything")


class TestUnitVectorCheck:
    def test_accepts_unit(self):
        unit_vector_check([1.0, 0.0, 0.0])

    def test_rejects_non_unit(self):
        with pytest.raises(DimensionMismatchError):
            unit_vector_check([1.0, 1.0])
