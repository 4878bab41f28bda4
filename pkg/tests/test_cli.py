"""Command-line interface: argument handling, exit codes, artifact layout."""

import json
from pathlib import Path

import pytest

from figforge.cli import main
from figforge.embeddings import HashedTrigramEmbedder
from figforge.repository import MiddlewareRepository

ROOT = Path(__file__).resolve().parent.parent
CORPUS = ROOT / "fixtures" / "corpus"
DEMO_PAPER = ROOT / "fixtures" / "demo_paper.txt"
SCRIPTED = ROOT / "fixtures" / "scripted"


@pytest.fixture
def workspace(tmp_path):
    return {
        "store": str(tmp_path / "store.json"),
        "repo": str(tmp_path / "repository.json"),
        "out": str(tmp_path / "out"),
    }


def run_chain(ws, capsys):
    assert main(["ingest", str(CORPUS), "--store", ws["store"]]) == 0
    assert main(["build-repo", "--store", ws["store"], "--repo", ws["repo"]]) == 0
    capsys.readouterr()


class TestExitCodes:
    def test_help_exits_zero(self, capsys):
        assert main(["--help"]) == 0
        assert "ingest" in capsys.readouterr().out

    def test_unknown_flag_exits_two(self, capsys):
        assert main(["ingest", str(CORPUS), "--bogus"]) == 2

    def test_missing_subcommand_exits_two(self, capsys):
        assert main([]) == 2

    def test_missing_corpus_dir_exits_two(self, workspace, capsys):
        assert main(["ingest", "/nonexistent/corpus", "--store", workspace["store"]]) == 2

    def test_missing_store_exits_two(self, workspace, capsys):
        assert main(["build-repo", "--store", "/nonexistent/store.json",
                     "--repo", workspace["repo"]]) == 2

    def test_missing_repo_exits_two(self, workspace, capsys):
        assert main(["stats", "--repo", "/nonexistent/repo.json"]) == 2

    def test_scripted_backend_needs_fixtures(self, workspace, capsys):
        assert main(["ingest", str(CORPUS), "--store", workspace["store"],
                     "--backend", "scripted"]) == 2

    def test_scripted_backend_needs_existing_dir(self, workspace, capsys):
        assert main(["ingest", str(CORPUS), "--store", workspace["store"],
                     "--backend", "scripted", "--fixtures", "/nonexistent"]) == 2

    def test_remote_backend_needs_endpoint_and_model(self, workspace, capsys):
        assert main(["ingest", str(CORPUS), "--store", workspace["store"],
                     "--backend", "remote"]) == 2

    def test_corrupt_repo_exits_one(self, workspace, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{", encoding="utf-8")
        assert main(["stats", "--repo", str(bad)]) == 1


class TestIngestCommand:
    def test_writes_store_and_reports(self, workspace, capsys):
        code = main(["ingest", str(CORPUS), "--store", workspace["store"]])
        assert code == 0
        out = capsys.readouterr().out
        assert "4 pairs (4 accepted)" in out
        data = json.loads(Path(workspace["store"]).read_text(encoding="utf-8"))
        assert sorted(data["pairs"]) == [
            "cls_margin", "det_anchor", "det_pyramid", "seg_attention",
        ]

    def test_threshold_flag_filters(self, workspace, capsys):
        main(["ingest", str(CORPUS), "--store", workspace["store"], "--threshold", "1.0"])
        assert "(0 accepted)" in capsys.readouterr().out


class TestBuildAndStats:
    def test_build_then_stats(self, workspace, capsys):
        run_chain(workspace, capsys)
        repo = MiddlewareRepository.load(workspace["repo"], provider=HashedTrigramEmbedder())
        assert len(repo) > 0
        assert main(["stats", "--repo", workspace["repo"]]) == 0
        out = capsys.readouterr().out
        for theme, concept, mid, mes, count in repo.mes_overview():
            assert mid in out
        assert " - " in out or "-" in out  # unused middlewares show no score


class TestGenerateCommand:
    def test_generates_artifacts(self, workspace, capsys):
        run_chain(workspace, capsys)
        code = main(["generate", "--repo", workspace["repo"], "--paper", str(DEMO_PAPER),
                     "--out", workspace["out"], "--seed", "7", "--a1", "2", "--a2", "1"])
        assert code == 0
        out_dir = Path(workspace["out"])
        for name in ("figure.drawio", "figure.svg", "manifest.json", "tree.json"):
            assert (out_dir / name).exists(), name
        assert "elements" in capsys.readouterr().out

    def test_missing_paper_exits_two(self, workspace, capsys):
        run_chain(workspace, capsys)
        assert main(["generate", "--repo", workspace["repo"],
                     "--paper", "/nonexistent/paper.txt"]) == 2

    def test_scripted_backend_replays_recorded_run(self, workspace, tmp_path, capsys):
        code = main([
            "generate", "--repo", str(ROOT / "fixtures" / "repository.json"),
            "--paper", str(DEMO_PAPER), "--backend", "scripted",
            "--fixtures", str(SCRIPTED), "--seed", "7",
            "--out", str(tmp_path / "replay"),
        ])
        assert code == 0
        manifest = json.loads((tmp_path / "replay" / "manifest.json").read_text())
        assert manifest["seed"] == 7


class TestEvolveCommand:
    def test_zero_iterations_keep_repo_bytes(self, workspace, capsys):
        run_chain(workspace, capsys)
        before = Path(workspace["repo"]).read_bytes()
        code = main(["evolve", "--repo", workspace["repo"], "--store", workspace["store"],
                     "--iterations", "0", "--out", workspace["out"]])
        assert code == 0
        assert Path(workspace["repo"]).read_bytes() == before

    def test_evolve_writes_report(self, workspace, capsys):
        run_chain(workspace, capsys)
        code = main(["evolve", "--repo", workspace["repo"], "--store", workspace["store"],
                     "--iterations", "1", "--batch-size", "2", "--out", workspace["out"],
                     "--a1", "2", "--a2", "1", "--seed", "3"])
        assert code == 0
        report = Path(workspace["out"]) / "evolution_report.txt"
        assert report.exists()
        text = report.read_text(encoding="utf-8")
        assert "iteration 0:" in text and "lineage:" in text
        assert "iterations" in capsys.readouterr().out
