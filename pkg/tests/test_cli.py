import json

import pytest

from rcuguard.cli import EXIT_BOUNDS, EXIT_FOUND, EXIT_OK, EXIT_USAGE, main
from rcuguard.corpus import corpus_root

POS = str(corpus_root() / "pos/bag_remove.rcu")
NEG = str(corpus_root() / "neg/no_sync_before_free.rcu")
BST = str(corpus_root() / "pos/bst_delete.rcu")
GOLDEN = str(corpus_root() / "golden/bag_remove.golden")


@pytest.fixture(autouse=True)
def _plain(monkeypatch):
    monkeypatch.setenv("RCUGUARD_COLOR", "0")


def test_check_exit_codes(capsys):
    assert main(["check", POS]) == EXIT_OK
    assert "type-checks" in capsys.readouterr().out
    assert main(["check", NEG]) == EXIT_FOUND
    assert "T-Free" in capsys.readouterr().out


def test_check_json_diagnostics(capsys):
    assert main(["check", "--json", NEG]) == EXIT_FOUND
    data = json.loads(capsys.readouterr().out)
    assert data["ok"] is False
    d = next(th["diagnostic"] for th in data["threads"] if not th["ok"])
    assert d["rule"] == "T-Free" and d["span"]["line"] == 11
    assert d["env_before"]["cur"] == "unlinked"


def test_explore_gate_and_unsafe(capsys):
    assert main(["explore", NEG]) == EXIT_FOUND
    assert "does not type-check" in capsys.readouterr().err
    assert main(["explore", "--unsafe", "--json", NEG]) == EXIT_FOUND
    data = json.loads(capsys.readouterr().out)
    assert "UseAfterFree" in {v["reason"] for v in data["violations"]}


def test_explore_safe_and_bounded(capsys):
    assert main(["explore", POS]) == EXIT_OK
    assert "no violations" in capsys.readouterr().out
    assert main(["explore", "--max-steps", "5", POS]) == EXIT_BOUNDS


def test_explore_tree_program(capsys):
    assert main(["explore", "--heap", "4", "--param", "delete.key=7", BST]) == EXIT_OK


def test_run_default_and_schedule_file(tmp_path, capsys):
    assert main(["run", POS]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.splitlines()[0].startswith("<1, ")
    assert "verdict: safe" in out
    bad = tmp_path / "s.txt"
    bad.write_text("ghost")
    assert main(["run", "--schedule", str(bad), POS]) == EXIT_USAGE
    assert "unknown thread" in capsys.readouterr().err


def test_run_json_replay(capsys):
    assert main(["run", "--json", POS]) == EXIT_OK
    data = json.loads(capsys.readouterr().out)
    assert data["verdict"]["safe"] and data["trace"][0]["step"] == 1


def test_annotate_against_golden(tmp_path, capsys):
    assert main(["annotate", "--golden", GOLDEN, POS]) == EXIT_OK
    assert "0 mismatches" in capsys.readouterr().out
    lines = open(GOLDEN).read().splitlines()
    body = [l for l in lines if l.startswith("$assert")]
    wrong = tmp_path / "short.golden"
    wrong.write_text("\n".join(body[:-1]) + "\n")
    assert main(["annotate", "--golden", str(wrong), POS]) == EXIT_FOUND


def test_corpus_static(capsys):
    assert main(["corpus", "--static-only"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") == 15


@pytest.mark.parametrize("argv", [
    [], ["bogus"], ["check"], ["check", "/nonexistent.rcu"],
    ["run", "--param", "oops", POS], ["explore", "--readers", "0", POS],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE


def test_parse_error_points_at_the_file(tmp_path, capsys):
    f = tmp_path / "bad.rcu"
    f.write_text("fields { Next: rcu; }\nroot head;\nwriter w { rcu_write { x = ; } }\n")
    assert main(["check", str(f)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert err.startswith(f"{f}:3:")


def test_bad_seed_heap(tmp_path, capsys):
    h = tmp_path / "h.heap"
    h.write_text("(0, Next=1)\n(1, Next=0)\n")
    assert main(["explore", "--seed-heap", str(h), POS]) == EXIT_USAGE
