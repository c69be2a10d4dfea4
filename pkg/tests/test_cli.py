from __future__ import annotations

import io
import json

import pytest

from memkeeper.cli import RunConfig, build_classifier, main, resolve_config
from memkeeper.dataset import load_episodes
from memkeeper.errors import ConfigError


def run(argv, stdin=""):
    out = io.StringIO()
    code = main(argv, stdin=io.StringIO(stdin), stdout=out)
    return code, out.getvalue()


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for key in ("MEMKEEPER_CONFIG", "MEMKEEPER_CLASSIFIER", "MEMKEEPER_K", "MEMKEEPER_POLICY",
                "MEMKEEPER_GENERATOR_URL", "MEMKEEPER_SUMMARIZER_URL"):
        monkeypatch.delenv(key, raising=False)


@pytest.fixture
def pairs_file(tmp_path):
    p = tmp_path / "pairs.jsonl"
    rows = [
        {"m": "Couldn't sleep well", "s": "Sleeping well after taking sleeping tablets", "gold": "REPLACE"},
        {"m": "Goes hiking every weekend", "s": "Goes hiking", "gold": "PASS"},
        {"m": "Has a dog", "s": "The dog likes carrots", "gold": "APPEND"},
        {"m": "Had sore throat", "s": "Throat is fully recovered", "gold": "DELETE"},
        {"m": "a", "s": "b", "gold": "FUSION"},
    ]
    p.write_text("".join(json.dumps(r) + "\n" for r in rows))
    return str(p)


class TestConfig:
    def test_defaults(self):
        cfg = resolve_config({}, env={})
        assert (cfg.k, cfg.margin, cfg.classifier) == (5, 0.2, "heuristic")

    def test_precedence(self, tmp_path):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"k": 2, "margin": 0.5, "seed": 9}))
        cfg = resolve_config({"k": 4}, env={"MEMKEEPER_CONFIG": str(conf), "MEMKEEPER_K": "3",
                                            "MEMKEEPER_MARGIN": "0.3"})
        assert cfg.k == 4 and cfg.margin == 0.3 and cfg.seed == 9

    def test_invalid_k(self):
        with pytest.raises(ConfigError):
            resolve_config({"k": 0}, env={})

    def test_unknown_backend(self):
        with pytest.raises(ConfigError):
            resolve_config({"classifier": "magic"}, env={})

    def test_backend_needs_target(self):
        with pytest.raises(ConfigError):
            resolve_config({"classifier": "remote:"}, env={})

    def test_unknown_config_key(self, tmp_path):
        conf = tmp_path / "c.json"
        conf.write_text(json.dumps({"colour": "red"}))
        with pytest.raises(ConfigError):
            resolve_config({}, env={}, config_path=str(conf))

    def test_noise_wraps(self):
        from memkeeper.classify import NoisyClassifier
        assert isinstance(build_classifier(RunConfig(noise=0.1)), NoisyClassifier)

    def test_bad_config_exit_code(self):
        assert run(["classify", "a", "b", "--k", "0"])[0] == 1


class TestClassify:
    def test_heuristic_identity(self):
        code, out = run(["classify", "x", "x", "--classifier", "heuristic"])
        assert code == 0 and out.split("\t")[0] == "PASS"
        assert "heuristic" in out

    def test_table_backend(self, pairs_file):
        code, out = run(["classify", "Couldn't sleep well", "Sleeping well after taking sleeping tablets",
                         "--classifier", f"table:{pairs_file}"])
        assert code == 0 and out.startswith("REPLACE")

    def test_remote_unreachable(self):
        code, _ = run(["classify", "a", "b", "--classifier", "remote:http://127.0.0.1:9/x", "--timeout-ms", "500",
                       "--retries", "0"])
        assert code == 2


class TestUpdate:
    def test_covid_diff(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps(["Haven't got COVID tested yet"]))
        (tmp_path / "s.json").write_text(json.dumps(["Just got positive results from COVID test"]))
        (tmp_path / "p.jsonl").write_text(json.dumps(
            {"m": "Haven't got COVID tested yet", "s": "Just got positive results from COVID test",
             "gold": "REPLACE"}) + "\n")
        code, out = run(["update", str(tmp_path / "m.json"), str(tmp_path / "s.json"),
                         "--classifier", f"table:{tmp_path / 'p.jsonl'}"])
        assert code == 0
        json_part, diff = out.split("\n]\n", 1)
        assert [s["text"] for s in json.loads(json_part + "]")] == ["Just got positive results from COVID test"]
        assert sum("REPLACED" in line for line in diff.splitlines()) == 1
        assert "time=" in diff

    def test_empty_summary(self, tmp_path):
        (tmp_path / "m.txt").write_text("Has a dog\nGoes hiking\n")
        (tmp_path / "s.txt").write_text("")
        out_path = tmp_path / "new.json"
        code, out = run(["update", str(tmp_path / "m.txt"), str(tmp_path / "s.txt"), "--out", str(out_path)])
        assert code == 0
        assert [s["text"] for s in json.loads(out_path.read_text())] == ["Has a dog", "Goes hiking"]
        assert not [line for line in out.splitlines() if line[:1] in "-+x="]

    def test_schema_error(self, tmp_path):
        (tmp_path / "m.json").write_text("[1, 2]")
        (tmp_path / "s.json").write_text("[]")
        assert run(["update", str(tmp_path / "m.json"), str(tmp_path / "s.json")])[0] == 1

    def test_missing_file(self, tmp_path):
        assert run(["update", str(tmp_path / "nope"), str(tmp_path / "nope")])[0] == 1

    def test_fifty_by_fifty(self, tmp_path):
        (tmp_path / "m.json").write_text(json.dumps([f"memory fact number {i}" for i in range(50)]))
        (tmp_path / "s.json").write_text(json.dumps([f"summary item {i} today" for i in range(50)]))
        code, out = run(["update", str(tmp_path / "m.json"), str(tmp_path / "s.json")])
        assert code == 0
        assert "calls=2500" in out.splitlines()[-1]


class TestDataCommands:
    def test_synth_deterministic(self, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert run(["synth", "--episodes", "4", "--seed", "7", "--out", str(a)])[0] == 0
        assert run(["synth", "--episodes", "4", "--seed", "7", "--out", str(b)])[0] == 0
        assert a.read_bytes() == b.read_bytes()
        assert len(load_episodes(str(a))) == 4

    def test_synth_stdout_loads(self, tmp_path):
        code, out = run(["synth", "--episodes", "2", "--seed", "1"])
        p = tmp_path / "s.jsonl"
        p.write_text(out)
        assert len(load_episodes(str(p))) == 2

    def test_replay_gold(self, tmp_path):
        data = tmp_path / "d.jsonl"
        run(["synth", "--episodes", "10", "--seed", "3", "--out", str(data)])
        code, out = run(["replay", str(data), "--policy", "MEMORY_UPDATE", "--classifier", "gold"])
        assert code == 0
        assert out.strip().splitlines()[-1].split()[1] == "1.0000"

    def test_replay_json_report(self, tmp_path):
        data = tmp_path / "d.jsonl"
        run(["synth", "--episodes", "5", "--seed", "3", "--out", str(data)])
        rep = tmp_path / "r.json"
        code, _ = run(["replay", str(data), "--policy", "accumulate", "--out", str(rep), "--workers", "2"])
        assert code == 0
        assert set(json.loads(rep.read_text())["by_session"]) == {"2", "3", "4", "5"}

    def test_replay_missing_gold(self, tmp_path):
        p = tmp_path / "e.jsonl"
        p.write_text(json.dumps({"episode_id": "x", "sessions": [
            {"index": 1, "turns": [], "memory_after": []},
            {"index": 2, "turns": []}]}) + "\n")
        assert run(["replay", str(p), "--policy", "accumulate"])[0] == 1

    def test_stats(self, tmp_path):
        data = tmp_path / "d.jsonl"
        run(["synth", "--episodes", "3", "--seed", "3", "--out", str(data)])
        code, out = run(["stats", str(data), "--json"])
        assert code == 0 and json.loads(out)["sessions"] == 15

    def test_eval_confusion(self, pairs_file):
        code, out = run(["eval", pairs_file, "--classifier", "heuristic"])
        assert code == 0
        first = out.splitlines()[0]
        assert first.startswith("accuracy") and "on 4 pairs" in first and "1 FUSION" in first
        # heuristic: PASS right, APPEND right, REPLACE and DELETE pairs both predicted APPEND
        assert "accuracy 0.5000" in first

    def test_labels(self, pairs_file):
        code, out = run(["labels", pairs_file])
        assert code == 0 and json.loads(out)["fusion_excluded"] == 1

    def test_metrics(self, tmp_path):
        (tmp_path / "c.txt").write_text("a b c d\n")
        (tmp_path / "r.txt").write_text("a b x d\n")
        code, out = run(["metrics", str(tmp_path / "c.txt"), str(tmp_path / "r.txt")])
        assert code == 0 and json.loads(out)["bleu2"] == pytest.approx(0.5)

    def test_triplets_and_retrieve(self, tmp_path):
        (tmp_path / "t.jsonl").write_text(json.dumps(
            {"context_turns": ["hello there"], "positive": "hello there", "negative": "zzzz"}) + "\n")
        code, out = run(["triplets", str(tmp_path / "t.jsonl")])
        assert code == 0 and json.loads(out)["mean_loss"] == 0.0
        (tmp_path / "m.txt").write_text("Has a dog\nBack hurts\n")
        code, out = run(["retrieve", str(tmp_path / "m.txt"), "--turn", "Has a dog", "--k", "1"])
        assert code == 0 and out.strip().endswith("Has a dog") and len(out.strip().splitlines()) == 1


class TestSession:
    def test_mem_empty(self):
        code, out = run(["session", "--policy", "accumulate"], ":mem\n:quit\n")
        assert code == 0 and "(empty)" in out

    def test_end_after_two_turns(self):
        code, out = run(["session", "--policy", "accumulate"], "I have a dog\nI like tea\n:end\n:quit\n")
        assert code == 0
        summary = out.split("summary:\n", 1)[1].split("memory:\n")[0]
        assert summary.split() == "I have a dog I like tea".split()
        assert "bot: You said: I like tea" in out

    def test_three_sessions_persist_and_load(self, tmp_path):
        script = "Has a sore throat\n:end\nGoes hiking\n:mem\n:end\nThroat is better\n:end\n:quit\n"
        code, out = run(["session", "--policy", "update", "--log-dir", str(tmp_path), "--episode-id", "manual"],
                        script)
        assert code == 0
        (ep,) = load_episodes(str(tmp_path / "manual"))
        assert len(ep.sessions) == 3
        assert ep.sessions[2].memory_after.texts[-1] == "Throat is better"

    def test_quit_closes_open_session(self, tmp_path):
        code, _ = run(["session", "--policy", "accumulate", "--log-dir", str(tmp_path), "--episode-id", "q"],
                      "hello\n:quit\n")
        assert code == 0
        (ep,) = load_episodes(str(tmp_path / "q"))
        assert len(ep.sessions) == 1 and ep.sessions[0].closed

    def test_endpoint_failure_inline(self):
        code, out = run(["session", "--policy", "accumulate", "--generator-url", "http://127.0.0.1:9/g",
                         "--timeout-ms", "300", "--retries", "0"], "hello\n:quit\n")
        assert "error:" in out
