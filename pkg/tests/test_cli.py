from __future__ import annotations

import json
import subprocess
import sys

import httpx
import pytest
from helpers import chat_completion, install_fake_server
from PIL import Image

from gveval.cli import main
from gveval.runs import read_outcomes


def run_mock(synthetic_dir, *extra):
    return main(["evaluate", str(synthetic_dir / "corpus.jsonl"), "--mock", str(synthetic_dir / "mock.json"), *extra])


def test_help_and_bad_flags(capsys):
    with pytest.raises(SystemExit) as exit_:
        main(["--help"])
    assert exit_.value.code == 0
    assert "evaluate" in capsys.readouterr().out
    with pytest.raises(SystemExit) as exit_:
        main(["evaluate", "--no-such-flag"])
    assert exit_.value.code == 1
    with pytest.raises(SystemExit) as exit_:
        main([])
    assert exit_.value.code == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "gveval", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("gveval ")


def test_evaluate_mock(synthetic_dir, tmp_path, capsys):
    assert run_mock(synthetic_dir, "--out", "run") == 0
    lines = read_outcomes(tmp_path / "run" / "outcomes.jsonl")
    golden = json.loads((synthetic_dir / "golden.json").read_text())
    assert [line["id"] for line in lines] == sorted(golden["expected_scores"])
    for line in lines:
        assert line["expected_score"] == pytest.approx(golden["expected_scores"][line["id"]], abs=1e-9)
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["config"]["mode"] == "combined"
    assert manifest["stats"]["evaluated"] == 20 and manifest["stats"]["backend_calls"] == 20
    assert len(manifest["template_checksums"]) == 11
    assert "estimated tokens" in capsys.readouterr().err


def test_evaluate_no_expected(synthetic_dir, tmp_path):
    assert run_mock(synthetic_dir, "--out", "run", "--no-expected", "--no-cache") == 0
    for line in read_outcomes(tmp_path / "run" / "outcomes.jsonl"):
        assert line["expected_score"] == line["raw_score"] and line["score_source"] == "raw"
    assert not (tmp_path / ".gveval-cache").exists()


def test_evaluate_rejects_invalid_records(tmp_path, capsys):
    corpus = tmp_path / "c.jsonl"
    corpus.write_text(
        json.dumps({"id": "a", "caption": "A dog.", "references": ["r"]}) + "\n"
        + json.dumps({"id": "b", "caption": "A cat.", "references": []}) + "\n"
    )
    fixture = tmp_path / "mock.json"
    fixture.write_text(json.dumps([{"match": "default", "response": {"text": "$5$"}}]))
    code = main(["evaluate", str(corpus), "--mode", "ref-only", "--mock", str(fixture), "--out", "run"])
    assert code == 1
    assert "invalid record b" in capsys.readouterr().err
    assert not (tmp_path / "run").exists()


def test_evaluate_partial_failure(synthetic_dir, tmp_path):
    fixture = json.loads((synthetic_dir / "mock.json").read_text())
    (tmp_path / "partial.json").write_text(json.dumps(fixture[:15]))
    code = main(["evaluate", str(synthetic_dir / "corpus.jsonl"), "--mock", "partial.json", "--out", "run"])
    assert code == 2
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["stats"]["failed"] == 5
    assert {f["error"] for f in manifest["failures"]} == {"UnknownRequest"}


def test_bad_fixture_is_usage_error(synthetic_dir, tmp_path):
    (tmp_path / "bad.json").write_text("{")
    assert main(["evaluate", str(synthetic_dir / "corpus.jsonl"), "--mock", "bad.json"]) == 1


def test_missing_api_key(synthetic_dir, capsys):
    assert main(["evaluate", str(synthetic_dir / "corpus.jsonl"), "--limit", "1"]) == 1
    assert "OPENAI_API_KEY" in capsys.readouterr().err


def test_budget_guard(synthetic_dir, monkeypatch, capsys):
    monkeypatch.setenv("OPENAI_API_KEY", "sk-fake")
    seen = install_fake_server(monkeypatch, lambda r: httpx.Response(200, json=chat_completion("70", {"70": 1.0})))
    args = ["evaluate", str(synthetic_dir / "corpus.jsonl"), "--token-ceiling", "100", "--out", "run"]
    assert main(args) == 1
    assert "--yes" in capsys.readouterr().err and not seen
    assert main([*args, "--yes"]) == 0
    assert len(seen) == 20


def test_live_errors_map_to_exit_codes(synthetic_dir, monkeypatch):
    monkeypatch.setenv("OPENAI_API_KEY", "sk-fake")
    base = ["evaluate", str(synthetic_dir / "corpus.jsonl"), "--limit", "3", "--max-retries", "1", "--no-cache"]
    seen = install_fake_server(monkeypatch, lambda r: httpx.Response(401))
    assert main([*base, "--out", "auth"]) == 3
    assert len(seen) == 1
    install_fake_server(monkeypatch, lambda r: httpx.Response(503))
    assert main([*base, "--out", "down"]) == 3


def test_smoke_against_fake_server(synthetic_dir, monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("OPENAI_API_KEY", "sk-fake")
    seen = install_fake_server(monkeypatch, lambda r: httpx.Response(200, json=chat_completion("72", {"72": 0.7, "75": 0.3})))
    assert main(["evaluate", str(synthetic_dir / "corpus.jsonl"), "--smoke", "--out", "smoke"]) == 0
    assert len(seen) == 10
    assert "smoke check passed" in capsys.readouterr().out
    body = json.loads(seen[0].content)
    assert body["logprobs"] is True and body["top_logprobs"] == 20
    lines = read_outcomes(tmp_path / "smoke" / "outcomes.jsonl")
    assert len(lines) == 10 and all(line["expected_score"] == pytest.approx(72.9) for line in lines)


def test_config_file_and_env(synthetic_dir, tmp_path, monkeypatch):
    (tmp_path / "cfg.json").write_text(json.dumps({"cache_dir": "from-file", "eval": {"mode": "ref-only"}}))
    monkeypatch.setenv("GVEVAL_MODEL_ID", "env-model")
    code = run_mock(synthetic_dir, "--config", "cfg.json", "--out", "run", "--limit", "2")
    # ref-only prompts differ from the fixture's combined prompts, so nothing matches
    assert code == 3
    manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert manifest["config"]["mode"] == "ref-only"
    assert manifest["settings"]["cache_dir"] == "from-file" and manifest["model_id"] == "env-model"


def test_correlate_golden(synthetic_dir, capsys):
    assert run_mock(synthetic_dir, "--out", "run") == 0
    capsys.readouterr()
    assert main(["correlate", "run/outcomes.jsonl", str(synthetic_dir / "corpus.jsonl"), "--style", "csv"]) == 0
    out = capsys.readouterr().out.splitlines()
    golden = json.loads((synthetic_dir / "golden.json").read_text())
    fields = out[1].split(",")
    assert fields[1] == "G-VEval" and fields[3] == "20"
    assert abs(float(fields[4]) - golden["tau_b"]) <= 1e-9
    assert abs(float(fields[5]) - golden["tau_c"]) <= 1e-9
    assert main(["correlate", "run/outcomes.jsonl", str(synthetic_dir / "corpus.jsonl"), "--with-precomputed",
                 "--dataset", "Synthetic"]) == 0
    table = capsys.readouterr().out
    assert {"BLEU-4", "CIDEr", "G-VEval"} <= {line.split()[0] for line in table.splitlines()[2:]}


def test_correlate_unknown_id(synthetic_dir, tmp_path, capsys):
    (tmp_path / "o.jsonl").write_text(json.dumps({"id": "ghost", "expected_score": 5.0, "raw_score": 5}) + "\n")
    assert main(["correlate", "o.jsonl", str(synthetic_dir / "corpus.jsonl")]) == 1
    assert "ghost" in capsys.readouterr().err


def test_correlate_accr_dimension(tmp_path, capsys):
    rows, outcomes = [], []
    for i, (human, judged) in enumerate([(10, 20), (30, 25), (50, 60), (70, 90)]):
        rows.append({"id": f"m{i}", "video": f"m{i}", "caption": "c", "references": ["r"],
                     "accuracy": human, "completeness": 50, "conciseness": 50, "relevance": 50 + i})
        outcomes.append({"id": f"m{i}", "raw_score": 50, "expected_score": 50.0,
                         "accr": [judged, 50, 50, 50], "accr_expected": [judged + 0.5, 50.0, 50.0, 50.0]})
    (tmp_path / "m.jsonl").write_text("".join(json.dumps(r) + "\n" for r in rows))
    (tmp_path / "o.jsonl").write_text("".join(json.dumps(o) + "\n" for o in outcomes))
    args = ["correlate", "o.jsonl", "m.jsonl", "--format", "msvd-eval", "--style", "csv"]
    assert main([*args, "--human", "accuracy"]) == 0
    assert capsys.readouterr().out.splitlines()[1].endswith(",4,1.0,1.0")
    (tmp_path / "o.jsonl").write_text("".join(json.dumps({k: v for k, v in o.items() if not k.startswith("accr")}) + "\n"
                                              for o in outcomes))
    assert main([*args, "--human", "accuracy"]) == 1


def test_compose_frame_directory(tmp_path, capsys):
    clip = tmp_path / "clip"
    clip.mkdir()
    for i in range(30):
        Image.new("RGB", (64, 48), (i * 8, 0, 0)).save(clip / f"frame_{i:03d}.png")
    assert main(["compose", "--input", str(clip), "--output", "strip.png"]) == 0
    out = capsys.readouterr().out
    assert "frames: 30" in out and "indices: 0,14,29" in out and "1536x512" in out
    with Image.open(tmp_path / "strip.png") as im:
        assert im.size == (1536, 512)


def test_compose_image_and_errors(tmp_path):
    Image.new("RGB", (10, 10), (1, 2, 3)).save(tmp_path / "pic.png")
    assert main(["compose", "--input", "pic.png", "--output", "out/copy.png"]) == 0
    assert (tmp_path / "out" / "copy.png").read_bytes() == (tmp_path / "pic.png").read_bytes()
    (tmp_path / "empty").mkdir()
    assert main(["compose", "--input", "empty", "--output", "x.png"]) == 1
    assert main(["compose", "--input", "nowhere", "--output", "x.png"]) == 1


def test_foil_fixture(fixtures_dir, capsys):
    assert main(["foil", str(fixtures_dir / "foil" / "pairs.jsonl"), str(fixtures_dir / "foil" / "scores.csv")]) == 0
    captured = capsys.readouterr()
    assert captured.out == "70.0\n"
    assert "pairs 10" in captured.err


def _foil_files(tmp_path, scores):
    pairs = [{"id": f"p{i}", "image": "x.jpg", "caption": "t", "foil": "f", "references": ["r"]} for i in range(len(scores))]
    (tmp_path / "pairs.jsonl").write_text("".join(json.dumps(p) + "\n" for p in pairs))
    rows = ["id,score"] + [f"p{i}/true,{t}\np{i}/foil,{f}" for i, (t, f) in enumerate(scores)]
    (tmp_path / "scores.csv").write_text("\n".join(rows) + "\n")


def test_foil_small_cases(tmp_path, capsys):
    _foil_files(tmp_path, [(90, 10), (80, 20), (50, 50), (10, 90)])
    assert main(["foil", "pairs.jsonl", "scores.csv"]) == 0
    assert capsys.readouterr().out == "62.5\n"
    _foil_files(tmp_path, [(50, 50)] * 3)
    assert main(["foil", "pairs.jsonl", "scores.csv"]) == 0
    assert capsys.readouterr().out == "50.0\n"
    _foil_files(tmp_path, [])
    assert main(["foil", "pairs.jsonl", "scores.csv"]) == 1
    _foil_files(tmp_path, [(1, 2)])
    (tmp_path / "scores.csv").write_text("id,score\np0/true,1\n")
    assert main(["foil", "pairs.jsonl", "scores.csv"]) == 1


def test_foil_reads_outcomes(tmp_path, capsys):
    _foil_files(tmp_path, [(1, 2)])
    lines = [{"id": "p0/true", "expected_score": 70.5, "raw_score": 70}, {"id": "p0/foil", "expected_score": 70.25, "raw_score": 70}]
    (tmp_path / "o.jsonl").write_text("".join(json.dumps(x) + "\n" for x in lines))
    assert main(["foil", "pairs.jsonl", "o.jsonl"]) == 0
    assert capsys.readouterr().out == "100.0\n"
    assert main(["foil", "pairs.jsonl", "o.jsonl", "--score", "raw_score"]) == 0
    assert capsys.readouterr().out == "50.0\n"


def variance_args(synthetic_dir, fixtures_dir, fixture, repeats):
    return ["variance", str(synthetic_dir / "corpus.jsonl"), "--id", "syn-01", "--repeats", str(repeats),
            "--mock", str(fixtures_dir / "variance" / fixture)]


def test_variance_rotating(synthetic_dir, fixtures_dir, capsys):
    assert main(variance_args(synthetic_dir, fixtures_dir, "rotating.json", 3)) == 0
    out = capsys.readouterr().out
    assert "samples: 85.0 85.0 90.0" in out
    variance = float(out.split("variance: ")[1].split()[0])
    assert round(variance, 4) == 5.5556


def test_variance_constant_and_json(synthetic_dir, fixtures_dir, capsys):
    assert main([*variance_args(synthetic_dir, fixtures_dir, "constant.json", 4), "--json"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["variance"] == 0.0 and data["n_samples"] == 4 and data["mean"] == 70.0


def test_variance_needs_two_samples(synthetic_dir, fixtures_dir, capsys):
    assert main(variance_args(synthetic_dir, fixtures_dir, "rotating.json", 1)) == 1
    assert "TooFewSamples" in capsys.readouterr().err
    args = variance_args(synthetic_dir, fixtures_dir, "rotating.json", 2)
    args[args.index("syn-01")] = "nope"
    assert main(args) == 1
