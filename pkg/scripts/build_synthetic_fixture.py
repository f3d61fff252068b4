"""Regenerate tests/fixtures/synthetic: images, corpus, mock replies, golden values.

The mock replies are keyed by request digest, so rerun this after changing a
prompt template. The golden correlation is computed with the oracles in
tests/oracles.py (exact rationals, brute-force pair enumeration), never with
gveval.stats or gveval.scoring.
"""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

from PIL import Image

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "tests" / "fixtures" / "synthetic"
sys.path.insert(0, str(ROOT / "tests"))

from oracles import expected_score_oracle, kendall_oracle  # noqa: E402

from gveval.backends import request_digest  # noqa: E402
from gveval.corpus import dump_line, load_corpus  # noqa: E402
from gveval.model import EvalConfig  # noqa: E402
from gveval.pipeline import prompt_for, request_for  # noqa: E402

MODEL_ID = "gpt-4o"
N_RECORDS = 20

SUBJECTS = ["dog", "cat", "child", "cyclist", "surfer", "horse", "bird", "chef", "runner", "boat"]
ACTIONS = ["runs across a field", "sits on a bench", "jumps into water", "rides along a road", "waits near a door"]


def _image(path: Path, rgb: tuple[int, int, int]) -> None:
    img = Image.new("RGB", (48, 32), rgb)
    for x in range(16):
        for y in range(8):
            img.putpixel((x, y), (255 - rgb[0], 255 - rgb[1], 255 - rgb[2]))
    img.save(path, format="PNG", optimize=False)


def _reply(score: int, rng: random.Random) -> dict:
    lead = "The caption names the main subject and action; minor details differ. The final score is "
    near = sorted({max(0, min(100, score + d)) for d in (rng.choice([-10, -5, 5]), rng.choice([-3, 3, 8]))} - {score})
    alts = [[str(score), -round(rng.uniform(0.05, 0.6), 4)]]
    for v in near:
        alts.append([str(v), -round(rng.uniform(1.0, 3.5), 4)])
    alts += [["abc", -4.2], ["150", -4.9], [" ", -6.0]]
    alts.sort(key=lambda a: -a[1])
    realized_lp = next(lp for t, lp in alts if t == str(score))
    tokens = [
        {"text": lead, "logprob": -0.02, "alternatives": []},
        {"text": "$", "logprob": -0.001, "alternatives": []},
        {"text": str(score), "logprob": realized_lp, "alternatives": alts},
        {"text": "$", "logprob": -0.001, "alternatives": []},
        {"text": ".", "logprob": -0.01, "alternatives": []},
    ]
    text = "".join(t["text"] for t in tokens)
    return {"text": text, "tokens": tokens, "usage": [900, 40], "backend_meta": "synthetic"}


def main() -> None:
    rng = random.Random(20240817)
    (OUT / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for i in range(1, N_RECORDS + 1):
        rid = f"syn-{i:02d}"
        rgb = (rng.randrange(256), rng.randrange(256), rng.randrange(256))
        _image(OUT / "images" / f"{rid}.png", rgb)
        subject = SUBJECTS[i % len(SUBJECTS)]
        action = ACTIONS[i % len(ACTIONS)]
        experts = [rng.randint(1, 4) for _ in range(3)]
        lines.append(
            {
                "id": rid,
                "caption": f"A {subject} {action}.",
                "references": [f"A {subject} {action} in daylight.", f"There is a {subject} that {action}."],
                "visual": {"kind": "image", "path": f"images/{rid}.png"},
                "human": {"kind": "expert-mean", "value": sum(experts) / 3, "raw": experts},
                "metrics": {"CIDEr": round(rng.uniform(0.1, 1.5), 3), "BLEU-4": round(rng.uniform(0.05, 0.6), 3)},
            }
        )
    corpus_path = OUT / "corpus.jsonl"
    corpus_path.write_text("".join(dump_line(ln) for ln in lines), encoding="utf-8")

    config = EvalConfig()
    records = load_corpus(corpus_path)
    fixture = []
    expected: dict[str, float] = {}
    for rec, line in zip(records, lines):
        human = line["human"]["value"]
        score = int(max(5, min(95, round(human * 22 + rng.uniform(-18, 18)))))
        body = _reply(score, rng)
        digest = request_digest(request_for(prompt_for(rec, config), config, MODEL_ID))
        fixture.append({"match": f"digest:{digest}", "response": body})
        alts = [tuple(a) for a in body["tokens"][2]["alternatives"]]
        expected[rec.id] = float(expected_score_oracle(alts, 0, 100))
    (OUT / "mock.json").write_text(json.dumps(fixture, indent=1) + "\n", encoding="utf-8")

    ids = [ln["id"] for ln in lines]
    metric = [expected[i] for i in ids]
    human = [ln["human"]["value"] for ln in lines]
    tau_b, tau_c = kendall_oracle(metric, human)
    golden = {
        "provenance": (
            "Generated by scripts/build_synthetic_fixture.py. Expected scores are exact-rational "
            "expectations over the scripted token alternatives (tests/oracles.py "
            "expected_score_oracle); tau values come from brute-force pair enumeration "
            "(tests/oracles.py kendall_oracle) against the expert-mean human column. "
            "Neither step uses gveval.scoring or gveval.stats."
        ),
        "model_id": MODEL_ID,
        "n": len(ids),
        "human_projection": "auto",
        "tau_b": tau_b,
        "tau_c": tau_c,
        "expected_scores": expected,
    }
    (OUT / "golden.json").write_text(json.dumps(golden, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(f"tau_b={tau_b!r} tau_c={tau_c!r}")


if __name__ == "__main__":
    main()
