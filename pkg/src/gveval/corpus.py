"""Corpus loading: the canonical JSON Lines format and dataset adapters.

Adapters read small per-dataset JSON Lines layouts (documented in the README)
rather than any particular mirror's raw files; each maps its rows onto
:class:`~gveval.model.CorpusRecord`.
"""

from __future__ import annotations

import hashlib
import json
from enum import Enum
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Iterator

import jsonschema

from gveval.errors import DuplicateId, ParseError, SchemaViolation
from gveval.model import (
    CandidateCaption,
    ContentKind,
    CorpusRecord,
    HumanJudgment,
    HumanKind,
    ReferenceSet,
    VisualRef,
)

FOIL_TRUE_SUFFIX = "/true"
FOIL_FOIL_SUFFIX = "/foil"


class CorpusFormat(str, Enum):
    CANONICAL = "canonical"
    FLICKR8K_EXPERT = "flickr8k-expert"
    FLICKR8K_CF = "flickr8k-cf"
    VATEX_EVAL = "vatex-eval"
    MSVD_EVAL_ACCR = "msvd-eval"
    FOIL_PAIRS = "foil"


@lru_cache(maxsize=1)
def record_schema() -> dict[str, Any]:
    text = (resources.files("gveval") / "schema" / "record.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def corpus_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _json_lines(path: Path) -> Iterator[tuple[int, dict[str, Any]]]:
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise ParseError(lineno, "expected a JSON object")
            yield lineno, obj


def _make_record(
    rid: str,
    caption: str,
    references: list[str],
    visual: VisualRef | None,
    human: HumanJudgment | None,
    metrics: dict[str, float] | None,
) -> CorpusRecord:
    visual_id = visual.id if visual is not None and visual.path else rid
    return CorpusRecord(
        id=rid,
        candidate=CandidateCaption(id=rid, text=caption, visual_id=visual_id),
        references=ReferenceSet(visual_id=visual_id, captions=tuple(references)),
        visual=visual,
        human=human,
        precomputed_metrics={k: float(v) for k, v in (metrics or {}).items()},
    )


def _canonical(obj: dict[str, Any], root: Path) -> list[CorpusRecord]:
    visual = None
    if "visual" in obj:
        visual = VisualRef(ContentKind(obj["visual"]["kind"]), obj["visual"].get("path"), root)
    human = None
    if "human" in obj:
        h = obj["human"]
        kind = HumanKind(h["kind"])
        value = tuple(h["values"]) if kind is HumanKind.ACCR else h["value"]
        raw = tuple(tuple(r) if isinstance(r, list) else r for r in h.get("raw", ()))
        human = HumanJudgment(kind, value, raw)
    return [_make_record(obj["id"], obj["caption"], list(obj["references"]), visual, human, obj.get("metrics"))]


def _require(obj: dict[str, Any], *keys: str) -> None:
    missing = [k for k in keys if k not in obj]
    if missing:
        raise KeyError(", ".join(missing))


def _mean(values: list[float]) -> float:
    return sum(float(v) for v in values) / len(values)


def _flickr8k_expert(obj: dict[str, Any], root: Path) -> list[CorpusRecord]:
    _require(obj, "id", "image", "caption", "references", "expert_scores")
    scores = list(obj["expert_scores"])
    human = HumanJudgment(HumanKind.EXPERT_MEAN, _mean(scores), tuple(scores))
    visual = VisualRef(ContentKind.IMAGE, obj["image"], root)
    return [_make_record(obj["id"], obj["caption"], obj["references"], visual, human, obj.get("metrics"))]


def _flickr8k_cf(obj: dict[str, Any], root: Path) -> list[CorpusRecord]:
    _require(obj, "id", "image", "caption", "references")
    if "votes" in obj:
        votes = [int(v) for v in obj["votes"]]
        yes, total, raw = sum(votes), len(votes), tuple(votes)
    else:
        _require(obj, "yes_votes", "total_votes")
        yes, total, raw = int(obj["yes_votes"]), int(obj["total_votes"]), ()
    if total <= 0:
        raise ValueError("total_votes must be positive")
    human = HumanJudgment(HumanKind.CROWD_PROPORTION, yes / total, raw)
    visual = VisualRef(ContentKind.IMAGE, obj["image"], root)
    return [_make_record(obj["id"], obj["caption"], obj["references"], visual, human, obj.get("metrics"))]


def _vatex_eval(obj: dict[str, Any], root: Path) -> list[CorpusRecord]:
    _require(obj, "id", "video", "caption", "references", "human_scores")
    scores = list(obj["human_scores"])
    human = HumanJudgment(HumanKind.VATEX_SCORE, _mean(scores), tuple(scores))
    visual = VisualRef(ContentKind.VIDEO, obj["video"], root)
    return [_make_record(obj["id"], obj["caption"], obj["references"], visual, human, obj.get("metrics"))]


def _msvd_eval(obj: dict[str, Any], root: Path) -> list[CorpusRecord]:
    _require(obj, "id", "video", "caption", "references")
    if "annotations" in obj:
        raw = tuple(tuple(float(v) for v in a) for a in obj["annotations"])
        if not raw or any(len(a) != 4 for a in raw):
            raise ValueError("annotations must be non-empty quadruples")
        values = tuple(_mean([a[i] for a in raw]) for i in range(4))
    else:
        _require(obj, "accuracy", "completeness", "conciseness", "relevance")
        values = tuple(float(obj[k]) for k in ("accuracy", "completeness", "conciseness", "relevance"))
        raw = ()
    human = HumanJudgment(HumanKind.ACCR, values, raw)
    visual = VisualRef(ContentKind.VIDEO, obj["video"], root)
    return [_make_record(obj["id"], obj["caption"], obj["references"], visual, human, obj.get("metrics"))]


def _foil(obj: dict[str, Any], root: Path) -> list[CorpusRecord]:
    _require(obj, "id", "image", "caption", "foil", "references")
    visual = VisualRef(ContentKind.IMAGE, obj["image"], root)
    pid = obj["id"]
    return [
        _make_record(pid + FOIL_TRUE_SUFFIX, obj["caption"], obj["references"], visual, None, None),
        _make_record(pid + FOIL_FOIL_SUFFIX, obj["foil"], obj["references"], visual, None, None),
    ]


_ADAPTERS: dict[CorpusFormat, Callable[[dict[str, Any], Path], list[CorpusRecord]]] = {
    CorpusFormat.CANONICAL: _canonical,
    CorpusFormat.FLICKR8K_EXPERT: _flickr8k_expert,
    CorpusFormat.FLICKR8K_CF: _flickr8k_cf,
    CorpusFormat.VATEX_EVAL: _vatex_eval,
    CorpusFormat.MSVD_EVAL_ACCR: _msvd_eval,
    CorpusFormat.FOIL_PAIRS: _foil,
}


def load_corpus(
    path: str | Path,
    format: CorpusFormat | str = CorpusFormat.CANONICAL,
    *,
    root: str | Path | None = None,
) -> list[CorpusRecord]:
    """Read ``path`` under ``format``. Visual paths resolve against ``root``
    (default: the corpus file's directory)."""
    path = Path(path)
    fmt = CorpusFormat(format)
    base = Path(root) if root is not None else path.parent
    adapter = _ADAPTERS[fmt]
    validator = jsonschema.Draft202012Validator(record_schema()) if fmt is CorpusFormat.CANONICAL else None
    records: list[CorpusRecord] = []
    seen: set[str] = set()
    for lineno, obj in _json_lines(path):
        if validator is not None:
            error = jsonschema.exceptions.best_match(validator.iter_errors(obj))
            if error is not None:
                where = "/".join(str(p) for p in error.absolute_path) or "<root>"
                raise SchemaViolation(lineno, f"{where}: {error.message}")
        try:
            produced = adapter(obj, base)
        except KeyError as exc:
            raise ParseError(lineno, f"missing field(s) {exc.args[0]}") from exc
        except (TypeError, ValueError) as exc:
            raise SchemaViolation(lineno, str(exc)) from exc
        for rec in produced:
            if rec.id in seen:
                raise DuplicateId(rec.id, lineno)
            seen.add(rec.id)
            records.append(rec)
    return records


def record_to_line(record: CorpusRecord) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "id": record.id,
        "caption": record.candidate.text,
        "references": list(record.references.captions),
        "metrics": dict(record.precomputed_metrics),
    }
    if record.visual is not None:
        obj["visual"] = {"kind": record.visual.kind.value, "path": record.visual.path}
    if record.human is not None:
        h = record.human
        hobj: dict[str, Any] = {"kind": h.kind.value}
        if h.kind is HumanKind.ACCR:
            hobj["values"] = list(h.value)  # type: ignore[arg-type]
        else:
            hobj["value"] = h.value
        if h.raw:
            hobj["raw"] = [list(r) if isinstance(r, tuple) else r for r in h.raw]
        obj["human"] = hobj
    return obj


def dump_line(obj: dict[str, Any]) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n"


def dump_corpus(records: list[CorpusRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dump_line(record_to_line(rec)))


def foil_pairs(records: list[CorpusRecord]) -> list[tuple[str, str, str]]:
    """``(pair_id, true_record_id, foil_record_id)`` for records from the FOIL adapter."""
    ids = {r.id for r in records}
    pairs = []
    for rec in records:
        if rec.id.endswith(FOIL_TRUE_SUFFIX):
            pid = rec.id[: -len(FOIL_TRUE_SUFFIX)]
            foil_id = pid + FOIL_FOIL_SUFFIX
            if foil_id in ids:
                pairs.append((pid, rec.id, foil_id))
    return pairs
