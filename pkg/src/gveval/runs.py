"""Run manifests and the append-only outcomes file."""

from __future__ import annotations

import json
import os
import tempfile
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable

from gveval.errors import IoError
from gveval.model import EvalOutcome, ScoreDistribution

OUTCOMES_FILE = "outcomes.jsonl"
MANIFEST_FILE = "manifest.json"


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def outcome_to_line(outcome: EvalOutcome) -> dict[str, Any]:
    d = outcome.distribution
    line: dict[str, Any] = {
        "id": outcome.record_id,
        "raw_score": outcome.raw_score,
        "expected_score": outcome.expected_score,
        "distribution": d.as_pairs(),
        "score_range": [d.min_score, d.max_score],
        "reason": outcome.reason,
        "cache_hit": outcome.cache_hit,
        "distribution_truncated": outcome.distribution_truncated,
        "score_source": outcome.score_source,
    }
    if outcome.accr is not None:
        line["accr"] = list(outcome.accr)
    if outcome.accr_expected is not None:
        line["accr_expected"] = list(outcome.accr_expected)
    return line


def outcome_from_line(line: dict[str, Any]) -> EvalOutcome:
    low, high = line.get("score_range", [0, 100])
    dist = ScoreDistribution(tuple((int(s), float(p)) for s, p in line["distribution"]), max_score=high, min_score=low)
    return EvalOutcome(
        record_id=line["id"],
        reason=line.get("reason", ""),
        raw_score=int(line["raw_score"]),
        expected_score=float(line["expected_score"]),
        distribution=dist,
        accr=tuple(line["accr"]) if "accr" in line else None,  # type: ignore[arg-type]
        accr_expected=tuple(line["accr_expected"]) if "accr_expected" in line else None,  # type: ignore[arg-type]
        cache_hit=bool(line.get("cache_hit", False)),
        distribution_truncated=bool(line.get("distribution_truncated", False)),
        score_source=line.get("score_source", "logprobs"),
    )


def dumps_outcome(outcome: EvalOutcome) -> str:
    return json.dumps(outcome_to_line(outcome), sort_keys=True, ensure_ascii=False) + "\n"


def read_outcomes(path: str | Path) -> list[dict[str, Any]]:
    lines = []
    with Path(path).open(encoding="utf-8") as fh:
        for raw in fh:
            if raw.strip():
                lines.append(json.loads(raw))
    return lines


@dataclass
class RunManifest:
    config: dict[str, Any]
    settings: dict[str, Any]
    template_checksums: dict[str, str]
    model_id: str
    corpus: dict[str, Any]
    started_at: str = field(default_factory=utc_now)
    finished_at: str | None = None
    outcomes_file: str = OUTCOMES_FILE
    outcome_index: dict[str, int] = field(default_factory=dict)
    failures: list[dict[str, str]] = field(default_factory=list)
    stats: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class RunWriter:
    """Single writer for one run directory; appends are serialized."""

    def __init__(self, out_dir: str | Path) -> None:
        self.out_dir = Path(out_dir)
        self.outcomes_path = self.out_dir / OUTCOMES_FILE
        self.manifest_path = self.out_dir / MANIFEST_FILE
        self._lock = threading.Lock()

    def prepare(self) -> None:
        """Create the directory and prove it is writable."""
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            fd, probe = tempfile.mkstemp(prefix=".probe-", dir=self.out_dir)
            os.close(fd)
            os.unlink(probe)
            if self.outcomes_path.exists() and not os.access(self.outcomes_path, os.W_OK):
                raise PermissionError(f"{self.outcomes_path} is read-only")
        except OSError as exc:
            raise IoError(f"output directory {self.out_dir} is not writable: {exc}") from exc

    def completed_ids(self) -> set[str]:
        if not self.outcomes_path.exists():
            return set()
        return {line["id"] for line in read_outcomes(self.outcomes_path)}

    def append(self, outcome: EvalOutcome) -> None:
        text = dumps_outcome(outcome)
        with self._lock:
            try:
                with self.outcomes_path.open("a", encoding="utf-8") as fh:
                    fh.write(text)
            except OSError as exc:
                raise IoError(str(exc)) from exc

    def index(self) -> dict[str, int]:
        if not self.outcomes_path.exists():
            return {}
        return {line["id"]: n for n, line in enumerate(read_outcomes(self.outcomes_path), start=1)}

    def write_manifest(self, manifest: RunManifest) -> None:
        manifest.outcome_index = self.index()
        text = json.dumps(manifest.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"
        try:
            fd, tmp = tempfile.mkstemp(prefix=".manifest-", dir=self.out_dir)
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, self.manifest_path)
        except OSError as exc:
            raise IoError(str(exc)) from exc


def persist_outcomes(out_dir: str | Path, manifest: RunManifest, outcomes: Iterable[EvalOutcome]) -> RunWriter:
    """Append ``outcomes`` not already on disk, then (re)write the manifest."""
    writer = RunWriter(out_dir)
    writer.prepare()
    done = writer.completed_ids()
    for outcome in outcomes:
        if outcome.record_id not in done:
            writer.append(outcome)
            done.add(outcome.record_id)
    writer.write_manifest(manifest)
    return writer
