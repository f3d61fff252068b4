"""Judging one record, and running a whole corpus through the judge."""

from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

from gveval.backends import Backend, BackendRequest, BackendResponse
from gveval.cache import ResponseCache, cached_complete
from gveval.errors import AuthError, BackendError, GVEvalError, NoTokenEvidence
from gveval.model import (
    ACCR_DIMENSIONS,
    CorpusRecord,
    Dimensionality,
    EvalConfig,
    EvalOutcome,
    ScoreDistribution,
    VisualRef,
    validate_record,
)
from gveval.prompting import PromptBundle, build_prompt
from gveval.runs import RunManifest, RunWriter, utc_now
from gveval.scoring import align_span, expected_accr, expected_score, extract_final_score, locate_accr
from gveval.vision import prepare_attachment

logger = logging.getLogger(__name__)

# Rough per-image prompt cost used only by the budget estimate.
IMAGE_TOKEN_ESTIMATE = 765
CHARS_PER_TOKEN = 4


class AttachmentStore:
    """Memoizes attachment bytes per visual so shared visuals are encoded once."""

    def __init__(self, decoder_cmd: str | None = None) -> None:
        self.decoder_cmd = decoder_cmd
        self._cache: dict[tuple[str, str], bytes] = {}
        self._locks: dict[tuple[str, str], threading.Lock] = {}
        self._guard = threading.Lock()

    def get(self, visual: VisualRef) -> bytes:
        key = (visual.kind.value, str(visual.resolved))
        with self._guard:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            if key not in self._cache:
                self._cache[key] = prepare_attachment(visual, decoder_cmd=self.decoder_cmd)
            return self._cache[key]


def prompt_for(record: CorpusRecord, config: EvalConfig, attachments: AttachmentStore | None = None) -> PromptBundle:
    validate_record(record, config)
    payload = None
    if config.mode.needs_visual:
        store = attachments or AttachmentStore()
        payload = store.get(record.visual)  # type: ignore[arg-type]
    return build_prompt(config, record.candidate, record.references, payload, kind=record.content_kind)


def request_for(bundle: PromptBundle, config: EvalConfig, model_id: str) -> BackendRequest:
    return BackendRequest(
        model_id=model_id,
        prompt_text=bundle.text,
        attachments=bundle.attachments,
        temperature=config.temperature,
        top_k_logprobs=config.top_k_logprobs,
        max_output_tokens=config.max_output_tokens,
    )


def estimate_prompt_tokens(record: CorpusRecord, config: EvalConfig) -> int:
    bundle = build_prompt(
        config,
        record.candidate,
        record.references,
        b"" if config.mode.needs_visual else None,
        kind=record.content_kind,
    )
    return math.ceil(len(bundle.text) / CHARS_PER_TOKEN) + IMAGE_TOKEN_ESTIMATE * len(bundle.attachments)


def score_response(
    record_id: str,
    response: BackendResponse,
    config: EvalConfig,
    *,
    cache_hit: bool = False,
) -> EvalOutcome:
    """Parse ``response`` and turn it into an :class:`EvalOutcome`."""
    if config.dimensionality is Dimensionality.ACCR:
        return _score_accr(record_id, response, config, cache_hit)

    scale = config.scale
    raw, span = extract_final_score(response.text, scale, bare=not config.require_reason)
    span = align_span(response, span)
    evidence = tuple(response.tokens[p] for p in span.token_positions)
    dist = ScoreDistribution.point_mass(raw, scale.min, scale.max)
    source = "raw"
    truncated = False
    if config.use_expected_score:
        try:
            dist = expected_score(response, span, scale).distribution
            source = "logprobs"
            truncated = len(span.token_positions) > 1
        except NoTokenEvidence:
            logger.info("record %s: no token evidence, using the printed score", record_id)
    return EvalOutcome(
        record_id=record_id,
        reason=response.text,
        raw_score=raw,
        expected_score=dist.expected,
        distribution=dist,
        token_evidence=evidence,
        cache_hit=cache_hit,
        distribution_truncated=truncated,
        score_source=source,
    )


def _score_accr(record_id: str, response: BackendResponse, config: EvalConfig, cache_hit: bool) -> EvalOutcome:
    found = locate_accr(response.text)
    raws = tuple(found[d][0] for d in ACCR_DIMENSIONS)
    spans = {d: align_span(response, found[d][1]) for d in ACCR_DIMENSIONS}
    point = [ScoreDistribution.point_mass(r, 0, 100) for r in raws]
    dists = list(point)
    sources = ["raw"] * 4
    truncated = False
    if config.use_expected_score:
        for i, result in enumerate(expected_accr(response, spans)):
            if isinstance(result, NoTokenEvidence):
                continue
            dists[i] = result.distribution
            sources[i] = "logprobs"
            truncated = truncated or len(spans[ACCR_DIMENSIONS[i]].token_positions) > 1

    mixture: dict[int, float] = {}
    for dist in dists:
        for score, p in dist.support:
            mixture[score] = mixture.get(score, 0.0) + p / 4
    mixed = ScoreDistribution.from_weights(mixture, 0, 100)
    evidence = tuple(response.tokens[p] for d in ACCR_DIMENSIONS for p in spans[d].token_positions)
    source = sources[0] if len(set(sources)) == 1 else "mixed"
    return EvalOutcome(
        record_id=record_id,
        reason=response.text,
        raw_score=math.floor(sum(raws) / 4 + 0.5),
        expected_score=mixed.expected,
        distribution=mixed,
        accr=raws,  # type: ignore[arg-type]
        accr_expected=tuple(d.expected for d in dists),  # type: ignore[arg-type]
        token_evidence=evidence,
        cache_hit=cache_hit,
        distribution_truncated=truncated,
        score_source=source,
    )


def judge_record(
    record: CorpusRecord,
    config: EvalConfig,
    backend: Backend,
    *,
    model_id: str,
    cache: ResponseCache | None = None,
    attachments: AttachmentStore | None = None,
    bypass_cache: bool = False,
) -> EvalOutcome:
    bundle = prompt_for(record, config, attachments)
    request = request_for(bundle, config, model_id)
    response, hit = cached_complete(backend, request, cache, bypass=bypass_cache)
    return score_response(record.id, response, config, cache_hit=hit)


def repeat_judgment(
    record: CorpusRecord,
    config: EvalConfig,
    backend: Backend,
    repeats: int,
    *,
    model_id: str,
    attachments: AttachmentStore | None = None,
) -> list[float]:
    """Expected scores from ``repeats`` independent (uncached) judgments."""
    bundle = prompt_for(record, config, attachments)
    request = request_for(bundle, config, model_id)
    samples = []
    for _ in range(repeats):
        response, _ = cached_complete(backend, request, None, bypass=True)
        samples.append(score_response(record.id, response, config).expected_score)
    return samples


@dataclass
class RunSummary:
    evaluated: int = 0
    skipped: int = 0
    failures: list[dict[str, str]] = field(default_factory=list)
    aborted: str | None = None

    @property
    def all_backend_failures(self) -> bool:
        return bool(self.failures) and self.evaluated == 0 and all(f.get("family") == "backend" for f in self.failures)


def run_evaluation(
    records: Sequence[CorpusRecord],
    config: EvalConfig,
    backend: Backend,
    writer: RunWriter,
    manifest: RunManifest,
    *,
    model_id: str,
    cache: ResponseCache | None = None,
    attachments: AttachmentStore | None = None,
    on_outcome: Callable[[EvalOutcome], None] | None = None,
) -> RunSummary:
    """Judge every record not yet in the outcomes file.

    Workers run in parallel; outcomes are appended in corpus order by this
    thread only, so resumed and uninterrupted runs write identical files.
    """
    writer.prepare()
    done = writer.completed_ids()
    todo = [r for r in records if r.id not in done]
    summary = RunSummary(skipped=len(records) - len(todo))
    store = attachments or AttachmentStore()
    stop = threading.Event()

    def work(record: CorpusRecord) -> EvalOutcome | BaseException:
        if stop.is_set():
            return AuthError("run aborted after an authentication failure")
        try:
            return judge_record(record, config, backend, model_id=model_id, cache=cache, attachments=store)
        except AuthError as exc:
            stop.set()
            return exc
        except (GVEvalError, OSError, ValueError) as exc:
            return exc

    with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
        futures = [pool.submit(work, r) for r in todo]
        for record, fut in zip(todo, futures):
            result = fut.result()
            if isinstance(result, EvalOutcome):
                writer.append(result)
                summary.evaluated += 1
                if on_outcome is not None:
                    on_outcome(result)
            else:
                family = "backend" if isinstance(result, BackendError) else "record"
                summary.failures.append(
                    {"id": record.id, "error": type(result).__name__, "message": str(result), "family": family}
                )
                if isinstance(result, AuthError) and summary.aborted is None:
                    summary.aborted = str(result)

    manifest.failures = summary.failures
    manifest.finished_at = utc_now()
    manifest.stats.update(
        {
            "evaluated": summary.evaluated,
            "skipped_existing": summary.skipped,
            "failed": len(summary.failures),
        }
    )
    if cache is not None:
        manifest.stats.update({"cache_hits": cache.hits, "cache_misses": cache.misses})
    writer.write_manifest(manifest)
    return summary
