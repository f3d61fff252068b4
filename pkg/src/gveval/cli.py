"""``gveval`` command-line front end.

Exit codes: 0 success, 1 usage or validation error, 2 some records failed,
3 transport or backend failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from PIL import Image

from gveval import __version__
from gveval.backends import Backend, ChatCompletionsBackend, RateLimiter, RetryPolicy, mock_backend_from_fixture
from gveval.cache import ResponseCache
from gveval.config import Settings, resolve_settings
from gveval.corpus import CorpusFormat, corpus_digest, foil_pairs, load_corpus
from gveval.errors import (
    BackendError,
    ConfigError,
    FixtureParseError,
    GVEvalError,
    MissingColumn,
    TooFewSamples,
    ValidationError,
)
from gveval.model import (
    ACCR_DIMENSIONS,
    CorpusRecord,
    Dimensionality,
    EvalConfig,
    Mode,
    Scale,
    validate_record,
)
from gveval.pipeline import AttachmentStore, estimate_prompt_tokens, repeat_judgment, run_evaluation
from gveval.prompting import template_checksums
from gveval.report import ReportStyle, emit_report, percent
from gveval.runs import OUTCOMES_FILE, RunManifest, RunWriter, read_outcomes
from gveval.scoring import estimate_variance
from gveval.stats import CorrelationEntry, HumanProjection, correlate_corpus, foil_pairwise_accuracy
from gveval.vision import IMAGE_SUFFIXES, compose_strip, extract_frames, sample_indices

logger = logging.getLogger("gveval")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2
EXIT_BACKEND = 3

SMOKE_RECORDS = 10


class UsageError(GVEvalError):
    """Bad invocation detected after argument parsing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _err(message: str) -> None:
    print(f"gveval: {message}", file=sys.stderr)


# -- shared option groups -----------------------------------------------------


def _add_settings_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("backend settings (flags > GVEVAL_* env > --config file > defaults)")
    g.add_argument("--config", type=Path, help="JSON config file")
    g.add_argument("--model", dest="model_id", help="model id sent to the backend")
    g.add_argument("--base-url", help="OpenAI-compatible API base URL")
    g.add_argument("--timeout", type=float, help="request timeout in seconds")
    g.add_argument("--cache-dir", help="response cache directory")
    g.add_argument("--api-key-env", help="environment variable holding the API key")
    g.add_argument("--decoder-cmd", help="video decoder command with {input} and {outdir} tokens")
    g.add_argument("--rate", dest="rate_per_second", type=float, help="max backend requests per second (0 = unlimited)")
    g.add_argument("--token-ceiling", type=int, help="estimated-token budget above which --yes is required")


def _add_eval_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("judge configuration")
    g.add_argument("--mode", choices=[m.value for m in Mode], help="what the judge sees (default: combined)")
    g.add_argument("--scale", choices=[s.value for s in Scale], help="score range: scoring 0-100, rating 1-5")
    g.add_argument("--accr", action="store_true", help="score accuracy, completeness, conciseness, relevance")
    g.add_argument("--no-cot", action="store_true", help="drop the evaluation steps from the prompt")
    g.add_argument("--no-reason", action="store_true", help="ask for the score only, without a reason")
    g.add_argument("--no-expected", action="store_true", help="use the printed score instead of the expected score")
    g.add_argument("--top-k", type=int, help="top-k token alternatives to request")
    g.add_argument("--temperature", type=float)
    g.add_argument("--max-retries", type=int)
    g.add_argument("--max-output-tokens", type=int)
    g.add_argument("--mock", type=Path, metavar="FIXTURE", help="replay responses from a JSON fixture (offline)")


def _add_corpus_flags(p: argparse.ArgumentParser, default: CorpusFormat = CorpusFormat.CANONICAL) -> None:
    p.add_argument("--format", choices=[f.value for f in CorpusFormat], default=default.value, help="corpus layout")
    p.add_argument("--root", type=Path, help="directory visual paths are relative to (default: corpus dir)")


def _settings(args: argparse.Namespace) -> tuple[Settings, dict[str, Any]]:
    flags = {
        name: getattr(args, name, None)
        for name in (
            "model_id",
            "base_url",
            "timeout",
            "cache_dir",
            "api_key_env",
            "decoder_cmd",
            "rate_per_second",
            "token_ceiling",
        )
    }
    return resolve_settings(flags, config_file=args.config)


def _eval_config(args: argparse.Namespace, file_section: dict[str, Any]) -> EvalConfig:
    try:
        config = EvalConfig.from_dict(file_section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad 'eval' section in config file: {exc}") from exc
    changes: dict[str, Any] = {}
    if args.mode:
        changes["mode"] = Mode(args.mode)
    if args.scale:
        changes["scale"] = Scale(args.scale)
    if args.accr:
        changes["dimensionality"] = Dimensionality.ACCR
    if args.no_cot:
        changes["include_cot_steps"] = False
    if args.no_reason:
        changes["require_reason"] = False
    if args.no_expected:
        changes["use_expected_score"] = False
    for flag, key in (
        ("top_k", "top_k_logprobs"),
        ("temperature", "temperature"),
        ("max_retries", "max_retries"),
        ("max_output_tokens", "max_output_tokens"),
        ("parallel", "parallelism"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            changes[key] = value
    return replace(config, **changes)


def _backend(args: argparse.Namespace, settings: Settings, config: EvalConfig) -> Backend:
    if args.mock is not None:
        return mock_backend_from_fixture(args.mock)
    key = os.environ.get(settings.api_key_env)
    if not key:
        raise ConfigError(f"no API key: set {settings.api_key_env} or pass --mock FIXTURE")
    limiter = RateLimiter(settings.rate_per_second) if settings.rate_per_second > 0 else None
    return ChatCompletionsBackend(
        model_id=settings.model_id,
        api_key=key,
        base_url=settings.base_url,
        timeout=settings.timeout,
        retry=RetryPolicy(max_retries=config.max_retries),
        rate_limiter=limiter,
    )


def _load(args: argparse.Namespace, path: Path) -> list[CorpusRecord]:
    return load_corpus(path, args.format, root=args.root)


# -- evaluate -----------------------------------------------------------------


def cmd_evaluate(args: argparse.Namespace) -> int:
    settings, file_section = _settings(args)
    config = _eval_config(args, file_section)
    records = _load(args, args.corpus)
    limit = SMOKE_RECORDS if args.smoke else args.limit
    if limit is not None:
        records = records[:limit]

    invalid = []
    for rec in records:
        try:
            validate_record(rec, config)
        except ValidationError as exc:
            invalid.append(exc)
    if invalid:
        for exc in invalid:
            _err(f"invalid record {exc.record_id}: {exc.detail}")
        _err(f"{len(invalid)} record(s) cannot be judged in mode {config.mode.value}; nothing was sent")
        return EXIT_USAGE

    if records:
        estimate = sum(estimate_prompt_tokens(r, config) for r in records)
        estimate += config.max_output_tokens * len(records)
        print(
            f"estimated tokens: {estimate} ({len(records)} records, "
            f"mean {estimate // len(records)} per record incl. output budget)",
            file=sys.stderr,
        )
        if args.mock is None and estimate > settings.token_ceiling and not args.yes:
            _err(f"estimate exceeds the token ceiling of {settings.token_ceiling}; rerun with --yes to proceed")
            return EXIT_USAGE

    backend = _backend(args, settings, config)
    cache = None if args.no_cache else ResponseCache(settings.cache_dir)
    out_dir = args.out
    writer = RunWriter(out_dir)
    manifest = RunManifest(
        config=config.to_dict(),
        settings={**settings.to_dict(), "mock_fixture": str(args.mock) if args.mock else None,
                  "cache_enabled": cache is not None, "smoke": bool(args.smoke)},
        template_checksums=template_checksums(),
        model_id=settings.model_id,
        corpus={
            "path": str(args.corpus),
            "format": args.format,
            "sha256": corpus_digest(args.corpus),
            "records": len(records),
        },
    )
    try:
        summary = run_evaluation(
            records,
            config,
            backend,
            writer,
            manifest,
            model_id=settings.model_id,
            cache=cache,
            attachments=AttachmentStore(settings.decoder_cmd),
        )
    finally:
        close = getattr(backend, "close", None)
        if close is not None:
            close()
    calls = getattr(backend, "calls", None)
    if calls is not None:
        manifest.stats["backend_calls"] = calls
        writer.write_manifest(manifest)

    for failure in summary.failures:
        _err(f"record {failure['id']} failed: {failure['error']}: {failure['message']}")
    print(
        f"evaluated {summary.evaluated}, skipped {summary.skipped} already done, "
        f"failed {len(summary.failures)}; outcomes in {writer.outcomes_path}",
        file=sys.stderr,
    )
    if summary.aborted is not None or summary.all_backend_failures:
        return EXIT_BACKEND
    if summary.failures:
        return EXIT_PARTIAL
    if args.smoke:
        return _smoke_check(writer, config)
    return EXIT_OK


def _smoke_check(writer: RunWriter, config: EvalConfig) -> int:
    lines = read_outcomes(writer.outcomes_path)
    low, high = (0, 100) if config.dimensionality is Dimensionality.ACCR else (config.scale.min, config.scale.max)
    bad = [ln["id"] for ln in lines if not (low <= ln["expected_score"] <= high and low <= ln["raw_score"] <= high)]
    manifest = json.loads(writer.manifest_path.read_text(encoding="utf-8"))
    if bad or manifest.get("config") != config.to_dict():
        _err(f"smoke check failed: out-of-range scores for {bad}" if bad else "smoke check failed: manifest config")
        return EXIT_PARTIAL
    print(f"smoke check passed: {len(lines)} outcomes in [{low}, {high}], manifest at {writer.manifest_path}")
    return EXIT_OK


# -- correlate ----------------------------------------------------------------


def _metric_value(line: dict[str, Any], projection: HumanProjection, score_field: str) -> float:
    dim = projection.accr_dimension
    if dim is None:
        return float(line[score_field])
    key = "accr_expected" if score_field == "expected_score" else "accr"
    if key not in line:
        raise MissingColumn(line["id"], key)
    return float(line[key][ACCR_DIMENSIONS.index(dim)])


def cmd_correlate(args: argparse.Namespace) -> int:
    projection = HumanProjection(args.human)
    lines = read_outcomes(args.outcomes)
    records = {r.id: r for r in _load(args, args.corpus)}
    joined = []
    for line in lines:
        rid = line.get("id")
        if rid not in records:
            raise UsageError(f"outcome id {rid!r} is not in corpus {args.corpus}")
        rec = records[rid]
        metrics = dict(rec.precomputed_metrics)
        metrics[args.name] = _metric_value(line, projection, args.score)
        joined.append(replace(rec, precomputed_metrics=metrics))
    if not joined:
        raise UsageError(f"no outcomes in {args.outcomes}")
    columns = [args.name]
    if args.with_precomputed:
        shared = set.intersection(*(set(r.precomputed_metrics) for r in joined))
        columns += sorted(shared - {args.name})
    entries: list[CorrelationEntry] = [
        correlate_corpus(joined, column, projection, dataset=args.dataset) for column in columns
    ]
    sys.stdout.write(emit_report(entries, ReportStyle(args.style)))
    return EXIT_OK


# -- compose ------------------------------------------------------------------


def cmd_compose(args: argparse.Namespace) -> int:
    source: Path = args.input
    kind = args.input_kind
    if kind == "auto":
        kind = "image" if source.is_file() and source.suffix.lower() in IMAGE_SUFFIXES else "video"
    if kind == "image":
        if not source.is_file():
            raise UsageError(f"{source} is not an image file")
        args.output.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(source, args.output)
        print(f"image input: copied to {args.output}")
        return EXIT_OK

    settings, _ = _settings(args)
    with tempfile.TemporaryDirectory(prefix="gveval-frames-") as tmp:
        frames = extract_frames(source, decoder_cmd=settings.decoder_cmd, outdir=tmp)
        indices = sample_indices(len(frames))
        images = []
        for i in indices:
            with Image.open(frames[i][0]) as im:
                im.load()
                images.append(im.copy())
        strip = compose_strip(images, tile_sources=indices)
    args.output.parent.mkdir(parents=True, exist_ok=True)
    args.output.write_bytes(strip.to_png())
    print(f"frames: {len(frames)}")
    print("indices: " + ",".join(str(i) for i in indices))
    print(f"wrote {strip.pixels.width}x{strip.pixels.height} strip to {args.output}")
    return EXIT_OK


# -- foil ---------------------------------------------------------------------


def read_scores(path: Path, score_field: str = "expected_score") -> dict[str, float]:
    """Scores by id from a CSV (``id,score``) or an outcomes-style JSON Lines file."""
    scores: dict[str, float] = {}
    if path.suffix.lower() == ".csv":
        with path.open(newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                if "id" not in row or "score" not in row:
                    raise UsageError(f"{path}: CSV needs 'id' and 'score' columns")
                scores[row["id"]] = float(row["score"])
        return scores
    for line in read_outcomes(path):
        value = line.get("score", line.get(score_field))
        if value is None:
            raise MissingColumn(str(line.get("id")), score_field)
        scores[line["id"]] = float(value)
    return scores


def cmd_foil(args: argparse.Namespace) -> int:
    pairs = foil_pairs(_load(args, args.pairs))
    scores = read_scores(args.scores, args.score)
    values = []
    for pid, true_id, foil_id in pairs:
        for rid in (true_id, foil_id):
            if rid not in scores:
                raise MissingColumn(rid, "score")
        values.append((scores[true_id], scores[foil_id]))
    accuracy = foil_pairwise_accuracy(values)
    wins = sum(1 for t, f in values if t > f)
    ties = sum(1 for t, f in values if t == f)
    print(f"pairs {len(values)}, true caption higher {wins}, ties {ties}", file=sys.stderr)
    print(percent(accuracy))
    return EXIT_OK


# -- variance -----------------------------------------------------------------


def cmd_variance(args: argparse.Namespace) -> int:
    if args.repeats < 2:
        raise TooFewSamples(f"--repeats must be at least 2, got {args.repeats}")
    settings, file_section = _settings(args)
    config = _eval_config(args, file_section)
    records = {r.id: r for r in _load(args, args.corpus)}
    if args.id not in records:
        raise UsageError(f"record {args.id!r} is not in corpus {args.corpus}")
    backend = _backend(args, settings, config)
    try:
        samples = repeat_judgment(
            records[args.id],
            config,
            backend,
            args.repeats,
            model_id=settings.model_id,
            attachments=AttachmentStore(settings.decoder_cmd),
        )
    finally:
        close = getattr(backend, "close", None)
        if close is not None:
            close()
    report = estimate_variance(samples)
    if args.json:
        print(json.dumps({"id": args.id, "n_samples": report.n_samples, "mean": report.mean,
                          "variance": report.variance, "samples": list(report.samples)}))
    else:
        print(f"record: {args.id}")
        print("samples: " + " ".join(repr(s) for s in report.samples))
        print(f"n_samples: {report.n_samples}")
        print(f"mean: {report.mean!r}")
        print(f"variance: {report.variance!r}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gveval", description="Judge image and video captions with a multimodal LLM.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("evaluate", help="score every caption of a corpus")
    p.add_argument("corpus", type=Path)
    _add_corpus_flags(p)
    _add_eval_flags(p)
    _add_settings_flags(p)
    p.add_argument("--parallel", type=int, help="worker threads (default 1)")
    p.add_argument("--out", type=Path, default=Path("gveval-run"), help="run directory (default: gveval-run)")
    p.add_argument("--no-cache", action="store_true", help="neither read nor write the response cache")
    p.add_argument("--limit", type=int, help="only the first N records")
    p.add_argument("--smoke", action="store_true", help=f"first {SMOKE_RECORDS} records, then check ranges and manifest")
    p.add_argument("--yes", action="store_true", help="proceed even when the token estimate exceeds the ceiling")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("correlate", help="Kendall tau-b/tau-c of scores against human judgments")
    p.add_argument("outcomes", type=Path, help=f"{OUTCOMES_FILE} from an evaluate run")
    p.add_argument("corpus", type=Path)
    _add_corpus_flags(p)
    p.add_argument("--human", choices=[h.value for h in HumanProjection], default="auto",
                   help="which human judgment to correlate against")
    p.add_argument("--style", choices=[s.value for s in ReportStyle], default=ReportStyle.TABLE.value)
    p.add_argument("--score", choices=["expected_score", "raw_score"], default="expected_score")
    p.add_argument("--dataset", default="", help="dataset label for the report")
    p.add_argument("--name", default="G-VEval", help="metric label for the judge scores")
    p.add_argument("--with-precomputed", action="store_true", help="also report precomputed metric columns")
    p.set_defaults(func=cmd_correlate)

    p = sub.add_parser("compose", help="build the three-frame strip for a video")
    p.add_argument("--input", type=Path, required=True, help="frame directory, video file or image")
    p.add_argument("--output", type=Path, required=True, help="PNG to write")
    p.add_argument("--input-kind", choices=["auto", "image", "video"], default="auto")
    p.add_argument("--config", type=Path, help="JSON config file")
    p.add_argument("--decoder-cmd", help="video decoder command with {input} and {outdir} tokens")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("foil", help="pairwise accuracy on true/foil caption pairs")
    p.add_argument("pairs", type=Path, help="pairs corpus")
    p.add_argument("scores", type=Path, help="outcomes JSON Lines or CSV with id,score")
    _add_corpus_flags(p, CorpusFormat.FOIL_PAIRS)
    p.add_argument("--score", choices=["expected_score", "raw_score"], default="expected_score")
    p.set_defaults(func=cmd_foil)

    p = sub.add_parser("variance", help="re-judge one record K times and report the variance")
    p.add_argument("corpus", type=Path)
    p.add_argument("--id", required=True, help="record id")
    p.add_argument("--repeats", type=int, required=True, metavar="K")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    _add_corpus_flags(p)
    _add_eval_flags(p)
    _add_settings_flags(p)
    p.set_defaults(func=cmd_variance)
    return parser


def _exit_code(exc: GVEvalError) -> int:
    if isinstance(exc, FixtureParseError):
        return EXIT_USAGE
    if isinstance(exc, BackendError):
        return EXIT_BACKEND
    return EXIT_USAGE


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except GVEvalError as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return _exit_code(exc)
    except OSError as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
