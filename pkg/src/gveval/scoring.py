"""Score extraction and probability-weighted expected scores.

The judge prints its score as ``$85$`` (overall) or as four Greek-wrapped
integers (ACCR). The expected score is computed from the token
log-probabilities at the first token of the printed literal: every
alternative token that is by itself an in-range integer literal becomes a
candidate, the realized literal is always a candidate, and the candidates'
probabilities are renormalized.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from typing import NamedTuple

from gveval.backends import BackendResponse
from gveval.errors import (
    DegenerateDistribution,
    MissingDimension,
    NoScoreFound,
    NoTokenEvidence,
    ScoreOutOfRange,
    TooFewSamples,
)
from gveval.model import ACCR_DIMENSIONS, Scale, ScoreDistribution

_DOLLAR = re.compile(r"\$\s*([+-]?[0-9]+)\s*\$")
_BARE = re.compile(r"\s*([+-]?[0-9]+)\s*\.?\s*")
_DIGITS = re.compile(r"[0-9]+")
_MAX_LITERAL_DIGITS = 12

GREEK_WRAPPERS = {
    "accuracy": "α",
    "completeness": "β",
    "conciseness": "ψ",
    "relevance": "δ",
}
_GREEK = {dim: re.compile(rf"{g}\s*([+-]?[0-9]+)\s*{g}") for dim, g in GREEK_WRAPPERS.items()}


@dataclass(frozen=True)
class ScoreSpan:
    start: int
    end: int
    literal: str
    token_positions: tuple[int, ...] = field(default=())

    @property
    def char_range(self) -> tuple[int, int]:
        return self.start, self.end


class ExpectedScore(NamedTuple):
    value: float
    distribution: ScoreDistribution


@dataclass(frozen=True)
class VarianceReport:
    n_samples: int
    mean: float
    variance: float
    samples: tuple[float, ...]


def _literal_value(literal: str, low: int, high: int) -> int:
    digits = literal.lstrip("+-").lstrip("0") or "0"
    if len(digits) > _MAX_LITERAL_DIGITS:
        raise ScoreOutOfRange(literal, low, high)  # type: ignore[arg-type]
    value = int(literal)
    if not low <= value <= high:
        raise ScoreOutOfRange(value, low, high)
    return value


def extract_final_score(text: str, scale: Scale, *, bare: bool = False) -> tuple[int, ScoreSpan]:
    """Last dollar-wrapped integer in ``text``.

    With ``bare=True`` a response consisting of nothing but an integer is
    also accepted.
    """
    matches = list(_DOLLAR.finditer(text))
    if matches:
        m = matches[-1]
    elif bare and (m := _BARE.fullmatch(text)) is not None:
        pass
    else:
        raise NoScoreFound("no $<integer>$ score in response")
    literal = m.group(1)
    value = _literal_value(literal, scale.min, scale.max)
    return value, ScoreSpan(m.start(1), m.end(1), literal)


def locate_accr(text: str) -> dict[str, tuple[int, ScoreSpan]]:
    found: dict[str, tuple[int, ScoreSpan]] = {}
    for dim in ACCR_DIMENSIONS:
        matches = list(_GREEK[dim].finditer(text))
        if not matches:
            raise MissingDimension(dim.capitalize())
        m = matches[-1]
        literal = m.group(1)
        found[dim] = (_literal_value(literal, 0, 100), ScoreSpan(m.start(1), m.end(1), literal))
    return found


def extract_accr(text: str) -> tuple[int, int, int, int]:
    """(accuracy, completeness, conciseness, relevance) from α/β/ψ/δ wrappers."""
    found = locate_accr(text)
    return tuple(found[d][0] for d in ACCR_DIMENSIONS)  # type: ignore[return-value]


def token_offsets(response: BackendResponse) -> list[tuple[int, int]]:
    offsets = []
    pos = 0
    for tok in response.tokens:
        offsets.append((pos, pos + len(tok.text)))
        pos += len(tok.text)
    return offsets


def align_span(response: BackendResponse, span: ScoreSpan) -> ScoreSpan:
    """Fill in the token positions covering ``span``'s characters."""
    positions = tuple(
        i
        for i, (a, b) in enumerate(token_offsets(response))
        if a < span.end and b > span.start
    )
    return replace(span, token_positions=positions)


def _candidate(alt: str, prefix: str, suffix: str, low: int, high: int) -> int | None:
    core = alt.strip()
    if prefix:
        if not core.startswith(prefix):
            return None
        core = core[len(prefix):].strip()
    if suffix:
        if not core.endswith(suffix):
            return None
        core = core[: len(core) - len(suffix)].strip()
    if not _DIGITS.fullmatch(core) or len(core.lstrip("0")) > _MAX_LITERAL_DIGITS:
        return None
    value = int(core)
    return value if low <= value <= high else None


def expected_score(
    response: BackendResponse, span: ScoreSpan, scale: Scale | tuple[int, int]
) -> ExpectedScore:
    low, high = (scale.min, scale.max) if isinstance(scale, Scale) else scale
    if not span.token_positions:
        span = align_span(response, span)
    positions = span.token_positions
    if not positions:
        raise NoTokenEvidence("score literal is not covered by any token")
    first_pos = positions[0]
    first = response.tokens[first_pos]
    if not first.alternatives:
        raise NoTokenEvidence("no alternative tokens at the score position")

    tok_start, tok_end = token_offsets(response)[first_pos]
    multi = len(positions) > 1
    prefix = response.text[tok_start : span.start].strip()
    suffix = "" if multi else response.text[span.end : tok_end].strip()
    realized = int(span.literal)

    scored: list[tuple[int, float]] = []
    for alt_text, logprob in first.alternatives:
        if alt_text == first.text:
            if not multi:
                scored.append((realized, logprob))
            continue
        value = _candidate(alt_text, prefix, suffix, low, high)
        if value is not None:
            scored.append((value, logprob))
    if multi:
        scored.append((realized, math.fsum(response.tokens[p].logprob for p in positions)))
    if not scored:
        raise DegenerateDistribution("no candidate scores survived filtering")

    top = max(lp for _, lp in scored)
    weights: dict[int, float] = {}
    for value, lp in scored:
        weights[value] = weights.get(value, 0.0) + math.exp(lp - top)
    dist = ScoreDistribution.from_weights(weights, low, high)
    return ExpectedScore(dist.expected, dist)


def expected_accr(
    response: BackendResponse, spans: dict[str, ScoreSpan] | tuple[ScoreSpan, ...]
) -> tuple[ExpectedScore | NoTokenEvidence, ...]:
    """Per-dimension expected scores in ACCR order.

    A dimension without token evidence yields its :class:`NoTokenEvidence`
    error in place of a result; the other dimensions are unaffected.
    """
    ordered = [spans[d] for d in ACCR_DIMENSIONS] if isinstance(spans, dict) else list(spans)
    if len(ordered) != 4:
        raise ValueError("ACCR needs exactly four spans")
    results: list[ExpectedScore | NoTokenEvidence] = []
    for dim, span in zip(ACCR_DIMENSIONS, ordered):
        try:
            results.append(expected_score(response, span, (0, 100)))
        except NoTokenEvidence as exc:
            exc.dimension = dim  # type: ignore[attr-defined]
            results.append(exc)
    return tuple(results)


def estimate_variance(samples: list[float] | tuple[float, ...]) -> VarianceReport:
    """Population mean and variance of repeated expected-score samples."""
    values = tuple(float(s) for s in samples)
    if len(values) < 2:
        raise TooFewSamples(f"need at least 2 samples, got {len(values)}")
    n = len(values)
    mean = math.fsum(values) / n
    variance = math.fsum((v - mean) ** 2 for v in values) / n
    return VarianceReport(n_samples=n, mean=mean, variance=variance, samples=values)
