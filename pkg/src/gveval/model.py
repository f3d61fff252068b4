"""Domain types shared across the pipeline.

Everything here is an immutable value object; behaviour is limited to
construction-time validation plus :func:`validate_record`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from gveval.errors import (
    ConfigError,
    EmptyCaption,
    MissingReferences,
    MissingVisual,
    UnsupportedCombination,
)

PROBABILITY_TOLERANCE = 1e-9


class Mode(str, Enum):
    REF_ONLY = "ref-only"
    REF_FREE = "ref-free"
    COMBINED = "combined"

    @property
    def needs_references(self) -> bool:
        return self is not Mode.REF_FREE

    @property
    def needs_visual(self) -> bool:
        return self is not Mode.REF_ONLY


class Scale(Enum):
    """Score range offered to the judge: scoring (0-100) or rating (1-5)."""

    SCORING = "scoring"
    RATING = "rating"

    @property
    def min(self) -> int:
        return 0 if self is Scale.SCORING else 1

    @property
    def max(self) -> int:
        return 100 if self is Scale.SCORING else 5


class Dimensionality(str, Enum):
    OVERALL = "overall"
    ACCR = "accr"


class ContentKind(str, Enum):
    IMAGE = "image"
    VIDEO = "video"


class HumanKind(str, Enum):
    EXPERT_MEAN = "expert-mean"
    CROWD_PROPORTION = "crowd-proportion"
    VATEX_SCORE = "vatex-score"
    ACCR = "accr"


ACCR_DIMENSIONS = ("accuracy", "completeness", "conciseness", "relevance")

# (low, high) bounds per human judgment kind, stored raw and never rescaled.
HUMAN_BOUNDS: dict[HumanKind, tuple[float, float]] = {
    HumanKind.EXPERT_MEAN: (1.0, 4.0),
    HumanKind.CROWD_PROPORTION: (0.0, 1.0),
    HumanKind.VATEX_SCORE: (1.0, 5.0),
    HumanKind.ACCR: (0.0, 100.0),
}


@dataclass(frozen=True)
class CandidateCaption:
    id: str
    text: str
    visual_id: str


@dataclass(frozen=True)
class ReferenceSet:
    visual_id: str
    captions: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "captions", tuple(self.captions))


@dataclass(frozen=True)
class VisualRef:
    """Lazy handle to the visual content of a record (not yet decoded).

    ``path`` may be ``None`` for reference-only corpora that still need to say
    whether the caption describes an image or a video.
    """

    kind: ContentKind
    path: str | None = None
    root: Path | None = field(default=None, compare=False)

    @property
    def id(self) -> str:
        return self.path or ""

    @property
    def resolved(self) -> Path | None:
        if self.path is None:
            return None
        p = Path(self.path)
        if not p.is_absolute() and self.root is not None:
            p = self.root / p
        return p


@dataclass(frozen=True)
class Frame:
    image: Any  # PIL.Image.Image
    timestamp: float
    index: int = 0


@dataclass(frozen=True)
class VisualContent:
    """Decoded visual content: a single image or a timestamp-ordered frame list."""

    id: str
    kind: ContentKind
    image: Any = None
    frames: tuple[Frame, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind is ContentKind.IMAGE:
            if self.image is None or self.frames is not None:
                raise ValueError("image content needs exactly an image")
        else:
            if self.frames is None or self.image is not None:
                raise ValueError("video content needs exactly a frame list")
            frames = tuple(self.frames)
            if not frames:
                raise ValueError("frame list is empty")
            stamps = [f.timestamp for f in frames]
            if stamps != sorted(stamps):
                raise ValueError("frames are not sorted by timestamp")
            object.__setattr__(self, "frames", frames)


@dataclass(frozen=True)
class HumanJudgment:
    """Human score for one caption, kept on its original scale.

    ``value`` is a float for scalar kinds and a 4-tuple for ACCR.
    ``raw`` carries per-annotator values when the source provides them.
    """

    kind: HumanKind
    value: float | tuple[float, float, float, float]
    raw: tuple[Any, ...] = ()

    def __post_init__(self) -> None:
        low, high = HUMAN_BOUNDS[self.kind]
        if self.kind is HumanKind.ACCR:
            values = tuple(float(v) for v in self.value)  # type: ignore[union-attr]
            if len(values) != 4:
                raise ValueError("ACCR judgment needs four values")
            object.__setattr__(self, "value", values)
        else:
            values = (float(self.value),)  # type: ignore[arg-type]
            object.__setattr__(self, "value", values[0])
        for v in values:
            if not (low <= v <= high) or math.isnan(v):
                raise ValueError(f"{self.kind.value} value {v} outside [{low}, {high}]")
        object.__setattr__(self, "raw", tuple(self.raw))


@dataclass(frozen=True)
class CorpusRecord:
    id: str
    candidate: CandidateCaption
    references: ReferenceSet
    visual: VisualRef | None = None
    human: HumanJudgment | None = None
    precomputed_metrics: Mapping[str, float] = field(default_factory=dict)

    @property
    def content_kind(self) -> ContentKind:
        return self.visual.kind if self.visual is not None else ContentKind.IMAGE


@dataclass(frozen=True)
class EvalConfig:
    mode: Mode = Mode.COMBINED
    scale: Scale = Scale.SCORING
    dimensionality: Dimensionality = Dimensionality.OVERALL
    use_expected_score: bool = True
    include_cot_steps: bool = True
    require_reason: bool = True
    top_k_logprobs: int = 20
    temperature: float = 0.0
    max_retries: int = 5
    parallelism: int = 1
    max_output_tokens: int = 1024

    def __post_init__(self) -> None:
        if self.use_expected_score and self.top_k_logprobs < 1:
            raise ConfigError("top_k_logprobs must be >= 1 when use_expected_score is on")
        if self.top_k_logprobs < 0:
            raise ConfigError("top_k_logprobs must be >= 0")
        if self.scale is Scale.RATING and self.dimensionality is Dimensionality.ACCR:
            raise UnsupportedCombination("ACCR prompts are only defined on the 0-100 scale")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode.value,
            "scale": self.scale.value,
            "dimensionality": self.dimensionality.value,
            "use_expected_score": self.use_expected_score,
            "include_cot_steps": self.include_cot_steps,
            "require_reason": self.require_reason,
            "top_k_logprobs": self.top_k_logprobs,
            "temperature": self.temperature,
            "max_retries": self.max_retries,
            "parallelism": self.parallelism,
            "max_output_tokens": self.max_output_tokens,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EvalConfig:
        kwargs = dict(data)
        if "mode" in kwargs:
            kwargs["mode"] = Mode(kwargs["mode"])
        if "scale" in kwargs:
            kwargs["scale"] = Scale(kwargs["scale"])
        if "dimensionality" in kwargs:
            kwargs["dimensionality"] = Dimensionality(kwargs["dimensionality"])
        return cls(**kwargs)


@dataclass(frozen=True)
class ScoreDistribution:
    """Probability mass over integer scores in ``[min_score, max_score]``.

    Weights passed in need not sum to one; they are renormalized here.
    """

    support: tuple[tuple[int, float], ...]
    max_score: int
    min_score: int

    def __post_init__(self) -> None:
        if self.min_score > self.max_score:
            raise ValueError("min_score exceeds max_score")
        merged: dict[int, float] = {}
        for score, weight in self.support:
            if isinstance(score, bool) or int(score) != score:
                raise ValueError(f"non-integer score {score!r}")
            score = int(score)
            if not self.min_score <= score <= self.max_score:
                raise ValueError(f"score {score} outside [{self.min_score}, {self.max_score}]")
            if score in merged:
                raise ValueError(f"duplicate score {score}")
            weight = float(weight)
            if not math.isfinite(weight) or weight < 0:
                raise ValueError(f"invalid weight {weight} for score {score}")
            merged[score] = weight
        total = math.fsum(merged.values())
        if not merged or total <= 0:
            raise ValueError("distribution has no mass")
        support = tuple((s, merged[s] / total) for s in sorted(merged))
        object.__setattr__(self, "support", support)

    @classmethod
    def from_weights(
        cls, weights: Mapping[int, float], min_score: int, max_score: int
    ) -> ScoreDistribution:
        return cls(tuple(weights.items()), max_score=max_score, min_score=min_score)

    @classmethod
    def point_mass(cls, score: int, min_score: int, max_score: int) -> ScoreDistribution:
        return cls(((score, 1.0),), max_score=max_score, min_score=min_score)

    @property
    def expected(self) -> float:
        value = math.fsum(score * p for score, p in self.support)
        # guard against ulp drift outside the convex hull
        return min(max(value, float(self.support[0][0])), float(self.support[-1][0]))

    def as_pairs(self) -> list[list[float]]:
        return [[s, p] for s, p in self.support]


@dataclass(frozen=True)
class TokenRecord:
    """One generated token with its log-probability and top alternatives.

    Alternatives are kept sorted by descending log-probability and always
    contain the realized token.
    """

    text: str
    logprob: float
    alternatives: tuple[tuple[str, float], ...] = ()

    def __post_init__(self) -> None:
        logprob = float(self.logprob)
        if logprob > 0 or math.isnan(logprob):
            raise ValueError(f"logprob must be <= 0, got {logprob}")
        alts = [(str(t), float(lp)) for t, lp in self.alternatives]
        if alts and all(t != self.text for t, _ in alts):
            alts.insert(0, (self.text, logprob))
        alts.sort(key=lambda item: -item[1])
        object.__setattr__(self, "logprob", logprob)
        object.__setattr__(self, "alternatives", tuple(alts))


@dataclass(frozen=True)
class EvalOutcome:
    """One judged caption.

    For ACCR runs ``raw_score``/``expected_score`` summarize the four
    dimensions (rounded mean and mean of expectations); the distribution is
    the equal-weight mixture of the per-dimension distributions.
    """

    record_id: str
    reason: str
    raw_score: int
    expected_score: float
    distribution: ScoreDistribution
    accr: tuple[int, int, int, int] | None = None
    accr_expected: tuple[float, float, float, float] | None = None
    token_evidence: tuple[TokenRecord, ...] = ()
    cache_hit: bool = False
    distribution_truncated: bool = False
    score_source: str = "logprobs"

    def __post_init__(self) -> None:
        d = self.distribution
        if not d.min_score <= self.raw_score <= d.max_score:
            raise ValueError(f"raw score {self.raw_score} outside distribution bounds")
        if not d.min_score <= self.expected_score <= d.max_score:
            raise ValueError(f"expected score {self.expected_score} outside bounds")
        if abs(self.expected_score - d.expected) > 1e-9:
            raise ValueError("expected score disagrees with distribution")
        if self.accr is not None:
            if len(self.accr) != 4 or any(not 0 <= v <= 100 for v in self.accr):
                raise ValueError(f"invalid ACCR quadruple {self.accr}")


def validate_record(record: CorpusRecord, config: EvalConfig) -> None:
    """Raise a named :class:`~gveval.errors.ValidationError` if ``record``
    cannot be judged under ``config.mode``; return ``None`` otherwise."""
    rid = str(getattr(record, "id", "<unknown>"))
    candidate = getattr(record, "candidate", None)
    text = getattr(candidate, "text", None)
    if not isinstance(text, str) or not text.strip():
        raise EmptyCaption(rid, "candidate caption is empty")
    captions = getattr(getattr(record, "references", None), "captions", ()) or ()
    for i, caption in enumerate(captions):
        if not isinstance(caption, str) or not caption.strip():
            raise EmptyCaption(rid, f"reference caption {i + 1} is empty")
    if config.mode.needs_references and not captions:
        raise MissingReferences(rid, f"mode {config.mode.value} needs reference captions")
    if config.mode.needs_visual:
        visual = getattr(record, "visual", None)
        if visual is None or getattr(visual, "path", None) is None:
            raise MissingVisual(rid, f"mode {config.mode.value} needs visual content")
