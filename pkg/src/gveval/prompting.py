"""Judge prompt assembly from the bundled, checksummed templates.

Templates live under ``gveval/prompts/<kind>/<mode>/<dimensionality>.txt``.
Ablation switches are applied to the template *before* the caption and
references are substituted, so user text never interacts with section
detection or the rating-scale rewrite.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from importlib import resources

from gveval.errors import EmptyReferenceSet, MissingVisual, TemplateMissing, UnsupportedCombination
from gveval.model import (
    CandidateCaption,
    ContentKind,
    Dimensionality,
    EvalConfig,
    Mode,
    ReferenceSet,
    Scale,
)

REFERENCE_PLACEHOLDER = "{{Reference}}"
CAPTION_PLACEHOLDER = "{{Caption}}"

STEPS_HEADING = "Evaluation Steps:"
RESPONSE_HEADING = "Response Format:"
SECTION_HEADINGS = frozenset(
    {
        "Evaluation Criteria:",
        "Evaluation Dimensions:",
        STEPS_HEADING,
        "Reference captions:",
        "Generated captions:",
        RESPONSE_HEADING,
        "Image is attached",
        "Video Frames are attached",
    }
)


class ResponseGrammar(str, Enum):
    DOLLAR_WRAPPED = "dollar-wrapped"
    GREEK_WRAPPED_ACCR = "greek-wrapped-accr"
    BARE_SCORE = "bare-score"


@dataclass(frozen=True)
class PromptBundle:
    text: str
    attachments: tuple[bytes, ...]
    expected_response_grammar: ResponseGrammar
    template: str


def _prompt_files():
    return resources.files("gveval") / "prompts"


@lru_cache(maxsize=1)
def template_checksums() -> dict[str, str]:
    """Declared sha256 of every template, keyed by relative path."""
    try:
        text = (_prompt_files() / "checksums.txt").read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise TemplateMissing("prompts/checksums.txt is missing") from exc
    sums: dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        digest, name = line.split(None, 1)
        sums[name.strip()] = digest
    return sums


@lru_cache(maxsize=None)
def load_template(relpath: str) -> str:
    expected = template_checksums().get(relpath)
    if expected is None:
        raise TemplateMissing(f"no checksum entry for {relpath}")
    try:
        data = (_prompt_files() / relpath).read_bytes()
    except FileNotFoundError as exc:
        raise TemplateMissing(f"template {relpath} is missing") from exc
    if hashlib.sha256(data).hexdigest() != expected:
        raise TemplateMissing(f"template {relpath} does not match its checksum")
    return data.decode("utf-8")


def template_path(kind: ContentKind, mode: Mode, dimensionality: Dimensionality) -> str:
    if dimensionality is Dimensionality.ACCR and kind is not ContentKind.VIDEO:
        raise UnsupportedCombination("ACCR templates exist for video captions only")
    return f"{kind.value}/{mode.value}/{dimensionality.value}.txt"


def join_references(references: ReferenceSet | list[str] | tuple[str, ...]) -> str:
    captions = references.captions if isinstance(references, ReferenceSet) else tuple(references)
    if not captions:
        raise EmptyReferenceSet("reference set is empty")
    return "\n".join(f"{n}. {caption}" for n, caption in enumerate(captions, start=1))


def _drop_steps(text: str) -> str:
    lines = text.split("\n")
    try:
        start = lines.index(STEPS_HEADING)
    except ValueError:
        return text
    end = next(
        (i for i in range(start + 1, len(lines)) if lines[i] in SECTION_HEADINGS),
        len(lines),
    )
    return "\n".join(lines[:start] + lines[end:])


def _bare_response(text: str, dimensionality: Dimensionality) -> str:
    lines = text.split("\n")
    try:
        start = lines.index(RESPONSE_HEADING)
    except ValueError as exc:
        raise TemplateMissing("template has no response format section") from exc
    name = "accr-bare.txt" if dimensionality is Dimensionality.ACCR else "overall-bare.txt"
    block = load_template(f"response/{name}")
    return "\n".join(lines[:start]) + "\n" + block


def render_template(
    kind: ContentKind,
    mode: Mode,
    dimensionality: Dimensionality,
    *,
    scale: Scale = Scale.SCORING,
    include_cot_steps: bool = True,
    require_reason: bool = True,
) -> str:
    """Template text with ablations applied and placeholders still in place."""
    if scale is Scale.RATING and dimensionality is Dimensionality.ACCR:
        raise UnsupportedCombination("ACCR prompts are only defined on the 0-100 scale")
    text = load_template(template_path(kind, mode, dimensionality))
    if not include_cot_steps:
        text = _drop_steps(text)
    if not require_reason:
        text = _bare_response(text, dimensionality)
    if scale is Scale.RATING:
        text = text.replace("from 0 to 100", "from 1 to 5")
    return text


def build_prompt(
    config: EvalConfig,
    candidate: CandidateCaption,
    references: ReferenceSet,
    visual_attachment: bytes | None = None,
    *,
    kind: ContentKind = ContentKind.IMAGE,
) -> PromptBundle:
    relpath = template_path(kind, config.mode, config.dimensionality)
    text = render_template(
        kind,
        config.mode,
        config.dimensionality,
        scale=config.scale,
        include_cot_steps=config.include_cot_steps,
        require_reason=config.require_reason,
    )
    # single pass so a caption containing "{{Reference}}" is not re-expanded
    substitutions = {CAPTION_PLACEHOLDER: candidate.text}
    if REFERENCE_PLACEHOLDER in text:
        substitutions[REFERENCE_PLACEHOLDER] = join_references(references)
    text = _substitute(text, substitutions)

    attachments: tuple[bytes, ...] = ()
    if config.mode.needs_visual:
        if visual_attachment is None:
            raise MissingVisual(candidate.id, f"mode {config.mode.value} needs an attachment")
        attachments = (visual_attachment,)

    if config.dimensionality is Dimensionality.ACCR:
        grammar = ResponseGrammar.GREEK_WRAPPED_ACCR
    elif config.require_reason:
        grammar = ResponseGrammar.DOLLAR_WRAPPED
    else:
        grammar = ResponseGrammar.BARE_SCORE
    return PromptBundle(text=text, attachments=attachments, expected_response_grammar=grammar, template=relpath)


def _substitute(text: str, mapping: dict[str, str]) -> str:
    out: list[str] = []
    i = 0
    while i < len(text):
        for key, value in mapping.items():
            if text.startswith(key, i):
                out.append(value)
                i += len(key)
                break
        else:
            nxt = min((p for p in (text.find(k, i) for k in mapping) if p >= 0), default=len(text))
            if nxt == i:
                nxt += 1
            out.append(text[i:nxt])
            i = nxt
    return "".join(out)
