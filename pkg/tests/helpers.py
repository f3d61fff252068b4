"""Small builders shared by several test modules."""

from __future__ import annotations

import math
from typing import Sequence

import httpx

from gveval.backends import BackendResponse
from gveval.model import TokenRecord


def token(text: str, logprob: float = 0.0, alternatives: Sequence[tuple[str, float]] = ()) -> TokenRecord:
    return TokenRecord(text, logprob, tuple(alternatives))


def score_response(score_token: str, alternatives: dict[str, float] | None = None, *, probs: bool = False,
                   lead: str = "Looks right. The final score is ") -> BackendResponse:
    """``lead`` + ``$<score_token>$.`` with the given alternatives at the score token.

    With ``probs=True`` alternative weights are probabilities, else logprobs.
    """
    alts = {}
    for text, w in (alternatives or {}).items():
        alts[text] = math.log(w) if probs else w
    lp = alts.get(score_token, 0.0)
    tokens = (
        token(lead, -0.01),
        token("$"),
        token(score_token, lp, tuple(alts.items())),
        token("$"),
        token("."),
    )
    return BackendResponse("".join(t.text for t in tokens), tokens)


def text_response(text: str) -> BackendResponse:
    return BackendResponse(text, (token(text),) if text else ())


def chat_completion(score: str, alternatives: dict[str, float]) -> dict:
    """An OpenAI-style chat completion body ending in ``$<score>$.`` with logprobs."""
    lead = "The caption matches the image. The final score is $"
    entries = [
        {"token": lead, "logprob": -0.02, "top_logprobs": []},
        {"token": score, "logprob": math.log(alternatives[score]),
         "top_logprobs": [{"token": t, "logprob": math.log(p)} for t, p in alternatives.items()]},
        {"token": "$.", "logprob": -0.001, "top_logprobs": []},
    ]
    return {
        "choices": [{"message": {"content": f"{lead}{score}$."}, "logprobs": {"content": entries}}],
        "usage": {"prompt_tokens": 1200, "completion_tokens": 20},
    }


def install_fake_server(monkeypatch, handler) -> list[httpx.Request]:
    """Route the CLI's live backend through ``handler`` instead of the network."""
    from gveval import backends, cli

    seen: list[httpx.Request] = []

    def recording(request: httpx.Request) -> httpx.Response:
        seen.append(request)
        return handler(request)

    real = backends.ChatCompletionsBackend

    def patched(**kwargs):
        return real(transport=httpx.MockTransport(recording), sleep=lambda s: None, **kwargs)

    monkeypatch.setattr(cli, "ChatCompletionsBackend", patched)
    return seen
