"""Content-addressed on-disk cache of judge responses.

One JSON blob per request digest, sharded by the first two hex characters.
Each blob carries a checksum of its own body; a blob that fails the check is
treated as a miss and rewritten.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from gveval.backends import (
    Backend,
    BackendRequest,
    BackendResponse,
    request_digest,
    response_from_body,
    response_to_body,
)
from gveval.errors import CacheCorrupt, MalformedBackendReply

logger = logging.getLogger(__name__)


def _body_checksum(blob: dict[str, Any]) -> str:
    body = {k: v for k, v in blob.items() if k != "checksum"}
    canonical = json.dumps(body, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ResponseCache:
    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def path_for(self, digest: str) -> Path:
        return self.root / digest[:2] / f"{digest}.json"

    def load(self, digest: str) -> BackendResponse | None:
        """Stored response for ``digest``; ``None`` on a miss.

        Raises :class:`CacheCorrupt` when a blob exists but is unreadable.
        """
        path = self.path_for(digest)
        if not path.exists():
            return None
        try:
            blob = json.loads(path.read_text(encoding="utf-8"))
            if blob.get("checksum") != _body_checksum(blob):
                raise CacheCorrupt(f"checksum mismatch in {path}")
            if blob.get("request_digest") != digest:
                raise CacheCorrupt(f"{path} belongs to another request")
            return response_from_body(blob)
        except CacheCorrupt:
            raise
        except (ValueError, KeyError, TypeError, AttributeError, MalformedBackendReply) as exc:
            raise CacheCorrupt(f"unreadable cache blob {path}: {exc}") from exc

    def store(self, digest: str, request: BackendRequest, response: BackendResponse) -> Path:
        blob = {
            "request_digest": digest,
            "model_id": request.model_id,
            **response_to_body(response),
            "created_at": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        }
        blob["checksum"] = _body_checksum(blob)
        path = self.path_for(digest)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".tmp-", suffix=".json", dir=path.parent)
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(blob, fh, ensure_ascii=False, sort_keys=True, indent=1)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
        return path

    def _count(self, hit: bool) -> None:
        with self._lock:
            if hit:
                self.hits += 1
            else:
                self.misses += 1


def cached_complete(
    backend: Backend,
    request: BackendRequest,
    cache: ResponseCache | None,
    *,
    bypass: bool = False,
) -> tuple[BackendResponse, bool]:
    """Serve ``request`` from ``cache`` when possible, else call ``backend``
    and persist the reply. Returns ``(response, cache_hit)``.

    ``bypass`` skips the lookup and the write (used for repeated sampling).
    """
    if cache is None or bypass:
        return backend.complete(request), False
    digest = request_digest(request)
    try:
        stored = cache.load(digest)
    except CacheCorrupt as exc:
        logger.warning("%s; recomputing", exc)
        stored = None
    if stored is not None:
        cache._count(True)
        return stored, True
    cache._count(False)
    response = backend.complete(request)
    cache.store(digest, request, response)
    return response, False
