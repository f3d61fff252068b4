"""Regenerate src/gveval/prompts/checksums.txt after an intentional template edit."""

from __future__ import annotations

import hashlib
from pathlib import Path

PROMPTS = Path(__file__).resolve().parents[1] / "src" / "gveval" / "prompts"
VERSION = "1"


def main() -> None:
    lines = [f"# gveval prompt templates v{VERSION}"]
    for path in sorted(PROMPTS.rglob("*.txt")):
        if path.name == "checksums.txt":
            continue
        digest = hashlib.sha256(path.read_bytes()).hexdigest()
        lines.append(f"{digest}  {path.relative_to(PROMPTS).as_posix()}")
    (PROMPTS / "checksums.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))


if __name__ == "__main__":
    main()
