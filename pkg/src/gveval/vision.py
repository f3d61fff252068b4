"""Frame sampling and the three-tile frame strip used for video prompts.

A video is represented to the judge by its first, middle and last frames,
each letterboxed into a 512x512 tile and labelled "Frame k" in burned-in
pixels, side by side in one 1536x512 RGB image.
"""

from __future__ import annotations

import io
import shlex
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from gveval.errors import (
    DecoderFailed,
    EmptyVideo,
    SourceNotFound,
    WrongFrameCount,
    ZeroDimensionImage,
)
from gveval.model import ContentKind, VisualRef

TILE = 512
STRIP_SIZE = (3 * TILE, TILE)
LABEL_OFFSET = (8, 8)
GLYPH_SCALE = 4
LABEL_FG = (255, 255, 255)
LABEL_OUTLINE = (0, 0, 0)

IMAGE_SUFFIXES = frozenset({".png", ".jpg", ".jpeg", ".bmp", ".webp", ".tif", ".tiff", ".ppm"})

# 5x7 bitmap glyphs, enough for "Frame 0".."Frame 9".
_GLYPHS: dict[str, tuple[str, ...]] = {
    " ": (".....",) * 7,
    "F": ("#####", "#....", "#....", "####.", "#....", "#....", "#...."),
    "r": (".....", ".....", "#.##.", "##..#", "#....", "#....", "#...."),
    "a": (".....", ".....", ".###.", "....#", ".####", "#...#", ".####"),
    "m": (".....", ".....", "##.#.", "#.#.#", "#.#.#", "#.#.#", "#.#.#"),
    "e": (".....", ".....", ".###.", "#...#", "#####", "#....", ".###."),
    "0": (".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."),
    "1": ("..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."),
    "2": (".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"),
    "3": ("#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."),
    "4": ("...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."),
    "5": ("#####", "#....", "####.", "....#", "....#", "#...#", ".###."),
    "6": ("..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."),
    "7": ("#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."),
    "8": (".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."),
    "9": (".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."),
}


@dataclass(frozen=True)
class FrameStrip:
    pixels: Image.Image
    tile_sources: tuple[int, int, int]
    labels: tuple[str, str, str] = ("Frame 1", "Frame 2", "Frame 3")

    def __post_init__(self) -> None:
        if self.pixels.size != STRIP_SIZE or self.pixels.mode != "RGB":
            raise ValueError(f"strip must be {STRIP_SIZE} RGB, got {self.pixels.size} {self.pixels.mode}")

    def to_png(self) -> bytes:
        return encode_png(self.pixels)


def encode_png(image: Image.Image) -> bytes:
    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()


def sample_indices(frame_count: int) -> tuple[int, int, int]:
    """First, middle (floor) and last frame positions."""
    if frame_count < 1:
        raise EmptyVideo(f"video has {frame_count} frames")
    return 0, (frame_count - 1) // 2, frame_count - 1


def letterbox_geometry(width: int, height: int) -> tuple[int, int, int, int]:
    """Return ``(new_w, new_h, left, top)`` for fitting into one tile."""
    if width <= 0 or height <= 0:
        raise ZeroDimensionImage(f"image has size {width}x{height}")
    scale = min(TILE / width, TILE / height)
    new_w = min(TILE, max(1, round(width * scale)))
    new_h = min(TILE, max(1, round(height * scale)))
    return new_w, new_h, (TILE - new_w) // 2, (TILE - new_h) // 2


def fit_tile(frame: Image.Image) -> Image.Image:
    """Scale ``frame`` into a 512x512 tile, aspect preserved, black letterbox."""
    width, height = frame.size
    new_w, new_h, left, top = letterbox_geometry(width, height)
    rgb = frame.convert("RGB")
    if (width, height) == (TILE, TILE):
        return rgb.copy()
    resized = rgb.resize((new_w, new_h), Image.Resampling.LANCZOS)
    tile = Image.new("RGB", (TILE, TILE), (0, 0, 0))
    tile.paste(resized, (left, top))
    return tile


def _label_mask(text: str, scale: int = GLYPH_SCALE) -> np.ndarray:
    rows = []
    for r in range(7):
        row: list[bool] = []
        for ch in text:
            glyph = _GLYPHS[ch]
            row.extend(c == "#" for c in glyph[r])
            row.append(False)  # 1-column spacing
        rows.append(row[:-1])
    mask = np.array(rows, dtype=bool)
    return mask.repeat(scale, axis=0).repeat(scale, axis=1)


def draw_label(tile: Image.Image, text: str) -> Image.Image:
    """Burn ``text`` into the tile's top-left corner: white with a 1px dark outline."""
    mask = _label_mask(text)
    h, w = mask.shape
    padded = np.zeros((h + 2, w + 2), dtype=bool)
    padded[1:-1, 1:-1] = mask
    grown = padded.copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            grown |= np.roll(np.roll(padded, dy, axis=0), dx, axis=1)
    outline = grown & ~padded

    arr = np.array(tile.convert("RGB"))
    x0, y0 = LABEL_OFFSET[0] - 1, LABEL_OFFSET[1] - 1
    region = arr[y0 : y0 + h + 2, x0 : x0 + w + 2]
    region[outline] = LABEL_OUTLINE
    region[padded] = LABEL_FG
    return Image.fromarray(arr, "RGB")


def compose_strip(
    frames: list[Image.Image] | tuple[Image.Image, ...],
    tile_sources: tuple[int, int, int] = (0, 1, 2),
) -> FrameStrip:
    if len(frames) != 3:
        raise WrongFrameCount(f"need exactly 3 frames, got {len(frames)}")
    strip = Image.new("RGB", STRIP_SIZE, (0, 0, 0))
    labels = tuple(f"Frame {k}" for k in (1, 2, 3))
    for k, frame in enumerate(frames):
        tile = draw_label(fit_tile(frame), labels[k])
        strip.paste(tile, (k * TILE, 0))
    return FrameStrip(pixels=strip, tile_sources=tuple(tile_sources), labels=labels)  # type: ignore[arg-type]


def _list_images(directory: Path) -> list[Path]:
    return sorted(
        (p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES),
        key=lambda p: p.name,
    )


def extract_frames(
    source: str | Path,
    *,
    decoder_cmd: str | None = None,
    outdir: str | Path | None = None,
    fps: float = 1.0,
) -> list[tuple[Path, float]]:
    """List the frames of ``source`` as ``(path, timestamp_seconds)``.

    A directory is read as pre-decoded frames in lexicographic file order.
    A video file is handed to ``decoder_cmd`` (tokens ``{input}`` and
    ``{outdir}``), which must write numbered stills into ``outdir``.
    Timestamps assume a constant ``fps``.
    """
    src = Path(source)
    if not src.exists():
        raise SourceNotFound(f"{src} does not exist")
    if src.is_dir():
        frame_dir = src
    else:
        if not decoder_cmd:
            raise DecoderFailed(None, "", f"{src} is a file and no decoder command is configured")
        if outdir is None:
            raise ValueError("decoding a video file needs an output directory")
        frame_dir = Path(outdir)
        frame_dir.mkdir(parents=True, exist_ok=True)
        argv = [tok.format(input=str(src), outdir=str(frame_dir)) for tok in shlex.split(decoder_cmd)]
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, check=False)
        except OSError as exc:
            raise DecoderFailed(None, str(exc)) from exc
        if proc.returncode != 0:
            raise DecoderFailed(proc.returncode, proc.stderr)
    paths = _list_images(frame_dir)
    if not paths:
        raise EmptyVideo(f"no frames found for {src}")
    return [(p, i / fps) for i, p in enumerate(paths)]


def strip_from_source(source: str | Path, *, decoder_cmd: str | None = None) -> FrameStrip:
    """Extract, sample and composite the frame strip for one video."""
    with tempfile.TemporaryDirectory(prefix="gveval-frames-") as tmp:
        frames = extract_frames(source, decoder_cmd=decoder_cmd, outdir=tmp)
        indices = sample_indices(len(frames))
        images = []
        for i in indices:
            with Image.open(frames[i][0]) as im:
                im.load()
                images.append(im.copy())
        return compose_strip(images, tile_sources=indices)


def prepare_attachment(visual: VisualRef, *, decoder_cmd: str | None = None) -> bytes:
    """PNG payload for a record's visual: the image itself, or the frame strip."""
    path = visual.resolved
    if path is None:
        raise SourceNotFound("visual has no path")
    if not path.exists():
        raise SourceNotFound(f"{path} does not exist")
    if visual.kind is ContentKind.VIDEO:
        return strip_from_source(path, decoder_cmd=decoder_cmd).to_png()
    data = path.read_bytes()
    if data.startswith(b"\x89PNG\r\n\x1a\n"):
        return data
    with Image.open(io.BytesIO(data)) as im:
        if im.size[0] <= 0 or im.size[1] <= 0:
            raise ZeroDimensionImage(f"{path} has no pixels")
        return encode_png(im.convert("RGB"))
