"""Synthetic rendering of 10x10 mark-grid templates with known labels.

Produces grayscale scans of the printed template: a 10x10 table with the
digits 0-9 printed down each column (row ``d`` shows digit ``d``), marked
cells blackened with slightly varying ink, optional cross-out strokes over
the whole table, and scanner-style noise. Every sample is generated from a
seed-derived random stream, so datasets are reproducible byte for byte.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .labels import GridLabel, from_text, is_cfmt, to_text

KIND_CFMT = "cfmt"
KIND_MULTI = "multi-mark"
KIND_MISSING = "missing-column"
KIND_CROSSED = "crossed-out"
KINDS = (KIND_CFMT, KIND_MULTI, KIND_MISSING, KIND_CROSSED)

GRID_LINE_LEVEL = 0.25
CROSS_LEVEL = 0.25
CROSS_WIDTH = 2.0
CELL_INTERIOR_INSET = 3  # pixels beyond the grid line, for fills and metering
MARK_DELTA = 0.3  # a cell counts as marked when interior mean < background - MARK_DELTA

# 5x7 dot-matrix digit glyphs.
_FONT = {
    "0": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "3": ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    "4": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "5": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "6": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    "8": ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    "9": ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}


@dataclass(frozen=True)
class GlyphStyle:
    """Printed-digit rendering: integer scale of the 5x7 font and gray level."""

    scale: int = 2
    level: float = 0.45


@dataclass(frozen=True)
class InkModel:
    """Fill darkness of a blackened cell, drawn per cell."""

    mean: float = 0.12
    std: float = 0.05


@dataclass(frozen=True)
class NoiseModel:
    gaussian_sigma: float = 0.03
    salt_pepper: float = 0.005


@dataclass(frozen=True)
class RenderSpec:
    canvas_size: int = 320
    cell_size: int = 28
    grid_line_width: int = 2
    glyph_style: GlyphStyle = field(default_factory=GlyphStyle)
    ink_model: InkModel = field(default_factory=InkModel)
    jitter: int = 2
    noise: NoiseModel = field(default_factory=NoiseModel)
    background_level: float = 0.95

    def __post_init__(self):
        if self.margin < self.grid_line_width + 2:
            raise ValueError(
                f"canvas {self.canvas_size} cannot fit a 10x10 grid of "
                f"{self.cell_size}px cells plus margins"
            )
        for name, value in (
            ("glyph level", self.glyph_style.level),
            ("ink mean", self.ink_model.mean),
            ("background level", self.background_level),
        ):
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        glyph_h = 7 * self.glyph_style.scale
        if glyph_h > self.cell_size - 2 * self.grid_line_width:
            raise ValueError("glyph does not fit inside a cell")

    @property
    def margin(self) -> int:
        return (self.canvas_size - 10 * self.cell_size) // 2


def _cell_bounds(spec: RenderSpec, row: int, col: int) -> tuple[int, int, int, int]:
    """(top, left, bottom, right) pixel bounds of a cell, half-open."""
    top = spec.margin + row * spec.cell_size
    left = spec.margin + col * spec.cell_size
    return top, left, top + spec.cell_size, left + spec.cell_size


def _interior_bounds(spec: RenderSpec, row: int, col: int) -> tuple[int, int, int, int]:
    t, l, b, r = _cell_bounds(spec, row, col)
    inset = spec.grid_line_width + CELL_INTERIOR_INSET
    return t + inset, l + inset, b - inset, r - inset


def sample_label(rng: np.random.Generator, kind: str) -> GridLabel:
    """Draw a random label of the given kind.

    cfmt: one uniform mark per column. multi-mark: a cfmt base plus 1-3 extra
    marks in distinct columns. missing-column: a cfmt base with 1-3 columns
    cleared. crossed-out: any of the previous patterns (the cross itself is a
    render-time overlay, not part of the label).
    """
    if kind == KIND_CROSSED:
        base = (KIND_CFMT, KIND_MULTI, KIND_MISSING)[rng.integers(0, 3)]
        return sample_label(rng, base)
    if kind not in KINDS:
        raise ValueError(f"unknown sample kind {kind!r}")

    cells = np.zeros((10, 10), dtype=np.uint8)
    rows = rng.integers(0, 10, size=10)
    cells[rows, np.arange(10)] = 1
    if kind == KIND_MULTI:
        k = int(rng.integers(1, 4))
        for col in rng.choice(10, size=k, replace=False):
            extra = int(rng.integers(0, 9))
            if extra >= rows[col]:
                extra += 1  # skip the digit already marked
            cells[extra, col] = 1
    elif kind == KIND_MISSING:
        m = int(rng.integers(1, 4))
        for col in rng.choice(10, size=m, replace=False):
            cells[:, col] = 0
    return GridLabel(cells)


def _draw_glyph(img: np.ndarray, spec: RenderSpec, row: int, col: int) -> None:
    style = spec.glyph_style
    bitmap = _FONT[str(row)]
    gh, gw = 7 * style.scale, 5 * style.scale
    t, l, b, r = _cell_bounds(spec, row, col)
    top = t + (spec.cell_size - gh) // 2
    left = l + (spec.cell_size - gw) // 2
    block = np.ones((gh, gw), dtype=img.dtype)
    for i, line in enumerate(bitmap):
        for j, bit in enumerate(line):
            if bit == "1":
                block[
                    i * style.scale : (i + 1) * style.scale,
                    j * style.scale : (j + 1) * style.scale,
                ] = style.level
    region = img[top : top + gh, left : left + gw]
    np.minimum(region, block, out=region)


def _draw_stroke(img: np.ndarray, p0, p1, width: float, level: float) -> None:
    """Darken pixels within width/2 of the segment p0-p1 (row, col coords)."""
    rr, cc = np.mgrid[0 : img.shape[0], 0 : img.shape[1]]
    d = np.array(p1, dtype=float) - np.array(p0, dtype=float)
    norm2 = float(d @ d)
    vr, vc = rr - p0[0], cc - p0[1]
    t = np.clip((vr * d[0] + vc * d[1]) / norm2, 0.0, 1.0)
    dist2 = (vr - t * d[0]) ** 2 + (vc - t * d[1]) ** 2
    mask = dist2 <= (width / 2.0) ** 2
    img[mask] = np.minimum(img[mask], level)


def render(
    label: GridLabel, spec: RenderSpec, kind: str, rng: np.random.Generator
) -> np.ndarray:
    """Render one template scan as a float array in [0, 1].

    Deterministic given (label, spec, kind, rng state). Random draws happen
    in a fixed order: per-mark ink and jitter (row-major), cross stroke
    endpoints, then pixel noise.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown sample kind {kind!r}")
    n = spec.canvas_size
    img = np.full((n, n), spec.background_level, dtype=np.float64)

    # Grid lines on all 11 row/column boundaries.
    lw = spec.grid_line_width
    for i in range(11):
        pos = spec.margin + i * spec.cell_size - lw // 2
        span = (spec.margin - lw // 2, spec.margin + 10 * spec.cell_size + lw - lw // 2)
        img[pos : pos + lw, span[0] : span[1]] = np.minimum(
            img[pos : pos + lw, span[0] : span[1]], GRID_LINE_LEVEL
        )
        img[span[0] : span[1], pos : pos + lw] = np.minimum(
            img[span[0] : span[1], pos : pos + lw], GRID_LINE_LEVEL
        )

    for row in range(10):
        for col in range(10):
            _draw_glyph(img, spec, row, col)

    # Blackened cells: ink level drawn per mark, rectangle offset by jitter.
    for row in range(10):
        for col in range(10):
            if not label.cells[row, col]:
                continue
            ink = float(np.clip(rng.normal(spec.ink_model.mean, spec.ink_model.std), 0.0, 1.0))
            dr, dc = (
                (int(rng.integers(-spec.jitter, spec.jitter + 1)), int(rng.integers(-spec.jitter, spec.jitter + 1)))
                if spec.jitter > 0
                else (0, 0)
            )
            t, l, b, r = _cell_bounds(spec, row, col)
            inset = lw + 1
            t, l, b, r = t + inset + dr, l + inset + dc, b - inset + dr, r - inset + dc
            region = img[max(t, 0) : b, max(l, 0) : r]
            np.minimum(region, ink, out=region)

    if kind == KIND_CROSSED:
        g0 = spec.margin
        g1 = spec.margin + 10 * spec.cell_size
        off = rng.integers(-3, 4, size=4)
        _draw_stroke(img, (g0 + off[0], g0), (g1 + off[1], g1), CROSS_WIDTH, CROSS_LEVEL)
        _draw_stroke(img, (g1 + off[2], g0), (g0 + off[3], g1), CROSS_WIDTH, CROSS_LEVEL)

    if spec.noise.gaussian_sigma > 0:
        img += rng.normal(0.0, spec.noise.gaussian_sigma, size=img.shape)
    if spec.noise.salt_pepper > 0:
        u = rng.random(size=img.shape)
        img[u < spec.noise.salt_pepper / 2] = 0.0
        img[u > 1.0 - spec.noise.salt_pepper / 2] = 1.0
    return np.clip(img, 0.0, 1.0)


def cell_interior_means(image: np.ndarray, spec: RenderSpec) -> np.ndarray:
    """10x10 matrix of mean intensity over each cell interior."""
    means = np.empty((10, 10), dtype=np.float64)
    for row in range(10):
        for col in range(10):
            t, l, b, r = _interior_bounds(spec, row, col)
            means[row, col] = image[t:b, l:r].mean()
    return means


def label_from_pixels(image: np.ndarray, spec: RenderSpec) -> GridLabel:
    """Classical-CV decode: a cell is marked when its interior mean drops
    more than MARK_DELTA below the background level. Exact on noise-free
    renders; used as the independent oracle for the neural path."""
    means = cell_interior_means(image, spec)
    return GridLabel((means < spec.background_level - MARK_DELTA).astype(np.uint8))


@dataclass(frozen=True)
class SampleRecord:
    """One generated sample: rendered image, its label, kind, and seed.

    A cfmt kind must carry a correctly filled label and the two incorrect
    fill kinds must not; crossed-out may carry either pattern (the cross is
    an overlay that makes the sheet visibly invalid regardless).
    """

    image: np.ndarray
    label: GridLabel
    kind: str
    seed: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sample kind {self.kind!r}")
        if self.kind == KIND_CFMT and not is_cfmt(self.label):
            raise ValueError("cfmt sample with a label that is not correctly filled")
        if self.kind in (KIND_MULTI, KIND_MISSING) and is_cfmt(self.label):
            raise ValueError(f"{self.kind} sample with a correctly filled label")


def make_sample(kind: str, spec: RenderSpec, seed_key) -> SampleRecord:
    """Draw a label of the given kind and render it, all from one derived
    stream, so the record is reproducible from (kind, spec, seed_key)."""
    rng = np.random.default_rng(seed_key)
    label = sample_label(rng, kind)
    image = render(label, spec, kind, rng)
    seed = seed_key if isinstance(seed_key, int) else int(np.asarray(seed_key)[-1])
    return SampleRecord(image, label, kind, seed)


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # relative to the manifest's directory
    record: str
    kind: str

    def label(self) -> GridLabel:
        return from_text(self.record)


def paper_like_composition(n: int, cfmt_fraction: float = 1658 / 1703) -> dict[str, int]:
    """Kind counts for n samples at the reference CFMT share, the remainder
    split as evenly as possible across the three incorrect kinds."""
    cfmt = round(n * cfmt_fraction)
    rest = n - cfmt
    base, extra = divmod(rest, 3)
    counts = {KIND_CFMT: cfmt}
    for i, kind in enumerate((KIND_MULTI, KIND_MISSING, KIND_CROSSED)):
        counts[kind] = base + (1 if i < extra else 0)
    return counts


def _kind_sequence(n: int, composition: dict[str, int], seed: int) -> list[str]:
    """Validated, seed-shuffled kind assignment with exact counts."""
    unknown = set(composition) - set(KINDS)
    if unknown:
        raise ValueError(f"unknown kinds in composition: {sorted(unknown)}")
    if any(v < 0 for v in composition.values()):
        raise ValueError("composition counts must be nonnegative")
    total = sum(composition.values())
    if total != n:
        raise ValueError(f"composition sums to {total}, expected n={n}")
    kinds: list[str] = []
    for kind in KINDS:
        kinds.extend([kind] * composition.get(kind, 0))
    np.random.default_rng([seed, 0]).shuffle(kinds)
    return kinds


def synthesize_samples(
    n: int,
    composition: dict[str, int],
    spec: RenderSpec | None = None,
    seed: int = 0,
    dtype=np.float32,
) -> list[SampleRecord]:
    """In-memory counterpart of generate_dataset: same derived streams, same
    order, no files. ``dtype=np.uint8`` stores images as raw 0..255 bytes
    (what the PNGs would hold), which keeps thousands of samples affordable.
    """
    spec = spec or RenderSpec()
    out = []
    for i, kind in enumerate(_kind_sequence(n, composition, seed)):
        record = make_sample(kind, spec, [seed, 1, i])
        image = record.image
        if np.dtype(dtype) == np.uint8:
            image = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
        else:
            image = image.astype(dtype)
        out.append(SampleRecord(image, record.label, kind, record.seed))
    return out


def generate_dataset(
    out_dir: str | os.PathLike,
    n: int,
    composition: dict[str, int],
    spec: RenderSpec | None = None,
    seed: int = 0,
) -> Path:
    """Write n rendered samples plus a manifest; returns the manifest path.

    The manifest is UTF-8 text, one sample per line:
    ``<relative image path> TAB <textual record> TAB <kind>``.
    Kind counts are exact. Sample i is generated from the derived stream
    (seed, 1, i), so the content of each file is independent of generation
    order; the kind assignment is a (seed, 0)-seeded shuffle.
    """
    spec = spec or RenderSpec()
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, kind in enumerate(_kind_sequence(n, composition, seed)):
        record = make_sample(kind, spec, [seed, 1, i])
        rel = f"images/sample_{i:06d}.png"
        save_image(record.image, out / rel)
        lines.append(f"{rel}\t{to_text(record.label)}\t{kind}\n")
    manifest = out / "manifest.tsv"
    manifest.write_text("".join(lines), encoding="utf-8")
    return manifest


def save_image(image: np.ndarray, path: str | os.PathLike) -> None:
    """Store a [0, 1] float image as 8-bit grayscale PNG."""
    data = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path, format="PNG")


def load_image(path: str | os.PathLike, dtype=np.float32) -> np.ndarray:
    """Read an image file as grayscale: [0, 1] floats, or raw 0..255 when
    ``dtype`` is uint8 (compact storage for large in-memory datasets)."""
    with Image.open(path) as im:
        raw = np.asarray(im.convert("L"))
    if np.dtype(dtype) == np.uint8:
        return raw.copy()
    return raw.astype(dtype) / 255.0


def load_manifest(path: str | os.PathLike) -> list[ManifestEntry]:
    entries = []
    for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"{path}:{ln}: expected 3 tab-separated fields")
        rel, record, kind = parts
        if kind not in KINDS:
            raise ValueError(f"{path}:{ln}: unknown kind {kind!r}")
        from_text(record)  # validate eagerly so errors carry the line number
        entries.append(ManifestEntry(rel, record, kind))
    return entries


def load_samples(
    manifest_path: str | os.PathLike, dtype=np.float32
) -> list[tuple[np.ndarray, GridLabel, str]]:
    """Load (image, label, kind) triples referenced by a manifest."""
    base = Path(manifest_path).parent
    return [
        (load_image(base / e.path, dtype), e.label(), e.kind)
        for e in load_manifest(manifest_path)
    ]
