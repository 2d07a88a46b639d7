"""Procedural same-different stimuli.

Every image shows two objects on a white canvas; label 1 means the two are
exact pixel translates, label 0 means they differ.  Construction guarantees
both properties: a label-1 pair places one rendered patch at two locations,
a label-0 pair redraws until the tight-cropped masks differ, so no
anti-aliasing or resampling can blur the definition.

Ten synthetic families share this recipe and differ only in how a single
object patch is drawn.  ``lines`` and ``scrambled`` emit axis-aligned
segments exclusively; ``random_color`` colours each contour independently
(sameness remains purely geometric); ``filled`` paints the interior.

The naturalistic path composes photographed/painted RGBA cut-outs on an
oversampled working canvas and block-averages down, so label-1 pairs match
pixelwise *before* downscaling.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .rng import Pcg32, stream

TASKS = [
    "original",
    "regular",
    "lines",
    "open",
    "wider_line",
    "scrambled",
    "random_color",
    "arrows",
    "irregular",
    "filled",
]

MARGIN = 2          # blank border kept around objects
GAP = 1             # minimum empty pixels between the two bounding boxes


class GenerationError(RuntimeError):
    """Raised when a valid pair cannot be placed (pathological settings)."""


@dataclass
class StimulusImage:
    """One rendered example: uint8 RGB pixels plus bookkeeping."""

    pixels: np.ndarray           # (3, S, S) uint8
    label: int                   # 1 same, 0 different
    task: str
    index: int                   # stream index it was drawn from
    meta: dict = field(default_factory=dict)

    @property
    def canvas(self) -> int:
        return self.pixels.shape[1]

    def float_pixels(self) -> np.ndarray:
        return self.pixels.astype(np.float32) / 255.0


def image_hash(pixels: np.ndarray) -> str:
    """Content hash of a uint8 image, independent of any metadata."""
    arr = np.ascontiguousarray(pixels, dtype=np.uint8)
    h = hashlib.sha256()
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return h.hexdigest()


# -- low-level raster helpers ---------------------------------------------

def _bresenham(mask: np.ndarray, y0: int, x0: int, y1: int, x1: int) -> None:
    """Integer line draw (8-connected)."""
    dy, dx = abs(y1 - y0), abs(x1 - x0)
    sy = 1 if y1 >= y0 else -1
    sx = 1 if x1 >= x0 else -1
    err = dx - dy
    y, x = y0, x0
    while True:
        mask[y, x] = True
        if y == y1 and x == x1:
            return
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy


def _polyline(mask: np.ndarray, pts: list[tuple[int, int]], close: bool = False) -> None:
    for (y0, x0), (y1, x1) in zip(pts, pts[1:]):
        _bresenham(mask, y0, x0, y1, x1)
    if close and len(pts) > 2:
        _bresenham(mask, pts[-1][0], pts[-1][1], pts[0][0], pts[0][1])


def _dilate(mask: np.ndarray, rounds: int = 1) -> np.ndarray:
    """3x3 box dilation, applied `rounds` times."""
    out = mask.copy()
    for _ in range(rounds):
        grown = out.copy()
        grown[1:, :] |= out[:-1, :]
        grown[:-1, :] |= out[1:, :]
        grown[:, 1:] |= out[:, :-1]
        grown[:, :-1] |= out[:, 1:]
        grown[1:, 1:] |= out[:-1, :-1]
        grown[1:, :-1] |= out[:-1, 1:]
        grown[:-1, 1:] |= out[1:, :-1]
        grown[:-1, :-1] |= out[1:, 1:]
        out = grown
    return out


def _fill_interior(outline: np.ndarray) -> np.ndarray:
    """Fill a closed outline: everything not reachable from the border.

    Flood is done with vectorised 4-neighbour expansion; the outline patch
    must carry at least one empty border row/column (callers pad)."""
    h, w = outline.shape
    outside = np.zeros((h, w), dtype=bool)
    outside[0, :] = ~outline[0, :]
    outside[-1, :] = ~outline[-1, :]
    outside[:, 0] = ~outline[:, 0]
    outside[:, -1] = ~outline[:, -1]
    while True:
        grown = outside.copy()
        grown[1:, :] |= outside[:-1, :]
        grown[:-1, :] |= outside[1:, :]
        grown[:, 1:] |= outside[:, :-1]
        grown[:, :-1] |= outside[:, 1:]
        grown &= ~outline
        if np.array_equal(grown, outside):
            break
        outside = grown
    return ~outside


def _crop(mask: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return mask[:0, :0]
    return mask[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1].copy()


def _radial_polygon(rng: Pcg32, n: int, r_lo: float, r_hi: float, jitter: float) -> list[tuple[int, int]]:
    """Vertices around a centre at rough angle spacing with radial noise."""
    cx = cy = int(np.ceil(r_hi)) + 2
    pts = []
    base = rng.uniform(0, 2 * np.pi)
    for i in range(n):
        ang = base + 2 * np.pi * (i + rng.uniform(-jitter, jitter)) / n
        rad = rng.uniform(r_lo, r_hi)
        pts.append((cy + int(round(rad * np.sin(ang))), cx + int(round(rad * np.cos(ang)))))
    return pts


def _patch_canvas(extent: int) -> np.ndarray:
    return np.zeros((extent, extent), dtype=bool)


# -- per-family object draws ----------------------------------------------

def _draw_original(rng: Pcg32, R: float) -> np.ndarray:
    n = rng.randrange(6, 13)
    m = _patch_canvas(int(4 * R) + 6)
    _polyline(m, [(y + 2, x + 2) for y, x in _radial_polygon(rng, n, 0.55 * R, 1.25 * R, 0.35)], close=True)
    return _crop(m)


def _draw_regular(rng: Pcg32, R: float) -> np.ndarray:
    k = rng.choice([3, 4, 5, 6, 8])
    rad = rng.uniform(0.8 * R, 1.3 * R)
    base = rng.uniform(0, 2 * np.pi)
    c = int(np.ceil(rad)) + 3
    pts = [
        (c + int(round(rad * np.sin(base + 2 * np.pi * i / k))),
         c + int(round(rad * np.cos(base + 2 * np.pi * i / k))))
        for i in range(k)
    ]
    m = _patch_canvas(2 * c + 2)
    _polyline(m, pts, close=True)
    return _crop(m)


def _draw_lines(rng: Pcg32, R: float) -> np.ndarray:
    # axis-aligned open polyline: alternating horizontal/vertical strokes
    n_seg = rng.randrange(4, 9)
    ext = int(4 * R) + 8
    m = _patch_canvas(ext)
    y, x = ext // 2, ext // 2
    pts = [(y, x)]
    horizontal = rng.randint(2) == 0
    for _ in range(n_seg):
        step = rng.randrange(2, int(1.5 * R) + 2) * (1 if rng.randint(2) == 0 else -1)
        if horizontal:
            x = int(np.clip(x + step, 1, ext - 2))
        else:
            y = int(np.clip(y + step, 1, ext - 2))
        if (y, x) != pts[-1]:
            pts.append((y, x))
        horizontal = not horizontal
    if len(pts) < 3:
        return _draw_lines(rng, R)
    _polyline(m, pts)
    return _crop(m)


def _draw_open(rng: Pcg32, R: float) -> np.ndarray:
    # an arc-like polyline that is never closed
    n = rng.randrange(4, 9)
    span = rng.uniform(0.9 * np.pi, 1.7 * np.pi)
    base = rng.uniform(0, 2 * np.pi)
    c = int(np.ceil(1.3 * R)) + 3
    pts = []
    for i in range(n):
        ang = base + span * i / (n - 1) + rng.uniform(-0.1, 0.1)
        rad = rng.uniform(0.6 * R, 1.3 * R)
        pts.append((c + int(round(rad * np.sin(ang))), c + int(round(rad * np.cos(ang)))))
    m = _patch_canvas(2 * c + 2)
    _polyline(m, pts, close=False)
    return _crop(m)


def _draw_wider_line(rng: Pcg32, R: float) -> np.ndarray:
    base = _draw_original(rng, max(2.0, R * 0.8))
    padded = np.pad(base, 2)
    return _crop(_dilate(padded, 1))


def _draw_scrambled(rng: Pcg32, R: float) -> np.ndarray:
    # rectangle whose four sides are shifted off their true positions, then
    # re-joined with axis-aligned jogs so the figure stays connected
    w = rng.randrange(int(1.2 * R), int(2.4 * R) + 1)
    h = rng.randrange(int(1.2 * R), int(2.4 * R) + 1)
    jmax = max(2, int(0.6 * R))
    jog = lambda: rng.randrange(-jmax, jmax + 1)
    dy_top, dy_bot, dx_left, dx_right = jog(), jog(), jog(), jog()
    off = jmax + 2
    ext = max(w, h) + 2 * off + 4
    m = _patch_canvas(ext)
    # side segments (all axis aligned)
    top_y, bot_y = off + dy_top, off + h + dy_bot
    left_x, right_x = off + dx_left, off + w + dx_right
    _bresenham(m, top_y, off, top_y, off + w)          # top
    _bresenham(m, bot_y, off, bot_y, off + w)          # bottom
    _bresenham(m, off, left_x, off + h, left_x)        # left
    _bresenham(m, off, right_x, off + h, right_x)      # right
    # jogs: connect each side end to the adjacent side with an L of H+V runs
    def connect(y0, x0, y1, x1):
        _bresenham(m, y0, x0, y0, x1)
        _bresenham(m, y0, x1, y1, x1)

    connect(top_y, off + w, off, right_x)              # top-right corner
    connect(bot_y, off + w, off + h, right_x)          # bottom-right
    connect(top_y, off, off, left_x)                   # top-left
    connect(bot_y, off, off + h, left_x)               # bottom-left
    return _crop(m)


def _draw_arrows(rng: Pcg32, R: float) -> np.ndarray:
    # straight shaft with an open V head on one or both ends
    ang = rng.uniform(0, 2 * np.pi)
    length = rng.uniform(1.6 * R, 2.8 * R)
    c = int(np.ceil(length / 2 + 0.7 * R)) + 3
    m = _patch_canvas(2 * c + 2)
    dy, dx = np.sin(ang), np.cos(ang)
    y0, x0 = c - length / 2 * dy, c - length / 2 * dx
    y1, x1 = c + length / 2 * dy, c + length / 2 * dx
    _bresenham(m, int(round(y0)), int(round(x0)), int(round(y1)), int(round(x1)))

    def head(ty, tx, direction):
        hl = rng.uniform(0.45 * R, 0.8 * R)
        for spread in (2.6, -2.6):
            ha = ang + spread if direction > 0 else ang + np.pi + spread
            hy = ty + hl * np.sin(ha)
            hx = tx + hl * np.cos(ha)
            _bresenham(m, int(round(ty)), int(round(tx)), int(round(hy)), int(round(hx)))

    head(y1, x1, +1)
    if rng.randint(2) == 0:
        head(y0, x0, -1)
    return _crop(m)


def _draw_irregular(rng: Pcg32, R: float) -> np.ndarray:
    n = rng.randrange(10, 17)
    m = _patch_canvas(int(4 * R) + 6)
    _polyline(m, [(y + 2, x + 2) for y, x in _radial_polygon(rng, n, 0.25 * R, 1.35 * R, 0.55)], close=True)
    return _crop(m)


def _draw_filled(rng: Pcg32, R: float) -> np.ndarray:
    n = rng.randrange(6, 12)
    m = _patch_canvas(int(4 * R) + 8)
    _polyline(m, [(y + 3, x + 3) for y, x in _radial_polygon(rng, n, 0.5 * R, 1.2 * R, 0.3)], close=True)
    return _crop(_fill_interior(m))


_DRAWERS = {
    "original": _draw_original,
    "regular": _draw_regular,
    "lines": _draw_lines,
    "open": _draw_open,
    "wider_line": _draw_wider_line,
    "scrambled": _draw_scrambled,
    "random_color": _draw_original,   # geometry of `original`, colour varies
    "arrows": _draw_arrows,
    "irregular": _draw_irregular,
    "filled": _draw_filled,
}


def draw_object(task: str, canvas: int, rng: Pcg32) -> np.ndarray:
    """One object patch (tight bool mask) for the family, scaled to canvas."""
    if task not in _DRAWERS:
        raise ValueError(f"unknown task family {task!r}; choose from {TASKS}")
    R = canvas / 8.0
    limit = canvas - 2 * MARGIN - GAP - 2
    for _ in range(50):
        patch = _DRAWERS[task](rng, R)
        if patch.size and patch.sum() >= 8 and patch.shape[0] <= limit and patch.shape[1] <= limit:
            return patch
    raise GenerationError(f"could not draw a feasible {task} patch at canvas {canvas}")


# -- pair composition ------------------------------------------------------

def _boxes_clear(a_pos, a_shape, b_pos, b_shape) -> bool:
    ay, ax = a_pos
    by, bx = b_pos
    ah, aw = a_shape
    bh, bw = b_shape
    # disjoint with at least GAP empty pixels between the boxes
    return (
        ay + ah + GAP <= by or by + bh + GAP <= ay
        or ax + aw + GAP <= bx or bx + bw + GAP <= ax
    )


def _place_two(canvas: int, shape_a, shape_b, rng: Pcg32):
    for _ in range(300):
        ya = rng.randrange(MARGIN, canvas - MARGIN - shape_a[0] + 1)
        xa = rng.randrange(MARGIN, canvas - MARGIN - shape_a[1] + 1)
        yb = rng.randrange(MARGIN, canvas - MARGIN - shape_b[0] + 1)
        xb = rng.randrange(MARGIN, canvas - MARGIN - shape_b[1] + 1)
        if _boxes_clear((ya, xa), shape_a, (yb, xb), shape_b):
            return (ya, xa), (yb, xb)
    raise GenerationError(f"could not place objects {shape_a} and {shape_b} on canvas {canvas}")


def _random_stroke_color(rng: Pcg32) -> tuple[int, int, int]:
    # kept away from white so the object mask is unambiguous
    return tuple(int(rng.uniform(0, 0.78) * 255) for _ in range(3))


def masks_equal(a: np.ndarray, b: np.ndarray) -> bool:
    return a.shape == b.shape and bool(np.array_equal(a, b))


def render_pair(task: str, canvas: int, label: int, rng: Pcg32) -> tuple[np.ndarray, dict]:
    """Compose one example; returns (uint8 RGB pixels, placement meta)."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    patch_a = draw_object(task, canvas, rng)
    if label == 1:
        patch_b = patch_a
    else:
        for _ in range(50):
            patch_b = draw_object(task, canvas, rng)
            if not masks_equal(patch_a, patch_b):
                break
        else:
            raise GenerationError(f"could not draw two distinct {task} objects")
    pos_a, pos_b = _place_two(canvas, patch_a.shape, patch_b.shape, rng)
    if task == "random_color":
        col_a = _random_stroke_color(rng)
        col_b = _random_stroke_color(rng)
    else:
        col_a = col_b = (0, 0, 0)
    img = np.full((canvas, canvas, 3), 255, dtype=np.uint8)
    for patch, (py, px), col in ((patch_a, pos_a, col_a), (patch_b, pos_b, col_b)):
        region = img[py : py + patch.shape[0], px : px + patch.shape[1]]
        region[patch] = col
    meta = {
        "positions": [list(pos_a), list(pos_b)],
        "sizes": [list(patch_a.shape), list(patch_b.shape)],
        "colors": [list(col_a), list(col_b)],
    }
    return img.transpose(2, 0, 1).copy(), meta


def make_stimulus(task: str, canvas: int, seed: int, index: int) -> StimulusImage:
    """Deterministic stimulus: label from the low bit, content from the stream."""
    rng = stream(seed, task, index)
    label = index & 1
    pixels, meta = render_pair(task, canvas, label, rng)
    return StimulusImage(pixels=pixels, label=label, task=task, index=index, meta=meta)


def object_mask(pixels: np.ndarray) -> np.ndarray:
    """Bool mask of non-background pixels for a composed uint8 image."""
    return (pixels < 242).any(axis=0)


# -- dataset files ---------------------------------------------------------

def write_dataset(out_dir: str | Path, images: list[StimulusImage]) -> Path:
    """PNG per image plus a JSONL manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = out_dir / "manifest.jsonl"
    with open(manifest, "w") as f:
        for im in images:
            name = f"{im.task}_{im.index:06d}_l{im.label}.png"
            Image.fromarray(im.pixels.transpose(1, 2, 0)).save(out_dir / name)
            rec = {
                "file": name,
                "task": im.task,
                "index": im.index,
                "label": im.label,
                "canvas": im.canvas,
                "sha256": image_hash(im.pixels),
            }
            f.write(json.dumps(rec) + "\n")
    return manifest


# -- naturalistic objects --------------------------------------------------

OVERSAMPLE = 4  # working-canvas factor before block-mean downscaling


@dataclass
class ObjectInventory:
    """RGBA cut-outs used for naturalistic episodes."""

    images: list[np.ndarray]     # each (H, W, 4) uint8
    names: list[str]

    def __len__(self) -> int:
        return len(self.images)


def load_inventory(path: str | Path) -> ObjectInventory:
    path = Path(path)
    files = sorted(p for p in path.glob("*.png"))
    if not files:
        raise FileNotFoundError(f"no .png objects found in {path}")
    images, names = [], []
    for p in files:
        arr = np.asarray(Image.open(p).convert("RGBA"), dtype=np.uint8)
        images.append(arr)
        names.append(p.stem)
    return ObjectInventory(images, names)


def make_demo_objects(n: int, seed: int = 0, size: int = 44) -> ObjectInventory:
    """Procedural stand-in objects: coloured blobs with stripes and spots.

    Deterministic per (seed, ordinal); useful for tests and demos when no
    photographic inventory is available."""
    images, names = [], []
    for i in range(n):
        rng = stream(seed, "demo_object", i)
        npr = rng.numpy_rng()
        yy, xx = np.mgrid[0:size, 0:size]
        cy = cx = size / 2
        ang = np.arctan2(yy - cy, xx - cx)
        # wobbly radius makes each silhouette unique
        kcoef = npr.uniform(-0.18, 0.18, size=4)
        radius = size * 0.36 * (1 + sum(k * np.sin((j + 2) * ang + npr.uniform(0, 6.3)) for j, k in enumerate(kcoef)))
        radius = np.clip(radius, size * 0.08, size * 0.47)
        dist = np.hypot(yy - cy, xx - cx)
        shape = dist <= radius
        base = npr.uniform(0.15, 0.85, size=3)
        img = np.zeros((size, size, 4), dtype=np.uint8)
        rgb = np.tile(base, (size, size, 1))
        if npr.random() < 0.5:
            stripes = ((yy + (xx * npr.uniform(-1, 1))) // max(2, int(size * 0.12))) % 2 == 0
            rgb[stripes] = np.clip(rgb[stripes] * npr.uniform(0.4, 0.7), 0, 1)
        n_spots = int(npr.integers(0, 4))
        for _ in range(n_spots):
            sy, sx = npr.uniform(size * 0.25, size * 0.75, size=2)
            sr = npr.uniform(size * 0.05, size * 0.12)
            spot = np.hypot(yy - sy, xx - sx) <= sr
            rgb[spot] = npr.uniform(0.1, 0.9, size=3)
        img[..., :3] = (rgb * 255).astype(np.uint8)
        img[..., 3] = shape.astype(np.uint8) * 255
        images.append(img)
        names.append(f"demo{i:04d}")
    return ObjectInventory(images, names)


def _prepare_object(obj: np.ndarray, target_h: int, rot_quarters: int) -> np.ndarray:
    """Scale an RGBA cut-out to target height (aspect kept), then rotate."""
    h, w = obj.shape[:2]
    target_w = max(1, int(round(w * target_h / h)))
    im = Image.fromarray(obj).resize((target_w, target_h), Image.Resampling.LANCZOS)
    arr = np.asarray(im, dtype=np.uint8)
    if rot_quarters:
        arr = np.rot90(arr, rot_quarters).copy()
    return arr


def _alpha_bbox(arr: np.ndarray) -> np.ndarray:
    mask = arr[..., 3] > 8
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise GenerationError("object is fully transparent")
    return arr[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]


def render_naturalistic_pair(
    inventory: ObjectInventory,
    object_ids: list[int],
    canvas: int,
    label: int,
    rng: Pcg32,
    rotations: bool = False,
) -> tuple[np.ndarray, dict]:
    """Compose two cut-outs on a working canvas OVERSAMPLE times larger,

    alpha-blend over white, then block-average down to (3, canvas, canvas).
    A label-1 pair reuses one prepared array, so the two working-canvas
    regions match pixelwise before downscaling."""
    if label not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {label}")
    if len(object_ids) < 2:
        raise ValueError("need at least 2 objects for different-pairs")
    work = canvas * OVERSAMPLE
    target_h = int(work * 0.28)
    idx_a = object_ids[rng.randint(len(object_ids))]
    rot_a = rng.randint(4) if rotations else 0
    prep_a = _alpha_bbox(_prepare_object(inventory.images[idx_a], target_h, rot_a))
    if label == 1:
        idx_b, rot_b, prep_b = idx_a, rot_a, prep_a
    else:
        for _ in range(50):
            idx_b = object_ids[rng.randint(len(object_ids))]
            if idx_b != idx_a:
                break
        else:
            raise GenerationError("could not pick a second distinct object")
        rot_b = rng.randint(4) if rotations else 0
        prep_b = _alpha_bbox(_prepare_object(inventory.images[idx_b], target_h, rot_b))
    margin = MARGIN * OVERSAMPLE
    for _ in range(300):
        ya = rng.randrange(margin, work - margin - prep_a.shape[0] + 1)
        xa = rng.randrange(margin, work - margin - prep_a.shape[1] + 1)
        yb = rng.randrange(margin, work - margin - prep_b.shape[0] + 1)
        xb = rng.randrange(margin, work - margin - prep_b.shape[1] + 1)
        if _boxes_clear((ya, xa), prep_a.shape[:2], (yb, xb), prep_b.shape[:2]):
            break
    else:
        raise GenerationError("could not place naturalistic objects")
    base = np.full((work, work, 3), 255.0, dtype=np.float64)
    for prep, (py, px) in ((prep_a, (ya, xa)), (prep_b, (yb, xb))):
        rgb = prep[..., :3].astype(np.float64)
        alpha = prep[..., 3:4].astype(np.float64) / 255.0
        region = base[py : py + prep.shape[0], px : px + prep.shape[1]]
        region[...] = alpha * rgb + (1 - alpha) * region
    small = base.reshape(canvas, OVERSAMPLE, canvas, OVERSAMPLE, 3).mean(axis=(1, 3))
    pixels = np.clip(np.round(small), 0, 255).astype(np.uint8).transpose(2, 0, 1).copy()
    meta = {
        "object_ids": [int(idx_a), int(idx_b)],
        "rotations": [int(rot_a), int(rot_b)],
        "positions": [[int(ya), int(xa)], [int(yb), int(xb)]],
        "work_sizes": [list(prep_a.shape[:2]), list(prep_b.shape[:2])],
    }
    return pixels, meta


def save_inventory(out_dir: str | Path, inventory: ObjectInventory) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, img in zip(inventory.names, inventory.images):
        Image.fromarray(img, mode="RGBA").save(out_dir / f"{name}.png")
