"""Turn encoded fields into images.

Layouts
-------
``single``        one method per lead, leads tiled 4x3, grayscale
``channel_fuse``  2-3 methods per lead stacked as RGB channels, leads tiled 4x3
``grid``          every requested method per lead fused, leads tiled 4x3
``concat_leads``  the 12 leads joined end to end and encoded once
``simple_plot``   each lead drawn as a polyline, leads tiled 4x3

``CONFIGURATIONS`` names the ten rows of the experiment table; the two
All-Grid rows differ only in how the model was trained and therefore share
one image definition.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .encoders import EncodedField, EncoderConfig, encode
from .errors import MalformedPng, SizeMismatch, TileCountMismatch, UnknownMethod
from .signal_io import LEAD_NAMES, EcgRecord

LAYOUTS = ("single", "channel_fuse", "grid", "concat_leads", "simple_plot")
METHOD_ALIASES = {"mtf": "MTF", "gaf": "GAF", "gasf": "GASF", "gadf": "GADF", "rp": "RP"}
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True)
class ImageTensor:
    """H x W x C pixels in [0, 1], stored row-major with interleaved channels."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.pixels, dtype=np.float64)
        if p.ndim == 2:
            p = p[:, :, None]
        if p.ndim != 3 or p.shape[2] not in (1, 3) or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError(f"image must be HxWx1 or HxWx3, got {p.shape}")
        if not np.all(np.isfinite(p)) or p.min() < 0 or p.max() > 1:
            raise ValueError("pixels must lie in [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def channel(self, c: int) -> np.ndarray:
        return self.pixels[:, :, c]

    def __eq__(self, other):
        if not isinstance(other, ImageTensor):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True)
class ComposeConfig:
    layout: str = "grid"
    methods: tuple = ("MTF", "GAF", "RP")
    rows: int = 4
    cols: int = 3
    cell_size: int = 96
    target_size: Optional[int] = 384
    window_s: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(normalize_methods(self.methods)))
        if self.layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {LAYOUTS}, got {self.layout!r}")
        k = len(self.methods)
        if self.layout == "single" and k != 1:
            raise ValueError("the single layout takes exactly one method")
        if self.layout == "channel_fuse" and k not in (2, 3):
            raise ValueError("channel_fuse takes 2 or 3 methods")
        if self.layout in ("grid", "concat_leads") and not 1 <= k <= 3:
            raise ValueError(f"{self.layout} takes 1 to 3 methods")
        if self.rows * self.cols != 12:
            raise ValueError("the lead grid must hold exactly 12 tiles")
        if self.cell_size < 1 or (self.layout == "simple_plot" and self.cell_size < 16):
            raise ValueError("cell_size too small")
        if self.target_size is not None and self.target_size < 1:
            raise ValueError("target_size must be positive")


def normalize_methods(methods) -> list:
    if isinstance(methods, str):
        methods = [m for m in methods.split(",") if m.strip()]
    out = []
    for m in methods:
        key = m.strip().lower()
        if key not in METHOD_ALIASES:
            raise UnknownMethod(f"unknown method {m!r}; expected one of {sorted(METHOD_ALIASES)}")
        out.append(METHOD_ALIASES[key])
    return out


CONFIGURATIONS = {
    "simple_plot": ComposeConfig("simple_plot", ()),
    "mtf_only": ComposeConfig("single", ("MTF",)),
    "gaf_only": ComposeConfig("single", ("GAF",)),
    "rp_only": ComposeConfig("single", ("RP",)),
    "mtf_gaf": ComposeConfig("channel_fuse", ("MTF", "GAF")),
    "gaf_rp": ComposeConfig("channel_fuse", ("GAF", "RP")),
    "rp_mtf": ComposeConfig("channel_fuse", ("RP", "MTF")),
    "all_concat": ComposeConfig("concat_leads", ("MTF", "GAF", "RP")),
    "all_grid_zeroshot": ComposeConfig("grid", ("MTF", "GAF", "RP")),
    "all_grid_finetune": ComposeConfig("grid", ("MTF", "GAF", "RP")),
}


# --- field -> image ----------------------------------------------------------------

def normalize_field(f: EncodedField) -> ImageTensor:
    """Map ``value_range`` affinely onto [0, 1]."""
    lo, hi = f.value_range
    span = hi - lo
    px = (f.grid - lo) / span if span > 0 else np.zeros_like(f.grid)
    return ImageTensor(np.clip(px, 0.0, 1.0)[:, :, None])


def fuse_channels(fields: Sequence[EncodedField]) -> ImageTensor:
    """Stack 2-3 fields as RGB; with two fields the blue channel is zero."""
    if not 2 <= len(fields) <= 3:
        raise ValueError("fuse_channels takes 2 or 3 fields")
    sizes = {f.grid.shape for f in fields}
    if len(sizes) != 1:
        raise SizeMismatch(f"fields differ in size: {sorted(sizes)}")
    chans = [normalize_field(f).pixels[:, :, 0] for f in fields]
    if len(chans) == 2:
        chans.append(np.zeros_like(chans[0]))
    return ImageTensor(np.stack(chans, axis=2))


def fields_to_image(fields: Sequence[EncodedField]) -> ImageTensor:
    if len(fields) == 1:
        return normalize_field(fields[0])
    return fuse_channels(fields)


def grid_layout(tiles: Sequence[ImageTensor], rows: int = 4, cols: int = 3) -> ImageTensor:
    """Tile images row-major: tile ``r*cols + c`` lands at block ``(r, c)``."""
    if len(tiles) != rows * cols:
        raise TileCountMismatch(f"expected {rows * cols} tiles, got {len(tiles)}")
    shapes = {t.pixels.shape for t in tiles}
    if len(shapes) != 1:
        raise SizeMismatch(f"tiles differ in shape: {sorted(shapes)}")
    h, w, c = tiles[0].pixels.shape
    out = np.empty((rows * h, cols * w, c))
    for k, t in enumerate(tiles):
        r, cc = divmod(k, cols)
        out[r * h:(r + 1) * h, cc * w:(cc + 1) * w] = t.pixels
    return ImageTensor(out)


def concat_leads(record: EcgRecord) -> np.ndarray:
    """Leads joined in standard order I..V6; length 12 n."""
    return np.concatenate([record.lead(name).samples_mv for name in LEAD_NAMES])


# --- simple plot -----------------------------------------------------------------

def _draw_polyline(canvas: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> None:
    # DDA between consecutive vertices, endpoints included
    for x0, y0, x1, y1 in zip(xs[:-1], ys[:-1], xs[1:], ys[1:]):
        steps = int(np.ceil(max(abs(x1 - x0), abs(y1 - y0)))) + 1
        t = np.linspace(0.0, 1.0, steps)
        px = np.rint(x0 + t * (x1 - x0)).astype(int)
        py = np.rint(y0 + t * (y1 - y0)).astype(int)
        canvas[py, px] = 1.0


def plot_lead(samples, cell: int) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    lo, hi = x.min(), x.max()
    scaled = (x - lo) / (hi - lo) if hi > lo else np.full_like(x, 0.5)
    n = x.size
    xs = np.arange(n) * (cell - 1) / max(n - 1, 1)
    ys = (1.0 - scaled) * (cell - 1)
    canvas = np.zeros((cell, cell))
    if n == 1:
        canvas[int(np.rint(ys[0])), 0] = 1.0
    else:
        _draw_polyline(canvas, xs, ys)
    return canvas


def simple_plot(record: EcgRecord, cfg: ComposeConfig = ComposeConfig("simple_plot", ())) -> ImageTensor:
    """Draw each lead (min-max scaled) as a 1 px polyline and tile them 4x3."""
    if cfg.cell_size < 16:
        raise ValueError("simple_plot needs cell_size >= 16")
    tiles = [ImageTensor(plot_lead(record.lead(name).samples_mv, cfg.cell_size))
             for name in LEAD_NAMES]
    return grid_layout(tiles, cfg.rows, cfg.cols)


# --- resampling --------------------------------------------------------------------

def _axis_weights(n_in: int, n_out: int):
    src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    return i0, i1, frac


def resize(image: ImageTensor, target: int, target_w: Optional[int] = None) -> ImageTensor:
    """Bilinear resampling (pixel-centre aligned, edge clamped) to target x target."""
    th, tw = target, target_w if target_w is not None else target
    p = image.pixels
    if (th, tw) == p.shape[:2]:
        return image
    r0, r1, fr = _axis_weights(p.shape[0], th)
    c0, c1, fc = _axis_weights(p.shape[1], tw)
    top = p[r0] * (1 - fr)[:, None, None] + p[r1] * fr[:, None, None]
    out = top[:, c0] * (1 - fc)[None, :, None] + top[:, c1] * fc[None, :, None]
    return ImageTensor(np.clip(out, p.min(), p.max()))


def random_crop(image: ImageTensor, crop: int, rng: np.random.Generator) -> ImageTensor:
    """Seeded square crop resized back to the image's own height (training only)."""
    h, w = image.height, image.width
    crop = min(crop, h, w)
    top = int(rng.integers(0, h - crop + 1))
    left = int(rng.integers(0, w - crop + 1))
    patch = ImageTensor(image.pixels[top:top + crop, left:left + crop])
    return resize(patch, h, w)


# --- composition ---------------------------------------------------------------------

def _windowed(record: EcgRecord, window_s: Optional[float]) -> EcgRecord:
    if window_s is None:
        return record
    n = int(round(window_s * record.sampling_rate_hz))
    if n < 2 or n > record.n_samples:
        raise ValueError(f"window of {window_s}s gives {n} samples; record has {record.n_samples}")
    return record.with_leads([type(ld)(ld.lead_name, ld.samples_mv[:n]) for ld in record.leads])


def lead_fields(samples, methods: Sequence[str], enc: EncoderConfig, out_size: Optional[int]) -> list:
    n = np.asarray(samples).size
    size = None if out_size is None or out_size >= n else out_size
    return [encode(samples, m, enc, size) for m in methods]


def compose(record: EcgRecord, cfg: ComposeConfig, enc: Optional[EncoderConfig] = None) -> ImageTensor:
    """Build the image for one record under ``cfg``."""
    enc = enc or EncoderConfig()
    record = _windowed(record, cfg.window_s)
    if cfg.layout == "simple_plot":
        img = simple_plot(record, cfg)
    elif cfg.layout == "concat_leads":
        size = cfg.target_size or cfg.cell_size * 4
        img = fields_to_image(lead_fields(concat_leads(record), cfg.methods, enc, size))
    else:
        tiles = []
        for name in LEAD_NAMES:
            tile = fields_to_image(lead_fields(record.lead(name).samples_mv, cfg.methods, enc,
                                               cfg.cell_size))
            if tile.height != cfg.cell_size:
                tile = resize(tile, cfg.cell_size)
            tiles.append(tile)
        img = grid_layout(tiles, cfg.rows, cfg.cols)
    if cfg.target_size is not None:
        img = resize(img, cfg.target_size)
    return img


def configuration(name: str, **overrides) -> ComposeConfig:
    if name not in CONFIGURATIONS:
        raise UnknownMethod(f"unknown configuration {name!r}; expected one of {sorted(CONFIGURATIONS)}")
    return replace(CONFIGURATIONS[name], **overrides) if overrides else CONFIGURATIONS[name]


# --- PNG -----------------------------------------------------------------------------

def to_bytes(image: ImageTensor) -> np.ndarray:
    return np.rint(image.pixels * 255.0).astype(np.uint8)


def write_png(image: ImageTensor, path) -> Path:
    """8-bit grayscale or RGB PNG; pixel p is stored as round(255 p)."""
    path = Path(path)
    data = to_bytes(image)
    pil = Image.fromarray(data[:, :, 0] if image.channels == 1 else data)
    tmp = path.with_name(path.name + ".tmp")
    try:
        pil.save(tmp, format="PNG")
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()
    return path


def read_png(path) -> ImageTensor:
    try:
        with Image.open(path) as pil:
            pil.load()
            if pil.format != "PNG":
                raise MalformedPng(f"{path}: not a PNG file")
            if pil.mode not in ("L", "RGB"):
                raise MalformedPng(f"{path}: unsupported PNG mode {pil.mode}")
            data = np.asarray(pil, dtype=np.float64)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise MalformedPng(f"{path}: {exc}") from exc
    return ImageTensor(data / 255.0)
