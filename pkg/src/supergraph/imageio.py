"""Netpbm I/O, pixel feature maps and label rendering."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .numerics import Rng

__all__ = [
    "Image",
    "PixelFeatureMap",
    "PpmError",
    "load_ppm",
    "write_ppm",
    "read_pgm16",
    "write_pgm16",
    "srgb_to_lab",
    "to_lab",
    "to_gray_features",
    "filter_bank_features",
    "convolve2d",
    "default_pos_scale",
    "resize_nearest",
    "render_labels",
    "boundary_mask",
    "SOBEL_X",
    "SOBEL_Y",
]

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T.copy()

# sRGB primaries to XYZ under D65
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_WHITE_D65 = np.array([0.95047, 1.0, 1.08883])


class PpmError(ValueError):
    """Malformed or unsupported Netpbm file."""


@dataclass(frozen=True)
class Image:
    width: int
    height: int
    channels: int
    data: np.ndarray  # uint8, shape (height, width, channels)

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        data = np.asarray(self.data, dtype=np.uint8)
        if data.size != self.width * self.height * self.channels:
            raise ValueError("data length does not match width x height x channels")
        object.__setattr__(self, "data", data.reshape(self.height, self.width, self.channels))

    @classmethod
    def from_array(cls, arr) -> "Image":
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(w, h, c, np.clip(np.rint(arr), 0, 255).astype(np.uint8))


@dataclass(frozen=True)
class PixelFeatureMap:
    """Per-pixel feature vectors: D appearance features followed by (row, col) * pos_scale."""

    data: np.ndarray  # float64, shape (height, width, D + 2)
    pos_scale: float

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or data.shape[2] < 3:
            raise ValueError("feature map must have shape (H, W, D+2) with D >= 1")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature map contains non-finite values")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_features(cls, feats: np.ndarray, pos_scale: float = 1.0) -> "PixelFeatureMap":
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim == 2:
            feats = feats[:, :, None]
        h, w, _ = feats.shape
        ii, jj = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
        pos = np.stack([ii * pos_scale, jj * pos_scale], axis=-1)
        return cls(np.concatenate([feats, pos], axis=-1), float(pos_scale))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    @property
    def n_features(self) -> int:
        return self.data.shape[2] - 2

    @property
    def features(self) -> np.ndarray:
        return self.data[:, :, :-2]

    @property
    def positions(self) -> np.ndarray:
        return self.data[:, :, -2:]


# --- Netpbm -----------------------------------------------------------------


def _read_header(buf: bytes, n_fields: int) -> tuple[list[bytes], int]:
    """Parse whitespace/comment separated header tokens; return tokens and payload offset."""
    tokens: list[bytes] = []
    pos = 0
    n = len(buf)
    while len(tokens) < n_fields:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PpmError("malformed header")
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates header from raster
    if pos >= n or not buf[pos : pos + 1].isspace():
        raise PpmError("malformed header")
    return tokens, pos + 1


def _parse_netpbm(buf: bytes) -> tuple[bytes, int, int, int, np.ndarray]:
    tokens, offset = _read_header(buf, 4)
    magic = tokens[0]
    if magic not in (b"P5", b"P6"):
        raise PpmError(f"unsupported magic number {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise PpmError("malformed header") from None
    if width <= 0 or height <= 0:
        raise PpmError("malformed header: non-positive dimensions")
    return magic, width, height, maxval, np.frombuffer(buf, dtype=np.uint8, offset=offset)


def load_ppm(path) -> Image:
    """Decode a binary PPM (P6) or PGM (P5) file with maxval 255."""
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, width, height, maxval, payload = _parse_netpbm(buf)
    if maxval != 255:
        raise PpmError(f"unsupported maxval {maxval} (only 255)")
    channels = 3 if magic == b"P6" else 1
    need = width * height * channels
    if payload.size < need:
        raise PpmError(f"truncated payload: expected {need} bytes, found {payload.size}")
    return Image(width, height, channels, payload[:need].copy())


def write_ppm(path, img: Image) -> None:
    magic = b"P6" if img.channels == 3 else b"P5"
    header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
    with open(path, "wb") as fh:
        fh.write(header + img.data.tobytes())


def write_pgm16(path, labels: np.ndarray) -> None:
    """Write a label raster as a 16-bit big-endian P5 (maxval 65535)."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("labels must be 2-D")
    if labels.size and (labels.min() < 0 or labels.max() > 65535):
        raise ValueError("labels must fit in 16 bits")
    h, w = labels.shape
    header = b"P5\n%d %d\n65535\n" % (w, h)
    with open(path, "wb") as fh:
        fh.write(header + labels.astype(">u2").tobytes())


def read_pgm16(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    magic, width, height, maxval, payload = _parse_netpbm(buf)
    if magic != b"P5" or maxval != 65535:
        raise PpmError("expected a 16-bit P5 label raster")
    need = 2 * width * height
    if payload.size < need:
        raise PpmError(f"truncated payload: expected {need} bytes, found {payload.size}")
    return np.frombuffer(payload[:need].tobytes(), dtype=">u2").reshape(height, width).astype(np.int64)


# --- features ---------------------------------------------------------------


def srgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert 8-bit sRGB values (..., 3) to CIELAB under D65."""
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB_TO_XYZ.T / _WHITE_D65
    eps = 216.0 / 24389.0
    kappa = 24389.0 / 27.0
    f = np.where(xyz > eps, np.cbrt(xyz), (kappa * xyz + 16.0) / 116.0)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def default_pos_scale(height: int, width: int, n_superpixels: int, compactness: float = 10.0) -> float:
    """SLIC-style positional weight m / S with S = sqrt(H*W/N)."""
    step = np.sqrt(height * width / float(n_superpixels))
    return float(compactness / step)


def to_lab(img: Image, pos_scale: float = 1.0) -> PixelFeatureMap:
    if img.channels != 3:
        raise ValueError("to_lab needs a 3-channel image; use to_gray_features for grayscale")
    return PixelFeatureMap.from_features(srgb_to_lab(img.data), pos_scale)


def to_gray_features(img: Image, pos_scale: float = 1.0) -> PixelFeatureMap:
    """Single-channel lightness feature (L* of the gray level)."""
    if img.channels == 3:
        return PixelFeatureMap.from_features(srgb_to_lab(img.data)[:, :, :1], pos_scale)
    gray = np.repeat(img.data, 3, axis=2)
    return PixelFeatureMap.from_features(srgb_to_lab(gray)[:, :, :1], pos_scale)


def convolve2d(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """True 2-D convolution with reflected borders, output same size as ``x``."""
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    h, w = x.shape
    if kh > h or kw > w:
        raise ValueError(f"kernel {kh}x{kw} larger than image {h}x{w}")
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x, ((ph, kh - 1 - ph), (pw, kw - 1 - pw)), mode="reflect")
    flipped = kernel[::-1, ::-1]
    # positive and negative taps are summed apart so zero-sum stencils
    # give exactly zero on flat regions
    pos = np.zeros((h, w))
    neg = np.zeros((h, w))
    for a in range(kh):
        for b in range(kw):
            k = flipped[a, b]
            if k > 0.0:
                pos += k * padded[a : a + h, b : b + w]
            elif k < 0.0:
                neg -= k * padded[a : a + h, b : b + w]
    return pos - neg


def filter_bank_features(img: Image, kernels=None, pos_scale: float = 1.0) -> PixelFeatureMap:
    """Lab channels plus convolution responses of ``kernels`` on L*.

    Default kernels are the horizontal and vertical Sobel stencils. Grayscale
    images contribute L* only (a*, b* are zero for neutral gray).
    """
    if kernels is None:
        kernels = (SOBEL_X, SOBEL_Y)
    rgb = img.data if img.channels == 3 else np.repeat(img.data, 3, axis=2)
    lab = srgb_to_lab(rgb)
    responses = [convolve2d(lab[:, :, 0], k) for k in kernels]
    feats = np.concatenate([lab] + [r[:, :, None] for r in responses], axis=2)
    return PixelFeatureMap.from_features(feats, pos_scale)


def resize_nearest(img: Image, width: int, height: int) -> Image:
    rows = (np.arange(height) * img.height) // height
    cols = (np.arange(width) * img.width) // width
    return Image(width, height, img.channels, img.data[rows][:, cols])


# --- rendering --------------------------------------------------------------


def boundary_mask(labels: np.ndarray) -> np.ndarray:
    """Pixels with at least one 4-neighbour carrying a different label."""
    labels = np.asarray(labels)
    mask = np.zeros(labels.shape, dtype=bool)
    dv = labels[1:, :] != labels[:-1, :]
    dh = labels[:, 1:] != labels[:, :-1]
    mask[1:, :] |= dv
    mask[:-1, :] |= dv
    mask[:, 1:] |= dh
    mask[:, :-1] |= dh
    return mask


def render_labels(labels: np.ndarray, seed: int = 0) -> Image:
    """Colour each label with a distinct seeded colour and darken region boundaries."""
    labels = np.asarray(labels, dtype=np.int64)
    n = int(labels.max()) + 1 if labels.size else 0
    rng = Rng(seed)
    palette = np.zeros((max(n, 1), 3), dtype=np.int64)
    seen: set[int] = set()
    for k in range(n):
        while True:
            rgb = rng.integers(40, 256, 3)
            key = int(rgb[0]) << 16 | int(rgb[1]) << 8 | int(rgb[2])
            if key not in seen:
                seen.add(key)
                palette[k] = rgb
                break
    out = palette[labels]
    out[boundary_mask(labels)] //= 2
    return Image.from_array(out)


def ensure_dir(path) -> None:
    os.makedirs(path, exist_ok=True)


def synthetic_scene(width: int, height: int, seed: int = 0, n_shapes: int = 12) -> Image:
    """Deterministic test image: a colour gradient with a few flat discs and boxes."""
    rng = Rng(seed)
    ii, jj = np.mgrid[0:height, 0:width].astype(np.float64)
    base = np.stack(
        [
            40 + 160 * jj / max(width - 1, 1),
            60 + 120 * ii / max(height - 1, 1),
            np.full_like(ii, 90.0),
        ],
        axis=2,
    )
    img = base.copy()
    params = rng.random(n_shapes * 6).reshape(n_shapes, 6)
    for cy, cx, r, red, green, blue in params:
        cy, cx, r = cy * height, cx * width, (0.05 + 0.15 * r) * min(width, height)
        mask = (ii - cy) ** 2 + (jj - cx) ** 2 <= r * r
        if red > 0.5:
            mask = (np.abs(ii - cy) <= r) & (np.abs(jj - cx) <= 0.6 * r)
        img[mask] = np.array([red, green, blue]) * 255
    return Image.from_array(np.clip(np.rint(img), 0, 255))
