"""Raster codecs, the synthetic text-conditioned dataset, checkpoints, augmentation.

The synthetic task makes text causally necessary: every image shows blobs in
several quadrants but the ground-truth mask covers only the quadrants named by
the prompt, so an image-only model cannot separate targets from distractors.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, ShapeError, UsageError
from .text import normalize_prompt

STUN_MAGIC = b"STUN"
STUN_VERSION = 1

QUADRANTS = ("upper left lung", "upper right lung", "lower left lung", "lower right lung")
_COUNTS = ("one", "two", "three", "four")


@dataclass
class SegSample:
    image: np.ndarray  # (H, W) float in [0, 1]
    mask: np.ndarray   # (H, W) float in {0, 1}
    prompt: str
    split: str = "train"
    name: str = ""


# ---------------------------------------------------------------------------
# PGM (P5) codec
# ---------------------------------------------------------------------------

def write_pgm(path, img: np.ndarray) -> None:
    """Write a [0,1] grayscale map as binary 8-bit PGM."""
    if img.ndim != 2:
        raise ShapeError(f"PGM images are 2-D, got shape {img.shape}")
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _read_pgm_bytes(blob: bytes, path) -> np.ndarray:
    pos = 0

    def skip_space() -> None:
        nonlocal pos
        while pos < len(blob):
            if blob[pos:pos + 1].isspace():
                pos += 1
            elif blob[pos:pos + 1] == b"#":
                while pos < len(blob) and blob[pos] != 0x0A:
                    pos += 1
            else:
                return

    def token(what: str) -> bytes:
        nonlocal pos
        skip_space()
        start = pos
        while pos < len(blob) and not blob[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated header at byte {start}: expected {what}")
        return blob[start:pos]

    magic = token("magic")
    if magic != b"P5":
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0 (binary PGM 'P5' required)")
    try:
        width = int(token("width"))
        height = int(token("height"))
        maxval = int(token("maxval"))
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric header field near byte {pos}: {exc}") from None
    if maxval != 255:
        raise FormatError(f"{path}: unsupported maxval {maxval} (8-bit only)")
    pos += 1  # single whitespace byte after maxval
    need = width * height
    payload = blob[pos:pos + need]
    if len(payload) != need:
        raise FormatError(
            f"{path}: truncated payload at byte {pos + len(payload)}: "
            f"expected {need} bytes, got {len(payload)}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(height, width)


def read_pgm(path) -> np.ndarray:
    """Read binary PGM into a float map scaled to [0, 1]."""
    raw = _read_pgm_bytes(Path(path).read_bytes(), path)
    return raw.astype(np.float64) / 255.0


def read_mask_pgm(path) -> np.ndarray:
    """Read a mask PGM: any nonzero byte becomes 1."""
    raw = _read_pgm_bytes(Path(path).read_bytes(), path)
    return (raw != 0).astype(np.float64)


def write_mask_pgm(path, mask: np.ndarray) -> None:
    write_pgm(path, (np.asarray(mask) != 0).astype(np.float64))


# ---------------------------------------------------------------------------
# synthetic text-conditioned dataset
# ---------------------------------------------------------------------------

def _prompt_for(quadrants: list[int]) -> str:
    names = [QUADRANTS[q] for q in sorted(quadrants)]
    sides = {q % 2 for q in quadrants}
    lat = "unilateral" if len(sides) == 1 else "bilateral"
    count = _COUNTS[len(names) - 1]
    plural = "s" if len(names) > 1 else ""
    return f"{lat} pulmonary infection, {count} infected area{plural}, {' and '.join(names)}"


def synth_generate(n: int, size: int, seed: int) -> list[SegSample]:
    """Deterministic blob scenes: 2-4 occupied quadrants, a proper subset prompted.

    Blob supports are the {gaussian >= 0.5} disks, so a prompt-reading oracle
    thresholding the image inside prompted quadrants reproduces each mask
    exactly. The 70/15/15 split is assigned by index.
    """
    if size < 32:
        raise UsageError(f"synthetic images need size >= 32, got {size}")
    rng = np.random.default_rng(seed)
    half = size // 2
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    samples = []
    n_train = round(0.70 * n)
    n_val = round(0.15 * n)
    for idx in range(n):
        k_occ = int(rng.integers(2, 5))
        occupied = rng.choice(4, size=k_occ, replace=False)
        m = int(rng.integers(1, k_occ))
        prompted = set(rng.choice(occupied, size=m, replace=False).tolist())

        field = np.zeros((size, size), dtype=np.float64)
        mask = np.zeros((size, size), dtype=np.float64)
        for q in occupied:
            row, col = q // 2, q % 2
            sigma = rng.uniform(half / 8.0, half / 5.0)
            r_half = sigma * math.sqrt(2.0 * math.log(2.0))
            margin = int(math.ceil(r_half)) + 1
            cy = row * half + rng.uniform(margin, half - margin)
            cx = col * half + rng.uniform(margin, half - margin)
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma * sigma))
            field = np.maximum(field, blob)
            if int(q) in prompted:
                mask = np.maximum(mask, (blob >= 0.5).astype(np.float64))

        noise = rng.uniform(0.0, 0.25, size=(size, size))
        image = np.maximum(field, noise)
        image = np.round(image * 255.0) / 255.0  # match 8-bit storage exactly

        split = "train" if idx < n_train else ("val" if idx < n_train + n_val else "test")
        samples.append(SegSample(image=image, mask=mask,
                                 prompt=_prompt_for(sorted(prompted)),
                                 split=split, name=f"sample_{idx:05d}"))
    return samples


def prompt_quadrants(prompt: str) -> list[int]:
    """Inverse of the phrasing rule: which quadrants does a prompt name?"""
    norm = normalize_prompt(prompt)
    return [i for i, name in enumerate(QUADRANTS) if name in norm]


def quadrant_oracle_mask(image: np.ndarray, prompt: str) -> np.ndarray:
    """Prompt-reading oracle: threshold the image inside prompted quadrants."""
    size = image.shape[0]
    half = size // 2
    out = np.zeros_like(image)
    for q in prompt_quadrants(prompt):
        row, col = q // 2, q % 2
        sl = (slice(row * half, (row + 1) * half), slice(col * half, (col + 1) * half))
        out[sl] = (image[sl] >= 0.5).astype(image.dtype)
    return out


# ---------------------------------------------------------------------------
# dataset directory layout
# ---------------------------------------------------------------------------

def save_dataset(samples: list[SegSample], root) -> None:
    """{split}/images/*.pgm, {split}/masks/*.pgm, {split}/prompts.tsv."""
    root = Path(root)
    by_split: dict[str, list[SegSample]] = {}
    for s in samples:
        by_split.setdefault(s.split, []).append(s)
    for split, items in by_split.items():
        (root / split / "images").mkdir(parents=True, exist_ok=True)
        (root / split / "masks").mkdir(parents=True, exist_ok=True)
        items.sort(key=lambda s: s.name)
        lines = []
        for s in items:
            write_pgm(root / split / "images" / f"{s.name}.pgm", s.image)
            write_mask_pgm(root / split / "masks" / f"{s.name}.pgm", s.mask)
            lines.append(f"{s.name}.pgm\t{s.prompt}\n")
        (root / split / "prompts.tsv").write_text("".join(lines))


def load_dataset(root, split: str) -> list[SegSample]:
    root = Path(root)
    tsv = root / split / "prompts.tsv"
    if not tsv.exists():
        raise FormatError(f"missing prompt table {tsv}")
    samples = []
    for lineno, line in enumerate(tsv.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise FormatError(f"{tsv}:{lineno}: expected 'filename<TAB>prompt'")
        fname, prompt = line.split("\t", 1)
        image = read_pgm(root / split / "images" / fname)
        mask = read_mask_pgm(root / split / "masks" / fname)
        if image.shape != mask.shape:
            raise ShapeError(f"{fname}: image {image.shape} and mask {mask.shape} disagree")
        samples.append(SegSample(image=image, mask=mask, prompt=prompt,
                                 split=split, name=Path(fname).stem))
    return samples


# ---------------------------------------------------------------------------
# STUN checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, tensors: dict[str, np.ndarray], config_text: str) -> None:
    """Canonical order (sorted names), float32 little-endian payloads."""
    names = sorted(tensors)
    if len(set(names)) != len(names):
        raise UsageError("duplicate tensor names")
    with open(path, "wb") as fh:
        fh.write(STUN_MAGIC)
        fh.write(struct.pack("<II", STUN_VERSION, len(names)))
        for name in names:
            arr = np.asarray(tensors[name])
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            for d in arr.shape:
                if d > 0xFFFFFFFF:
                    raise FormatError(f"tensor {name!r}: dimension {d} exceeds u32")
                fh.write(struct.pack("<I", d))
            fh.write(arr.astype("<f4").tobytes())
        cfg = config_text.encode("utf-8")
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], str]:
    blob = Path(path).read_bytes()
    pos = 0

    def need(count: int, what: str) -> bytes:
        nonlocal pos
        if pos + count > len(blob):
            raise FormatError(f"{path}: truncated at byte {pos}: expected {what}")
        out = blob[pos:pos + count]
        pos += count
        return out

    if need(4, "magic") != STUN_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0: expected {STUN_MAGIC!r}, got {blob[:4]!r}")
    version, count = struct.unpack("<II", need(8, "header"))
    if version != STUN_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    tensors: dict[str, np.ndarray] = {}
    for i in range(count):
        (nlen,) = struct.unpack("<I", need(4, f"tensor {i} name length"))
        name = need(nlen, f"tensor {i} name").decode("utf-8")
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor name {name!r}")
        (rank,) = struct.unpack("<I", need(4, f"tensor {name!r} rank"))
        dims = struct.unpack(f"<{rank}I", need(4 * rank, f"tensor {name!r} dims"))
        numel = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = need(4 * numel, f"tensor {name!r} payload")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    (clen,) = struct.unpack("<I", need(4, "config length"))
    config_text = need(clen, "config text").decode("utf-8")
    if pos != len(blob):
        raise FormatError(f"{path}: {len(blob) - pos} trailing bytes at byte {pos}")
    return tensors, config_text


def load_into_model(model, tensors: dict[str, np.ndarray]) -> None:
    """Copy checkpoint arrays into model parameters by exact name."""
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(tensors))
    unexpected = sorted(set(tensors) - set(params))
    if missing or unexpected:
        raise ShapeError(
            f"checkpoint/model mismatch: missing {missing[:3]}, unexpected {unexpected[:3]}"
        )
    for name, p in params.items():
        arr = tensors[name]
        if tuple(arr.shape) != tuple(p.shape):
            raise ShapeError(f"tensor {name!r}: checkpoint shape {arr.shape} != model {p.shape}")
        p.data[...] = arr.astype(p.data.dtype)


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Plain bilinear resize (half-pixel centers), used by inference only."""
    h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()

    def axis_taps(n_in: int, n_out: int):
        src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        i0 = np.floor(src).astype(np.int64)
        frac = src - i0
        lo = np.clip(i0, 0, n_in - 1)
        hi = np.clip(i0 + 1, 0, n_in - 1)
        return lo, hi, frac

    ry0, ry1, fy = axis_taps(h, out_h)
    rx0, rx1, fx = axis_taps(w, out_w)
    rows = img[ry0, :] * (1 - fy)[:, None] + img[ry1, :] * fy[:, None]
    return rows[:, rx0] * (1 - fx)[None, :] + rows[:, rx1] * fx[None, :]


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    flip_p: float = 0.5
    max_rotate_deg: float = 15.0
    intensity_lo: float = 0.9
    intensity_hi: float = 1.1


def _rotate(img: np.ndarray, angle_deg: float, nearest: bool) -> np.ndarray:
    """Rotate about the center; bilinear or nearest sampling, zero fill."""
    h, w = img.shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    yr = yy - cy
    xr = xx - cx
    src_y = cos_t * yr + sin_t * xr + cy
    src_x = -sin_t * yr + cos_t * xr + cx
    if nearest:
        iy = np.round(src_y).astype(np.int64)
        ix = np.round(src_x).astype(np.int64)
        valid = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
        out = np.zeros_like(img)
        out[valid] = img[iy[valid], ix[valid]]
        return out
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    fy = src_y - y0
    fx = src_x - x0
    out = np.zeros_like(img)
    for dy in (0, 1):
        for dx in (0, 1):
            yi = y0 + dy
            xi = x0 + dx
            wgt = (fy if dy else 1 - fy) * (fx if dx else 1 - fx)
            valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
            out[valid] += wgt[valid] * img[yi[valid], xi[valid]]
    return out


def augment(sample: SegSample, rng: np.random.Generator,
            cfg: AugmentConfig = AugmentConfig()) -> SegSample:
    """Flips, small rotation, intensity scaling; geometry shared by image and mask."""
    image, mask = sample.image, sample.mask
    if cfg.flip_p > 0 and rng.random() < cfg.flip_p:
        image, mask = image[:, ::-1].copy(), mask[:, ::-1].copy()
    if cfg.flip_p > 0 and rng.random() < cfg.flip_p:
        image, mask = image[::-1, :].copy(), mask[::-1, :].copy()
    if cfg.max_rotate_deg > 0:
        angle = rng.uniform(-cfg.max_rotate_deg, cfg.max_rotate_deg)
        if angle != 0.0:
            image = _rotate(image, angle, nearest=False)
            mask = _rotate(mask, angle, nearest=True)
    if cfg.intensity_hi > cfg.intensity_lo:
        s = rng.uniform(cfg.intensity_lo, cfg.intensity_hi)
        image = np.clip(image * s, 0.0, 1.0)
    return replace(sample, image=image, mask=mask)
