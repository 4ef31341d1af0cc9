"""Synthetic shapes dataset and bit-exact tensor/checkpoint persistence.

Binary formats (all little-endian):
  tensor file:  magic "PAGT", version u32, ndim u32, dims u64[ndim],
                payload float64 row-major.
  checkpoint:   magic "PAGC", version u32, entry count u32, then per entry
                name length u32, UTF-8 name, embedded tensor file body.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .denoiser import DenoiserConfig
from .errors import ConfigError, CorruptionError, FormatError
from .schedule import NoiseSchedule, make_linear_schedule

TENSOR_MAGIC = b"PAGT"
CHECKPOINT_MAGIC = b"PAGC"
FORMAT_VERSION = 1

SHAPE_CLASSES = ("square", "cross", "diamond")


# -- synthetic dataset ----------------------------------------------------

def _glyph_mask(name: str, side: int) -> np.ndarray:
    """Canonical glyph mask centered on the grid; fits under +-1 jitter."""
    if side < 8:
        raise ConfigError(f"shapes dataset needs image_side >= 8, got {side}")
    c = side // 2
    mask = np.zeros((side, side), dtype=bool)
    if name == "square":
        mask[c - 2:c + 2, c - 2:c + 2] = True
    elif name == "cross":
        mask[c - 2:c + 3, c] = True
        mask[c, c - 2:c + 3] = True
    elif name == "diamond":
        r, cc = np.indices((side, side))
        mask = np.abs(r - c) + np.abs(cc - c) <= 2
    else:
        raise ConfigError(f"unknown glyph {name!r}")
    return mask


def glyph_pixel_counts(side: int) -> dict:
    return {name: int(_glyph_mask(name, side).sum())
            for name in SHAPE_CLASSES}


def class_templates(side: int, intensity: float = 0.8) -> np.ndarray:
    """Canonical unjittered glyph images in [-1, 1], one per class."""
    out = np.full((len(SHAPE_CLASSES), side, side), -1.0)
    for i, name in enumerate(SHAPE_CLASSES):
        out[i][_glyph_mask(name, side)] = 2.0 * intensity - 1.0
    return out


def gen_shapes(n: int, image_side: int = 8, seed: int = 0):
    """n jittered glyph images in [-1, 1] plus integer class labels.

    Per item the draw order is fixed (class, jitter, intensity) so the
    dataset regenerates bit-identically from the seed.
    """
    rng = np.random.default_rng(seed)
    images = np.full((n, image_side, image_side), -1.0)
    labels = np.empty(n, dtype=np.int64)
    masks = [_glyph_mask(name, image_side) for name in SHAPE_CLASSES]
    for i in range(n):
        cls = int(rng.integers(0, len(SHAPE_CLASSES)))
        dy = int(rng.integers(-1, 2))
        dx = int(rng.integers(-1, 2))
        fg = rng.uniform(0.6, 1.0)
        mask = np.roll(np.roll(masks[cls], dy, axis=0), dx, axis=1)
        images[i][mask] = 2.0 * fg - 1.0
        labels[i] = cls
    return images, labels


# -- tensor persistence ---------------------------------------------------

def _write_tensor(buf, array: np.ndarray) -> None:
    # note: ascontiguousarray would promote 0-d arrays to 1-d
    array = np.asarray(array, dtype=np.float64, order="C")
    buf.write(TENSOR_MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, array.ndim))
    buf.write(struct.pack(f"<{array.ndim}Q", *array.shape))
    buf.write(array.astype("<f8").tobytes())


def _read_exact(buf, count: int) -> bytes:
    data = buf.read(count)
    if len(data) != count:
        raise CorruptionError(f"truncated file: wanted {count} bytes, "
                              f"got {len(data)}")
    return data


def _read_tensor(buf) -> np.ndarray:
    magic = _read_exact(buf, 4)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"bad tensor magic {magic!r}")
    version, ndim = struct.unpack("<II", _read_exact(buf, 8))
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported tensor format version {version}")
    dims = struct.unpack(f"<{ndim}Q", _read_exact(buf, 8 * ndim))
    count = int(np.prod(dims, dtype=np.int64)) if ndim else 1
    payload = _read_exact(buf, 8 * count)
    return np.frombuffer(payload, dtype="<f8").copy().reshape(dims)


def save_tensor(path, array: np.ndarray) -> None:
    with open(path, "wb") as f:
        _write_tensor(f, array)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        array = _read_tensor(f)
        if f.read(1):
            raise CorruptionError("trailing bytes after tensor payload")
    return array


# -- checkpoint persistence -----------------------------------------------

def _write_container(path, entries: dict) -> None:
    names = list(entries)
    if len(set(names)) != len(names):
        raise FormatError("duplicate entry names in container")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(names)))
        for name in names:
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            _write_tensor(f, entries[name])


def _read_container(path) -> dict:
    entries = {}
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}")
        version, count = struct.unpack("<II", _read_exact(f, 8))
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, name_len).decode("utf-8")
            if name in entries:
                raise CorruptionError(f"duplicate checkpoint entry {name!r}")
            entries[name] = _read_tensor(f)
        if f.read(1):
            raise CorruptionError("trailing bytes after last entry")
    return entries


def save_checkpoint(path, weights: dict, config: DenoiserConfig,
                    schedule: NoiseSchedule,
                    beta_start: float, beta_end: float) -> None:
    entries = {
        "cfg.image_side": np.float64(config.image_side),
        "cfg.token_dim": np.float64(config.token_dim),
        "cfg.num_attention_blocks": np.float64(config.num_attention_blocks),
        "cfg.num_classes": np.float64(config.num_classes),
        "cfg.cond_dropout_prob": np.float64(config.cond_dropout_prob),
        "sched.T": np.float64(schedule.T),
        "sched.beta_start": np.float64(beta_start),
        "sched.beta_end": np.float64(beta_end),
    }
    for name, tensor in weights.items():
        entries[f"w.{name}"] = tensor
    _write_container(path, entries)


def load_checkpoint(path):
    """Returns (weights, DenoiserConfig, NoiseSchedule)."""
    entries = _read_container(path)
    try:
        config = DenoiserConfig(
            image_side=int(entries["cfg.image_side"]),
            token_dim=int(entries["cfg.token_dim"]),
            num_attention_blocks=int(entries["cfg.num_attention_blocks"]),
            num_classes=int(entries["cfg.num_classes"]),
            cond_dropout_prob=float(entries["cfg.cond_dropout_prob"]))
        schedule = make_linear_schedule(
            int(entries["sched.T"]), float(entries["sched.beta_start"]),
            float(entries["sched.beta_end"]))
    except KeyError as exc:
        raise CorruptionError(f"checkpoint missing entry {exc}") from exc
    weights = {name[2:]: tensor for name, tensor in entries.items()
               if name.startswith("w.")}
    return weights, config, schedule


def save_trace_container(path, trace) -> None:
    """Serialize a SampleTrace as a flat container of per-step tensors."""
    entries = {}
    for i, step in enumerate(trace.steps):
        p = f"step{i:04d}"
        entries[f"{p}.t"] = np.float64(step.t)
        entries[f"{p}.x_t"] = step.x_t
        entries[f"{p}.eps"] = step.eps
        entries[f"{p}.eps_tilde"] = step.eps_tilde
        entries[f"{p}.x0_hat"] = step.x0_hat
        if step.eps_hat is not None:
            entries[f"{p}.eps_hat"] = step.eps_hat
            entries[f"{p}.delta"] = step.delta
    _write_container(path, entries)


def load_trace_container(path) -> dict:
    return _read_container(path)


# -- image export ---------------------------------------------------------

def to_uint8(batch: np.ndarray) -> np.ndarray:
    """Map [-1, 1] to 0..255 with clamping; halves round away from zero."""
    x = np.clip(np.asarray(batch, dtype=np.float64), -1.0, 1.0)
    return np.floor(255.0 * (x + 1.0) / 2.0 + 0.5).astype(np.uint8)


def tile_grid(batch: np.ndarray, cols: int | None = None) -> np.ndarray:
    """Row-major tiling of (N, H, W) into one 2-D image."""
    batch = np.asarray(batch)
    n, h, w = batch.shape
    if cols is None:
        cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    grid = np.full((rows * h, cols * w), batch.min())
    for i in range(n):
        r, c = divmod(i, cols)
        grid[r * h:(r + 1) * h, c * w:(c + 1) * w] = batch[i]
    return grid


def export_pgm(batch: np.ndarray, path, cols: int | None = None) -> None:
    """Write a binary PGM (P5, 8-bit) grid of a batch."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim == 2:
        batch = batch[None]
    grid = to_uint8(tile_grid(batch, cols))
    with open(path, "wb") as f:
        f.write(f"P5\n{grid.shape[1]} {grid.shape[0]}\n255\n".encode("ascii"))
        f.write(grid.tobytes())
