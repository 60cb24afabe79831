"""Dataset preparation, masks, and on-disk formats.

Tensor container (``.sci``), all integers little-endian::

    bytes 0-3    magic b"SCI1"
    uint32       dtype code (1 = float32)
    uint32       rank
    uint64[rank] dims
    float32[...] payload, row-major (C order)
"""

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ShapeError, TensorFormatError
from .operator import SciOperator, as_video, simulate_measurement

__all__ = [
    "MAGIC",
    "write_tensor",
    "read_tensor",
    "read_pgm",
    "write_pgm",
    "load_frames",
    "to_grayscale",
    "resize_bilinear",
    "prepare_video",
    "generate_mask",
    "Sample",
    "build_dataset",
    "write_dataset",
    "load_dataset",
    "moving_rectangles",
]

MAGIC = b"SCI1"
DTYPE_F32 = 1
LUMA = (0.299, 0.587, 0.114)


# --- tensor files ------------------------------------------------------------

def write_tensor(path, array):
    """Write ``array`` as float32 in the ``.sci`` container."""
    arr = np.ascontiguousarray(array, dtype="<f4")
    header = MAGIC + struct.pack("<II", DTYPE_F32, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(arr.tobytes(order="C"))


def read_tensor(path):
    """Read a ``.sci`` file; returns a float32 array."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: not a SCI1 tensor file")
    code, rank = struct.unpack_from("<II", raw, 4)
    if code != DTYPE_F32:
        raise TensorFormatError(f"{path}: unsupported dtype code {code}")
    offset = 12 + 8 * rank
    if len(raw) < offset:
        raise TensorFormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{rank}Q", raw, 12)
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    if len(raw) - offset != 4 * count:
        raise TensorFormatError(f"{path}: payload is {len(raw) - offset} bytes, expected {4 * count}")
    return np.frombuffer(raw, dtype="<f4", offset=offset).reshape(dims).astype(np.float32)


# --- PGM frames --------------------------------------------------------------

def _pgm_tokens(raw):
    """Yield (token, end_offset) for the whitespace/comment separated header."""
    pos = 0
    while True:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise TensorFormatError("truncated PGM header")
        yield raw[start:pos], pos


def read_pgm(path):
    """Read a binary (P5) PGM image as a float64 array of raw gray levels."""
    raw = Path(path).read_bytes()
    tokens = _pgm_tokens(raw)
    try:
        magic, _ = next(tokens)
        if magic != b"P5":
            raise TensorFormatError(f"{path}: not a binary PGM (P5) file")
        width = int(next(tokens)[0])
        height = int(next(tokens)[0])
        tok, end = next(tokens)
        maxval = int(tok)
    except (StopIteration, ValueError) as exc:
        raise TensorFormatError(f"{path}: malformed PGM header") from exc
    dtype = ">u2" if maxval > 255 else "u1"
    start = end + 1
    n = width * height * np.dtype(dtype).itemsize
    if len(raw) < start + n:
        raise TensorFormatError(f"{path}: truncated PGM payload")
    img = np.frombuffer(raw, dtype=dtype, count=width * height, offset=start)
    return img.reshape(height, width).astype(np.float64)


def write_pgm(path, image, maxval=255):
    img = np.asarray(image)
    if img.ndim != 2:
        raise ShapeError("PGM images must be 2-D")
    dtype = ">u2" if maxval > 255 else "u1"
    data = np.clip(np.rint(img), 0, maxval).astype(dtype)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n{maxval}\n".encode("ascii"))
        fh.write(data.tobytes())


def load_frames(directory):
    """All ``*.pgm`` files in ``directory`` in lexicographic filename order."""
    paths = sorted(Path(directory).glob("*.pgm"))
    if not paths:
        raise FileNotFoundError(f"no .pgm frames in {directory}")
    return [read_pgm(p) for p in paths]


# --- preparation pipeline ----------------------------------------------------

def to_grayscale(frame):
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 2:
        return frame
    if frame.ndim == 3 and frame.shape[2] in (3, 4):
        return frame[..., :3] @ np.asarray(LUMA)
    raise ShapeError(f"cannot interpret frame of shape {frame.shape} as an image")


def _interp_matrix(n_in, n_out):
    # half-pixel centre alignment, edge clamped
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1.0 - frac
    m[np.arange(n_out), hi] += frac
    return m


def resize_bilinear(image, height, width):
    """Bilinear resampling (no antialiasing) to ``(height, width)``."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    if (h, w) == (height, width):
        return image.copy()
    return _interp_matrix(h, height) @ image @ _interp_matrix(w, width).T


def prepare_video(frames, height=256, width=256, n_frames=8):
    """Turn an ordered frame sequence into normalized video cubes.

    Frames are converted to gray, resized to ``height`` rows keeping the
    aspect ratio, center-cropped to ``width`` columns, grouped into
    consecutive non-overlapping blocks of ``n_frames`` (a trailing partial
    block is dropped), and each cube is divided by its own maximum.
    """
    frames = [to_grayscale(f) for f in frames]
    if not frames:
        raise ValueError("no frames given")
    if len(frames) < n_frames:
        raise ValueError(f"need at least {n_frames} frames, got {len(frames)}")
    shape = frames[0].shape
    if any(f.shape != shape for f in frames):
        raise ShapeError("all frames must have the same size")
    h, w = shape
    new_w = int(round(w * height / h))
    if new_w < width:
        raise ShapeError(f"frames of size {h}x{w} are narrower than {width} after resizing to height {height}")
    left = (new_w - width) // 2
    processed = [resize_bilinear(f, height, new_w)[:, left:left + width] for f in frames]
    cubes = []
    for start in range(0, len(processed) - n_frames + 1, n_frames):
        cube = np.stack(processed[start:start + n_frames], axis=2)
        peak = cube.max()
        if not peak > 0:
            raise ValueError(f"frames {start}..{start + n_frames - 1} are all zero; cannot normalize")
        cubes.append(cube / peak)
    return cubes


def generate_mask(dims, density=0.5, seed=0):
    """I.i.d. Bernoulli(``density``) binary mask of shape ``dims``."""
    if not 0.0 <= density <= 1.0:
        raise ValueError(f"density must be in [0, 1], got {density}")
    gen = np.random.Generator(np.random.Philox(seed))
    return (gen.random(tuple(dims)) < density).astype(np.float64)


# --- datasets ----------------------------------------------------------------

@dataclass
class Sample:
    y: np.ndarray
    truth: np.ndarray = None
    mask_ref: str = "mask"
    name: str = ""


def _sample_seed(seed, index):
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def build_dataset(videos, mask, noise_std=0.01, seed=0, mask_ref="mask"):
    """Pair every cube with a noisy measurement under the shared mask.

    Sample ``j`` draws its noise from a seed derived from ``(seed, j)``.
    """
    op = mask if isinstance(mask, SciOperator) else SciOperator(mask)
    samples = []
    for j, video in enumerate(videos):
        truth = as_video(video)
        y = simulate_measurement(truth, op, noise_std, _sample_seed(seed, j))
        samples.append(Sample(y=y, truth=truth, mask_ref=mask_ref, name=f"sample_{j:04d}"))
    return samples


def write_dataset(samples, mask, out_dir, noise_std, seed):
    """Write a dataset directory (mask, per-sample tensors, ``manifest.json``)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mask_arr = mask.mask if isinstance(mask, SciOperator) else np.asarray(mask)
    write_tensor(out / "mask.sci", mask_arr)
    entries = []
    for s in samples:
        entry = {"name": s.name, "y": f"{s.name}_y.sci", "mask_ref": s.mask_ref}
        write_tensor(out / entry["y"], s.y)
        if s.truth is not None:
            entry["truth"] = f"{s.name}_truth.sci"
            write_tensor(out / entry["truth"], s.truth)
        entries.append(entry)
    manifest = {"format": "sci-dataset/1", "mask": "mask.sci", "noise_std": float(noise_std),
                "seed": int(seed), "samples": entries}
    path = out / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def load_dataset(manifest_path):
    """Read ``manifest.json``; returns ``(mask, samples, manifest_dict)``.

    Paths in the manifest are resolved relative to its directory.
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    root = manifest_path.parent
    missing = [p for p in [manifest["mask"]] + [s[k] for s in manifest["samples"] for k in ("y", "truth") if k in s]
               if not os.path.exists(root / p)]
    if missing:
        raise FileNotFoundError("missing dataset files: " + ", ".join(str(root / p) for p in missing))
    mask = read_tensor(root / manifest["mask"]).astype(np.float64)
    samples = []
    for s in manifest["samples"]:
        truth = read_tensor(root / s["truth"]).astype(np.float64) if "truth" in s else None
        samples.append(Sample(y=read_tensor(root / s["y"]).astype(np.float64), truth=truth,
                              mask_ref=s.get("mask_ref", "mask"), name=s.get("name", "")))
    return mask, samples, manifest


def moving_rectangles(n_videos, shape=(32, 32, 8), seed=0, n_rects=3):
    """Synthetic videos of bright rectangles drifting over a textured background.

    Each cube is scaled so its maximum is exactly 1.
    """
    n_rows, n_cols, n_frames = shape
    gen = np.random.Generator(np.random.Philox(seed))
    rr, cc = np.mgrid[0:n_rows, 0:n_cols]
    videos = []
    for _ in range(n_videos):
        fx, fy = gen.uniform(0.5, 2.0, size=2)
        background = 0.15 + 0.1 * np.sin(2 * np.pi * fx * rr / n_rows) * np.cos(2 * np.pi * fy * cc / n_cols)
        cube = np.repeat(background[:, :, None], n_frames, axis=2)
        for _ in range(n_rects):
            h = gen.integers(n_rows // 6, n_rows // 2 + 1)
            w = gen.integers(n_cols // 6, n_cols // 2 + 1)
            r0 = gen.uniform(0, n_rows - h)
            c0 = gen.uniform(0, n_cols - w)
            vr, vc = gen.uniform(-1.5, 1.5, size=2)
            level = gen.uniform(0.3, 1.0)
            for t in range(n_frames):
                r = int(round(r0 + vr * t)) % n_rows
                c = int(round(c0 + vc * t)) % n_cols
                rows = (rr - r) % n_rows < h
                cols = (cc - c) % n_cols < w
                cube[:, :, t] = np.where(rows & cols, level, cube[:, :, t])
        videos.append(cube / cube.max())
    return videos
