"""Readers and writers for the on-disk interchange formats.

Formats: Middlebury ``.flo`` flow, grayscale PFM depth, binary PPM/PGM
images (8-bit, plus 16-bit PGM with millimeter scaling for Kinect-style
depth), plain-text pose lists (12 numbers, row-major ``[R | t]``), and
plain-text seed files (``x y u v`` per line). All of them round-trip
bit-exactly.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .geometry import Intrinsics, PoseSE3

FLO_MAGIC = b"PIEH"  # little-endian float32 202021.25


# ---------------------------------------------------------------------------
# Middlebury .flo


def write_flo(path, flow: np.ndarray) -> None:
    flow = np.asarray(flow)
    if flow.ndim != 3 or flow.shape[2] != 2:
        raise InvalidInputError(f"flow must be (H, W, 2), got {flow.shape}")
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(FLO_MAGIC)
        np.array([w, h], dtype="<i4").tofile(f)
        flow.astype("<f4").tofile(f)


def read_flo(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != FLO_MAGIC:
            raise InvalidInputError(f"{path}: not a .flo file (bad magic {magic!r})")
        w, h = np.fromfile(f, dtype="<i4", count=2)
        if w <= 0 or h <= 0:
            raise InvalidInputError(f"{path}: invalid dimensions {w}x{h}")
        data = np.fromfile(f, dtype="<f4", count=2 * w * h)
    if data.size != 2 * w * h:
        raise InvalidInputError(f"{path}: truncated flow payload")
    return data.reshape(h, w, 2)


# ---------------------------------------------------------------------------
# PFM (grayscale, little-endian via negative scale)


def write_pfm(path, data: np.ndarray, scale: float = 1.0) -> None:
    data = np.asarray(data)
    if data.ndim != 2:
        raise InvalidInputError("PFM writer handles grayscale (H, W) arrays only")
    if scale <= 0:
        raise InvalidInputError("scale magnitude must be positive")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(f"{-scale}\n".encode("ascii"))  # negative: little-endian
        np.flipud(data).astype("<f4").tofile(f)  # PFM rows run bottom-to-top


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().strip()
        if header != b"Pf":
            raise InvalidInputError(f"{path}: not a grayscale PFM (header {header!r})")
        dims = f.readline().split()
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.fromfile(f, dtype=dtype, count=w * h)
    if data.size != w * h:
        raise InvalidInputError(f"{path}: truncated PFM payload")
    return np.flipud(data.reshape(h, w)).astype("<f4")


# ---------------------------------------------------------------------------
# PPM / PGM


def _read_pnm_header(f):
    def token():
        tok = b""
        while True:
            ch = f.read(1)
            if not ch:
                raise InvalidInputError("truncated PNM header")
            if ch == b"#":
                f.readline()
                continue
            if ch.isspace():
                if tok:
                    return tok
                continue
            tok += ch

    magic = token()
    w = int(token())
    h = int(token())
    maxval = int(token())
    return magic, w, h, maxval


def write_pgm(path, data: np.ndarray) -> None:
    """8- or 16-bit binary PGM; 16-bit samples are big-endian per the format."""
    data = np.asarray(data)
    if data.ndim != 2:
        raise InvalidInputError("PGM expects (H, W)")
    if data.dtype == np.uint8:
        maxval = 255
        payload = data
    elif data.dtype == np.uint16:
        maxval = 65535
        payload = data.astype(">u2")
    else:
        raise InvalidInputError(f"PGM expects uint8 or uint16, got {data.dtype}")
    h, w = data.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        payload.tofile(f)


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, w, h, maxval = _read_pnm_header(f)
        if magic != b"P5":
            raise InvalidInputError(f"{path}: not a binary PGM")
        dtype = np.uint8 if maxval < 256 else ">u2"
        data = np.fromfile(f, dtype=dtype, count=w * h)
    if data.size != w * h:
        raise InvalidInputError(f"{path}: truncated PGM payload")
    out = data.reshape(h, w)
    return out.astype(np.uint16) if maxval >= 256 else out


def write_ppm(path, data: np.ndarray) -> None:
    data = np.asarray(data)
    if data.ndim != 3 or data.shape[2] != 3 or data.dtype != np.uint8:
        raise InvalidInputError("PPM expects uint8 (H, W, 3)")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        data.tofile(f)


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, w, h, maxval = _read_pnm_header(f)
        if magic != b"P6" or maxval != 255:
            raise InvalidInputError(f"{path}: not an 8-bit binary PPM")
        data = np.fromfile(f, dtype=np.uint8, count=3 * w * h)
    if data.size != 3 * w * h:
        raise InvalidInputError(f"{path}: truncated PPM payload")
    return data.reshape(h, w, 3)


# float [0, 1] image <-> quantized storage


def image_to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=float) * 255.0), 0, 255).astype(np.uint8)


def u8_to_image(data: np.ndarray) -> np.ndarray:
    return np.asarray(data, dtype=float) / 255.0


def depth_to_u16_mm(depth: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(depth, dtype=float) * 1000.0), 0, 65535).astype(np.uint16)


def u16_mm_to_depth(data: np.ndarray) -> np.ndarray:
    return np.asarray(data, dtype=float) / 1000.0


# ---------------------------------------------------------------------------
# text formats


def write_poses(path, poses) -> None:
    """One pose per line: 12 row-major [R | t] decimals."""
    lines = []
    for p in poses:
        m = np.hstack([p.rotation, p.translation.reshape(3, 1)])
        lines.append(" ".join(f"{v:.17g}" for v in m.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_poses(path) -> list[PoseSE3]:
    poses = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        vals = [float(v) for v in line.split()]
        if len(vals) != 12:
            raise InvalidInputError(f"{path}:{ln}: expected 12 values, got {len(vals)}")
        m = np.array(vals).reshape(3, 4)
        poses.append(PoseSE3(m[:, :3], m[:, 3]))
    return poses


def write_seeds(path, positions: np.ndarray, flows: np.ndarray) -> None:
    """One seed per line: integer pixel `x y` then displacement `u v`."""
    positions = np.asarray(positions)
    flows = np.asarray(flows, dtype=float)
    if positions.shape != flows.shape or positions.ndim != 2 or positions.shape[1] != 2:
        raise InvalidInputError("positions and flows must both be (N, 2)")
    lines = [
        f"{int(p[0])} {int(p[1])} {f[0]:.17g} {f[1]:.17g}"
        for p, f in zip(positions, flows)
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_seeds(path) -> tuple[np.ndarray, np.ndarray]:
    positions = []
    flows = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 4:
            raise InvalidInputError(f"{path}:{ln}: expected `x y u v`")
        positions.append((int(parts[0]), int(parts[1])))
        flows.append((float(parts[2]), float(parts[3])))
    return (
        np.array(positions, dtype=int).reshape(-1, 2),
        np.array(flows, dtype=float).reshape(-1, 2),
    )


def write_intrinsics(path, k: Intrinsics) -> None:
    Path(path).write_text(f"{k.fx:.17g} {k.fy:.17g} {k.cx:.17g} {k.cy:.17g}\n")


def read_intrinsics(path) -> Intrinsics:
    vals = [float(v) for v in Path(path).read_text().split()]
    if len(vals) != 4:
        raise InvalidInputError(f"{path}: expected `fx fy cx cy`")
    return Intrinsics(*vals)
