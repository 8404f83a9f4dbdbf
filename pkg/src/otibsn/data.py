"""Instance generators and file loaders.

Generators draw from numpy's seeded PCG64 stream, so a fixed seed
reproduces an instance bit for bit across runs; OS entropy is never used.
Image loading supports plain and raw grayscale netpbm files (magic P2/P5,
maxval up to 65535) and rectangular CSV grids, avoiding codec
dependencies.
"""

from __future__ import annotations

import os

import numpy as np

from .core import OtProblem, normalize_cost
from .errors import LoadError

_PIXEL_EPS = 1e-9


def _positive_uniform(rng: np.random.Generator, size: int) -> np.ndarray:
    """Uniform(0,1) draws with exact zeros rejected and redrawn."""
    draws = rng.random(size)
    while True:
        zero = draws == 0.0
        if not zero.any():
            return draws
        draws[zero] = rng.random(int(zero.sum()))


def _random_marginals(rng: np.random.Generator, m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    a = _positive_uniform(rng, m)
    b = _positive_uniform(rng, n)
    return a / a.sum(), b / b.sum()


def gen_uniform(m: int, n: int, seed: int) -> OtProblem:
    """Independent uniform cost entries, random positive marginals."""
    rng = np.random.default_rng(seed)
    cost = normalize_cost(rng.random((m, n)))
    a, b = _random_marginals(rng, m, n)
    return OtProblem(cost=cost, source_marginal=a, target_marginal=b)


def gen_square(m: int, n: int, seed: int) -> OtProblem:
    """Squared index distance ``(i - j)^2``, scaled to unit maximum."""
    rng = np.random.default_rng(seed)
    idx_i = np.arange(m, dtype=np.float64)
    idx_j = np.arange(n, dtype=np.float64)
    cost = normalize_cost((idx_i[:, None] - idx_j[None, :]) ** 2)
    a, b = _random_marginals(rng, m, n)
    return OtProblem(cost=cost, source_marginal=a, target_marginal=b)


def gen_spherical(m: int, n: int, seed: int) -> OtProblem:
    """Great-circle distances between random points on the unit sphere."""
    rng = np.random.default_rng(seed)
    points = rng.normal(size=(m + n, 3))
    norms = np.linalg.norm(points, axis=1)
    while (norms == 0.0).any():
        redo = norms == 0.0
        points[redo] = rng.normal(size=(int(redo.sum()), 3))
        norms = np.linalg.norm(points, axis=1)
    points /= norms[:, None]
    inner = np.clip(points[:m] @ points[m:].T, -1.0, 1.0)
    cost = normalize_cost(np.clip(np.arccos(inner), 0.0, np.pi))
    a, b = _random_marginals(rng, m, n)
    return OtProblem(cost=cost, source_marginal=a, target_marginal=b)


def _read_token_stream(data: bytes) -> list[bytes]:
    """Whitespace-separated tokens of a plain netpbm body, '#' comments stripped."""
    tokens = []
    for line in data.split(b"\n"):
        body = line.split(b"#", 1)[0]
        tokens.extend(body.split())
    return tokens


def _load_pgm(data: bytes, path: str) -> np.ndarray:
    magic = data[:2]
    if magic == b"P2":
        tokens = _read_token_stream(data[2:])
        try:
            width, height, maxval = (int(t) for t in tokens[:3])
            pixels = np.array([float(t) for t in tokens[3 : 3 + width * height]])
        except (ValueError, IndexError) as exc:
            raise LoadError(f"{path}: malformed plain PGM") from exc
    elif magic == b"P5":
        # Header: three ASCII fields, comments allowed, then a single
        # whitespace byte before the raster.
        pos = 2
        fields = []
        while len(fields) < 3:
            while pos < len(data) and data[pos : pos + 1].isspace():
                pos += 1
            if pos < len(data) and data[pos : pos + 1] == b"#":
                while pos < len(data) and data[pos : pos + 1] != b"\n":
                    pos += 1
                continue
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            fields.append(data[start:pos])
        pos += 1
        try:
            width, height, maxval = (int(f) for f in fields)
        except ValueError as exc:
            raise LoadError(f"{path}: malformed raw PGM header") from exc
        raster = data[pos:]
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        count = width * height
        if len(raster) < count * dtype.itemsize:
            raise LoadError(f"{path}: truncated raw PGM raster")
        pixels = np.frombuffer(raster[: count * dtype.itemsize], dtype=dtype).astype(np.float64)
    else:
        raise LoadError(f"{path}: not a grayscale netpbm file (magic {magic!r})")
    if maxval <= 0 or maxval > 65535:
        raise LoadError(f"{path}: unsupported maxval {maxval}")
    if pixels.size != width * height:
        raise LoadError(f"{path}: raster size does not match header")
    return pixels.reshape(height, width)


def _load_grid(path: str) -> np.ndarray:
    """Grayscale image from a PGM (P2/P5) or CSV-grid file."""
    try:
        with open(path, "rb") as handle:
            data = handle.read()
    except OSError as exc:
        raise LoadError(f"{path}: {exc}") from exc
    if data[:2] in (b"P2", b"P5"):
        return _load_pgm(data, path)
    if data[:2] in (b"P1", b"P3", b"P4", b"P6"):
        raise LoadError(f"{path}: not a grayscale netpbm file (magic {data[:2]!r})")
    try:
        text = data.decode("utf-8")
        rows = [
            [float(cell) for cell in line.split(",")]
            for line in text.splitlines()
            if line.strip()
        ]
    except (UnicodeDecodeError, ValueError) as exc:
        raise LoadError(f"{path}: neither a PGM image nor a CSV grid") from exc
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise LoadError(f"{path}: CSV grid rows have inconsistent lengths")
    grid = np.array(rows, dtype=np.float64)
    if (grid < 0).any() or not np.isfinite(grid).all():
        raise LoadError(f"{path}: CSV grid must contain finite nonnegative values")
    return grid


def grid_cost(height: int, width: int) -> np.ndarray:
    """Squared Euclidean distance between flattened pixel coordinates."""
    rows, cols = np.divmod(np.arange(height * width), width)
    d2 = (rows[:, None] - rows[None, :]) ** 2 + (cols[:, None] - cols[None, :]) ** 2
    return normalize_cost(d2.astype(np.float64))


def load_image_pair(path1: str | os.PathLike, path2: str | os.PathLike) -> OtProblem:
    """Transport instance between two same-size grayscale images.

    Pixel intensities (plus a tiny floor guarding all-zero pixels) become
    the marginals; the cost is the squared distance between pixel grid
    coordinates, scaled to unit maximum.
    """
    img1 = _load_grid(os.fspath(path1))
    img2 = _load_grid(os.fspath(path2))
    if img1.shape != img2.shape:
        raise LoadError(
            f"image dimensions differ: {img1.shape} ({path1}) vs {img2.shape} ({path2})"
        )
    height, width = img1.shape
    a = img1.flatten() + _PIXEL_EPS
    b = img2.flatten() + _PIXEL_EPS
    return OtProblem(
        cost=grid_cost(height, width),
        source_marginal=a / a.sum(),
        target_marginal=b / b.sum(),
    )
