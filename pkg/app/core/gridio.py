import re
from pathlib import Path
from typing import List, Sequence

import numpy as np

# --- Occupancy grid text/image formats ---
# Rows are stored top (max y) first in both formats; arrays returned here are
# flipped so that row 0 is the row touching the grid origin.

RLE_TOKEN = re.compile(r"(\d*)([.#])")
FREE, OCCUPIED = ".", "#"
PGM_OCCUPIED_BELOW = 128


def parse_rle_rows(rows: Sequence[str]) -> np.ndarray:
    """Decode run-length rows like '3.2#5.' into a bool grid (True = occupied)."""
    decoded: List[List[bool]] = []
    for row_idx, row in enumerate(rows):
        compact = row.replace(" ", "")
        cells: List[bool] = []
        pos = 0
        for match in RLE_TOKEN.finditer(compact):
            if match.start() != pos:
                raise ValueError(f"row {row_idx}: unexpected character at column {pos}: {compact[pos]!r}")
            count = int(match.group(1)) if match.group(1) else 1
            if count <= 0:
                raise ValueError(f"row {row_idx}: run length must be positive")
            cells.extend([match.group(2) == OCCUPIED] * count)
            pos = match.end()
        if pos != len(compact):
            raise ValueError(f"row {row_idx}: unexpected character at column {pos}: {compact[pos]!r}")
        decoded.append(cells)

    if not decoded:
        raise ValueError("occupancy grid has no rows")
    width = len(decoded[0])
    if width == 0:
        raise ValueError("occupancy grid rows are empty")
    for row_idx, cells in enumerate(decoded):
        if len(cells) != width:
            raise ValueError(f"row {row_idx} has {len(cells)} cells, expected {width}")
    return np.flipud(np.array(decoded, dtype=bool))


def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos].decode("ascii"))
    return tokens, pos


def read_pgm(path: Path) -> np.ndarray:
    """Read a P2/P5 graymap as raw pixel values, row 0 at the bottom."""
    data = Path(path).read_bytes()
    (magic, width, height, maxval), pos = _pgm_tokens(data, 4)
    width, height, maxval = int(width), int(height), int(maxval)
    if magic == "P5":
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        pixels = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos + 1)
    elif magic == "P2":
        pixels = np.array(data[pos:].split()[: width * height], dtype=np.int64)
    else:
        raise ValueError(f"unsupported graymap type {magic!r}")
    if pixels.size != width * height:
        raise ValueError("graymap pixel data is truncated")
    return np.flipud(pixels.reshape(height, width).astype(np.int64))


def pgm_to_occupancy(pixels: np.ndarray) -> np.ndarray:
    # dark pixels are walls, as in map_server images
    return pixels < PGM_OCCUPIED_BELOW


def write_pgm(path: Path, values: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    image = np.flipud(np.clip(values, 0, 255).astype(np.uint8))
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + image.tobytes())
    return path
