"""Field file formats.

Two formats are supported:

- PGM (binary ``P5``, 8-bit): values are rescaled to 0..255; the original
  ``min``/``max`` (and grid spacing) go to a sidecar text file at
  ``<path>.txt`` so the scaling can be undone on read. Lossy (8-bit).
- GFLD: lossless raw dump of a scalar or vector field. A text header
  ``GFLD <nx> <ny> <ncomp> <spacing>\\n`` followed by little-endian 64-bit
  floats in row-major order (component fastest for vector fields).
"""

import os

import numpy as np

from .errors import DomainError
from .grid import Grid, ScalarField, VectorField


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path, header, rows) -> None:
    """Header row then data rows; floats serialized at round-trip precision."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [
                str(int(v)) if isinstance(v, (int, np.integer)) else _fmt(v)
                for v in row
            ]
            fh.write(",".join(cells) + "\n")


def write_gfld(path, field) -> None:
    g = field.grid
    ncomp = 1 if isinstance(field, ScalarField) else 2
    header = f"GFLD {g.nx} {g.ny} {ncomp} {_fmt(g.spacing)}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(field.values, dtype="<f8").tobytes())


def read_gfld(path):
    with open(path, "rb") as fh:
        header = bytearray()
        while True:
            c = fh.read(1)
            if not c:
                raise DomainError(f"{path}: truncated GFLD header")
            if c == b"\n":
                break
            header += c
        parts = header.decode("ascii").split()
        if len(parts) != 5 or parts[0] != "GFLD":
            raise DomainError(f"{path}: not a GFLD file (header {header!r})")
        nx, ny, ncomp, spacing = int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4])
        if ncomp not in (1, 2):
            raise DomainError(f"{path}: unsupported component count {ncomp}")
        raw = fh.read(nx * ny * ncomp * 8)
    if len(raw) != nx * ny * ncomp * 8:
        raise DomainError(f"{path}: GFLD payload is truncated")
    if ncomp == 1:
        values = np.frombuffer(raw, dtype="<f8").reshape(ny, nx)
        return ScalarField(Grid(nx, ny, spacing), values)
    values = np.frombuffer(raw, dtype="<f8").reshape(ny, nx, 2)
    return VectorField(Grid(nx, ny, spacing), values)


def write_pgm(path, field: ScalarField) -> None:
    g = field.grid
    lo = float(np.min(field.values))
    hi = float(np.max(field.values))
    span = hi - lo
    if span > 0:
        scaled = np.rint((field.values - lo) / span * 255.0)
    else:
        scaled = np.zeros(g.shape)
    data = scaled.astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{g.nx} {g.ny}\n255\n".encode("ascii"))
        fh.write(data.tobytes())
    with open(f"{path}.txt", "w", encoding="ascii") as fh:
        fh.write(f"min = {_fmt(lo)}\nmax = {_fmt(hi)}\nspacing = {_fmt(g.spacing)}\n")


def _read_pgm_tokens(fh, count):
    """Read whitespace-separated ASCII tokens, skipping ``#`` comment lines."""
    tokens = []
    while len(tokens) < count:
        line = b""
        while True:
            c = fh.read(1)
            if not c or c in b"\n":
                break
            line += c
        if not line and not c:
            raise DomainError("truncated PGM header")
        text = line.decode("ascii", errors="replace")
        if text.lstrip().startswith("#"):
            continue
        tokens.extend(text.split())
    return tokens


def read_pgm(path) -> ScalarField:
    """Read a binary PGM. If the sidecar ``<path>.txt`` exists, the original
    value range is restored; otherwise values are scaled to [0, 1]."""
    with open(path, "rb") as fh:
        tokens = _read_pgm_tokens(fh, 4)
        if tokens[0] != "P5":
            raise DomainError(f"{path}: only binary (P5) PGM is supported, got {tokens[0]!r}")
        nx, ny, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
        raw = fh.read(nx * ny)
    if len(raw) != nx * ny:
        raise DomainError(f"{path}: PGM payload is truncated")
    data = np.frombuffer(raw, dtype=np.uint8).reshape(ny, nx).astype(np.float64)

    sidecar = f"{path}.txt"
    lo, hi, spacing = 0.0, float(maxval), 1.0
    if os.path.exists(sidecar):
        meta = {}
        with open(sidecar, "r", encoding="ascii") as fh:
            for line in fh:
                if "=" in line:
                    k, v = line.split("=", 1)
                    meta[k.strip()] = float(v.strip())
        lo = meta.get("min", 0.0)
        hi = meta.get("max", 255.0)
        spacing = meta.get("spacing", 1.0)
        values = lo + data / float(maxval) * (hi - lo)
    else:
        values = data / float(maxval)
    return ScalarField(Grid(nx, ny, spacing), values)
