"""Plain-text input formats and report writing.

Density matrix file::

    # comments and blank lines are ignored
    dim 2
    0 0 0.5 0.0
    0 1 0.0 0.0
    1 0 0.0 0.0
    1 1 0.5 0.0

Every (i, j) pair, zero-based, must appear exactly once.

Measure file: one atom per line, ``k w x1 ... xm`` with k = 0, 1, 2, ...
Cost file: ``shape m n`` followed by ``i j c`` lines, one per entry.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ParseError


def _lines(path):
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read file: {exc.strerror}", path=p) from None
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield n, line.split()


def _number(tok, path, line, field, kind=float):
    try:
        return kind(tok)
    except ValueError:
        raise ParseError(f"expected {kind.__name__}, got {tok!r}", path, line, field) from None


def read_matrix(path) -> np.ndarray:
    """Complex matrix from the ``dim d`` / ``i j re im`` format (not validated as a state)."""
    it = iter(_lines(path))
    try:
        n, head = next(it)
    except StopIteration:
        raise ParseError("empty file", path) from None
    if len(head) != 2 or head[0] != "dim":
        raise ParseError("first line must be 'dim d'", path, n, "dim")
    d = _number(head[1], path, n, "dim", int)
    if d < 1:
        raise ParseError("dimension must be >= 1", path, n, "dim")
    m = np.zeros((d, d), dtype=np.complex128)
    seen = np.zeros((d, d), dtype=bool)
    for n, tok in it:
        if len(tok) != 4:
            raise ParseError(f"expected 'i j re im', got {len(tok)} fields", path, n)
        i = _number(tok[0], path, n, "i", int)
        j = _number(tok[1], path, n, "j", int)
        if not (0 <= i < d and 0 <= j < d):
            raise ParseError(f"index ({i}, {j}) outside 0..{d - 1}", path, n, "i" if not 0 <= i < d else "j")
        if seen[i, j]:
            raise ParseError(f"entry ({i}, {j}) given twice", path, n)
        re = _number(tok[2], path, n, "re")
        im = _number(tok[3], path, n, "im")
        m[i, j] = re + 1j * im
        seen[i, j] = True
    if not seen.all():
        i, j = map(int, np.argwhere(~seen)[0])
        raise ParseError(f"missing entry ({i}, {j})", path)
    return m


def write_matrix(path, m) -> None:
    m = np.asarray(m, dtype=np.complex128)
    d = m.shape[0]
    rows = [f"dim {d}"]
    rows += [f"{i} {j} {m[i, j].real:.17g} {m[i, j].imag:.17g}" for i in range(d) for j in range(d)]
    Path(path).write_text("\n".join(rows) + "\n")


def read_measure(path):
    """``(weights, points)`` from ``k w x1 ... xm`` lines; points is (K, m)."""
    weights, points = [], []
    width = None
    for n, tok in _lines(path):
        if len(tok) < 2:
            raise ParseError("expected 'k w x1 ... xm'", path, n)
        k = _number(tok[0], path, n, "k", int)
        if k != len(weights):
            raise ParseError(f"atom index {k} out of order (expected {len(weights)})", path, n, "k")
        w = _number(tok[1], path, n, "w")
        if w < 0:
            raise ParseError("weight must be nonnegative", path, n, "w")
        xs = [_number(t, path, n, f"x{q + 1}") for q, t in enumerate(tok[2:])]
        if width is None:
            width = len(xs)
        elif len(xs) != width:
            raise ParseError(f"atom has {len(xs)} coordinates, earlier atoms have {width}", path, n)
        weights.append(w)
        points.append(xs)
    if not weights:
        raise ParseError("no atoms", path)
    return np.array(weights), np.array(points, dtype=float).reshape(len(weights), width or 0)


def read_cost(path) -> np.ndarray:
    it = iter(_lines(path))
    try:
        n, head = next(it)
    except StopIteration:
        raise ParseError("empty file", path) from None
    if len(head) != 3 or head[0] != "shape":
        raise ParseError("first line must be 'shape m n'", path, n, "shape")
    m = _number(head[1], path, n, "m", int)
    k = _number(head[2], path, n, "n", int)
    c = np.full((m, k), np.nan)
    for n, tok in it:
        if len(tok) != 3:
            raise ParseError("expected 'i j c'", path, n)
        i = _number(tok[0], path, n, "i", int)
        j = _number(tok[1], path, n, "j", int)
        if not (0 <= i < m and 0 <= j < k):
            raise ParseError(f"index ({i}, {j}) out of range", path, n)
        c[i, j] = _number(tok[2], path, n, "c")
    if np.isnan(c).any():
        i, j = map(int, np.argwhere(np.isnan(c))[0])
        raise ParseError(f"missing entry ({i}, {j})", path)
    return c


def states_payload(states) -> list:
    """Complex amplitudes as ``[[re, im], ...]`` rows (JSON has no complex type)."""
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.atleast_2d(states)]


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {k: to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dump_report(report: dict, out=None) -> str:
    text = json.dumps(to_jsonable(report), indent=2) + "\n"
    if out is not None:
        Path(out).write_text(text)
    return text
