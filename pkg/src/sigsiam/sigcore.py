"""Truncated signatures of piecewise-linear paths.

Levels are stored flat, level 1 first.  Inside level ``k`` the ``d**k`` terms
follow lexicographic multi-index order with the first index varying slowest,
which is exactly ``np.ndarray.ravel()`` order of a ``(d,) * k`` tensor.  The
constant level-0 term (always 1) is not stored.  Indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import CapacityError, SchemaError

DEFAULT_MAX_TERMS = 10**6


def term_count(d: int, level: int) -> int:
    return sum(d**k for k in range(1, level + 1))


@dataclass(frozen=True)
class PiecewiseLinearPath:
    """Ordered points in R^d; time is implicit in the ordering."""

    points: np.ndarray

    def __post_init__(self):
        try:
            pts = np.array(self.points, dtype=float)
        except ValueError as exc:  # ragged input
            raise SchemaError(f"points do not share a common dimension: {exc}") from None
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise SchemaError("points must form a 2-D (n_points, d) array")
        if pts.shape[0] < 2:
            raise SchemaError("a path needs at least 2 points")
        if pts.shape[1] < 1:
            raise SchemaError("points must have dimension >= 1")
        if not np.all(np.isfinite(pts)):
            raise SchemaError("points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.points, axis=0)

    def split(self, index: int) -> tuple["PiecewiseLinearPath", "PiecewiseLinearPath"]:
        """Split at point ``index``; the point is shared by both halves."""
        if not 0 < index < len(self.points) - 1:
            raise SchemaError("split index must be an interior point")
        return (
            PiecewiseLinearPath(self.points[: index + 1]),
            PiecewiseLinearPath(self.points[index:]),
        )


@dataclass(frozen=True)
class SignatureVector:
    d: int
    level: int
    terms: np.ndarray

    def __post_init__(self):
        terms = np.asarray(self.terms, dtype=float).ravel()
        if self.d < 1 or self.level < 1:
            raise SchemaError("d and level must be >= 1")
        if terms.size != term_count(self.d, self.level):
            raise SchemaError(
                f"expected {term_count(self.d, self.level)} terms for d={self.d}, "
                f"level={self.level}, got {terms.size}"
            )
        terms.setflags(write=False)
        object.__setattr__(self, "terms", terms)

    def offset(self, k: int) -> int:
        return term_count(self.d, k - 1)

    def block(self, k: int) -> np.ndarray:
        """Level-``k`` terms as a ``(d,) * k`` tensor."""
        if not 1 <= k <= self.level:
            raise SchemaError(f"level {k} outside 1..{self.level}")
        start = self.offset(k)
        return self.terms[start : start + self.d**k].reshape((self.d,) * k)

    def blocks(self) -> list[np.ndarray]:
        return [self.block(k) for k in range(1, self.level + 1)]

    def term(self, *index: int) -> float:
        """Iterated integral along the (0-based) multi-index; ``term()`` is 1."""
        if not index:
            return 1.0
        return float(self.block(len(index))[tuple(index)])

    @classmethod
    def from_blocks(cls, blocks: Sequence[np.ndarray]) -> "SignatureVector":
        d = np.shape(blocks[0])[0]
        return cls(d, len(blocks), np.concatenate([np.ravel(b) for b in blocks]))

    @classmethod
    def zero(cls, d: int, level: int) -> "SignatureVector":
        """Signature of a constant path (the identity for ``chen_concat``)."""
        return cls(d, level, np.zeros(term_count(d, level)))


def _check_capacity(d: int, level: int, max_terms: int) -> None:
    if level < 1:
        raise SchemaError("truncation level must be >= 1")
    if term_count(d, level) > max_terms:
        raise CapacityError(
            f"d={d}, level={level} needs {term_count(d, level)} terms (cap {max_terms})"
        )


def segment_blocks(delta: np.ndarray, level: int) -> list[np.ndarray]:
    """Levels of exp(delta): level k is delta^(tensor k) / k!.

    ``delta`` may carry leading batch axes, shape ``(..., d)``; the returned
    level-k block then has shape ``(..., d**k)``.
    """
    delta = np.asarray(delta, dtype=float)
    blocks = [delta.copy()]
    for k in range(2, level + 1):
        prev = blocks[-1]
        nxt = (prev[..., :, None] * delta[..., None, :]) / k
        blocks.append(nxt.reshape(delta.shape[:-1] + (-1,)))
    return blocks


def _chen_blocks(a: list[np.ndarray], b: list[np.ndarray]) -> list[np.ndarray]:
    level = len(a)
    out = []
    for k in range(1, level + 1):
        acc = a[k - 1] + b[k - 1]
        for i in range(1, k):
            acc = acc + np.multiply.outer(a[i - 1], b[k - i - 1])
        out.append(acc)
    return out


def signature(
    path: PiecewiseLinearPath | np.ndarray,
    level: int,
    max_terms: int = DEFAULT_MAX_TERMS,
) -> SignatureVector:
    """Truncated signature of a piecewise-linear path.

    Each straight segment contributes exp(increment); segments are combined
    left to right with Chen's identity.
    """
    if not isinstance(path, PiecewiseLinearPath):
        path = PiecewiseLinearPath(path)
    d = path.d
    _check_capacity(d, level, max_terms)
    acc = None
    for delta in path.increments:
        seg = [
            blk.reshape((d,) * k) for k, blk in enumerate(segment_blocks(delta, level), start=1)
        ]
        acc = seg if acc is None else _chen_blocks(acc, seg)
    return SignatureVector.from_blocks(acc)


def chen_concat(s1: SignatureVector, s2: SignatureVector) -> SignatureVector:
    """Signature of the concatenated path from the two segment signatures."""
    if (s1.d, s1.level) != (s2.d, s2.level):
        raise SchemaError(
            f"cannot concatenate signatures with (d, level) {(s1.d, s1.level)} "
            f"and {(s2.d, s2.level)}"
        )
    return SignatureVector.from_blocks(_chen_blocks(s1.blocks(), s2.blocks()))


def linear_signature_terms(start: np.ndarray, end: np.ndarray, level: int) -> np.ndarray:
    """Batched flat signatures of straight segments ``start -> end``.

    ``start`` and ``end`` have shape ``(..., d)``; the result has shape
    ``(..., term_count(d, level))``.  Used for bulk featurisation.
    """
    delta = np.asarray(end, dtype=float) - np.asarray(start, dtype=float)
    return np.concatenate(segment_blocks(delta, level), axis=-1)


def quadrature_oracle(
    path: PiecewiseLinearPath | np.ndarray, level: int, steps: int
) -> SignatureVector:
    """Brute-force iterated integrals by nested midpoint Riemann sums.

    The path is sampled on a uniform grid of ``steps`` intervals over a
    uniform parametrisation of its segments.  In each grid cell the inner
    integral is evaluated at the cell midpoint, taken as the average of its
    values at the two cell ends.  Independent of the Chen machinery above;
    meant for tests.  Error is O(1/steps**2).
    """
    if not isinstance(path, PiecewiseLinearPath):
        path = PiecewiseLinearPath(path)
    if steps < 10:
        raise SchemaError("quadrature needs steps >= 10")
    _check_capacity(path.d, level, DEFAULT_MAX_TERMS)
    pts = path.points
    knots = np.linspace(0.0, 1.0, len(pts))
    grid = np.linspace(0.0, 1.0, steps + 1)
    sampled = np.column_stack([np.interp(grid, knots, pts[:, i]) for i in range(path.d)])
    dx = np.diff(sampled, axis=0)  # (steps, d)

    blocks = []
    # inner[t]: level-(k-1) integral at the midpoint of cell t
    inner = np.ones((steps, 1))
    for _ in range(level):
        contrib = (inner[:, :, None] * dx[:, None, :]).reshape(steps, -1)
        total = np.cumsum(contrib, axis=0)
        blocks.append(total[-1].copy())
        inner = total - 0.5 * contrib
    return SignatureVector(path.d, level, np.concatenate(blocks))
