"""Batch convolution as one square matrix product (im2col layout).

Row k of the weight block is filter k flattened; column b*P + p of the
input block is patch p of input b.  Everything else is zero padding up to
L = max(M, m^2, P*B).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .algebra import ORDER


class LayoutError(ValueError):
    pass


@dataclass(frozen=True)
class ConvShape:
    M: int
    m: int
    n: int
    B: int

    def __post_init__(self):
        if min(self.M, self.m, self.n, self.B) < 1 or self.m > self.n:
            raise LayoutError("invalid conv shape %r" % (self,))

    @property
    def o(self) -> int:
        return self.n - self.m + 1

    @property
    def P(self) -> int:
        return self.o * self.o


@dataclass(frozen=True)
class ReshapeLayout:
    L: int
    shape: ConvShape
    # (row, col, k, lr, lc): weight cell <- filter k entry (lr, lc)
    idxW: tuple
    # (row, col, b, r, c): input cell <- pixel (r, c) of input b
    idxX: tuple

    def idxY(self, k: int, b: int, i: int, j: int) -> tuple:
        s = self.shape
        return k, b * s.P + i * s.o + j

    def y_cells(self):
        s = self.shape
        for k in range(s.M):
            for b in range(s.B):
                for i in range(s.o):
                    for j in range(s.o):
                        yield (k, b, i, j), self.idxY(k, b, i, j)


def plan_layout(s: ConvShape) -> ReshapeLayout:
    L = max(s.M, s.m * s.m, s.P * s.B)
    idxW = tuple((k, lr * s.m + lc, k, lr, lc)
                 for k in range(s.M) for lr in range(s.m) for lc in range(s.m))
    idxX = tuple((lr * s.m + lc, b * s.P + i * s.o + j, b, i + lr, j + lc)
                 for b in range(s.B) for i in range(s.o) for j in range(s.o)
                 for lr in range(s.m) for lc in range(s.m))
    return ReshapeLayout(L, s, idxW, idxX)


def build_weight_matrix(filters, layout: ReshapeLayout) -> np.ndarray:
    f = np.asarray(filters, dtype=np.int64)
    s = layout.shape
    if f.shape != (s.M, s.m, s.m):
        raise LayoutError("filters shape %s, expected %s" % (f.shape, (s.M, s.m, s.m)))
    w = np.zeros((layout.L, layout.L), dtype=np.int64)
    for row, col, k, lr, lc in layout.idxW:
        w[row, col] = f[k, lr, lc]
    return w


def build_input_matrix(batch, layout: ReshapeLayout) -> np.ndarray:
    x = np.asarray(batch, dtype=np.int64)
    s = layout.shape
    if x.shape != (s.B, s.n, s.n):
        raise LayoutError("batch shape %s, expected %s" % (x.shape, (s.B, s.n, s.n)))
    out = np.zeros((layout.L, layout.L), dtype=np.int64)
    for row, col, b, r, c in layout.idxX:
        out[row, col] = x[b, r, c]
    return out


def extract_outputs(yr, layout: ReshapeLayout) -> np.ndarray:
    """Conv outputs indexed [k][b][i][j]."""
    yr = np.asarray(yr)
    if yr.shape != (layout.L, layout.L):
        raise LayoutError("Y^r has shape %s, layout wants %d" % (yr.shape, layout.L))
    s = layout.shape
    out = np.zeros((s.M, s.B, s.o, s.o), dtype=yr.dtype)
    for (k, b, i, j), (r, c) in layout.y_cells():
        out[k, b, i, j] = yr[r, c]
    return out


def pad_square(a, L: int | None = None) -> np.ndarray:
    """Embed a rectangular matrix in the top-left corner of an L x L zero matrix."""
    a = np.asarray(a)
    if L is None:
        L = max(a.shape)
    if a.shape[0] > L or a.shape[1] > L:
        raise LayoutError("matrix does not fit")
    out = np.zeros((L, L), dtype=a.dtype)
    out[: a.shape[0], : a.shape[1]] = a
    return out


def to_field(a) -> list:
    """Integer matrix to field residues (negatives wrap mod p)."""
    return [[int(x) % ORDER for x in row] for row in np.asarray(a, dtype=object)]
