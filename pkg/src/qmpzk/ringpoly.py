"""Ring-polynomial data: Z_q[x]/(x^d+1)-shaped elements, unreduced products,
bivariate encodings of matrices and evaluation at a field point.

Unreduced products keep exact integer coefficients (no reduction by q or by
x^d + 1), which is what makes evaluation at a field point a homomorphism.
The ciphertext stub hides nothing; it only gives the provers ring-shaped data.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

from .algebra import ORDER

DEFAULT_Q = 0xFFFFFFFFFFFFFA3  # largest prime below 2^60
DEFAULT_D = 64


class RingError(ValueError):
    pass


@dataclass(frozen=True)
class RingParams:
    d: int = DEFAULT_D
    q: int = DEFAULT_Q

    def __post_init__(self):
        if self.d < 2 or self.d & (self.d - 1):
            raise RingError("ring degree must be a power of two >= 2")
        if not 2 <= self.q < ORDER:
            raise RingError("modulus must embed into the pairing field")


@dataclass(frozen=True)
class RingElem:
    coeffs: tuple
    params: RingParams
    reduced: bool = True

    def __post_init__(self):
        limit = self.params.d if self.reduced else 2 * self.params.d - 1
        if len(self.coeffs) > limit:
            raise RingError("too many coefficients for %s element" % ("reduced" if self.reduced else "unreduced"))
        if self.reduced and any(not 0 <= c < self.params.q for c in self.coeffs):
            raise RingError("reduced coefficients must lie in [0, q)")

    @staticmethod
    def const(c: int, params: RingParams) -> "RingElem":
        return RingElem((c % params.q,), params)

    @property
    def degree(self) -> int:
        for i in range(len(self.coeffs) - 1, -1, -1):
            if self.coeffs[i]:
                return i
        return -1

    def lift(self) -> "RingElem":
        return self if not self.reduced else RingElem(self.coeffs, self.params, False)

    def reduce(self) -> "RingElem":
        """Reduce mod (x^d + 1, q)."""
        d, q = self.params.d, self.params.q
        out = [0] * d
        for i, c in enumerate(self.coeffs):
            if i < d:
                out[i] += c
            else:
                out[i - d] -= c
        return RingElem(tuple(c % q for c in out), self.params)

    def mod_q(self) -> tuple:
        return tuple(c % self.params.q for c in self.coeffs)

    def eval(self, k: int) -> int:
        acc = 0
        for c in reversed(self.coeffs):
            acc = (acc * k + c) % ORDER
        return acc


def _check(a: RingElem, b: RingElem) -> None:
    if a.params != b.params:
        raise RingError("ring parameter mismatch")


def ring_add(a: RingElem, b: RingElem) -> RingElem:
    """Reduced + reduced stays mod q; anything unreduced adds exactly."""
    _check(a, b)
    n = max(len(a.coeffs), len(b.coeffs))
    ca = a.coeffs + (0,) * (n - len(a.coeffs))
    cb = b.coeffs + (0,) * (n - len(b.coeffs))
    if a.reduced and b.reduced:
        return RingElem(tuple((x + y) % a.params.q for x, y in zip(ca, cb)), a.params)
    return RingElem(tuple(x + y for x, y in zip(ca, cb)), a.params, False)


def ring_mul_unreduced(a: RingElem, b: RingElem) -> RingElem:
    _check(a, b)
    if a.degree < 0 or b.degree < 0:
        return RingElem((), a.params, False)
    ca, cb = a.coeffs[: a.degree + 1], b.coeffs[: b.degree + 1]
    if len(ca) + len(cb) - 1 > 2 * a.params.d - 1:
        raise RingError("operands must be reduced-size for an unreduced product")
    out = [0] * (len(ca) + len(cb) - 1)
    for i, x in enumerate(ca):
        if x:
            for j, y in enumerate(cb):
                out[i + j] += x * y
    return RingElem(tuple(out), a.params, False)


def ring_matmul_unreduced(a: Sequence[Sequence[RingElem]], b: Sequence[Sequence[RingElem]]) -> list:
    if len(a[0]) != len(b):
        raise RingError("inner dimensions differ")
    params = a[0][0].params
    zero = RingElem((), params, False)
    out = []
    for i in range(len(a)):
        row = []
        for j in range(len(b[0])):
            acc = zero
            for k in range(len(b)):
                acc = ring_add(acc, ring_mul_unreduced(a[i][k], b[k][j]))
            row.append(acc)
        out.append(row)
    return out


def eval_at(m: Sequence[Sequence[RingElem]], k: int) -> list:
    return [[e.eval(k) for e in row] for row in m]


@dataclass(frozen=True)
class BivariatePoly:
    """sum_{i,j} coeffs[j][i] x^i y^j; slot j is entry j in row-major order."""

    coeffs: tuple  # per slot: tuple of x-coefficients (field residues)
    rows: int
    cols: int

    @property
    def slots(self) -> int:
        return len(self.coeffs)

    @property
    def deg_x(self) -> int:
        return max((len(c) for c in self.coeffs), default=0) - 1

    def eval_x(self, k: int) -> list:
        """L(k, y) as its slot vector."""
        out = []
        for c in self.coeffs:
            acc = 0
            for v in reversed(c):
                acc = (acc * k + v) % ORDER
            out.append(acc)
        return out

    def terms(self):
        """Nonzero (i, j, coeff) triples."""
        for j, c in enumerate(self.coeffs):
            for i, v in enumerate(c):
                if v:
                    yield i, j, v


def encode_matrix(m: Sequence[Sequence[RingElem]]) -> BivariatePoly:
    """Row-major slots; rectangular matrices are accepted (rows x cols slots)."""
    rows = len(m)
    if rows == 0:
        raise RingError("empty matrix")
    cols = len(m[0])
    if any(len(r) != cols for r in m):
        raise RingError("ragged matrix")
    params = m[0][0].params
    slots = []
    for r in m:
        for e in r:
            if e.params != params:
                raise RingError("mixed ring parameters")
            c = list(e.coeffs[: e.degree + 1])
            slots.append(tuple(x % ORDER for x in c))
    return BivariatePoly(tuple(slots), rows, cols)


def decode_matrix(p: BivariatePoly, params: RingParams, reduced: bool = True) -> list:
    """Inverse of encode_matrix for coefficients that were non-negative."""
    out = []
    for r in range(p.rows):
        row = []
        for c in range(p.cols):
            row.append(RingElem(tuple(p.coeffs[r * p.cols + c]), params, reduced))
        out.append(row)
    return out


def scalar_matrix_poly(m: Sequence[Sequence[int]]) -> BivariatePoly:
    """A plain field matrix as a degree-0 bivariate polynomial."""
    slots = tuple(((x % ORDER,) if x % ORDER else ()) for row in m for x in row)
    return BivariatePoly(slots, len(m), len(m[0]))


# -- ciphertext stub -----------------------------------------------------------


def _mask(seed: bytes, index: int, params: RingParams) -> list:
    h = hashlib.shake_256(b"stub-mask" + seed + index.to_bytes(8, "little"))
    raw = h.digest(8 * (params.d - 1))
    return [int.from_bytes(raw[8 * i: 8 * i + 8], "little") % params.q for i in range(params.d - 1)]


def stub_encrypt(plain, params: RingParams = RingParams(), seed: bytes = b"") -> list:
    """Coefficient 0 carries the value, the rest is a deterministic mask.
    Not encryption in any security sense."""
    out = []
    idx = 0
    for row in plain:
        r = []
        for v in row:
            v = int(v)
            if v == 0 and not seed:
                r.append(RingElem((), params))
            else:
                r.append(RingElem(tuple([v % params.q] + _mask(seed, idx, params)), params))
            idx += 1
        out.append(r)
    return out


def stub_decrypt(cipher) -> list:
    """Constant coefficient; reduced elements are lifted to (-q/2, q/2]."""
    out = []
    for row in cipher:
        r = []
        for e in row:
            c = e.coeffs[0] if e.coeffs else 0
            if e.reduced and c > e.params.q // 2:
                c -= e.params.q
            r.append(c)
        out.append(r)
    return out
