"""Pairing-group plumbing over BLS12-381.

Scalars are plain Python ints reduced mod ``ORDER``.  G1/G2 elements are
arkworks points; GT elements are wrapped in :class:`Gt`, which delegates the
field-12 arithmetic to blst (arkworks exposes no exponentiation or decoding
for GT).  Matrices are lists of rows.
"""
from __future__ import annotations

import hashlib
import secrets
from typing import Iterable, Sequence, Union

import blspy
from py_arkworks_bls12381 import GT as _ArkGT
from py_arkworks_bls12381 import G1Point, G2Point
from py_arkworks_bls12381 import Scalar as _S

ORDER = 0x73EDA753299D7D483339D80809A1D80553BDA402FFFE5BFEFFFFFFFF00000001
BASE_FIELD = 0x1A0111EA397FE69A4B1BA7B6434BACD764774B84F38512BF6730D2A0F6B0F6241EABFFFEB153FFFFB9FEFFFFFFFFAAAB
SCALAR_BYTES = 32
G1_BYTES = 48
G2_BYTES = 96
GT_BYTES = 576
HALF = ORDER // 2

Point = Union[G1Point, G2Point]
ScalarMatrix = list  # list[list[int]], square
GroupMatrix = list  # list[list[Point]], square

# Operation counters, handy for cost assertions in tests and benches.
COUNTERS = {"pairings": 0}


class ArgumentError(ValueError):
    pass


# -- field ------------------------------------------------------------------


def fe(x: int) -> int:
    return x % ORDER


def inv(x: int) -> int:
    x %= ORDER
    if x == 0:
        raise ZeroDivisionError("inverse of zero")
    return pow(x, ORDER - 2, ORDER)


def batch_inv(xs: Sequence[int]) -> list[int]:
    """Montgomery batch inversion; all inputs must be nonzero."""
    n = len(xs)
    if n == 0:
        return []
    prefix = [1] * n
    acc = 1
    for i, x in enumerate(xs):
        prefix[i] = acc
        acc = acc * x % ORDER
    acc = inv(acc)
    out = [0] * n
    for i in range(n - 1, -1, -1):
        out[i] = prefix[i] * acc % ORDER
        acc = acc * xs[i] % ORDER
    return out


def rand_scalar(rng=None) -> int:
    if rng is None:
        return secrets.randbelow(ORDER)
    return rng.randrange(ORDER)


def rand_nonzero(rng=None) -> int:
    while True:
        x = rand_scalar(rng)
        if x:
            return x


def signed(x: int) -> int:
    """Lift a residue to the symmetric range (-p/2, p/2]."""
    x %= ORDER
    return x - ORDER if x > HALF else x


def scalar_to_bytes(x: int) -> bytes:
    return (x % ORDER).to_bytes(SCALAR_BYTES, "little")


def scalar_from_bytes(b: bytes) -> int:
    if len(b) != SCALAR_BYTES:
        raise ArgumentError("bad scalar length")
    x = int.from_bytes(b, "little")
    if x >= ORDER:
        raise ArgumentError("non-canonical scalar")
    return x


# -- groups -----------------------------------------------------------------

G1 = G1Point()
G2 = G2Point()
G1_ID = G1Point.identity()
G2_ID = G2Point.identity()


def identity_like(p: Point) -> Point:
    return G1_ID if isinstance(p, G1Point) else G2_ID


def is_g1(p) -> bool:
    return isinstance(p, G1Point)


def mul(p: Point, x: int) -> Point:
    """p^x.  Negative-looking residues are handled as -(p^(p-x)), which keeps
    small signed exponents cheap (arkworks cost scales with bit length)."""
    x %= ORDER
    if x == 0:
        return identity_like(p)
    if x == 1:
        return p
    if x > HALF:
        return -(p * _S(ORDER - x))
    return p * _S(x)


class FixedBase:
    """Comb table for repeated exponentiation of one base (8-bit windows)."""

    def __init__(self, base: Point, window: int = 8):
        self.base = base
        self.window = window
        self.identity = identity_like(base)
        size = 1 << window
        nwin = (ORDER.bit_length() + window - 1) // window
        rows = []
        b = base
        for _ in range(nwin):
            row = [self.identity, b]
            for _ in range(size - 2):
                row.append(row[-1] + b)
            rows.append(row)
            b = row[-1] + b
        self.rows = rows

    def mul(self, x: int) -> Point:
        x %= ORDER
        neg = x > HALF
        if neg:
            x = ORDER - x
        acc = None
        if self.window == 8:
            digits = x.to_bytes(SCALAR_BYTES, "little").rstrip(b"\0")
        else:
            mask = (1 << self.window) - 1
            digits = []
            while x:
                digits.append(x & mask)
                x >>= self.window
        rows = self.rows
        for w, d in enumerate(digits):
            if d:
                t = rows[w][d]
                acc = t if acc is None else acc + t
        if acc is None:
            return self.identity
        return -acc if neg else acc

    def mul_many(self, xs: Iterable[int]) -> list:
        return [self.mul(x) for x in xs]


_FB_CACHE: dict = {}


def fixed_base(base: Point) -> FixedBase:
    key = point_bytes(base)
    fb = _FB_CACHE.get(key)
    if fb is None:
        if len(_FB_CACHE) > 64:
            _FB_CACHE.clear()
        fb = FixedBase(base)
        _FB_CACHE[key] = fb
    return fb


def g1_exp(x: int) -> G1Point:
    return fixed_base(G1).mul(x)


def g2_exp(x: int) -> G2Point:
    return fixed_base(G2).mul(x)


def _naive_cost(xs: Sequence[int]) -> int:
    c = 0
    for x in xs:
        b = min(x.bit_length(), (ORDER - x).bit_length())
        c += 2 * b + 2
    return c


def msm(bases: Sequence[Point], scalars: Sequence[int]) -> Point:
    """Product of bases[i]^scalars[i]."""
    if len(bases) != len(scalars):
        raise ArgumentError("msm length mismatch")
    if not bases:
        raise ArgumentError("msm needs at least one term")
    pairs = [(b, x % ORDER) for b, x in zip(bases, scalars) if x % ORDER]
    ident = identity_like(bases[0])
    if not pairs:
        return ident
    n = len(pairs)
    g2 = isinstance(bases[0], G2Point)
    fixed = 800 + (110 * n if n <= 64 else 7040 + 7 * (n - 64))
    if _naive_cost([x for _, x in pairs]) <= fixed:
        acc = None
        for b, x in pairs:
            t = mul(b, x)
            acc = t if acc is None else acc + t
        return acc
    # multiexp cost tracks scalar length, so fold negative residues into the base
    cls = G2Point if g2 else G1Point
    bs, xs = [], []
    for b, x in pairs:
        if x > HALF:
            bs.append(-b)
            xs.append(_S(ORDER - x))
        else:
            bs.append(b)
            xs.append(_S(x))
    return cls.multiexp_unchecked(bs, xs)


def point_sum(points: Iterable[Point], like: Point) -> Point:
    acc = identity_like(like)
    for p in points:
        acc = acc + p
    return acc


# -- matrices ---------------------------------------------------------------


def dim(m: Sequence[Sequence]) -> int:
    n = len(m)
    if n == 0 or any(len(r) != n for r in m):
        raise ArgumentError("matrix must be square and non-empty")
    return n


def identity_matrix(n: int, scale: int = 1) -> ScalarMatrix:
    return [[scale % ORDER if i == j else 0 for j in range(n)] for i in range(n)]


def zero_matrix(n: int) -> ScalarMatrix:
    return [[0] * n for _ in range(n)]


def mat_mul(a: ScalarMatrix, b: ScalarMatrix) -> ScalarMatrix:
    n = len(a)
    bt = list(zip(*b))
    return [[sum(x * y for x, y in zip(a[i], bt[j])) % ORDER for j in range(len(bt))] for i in range(n)]


def mat_add(*ms: ScalarMatrix) -> ScalarMatrix:
    n = len(ms[0])
    return [[sum(m[i][j] for m in ms) % ORDER for j in range(len(ms[0][0]))] for i in range(n)]


def mat_scale(m: ScalarMatrix, c: int) -> ScalarMatrix:
    return [[x * c % ORDER for x in row] for row in m]


def transpose(m):
    return [list(r) for r in zip(*m)]


def trace(m: ScalarMatrix) -> int:
    return sum(m[i][i] for i in range(len(m))) % ORDER


def mat_exp(base: Point, m: ScalarMatrix) -> GroupMatrix:
    """Entrywise base^m[i][j]."""
    n = dim(m)
    fb = fixed_base(base) if n * n > 16 else None
    f = fb.mul if fb else (lambda x: mul(base, x))
    return [[f(m[i][j]) for j in range(n)] for i in range(n)]


def exp_matmul(bases: GroupMatrix, scalars: ScalarMatrix) -> GroupMatrix:
    """out[i][j] = prod_k bases[k][i]^scalars[k][j], i.e. g^(Z^T M) from
    encodings g^Z.  Zero scalars and identity bases are skipped; each base
    gets a comb table when it is reused often with wide scalars."""
    n = len(bases)
    cols = len(scalars[0])
    ident = identity_like(bases[0][0])
    nz_rows = []
    narrow = True
    for k in range(len(scalars)):
        row = [(j, x % ORDER) for j, x in enumerate(scalars[k]) if x % ORDER]
        if row:
            nz_rows.append((k, row))
            narrow = narrow and all(abs(signed(x)) < 1 << 32 for _, x in row)
    if narrow:
        return _exp_matmul_narrow(bases, nz_rows, n, cols, ident)
    out = [[None] * cols for _ in range(n)]
    for k, row in nz_rows:
        wide = sum(1 for _, x in row if min(x, ORDER - x).bit_length() > 64)
        for i in range(n):
            b = bases[k][i]
            if b == ident:
                continue
            if wide > 24:
                f = FixedBase(b, window=6).mul
            else:
                f = lambda x, b=b: mul(b, x)
            orow = out[i]
            for j, x in row:
                t = f(x)
                orow[j] = t if orow[j] is None else orow[j] + t
    for i in range(n):
        orow = out[i]
        for j in range(cols):
            if orow[j] is None:
                orow[j] = ident
    return out


def _exp_matmul_narrow(bases, nz_rows, n, cols, ident):
    # Straus-style: split each |scalar| into 4-bit digits, share one 15-entry
    # multiple table per base across digit positions, accumulate per digit
    # position and recombine with 4 doublings per position at the end.
    nwin = 1
    rows = []
    for k, row in nz_rows:
        ent = []
        for j, x in row:
            sx = signed(x)
            neg = sx < 0
            v = -sx if neg else sx
            digs = []
            w = 0
            while v:
                if v & 15:
                    digs.append((w, v & 15))
                v >>= 4
                w += 1
            nwin = max(nwin, w)
            ent.append((j, neg, digs))
        rows.append((k, ent))
    acc = [[[None] * cols for _ in range(2 * nwin)] for _ in range(n)]
    for k, ent in rows:
        need = max(d for _, _, digs in ent for _, d in digs)
        for i in range(n):
            b = bases[k][i]
            if b == ident:
                continue
            tab = [None, b]
            for _ in range(need - 1):
                tab.append(tab[-1] + b)
            ai = acc[i]
            for j, neg, digs in ent:
                off = nwin if neg else 0
                for w, d in digs:
                    slot = ai[off + w]
                    cur = slot[j]
                    slot[j] = tab[d] if cur is None else cur + tab[d]
    out = []
    for i in range(n):
        ai = acc[i]
        orow = []
        for j in range(cols):
            r = None
            for w in range(nwin - 1, -1, -1):
                if r is not None:
                    r = r + r
                    r = r + r
                    r = r + r
                    r = r + r
                p, q = ai[w][j], ai[nwin + w][j]
                t = p if q is None else (-q if p is None else p - q)
                if t is not None:
                    r = t if r is None else r + t
            orow.append(ident if r is None else r)
        out.append(orow)
    return out


def gm_mul(a: GroupMatrix, b: GroupMatrix) -> GroupMatrix:
    """Entrywise group product (exponent addition)."""
    return [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def gm_add_diag(a: GroupMatrix, d: Point) -> GroupMatrix:
    out = [list(r) for r in a]
    for i in range(len(out)):
        out[i][i] = out[i][i] + d
    return out


def gm_pow(a: GroupMatrix, x: int) -> GroupMatrix:
    ident = identity_like(a[0][0])
    return [[ident if p == ident else mul(p, x) for p in row] for row in a]


# -- pairings and GT --------------------------------------------------------

_R = pow(2, 384, BASE_FIELD)
_RINV = pow(_R, -1, BASE_FIELD)


class Gt:
    """Element of GT, written multiplicatively."""

    __slots__ = ("_e",)

    def __init__(self, e: blspy.GTElement):
        self._e = e

    @staticmethod
    def one() -> "Gt":
        return _GT_ONE

    @staticmethod
    def from_ark(e) -> "Gt":
        raw = bytes.fromhex(str(e))
        out = bytearray()
        for i in range(12):
            c = int.from_bytes(raw[48 * i: 48 * i + 48], "little") * _R % BASE_FIELD
            out += c.to_bytes(48, "little")
        return Gt(blspy.GTElement.from_bytes(bytes(out)))

    def to_bytes(self) -> bytes:
        raw = bytes(self._e)
        out = bytearray()
        for i in range(12):
            c = int.from_bytes(raw[48 * i: 48 * i + 48], "little") * _RINV % BASE_FIELD
            out += c.to_bytes(48, "little")
        return bytes(out)

    @staticmethod
    def from_bytes(b: bytes) -> "Gt":
        if len(b) != GT_BYTES:
            raise ArgumentError("bad GT length")
        out = bytearray()
        for i in range(12):
            c = int.from_bytes(b[48 * i: 48 * i + 48], "little")
            if c >= BASE_FIELD:
                raise ArgumentError("non-canonical GT coefficient")
            out += (c * _R % BASE_FIELD).to_bytes(48, "little")
        return Gt(blspy.GTElement.from_bytes(bytes(out)))

    def __mul__(self, other: "Gt") -> "Gt":
        return Gt(self._e * other._e)

    def __pow__(self, x: int) -> "Gt":
        x %= ORDER
        acc = None
        base = self._e
        for bit in bin(x)[2:]:
            if acc is not None:
                acc = acc * acc
            if bit == "1":
                acc = base if acc is None else acc * base
        return Gt(acc) if acc is not None else _GT_ONE

    def inverse(self) -> "Gt":
        return self ** (ORDER - 1)

    def __truediv__(self, other: "Gt") -> "Gt":
        return self * other.inverse()

    def __eq__(self, other) -> bool:
        return isinstance(other, Gt) and self._e == other._e

    def __hash__(self) -> int:
        return hash(bytes(self._e))

    def __repr__(self) -> str:
        return "Gt(%s...)" % self.to_bytes()[:8].hex()


_GT_ONE = Gt.from_ark(_ArkGT.one())


def _clean(ps: Sequence[G1Point], qs: Sequence[G2Point]):
    a, b = [], []
    for p, q in zip(ps, qs):
        if p == G1_ID or q == G2_ID:
            continue
        a.append(p)
        b.append(q)
    return a, b


def pairing(p: G1Point, q: G2Point) -> Gt:
    COUNTERS["pairings"] += 1
    if p == G1_ID or q == G2_ID:
        return _GT_ONE
    return Gt.from_ark(_ArkGT.pairing(p, q))


def multi_pairing(ps: Sequence[G1Point], qs: Sequence[G2Point]) -> Gt:
    if len(ps) != len(qs):
        raise ArgumentError("pairing length mismatch")
    COUNTERS["pairings"] += len(ps)
    a, b = _clean(ps, qs)
    if not a:
        return _GT_ONE
    return Gt.from_ark(_ArkGT.multi_pairing(a, b))


def pairing_product_is_one(ps: Sequence[G1Point], qs: Sequence[G2Point]) -> bool:
    """Cheaper than multi_pairing(...) == Gt.one(): no GT conversion."""
    if len(ps) != len(qs):
        raise ArgumentError("pairing length mismatch")
    COUNTERS["pairings"] += len(ps)
    a, b = _clean(ps, qs)
    if not a:
        return True
    return _ArkGT.multi_pairing(a, b) == _ArkGT.one()


def pair_trace(a: GroupMatrix, b: GroupMatrix) -> Gt:
    """prod_{i,k} e(a[i][k], b[k][i]): the trace of the matrix product in the
    exponent, using only the L^2 pairs that feed the diagonal."""
    n = dim(a)
    if dim(b) != n:
        raise ArgumentError("pair_trace dimension mismatch")
    ps = [a[i][k] for i in range(n) for k in range(n)]
    qs = [b[k][i] for i in range(n) for k in range(n)]
    return multi_pairing(ps, qs)


def gt_generator() -> Gt:
    return pairing(G1, G2)


# -- encoding ---------------------------------------------------------------


def point_bytes(p: Point) -> bytes:
    return bytes(p.to_compressed_bytes())


def g1_from_bytes(b: bytes) -> G1Point:
    if len(b) != G1_BYTES:
        raise ArgumentError("bad G1 length")
    try:
        return G1Point.from_compressed_bytes(b)
    except Exception as exc:  # arkworks raises bare exceptions
        raise ArgumentError("invalid G1 encoding") from exc


def g2_from_bytes(b: bytes) -> G2Point:
    if len(b) != G2_BYTES:
        raise ArgumentError("bad G2 length")
    try:
        return G2Point.from_compressed_bytes(b)
    except Exception as exc:
        raise ArgumentError("invalid G2 encoding") from exc


class PointDecoder:
    """Decoder with a bytes-keyed memo; proofs repeat many identical points."""

    def __init__(self):
        self.memo: dict = {}

    def g1(self, b: bytes) -> G1Point:
        p = self.memo.get(b)
        if p is None:
            p = self.memo[b] = g1_from_bytes(b)
        return p

    def g2(self, b: bytes) -> G2Point:
        p = self.memo.get(b)
        if p is None:
            p = self.memo[b] = g2_from_bytes(b)
        return p


def matrix_bytes(m: GroupMatrix) -> bytes:
    return b"".join(point_bytes(p) for row in m for p in row)


# -- Fiat-Shamir ------------------------------------------------------------


class Transcript:
    """Absorb-then-squeeze transcript over SHAKE-256.

    Every message is length-prefixed and tagged, and each challenge is fed
    back into the state, so the derivation is deterministic in
    (label, absorbed) and separated across labels.
    """

    def __init__(self, label: bytes):
        self.label = bytes(label)
        self.absorbed: list[bytes] = []
        self._h = hashlib.shake_256()
        self._frame(b"init", self.label)

    def _frame(self, tag: bytes, data: bytes) -> None:
        self._h.update(len(tag).to_bytes(2, "little") + tag)
        self._h.update(len(data).to_bytes(8, "little") + data)

    def absorb(self, tag: bytes, data: bytes) -> None:
        self.absorbed.append(bytes(tag) + b":" + bytes(data))
        self._frame(tag, bytes(data))

    def absorb_scalar(self, tag: bytes, x: int) -> None:
        self.absorb(tag, scalar_to_bytes(x))

    def absorb_point(self, tag: bytes, p: Point) -> None:
        self.absorb(tag, point_bytes(p))

    def absorb_points(self, tag: bytes, ps: Iterable[Point]) -> None:
        self.absorb(tag, b"".join(point_bytes(p) for p in ps))

    def absorb_gt(self, tag: bytes, e: Gt) -> None:
        self.absorb(tag, e.to_bytes())

    def challenge(self, label: bytes) -> int:
        h = self._h.copy()
        h.update(b"challenge" + len(label).to_bytes(2, "little") + bytes(label))
        x = int.from_bytes(h.digest(64), "little") % ORDER
        self._frame(b"chal:" + bytes(label), scalar_to_bytes(x))
        return x

    def challenges(self, label: bytes, n: int) -> list[int]:
        return [self.challenge(bytes(label) + b"/%d" % i) for i in range(n)]

    def clone(self) -> "Transcript":
        t = Transcript.__new__(Transcript)
        t.label = self.label
        t.absorbed = list(self.absorbed)
        t._h = self._h.copy()
        return t


def challenge(t: Transcript, label: bytes) -> int:
    return t.challenge(label)


def digest(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(len(p).to_bytes(8, "little"))
        h.update(p)
    return h.digest()
