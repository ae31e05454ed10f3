"""Aggregation of many CaP proofs (A_i, B_i, C_i, D_i) for one circuit.

With a challenge r bound to every statement and to pairing commitments of
the proof vectors, the n_t verification equations collapse into

    I_AB == e(g^{alpha sum r^i}, h^beta) e(sum r^i IC(io_i) + I_D, h^gamma) e(I_C, h^delta)

where I_AB = prod e(A_i, B_i)^{r^i}, I_C = sum r^i C_i, I_D = sum r^i D_i.
A logarithmic halving recursion (inner pairing product for A, B and
multi-exponentiation inner products for C, D, all folded with the same
challenges) shows these values match the committed vectors.  The verifier
folds the structured keys itself in O(n_t).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

from . import algebra as A
from .algebra import ORDER, G1Point, G2Point, Gt
from .qap_snark import CapProof, CapVk, cap_verify, public_term

MAGIC = b"QAGG"
MAGIC_KEY = b"QAGK"
VERSION = 1


class AggregateError(A.ArgumentError):
    pass


def padded(n: int) -> int:
    m = 1
    while m < n:
        m *= 2
    return m


@dataclass
class AggKey:
    """v_k[i] = h^{a_k^i}, w_k[i] = g^{a_k^{n+i}} for secrets a_1 = a, a_2 = b;
    g_a, g_b are spot-check probes g^a, g^b."""

    n: int
    v1: list
    v2: list
    w1: list
    w2: list
    g_a: G1Point
    g_b: G1Point

    @property
    def digest(self) -> bytes:
        pts = self.v1 + self.v2 + self.w1 + self.w2 + [self.g_a, self.g_b]
        return A.digest(struct.pack("<I", self.n), *[A.point_bytes(p) for p in pts])

    def to_bytes(self) -> bytes:
        pts = self.v1 + self.v2 + self.w1 + self.w2 + [self.g_a, self.g_b]
        return b"".join([MAGIC_KEY, struct.pack("<HI", VERSION, self.n)] + [A.point_bytes(p) for p in pts])

    @staticmethod
    def from_bytes(b: bytes) -> "AggKey":
        r = _Reader(b)
        if r.take(4) != MAGIC_KEY:
            raise A.ArgumentError("not an aggregation key")
        ver, n = r.unpack("<HI")
        if ver != VERSION or n < 1 or n & (n - 1):
            raise A.ArgumentError("bad aggregation key header")
        v1 = [r.g2() for _ in range(n)]
        v2 = [r.g2() for _ in range(n)]
        w1 = [r.g1() for _ in range(n)]
        w2 = [r.g1() for _ in range(n)]
        ga, gb = r.g1(), r.g1()
        r.done()
        return AggKey(n, v1, v2, w1, w2, ga, gb)


def agg_setup(n_t: int, rng=None) -> AggKey:
    if n_t < 1:
        raise AggregateError("need at least one proof slot")
    n = padded(n_t)
    keys = []
    for _ in range(2):
        a = A.rand_nonzero(rng)
        pw = [pow(a, i, ORDER) for i in range(2 * n)]
        keys.append(([A.g2_exp(x) for x in pw[:n]], [A.g1_exp(x) for x in pw[n:]], A.g1_exp(a)))
    (v1, w1, ga), (v2, w2, gb) = keys
    return AggKey(n, v1, v2, w1, w2, ga, gb)


def key_spot_check(key: AggKey, pairs: Sequence[tuple] = ()) -> bool:
    """e(g^a, v[i]) == e(g, v[i+1]) along each key, and for index pairs
    with i + j == i' + j', e(w[i], v[j]) == e(w[i'], v[j'])."""
    for v, probe in ((key.v1, key.g_a), (key.v2, key.g_b)):
        for i in range(key.n - 1):
            if not A.pairing_product_is_one([probe, -A.G1], [v[i], v[i + 1]]):
                return False
    for (i, j), (k, l) in pairs:
        if i + j != k + l:
            raise AggregateError("probe pairs must have equal index sums")
        for v, w in ((key.v1, key.w1), (key.v2, key.w2)):
            if not A.pairing_product_is_one([w[i], -w[k]], [v[j], v[l]]):
                return False
    return True


@dataclass
class Round:
    T_L: tuple  # (key 1, key 2)
    T_R: tuple
    Z_L: Gt
    Z_R: Gt
    UC_L: tuple
    UC_R: tuple
    IC_L: G1Point
    IC_R: G1Point
    UD_L: tuple
    UD_R: tuple
    ID_L: G1Point
    ID_R: G1Point

    def gts(self) -> list:
        return [*self.T_L, *self.T_R, self.Z_L, self.Z_R, *self.UC_L, *self.UC_R, *self.UD_L, *self.UD_R]

    def g1s(self) -> list:
        return [self.IC_L, self.IC_R, self.ID_L, self.ID_R]

    @staticmethod
    def from_parts(gts: list, g1s: list) -> "Round":
        t = gts
        return Round((t[0], t[1]), (t[2], t[3]), t[4], t[5], (t[6], t[7]), (t[8], t[9]),
                     g1s[0], g1s[1], (t[10], t[11]), (t[12], t[13]), g1s[2], g1s[3])


@dataclass
class AggProof:
    n_t: int
    circuit: bytes
    C_AB: tuple  # two GT values, one per key pair
    C_C: tuple
    C_D: tuple
    I_AB: Gt
    I_C: G1Point
    I_D: G1Point
    rounds: list
    A0: G1Point
    B0: G2Point
    C0: G1Point
    D0: G1Point

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<HI", VERSION, self.n_t), self.circuit]
        out += [g.to_bytes() for g in (*self.C_AB, *self.C_C, *self.C_D, self.I_AB)]
        out += [A.point_bytes(self.I_C), A.point_bytes(self.I_D)]
        out.append(struct.pack("<I", len(self.rounds)))
        for rd in self.rounds:
            out += [g.to_bytes() for g in rd.gts()]
            out += [A.point_bytes(p) for p in rd.g1s()]
        out += [A.point_bytes(p) for p in (self.A0, self.B0, self.C0, self.D0)]
        return b"".join(out)

    @staticmethod
    def from_bytes(b: bytes) -> "AggProof":
        r = _Reader(b)
        if r.take(4) != MAGIC:
            raise A.ArgumentError("not an aggregate proof")
        ver, n_t = r.unpack("<HI")
        if ver != VERSION:
            raise A.ArgumentError("unsupported aggregate version")
        circuit = r.take(32)
        g = [r.gt() for _ in range(7)]
        I_C, I_D = r.g1(), r.g1()
        (nr,) = r.unpack("<I")
        if nr > 32:
            raise A.ArgumentError("implausible round count")
        rounds = [Round.from_parts([r.gt() for _ in range(14)], [r.g1() for _ in range(4)]) for _ in range(nr)]
        A0, B0, C0, D0 = r.g1(), r.g2(), r.g1(), r.g1()
        r.done()
        return AggProof(n_t, circuit, (g[0], g[1]), (g[2], g[3]), (g[4], g[5]), g[6], I_C, I_D,
                        rounds, A0, B0, C0, D0)


class _Reader:
    def __init__(self, b: bytes):
        self.b, self.i = b, 0

    def take(self, n: int) -> bytes:
        if self.i + n > len(self.b):
            raise A.ArgumentError("truncated aggregate proof")
        out = self.b[self.i:self.i + n]
        self.i += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def gt(self):
        return Gt.from_bytes(self.take(A.GT_BYTES))

    def g1(self):
        return A.g1_from_bytes(self.take(A.G1_BYTES))

    def g2(self):
        return A.g2_from_bytes(self.take(A.G2_BYTES))

    def done(self):
        if self.i != len(self.b):
            raise A.ArgumentError("trailing bytes")


# -- shared pieces ------------------------------------------------------------

def _pair_commit(As, v, w, Bs) -> Gt:
    return A.multi_pairing(list(As) + list(w), list(v) + list(Bs))


def _msm_g1(pts, xs) -> G1Point:
    return A.msm(list(pts), list(xs)) if pts else A.G1_ID


def _transcript(key: AggKey, vk: CapVk, statements, C_AB, C_C, C_D) -> A.Transcript:
    t = A.Transcript(b"cap-aggregate")
    t.absorb(b"key", key.digest)
    t.absorb(b"circuit", vk.circuit)
    t.absorb(b"n_t", struct.pack("<I", len(statements)))
    for io in statements:
        t.absorb(b"io", struct.pack("<I", len(io)))
        for x in io:
            t.absorb_scalar(b"x", x)
    for g in (*C_AB, *C_C, *C_D):
        t.absorb_gt(b"com", g)
    return t


def _round_challenge(t: A.Transcript, rd: Round) -> int:
    for g in rd.gts():
        t.absorb_gt(b"rg", g)
    t.absorb_points(b"r1", rd.g1s())
    x = t.challenge(b"x")
    if x == 0:
        raise AggregateError("degenerate challenge")
    return x


def _commitments(key: AggKey, As, Bs, Cs, Ds):
    keys = ((key.v1, key.w1), (key.v2, key.w2))
    C_AB = tuple(_pair_commit(As, v, w, Bs) for v, w in keys)
    C_C = tuple(A.multi_pairing(list(Cs), list(v)) for v, _ in keys)
    C_D = tuple(A.multi_pairing(list(Ds), list(v)) for v, _ in keys)
    return C_AB, C_C, C_D


def _pad(proofs: Sequence[CapProof], n: int):
    As = [p.A for p in proofs] + [A.G1_ID] * (n - len(proofs))
    Bs = [p.B for p in proofs] + [A.G2_ID] * (n - len(proofs))
    Cs = [p.C for p in proofs] + [A.G1_ID] * (n - len(proofs))
    Ds = [p.D for p in proofs] + [A.G1_ID] * (n - len(proofs))
    return As, Bs, Cs, Ds


# -- prover -------------------------------------------------------------------

def agg_prove(key: AggKey, vk: CapVk, statements: Sequence[Sequence[int]], proofs: Sequence[CapProof],
              check: bool = True) -> AggProof:
    n_t = len(proofs)
    if n_t < 1 or n_t != len(statements):
        raise AggregateError("need one statement per proof")
    if padded(n_t) != key.n:
        raise AggregateError(f"key is for {key.n} slots, batch pads to {padded(n_t)}")
    if check:
        for i, (io, pf) in enumerate(zip(statements, proofs)):
            if not cap_verify(vk, io, pf):
                raise AggregateError(f"proof {i} does not verify")
    n = key.n
    As, Bs, Cs, Ds = _pad(proofs, n)
    C_AB, C_C, C_D = _commitments(key, As, Bs, Cs, Ds)
    t = _transcript(key, vk, statements, C_AB, C_C, C_D)
    r = t.challenge(b"r")
    rp = [pow(r, i, ORDER) for i in range(n)]
    rinv = A.inv(r)
    Bs = [A.mul(b, x) for b, x in zip(Bs, rp)]  # B_i^{r^i}
    ws = [[A.mul(w, pow(rinv, i, ORDER)) for i, w in enumerate(wk)] for wk in (key.w1, key.w2)]
    vs = [list(key.v1), list(key.v2)]
    I_AB = A.multi_pairing(As, Bs)
    I_C = _msm_g1(Cs, rp)
    I_D = _msm_g1(Ds, rp)
    t.absorb_gt(b"I_AB", I_AB)
    t.absorb_points(b"I", [I_C, I_D])
    rc, rd_ = list(rp), list(rp)
    rounds = []
    while len(As) > 1:
        m = len(As) // 2
        aL, aR, bL, bR = As[:m], As[m:], Bs[:m], Bs[m:]
        cL, cR, dL, dR = Cs[:m], Cs[m:], Ds[:m], Ds[m:]
        rd = Round(
            tuple(_pair_commit(aR, v[:m], w[m:], bL) for v, w in zip(vs, ws)),
            tuple(_pair_commit(aL, v[m:], w[:m], bR) for v, w in zip(vs, ws)),
            A.multi_pairing(aR, bL), A.multi_pairing(aL, bR),
            tuple(A.multi_pairing(cR, v[:m]) for v in vs),
            tuple(A.multi_pairing(cL, v[m:]) for v in vs),
            _msm_g1(cR, rc[:m]), _msm_g1(cL, rc[m:]),
            tuple(A.multi_pairing(dR, v[:m]) for v in vs),
            tuple(A.multi_pairing(dL, v[m:]) for v in vs),
            _msm_g1(dR, rd_[:m]), _msm_g1(dL, rd_[m:]),
        )
        rounds.append(rd)
        x = _round_challenge(t, rd)
        xi = A.inv(x)
        As = [l + A.mul(h, x) for l, h in zip(aL, aR)]
        Bs = [l + A.mul(h, xi) for l, h in zip(bL, bR)]
        Cs = [l + A.mul(h, x) for l, h in zip(cL, cR)]
        Ds = [l + A.mul(h, x) for l, h in zip(dL, dR)]
        vs = [[l + A.mul(h, xi) for l, h in zip(v[:m], v[m:])] for v in vs]
        ws = [[l + A.mul(h, x) for l, h in zip(w[:m], w[m:])] for w in ws]
        rc = [(l + xi * h) % ORDER for l, h in zip(rc[:m], rc[m:])]
        rd_ = [(l + xi * h) % ORDER for l, h in zip(rd_[:m], rd_[m:])]
    return AggProof(n_t, vk.circuit, C_AB, C_C, C_D, I_AB, I_C, I_D, rounds, As[0], Bs[0], Cs[0], Ds[0])


# -- verifier -----------------------------------------------------------------

def _fold_coeffs(n: int, xs: Sequence[int], left_weight_inv: bool) -> list:
    """Coefficient of each original entry in the fully folded vector, for
    the fold v' = v_L + y v_R with y = 1/x (left_weight_inv) or y = x."""
    coef = [1] * n
    size = n
    for x in xs:
        m = size // 2
        y = A.inv(x) if left_weight_inv else x
        # entries in the right half of every current block pick up y
        for i in range(n):
            if (i % size) >= m:
                coef[i] = coef[i] * y % ORDER
        size = m
    return coef


def agg_verify(vk: CapVk, key: AggKey, statements: Sequence[Sequence[int]], agg: AggProof,
               ds: Optional[Sequence[G1Point]] = None) -> bool:
    try:
        return _verify(vk, key, statements, agg, ds)
    except (A.ArgumentError, ValueError, TypeError, ZeroDivisionError):
        return False


def _verify(vk, key, statements, agg, ds) -> bool:
    n_t = len(statements)
    if n_t < 1 or agg.n_t != n_t or agg.circuit != vk.circuit or key.n != padded(n_t):
        return False
    n = key.n
    if len(agg.rounds) != n.bit_length() - 1:
        return False
    t = _transcript(key, vk, statements, agg.C_AB, agg.C_C, agg.C_D)
    r = t.challenge(b"r")
    rp = [pow(r, i, ORDER) for i in range(n)]
    t.absorb_gt(b"I_AB", agg.I_AB)
    t.absorb_points(b"I", [agg.I_C, agg.I_D])
    if ds is not None:
        if len(ds) != n_t:
            return False
        pad_d = list(ds) + [A.G1_ID] * (n - n_t)
        if tuple(A.multi_pairing(pad_d, list(v)) for v in (key.v1, key.v2)) != tuple(agg.C_D):
            return False
        if _msm_g1(pad_d, rp) != agg.I_D:
            return False
    T = list(agg.C_AB)
    Z = agg.I_AB
    UC, UD = list(agg.C_C), list(agg.C_D)
    IC, ID = agg.I_C, agg.I_D
    xs = []
    for rd in agg.rounds:
        x = _round_challenge(t, rd)
        xi = A.inv(x)
        xs.append(x)
        T = [T[k] * (rd.T_L[k] ** x) * (rd.T_R[k] ** xi) for k in range(2)]
        Z = Z * (rd.Z_L ** x) * (rd.Z_R ** xi)
        UC = [UC[k] * (rd.UC_L[k] ** x) * (rd.UC_R[k] ** xi) for k in range(2)]
        UD = [UD[k] * (rd.UD_L[k] ** x) * (rd.UD_R[k] ** xi) for k in range(2)]
        IC = IC + A.mul(rd.IC_L, x) + A.mul(rd.IC_R, xi)
        ID = ID + A.mul(rd.ID_L, x) + A.mul(rd.ID_R, xi)
    cv = _fold_coeffs(n, xs, True)
    cw = _fold_coeffs(n, xs, False)
    rinv = A.inv(r)
    cw_r = [c * pow(rinv, i, ORDER) % ORDER for i, c in enumerate(cw)]
    r_final = sum(c * x for c, x in zip(cv, rp)) % ORDER
    v_f = [A.msm(list(v), cv) for v in (key.v1, key.v2)]
    w_f = [A.msm(list(w), cw_r) for w in (key.w1, key.w2)]
    for k in range(2):
        if T[k] != A.multi_pairing([agg.A0, w_f[k]], [v_f[k], agg.B0]):
            return False
        if UC[k] != A.pairing(agg.C0, v_f[k]) or UD[k] != A.pairing(agg.D0, v_f[k]):
            return False
    if Z != A.pairing(agg.A0, agg.B0):
        return False
    if IC != A.mul(agg.C0, r_final) or ID != A.mul(agg.D0, r_final):
        return False
    # the collapsed verification equation over the n_t real statements
    rsum = sum(rp[:n_t]) % ORDER
    pub = _msm_g1([public_term(vk, io) for io in statements], rp[:n_t])
    rhs = A.multi_pairing([A.mul(vk.g_alpha, rsum), pub + agg.I_D, agg.I_C],
                          [vk.h_beta, vk.h_gamma, vk.h_delta])
    return agg.I_AB == rhs
