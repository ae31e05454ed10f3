"""Dual-group bivariate polynomial commitments and the same-point evaluation
proof.

A commitment to L(x, y) = sum l_ij x^i y^j is C1 = h^r * prod g_ij^l_ij with
g_ij = g^(s^i t^j), together with its alpha-shifted twin C2 = C1^alpha that a
pairing against g* / g*^alpha can check.  The evaluation proof shows that a
bundle of committed polynomials and a bundle of committed slot vectors are
related by y-slotwise evaluation at one Fiat-Shamir point k, via the quotient
T = (L1(x,y) - L1(k,y)) / (x - k) and a two-response sigma protocol.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

from . import algebra as A
from .algebra import ORDER, G1Point, G2Point
from .ringpoly import BivariatePoly

MAGIC_KEY = b"QZCK"
MAGIC_EVAL = b"QZEV"
VERSION = 1


@dataclass
class CommitKeyS1:
    d_c: int
    n_c: int
    g: G1Point
    h: G1Point
    g_star: G2Point
    g_hat: G1Point
    h_hat: G1Point
    g_star_hat: G2Point
    g_star_1: G2Point
    h_1: G1Point
    bases: list  # g_{i,j} at index i * n_c + j
    bases_hat: list
    _digest: bytes = field(default=b"", repr=False)

    def basis(self, i: int, j: int) -> tuple:
        if i > self.d_c or j >= self.n_c:
            raise CommitError("index (%d, %d) exceeds key capacity (%d, %d)" % (i, j, self.d_c, self.n_c))
        n = i * self.n_c + j
        return self.bases[n], self.bases_hat[n]

    def to_bytes(self) -> bytes:
        pb = A.point_bytes
        out = [MAGIC_KEY, struct.pack("<HII", VERSION, self.d_c, self.n_c)]
        for p in (self.g, self.h, self.g_star, self.g_hat, self.h_hat, self.g_star_hat, self.g_star_1, self.h_1):
            out.append(pb(p))
        out += [pb(p) for p in self.bases]
        out += [pb(p) for p in self.bases_hat]
        return b"".join(out)

    @staticmethod
    def from_bytes(b: bytes) -> "CommitKeyS1":
        if b[:4] != MAGIC_KEY:
            raise A.ArgumentError("not a commitment key")
        ver, d_c, n_c = struct.unpack_from("<HII", b, 4)
        if ver != VERSION:
            raise A.ArgumentError("unsupported key version")
        off = 14
        dec = A.PointDecoder()

        def take(n):
            nonlocal off
            s = b[off: off + n]
            if len(s) != n:
                raise A.ArgumentError("truncated key")
            off += n
            return s

        g, h = dec.g1(take(48)), dec.g1(take(48))
        gs = dec.g2(take(96))
        gh, hh = dec.g1(take(48)), dec.g1(take(48))
        gsh, gs1 = dec.g2(take(96)), dec.g2(take(96))
        h1 = dec.g1(take(48))
        m = (d_c + 1) * n_c
        bases = [dec.g1(take(48)) for _ in range(m)]
        hats = [dec.g1(take(48)) for _ in range(m)]
        if off != len(b):
            raise A.ArgumentError("trailing bytes in key")
        return CommitKeyS1(d_c, n_c, g, h, gs, gh, hh, gsh, gs1, h1, bases, hats)

    @property
    def digest(self) -> bytes:
        if not self._digest:
            self._digest = A.digest(self.to_bytes())
        return self._digest


@dataclass(frozen=True)
class DualCommitment:
    C1: G1Point
    C2: G1Point

    def to_bytes(self) -> bytes:
        return A.point_bytes(self.C1) + A.point_bytes(self.C2)

    def __mul__(self, other: "DualCommitment") -> "DualCommitment":
        return DualCommitment(self.C1 + other.C1, self.C2 + other.C2)


@dataclass(frozen=True)
class EvalProof:
    C_T: DualCommitment
    e: int
    sigma: int
    tau: int

    def to_bytes(self) -> bytes:
        fields = [A.point_bytes(self.C_T.C1), A.point_bytes(self.C_T.C2),
                  A.scalar_to_bytes(self.e), A.scalar_to_bytes(self.sigma), A.scalar_to_bytes(self.tau)]
        out = [MAGIC_EVAL, struct.pack("<H", VERSION)]
        for f in fields:
            out.append(struct.pack("<I", len(f)) + f)
        return b"".join(out)

    @staticmethod
    def from_bytes(b: bytes) -> "EvalProof":
        if b[:4] != MAGIC_EVAL or struct.unpack_from("<H", b, 4)[0] != VERSION:
            raise A.ArgumentError("not an evaluation proof")
        off, parts = 6, []
        for _ in range(5):
            (n,) = struct.unpack_from("<I", b, off)
            parts.append(b[off + 4: off + 4 + n])
            off += 4 + n
        if off != len(b):
            raise A.ArgumentError("trailing bytes")
        c = DualCommitment(A.g1_from_bytes(parts[0]), A.g1_from_bytes(parts[1]))
        return EvalProof(c, *(A.scalar_from_bytes(p) for p in parts[2:]))


class CommitError(ValueError):
    pass


def s1_setup(d_c: int, n_c: int, rng=None) -> CommitKeyS1:
    """Key for polynomials of x-degree <= d_c over n_c slots.  The trapdoor
    (alpha, s, t, log_g h) lives only in this frame."""
    if d_c < 0 or n_c < 1:
        raise CommitError("need d_c >= 0 and n_c >= 1")
    alpha, s, t = A.rand_nonzero(rng), A.rand_nonzero(rng), A.rand_nonzero(rng)
    xh, xs = A.rand_nonzero(rng), A.rand_nonzero(rng)
    g = A.G1
    h = A.g1_exp(xh)
    g_star = A.g2_exp(xs)
    exps = []
    si = 1
    for _ in range(d_c + 1):
        tj = 1
        for _ in range(n_c):
            exps.append(si * tj % ORDER)
            tj = tj * t % ORDER
        si = si * s % ORDER
    bases = [A.g1_exp(x) for x in exps]
    hats = [A.g1_exp(x * alpha) for x in exps]
    return CommitKeyS1(
        d_c, n_c, g, h, g_star,
        A.g1_exp(alpha), A.g1_exp(xh * alpha), A.g2_exp(xs * alpha),
        A.g2_exp(xs * s), A.g1_exp(xh * s), bases, hats)


def commit(poly: BivariatePoly, ck: CommitKeyS1, rand: int) -> DualCommitment:
    if poly.slots > ck.n_c or poly.deg_x > ck.d_c:
        raise CommitError("polynomial (deg %d, %d slots) exceeds key (%d, %d)"
                          % (poly.deg_x, poly.slots, ck.d_c, ck.n_c))
    b1, b2, xs = [ck.h], [ck.h_hat], [rand]
    n_c = ck.n_c
    for i, j, v in poly.terms():
        n = i * n_c + j
        b1.append(ck.bases[n])
        b2.append(ck.bases_hat[n])
        xs.append(v)
    return DualCommitment(A.msm(b1, xs), A.msm(b2, xs))


def dual_ok(ck: CommitKeyS1, c: DualCommitment) -> bool:
    return A.pairing_product_is_one([c.C1, -c.C2], [ck.g_star_hat, ck.g_star])


def key_consistent(ck: CommitKeyS1, sample: Sequence[int] | None = None) -> bool:
    idx = range(len(ck.bases)) if sample is None else sample
    return all(A.pairing_product_is_one([ck.bases[n], -ck.bases_hat[n]], [ck.g_star_hat, ck.g_star]) for n in idx)


def quotient(poly: BivariatePoly, k: int) -> BivariatePoly:
    """(L(x,y) - L(k,y)) / (x - k), slotwise synthetic division."""
    out = []
    for c in poly.coeffs:
        n = len(c)
        if n <= 1:
            out.append(())
            continue
        q = [0] * (n - 1)
        acc = 0
        for i in range(n - 1, 0, -1):
            acc = (acc * k + c[i]) % ORDER
            q[i - 1] = acc
        out.append(tuple(q))
    return BivariatePoly(tuple(out), poly.rows, poly.cols)


def poly_lincomb(polys: Sequence[BivariatePoly], weights: Sequence[int]) -> BivariatePoly:
    slots = max(p.slots for p in polys)
    acc = [dict() for _ in range(slots)]
    for p, w in zip(polys, weights):
        for i, j, v in p.terms():
            acc[j][i] = (acc[j].get(i, 0) + w * v) % ORDER
    coeffs = []
    for d in acc:
        if not d:
            coeffs.append(())
            continue
        n = max(d) + 1
        coeffs.append(tuple(d.get(i, 0) for i in range(n)))
    return BivariatePoly(tuple(coeffs), 1, slots)


def vector_poly(v: Sequence[int]) -> BivariatePoly:
    """Slot vector as a polynomial constant in x."""
    return BivariatePoly(tuple(((x % ORDER,) if x % ORDER else ()) for x in v), 1, len(v))


def dual_lincomb(cs: Sequence[DualCommitment], weights: Sequence[int]) -> DualCommitment:
    return DualCommitment(A.msm([c.C1 for c in cs], weights), A.msm([c.C2 for c in cs], weights))


@dataclass
class EvalStatement:
    """Everything the verifier sees: commitments to the polynomials, to their
    evaluations at k, the point itself and the proof."""

    commitments: list
    eval_commitments: list
    k: int
    proof: EvalProof
    combine: str = "sum"


@dataclass
class EvalOpening:
    """Prover-side secrets the links need later."""

    evaluations: list
    rands: list
    eval_rands: list


def _transcript(ck: CommitKeyS1, comms: Sequence[DualCommitment], statement: bytes) -> A.Transcript:
    t = A.Transcript(b"mpoly-eval")
    t.absorb(b"ck", ck.digest)
    t.absorb(b"stmt", statement)
    for c in comms:
        t.absorb(b"com", c.to_bytes())
    return t


def _weights(t: A.Transcript, n: int, combine: str) -> list:
    if combine == "sum":
        return [1] * n
    if combine == "rlc":
        rho = t.challenge(b"rho")
        return [pow(rho, i, ORDER) for i in range(n)]
    raise CommitError("unknown combine mode %r" % combine)


def prove_eval(ck: CommitKeyS1, polys: Sequence[BivariatePoly], rands: Sequence[int],
               statement: bytes = b"", combine: str = "sum", rng=None, check: bool = True):
    """Commit to ``polys`` with ``rands``, derive k, commit to each L_i(k, y)
    and prove the evaluations consistent.  ``combine='sum'`` aggregates
    L1 = sum L_i; ``'rlc'`` weights the components by powers of a challenge."""
    comms = [commit(p, ck, r) for p, r in zip(polys, rands)]
    t = _transcript(ck, comms, statement)
    k = t.challenge(b"k")
    evals = [p.eval_x(k) for p in polys]
    eval_rands = [A.rand_scalar(rng) for _ in polys]
    eval_comms = [commit(vector_poly(v), ck, r) for v, r in zip(evals, eval_rands)]
    for c in eval_comms:
        t.absorb(b"evalcom", c.to_bytes())
    w = _weights(t, len(polys), combine)
    L1 = poly_lincomb(polys, w)
    r_L = sum(a * b for a, b in zip(w, rands)) % ORDER
    r_Lk = sum(a * b for a, b in zip(w, eval_rands)) % ORDER
    C_L1 = dual_lincomb(comms, w)
    C_L1k = dual_lincomb(eval_comms, w)
    T = quotient(L1, k)
    if check:
        _check_quotient(L1, T, k)
    r_T = A.rand_scalar(rng)
    C_T = commit(T, ck, r_T)
    a, b = A.rand_scalar(rng), A.rand_scalar(rng)
    g_bar = ck.h_1 - A.mul(ck.h, k)
    U = A.pairing(A.mul(ck.h, a) + A.mul(g_bar, b), ck.g_star)
    e = _final_challenge(t, C_L1, C_L1k, C_T, U, k)
    sigma = (a - (r_Lk - r_L) * e) % ORDER
    tau = (b - r_T * e) % ORDER
    stmt = EvalStatement(comms, eval_comms, k, EvalProof(C_T, e, sigma, tau), combine)
    return stmt, EvalOpening(evals, list(rands), eval_rands)


def _final_challenge(t, C_L1, C_L1k, C_T, U, k) -> int:
    t = t.clone()
    t.absorb(b"CL1", C_L1.to_bytes())
    t.absorb(b"CL1k", C_L1k.to_bytes())
    t.absorb(b"CT", C_T.to_bytes())
    t.absorb_gt(b"U", U)
    t.absorb_scalar(b"k", k)
    return t.challenge(b"e")


def _check_quotient(L1: BivariatePoly, T: BivariatePoly, k: int) -> None:
    lk = L1.eval_x(k)
    for j, (c, q) in enumerate(zip(L1.coeffs, T.coeffs)):
        # (x - k) * q + L1(k) == c, coefficientwise
        n = max(len(c), len(q) + 1, 1)
        rebuilt = [0] * n
        for i, v in enumerate(q):
            rebuilt[i + 1] += v
            rebuilt[i] -= k * v
        rebuilt[0] += lk[j]
        cc = list(c) + [0] * (n - len(c))
        if any((x - y) % ORDER for x, y in zip(rebuilt, cc)):
            raise CommitError("quotient identity failed in slot %d" % j)


def verify_eval(ck: CommitKeyS1, st: EvalStatement, statement: bytes = b"") -> bool:
    try:
        return _verify(ck, st, statement)
    except (A.ArgumentError, CommitError, ValueError, TypeError, ZeroDivisionError):
        return False


def _verify(ck: CommitKeyS1, st: EvalStatement, statement: bytes) -> bool:
    n = len(st.commitments)
    if n == 0 or len(st.eval_commitments) != n:
        return False
    t = _transcript(ck, st.commitments, statement)
    if t.challenge(b"k") != st.k % ORDER:
        return False
    for c in st.eval_commitments:
        t.absorb(b"evalcom", c.to_bytes())
    w = _weights(t, n, st.combine)
    C_L1 = dual_lincomb(st.commitments, w)
    C_L1k = dual_lincomb(st.eval_commitments, w)
    pf = st.proof
    k = st.k
    b1 = dual_ok(ck, C_L1)
    b2 = all(dual_ok(ck, c) for c in st.commitments)
    b3 = all(dual_ok(ck, c) for c in st.eval_commitments)
    b4 = dual_ok(ck, pf.C_T)
    if not (b1 and b2 and b3 and b4):
        return False
    g_bar = ck.h_1 - A.mul(ck.h, k)
    # U = e(h^sigma g_bar^tau, g*) * H^e with
    # H = e(C_T, g*_1 / g*^k) * e(C_L1 / C_L1k, g*)^-1, folded into two pairings
    left = A.mul(ck.h, pf.sigma) + A.mul(g_bar, pf.tau) + A.mul(C_L1k.C1 - C_L1.C1, pf.e)
    U = A.multi_pairing([left, A.mul(pf.C_T.C1, pf.e)], [ck.g_star, ck.g_star_1 - A.mul(ck.g_star, k)])
    return pf.e % ORDER == _final_challenge(t, C_L1, C_L1k, pf.C_T, U, k)
