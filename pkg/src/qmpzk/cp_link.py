"""Proofs that several commitments, made under different keys, open to one
shared witness vector.

An instance is a list of rows.  Row i claims C_i = prod_j ck[i][j]^{wt[j]}.
Rows are stored factored: a short list of base points plus sparse terms
(column, base index, coefficient), so ck[i][j] = prod_t B_t^{c_{j,t}}.  This
keeps rows such as random projections of a whole commitment matrix cheap:
the matrix of explicit bases is never materialised.

The argument is a multi-base Schnorr protocol made non-interactive with a
transcript: R_i = ck_i . rho, e = H(instance, R), z = rho - e wt, and the
verifier checks ck_i . z + e C_i == R_i for every row (batched with random
weights into one multi-exponentiation).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Sequence

from . import algebra as A
from .algebra import ORDER, G1Point

MAGIC = b"QZLK"
VERSION = 1


class LinkError(A.ArgumentError):
    pass


@dataclass
class LinkRow:
    C: G1Point
    bases: list
    terms: list  # (column, base index, coefficient)
    name: str = ""

    def scalars(self, x: Sequence[int]) -> list:
        """Exponent of each base after plugging the column vector x."""
        out = [0] * len(self.bases)
        for j, t, c in self.terms:
            out[t] += c * x[j]
        return [v % ORDER for v in out]

    def apply(self, x: Sequence[int]) -> G1Point:
        if not self.bases:
            return A.G1_ID
        return A.msm(self.bases, self.scalars(x))

    def dense(self, n_cols: int) -> list:
        """Explicit basis row ck[i][0..n_cols) (small instances only)."""
        out = [A.G1_ID] * n_cols
        for j, t, c in self.terms:
            out[j] = out[j] + A.mul(self.bases[t], c)
        return out


@dataclass
class LinkInstance:
    n_cols: int
    rows: list
    label: bytes = b""
    _digest: bytes = field(default=b"", repr=False)

    @property
    def C(self) -> list:
        return [r.C for r in self.rows]

    def matrix(self) -> list:
        return [r.dense(self.n_cols) for r in self.rows]

    def satisfied_by(self, wt: Sequence[int]) -> bool:
        if len(wt) != self.n_cols:
            return False
        return all(r.apply(wt) == r.C for r in self.rows)

    @property
    def digest(self) -> bytes:
        if not self._digest:
            parts = [self.label, struct.pack("<II", self.n_cols, len(self.rows))]
            for r in self.rows:
                parts.append(A.point_bytes(r.C))
                parts.append(struct.pack("<I", len(r.bases)))
                parts += [A.point_bytes(b) for b in r.bases]
                parts.append(struct.pack("<I", len(r.terms)))
                parts += [struct.pack("<II", j, t) + A.scalar_to_bytes(c) for j, t, c in r.terms]
            self._digest = A.digest(*parts)
        return self._digest


class LinkBuilder:
    """Allocates witness columns and collects rows."""

    def __init__(self, label: bytes = b""):
        self.label = label
        self.n_cols = 0
        self.rows: list = []
        self.names: dict = {}

    def columns(self, n: int, name: str = "") -> list:
        cols = list(range(self.n_cols, self.n_cols + n))
        self.n_cols += n
        if name:
            self.names[name] = cols
        return cols

    def column(self, name: str = "") -> int:
        return self.columns(1, name)[0]

    def row(self, C: G1Point, bases: list, terms: list, name: str = "") -> None:
        for j, t, _ in terms:
            if not (0 <= j < self.n_cols and 0 <= t < len(bases)):
                raise LinkError("row term out of range")
        self.rows.append(LinkRow(C, list(bases), [(j, t, c % ORDER) for j, t, c in terms], name))

    def pedersen_row(self, C: G1Point, value_bases: list, value_cols: list,
                     rand_base: G1Point, rand_col: int, name: str = "") -> None:
        """C = prod value_bases[i]^{wt[value_cols[i]]} * rand_base^{wt[rand_col]}."""
        if len(value_bases) != len(value_cols):
            raise LinkError("dimension mismatch")
        bases = list(value_bases) + [rand_base]
        terms = [(j, i, 1) for i, j in enumerate(value_cols) if j is not None]
        terms.append((rand_col, len(value_bases), 1))
        self.row(C, bases, terms, name)

    def build(self) -> LinkInstance:
        if not self.rows:
            raise LinkError("empty link instance")
        return LinkInstance(self.n_cols, self.rows, self.label)


@dataclass
class PedersenSpec:
    """A vector commitment C = prod bases[i]^{m_i} * rand_base^r."""

    C: G1Point
    bases: list
    rand_base: G1Point


def link_build_instance(a: PedersenSpec, b: PedersenSpec, layout: Sequence[int] | None = None,
                        label: bytes = b"link") -> LinkInstance:
    """Two commitments to the same values.  Columns are (r_a, r_b, values);
    layout[i] names the value behind b's i-th base (identity by default)."""
    if layout is None:
        if len(a.bases) != len(b.bases):
            raise LinkError("dimension mismatch")
        layout = list(range(len(b.bases)))
    if len(layout) != len(b.bases) or any(not 0 <= i < len(a.bases) for i in layout):
        raise LinkError("layout does not fit the commitments")
    lb = LinkBuilder(label)
    ra, rb = lb.column("r_a"), lb.column("r_b")
    vals = lb.columns(len(a.bases), "values")
    lb.pedersen_row(a.C, a.bases, vals, a.rand_base, ra, "a")
    lb.pedersen_row(b.C, b.bases, [vals[i] for i in layout], b.rand_base, rb, "b")
    return lb.build()


@dataclass
class LinkProof:
    R: list
    e: int
    z: list

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<HI", VERSION, len(self.R))]
        out += [A.point_bytes(r) for r in self.R]
        out.append(A.scalar_to_bytes(self.e))
        out.append(struct.pack("<I", len(self.z)))
        out += [A.scalar_to_bytes(x) for x in self.z]
        return b"".join(out)

    @staticmethod
    def from_bytes(b: bytes, decoder: A.PointDecoder | None = None) -> "LinkProof":
        dec = decoder or A.PointDecoder()
        if b[:4] != MAGIC:
            raise A.ArgumentError("not a link proof")
        ver, n = struct.unpack_from("<HI", b, 4)
        if ver != VERSION:
            raise A.ArgumentError("unsupported link proof version")
        off = 10
        need = off + n * A.G1_BYTES + A.SCALAR_BYTES + 4
        if len(b) < need:
            raise A.ArgumentError("truncated link proof")
        R = [dec.g1(b[off + i * 48: off + (i + 1) * 48]) for i in range(n)]
        off += n * A.G1_BYTES
        e = A.scalar_from_bytes(b[off: off + 32])
        off += 32
        (m,) = struct.unpack_from("<I", b, off)
        off += 4
        if len(b) != off + 32 * m:
            raise A.ArgumentError("link proof length mismatch")
        z = [A.scalar_from_bytes(b[off + 32 * i: off + 32 * (i + 1)]) for i in range(m)]
        return LinkProof(R, e, z)


def _challenge(inst: LinkInstance, R: Sequence[G1Point]) -> int:
    t = A.Transcript(b"cp-link")
    t.absorb(b"instance", inst.digest)
    t.absorb_points(b"R", R)
    return t.challenge(b"e")


def link_prove(inst: LinkInstance, wt: Sequence[int], rng=None, check: bool = True) -> LinkProof:
    wt = [x % ORDER for x in wt]
    if len(wt) != inst.n_cols:
        raise LinkError("witness length does not match the instance")
    if check:
        for r in inst.rows:
            if r.apply(wt) != r.C:
                raise LinkError(f"witness does not open row {r.name or '?'}")
    rho = [A.rand_scalar(rng) for _ in range(inst.n_cols)]
    R = [r.apply(rho) for r in inst.rows]
    e = _challenge(inst, R)
    z = [(p - e * w) % ORDER for p, w in zip(rho, wt)]
    return LinkProof(R, e, z)


def _check(inst: LinkInstance, pf: LinkProof, e: int) -> bool:
    if len(pf.R) != len(inst.rows) or len(pf.z) != inst.n_cols:
        return False
    if not all(isinstance(r, G1Point) for r in pf.R):
        return False
    t = A.Transcript(b"cp-link-batch")
    t.absorb(b"instance", inst.digest)
    t.absorb_points(b"R", pf.R)
    t.absorb_scalar(b"e", e)
    for x in pf.z:
        t.absorb_scalar(b"z", x)
    lam = t.challenges(b"lambda", len(inst.rows))
    bases, scalars = [], []
    for li, row, R in zip(lam, inst.rows, pf.R):
        for b, s in zip(row.bases, row.scalars(pf.z)):
            bases.append(b)
            scalars.append(li * s)
        bases += [row.C, R]
        scalars += [li * e, -li]
    return A.msm(bases, scalars) == A.G1_ID


def link_verify(inst: LinkInstance, pf: LinkProof) -> bool:
    try:
        if pf.e % ORDER != _challenge(inst, pf.R):
            return False
        return _check(inst, pf, pf.e)
    except (A.ArgumentError, ValueError, TypeError):
        return False


# -- test-facing helpers ------------------------------------------------------

def verify_with_challenge(inst: LinkInstance, pf: LinkProof) -> bool:
    """The interactive check for the proof's own e (no transcript recomputation)."""
    try:
        return _check(inst, pf, pf.e)
    except (A.ArgumentError, ValueError, TypeError):
        return False


def link_simulate(inst: LinkInstance, e: int, rng=None) -> LinkProof:
    """Reverse-sampled transcript for a chosen challenge: z uniform, then
    R = ck . z + e C.  Needs no witness."""
    z = [A.rand_scalar(rng) for _ in range(inst.n_cols)]
    R = [row.apply(z) + A.mul(row.C, e) for row in inst.rows]
    return LinkProof(R, e % ORDER, z)


def respond(inst: LinkInstance, wt: Sequence[int], rho: Sequence[int], e: int) -> LinkProof:
    """Prover response for fixed randomness and challenge (rewinding tests)."""
    R = [r.apply(rho) for r in inst.rows]
    return LinkProof(R, e % ORDER, [(p - e * w) % ORDER for p, w in zip(rho, wt)])


def extract(p1: LinkProof, p2: LinkProof) -> list:
    """Special soundness: two accepting transcripts with the same R and
    different challenges give wt = (z1 - z2) / (e2 - e1)."""
    if p1.R != p2.R or p1.e == p2.e:
        raise LinkError("need two transcripts sharing R with distinct challenges")
    d = A.inv((p2.e - p1.e) % ORDER)
    return [(a - b) * d % ORDER for a, b in zip(p1.z, p2.z)]
