"""Commit-and-prove QAP SNARK and R1CS gadgets.

The proof system is Groth16 with one extra element D that commits to a
designated block of witness variables (the layer's inputs and outputs):

    e(A, B) == e(g^alpha, h^beta) * e(IC(io) * D, h^gamma) * e(C, h^delta)

where D = prod_i K_i^{w_i} * (g^{eta/gamma})^v over the committed block and
the matching -v eta/delta term sits inside C.  Variables are ordered
[1, public io, committed, free].
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import algebra as A
from .algebra import ORDER, G1Point, G2Point

MAGIC_PROOF = b"QAPP"
MAGIC_CRS = b"QAPC"
VERSION = 1

ONE, IO, COMMITTED, FREE = "one", "io", "committed", "free"
_RANK = {ONE: 0, IO: 1, COMMITTED: 2, FREE: 3}

# BLS12-381 scalar field: 2-adicity 32, 7 generates the multiplicative group
TWO_ADICITY = 32
MULT_GEN = 7


class GadgetError(A.ArgumentError):
    """Assignment outside a gadget's domain (prover refuses)."""


# -- linear combinations ------------------------------------------------------

class Lc(dict):
    """Sparse linear combination {variable: coefficient}."""

    def __add__(self, other: "Lc") -> "Lc":
        r = Lc(self)
        for k, c in other.items():
            r[k] = (r.get(k, 0) + c) % ORDER
        return r.trim()

    def __sub__(self, other: "Lc") -> "Lc":
        return self + other * -1

    def __mul__(self, c: int) -> "Lc":
        return Lc({k: v * c % ORDER for k, v in self.items()}).trim()

    def trim(self) -> "Lc":
        for k in [k for k, v in self.items() if v % ORDER == 0]:
            del self[k]
        return self


def var(i: int, c: int = 1) -> Lc:
    return Lc({i: c % ORDER}).trim()


def const(c: int) -> Lc:
    return Lc({0: c % ORDER}).trim()


def evaluate(lc, values) -> int:
    return sum(c * values[k] for k, c in lc.items()) % ORDER


# -- R1CS ---------------------------------------------------------------------

@dataclass
class R1cs:
    """Constraints as sparse rows [(var, coeff), ...] over the final variable
    order [1, io, committed, free]."""

    name: str
    n_io: int
    n_committed: int
    n_free: int
    a: list
    b: list
    c: list
    _digest: bytes = field(default=b"", repr=False)

    @property
    def num_vars(self) -> int:
        return 1 + self.n_io + self.n_committed + self.n_free

    @property
    def num_constraints(self) -> int:
        return len(self.a)

    @property
    def committed_range(self) -> range:
        lo = 1 + self.n_io
        return range(lo, lo + self.n_committed)

    @property
    def free_range(self) -> range:
        lo = 1 + self.n_io + self.n_committed
        return range(lo, self.num_vars)

    def first_failure(self, w: Sequence[int]) -> Optional[int]:
        if len(w) != self.num_vars or w[0] % ORDER != 1:
            return -1
        for q, (ra, rb, rc) in enumerate(zip(self.a, self.b, self.c)):
            x = sum(k * w[i] for i, k in ra)
            y = sum(k * w[i] for i, k in rb)
            z = sum(k * w[i] for i, k in rc)
            if (x * y - z) % ORDER:
                return q
        return None

    def is_satisfied(self, w: Sequence[int]) -> bool:
        return self.first_failure(w) is None

    def to_bytes(self) -> bytes:
        out = [b"R1CS", struct.pack("<H", len(self.name)), self.name.encode(),
               struct.pack("<IIII", self.n_io, self.n_committed, self.n_free, self.num_constraints)]
        for rows in (self.a, self.b, self.c):
            for row in rows:
                out.append(struct.pack("<I", len(row)))
                for i, k in row:
                    out.append(struct.pack("<I", i) + A.scalar_to_bytes(k))
        return b"".join(out)

    @property
    def digest(self) -> bytes:
        if not self._digest:
            self._digest = hashlib.sha256(self.to_bytes()).digest()
        return self._digest


class Circuit:
    """Constraint builder.  Each variable carries a hint computing its value
    from earlier ones; variables without hints are gadget inputs."""

    def __init__(self, name: str):
        self.name = name
        self.kinds = [ONE]
        self.hints: list = [None]
        self.constraints: list = []
        self.inputs: list = []
        self.outputs: list = []

    def new(self, kind: str, hint: Optional[Callable] = None) -> int:
        if kind not in (IO, COMMITTED, FREE):
            raise A.ArgumentError(f"bad variable kind {kind!r}")
        self.kinds.append(kind)
        self.hints.append(hint)
        return len(self.kinds) - 1

    def input(self, kind: str = COMMITTED) -> int:
        v = self.new(kind)
        self.inputs.append(v)
        return v

    def output(self, kind: str, hint: Callable) -> int:
        v = self.new(kind, hint)
        self.outputs.append(v)
        return v

    def enforce(self, a: Lc, b: Lc, c: Lc) -> None:
        self.constraints.append((a, b, c))

    def enforce_zero(self, lc: Lc) -> None:
        self.enforce(lc, const(1), Lc())

    def range_bits(self, lc: Lc, nbits: int, offset: int = 0) -> list:
        """Force lc + offset into [0, 2^nbits): nbits booleanity constraints
        plus one recomposition.  The decomposition of a field element into
        nbits bits is unique when it exists, so the hints are complete."""

        def bit_hint(j):
            def h(vals):
                x = (evaluate(lc, vals) + offset) % ORDER
                if x >> nbits:
                    raise GadgetError(f"value {A.signed(x - offset)} outside a {nbits}-bit window")
                return (x >> j) & 1
            return h

        bits = [self.new(FREE, bit_hint(j)) for j in range(nbits)]
        recomposed = Lc()
        for j, b in enumerate(bits):
            self.enforce(var(b), var(b) - const(1), Lc())
            recomposed = recomposed + var(b, 1 << j)
        self.enforce_zero(recomposed - lc - const(offset))
        return bits

    def build(self) -> "Gadget":
        if not self.constraints:
            raise A.ArgumentError("a circuit needs at least one constraint")
        used = set()
        for a, b, c in self.constraints:
            used.update(a)
            used.update(b)
            used.update(c)
        for i, k in enumerate(self.kinds):
            if k in (IO, COMMITTED) and i not in used:
                raise A.ArgumentError(f"{k} variable {i} appears in no constraint")
        order = sorted(range(len(self.kinds)), key=lambda i: (_RANK[self.kinds[i]], i))
        pos = [0] * len(order)
        for p, i in enumerate(order):
            pos[i] = p
        rows = ([], [], [])
        for cons in self.constraints:
            for dst, lc in zip(rows, cons):
                dst.append(sorted((pos[i], c) for i, c in lc.items()))
        counts = [sum(1 for k in self.kinds if k == kind) for kind in (IO, COMMITTED, FREE)]
        r1cs = R1cs(self.name, *counts, *rows)
        return Gadget(r1cs, order, pos, self.hints, list(self.inputs), list(self.outputs))


@dataclass
class Gadget:
    r1cs: R1cs
    order: list  # final position -> builder id
    pos: list  # builder id -> final position
    hints: list
    inputs: list
    outputs: list
    per_unit: int = 0  # constraints per element/window/row, for reporting

    @property
    def num_constraints(self) -> int:
        return self.r1cs.num_constraints

    def assign(self, inputs: Sequence[int], outputs: Optional[Sequence[int]] = None) -> list:
        """Full assignment in final order.  `outputs` overrides the output
        hints (used to test claimed results); raises GadgetError when a hint
        finds no valid witness."""
        if len(inputs) != len(self.inputs):
            raise A.ArgumentError(f"expected {len(self.inputs)} inputs, got {len(inputs)}")
        vals = [0] * len(self.hints)
        vals[0] = 1
        for v, x in zip(self.inputs, inputs):
            vals[v] = x % ORDER
        forced = {}
        if outputs is not None:
            if len(outputs) != len(self.outputs):
                raise A.ArgumentError("output count mismatch")
            forced = {v: x % ORDER for v, x in zip(self.outputs, outputs)}
        for i, h in enumerate(self.hints):
            if i in forced:
                vals[i] = forced[i]
            elif h is not None:
                vals[i] = h(vals) % ORDER
        return [vals[i] for i in self.order]

    def accepts(self, inputs: Sequence[int], outputs: Sequence[int]) -> bool:
        try:
            w = self.assign(inputs, outputs)
        except GadgetError:
            return False
        return self.r1cs.is_satisfied(w)

    def output_values(self, w: Sequence[int]) -> list:
        return [A.signed(w[self.pos[v]]) for v in self.outputs]

    def io_values(self, w: Sequence[int]) -> list:
        return list(w[1:1 + self.r1cs.n_io])

    def committed_values(self, w: Sequence[int]) -> list:
        r = self.r1cs.committed_range
        return list(w[r.start:r.stop])


# -- gadgets ------------------------------------------------------------------

def gadget_square_act(n: int) -> Gadget:
    """y = x^2 + x elementwise: one constraint x * (x + 1) = y each."""
    c = Circuit(f"square_act/{n}")
    xs = [c.input() for _ in range(n)]
    for x in xs:
        y = c.output(COMMITTED, lambda vals, x=x: vals[x] * vals[x] + vals[x])
        c.enforce(var(x), var(x) + const(1), var(y))
    g = c.build()
    g.per_unit = 1
    return g


def gadget_relu(n: int, Q: int = 16) -> Gadget:
    """y = max(x, 0) for x in the Q-bit two's-complement window.  Per element:
    Q booleanity constraints, one recomposition of x + 2^(Q-1), and
    y = x * sign_bit."""
    if Q < 2:
        raise A.ArgumentError("relu needs Q >= 2")
    c = Circuit(f"relu/{n}/{Q}")
    xs = [c.input() for _ in range(n)]
    for x in xs:
        y = c.output(COMMITTED, lambda vals, x=x: max(A.signed(vals[x]), 0))
        bits = c.range_bits(var(x), Q, 1 << (Q - 1))
        c.enforce(var(x), var(bits[-1]), var(y))
    g = c.build()
    g.per_unit = Q + 2
    return g


def gadget_avgpool(windows: int, w: int, Q: int = 16) -> Gadget:
    """y * w^2 + rem = sum(window) with rem in [0, w^2) and y in the Q-bit
    signed window (without the y range check, y = (sum - rem) / w^2 would be
    satisfiable over the field for every rem).  Committed block: inputs,
    then y, then rem."""
    if w < 1:
        raise A.ArgumentError("window must be positive")
    area = w * w
    c = Circuit(f"avgpool/{windows}/{w}/{Q}")
    xs = [[c.input() for _ in range(area)] for _ in range(windows)]

    def total(vals, win):
        return sum(A.signed(vals[x]) for x in win)

    ys = [c.output(COMMITTED, lambda vals, win=win: total(vals, win) // area) for win in xs]
    rems = [c.output(COMMITTED, lambda vals, win=win: total(vals, win) % area) for win in xs]
    nb = max(1, (area - 1).bit_length())
    for win, y, rem in zip(xs, ys, rems):
        s = Lc()
        for x in win:
            s = s + var(x)
        c.enforce_zero(var(y, area) + var(rem) - s)
        c.range_bits(var(y), Q, 1 << (Q - 1))
        c.range_bits(var(rem), nb)
        if area != 1 << nb and area > 1:
            c.range_bits(const(area - 1) - var(rem), nb)
    g = c.build()
    g.per_unit = g.num_constraints // max(windows, 1)
    return g


def gadget_avgpool_at_point(windows: int, w: int) -> Gadget:
    """Remainder relation sum(window) = w^2 * y + rem over already evaluated
    field values; no range checks (they are meaningless at a random point).
    Every variable is a committed input: windows, then y, then rem."""
    area = w * w
    c = Circuit(f"avgpool_at_point/{windows}/{w}")
    xs = [[c.input() for _ in range(area)] for _ in range(windows)]
    ys = [c.input() for _ in range(windows)]
    rems = [c.input() for _ in range(windows)]
    for win, y, rem in zip(xs, ys, rems):
        s = Lc()
        for x in win:
            s = s + var(x)
        c.enforce_zero(var(y, area) + var(rem) - s)
    g = c.build()
    g.per_unit = 1
    return g


def gadget_below(n: int, bound: int) -> Gadget:
    """Each committed input is an integer in [0, bound)."""
    if bound < 1:
        raise GadgetError("bound must be positive")
    nb = max(1, (bound - 1).bit_length())
    c = Circuit(f"below/{n}/{bound}")
    xs = [c.input() for _ in range(n)]
    for x in xs:
        c.range_bits(var(x), nb)
        if bound != 1 << nb:
            c.range_bits(const(bound - 1) - var(x), nb)
    g = c.build()
    g.per_unit = g.num_constraints // max(n, 1)
    return g


def gadget_matmul_baseline(L: int) -> Gadget:
    """Y = W X with one multiplication constraint per product: L^3 in total.
    The last product of each output cell is bound to y minus the others."""
    c = Circuit(f"matmul/{L}")
    W = [[c.input() for _ in range(L)] for _ in range(L)]
    X = [[c.input() for _ in range(L)] for _ in range(L)]

    def cell(vals, i, j):
        return sum(vals[W[i][k]] * vals[X[k][j]] for k in range(L))

    Y = [[c.output(COMMITTED, lambda vals, i=i, j=j: cell(vals, i, j)) for j in range(L)] for i in range(L)]
    for i in range(L):
        for j in range(L):
            rest = Lc({Y[i][j]: 1})
            for k in range(L - 1):
                p = c.new(FREE, lambda vals, a=W[i][k], b=X[k][j]: vals[a] * vals[b])
                c.enforce(Lc({W[i][k]: 1}), Lc({X[k][j]: 1}), Lc({p: 1}))
                rest[p] = ORDER - 1
            c.enforce(Lc({W[i][L - 1]: 1}), Lc({X[L - 1][j]: 1}), rest)
    g = c.build()
    g.per_unit = 1
    return g


def gadget_argmax(n: int, Q: int = 16, rows: int = 1) -> Gadget:
    """Public label l = argmax(x) per row, ties to the lowest index.

    One-hot selectors s_i with sum 1 and sum i*s_i = l pick m = sum s_i x_i;
    then for every j, m - x_j - [j < l] must lie in [0, 2^Q), where
    [j < l] = sum_{i > j} s_i.  Inputs must be Q-bit signed."""
    if n < 1:
        raise A.ArgumentError("argmax needs at least one input")
    c = Circuit(f"argmax/{n}/{Q}/{rows}")
    xs = [[c.input() for _ in range(n)] for _ in range(rows)]

    def label(vals, row):
        v = [A.signed(vals[x]) for x in row]
        return v.index(max(v))

    labels = [c.output(IO, lambda vals, row=row: label(vals, row)) for row in xs]
    for row, lab in zip(xs, labels):
        sel = [c.new(FREE, lambda vals, i=i, lab=lab: int(vals[lab] == i)) for i in range(n)]
        one_hot, idx, m = Lc(), Lc(), Lc()
        for i, s in enumerate(sel):
            c.enforce(var(s), var(s) - const(1), Lc())
            one_hot = one_hot + var(s)
            idx = idx + var(s, i)
            t = c.new(FREE, lambda vals, s=s, x=row[i]: vals[s] * vals[x])
            c.enforce(var(s), var(row[i]), var(t))
            m = m + var(t)
        c.enforce_zero(one_hot - const(1))
        c.enforce_zero(idx - var(lab))
        for j in range(n):
            before = Lc()
            for i in range(j + 1, n):
                before = before + var(sel[i])
            c.range_bits(m - var(row[j]) - before, Q)
    g = c.build()
    g.per_unit = g.num_constraints // max(rows, 1)
    return g


# -- number-theoretic transforms ------------------------------------------------

def root_of_unity(n: int) -> int:
    if n < 1 or n & (n - 1) or n > 1 << TWO_ADICITY:
        raise A.ArgumentError("domain size must be a power of two up to 2^32")
    return pow(MULT_GEN, (ORDER - 1) // n, ORDER)


_POW_CACHE: dict = {}


def _powers(w: int, n: int) -> np.ndarray:
    key = (w, n)
    arr = _POW_CACHE.get(key)
    if arr is None:
        out = [1] * n
        for i in range(1, n):
            out[i] = out[i - 1] * w % ORDER
        arr = np.array(out, dtype=object)
        if len(_POW_CACHE) > 16:
            _POW_CACHE.clear()
        _POW_CACHE[key] = arr
    return arr


def _bitrev(n: int) -> np.ndarray:
    logn = n.bit_length() - 1
    idx = np.arange(n)
    r = np.zeros(n, dtype=np.int64)
    for b in range(logn):
        r |= ((idx >> b) & 1) << (logn - 1 - b)
    return r


def ntt(values: Sequence[int], omega: int) -> list:
    """Evaluations at omega^0..omega^(n-1) of the polynomial with the given
    coefficients (radix-2, vectorised per stage over object arrays)."""
    n = len(values)
    if n == 1:
        return [values[0] % ORDER]
    x = np.array([v % ORDER for v in values], dtype=object)[_bitrev(n)]
    pw = _powers(omega, n // 2)
    m = 1
    while m < n:
        tw = pw[:: n // (2 * m)][:m]
        x = x.reshape(-1, 2 * m)
        u = x[:, :m]
        v = x[:, m:] * tw % ORDER
        x = np.concatenate(((u + v) % ORDER, (u - v) % ORDER), axis=1)
        m *= 2
    return x.reshape(-1).tolist()


def intt(values: Sequence[int], omega: int) -> list:
    n = len(values)
    ninv = A.inv(n)
    return [v * ninv % ORDER for v in ntt(values, A.inv(omega))]


# -- QAP ----------------------------------------------------------------------

@dataclass
class QapInstance:
    """Interpolation of an R1CS over the multiplicative subgroup of size N
    (next power of two >= #constraints; the padding rows are 0 * 0 = 0).
    The target is t(X) = X^N - 1.  Basis polynomials are kept implicitly as
    their evaluations, i.e. the constraint matrices."""

    r1cs: R1cs
    N: int
    omega: int

    def lagrange_at(self, x: int) -> list:
        N = self.N
        pw = _powers(self.omega, N).tolist()
        tx = (pow(x, N, ORDER) - 1) % ORDER
        if tx == 0:
            return [1 if p == x % ORDER else 0 for p in pw]
        dens = A.batch_inv([(x - p) % ORDER for p in pw])
        scale = tx * A.inv(N) % ORDER
        return [scale * p % ORDER * d % ORDER for p, d in zip(pw, dens)]

    def polys_at(self, x: int):
        """(u_i(x), v_i(x), w_i(x)) for every variable."""
        lag = self.lagrange_at(x)
        n = self.r1cs.num_vars
        out = []
        for rows in (self.r1cs.a, self.r1cs.b, self.r1cs.c):
            acc = [0] * n
            for q, row in enumerate(rows):
                lq = lag[q]
                for i, k in row:
                    acc[i] += k * lq
            out.append([v % ORDER for v in acc])
        return tuple(out)

    def target_at(self, x: int) -> int:
        return (pow(x, self.N, ORDER) - 1) % ORDER

    def basis_poly(self, which: str, i: int) -> list:
        """Coefficients of u_i / v_i / w_i (test helper)."""
        rows = {"a": self.r1cs.a, "b": self.r1cs.b, "c": self.r1cs.c}[which]
        ev = [0] * self.N
        for q, row in enumerate(rows):
            for j, k in row:
                if j == i:
                    ev[q] = k
        return intt(ev, self.omega)

    def evaluations(self, w: Sequence[int]):
        n = self.N
        out = []
        for rows in (self.r1cs.a, self.r1cs.b, self.r1cs.c):
            ev = [sum(k * w[i] for i, k in row) % ORDER for row in rows]
            ev += [0] * (n - len(ev))
            out.append(ev)
        return out


def compile_qap(r1cs: R1cs) -> QapInstance:
    if r1cs.num_constraints < 1:
        raise A.ArgumentError("a QAP needs at least one constraint")
    N = 1
    while N < r1cs.num_constraints:
        N *= 2
    return QapInstance(r1cs, N, root_of_unity(N))


def divide_by_target(qap: QapInstance, w: Sequence[int]):
    """Exact division of p = u(X) v(X) - w(X) by X^N - 1, computed on the
    double-size domain.  Returns (h, remainder) coefficient lists."""
    N = qap.N
    ea, eb, ec = qap.evaluations(w)
    ca, cb, cc = (intt(e, qap.omega) for e in (ea, eb, ec))
    w2 = root_of_unity(2 * N)
    fa = ntt(ca + [0] * N, w2)
    fb = ntt(cb + [0] * N, w2)
    prod = intt([x * y % ORDER for x, y in zip(fa, fb)], w2)
    p = [(x - (cc[i] if i < N else 0)) % ORDER for i, x in enumerate(prod)]
    h = p[N:2 * N - 1]
    rem = [(p[i] + (p[N + i] if i < N - 1 else 0)) % ORDER for i in range(N)]
    return h, rem


def quotient_h(qap: QapInstance, w: Sequence[int]) -> list:
    """h = (u v - w) / t on a coset of the domain; assumes satisfaction."""
    N = qap.N
    if N == 1:
        return []
    ea, eb, ec = qap.evaluations(w)
    shift = _powers(MULT_GEN, N)
    coset = []
    for e in (ea, eb, ec):
        coeffs = np.array(intt(e, qap.omega), dtype=object)
        coset.append(np.array(ntt((coeffs * shift % ORDER).tolist(), qap.omega), dtype=object))
    zinv = A.inv((pow(MULT_GEN, N, ORDER) - 1) % ORDER)
    hc = (coset[0] * coset[1] - coset[2]) % ORDER * zinv % ORDER
    coeffs = np.array(intt(hc.tolist(), qap.omega), dtype=object)
    unshift = _powers(A.inv(MULT_GEN), N)
    h = (coeffs * unshift % ORDER).tolist()
    return h[:N - 1]


# -- CaP Groth16 --------------------------------------------------------------

@dataclass
class CapVk:
    circuit: bytes
    n_io: int
    g_alpha: G1Point
    h_beta: G2Point
    h_gamma: G2Point
    h_delta: G2Point
    ic: list  # one G1 element per public variable, the constant 1 first
    e_ab: A.Gt


@dataclass
class CapCrs:
    """Proving key in the usual dense layout: one query entry per variable,
    identity where the basis polynomial vanishes at the secret point.  The
    prover skips those entries (index lists are derived, not serialised)."""

    vk: CapVk
    n_committed: int
    n_free: int
    N: int
    g_beta: G1Point
    g_delta: G1Point
    g_eta_gamma: G1Point
    g_eta_delta: G1Point
    k_query: list  # committed block bases g^((beta u + alpha v + w)/gamma)
    a_query: list  # g^u_i, every variable
    b_g2: list  # h^v_i
    b_g1: list  # g^v_i
    l_query: list  # g^((beta u + alpha v + w)/delta), free variables
    h_query: list  # g^(x^i t(x) / delta), i < N - 1
    nonzero: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.nonzero is None:
            self.nonzero = {
                "a": _nonzero(self.a_query, A.G1_ID),
                "b": _nonzero(self.b_g2, A.G2_ID),
                "l": _nonzero(self.l_query, A.G1_ID),
            }

    def to_bytes(self) -> bytes:
        vk = self.vk
        out = [MAGIC_CRS, struct.pack("<H", VERSION), vk.circuit,
               struct.pack("<IIIII", vk.n_io, self.n_committed, self.n_free, self.N, len(vk.ic))]
        for p in (vk.g_alpha, vk.h_beta, vk.h_gamma, vk.h_delta, self.g_beta, self.g_delta,
                  self.g_eta_gamma, self.g_eta_delta):
            out.append(A.point_bytes(p))
        out.append(vk.e_ab.to_bytes())
        for pts in (vk.ic, self.k_query, self.a_query, self.b_g2, self.b_g1, self.l_query,
                    self.h_query):
            out += [A.point_bytes(p) for p in pts]
        return b"".join(out)

    @staticmethod
    def from_bytes(b: bytes) -> "CapCrs":
        r = _Reader(b)
        if r.take(4) != MAGIC_CRS or r.unpack("<H")[0] != VERSION:
            raise A.ArgumentError("not a CaP CRS")
        circuit = r.take(32)
        n_io, n_com, n_free, N, n_ic = r.unpack("<IIIII")
        if n_ic != n_io + 1:
            raise A.ArgumentError("public key length mismatch")
        g_alpha, h_beta, h_gamma, h_delta = r.g1(), r.g2(), r.g2(), r.g2()
        g_beta, g_delta, g_eg, g_ed = r.g1(), r.g1(), r.g1(), r.g1()
        e_ab = A.Gt.from_bytes(r.take(A.GT_BYTES))
        n_vars = 1 + n_io + n_com + n_free
        ic = [r.g1() for _ in range(n_ic)]
        kq = [r.g1() for _ in range(n_com)]
        aq = [r.g1() for _ in range(n_vars)]
        b2 = [r.g2() for _ in range(n_vars)]
        b1 = [r.g1() for _ in range(n_vars)]
        lq = [r.g1() for _ in range(n_free)]
        hq = [r.g1() for _ in range(max(N - 1, 0))]
        r.done()
        vk = CapVk(circuit, n_io, g_alpha, h_beta, h_gamma, h_delta, ic, e_ab)
        return CapCrs(vk, n_com, n_free, N, g_beta, g_delta, g_eg, g_ed, kq, aq, b2, b1, lq, hq)

    @property
    def commitment_bases(self) -> list:
        """Bases under which D commits: the committed block, then g^(eta/gamma)."""
        return list(self.k_query) + [self.g_eta_gamma]


def crs_size_bytes(n_io: int, n_committed: int, n_free: int, N: int) -> int:
    n_vars = 1 + n_io + n_committed + n_free
    g1 = (n_io + 1) + n_committed + 2 * n_vars + n_free + max(N - 1, 0) + 5
    g2 = n_vars + 3
    return 4 + 2 + 32 + 20 + A.GT_BYTES + g1 * A.G1_BYTES + g2 * A.G2_BYTES


def _nonzero(pts, ident) -> list:
    return [i for i, p in enumerate(pts) if p != ident]


@dataclass
class CapTrapdoor:
    tau: int
    alpha: int
    beta: int
    gamma: int
    delta: int
    eta: int


@dataclass
class CapProof:
    circuit: bytes
    A: G1Point
    B: G2Point
    C: G1Point
    D: G1Point

    def to_bytes(self) -> bytes:
        return b"".join([MAGIC_PROOF, struct.pack("<H", VERSION), self.circuit,
                         A.point_bytes(self.A), A.point_bytes(self.B),
                         A.point_bytes(self.C), A.point_bytes(self.D)])

    @staticmethod
    def from_bytes(b: bytes) -> "CapProof":
        r = _Reader(b)
        if r.take(4) != MAGIC_PROOF or r.unpack("<H")[0] != VERSION:
            raise A.ArgumentError("not a CaP proof")
        pf = CapProof(r.take(32), r.g1(), r.g2(), r.g1(), r.g1())
        r.done()
        return pf


PROOF_BYTES = 4 + 2 + 32 + 3 * A.G1_BYTES + A.G2_BYTES


class _Reader:
    def __init__(self, b: bytes):
        self.b = b
        self.i = 0

    def take(self, n: int) -> bytes:
        if self.i + n > len(self.b):
            raise A.ArgumentError("truncated input")
        out = self.b[self.i:self.i + n]
        self.i += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def g1(self):
        return A.g1_from_bytes(self.take(A.G1_BYTES))

    def g2(self):
        return A.g2_from_bytes(self.take(A.G2_BYTES))

    def done(self):
        if self.i != len(self.b):
            raise A.ArgumentError("trailing bytes")


def cap_setup(qap: QapInstance, rng=None, keep_trapdoor: bool = False):
    r1cs = qap.r1cs
    td = CapTrapdoor(*(A.rand_nonzero(rng) for _ in range(6)))
    while qap.target_at(td.tau) == 0:
        td.tau = A.rand_nonzero(rng)
    u, v, w = qap.polys_at(td.tau)
    ig, idl = A.inv(td.gamma), A.inv(td.delta)
    mix = [(td.beta * a + td.alpha * b + c) % ORDER for a, b, c in zip(u, v, w)]
    n_pub = 1 + r1cs.n_io
    ic = [A.g1_exp(mix[i] * ig) for i in range(n_pub)]
    kq = [A.g1_exp(mix[i] * ig) for i in r1cs.committed_range]
    free = r1cs.free_range
    l_idx = [i - free.start for i in free if mix[i]]
    lq = _sparse_exp(A.g1_exp, A.G1_ID, r1cs.n_free, l_idx, [mix[i + free.start] * idl for i in l_idx])
    a_idx = [i for i, x in enumerate(u) if x]
    aq = _sparse_exp(A.g1_exp, A.G1_ID, len(u), a_idx, [u[i] for i in a_idx])
    b_idx = [i for i, x in enumerate(v) if x]
    b2 = _sparse_exp(A.g2_exp, A.G2_ID, len(v), b_idx, [v[i] for i in b_idx])
    b1 = _sparse_exp(A.g1_exp, A.G1_ID, len(v), b_idx, [v[i] for i in b_idx])
    tt = qap.target_at(td.tau) * idl % ORDER
    hq = []
    for _ in range(qap.N - 1):
        hq.append(A.g1_exp(tt))
        tt = tt * td.tau % ORDER
    g_alpha, h_beta = A.g1_exp(td.alpha), A.g2_exp(td.beta)
    vk = CapVk(r1cs.digest, r1cs.n_io, g_alpha, h_beta, A.g2_exp(td.gamma), A.g2_exp(td.delta),
               ic, A.pairing(g_alpha, h_beta))
    crs = CapCrs(vk, r1cs.n_committed, r1cs.n_free, qap.N, A.g1_exp(td.beta), A.g1_exp(td.delta),
                 A.g1_exp(td.eta * ig), A.g1_exp(td.eta * idl), kq, aq, b2, b1, lq, hq,
                 {"a": a_idx, "b": b_idx, "l": l_idx})
    return (crs, td) if keep_trapdoor else crs


def _sparse_exp(exp, ident, n, idx, xs) -> list:
    out = [ident] * n
    for i, x in zip(idx, xs):
        out[i] = exp(x)
    return out


def _msm(pts, xs, like):
    if not pts:
        return A.identity_like(like)
    return A.msm(pts, xs)


def cap_prove(crs: CapCrs, qap: QapInstance, w: Sequence[int], rng=None,
              randomizers=None, check: bool = True) -> CapProof:
    r1cs = qap.r1cs
    if r1cs.digest != crs.vk.circuit:
        raise A.ArgumentError("CRS was generated for a different circuit")
    w = [x % ORDER for x in w]
    if len(w) != r1cs.num_vars:
        raise A.ArgumentError("assignment length does not match the circuit")
    if check and not r1cs.is_satisfied(w):
        raise A.ArgumentError(f"assignment violates constraint {r1cs.first_failure(w)}")
    if randomizers is None:
        r, s, v = A.rand_scalar(rng), A.rand_scalar(rng), A.rand_scalar(rng)
    else:
        r, s, v = randomizers
    h = quotient_h(qap, w)
    vk = crs.vk
    nz = crs.nonzero
    a_sum = _msm([crs.a_query[i] for i in nz["a"]], [w[i] for i in nz["a"]], A.G1)
    pa = vk.g_alpha + a_sum + A.mul(crs.g_delta, r)
    bw = [w[i] for i in nz["b"]]
    pb = vk.h_beta + _msm([crs.b_g2[i] for i in nz["b"]], bw, A.G2) + A.mul(vk.h_delta, s)
    pb1 = crs.g_beta + _msm([crs.b_g1[i] for i in nz["b"]], bw, A.G1) + A.mul(crs.g_delta, s)
    f0 = r1cs.free_range.start
    l_sum = _msm([crs.l_query[i] for i in nz["l"]], [w[f0 + i] for i in nz["l"]], A.G1)
    pc = (l_sum + _msm(crs.h_query, h, A.G1)
          + A.mul(pa, s) + A.mul(pb1, r) - A.mul(crs.g_delta, r * s) - A.mul(crs.g_eta_delta, v))
    com = r1cs.committed_range
    pd = commit_block(crs, w[com.start:com.stop], v)
    return CapProof(vk.circuit, pa, pb, pc, pd)


def commit_block(crs: CapCrs, values: Sequence[int], v: int) -> G1Point:
    """The D slot: prod K_i^{values_i} * (g^(eta/gamma))^v."""
    if len(values) != crs.n_committed:
        raise A.ArgumentError("committed block length mismatch")
    return _msm(crs.commitment_bases, list(values) + [v], A.G1)


def public_term(vk: CapVk, io: Sequence[int]) -> G1Point:
    if len(io) != vk.n_io:
        raise A.ArgumentError("public input count mismatch")
    return vk.ic[0] + _msm(vk.ic[1:], list(io), A.G1)


def cap_verify(vk: CapVk, io: Sequence[int], pf: CapProof) -> bool:
    """Three pairings plus O(|io|) group work; never raises on bad input."""
    try:
        if pf.circuit != vk.circuit:
            return False
        if not (isinstance(pf.A, G1Point) and isinstance(pf.B, G2Point)
                and isinstance(pf.C, G1Point) and isinstance(pf.D, G1Point)):
            return False
        acc = public_term(vk, io) + pf.D
        lhs = A.multi_pairing([pf.A, -acc, -pf.C], [pf.B, vk.h_gamma, vk.h_delta])
        return lhs == vk.e_ab
    except (A.ArgumentError, ValueError, TypeError):
        return False
