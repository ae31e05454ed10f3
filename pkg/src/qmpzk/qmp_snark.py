"""Commit-and-prove SNARK for Y = W X over square matrices with a single
multiplication gate (quadratic matrix program).

Field scalars inside the matrix formulas are read as scalar * I.  With that
reading the verification equation

    tr e(A, B) == tr [ e(g^alpha, h^beta) e(D, h^gamma) e(C, h^delta) ]

holds exactly when tr(Z^T (W X - Y)) = 0 for the setup's hidden random Z,
i.e. a Freivalds check with Z kept in the exponent.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

from . import algebra as A
from .algebra import ORDER, G1Point, G2Point

MAGIC_PROOF = b"QMPP"
MAGIC_CRS = b"QMPC"
VERSION = 1


@dataclass
class QmpProgram:
    """Single-gate program: all basis polynomials are the constant 1."""

    L: int
    n_star: int = 1

    def __post_init__(self):
        if self.L < 1:
            raise A.ArgumentError("dimension must be positive")
        if self.n_star != 1:
            raise NotImplementedError("only single-gate programs are supported")

    @staticmethod
    def basis(z: int) -> tuple:
        return 1, 1, 1

    @staticmethod
    def target(x: int) -> int:
        return 1  # t(x) of a one-gate program after normalisation: h == 0


@dataclass
class QmpCrs:
    L: int
    g: G1Point
    h: G2Point
    g_alpha: G1Point
    g_beta: G1Point
    h_beta: G2Point
    h_gamma: G2Point
    g_delta: G1Point
    h_delta: G2Point
    g_eta_delta: G1Point
    g_eta_gamma: G1Point
    op_w: G1Point  # g^(beta/gamma)
    op_x: G1Point  # g^(alpha/gamma)
    op_y: G1Point  # g^(1/gamma)
    op_sum: G1Point  # g^((beta + alpha + 1)/gamma), emitted, never used by verify
    Z_enc: list  # g^Z
    Zb_enc: list  # g^(beta Z / gamma)
    Zg_enc: list  # g^(Z / gamma)
    _digest: bytes = field(default=b"", repr=False)

    def scalars_part(self) -> list:
        return [self.g, self.h, self.g_alpha, self.g_beta, self.h_beta, self.h_gamma, self.g_delta,
                self.h_delta, self.g_eta_delta, self.g_eta_gamma, self.op_w, self.op_x, self.op_y, self.op_sum]

    def to_bytes(self) -> bytes:
        out = [MAGIC_CRS, struct.pack("<HI", VERSION, self.L)]
        out += [A.point_bytes(p) for p in self.scalars_part()]
        for m in (self.Z_enc, self.Zb_enc, self.Zg_enc):
            out.append(A.matrix_bytes(m))
        return b"".join(out)

    @staticmethod
    def from_bytes(b: bytes) -> "QmpCrs":
        if b[:4] != MAGIC_CRS:
            raise A.ArgumentError("not a QMP CRS")
        ver, L = struct.unpack_from("<HI", b, 4)
        if ver != VERSION:
            raise A.ArgumentError("unsupported CRS version")
        r = _Reader(b, 10)
        kinds = [1, 2, 1, 1, 2, 2, 1, 2, 1, 1, 1, 1, 1, 1]
        head = [r.g1() if k == 1 else r.g2() for k in kinds]
        mats = [r.g1_matrix(L) for _ in range(3)]
        r.done()
        return QmpCrs(L, *head, *mats)

    @property
    def digest(self) -> bytes:
        if not self._digest:
            self._digest = A.digest(self.to_bytes())
        return self._digest

    @property
    def size_bytes(self) -> int:
        return crs_size_bytes(self.L)


@dataclass
class QmpProof:
    A: list
    B: list
    C: list
    D: list
    d1: list
    d2: list
    d3: list

    @property
    def L(self) -> int:
        return len(self.A)

    def g1_matrices(self) -> list:
        return [self.A, self.C, self.D, self.d1, self.d2, self.d3]

    def to_bytes(self) -> bytes:
        out = [MAGIC_PROOF, struct.pack("<HI", VERSION, self.L)]
        for m in (self.A, self.B, self.C, self.D, self.d1, self.d2, self.d3):
            out.append(A.matrix_bytes(m))
        return b"".join(out)

    @staticmethod
    def from_bytes(b: bytes, decoder: A.PointDecoder | None = None) -> "QmpProof":
        if b[:4] != MAGIC_PROOF:
            raise A.ArgumentError("not a QMP proof")
        ver, L = struct.unpack_from("<HI", b, 4)
        if ver != VERSION:
            raise A.ArgumentError("unsupported proof version")
        if len(b) != 10 + L * L * (6 * 48 + 96):
            raise A.ArgumentError("proof length does not match dimension")
        r = _Reader(b, 10, decoder)
        a = r.g1_matrix(L)
        bm = r.g2_matrix(L)
        rest = [r.g1_matrix(L) for _ in range(5)]
        r.done()
        return QmpProof(a, bm, *rest)


class _Reader:
    def __init__(self, b: bytes, off: int, decoder: A.PointDecoder | None = None):
        self.b, self.off = b, off
        self.dec = decoder or A.PointDecoder()

    def take(self, n: int) -> bytes:
        s = self.b[self.off: self.off + n]
        if len(s) != n:
            raise A.ArgumentError("truncated input")
        self.off += n
        return s

    def g1(self):
        return self.dec.g1(self.take(48))

    def g2(self):
        return self.dec.g2(self.take(96))

    def g1_matrix(self, L):
        return [[self.g1() for _ in range(L)] for _ in range(L)]

    def g2_matrix(self, L):
        return [[self.g2() for _ in range(L)] for _ in range(L)]

    def done(self):
        if self.off != len(self.b):
            raise A.ArgumentError("trailing bytes")


@dataclass
class QmpTrapdoor:
    """Only returned when a caller explicitly asks (tests, simulation)."""

    alpha: int
    beta: int
    gamma: int
    delta: int
    eta: int
    z: int
    Z: list


def crs_size_bytes(L: int) -> int:
    # 14 head elements (4 in G2) + three L x L G1 encodings
    return 10 + 10 * 48 + 4 * 96 + 3 * L * L * 48


def qmp_setup(L: int, n_star: int = 1, rng=None, keep_trapdoor: bool = False):
    QmpProgram(L, n_star)
    alpha, beta, gamma, delta, eta, z = (A.rand_nonzero(rng) for _ in range(6))
    Z = [[A.rand_scalar(rng) for _ in range(L)] for _ in range(L)]
    ig, idl = A.inv(gamma), A.inv(delta)
    g1, g2 = A.g1_exp, A.g2_exp
    bg = beta * ig % ORDER
    crs = QmpCrs(
        L, A.G1, A.G2, g1(alpha), g1(beta), g2(beta), g2(gamma), g1(delta), g2(delta),
        g1(eta * idl), g1(eta * ig), g1(bg), g1(alpha * ig), g1(ig), g1((alpha + beta + 1) * ig),
        [[g1(x) for x in row] for row in Z],
        [[g1(x * bg) for x in row] for row in Z],
        [[g1(x * ig) for x in row] for row in Z],
    )
    if keep_trapdoor:
        return crs, QmpTrapdoor(alpha, beta, gamma, delta, eta, z, Z)
    return crs


def _fixed_mat(fb: A.FixedBase, m) -> list:
    return [[fb.mul(x) for x in row] for row in m]


def _add_scalar(m, p) -> list:
    """Entrywise multiply every cell by the same group element."""
    return [[x + p for x in row] for row in m]


def qmp_prove(crs: QmpCrs, W, X, Y, rng=None, check: bool = True, randomizers=None) -> QmpProof:
    L = crs.L
    for m in (W, X, Y):
        if A.dim(m) != L:
            raise A.ArgumentError("witness dimension does not match the CRS")
    W = [[x % ORDER for x in r] for r in W]
    X = [[x % ORDER for x in r] for r in X]
    Y = [[x % ORDER for x in r] for r in Y]
    if check and A.mat_mul(W, X) != Y:
        raise A.ArgumentError("witness does not satisfy Y = W X")
    if randomizers is None:
        t, s, v = A.rand_scalar(rng), A.rand_scalar(rng), A.rand_scalar(rng)
    else:
        t, s, v = randomizers
    ZW = A.exp_matmul(crs.Z_enc, W)  # g^(Z^T W)
    A_m = A.gm_add_diag(ZW, crs.g_alpha + A.mul(crs.g_delta, t))
    B_m = A.gm_add_diag(_fixed_mat(A.fixed_base(crs.h), X), crs.h_beta + A.mul(crs.h_delta, s))
    # C = A^s (g^(beta+delta s) g^X)^t g^(-t s delta) g^(-v eta/delta), with
    # the diagonal constants collapsed to g^(s alpha + s t delta + t beta)
    gX_t = _fixed_mat(A.fixed_base(crs.g), [[x * t % ORDER for x in r] for r in X])
    C_m = A.gm_mul(A.gm_pow(ZW, s), gX_t)
    diag_c = (A.mul(crs.g_alpha, s) + A.mul(crs.g_delta, s * t) + A.mul(crs.g_beta, t)
              - A.mul(crs.g_eta_delta, v))
    C_m = A.gm_add_diag(C_m, diag_c)
    opx = _fixed_mat(A.fixed_base(crs.op_x), X)
    hv = A.mul(crs.g_eta_gamma, v)
    D_m = A.gm_mul(A.gm_mul(A.exp_matmul(crs.Zb_enc, W), A.exp_matmul(crs.Zg_enc, Y)), opx)
    D_m = A.gm_add_diag(D_m, hv)
    d1 = _add_scalar(_fixed_mat(A.fixed_base(crs.op_w), W), hv)
    d2 = _add_scalar(opx, hv)
    d3 = _add_scalar(_fixed_mat(A.fixed_base(crs.op_y), Y), hv)
    return QmpProof(A_m, B_m, C_m, D_m, d1, d2, d3)


def _shape_ok(crs: QmpCrs, pf: QmpProof) -> bool:
    L = crs.L
    for m, cls in ((pf.A, G1Point), (pf.B, G2Point), (pf.C, G1Point), (pf.D, G1Point),
                   (pf.d1, G1Point), (pf.d2, G1Point), (pf.d3, G1Point)):
        if len(m) != L or any(len(r) != L for r in m):
            return False
        if any(not isinstance(x, cls) for r in m for x in r):
            return False
    return True


def trace_check(crs: QmpCrs, pf: QmpProof) -> bool:
    """The trace-pairing equation: L^2 + 2L + 1 pairings in one product."""
    L = crs.L
    ps = [pf.A[i][k] for i in range(L) for k in range(L)]
    qs = [pf.B[k][i] for i in range(L) for k in range(L)]
    ps.append(-A.mul(crs.g_alpha, L))
    qs.append(crs.h_beta)
    ps += [-pf.D[i][i] for i in range(L)]
    qs += [crs.h_gamma] * L
    ps += [-pf.C[i][i] for i in range(L)]
    qs += [crs.h_delta] * L
    return A.pairing_product_is_one(ps, qs)


def entrywise_check(crs: QmpCrs, pf: QmpProof) -> bool:
    """Random two-sided projection u^T (.) w of the full matrix identity
    A*B = alpha beta I + gamma D + delta C (in the exponent), with u, w
    derived from the proof.  Catches off-diagonal tampering the trace
    equation cannot see; L + 3 pairings."""
    L = crs.L
    t = A.Transcript(b"qmp-entrywise")
    t.absorb(b"crs", crs.digest)
    t.absorb(b"proof", pf.to_bytes())
    u = t.challenges(b"u", L)
    w = t.challenges(b"w", L)
    cols = list(zip(*pf.A))
    a_proj = [A.msm(list(cols[k]), u) for k in range(L)]
    b_proj = [A.msm(list(pf.B[k]), w) for k in range(L)]
    uw = [ui * wj % ORDER for ui in u for wj in w]
    flat_d = [x for r in pf.D for x in r]
    flat_c = [x for r in pf.C for x in r]
    diag = sum(ui * wi for ui, wi in zip(u, w)) % ORDER
    ps = a_proj + [-A.mul(crs.g_alpha, diag), -A.msm(flat_d, uw), -A.msm(flat_c, uw)]
    qs = b_proj + [crs.h_beta, crs.h_gamma, crs.h_delta]
    return A.pairing_product_is_one(ps, qs)


def qmp_verify(crs: QmpCrs, pf: QmpProof, entrywise: bool = True) -> bool:
    try:
        if not _shape_ok(crs, pf):
            return False
        if not trace_check(crs, pf):
            return False
        return entrywise_check(crs, pf) if entrywise else True
    except (A.ArgumentError, ValueError, TypeError):
        return False


# -- pure-field model of both sides -----------------------------------------


def exponent_matrices(td: QmpTrapdoor, W, X, Y, t: int, s: int, v: int) -> dict:
    """The discrete logs the prover's group matrices encode, computed over the
    field from the trapdoor.  Used by tests and the algebraic fuzz."""
    L = len(W)
    I = A.identity_matrix
    Zt = A.transpose(td.Z)
    ig, idl = A.inv(td.gamma), A.inv(td.delta)
    ZW = A.mat_mul(Zt, W)
    a = A.mat_add(ZW, I(L, td.alpha + td.delta * t))
    b = A.mat_add(X, I(L, td.beta + td.delta * s))
    c = A.mat_add(A.mat_scale(a, s), A.mat_scale(A.mat_add(X, I(L, td.beta + td.delta * s)), t),
                  I(L, -t * s * td.delta - v * td.eta * idl))
    d = A.mat_add(A.mat_scale(A.mat_add(A.mat_scale(ZW, td.beta), A.mat_scale(X, td.alpha),
                                        A.mat_mul(Zt, Y)), ig), I(L, v * td.eta * ig))
    return {"A": a, "B": b, "C": c, "D": d}


def verification_difference(td: QmpTrapdoor, W, X, Y, t: int, s: int, v: int) -> int:
    """log of LHS / RHS of the trace equation, over the field."""
    e = exponent_matrices(td, W, X, Y, t, s, v)
    L = len(W)
    lhs = A.trace(A.mat_mul(e["A"], e["B"]))
    rhs = (L * td.alpha * td.beta + td.gamma * A.trace(e["D"]) + td.delta * A.trace(e["C"])) % ORDER
    return (lhs - rhs) % ORDER


# -- commitment-slot links ---------------------------------------------------


def link_rows(lb, crs: QmpCrs, pf: QmpProof, cells: dict, col_v: int, proof_digest: bytes = b"",
              rows: str = "DWXY", context: bytes = b"") -> None:
    """Add link rows tying D and the slots d1, d2, d3 to one witness vector.

    ``cells`` maps "W", "X", "Y" to {(row, col): witness column}; cells not
    listed are structurally zero.  D and each slot enter through a random
    two-sided projection (u^T D w, a^T d b) drawn from the proof and
    ``context``, so a row costs O(L^2) scalar work rather than one base per
    cell.  Under D = (beta Z^T W + alpha X + Z^T Y)/gamma + (v eta/gamma) I the
    projected row is a linear form over the 2L + 2 points
    sum_i u_i g^{beta Z[k][i]/gamma}, sum_i u_i g^{Z[k][i]/gamma}, g^{alpha/gamma}
    and g^{eta/gamma}.

    A projection only pins the witness if every column it touches is also
    pinned by a commitment fixed before the challenges; callers put those
    commitments' bytes into ``context``.  ``rows`` selects among D and the
    W, X, Y slots.
    """
    L = crs.L
    t = A.Transcript(b"qmp-link")
    t.absorb(b"crs", crs.digest)
    t.absorb(b"proof", proof_digest or A.digest(pf.to_bytes()))
    t.absorb(b"context", context)
    u, w = t.challenges(b"u", L), t.challenges(b"w", L)
    proj = {tag: (t.challenges(b"a" + tag.encode(), L), t.challenges(b"b" + tag.encode(), L)) for tag in "WXY"}
    if "D" in rows:
        W, X, Y = cells["W"], cells["X"], cells["Y"]
        bases, index = [], {}
        for tag, enc, ks in (("W", crs.Zb_enc, sorted({k for k, _ in W})),
                             ("Y", crs.Zg_enc, sorted({k for k, _ in Y}))):
            for k in ks:
                index[tag, k] = len(bases)
                bases.append(A.msm(list(enc[k]), u))
        ix, iv = len(bases), len(bases) + 1
        bases += [crs.op_x, crs.g_eta_gamma]
        terms = [(c, index["W", k], w[j]) for (k, j), c in W.items()]
        terms += [(c, ix, u[i] * w[j]) for (i, j), c in X.items()]
        terms += [(c, index["Y", k], w[j]) for (k, j), c in Y.items()]
        terms.append((col_v, iv, sum(a * b for a, b in zip(u, w))))
        C = A.msm([x for r in pf.D for x in r], [a * b for a in u for b in w])
        lb.row(C, bases, terms, "qmp-D")
    for tag in "WXY":
        if tag not in rows:
            continue
        slot, base = _slot(crs, pf, tag)
        a, b = proj[tag]
        C = A.msm([x for r in slot for x in r], [p * q for p in a for q in b])
        terms = [(c, 0, a[i] * b[j]) for (i, j), c in cells[tag].items()]
        terms.append((col_v, 1, sum(a) * sum(b)))
        lb.row(C, [base, crs.g_eta_gamma], terms, "qmp-d" + _SLOT_NAME[tag])


_SLOT_NAME = {"W": "1", "X": "2", "Y": "3"}


def _slot(crs: QmpCrs, pf: QmpProof, tag: str):
    return {"W": (pf.d1, crs.op_w), "X": (pf.d2, crs.op_x), "Y": (pf.d3, crs.op_y)}[tag]


def slot_cell_rows(lb, crs: QmpCrs, pf: QmpProof, tag: str, cells: dict, col_v: int) -> None:
    """One row per cell of a slot: d[i][j] = op^{value} (g^{eta/gamma})^v.
    Cells without a column must open to zero.  Costs L^2 rows but pins every
    cell, so it needs no outside anchor."""
    slot, base = _slot(crs, pf, tag)
    name = "qmp-d" + _SLOT_NAME[tag]
    for i, row in enumerate(slot):
        for j, C in enumerate(row):
            c = cells.get((i, j))
            terms = [(col_v, 1, 1)] if c is None else [(c, 0, 1), (col_v, 1, 1)]
            lb.row(C, [base, crs.g_eta_gamma], terms, name)
