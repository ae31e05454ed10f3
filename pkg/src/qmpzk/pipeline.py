"""End-to-end orchestration: model commitment, PriorNet over ring data
(evaluation proof plus scalar proofs at the evaluated point), LaterNet over
the plaintext seam, link proofs between every pair of adjacent relations,
per-circuit aggregation across testers, and bundle verification.

Relation names (per tester):
  S1    evaluation proof for the committed ring tensors W, X, Y1, Y2, Y3, Rem
  L1    conv as a QMP matmul at the evaluated point
  L2    square activation at the point          L3   pool remainder relation
  L3r   range of the plaintext remainders       L4   first fc (QMP)
  L5    relu                                    L6   pool (with range checks)
  L7    second fc (QMP)                         L8   third fc (QMP)
  Lo    argmax with the predicted labels public
Edges join the commitments of two or more of these (see EDGES).
"""
from __future__ import annotations

import copy
import hashlib
import json
import os
import random
import struct
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional, Sequence

import numpy as np

from . import aggregate as G
from . import algebra as A
from . import cp_link as K
from . import mpoly_commit as MC
from . import qap_snark as P
from . import qmp_snark as Q
from .algebra import ORDER, G1Point
from .conv2mm import ConvShape, ReshapeLayout, plan_layout
from .model import SplitModel, model_to_json
from .ringpoly import BivariatePoly, RingElem, RingParams, ring_add, ring_mul_unreduced, stub_encrypt

PRIOR_KINDS = ("conv", "square_act", "avgpool")
LATER_KINDS = ("fc", "relu", "avgpool", "fc", "fc", "argmax")
QMP_NAMES = ("L1", "L4", "L7", "L8")
CAP_NAMES = ("L2", "L3", "L3r", "L5", "L6", "Lo")
STEP1_NAMES = ("W1", "X1", "Y1", "Y2", "Y3", "R3")
LATER_WEIGHTS = ("L4", "L7", "L8")
FORMAT = "qmpzk-bundle/1"


class PipelineError(A.ArgumentError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    batch: int = 4
    ring_degree: int = 64
    ring_modulus_bits: int = 60
    relu_bits: int = 40
    max_testers: int = 4

    @property
    def ring(self) -> RingParams:
        return RingParams(self.ring_degree, _prime_below(1 << self.ring_modulus_bits))


def _prime_below(n: int) -> int:
    def is_prime(m):
        if m < 2:
            return False
        for p in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
            if m % p == 0:
                return m == p
        d, s = m - 1, 0
        while d % 2 == 0:
            d, s = d // 2, s + 1
        for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
            x = pow(a, d, m)
            if x in (1, m - 1):
                continue
            for _ in range(s - 1):
                x = x * x % m
                if x == m - 1:
                    break
            else:
                return False
        return True

    m = n - 1
    while not is_prime(m):
        m -= 1
    return m


# -- shapes and index maps ---------------------------------------------------

@dataclass(frozen=True)
class Shapes:
    B: int
    n: int
    M: int
    m: int
    pw: int  # prior pool window
    f4: tuple  # (out, in)
    h6: tuple  # pool input grid (rows, cols)
    w6: int
    f7: tuple
    f8: tuple

    @property
    def o(self) -> int:
        return self.n - self.m + 1

    @property
    def s(self) -> int:
        return self.o // self.pw

    @property
    def conv(self) -> ConvShape:
        return ConvShape(self.M, self.m, self.n, self.B)

    @property
    def layout(self) -> ReshapeLayout:
        return plan_layout(self.conv)

    def sizes(self) -> dict:
        B = self.B
        n6 = (self.h6[0] // self.w6) * (self.h6[1] // self.w6)
        return {
            "W1": self.M * self.m * self.m, "X1": B * self.n * self.n,
            "Y1": self.M * B * self.o * self.o, "Y2": self.M * B * self.o * self.o,
            "Y3": self.M * B * self.s * self.s, "R3": self.M * B * self.s * self.s,
            "W4": self.f4[0] * self.f4[1], "X4": self.f4[1] * B, "Y4": self.f4[0] * B, "Y5": self.f4[0] * B,
            "Y6": n6 * B, "R6": n6 * B, "W7": self.f7[0] * self.f7[1], "Y7": self.f7[0] * B,
            "W8": self.f8[0] * self.f8[1], "Y8": self.f8[0] * B,
        }

    def qmp_dim(self, name: str) -> int:
        if name == "L1":
            return self.layout.L
        out, inn = {"L4": self.f4, "L7": self.f7, "L8": self.f8}[name]
        return max(out, inn, self.B)

    def l3_windows(self) -> list:
        """Y2 flat indices, window after window, in Y3 order."""
        B, o, s, w = self.B, self.o, self.s, self.pw
        out = []
        for k in range(self.M):
            for b in range(B):
                for pi in range(s):
                    for pj in range(s):
                        for di in range(w):
                            for dj in range(w):
                                out.append(((k * B + b) * o + pi * w + di) * o + pj * w + dj)
        return out

    def x4_slots(self) -> list:
        """Y3 slot behind each cell (f, b) of the first fc's input, f * B + b."""
        B, s = self.B, self.s
        out = []
        for f in range(self.f4[1]):
            k, rest = divmod(f, s * s)
            pi, pj = divmod(rest, s)
            for b in range(B):
                out.append(((k * B + b) * s + pi) * s + pj)
        return out

    def l6_windows(self) -> list:
        """Y5 flat indices (o * B + b), window after window, in Y6 order."""
        B, (hr, hc), w = self.B, self.h6, self.w6
        out = []
        for f in range((hr // w) * (hc // w)):
            pi, pj = divmod(f, hc // w)
            for b in range(B):
                for di in range(w):
                    for dj in range(w):
                        out.append(((pi * w + di) * hc + pj * w + dj) * B + b)
        return out

    def argmax_order(self) -> list:
        B, c = self.B, self.f8[0]
        return [j * B + b for b in range(B) for j in range(c)]


def derive_shapes(model: SplitModel, batch: int) -> Shapes:
    kinds = (tuple(s.kind for s in model.prior), tuple(s.kind for s in model.later))
    if kinds != (PRIOR_KINDS, LATER_KINDS):
        raise PipelineError("the pipeline supports conv/square_act/avgpool | fc/relu/avgpool/fc/fc/argmax")
    conv, _, pool1 = model.prior
    fc4, _, pool6, fc7, fc8, _ = model.later
    M, m = conv.weights.shape[0], conv.weights.shape[1]
    h6 = tuple(pool6.params.get("shape") or ())
    sh = Shapes(batch, model.input_dim, M, m, int(pool1.params["w"]), tuple(fc4.weights.shape),
                h6, int(pool6.params["w"]), tuple(fc7.weights.shape), tuple(fc8.weights.shape))
    n6 = (h6[0] // sh.w6) * (h6[1] // sh.w6) if len(h6) == 2 else -1
    ok = (len(h6) == 2 and sh.o % sh.pw == 0 and sh.f4[1] == M * sh.s * sh.s
          and h6[0] * h6[1] == sh.f4[0] and h6[0] % sh.w6 == 0 and h6[1] % sh.w6 == 0
          and sh.f7[1] == n6 and sh.f8[1] == sh.f7[0])
    if not ok:
        raise PipelineError("model dimensions do not chain")
    return sh


# -- public parameters -------------------------------------------------------

@dataclass
class CapRelation:
    gadget: P.Gadget
    qap: P.QapInstance
    crs: P.CapCrs


@dataclass
class PipelineParams:
    config: PipelineConfig
    shapes: Shapes
    ck: MC.CommitKeyS1
    qmp: dict  # name -> QmpCrs
    cap: dict  # name -> CapRelation
    agg: dict  # padded tester count -> AggKey
    _digest: bytes = field(default=b"", repr=False)

    @property
    def digest(self) -> bytes:
        if not self._digest:
            parts = [json.dumps(asdict(self.config), sort_keys=True).encode(),
                     json.dumps(asdict(self.shapes), sort_keys=True).encode(), self.ck.digest]
            parts += [self.qmp[n].digest for n in QMP_NAMES]
            parts += [A.digest(self.cap[n].crs.to_bytes()) for n in CAP_NAMES]
            parts += [self.agg[n].digest for n in sorted(self.agg)]
            self._digest = A.digest(*parts)
        return self._digest

    @property
    def ncoef(self) -> int:
        return self.ck.d_c + 1


def build_gadgets(sh: Shapes, cfg: PipelineConfig) -> dict:
    z = sh.sizes()
    Qb = cfg.relu_bits
    return {
        "L2": P.gadget_square_act(z["Y1"]),
        "L3": P.gadget_avgpool_at_point(z["Y3"], sh.pw),
        "L3r": P.gadget_below(z["R3"], sh.pw * sh.pw),
        "L5": P.gadget_relu(z["Y4"], Qb),
        "L6": P.gadget_avgpool(z["Y6"], sh.w6, Qb),
        "Lo": P.gadget_argmax(sh.f8[0], Qb, sh.B),
    }


def setup(model: SplitModel, config: PipelineConfig = PipelineConfig(), rng=None) -> PipelineParams:
    sh = derive_shapes(model, config.batch)
    z = sh.sizes()
    n_c = max(z.values())
    ck = MC.s1_setup(2 * config.ring_degree - 2, n_c, rng)
    qmp = {n: Q.qmp_setup(sh.qmp_dim(n), rng=rng) for n in QMP_NAMES}
    cap = {}
    for name, g in build_gadgets(sh, config).items():
        qap = P.compile_qap(g.r1cs)
        cap[name] = CapRelation(g, qap, P.cap_setup(qap, rng))
    agg = {}
    n = 1
    while n <= G.padded(config.max_testers):
        agg[n] = G.agg_setup(n, rng)
        n *= 2
    return PipelineParams(config, sh, ck, qmp, cap, agg)


# -- model commitment --------------------------------------------------------

@dataclass
class ModelCommitment:
    model_hash: str
    prior_W: MC.DualCommitment
    later: dict  # "L4" / "L7" / "L8" -> G1 Pedersen commitment to the fc weights

    def to_json(self) -> dict:
        return {"model_hash": self.model_hash, "prior_W": _dual_hex(self.prior_W),
                "later": {k: _hex(v) for k, v in self.later.items()}}

    @staticmethod
    def from_json(d: dict) -> "ModelCommitment":
        return ModelCommitment(d["model_hash"], _dual_unhex(d["prior_W"]),
                               {k: A.g1_from_bytes(bytes.fromhex(v)) for k, v in d["later"].items()})


@dataclass
class ModelSecrets:
    r_prior: int  # developer
    r_later: dict  # provider


def model_hash(model: SplitModel) -> str:
    return hashlib.sha256(model_to_json(model).encode()).hexdigest()


def _flat(a) -> list:
    return [int(x) for x in np.asarray(a).reshape(-1)]


def _later_weights(model: SplitModel) -> dict:
    return {"L4": _flat(model.later[0].weights), "L7": _flat(model.later[3].weights),
            "L8": _flat(model.later[4].weights)}


def _vec_commit(ck: MC.CommitKeyS1, vals: Sequence[int], r: int) -> G1Point:
    return A.msm(ck.bases[:len(vals)] + [ck.h], [v % ORDER for v in vals] + [r])


def _vector_slots(vals: Sequence) -> BivariatePoly:
    return BivariatePoly(tuple(vals), 1, len(vals))


def _prior_w_poly(model: SplitModel) -> BivariatePoly:
    return _vector_slots([((w % ORDER,) if w % ORDER else ()) for w in _flat(model.prior[0].weights)])


def commit_model(params: PipelineParams, model: SplitModel, rng=None):
    derive_shapes(model, params.config.batch)
    r_prior = A.rand_scalar(rng)
    r_later = {k: A.rand_scalar(rng) for k in LATER_WEIGHTS}
    prior_W = MC.commit(_prior_w_poly(model), params.ck, r_prior)
    later = {k: _vec_commit(params.ck, w, r_later[k]) for k, w in _later_weights(model).items()}
    return ModelCommitment(model_hash(model), prior_W, later), ModelSecrets(r_prior, r_later)


# -- statements and proofs ---------------------------------------------------

@dataclass
class TesterStatement:
    index: int
    labels: list
    l_test: list
    correct_count: int
    commitments: list  # Step-1 polynomial commitments, STEP1_NAMES order
    eval_commitments: list
    k: int
    combine: str
    cap_D: dict  # relation -> D


@dataclass
class TesterProofs:
    step1: MC.EvalProof
    qmp: dict
    cap: dict  # empty for relations covered by an aggregate
    links: dict


@dataclass
class ProofBundle:
    model: ModelCommitment
    statements: list
    proofs: list
    aggregates: dict = field(default_factory=dict)


def step1_statement(params: PipelineParams, index: int, labels: Sequence[int]) -> bytes:
    return A.digest(b"qmpzk/step1", params.digest, struct.pack("<I", index),
                    b"".join(struct.pack("<q", int(x)) for x in labels))


def cap_io(name: str, st: TesterStatement) -> list:
    return [x % ORDER for x in st.l_test] if name == "Lo" else []


# -- link edges --------------------------------------------------------------
#
# An edge is a list of endpoints sharing named witness vectors.  Pedersen-type
# endpoints (evaluation commitments, CaP D slots, polynomial commitments,
# per-cell QMP slots) pin each of their columns; projected QMP rows do not,
# so their challenges absorb every pinned commitment of the edge.

@dataclass
class PedEnd:
    C: G1Point
    bases: list
    rand_base: G1Point
    refs: list  # per base: (vector, index) or None for a forced zero
    rand: str
    name: str = ""

    def anchor(self) -> bytes:
        return A.point_bytes(self.C)

    def refs_all(self):
        yield from (r for r in self.refs if r is not None)
        yield (self.rand, 0)

    def add_rows(self, lb, col, context: bytes) -> None:
        lb.pedersen_row(self.C, self.bases, [col(r) if r is not None else None for r in self.refs],
                        self.rand_base, col((self.rand, 0)), self.name)


@dataclass
class QmpEnd:
    crs: Q.QmpCrs
    pf: Q.QmpProof
    digest: bytes
    cells: dict  # tag -> {(i, j): (vector, index)}
    rand: str
    rows: str  # subset of "DWXY"
    per_cell: bool

    def anchor(self) -> bytes:
        return self.digest if self.per_cell else b""

    def refs_all(self):
        for tag in self.cells.values():
            yield from tag.values()
        yield (self.rand, 0)

    def add_rows(self, lb, col, context: bytes) -> None:
        cells = {t: {ij: col(r) for ij, r in c.items()} for t, c in self.cells.items()}
        cv = col((self.rand, 0))
        if self.per_cell:
            for tag in "WXY":
                if tag in self.rows:
                    Q.slot_cell_rows(lb, self.crs, self.pf, tag, cells[tag], cv)
            if "D" in self.rows:
                Q.link_rows(lb, self.crs, self.pf, cells, cv, self.digest, rows="D", context=context)
        else:
            Q.link_rows(lb, self.crs, self.pf, cells, cv, self.digest, rows=self.rows, context=context)


def build_edge(label: bytes, ends: Sequence) -> tuple:
    """Allocate one column per referenced (vector, index), then add rows."""
    sizes: dict = {}
    for e in ends:
        for name, i in e.refs_all():
            sizes[name] = max(sizes.get(name, 0), i + 1)
    lb = K.LinkBuilder(label)
    cols = {name: lb.columns(sizes[name], name) for name in sorted(sizes)}
    context = A.digest(label, *[e.anchor() for e in ends])

    def col(ref):
        return cols[ref[0]][ref[1]]

    for e in ends:
        e.add_rows(lb, col, context)
    return lb.build(), cols


def edge_witness(inst: K.LinkInstance, cols: dict, values: dict) -> list:
    wt = [0] * inst.n_cols
    for name, cl in cols.items():
        vals = values[name]
        if len(vals) < len(cl):
            raise PipelineError(f"witness vector {name} too short")
        for c, v in zip(cl, vals):
            wt[c] = v % ORDER
    return wt


def cap_end(rel: CapRelation, D: G1Point, refs: list, rand: str, name: str) -> PedEnd:
    if len(refs) != rel.crs.n_committed:
        raise PipelineError(f"{name}: committed block has {rel.crs.n_committed} entries, edge gives {len(refs)}")
    return PedEnd(D, list(rel.crs.k_query), rel.crs.g_eta_gamma, refs, rand, "cap-" + name)


def vec_end(ck: MC.CommitKeyS1, C: G1Point, refs: list, rand: str, name: str) -> PedEnd:
    return PedEnd(C, ck.bases[:len(refs)], ck.h, refs, rand, name)


def poly_end(ck: MC.CommitKeyS1, C: G1Point, vec: str, slots: int, rand: str, name: str) -> PedEnd:
    """Full polynomial commitment: column (vec, j * ncoef + i) is x^i y^j."""
    nco = ck.d_c + 1
    bases, refs = [], []
    for j in range(slots):
        for i in range(nco):
            bases.append(ck.bases[i * ck.n_c + j])
            refs.append((vec, j * nco + i))
    return PedEnd(C, bases, ck.h, refs, rand, name)


def _rng_refs(vec: str, idx) -> list:
    return [(vec, i) for i in idx]


def _fc_cells(out: int, inn: int, B: int, w: str, x, y: str) -> dict:
    """x is a vector name or a function (f * B + b) -> ref."""
    xref = (lambda i: (x, i)) if isinstance(x, str) else x
    return {"W": {(o, f): (w, o * inn + f) for o in range(out) for f in range(inn)},
            "X": {(f, b): xref(f * B + b) for f in range(inn) for b in range(B)},
            "Y": {(o, b): (y, o * B + b) for o in range(out) for b in range(B)}}


def _conv_cells(sh: Shapes) -> dict:
    lay = sh.layout
    m, n, o, B = sh.m, sh.n, sh.o, sh.B
    W = {(r, c): ("W1", k * m * m + lr * m + lc) for r, c, k, lr, lc in lay.idxW}
    X = {(r, c): ("X1", b * n * n + i * n + j) for r, c, b, i, j in lay.idxX}
    Y = {rc: ("Y1", ((k * B + b) * o + i) * o + j) for (k, b, i, j), rc in lay.y_cells()}
    return {"W": W, "X": X, "Y": Y}


EDGES = ("S1-L1", "L1-L2", "S1-L2", "L2-L3", "S1-L3", "S1-L3r", "L3-L4",
         "L4-D", "M-L4", "L4-L5", "L5-L6", "L6-L7", "L7-D", "M-L7", "L7-L8", "L8-D", "M-L8", "L8-Lo")
PRIOR_EDGES = EDGES[:6]
# the adjacent-layer pairs of the layer-wise relation diagram
ADJACENT = ("L1-L2", "L2-L3", "L4-L5", "L5-L6", "L6-L7", "L8-Lo")


class PublicView:
    """Everything the edge builders read, for one tester."""

    def __init__(self, params: PipelineParams, model: ModelCommitment, st: TesterStatement,
                 qmp: dict, qmp_digests: Optional[dict] = None):
        self.params, self.model, self.st, self.qmp = params, model, st, qmp
        self.qd = qmp_digests or {n: A.digest(pf.to_bytes()) for n, pf in qmp.items()}

    def label(self, edge: str) -> bytes:
        return b"edge/" + edge.encode() + b"/" + self.params.digest + struct.pack("<I", self.st.index)

    def qmp_end(self, name: str, cells: dict, rows: str) -> QmpEnd:
        crs = self.params.qmp[name]
        return QmpEnd(crs, self.qmp[name], self.qd[name], cells, "v:" + name, rows, name != "L1")

    def cap(self, name: str, refs: list) -> PedEnd:
        return cap_end(self.params.cap[name], self.st.cap_D[name], refs, "v:" + name, name)


def cap_refs(params: PipelineParams) -> dict:
    """Per CaP relation: the witness reference behind each committed slot."""
    sh, z, nco = params.shapes, params.shapes.sizes(), params.ncoef
    return {
        "L2": _rng_refs("Y1", range(z["Y1"])) + _rng_refs("Y2", range(z["Y2"])),
        "L3": _rng_refs("Y2", sh.l3_windows()) + _rng_refs("Y3", range(z["Y3"])) + _rng_refs("R3", range(z["R3"])),
        "L3r": [("PR", j * nco) for j in range(z["R3"])],
        "L5": _rng_refs("Y4", range(z["Y4"])) + _rng_refs("Y5", range(z["Y5"])),
        "L6": _rng_refs("Y5", sh.l6_windows()) + _rng_refs("Y6", range(z["Y6"])) + _rng_refs("R6", range(z["R6"])),
        "Lo": _rng_refs("Y8", sh.argmax_order()),
    }


def qmp_cells(params: PipelineParams) -> dict:
    """Per QMP relation: tag -> {(row, col): witness reference}."""
    sh = params.shapes
    return {
        "L1": _conv_cells(sh),
        "L4": _fc_cells(*sh.f4, sh.B, "W4", "X4", "Y4"),
        "L7": _fc_cells(*sh.f7, sh.B, "W7", "Y6", "Y7"),
        "L8": _fc_cells(*sh.f8, sh.B, "W8", "Y7", "Y8"),
    }


def edge_ends(edge: str, pv: PublicView) -> list:
    p, sh, st = pv.params, pv.params.shapes, pv.st
    ck, z, B = p.ck, sh.sizes(), sh.B
    ev = st.eval_commitments
    nco = p.ncoef

    def ev_end(i):
        name = STEP1_NAMES[i]
        return vec_end(ck, ev[i].C1, _rng_refs(name, range(z[name])), "r:" + name + "k", "eval-" + name)

    refs = cap_refs(p)
    fc = qmp_cells(p)
    x4 = sh.x4_slots()
    seam = _fc_cells(*sh.f4, B, "W4", lambda i: ("P3", x4[i] * nco), "Y4")

    def only(cells, tag):
        return {tag: cells[tag]}

    def model_end(name):
        w = "W" + name[1:]
        return vec_end(ck, pv.model.later[name], _rng_refs(w, range(z[w])), "r:M" + name[1:], "model-" + name)

    if edge == "S1-L1":
        return [ev_end(0), ev_end(1), ev_end(2), pv.qmp_end("L1", fc["L1"], "DWXY")]
    if edge == "L1-L2":
        return [pv.qmp_end("L1", only(fc["L1"], "Y"), "Y"), pv.cap("L2", refs["L2"])]
    if edge == "S1-L2":
        return [ev_end(3), pv.cap("L2", refs["L2"])]
    if edge == "L2-L3":
        return [pv.cap("L2", refs["L2"]), pv.cap("L3", refs["L3"])]
    if edge == "S1-L3":
        return [ev_end(4), ev_end(5), pv.cap("L3", refs["L3"])]
    if edge == "S1-L3r":
        return [poly_end(ck, st.commitments[5].C1, "PR", z["R3"], "r:PR", "poly-Rem"), pv.cap("L3r", refs["L3r"])]
    if edge == "L3-L4":
        return [poly_end(ck, st.commitments[4].C1, "P3", z["Y3"], "r:P3", "poly-Y3"),
                pv.qmp_end("L4", only(seam, "X"), "X")]
    if edge.endswith("-D"):
        name = edge[:-2]
        return [pv.qmp_end(name, fc[name], "DWXY")]
    if edge.startswith("M-"):
        name = edge[2:]
        return [model_end(name), pv.qmp_end(name, only(fc[name], "W"), "W")]
    if edge == "L4-L5":
        return [pv.qmp_end("L4", only(fc["L4"], "Y"), "Y"), pv.cap("L5", refs["L5"])]
    if edge == "L5-L6":
        return [pv.cap("L5", refs["L5"]), pv.cap("L6", refs["L6"])]
    if edge == "L6-L7":
        return [pv.cap("L6", refs["L6"]), pv.qmp_end("L7", only(fc["L7"], "X"), "X")]
    if edge == "L7-L8":
        return [pv.qmp_end("L7", only(fc["L7"], "Y"), "Y"), pv.qmp_end("L8", only(fc["L8"], "X"), "X")]
    if edge == "L8-Lo":
        return [pv.qmp_end("L8", only(fc["L8"], "Y"), "Y"), pv.cap("Lo", refs["Lo"])]
    raise PipelineError(f"unknown edge {edge}")


def edge_instance(edge: str, pv: PublicView) -> tuple:
    return build_edge(pv.label(edge), edge_ends(edge, pv))


# -- provers -----------------------------------------------------------------

Faults = Optional[dict]  # vector name -> function(list) -> list, for soundness tests


def _apply_faults(wit: dict, faults: Faults, names: Sequence[str]) -> None:
    for name in names:
        if faults and name in faults:
            wit[name] = [x % ORDER for x in faults[name](list(wit[name]))]


def _ring_prior(model: SplitModel, sh: Shapes, batch: np.ndarray, rp: RingParams, seed: bytes):
    """Ring tensors of the prior part, flattened in STEP1 order."""
    conv = model.prior[0].weights
    W = [RingElem((int(w),), rp, False) for w in conv.reshape(-1)]
    enc = stub_encrypt([[int(v) for v in batch.reshape(-1)]], rp, seed)[0]
    X = [e.lift() for e in enc]
    B, n, m, o, M = sh.B, sh.n, sh.m, sh.o, sh.M
    zero = RingElem((), rp, False)
    Y1 = []
    for k in range(M):
        for b in range(B):
            for i in range(o):
                for j in range(o):
                    acc = zero
                    for lr in range(m):
                        for lc in range(m):
                            w = W[k * m * m + lr * m + lc]
                            if w.degree >= 0:
                                acc = ring_add(acc, ring_mul_unreduced(w, X[b * n * n + (i + lr) * n + j + lc]))
                    Y1.append(acc)
    Y2 = [ring_add(ring_mul_unreduced(y, y), y) for y in Y1]
    area = sh.pw * sh.pw
    Y3, R3 = [], []
    win = sh.l3_windows()
    for q in range(len(win) // area):
        s = zero
        for i in win[q * area:(q + 1) * area]:
            s = ring_add(s, Y2[i])
        y3 = tuple(c // area for c in s.coeffs)
        Y3.append(RingElem(y3, rp, False))
        R3.append(RingElem(tuple(c - area * d for c, d in zip(s.coeffs, y3)), rp, False))
    return [W, X, Y1, Y2, Y3, R3]


def _poly(elems: Sequence[RingElem]) -> BivariatePoly:
    slots = []
    for e in elems:
        c = list(e.coeffs)
        while c and c[-1] == 0:
            c.pop()
        slots.append(tuple(x % ORDER for x in c))
    return _vector_slots(slots)


def _coeff_table(elems: Sequence[RingElem], nco: int) -> list:
    out = []
    for e in elems:
        c = [x % ORDER for x in e.coeffs][:nco]
        out += c + [0] * (nco - len(c))
    return out


@dataclass
class PriorResult:
    commitments: list
    eval_commitments: list
    k: int
    combine: str
    step1: MC.EvalProof
    qmp: dict
    cap: dict
    cap_D: dict
    links: dict
    handoff: dict  # what the provider receives: Y3 ring coefficients, their randomness, plaintext


def _mat(L: int, rows: int, cols: int, vals: Sequence[int]) -> list:
    m = [[0] * L for _ in range(L)]
    for i in range(rows):
        for j in range(cols):
            m[i][j] = vals[i * cols + j] % ORDER
    return m


def _cap_prove(name: str, rel: CapRelation, w: list, rng, check: bool):
    v = A.rand_scalar(rng)
    r, s = A.rand_scalar(rng), A.rand_scalar(rng)
    try:
        pf = P.cap_prove(rel.crs, rel.qap, w, rng, randomizers=(r, s, v), check=check)
    except A.ArgumentError as e:
        raise PipelineError(f"relation {name}: {e}")
    return pf, v


def _prove_edges(edges: Sequence[str], pv: PublicView, wit: dict, rng, check: bool) -> dict:
    out = {}
    for e in edges:
        inst, cols = edge_instance(e, pv)
        try:
            out[e] = K.link_prove(inst, edge_witness(inst, cols, wit), rng, check=check)
        except K.LinkError as err:
            raise PipelineError(f"edge {e}: {err}")
    return out


def prove_prior(params: PipelineParams, model: SplitModel, secrets: ModelSecrets, batch, labels,
                index: int = 0, rng=None, faults: Faults = None) -> PriorResult:
    """Developer side: Step-1 evaluation proof over the ring tensors, the
    conv QMP and the activation / pool proofs at k, and their links."""
    sh, cfg = params.shapes, params.config
    check = not faults
    x = np.asarray(batch, dtype=np.int64)
    if x.shape != (sh.B, sh.n, sh.n):
        raise PipelineError(f"batch shape {x.shape}, expected {(sh.B, sh.n, sh.n)}")
    if x.min() < 0:
        raise PipelineError("inputs must be non-negative quantised values")
    ring = _ring_prior(model, sh, x, cfg.ring, b"tester%d" % index)
    polys = [_poly(r) for r in ring]
    polys[0] = _prior_w_poly(model)
    rands = [secrets.r_prior] + [A.rand_scalar(rng) for _ in range(5)]
    stmt = step1_statement(params, index, labels)
    try:
        st1, op = MC.prove_eval(params.ck, polys, rands, stmt, combine="rlc", rng=rng, check=check)
    except (MC.CommitError, A.ArgumentError) as e:
        raise PipelineError(f"relation S1: {e}")
    wit = {name: list(v) for name, v in zip(STEP1_NAMES, op.evaluations)}
    for name, r in zip(STEP1_NAMES, op.eval_rands):
        wit["r:" + name + "k"] = [r]
    nco = params.ncoef
    wit["P3"], wit["PR"] = _coeff_table(ring[4], nco), _coeff_table(ring[5], nco)
    wit["r:P3"], wit["r:PR"] = [rands[4]], [rands[5]]
    _apply_faults(wit, faults, STEP1_NAMES)

    # conv at the evaluated point
    L1 = params.qmp["L1"]
    cells = _conv_cells(sh)
    Wm, Xm, Ym = ([[0] * L1.L for _ in range(L1.L)] for _ in range(3))
    for m_, tag in ((Wm, "W"), (Xm, "X"), (Ym, "Y")):
        for (i, j), (name, idx) in cells[tag].items():
            m_[i][j] = wit[name][idx]
    v1 = A.rand_scalar(rng)
    try:
        q1 = Q.qmp_prove(L1, Wm, Xm, Ym, rng, check=check,
                         randomizers=(A.rand_scalar(rng), A.rand_scalar(rng), v1))
    except A.ArgumentError as e:
        raise PipelineError(f"relation L1: {e}")
    wit["v:L1"] = [v1]

    caps, cap_D = {}, {}
    z = sh.sizes()
    win = sh.l3_windows()
    r3c = [e.coeffs[0] if e.coeffs else 0 for e in ring[5]]
    assign = {
        "L2": lambda g: g.assign(wit["Y1"], wit["Y2"]),
        "L3": lambda g: g.assign([wit["Y2"][i] for i in win] + wit["Y3"] + wit["R3"]),
        "L3r": lambda g: g.assign([wit["PR"][j * nco] for j in range(z["R3"])]),
    }
    for name in ("L2", "L3", "L3r"):
        rel = params.cap[name]
        try:
            w = assign[name](rel.gadget)
        except P.GadgetError as e:
            if check:
                raise PipelineError(f"relation {name}: {e}")
            w = [0] * rel.gadget.r1cs.num_vars
            w[0] = 1
        pf, v = _cap_prove(name, rel, w, rng, check)
        caps[name], cap_D[name] = pf, pf.D
        wit["v:" + name] = [v]
    if check and r3c != [wit["PR"][j * nco] for j in range(z["R3"])]:
        raise PipelineError("remainder table mismatch")

    partial = TesterStatement(index, list(map(int, labels)), [], 0, st1.commitments, st1.eval_commitments,
                              st1.k, st1.combine, cap_D)
    pv = PublicView(params, ModelCommitment("", MC.DualCommitment(A.G1_ID, A.G1_ID), {}), partial, {"L1": q1})
    links = _prove_edges(PRIOR_EDGES, pv, wit, rng, check)
    y3 = [e.coeffs[0] if e.coeffs else 0 for e in ring[4]]
    handoff = {"P3": wit["P3"], "r:P3": wit["r:P3"], "y3": y3}
    return PriorResult(st1.commitments, st1.eval_commitments, st1.k, st1.combine, st1.proof,
                       {"L1": q1}, caps, cap_D, links, handoff)


@dataclass
class LaterResult:
    l_test: list
    correct_count: int
    qmp: dict
    cap: dict
    cap_D: dict
    links: dict


def later_plain(model: SplitModel, sh: Shapes, y3: Sequence[int]) -> dict:
    """Plaintext LaterNet on the flattened prior output, as field-ready
    integer vectors in the pipeline's orderings."""
    B = sh.B
    x4 = sh.x4_slots()
    X4 = np.array([y3[x4[i]] for i in range(len(x4))], dtype=object).reshape(sh.f4[1], B)
    W4 = np.asarray(model.later[0].weights, dtype=object)
    Y4 = W4.dot(X4)
    Y5 = np.maximum(Y4, 0)
    area = sh.w6 * sh.w6
    flat5 = Y5.reshape(-1)
    win = sh.l6_windows()
    sums = [sum(flat5[i] for i in win[q * area:(q + 1) * area]) for q in range(len(win) // area)]
    Y6 = [s // area for s in sums]
    R6 = [s - area * y for s, y in zip(sums, Y6)]
    Y6m = np.array(Y6, dtype=object).reshape(-1, B)
    W7 = np.asarray(model.later[3].weights, dtype=object)
    W8 = np.asarray(model.later[4].weights, dtype=object)
    Y7 = W7.dot(Y6m)
    Y8 = W8.dot(Y7)
    l_test = []
    for b in range(B):
        col = [int(Y8[c, b]) for c in range(sh.f8[0])]
        l_test.append(col.index(max(col)))
    vec = lambda a: [int(v) for v in np.asarray(a).reshape(-1)]
    return {"X4": vec(X4), "Y4": vec(Y4), "Y5": vec(Y5), "Y6": Y6, "R6": R6, "Y7": vec(Y7), "Y8": vec(Y8),
            "W4": vec(W4), "W7": vec(W7), "W8": vec(W8), "l_test": l_test}


def prove_later(params: PipelineParams, model: SplitModel, secrets: ModelSecrets, prior: PriorResult,
                labels, index: int = 0, rng=None, faults: Faults = None) -> LaterResult:
    """Provider side: the fc layers as QMP matmuls, relu / pool / argmax as
    CaP proofs, the seam link to the Step-1 commitment of Y3 and the model
    commitment links."""
    sh = params.shapes
    check = not faults
    plain = later_plain(model, sh, prior.handoff["y3"])
    wit = {k: [x % ORDER for x in v] for k, v in plain.items() if k != "l_test"}
    wit["P3"], wit["r:P3"] = prior.handoff["P3"], prior.handoff["r:P3"]
    for k in LATER_WEIGHTS:
        wit["r:M" + k[1:]] = [secrets.r_later[k]]
    _apply_faults(wit, faults, ("X4", "Y4", "Y5", "Y6", "R6", "Y7", "Y8", "W4", "W7", "W8"))
    l_test = list(plain["l_test"])
    if faults and "l_test" in faults:
        l_test = faults["l_test"](l_test)
    truth = [int(x) for x in labels]
    count = sum(int(a == b) for a, b in zip(l_test, truth))

    qmps = {}
    dims = {"L4": (sh.f4, "W4", "X4", "Y4"), "L7": (sh.f7, "W7", "Y6", "Y7"), "L8": (sh.f8, "W8", "Y7", "Y8")}
    for name, ((out, inn), w, x, y) in dims.items():
        crs = params.qmp[name]
        L, B = crs.L, sh.B
        v = A.rand_scalar(rng)
        try:
            qmps[name] = Q.qmp_prove(crs, _mat(L, out, inn, wit[w]), _mat(L, inn, B, wit[x]), _mat(L, out, B, wit[y]),
                                     rng, check=check, randomizers=(A.rand_scalar(rng), A.rand_scalar(rng), v))
        except A.ArgumentError as e:
            raise PipelineError(f"relation {name}: {e}")
        wit["v:" + name] = [v]

    caps, cap_D = {}, {}
    win = sh.l6_windows()
    order = sh.argmax_order()
    assign = {
        "L5": lambda g: g.assign(wit["Y4"], wit["Y5"]),
        "L6": lambda g: g.assign([wit["Y5"][i] for i in win], wit["Y6"] + wit["R6"]),
        "Lo": lambda g: g.assign([wit["Y8"][i] for i in order], l_test),
    }
    for name in ("L5", "L6", "Lo"):
        rel = params.cap[name]
        try:
            w = assign[name](rel.gadget)
        except P.GadgetError as e:
            if check:
                raise PipelineError(f"relation {name}: {e}")
            w = [0] * rel.gadget.r1cs.num_vars
            w[0] = 1
        if check and not rel.gadget.r1cs.is_satisfied(w):
            raise PipelineError(f"relation {name}: claimed outputs do not satisfy the gadget")
        pf, v = _cap_prove(name, rel, w, rng, check)
        caps[name], cap_D[name] = pf, pf.D
        wit["v:" + name] = [v]

    st = TesterStatement(index, truth, l_test, count, prior.commitments, prior.eval_commitments, prior.k,
                         prior.combine, {**prior.cap_D, **cap_D})
    mc = ModelCommitment("", MC.DualCommitment(A.G1_ID, A.G1_ID),
                         {k: _vec_commit(params.ck, wit["W" + k[1:]], secrets.r_later[k]) for k in LATER_WEIGHTS})
    pv = PublicView(params, mc, st, {**prior.qmp, **qmps})
    links = _prove_edges(EDGES[6:], pv, wit, rng, check)
    return LaterResult(l_test, count, qmps, caps, cap_D, links)


def prove_tester(params: PipelineParams, model: SplitModel, secrets: ModelSecrets, batch, labels,
                 index: int = 0, rng=None, faults: Faults = None) -> tuple:
    """Both parts for one tester's batch: (TesterStatement, TesterProofs)."""
    pr = prove_prior(params, model, secrets, batch, labels, index, rng, faults)
    lr = prove_later(params, model, secrets, pr, labels, index, rng, faults)
    st = TesterStatement(index, [int(x) for x in labels], lr.l_test, lr.correct_count, pr.commitments,
                         pr.eval_commitments, pr.k, pr.combine, {**pr.cap_D, **lr.cap_D})
    return st, TesterProofs(pr.step1, {**pr.qmp, **lr.qmp}, {**pr.cap, **lr.cap}, {**pr.links, **lr.links})


def prove_bundle(params: PipelineParams, model: SplitModel, mc: ModelCommitment, secrets: ModelSecrets,
                 batches: Sequence, rng=None, aggregate: bool = True) -> ProofBundle:
    """batches: one (inputs, labels) pair per tester."""
    sts, pfs = [], []
    for i, (x, y) in enumerate(batches):
        st, pf = prove_tester(params, model, secrets, x, y, i, rng)
        sts.append(st)
        pfs.append(pf)
    b = ProofBundle(mc, sts, pfs)
    return aggregate_bundle(params, b) if aggregate else b


def aggregate_bundle(params: PipelineParams, bundle: ProofBundle) -> ProofBundle:
    """Replace every tester's CaP proofs by one aggregate per relation."""
    n_t = len(bundle.statements)
    key = params.agg.get(G.padded(n_t))
    if key is None:
        raise PipelineError(f"no aggregation key for {n_t} testers (setup max {params.config.max_testers})")
    aggs = dict(bundle.aggregates)
    for name in CAP_NAMES:
        if not all(name in pf.cap for pf in bundle.proofs):
            continue
        rel = params.cap[name]
        aggs[name] = G.agg_prove(key, rel.crs.vk, [cap_io(name, st) for st in bundle.statements],
                                 [pf.cap[name] for pf in bundle.proofs])
    proofs = [TesterProofs(pf.step1, pf.qmp, {k: v for k, v in pf.cap.items() if k not in aggs}, pf.links)
              for pf in bundle.proofs]
    return ProofBundle(bundle.model, bundle.statements, proofs, aggs)


# -- verification ------------------------------------------------------------

@dataclass
class Verdict:
    relation: str
    ok: bool
    detail: str = ""


@dataclass
class Report:
    verdicts: list

    @property
    def ok(self) -> bool:
        return bool(self.verdicts) and all(v.ok for v in self.verdicts)

    @property
    def failures(self) -> list:
        return [v for v in self.verdicts if not v.ok]

    def lines(self) -> list:
        return [f"{'ok  ' if v.ok else 'FAIL'} {v.relation}" + (f"  ({v.detail})" if v.detail else "")
                for v in self.verdicts]


class VerdictCache:
    """Verdicts keyed by the digests of everything a relation reads.  Object
    digests are memoised by identity; bundle objects are never mutated in
    place (mutate() copies), so identity implies equal content."""

    def __init__(self):
        self.verdicts: dict = {}
        self._memo: dict = {}
        self.hits = 0

    def digest_of(self, obj, to_bytes: Callable) -> bytes:
        hit = self._memo.get(id(obj))
        if hit is not None and hit[0] is obj:
            return hit[1]
        d = A.digest(to_bytes(obj))
        self._memo[id(obj)] = (obj, d)
        return d

    def run(self, key: bytes, fn: Callable) -> bool:
        if key in self.verdicts:
            self.hits += 1
            return self.verdicts[key]
        ok = bool(fn())
        self.verdicts[key] = ok
        return ok


def _items(cache: VerdictCache, params: PipelineParams, model: ModelCommitment, st: TesterStatement,
           pf: TesterProofs) -> dict:
    it = {"hdr": A.digest(json.dumps([st.index, st.labels, st.l_test, st.correct_count]).encode()),
          "k": A.scalar_to_bytes(st.k % ORDER) + st.combine.encode(),
          "M:prior": model.prior_W.to_bytes()}
    for k in LATER_WEIGHTS:
        it["M:" + k] = A.point_bytes(model.later[k]) if k in model.later else b"missing"
    for i, c in enumerate(st.commitments):
        it[f"C{i}"] = c.to_bytes()
    for i, c in enumerate(st.eval_commitments):
        it[f"E{i}"] = c.to_bytes()
    for n, D in st.cap_D.items():
        it["D:" + n] = A.point_bytes(D)
    for n, q in pf.qmp.items():
        it["Q:" + n] = cache.digest_of(q, Q.QmpProof.to_bytes)
    return it


EDGE_DEPS = {
    "S1-L1": ["E0", "E1", "E2", "Q:L1"], "L1-L2": ["Q:L1", "D:L2"], "S1-L2": ["E3", "D:L2"],
    "L2-L3": ["D:L2", "D:L3"], "S1-L3": ["E4", "E5", "D:L3"], "S1-L3r": ["C5", "D:L3r"],
    "L3-L4": ["C4", "Q:L4"], "L4-D": ["Q:L4"], "M-L4": ["M:L4", "Q:L4"], "L4-L5": ["Q:L4", "D:L5"],
    "L5-L6": ["D:L5", "D:L6"], "L6-L7": ["D:L6", "Q:L7"], "L7-D": ["Q:L7"], "M-L7": ["M:L7", "Q:L7"],
    "L7-L8": ["Q:L7", "Q:L8"], "L8-D": ["Q:L8"], "M-L8": ["M:L8", "Q:L8"], "L8-Lo": ["Q:L8", "D:Lo"],
}


def _key(*parts: bytes) -> bytes:
    return A.digest(*parts)


def _shape_ok(params: PipelineParams, st: TesterStatement, pf: TesterProofs) -> str:
    B, classes = params.shapes.B, params.shapes.f8[0]
    if len(st.commitments) != 6 or len(st.eval_commitments) != 6:
        return "Step-1 commitment count"
    if sorted(st.cap_D) != sorted(CAP_NAMES):
        return "CaP commitment set"
    if len(st.labels) != B or len(st.l_test) != B:
        return "label count"
    if any(not (0 <= int(x) < classes) for x in st.l_test):
        return "predicted label out of range"
    if sorted(pf.qmp) != sorted(QMP_NAMES):
        return "QMP proof set"
    return ""


def verify_bundle(params: PipelineParams, bundle: ProofBundle, cache: Optional[VerdictCache] = None) -> Report:
    """Check every relation and every edge; never raises on bad bundles."""
    cache = cache or VerdictCache()
    out: list = []

    def record(name, key, fn, detail=""):
        try:
            ok = cache.run(key, fn)
        except Exception as e:  # a malformed field must yield a verdict, not a crash
            ok, detail = False, f"{type(e).__name__}: {e}"
        out.append(Verdict(name, ok, "" if ok else detail))

    model = bundle.model
    if len(bundle.statements) != len(bundle.proofs) or not bundle.statements:
        return Report([Verdict("bundle", False, "statement / proof count mismatch")])
    for t, (st, pf) in enumerate(zip(bundle.statements, bundle.proofs)):
        tag = f"t{t}/"
        if st.index != t:
            out.append(Verdict(tag + "index", False, "tester index out of order"))
            continue
        bad = _shape_ok(params, st, pf)
        if bad:
            out.append(Verdict(tag + "shape", False, bad))
            continue
        it = _items(cache, params, model, st, pf)
        record(tag + "model", _key(b"model", it["C0"], it["M:prior"]),
               lambda: st.commitments[0] == model.prior_W, "Step-1 weight commitment is not the model commitment")
        s1_bytes = pf.step1.to_bytes()
        record(tag + "S1", _key(b"S1", params.digest, it["hdr"], it["k"], s1_bytes,
                                *[it[f"C{i}"] for i in range(6)], *[it[f"E{i}"] for i in range(6)]),
               lambda: st.combine == "rlc" and MC.verify_eval(
                   params.ck, MC.EvalStatement(st.commitments, st.eval_commitments, st.k, pf.step1, st.combine),
                   step1_statement(params, st.index, st.labels)), "evaluation proof")
        record(tag + "count", _key(b"count", it["hdr"]),
               lambda: st.correct_count == sum(int(int(a) == int(b)) for a, b in zip(st.l_test, st.labels)),
               "correct_count does not match the labels")
        for n in QMP_NAMES:
            record(tag + n, _key(b"qmp", n.encode(), it["Q:" + n]),
                   lambda n=n: Q.qmp_verify(params.qmp[n], pf.qmp[n]), "QMP proof")
        for n in CAP_NAMES:
            if n in pf.cap:
                cp = pf.cap[n]
                record(tag + n, _key(b"cap", n.encode(), it["D:" + n], cp.to_bytes(), it["hdr"]),
                       lambda n=n, cp=cp: cp.D == st.cap_D[n] and P.cap_verify(params.cap[n].crs.vk, cap_io(n, st), cp),
                       "CaP proof")
            elif n not in bundle.aggregates:
                out.append(Verdict(tag + n, False, "missing CaP proof and no aggregate"))
        pv = None
        for e in EDGES:
            lp = pf.links.get(e)
            if lp is None:
                out.append(Verdict(tag + "edge " + e, False, f"missing link proof for edge {e}"))
                continue
            key = _key(b"edge", e.encode(), params.digest, struct.pack("<I", t), lp.to_bytes(),
                       *[it[d] for d in EDGE_DEPS[e]])

            def check_edge(e=e, lp=lp):
                nonlocal pv
                if pv is None:
                    pv = PublicView(params, model, st, pf.qmp,
                                    {n: it["Q:" + n] for n in QMP_NAMES})
                inst, _ = edge_instance(e, pv)
                return K.link_verify(inst, lp)

            record(tag + "edge " + e, key, check_edge, "link proof")
        extra = sorted(set(pf.links) - set(EDGES))
        if extra:
            out.append(Verdict(tag + "edges", False, f"unknown edges {extra}"))
    for n, agg in sorted(bundle.aggregates.items()):
        if n not in CAP_NAMES:
            out.append(Verdict("agg/" + n, False, "unknown relation"))
            continue
        sts = bundle.statements
        key = params.agg.get(G.padded(len(sts)))
        parts = [A.point_bytes(st.cap_D.get(n, A.G1_ID)) + json.dumps(st.l_test).encode() for st in sts]
        record("agg/" + n, _key(b"agg", n.encode(), params.digest, agg.to_bytes(), *parts),
               lambda n=n, agg=agg, key=key: key is not None and G.agg_verify(
                   params.cap[n].crs.vk, key, [cap_io(n, st) for st in sts], agg, [st.cap_D[n] for st in sts]),
               "aggregate proof")
    return Report(out)


# -- mutations (soundness fuzzing) -------------------------------------------

GT_ONE_STEP = None


def _bump(x):
    global GT_ONE_STEP
    if isinstance(x, bool):
        return not x
    if isinstance(x, int):
        return (x + 1) % ORDER
    if isinstance(x, A.Gt):
        if GT_ONE_STEP is None:
            GT_ONE_STEP = A.gt_generator()
        return x * GT_ONE_STEP
    if isinstance(x, G1Point):
        return x + A.G1
    if isinstance(x, A.G2Point):
        return x + A.G2
    if isinstance(x, str):
        return "sum" if x != "sum" else "rlc"
    if isinstance(x, tuple):
        return (_bump(x[0]),) + x[1:]
    raise TypeError(type(x))


def _groups(b: ProofBundle) -> list:
    """(description, size, setter) triples; setter(i) returns a mutated copy."""
    gs = []

    def rep(obj, **kw):
        new = copy.copy(obj)
        for k, v in kw.items():
            setattr(new, k, v)
        return new

    def bundle_with(**kw):
        return rep(b, **kw)

    def set_stmt(t, st):
        sts = list(b.statements)
        sts[t] = st
        return bundle_with(statements=sts)

    def set_proofs(t, pf):
        pfs = list(b.proofs)
        pfs[t] = pf
        return bundle_with(proofs=pfs)

    mc = b.model
    gs.append(("model prior_W", 2, lambda i: bundle_with(model=rep(mc, prior_W=_dual_bump(mc.prior_W, i)))))
    for k in sorted(mc.later):
        gs.append((f"model {k}", 1, lambda i, k=k: bundle_with(model=rep(mc, later={**mc.later, k: _bump(mc.later[k])}))))
    for t, (st, pf) in enumerate(zip(b.statements, b.proofs)):
        for fld in ("labels", "l_test"):
            vals = getattr(st, fld)
            gs.append((f"t{t} {fld}", len(vals), lambda i, st=st, t=t, fld=fld: set_stmt(
                t, rep(st, **{fld: _list_set(getattr(st, fld), i, int(getattr(st, fld)[i]) + 1)}))))
        gs.append((f"t{t} correct_count", 1, lambda i, st=st, t=t: set_stmt(t, rep(st, correct_count=st.correct_count + 1))))
        gs.append((f"t{t} k", 1, lambda i, st=st, t=t: set_stmt(t, rep(st, k=_bump(st.k)))))
        gs.append((f"t{t} combine", 1, lambda i, st=st, t=t: set_stmt(t, rep(st, combine=_bump(st.combine)))))
        for fld in ("commitments", "eval_commitments"):
            cs = getattr(st, fld)
            gs.append((f"t{t} {fld}", 2 * len(cs), lambda i, st=st, t=t, fld=fld: set_stmt(t, rep(st, **{
                fld: _list_set(getattr(st, fld), i // 2, _dual_bump(getattr(st, fld)[i // 2], i % 2))}))))
        names = sorted(st.cap_D)
        gs.append((f"t{t} cap_D", len(names), lambda i, st=st, t=t, names=names: set_stmt(
            t, rep(st, cap_D={**st.cap_D, names[i]: _bump(st.cap_D[names[i]])}))))
        s1 = pf.step1
        s1f = ["C_T.C1", "C_T.C2", "e", "sigma", "tau"]
        gs.append((f"t{t} step1", 5, lambda i, pf=pf, t=t, s1=s1: set_proofs(t, rep(pf, step1=_eval_bump(s1, i)))))
        for n in sorted(pf.qmp):
            q = pf.qmp[n]
            L = q.L
            for mat in ("A", "B", "C", "D", "d1", "d2", "d3"):
                gs.append((f"t{t} qmp {n}.{mat}", L * L, lambda i, pf=pf, t=t, n=n, q=q, mat=mat, L=L: set_proofs(
                    t, rep(pf, qmp={**pf.qmp, n: rep(q, **{mat: _mat_bump(getattr(q, mat), i // L, i % L)})}))))
        for n in sorted(pf.cap):
            c = pf.cap[n]
            gs.append((f"t{t} cap {n}", 4, lambda i, pf=pf, t=t, n=n, c=c: set_proofs(
                t, rep(pf, cap={**pf.cap, n: rep(c, **{"ABCD"[i]: _bump(getattr(c, "ABCD"[i]))})}))))
        for e in sorted(pf.links):
            lp = pf.links[e]
            size = len(lp.R) + len(lp.z) + 1

            def set_link(i, pf=pf, t=t, e=e, lp=lp):
                if i < len(lp.R):
                    new = K.LinkProof(_list_set(lp.R, i, _bump(lp.R[i])), lp.e, lp.z)
                elif i < len(lp.R) + len(lp.z):
                    j = i - len(lp.R)
                    new = K.LinkProof(lp.R, lp.e, _list_set(lp.z, j, _bump(lp.z[j])))
                else:
                    new = K.LinkProof(lp.R, _bump(lp.e), lp.z)
                return set_proofs(t, rep(pf, links={**pf.links, e: new}))

            gs.append((f"t{t} link {e}", size, set_link))
    for n in sorted(b.aggregates):
        agg = b.aggregates[n]
        flds = ["I_AB", "I_C", "I_D", "A0", "B0", "C0", "D0", "C_AB0", "C_AB1", "C_C0", "C_C1", "C_D0", "C_D1"]

        def set_agg(i, n=n, agg=agg, flds=flds):
            if i < len(flds):
                f = flds[i]
                if f[-1] in "01" and f.startswith("C_"):
                    pair = list(getattr(agg, f[:-1]))
                    pair[int(f[-1])] = _bump(pair[int(f[-1])])
                    new = rep(agg, **{f[:-1]: tuple(pair)})
                else:
                    new = rep(agg, **{f: _bump(getattr(agg, f))})
            else:
                j = i - len(flds)
                names = list(G.Round.__dataclass_fields__)
                r, fi = divmod(j, len(names))
                rd = agg.rounds[r]
                f = names[fi]
                new = rep(agg, rounds=_list_set(agg.rounds, r, rep(rd, **{f: _bump(getattr(rd, f))})))
            return bundle_with(aggregates={**b.aggregates, n: new})

        gs.append((f"agg {n}", len(flds) + len(G.Round.__dataclass_fields__) * len(agg.rounds), set_agg))
    return gs


def _list_set(xs, i, v) -> list:
    out = list(xs)
    out[i] = v
    return out


def _dual_bump(c: MC.DualCommitment, which: int) -> MC.DualCommitment:
    return MC.DualCommitment(c.C1 + A.G1, c.C2) if which == 0 else MC.DualCommitment(c.C1, c.C2 + A.G1)


def _eval_bump(p: MC.EvalProof, i: int) -> MC.EvalProof:
    if i < 2:
        return MC.EvalProof(_dual_bump(p.C_T, i), p.e, p.sigma, p.tau)
    vals = [p.e, p.sigma, p.tau]
    vals[i - 2] = _bump(vals[i - 2])
    return MC.EvalProof(p.C_T, *vals)


def _mat_bump(m, i, j) -> list:
    out = list(m)
    row = list(m[i])
    row[j] = _bump(row[j])
    out[i] = row
    return out


def mutation_groups(bundle: ProofBundle) -> list:
    return [(d, n) for d, n, _ in _groups(bundle)]


def random_mutation(bundle: ProofBundle, rng: random.Random) -> tuple:
    """Pick a field group uniformly, then a field in it; returns
    (description, mutated bundle).  The original is left untouched."""
    gs = [g for g in _groups(bundle) if g[1] > 0]
    desc, n, setter = gs[rng.randrange(len(gs))]
    i = rng.randrange(n)
    return f"{desc}[{i}]", setter(i)


def drop_edge(bundle: ProofBundle, tester: int, edge: str) -> ProofBundle:
    pfs = list(bundle.proofs)
    pf = copy.copy(pfs[tester])
    pf.links = {k: v for k, v in pf.links.items() if k != edge}
    pfs[tester] = pf
    return ProofBundle(bundle.model, bundle.statements, pfs, bundle.aggregates)


# -- files -------------------------------------------------------------------

def _hex(p) -> str:
    return A.point_bytes(p).hex()


def _dual_hex(c: MC.DualCommitment) -> list:
    return [_hex(c.C1), _hex(c.C2)]


def _dual_unhex(v) -> MC.DualCommitment:
    return MC.DualCommitment(A.g1_from_bytes(bytes.fromhex(v[0])), A.g1_from_bytes(bytes.fromhex(v[1])))


class BundleError(A.ArgumentError):
    """Unreadable or structurally broken files (distinct from a rejection)."""


class ManifestMismatch(BundleError):
    """A file's bytes differ from the manifest's hash: a rejection."""


def _sha(b: bytes) -> str:
    return hashlib.sha256(b).hexdigest()


def _write_files(root: str, files: dict, meta: dict) -> None:
    os.makedirs(root, exist_ok=True)
    for name, data in files.items():
        with open(os.path.join(root, name), "wb") as f:
            f.write(data)
    manifest = dict(meta, files={n: _sha(d) for n, d in sorted(files.items())})
    with open(os.path.join(root, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)


def _read_files(root: str) -> tuple:
    try:
        with open(os.path.join(root, "manifest.json")) as f:
            manifest = json.load(f)
        files = {}
        for name, h in manifest["files"].items():
            if "/" in name or name.startswith("."):
                raise BundleError(f"bad file name {name}")
            with open(os.path.join(root, name), "rb") as f:
                files[name] = f.read()
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise BundleError(f"cannot read {root}: {e}")
    bad = [n for n, h in manifest["files"].items() if _sha(files[n]) != h]
    if bad:
        raise ManifestMismatch(f"hash mismatch: {', '.join(sorted(bad))}")
    return manifest, files


def write_bundle(root: str, params: PipelineParams, bundle: ProofBundle) -> None:
    sts = []
    files = {}
    for st, pf in zip(bundle.statements, bundle.proofs):
        t = st.index
        sts.append({"index": t, "labels": st.labels, "l_test": st.l_test, "correct_count": st.correct_count,
                    "commitments": [_dual_hex(c) for c in st.commitments],
                    "eval_commitments": [_dual_hex(c) for c in st.eval_commitments],
                    "k": hex(st.k), "combine": st.combine,
                    "cap_D": {n: _hex(d) for n, d in sorted(st.cap_D.items())}})
        files[f"t{t}.step1.bin"] = pf.step1.to_bytes()
        for n, q in pf.qmp.items():
            files[f"t{t}.{n}.qmp"] = q.to_bytes()
        for n, c in pf.cap.items():
            files[f"t{t}.{n}.cap"] = c.to_bytes()
        for e, lp in pf.links.items():
            files[f"t{t}.{e}.link"] = lp.to_bytes()
    for n, agg in bundle.aggregates.items():
        files[f"agg.{n}.bin"] = agg.to_bytes()
    doc = {"format": FORMAT, "model": bundle.model.to_json(), "testers": sts}
    files["statements.json"] = json.dumps(doc, indent=1, sort_keys=True).encode()
    _write_files(root, files, {"format": FORMAT, "params": params.digest.hex(),
                               "model_hash": bundle.model.model_hash})


def read_bundle(root: str, params: Optional[PipelineParams] = None) -> ProofBundle:
    manifest, files = _read_files(root)
    if manifest.get("format") != FORMAT:
        raise BundleError("not a proof bundle")
    if params is not None and manifest.get("params") != params.digest.hex():
        raise ManifestMismatch("bundle was made under different public parameters")
    try:
        doc = json.loads(files["statements.json"])
        mc = ModelCommitment.from_json(doc["model"])
        sts, pfs = [], []
        dec = A.PointDecoder()
        for d in doc["testers"]:
            t = int(d["index"])
            g1 = lambda h: A.g1_from_bytes(bytes.fromhex(h))
            sts.append(TesterStatement(t, [int(x) for x in d["labels"]], [int(x) for x in d["l_test"]],
                                       int(d["correct_count"]), [_dual_unhex(c) for c in d["commitments"]],
                                       [_dual_unhex(c) for c in d["eval_commitments"]], int(d["k"], 16),
                                       str(d["combine"]), {n: g1(h) for n, h in d["cap_D"].items()}))
            pre = f"t{t}."

            def pick(suffix):
                return {n[len(pre):-len(suffix)]: b for n, b in files.items()
                        if n.startswith(pre) and n.endswith(suffix)}

            qmp = {n: Q.QmpProof.from_bytes(b, dec) for n, b in pick(".qmp").items()}
            cap = {n: P.CapProof.from_bytes(b) for n, b in pick(".cap").items()}
            links = {n: K.LinkProof.from_bytes(b, dec) for n, b in pick(".link").items()}
            step1 = MC.EvalProof.from_bytes(files[pre + "step1.bin"])
            pfs.append(TesterProofs(step1, qmp, cap, links))
        aggs = {n[4:-4]: G.AggProof.from_bytes(b) for n, b in files.items()
                if n.startswith("agg.") and n.endswith(".bin")}
    except (KeyError, ValueError, TypeError, A.ArgumentError) as e:
        raise BundleError(f"corrupt bundle: {e}")
    return ProofBundle(mc, sts, pfs, aggs)


def write_params(root: str, params: PipelineParams) -> None:
    files = {"config.json": json.dumps({"config": asdict(params.config), "shapes": asdict(params.shapes)},
                                       indent=1, sort_keys=True).encode(),
             "ck.bin": params.ck.to_bytes()}
    for n, crs in params.qmp.items():
        files[f"qmp.{n}.bin"] = crs.to_bytes()
    for n, rel in params.cap.items():
        files[f"cap.{n}.bin"] = rel.crs.to_bytes()
    for n, key in params.agg.items():
        files[f"agg.{n}.bin"] = key.to_bytes()
    _write_files(root, files, {"format": "qmpzk-params/1", "digest": params.digest.hex()})


def read_params(root: str) -> PipelineParams:
    manifest, files = _read_files(root)
    try:
        d = json.loads(files["config.json"])
        cfg = PipelineConfig(**d["config"])
        s = d["shapes"]
        sh = Shapes(**{k: tuple(v) if isinstance(v, list) else v for k, v in s.items()})
        ck = MC.CommitKeyS1.from_bytes(files["ck.bin"])
        qmp = {n: Q.QmpCrs.from_bytes(files[f"qmp.{n}.bin"]) for n in QMP_NAMES}
        cap = {}
        for name, g in build_gadgets(sh, cfg).items():
            crs = P.CapCrs.from_bytes(files[f"cap.{name}.bin"])
            if crs.vk.circuit != g.r1cs.digest:
                raise BundleError(f"CRS for {name} does not match the configured circuit")
            cap[name] = CapRelation(g, P.compile_qap(g.r1cs), crs)
        agg = {int(n[4:-4]): G.AggKey.from_bytes(b) for n, b in files.items() if n.startswith("agg.")}
    except (KeyError, ValueError, TypeError, A.ArgumentError) as e:
        raise BundleError(f"corrupt parameters: {e}")
    params = PipelineParams(cfg, sh, ck, qmp, cap, agg)
    if params.digest.hex() != manifest.get("digest"):
        raise BundleError("parameter digest mismatch")
    return params
