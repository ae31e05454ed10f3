import math
import random

import pytest

from qmpzk import aggregate as G
from qmpzk import algebra as A
from qmpzk import qap_snark as P


@pytest.fixture(scope="module")
def square():
    c = P.Circuit("square-io")
    x = c.input()
    y = c.output(P.IO, lambda v: v[x] * v[x])
    c.enforce(P.var(x), P.var(x), P.var(y))
    g = c.build()
    qap = P.compile_qap(g.r1cs)
    crs = P.cap_setup(qap, random.Random(1))
    return g, qap, crs


def batch(square, n, rng):
    g, qap, crs = square
    ws = [g.assign([rng.randrange(1, 1000)]) for _ in range(n)]
    return [g.io_values(w) for w in ws], [P.cap_prove(crs, qap, w, rng) for w in ws]


def tamper(pf):
    return P.CapProof(**{**pf.__dict__, "C": pf.C + A.G1})


def test_setup_padding_and_structure():
    rng = random.Random(2)
    assert G.agg_setup(1, rng).n == 1
    k3 = G.agg_setup(3, rng)
    assert k3.n == 4 and len(k3.v1) == len(k3.w2) == 4
    k8 = G.agg_setup(8, rng)
    assert G.key_spot_check(k8, [((0, 5), (2, 3)), ((7, 1), (4, 4)), ((1, 1), (0, 2))])
    broken = G.AggKey(**{**k8.__dict__, "v1": k8.v1[:3] + [k8.v1[3] + A.G2] + k8.v1[4:]})
    assert not G.key_spot_check(broken)
    with pytest.raises(G.AggregateError):
        G.agg_setup(0)


def test_single_proof(square):
    rng = random.Random(3)
    sts, pfs = batch(square, 1, rng)
    key = G.agg_setup(1, rng)
    agg = G.agg_prove(key, square[2].vk, sts, pfs)
    assert agg.rounds == []
    assert agg.I_AB == A.pairing(pfs[0].A, pfs[0].B)
    assert agg.I_C == pfs[0].C and agg.I_D == pfs[0].D
    assert G.agg_verify(square[2].vk, key, sts, agg)


def test_identical_pair_geometric_weights(square):
    rng = random.Random(4)
    sts, pfs = batch(square, 1, rng)
    sts, pfs = sts * 2, pfs * 2
    key = G.agg_setup(2, rng)
    vk = square[2].vk
    agg = G.agg_prove(key, vk, sts, pfs)
    r = G._transcript(key, vk, sts, agg.C_AB, agg.C_C, agg.C_D).challenge(b"r")
    assert agg.I_C == A.mul(pfs[0].C, 1 + r)
    assert G.agg_verify(vk, key, sts, agg, [p.D for p in pfs])


@pytest.mark.parametrize("n_t", [2, 3, 4, 5])
def test_honest_accepts_and_round_count(square, n_t):
    rng = random.Random(10 + n_t)
    sts, pfs = batch(square, n_t, rng)
    key = G.agg_setup(n_t, rng)
    agg = G.agg_prove(key, square[2].vk, sts, pfs)
    assert len(agg.rounds) == math.ceil(math.log2(n_t))
    assert G.agg_verify(square[2].vk, key, sts, agg, [p.D for p in pfs])


def test_tampered_input_rejected(square):
    rng = random.Random(5)
    vk = square[2].vk
    sts, pfs = batch(square, 4, rng)
    key = G.agg_setup(4, rng)
    bad = list(pfs)
    bad[2] = tamper(bad[2])
    with pytest.raises(G.AggregateError):
        G.agg_prove(key, vk, sts, bad)
    assert not G.agg_verify(vk, key, sts, G.agg_prove(key, vk, sts, bad, check=False))


def test_reordered_statements_rejected(square):
    rng = random.Random(6)
    vk = square[2].vk
    sts, pfs = batch(square, 4, rng)
    key = G.agg_setup(4, rng)
    agg = G.agg_prove(key, vk, sts, pfs)
    assert not G.agg_verify(vk, key, [sts[1], sts[0]] + sts[2:], agg)
    assert not G.agg_verify(vk, key, sts, agg, [pfs[1].D, pfs[0].D] + [p.D for p in pfs[2:]])
    assert not G.agg_verify(vk, key, sts[:3], agg)


def test_deterministic_and_codec(square):
    rng = random.Random(7)
    vk = square[2].vk
    sts, pfs = batch(square, 3, rng)
    key = G.agg_setup(3, rng)
    b1 = G.agg_prove(key, vk, sts, pfs).to_bytes()
    b2 = G.agg_prove(key, vk, sts, pfs).to_bytes()
    assert b1 == b2
    agg = G.AggProof.from_bytes(b1)
    assert agg.to_bytes() == b1 and agg.circuit == vk.circuit and agg.n_t == 3
    assert G.agg_verify(vk, key, sts, agg)
    for bad in (b1[:-1], b1 + b"\0", b"XXXX" + b1[4:]):
        with pytest.raises(A.ArgumentError):
            G.AggProof.from_bytes(bad)


def test_field_mutations_rejected(square):
    rng = random.Random(8)
    vk = square[2].vk
    sts, pfs = batch(square, 4, rng)
    key = G.agg_setup(4, rng)
    agg = G.agg_prove(key, vk, sts, pfs)
    gt = A.pairing(A.G1, A.G2)
    muts = [
        {"I_C": agg.I_C + A.G1}, {"I_D": agg.I_D + A.G1}, {"I_AB": agg.I_AB * gt},
        {"C_AB": (agg.C_AB[0] * gt, agg.C_AB[1])}, {"C_C": (agg.C_C[0], agg.C_C[1] * gt)},
        {"A0": agg.A0 + A.G1}, {"B0": agg.B0 + A.G2}, {"D0": agg.D0 + A.G1},
        {"rounds": agg.rounds[:1]}, {"n_t": 5},
    ]
    rd = agg.rounds[0]
    muts.append({"rounds": [G.Round(**{**rd.__dict__, "IC_L": rd.IC_L + A.G1})] + agg.rounds[1:]})
    muts.append({"rounds": [G.Round(**{**rd.__dict__, "Z_R": rd.Z_R * gt})] + agg.rounds[1:]})
    for m in muts:
        assert not G.agg_verify(vk, key, sts, G.AggProof(**{**agg.__dict__, **m})), m.keys()


def test_wrong_key_rejected(square):
    rng = random.Random(9)
    vk = square[2].vk
    sts, pfs = batch(square, 2, rng)
    agg = G.agg_prove(G.agg_setup(2, rng), vk, sts, pfs)
    assert not G.agg_verify(vk, G.agg_setup(2, rng), sts, agg)


def test_equivalence_small_sweep(square):
    rng = random.Random(10)
    vk = square[2].vk
    pool_sts, pool = batch(square, 8, rng)
    keys = {n: G.agg_setup(n, rng) for n in (1, 2, 4, 8)}
    for trial in range(16):
        n_t = rng.randrange(1, 9)
        idx = [rng.randrange(8) for _ in range(n_t)]
        sts, pfs = [pool_sts[i] for i in idx], [pool[i] for i in idx]
        if trial % 2:
            j = rng.randrange(n_t)
            pfs[j] = tamper(pfs[j])
        expect = all(P.cap_verify(vk, s, p) for s, p in zip(sts, pfs))
        agg = G.agg_prove(keys[G.padded(n_t)], vk, sts, pfs, check=False)
        assert G.agg_verify(vk, keys[G.padded(n_t)], sts, agg) == expect


def test_key_codec():
    key = G.agg_setup(4, random.Random(11))
    b = key.to_bytes()
    back = G.AggKey.from_bytes(b)
    assert back.digest == key.digest and back.to_bytes() == b
    with pytest.raises(A.ArgumentError):
        G.AggKey.from_bytes(b[:-1])
