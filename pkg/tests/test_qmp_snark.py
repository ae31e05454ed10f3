import random

import pytest

from qmpzk import algebra as A
from qmpzk import qmp_snark as Q
from qmpzk.algebra import ORDER


def rand_mat(rng, L, lo=0, hi=256):
    return [[rng.randrange(lo, hi) % ORDER for _ in range(L)] for _ in range(L)]


def field_difference(alpha, beta, gamma, delta, eta, s, t, v, Z, W, X, Y):
    """Independent transcription of both sides of the trace equation."""
    L = len(W)
    ig, idl = pow(gamma, -1, ORDER), pow(delta, -1, ORDER)

    def mm(a, b):
        return [[sum(a[i][k] * b[k][j] for k in range(L)) % ORDER for j in range(L)] for i in range(L)]

    def lift(c):
        return [[c % ORDER if i == j else 0 for j in range(L)] for i in range(L)]

    def add(*ms):
        return [[sum(m[i][j] for m in ms) % ORDER for j in range(L)] for i in range(L)]

    def sc(m, c):
        return [[x * c % ORDER for x in r] for r in m]

    def tr(m):
        return sum(m[i][i] for i in range(L)) % ORDER

    Zt = [list(r) for r in zip(*Z)]
    a = add(lift(alpha), mm(Zt, W), lift(delta * t))
    b = add(lift(beta), X, lift(delta * s))
    c = add(sc(a, s), sc(add(lift(beta), X, lift(delta * s)), t), lift(-t * s * delta), lift(-v * eta * idl))
    d = add(sc(add(sc(mm(Zt, W), beta), sc(X, alpha), mm(Zt, Y)), ig), lift(v * eta * ig))
    lhs = tr(mm(a, b))
    rhs = (L * alpha * beta + gamma * tr(d) + delta * tr(c)) % ORDER
    freivalds = tr(mm(Zt, add(mm(W, X), sc(Y, -1))))
    return (lhs - rhs) % ORDER, freivalds


def test_algebraic_identity_fuzz_small():
    rng = random.Random(0)
    for trial in range(500):
        L = 2 + trial % 2
        vals = [rng.randrange(1, ORDER) for _ in range(8)]
        Z, W, X = (rand_mat(rng, L, 0, ORDER) for _ in range(3))
        Y = rand_mat(rng, L, 0, ORDER) if trial % 2 else A.mat_mul(W, X)
        diff, fr = field_difference(*vals, Z, W, X, Y)
        assert diff == fr
        if trial % 2 == 0:
            assert diff == 0


def test_module_field_model_agrees():
    rng = random.Random(1)
    crs, td = Q.qmp_setup(2, rng=rng, keep_trapdoor=True)
    for _ in range(20):
        W, X, Y = (rand_mat(rng, 2, 0, ORDER) for _ in range(3))
        t, s, v = (rng.randrange(ORDER) for _ in range(3))
        diff, fr = field_difference(td.alpha, td.beta, td.gamma, td.delta, td.eta, s, t, v, td.Z, W, X, Y)
        assert Q.verification_difference(td, W, X, Y, t, s, v) == diff == fr


def test_proof_encodes_the_field_model():
    rng = random.Random(2)
    crs, td = Q.qmp_setup(3, rng=rng, keep_trapdoor=True)
    W, X = rand_mat(rng, 3, -5, 5), rand_mat(rng, 3)
    Y = A.mat_mul(W, X)
    t, s, v = 11, 22, 33
    pf = Q.qmp_prove(crs, W, X, Y, randomizers=(t, s, v))
    e = Q.exponent_matrices(td, W, X, Y, t, s, v)
    assert pf.A == A.mat_exp(A.G1, e["A"])
    assert pf.B == A.mat_exp(A.G2, e["B"])
    assert pf.C == A.mat_exp(A.G1, e["C"])
    assert pf.D == A.mat_exp(A.G1, e["D"])
    ig = A.inv(td.gamma)
    hv = v * td.eta * ig
    assert pf.d1 == [[A.g1_exp(td.beta * ig * x + hv) for x in r] for r in W]
    assert pf.d3 == [[A.g1_exp(ig * x + hv) for x in r] for r in Y]


def test_crs_counts_and_pairing_sweep():
    crs = Q.qmp_setup(1)
    assert len(crs.Z_enc) == 1 and len(crs.Z_enc[0]) == 1
    crs = Q.qmp_setup(4, rng=random.Random(3))
    assert sum(len(r) for r in crs.Z_enc) == 16
    for i in range(4):
        for j in range(4):
            assert A.pairing_product_is_one([crs.Zb_enc[i][j], -crs.Z_enc[i][j]], [crs.h_gamma, crs.h_beta])
    assert len(crs.to_bytes()) == Q.crs_size_bytes(4) == crs.size_bytes
    back = Q.QmpCrs.from_bytes(crs.to_bytes())
    assert back.to_bytes() == crs.to_bytes()


@pytest.fixture(scope="module")
def crs4():
    return Q.qmp_setup(4, rng=random.Random(4))


def test_completeness_examples(crs4):
    rng = random.Random(5)
    X = rand_mat(rng, 4)
    assert Q.qmp_verify(crs4, Q.qmp_prove(crs4, A.identity_matrix(4), X, X))
    Z = A.zero_matrix(4)
    assert Q.qmp_verify(crs4, Q.qmp_prove(crs4, Z, Z, Z))
    for _ in range(5):
        W, X = rand_mat(rng, 4), rand_mat(rng, 4)
        assert Q.qmp_verify(crs4, Q.qmp_prove(crs4, W, X, A.mat_mul(W, X)))
    with pytest.raises(A.ArgumentError):
        Q.qmp_prove(crs4, W, X, Z)


def test_pairing_count(crs4):
    rng = random.Random(6)
    W, X = rand_mat(rng, 4, 1), rand_mat(rng, 4, 1)
    pf = Q.qmp_prove(crs4, W, X, A.mat_mul(W, X))
    before = A.COUNTERS["pairings"]
    assert Q.trace_check(crs4, pf)
    assert A.COUNTERS["pairings"] - before == 4 * 4 + 2 * 4 + 1
    before = A.COUNTERS["pairings"]
    assert Q.entrywise_check(crs4, pf)
    assert A.COUNTERS["pairings"] - before == 4 + 3


def test_soundness_y_perturbation(crs4):
    rng = random.Random(7)
    for _ in range(10):
        W, X = rand_mat(rng, 4), rand_mat(rng, 4)
        Y = A.mat_mul(W, X)
        i, j = rng.randrange(4), rng.randrange(4)
        Y[i][j] = (Y[i][j] + rng.randrange(1, ORDER)) % ORDER
        pf = Q.qmp_prove(crs4, W, X, Y, check=False)
        assert not Q.trace_check(crs4, pf)
        assert not Q.qmp_verify(crs4, pf)


def test_element_mutations(crs4):
    rng = random.Random(8)
    W, X = rand_mat(rng, 4), rand_mat(rng, 4)
    pf = Q.qmp_prove(crs4, W, X, A.mat_mul(W, X))
    for name in ("A", "B", "C", "D"):
        for i, j in ((0, 0), (1, 2)):
            m = [list(r) for r in getattr(pf, name)]
            m[i][j] = m[i][j] + (A.G2 if name == "B" else A.G1)
            bad = Q.QmpProof(**{**pf.__dict__, name: m})
            assert not Q.qmp_verify(crs4, bad), (name, i, j)
    # off-diagonal C/D entries are invisible to the trace equation alone
    m = [list(r) for r in pf.C]
    m[0][1] = m[0][1] + A.G1
    bad = Q.QmpProof(**{**pf.__dict__, "C": m})
    assert Q.trace_check(crs4, bad) and not Q.qmp_verify(crs4, bad)


def test_malformed_rejected_not_raised(crs4):
    rng = random.Random(9)
    W, X = rand_mat(rng, 4), rand_mat(rng, 4)
    pf = Q.qmp_prove(crs4, W, X, A.mat_mul(W, X))
    short = Q.QmpProof(**{**pf.__dict__, "A": pf.A[:3]})
    assert not Q.qmp_verify(crs4, short)
    wrong_group = Q.QmpProof(**{**pf.__dict__, "B": pf.A})
    assert not Q.qmp_verify(crs4, wrong_group)


def test_proof_codec(crs4):
    rng = random.Random(10)
    W, X = rand_mat(rng, 4), rand_mat(rng, 4)
    pf = Q.qmp_prove(crs4, W, X, A.mat_mul(W, X))
    b = pf.to_bytes()
    assert b[:4] == Q.MAGIC_PROOF
    back = Q.QmpProof.from_bytes(b)
    assert back.to_bytes() == b and Q.qmp_verify(crs4, back)
    with pytest.raises(A.ArgumentError):
        Q.QmpProof.from_bytes(b[:-1])


def test_crs_and_proof_sizes_quadratic():
    assert Q.crs_size_bytes(16) - Q.crs_size_bytes(8) == 3 * 48 * (256 - 64)
