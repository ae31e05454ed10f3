import itertools
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmpzk import conv2mm as C
from qmpzk import model as M
from qmpzk import ringpoly as R
from qmpzk.algebra import ORDER, mat_mul


def brute_conv(x, w):
    n, m = len(x), len(w)
    o = n - m + 1
    return [[sum(x[i + a][j + b] * w[a][b] for a in range(m) for b in range(m)) for j in range(o)] for i in range(o)]


# -- model ---------------------------------------------------------------------


def test_conv2d_examples():
    x = np.arange(1, 10).reshape(3, 3)
    assert M.conv2d(x, [[1, 0], [0, 1]]).tolist() == [[6, 8], [12, 14]]
    assert np.array_equal(M.conv2d(x, [[1]]), x)
    assert not M.conv2d(x, np.zeros((2, 2))).any()
    with pytest.raises(M.ShapeError):
        M.conv2d(np.zeros((2, 2)), np.zeros((3, 3)))


def test_pointwise_layers():
    assert M.square_act([0, 1]).tolist() == [0, 2]
    assert int(M.square_act(-3)) == 6
    assert (-3 * -3 + -3) % ORDER == 6
    assert M.relu([-1, 2]).tolist() == [0, 2]
    assert M.avgpool([[1, 1], [1, 1]], 2).tolist() == [[1]]
    y, rem = M.avgpool_rem([[3, 1], [2, 1]], 2)
    assert y.tolist() == [[1]] and rem.tolist() == [[3]]
    y, rem = M.avgpool_rem([[-3, 0], [0, 0]], 2)
    assert y.tolist() == [[-1]] and rem.tolist() == [[1]]
    with pytest.raises(M.ShapeError):
        M.avgpool(np.zeros((3, 3)), 2)
    assert M.argmax_label([3, 9, 2]) == 1
    assert M.argmax_label([5, 5, 1]) == 0


def independent_forward(model, x):
    """Loop-based forward pass sharing no code with model.run_split."""
    out = []
    for img in x.tolist():
        maps = []
        f = model.prior[0].weights.tolist()
        for flt in f:
            y = brute_conv(img, flt)
            y = [[v * v + v for v in r] for r in y]
            o = len(y) // 2
            maps.append([[(y[2 * i][2 * j] + y[2 * i][2 * j + 1] + y[2 * i + 1][2 * j] + y[2 * i + 1][2 * j + 1]) // 4
                          for j in range(o)] for i in range(o)])
        v = [a for mp in maps for r in mp for a in r]
        w1 = model.later[0].weights.tolist()
        h = [max(0, sum(a * b for a, b in zip(row, v))) for row in w1]
        g = [[h[4 * i + j] for j in range(4)] for i in range(4)]
        p = [(g[2 * i][2 * j] + g[2 * i][2 * j + 1] + g[2 * i + 1][2 * j] + g[2 * i + 1][2 * j + 1]) // 4
             for i in range(2) for j in range(2)]
        for layer in model.later[3:5]:
            p = [sum(a * b for a, b in zip(row, p)) for row in layer.weights.tolist()]
        out.append(max(range(len(p)), key=lambda i: (p[i], -i)))
    return out


def test_run_split_matches_independent_forward_pass():
    model = M.toy_model()
    x, y = M.toy_batch(3, 4)
    trace, count = M.run_split(model, x, y)
    want = independent_forward(model, x)
    assert trace.labels.tolist() == want
    assert count == sum(int(a == b) for a, b in zip(want, y.tolist()))
    assert M.check_trace(model, trace)


def test_run_split_degenerate():
    with pytest.raises(M.ShapeError):
        M.run_split(M.toy_model(), np.zeros((0, 8, 8)), [])
    ident = M.SplitModel([M.LayerSpec("conv", {}, [[[1]]])],
                         [M.LayerSpec("fc", {}, np.eye(3, dtype=int)), M.LayerSpec("argmax")], 1)
    # 1x1 identity-like path: label = argmax of the fc input row
    ident.later[0] = M.LayerSpec("fc", {}, [[1], [0], [2]])
    trace, _ = M.run_split(ident, [[[4]]], [2])
    assert trace.labels.tolist() == [2]


def random_model(rng):
    n = int(rng.integers(4, 9))
    m = int(rng.integers(1, 4))
    filt = int(rng.integers(1, 4))
    o = n - m + 1
    if o % 2:
        n += 1
        o += 1
    feat = filt * (o // 2) ** 2
    return M.SplitModel(
        [M.LayerSpec("conv", {}, rng.integers(-2, 3, size=(filt, m, m))), M.LayerSpec("square_act"),
         M.LayerSpec("avgpool", {"w": 2})],
        [M.LayerSpec("fc", {}, rng.integers(-2, 3, size=(16, feat))), M.LayerSpec("relu"),
         M.LayerSpec("avgpool", {"w": 2, "shape": [4, 4]}), M.LayerSpec("fc", {}, rng.integers(-2, 3, size=(4, 4))),
         M.LayerSpec("fc", {}, rng.integers(-2, 3, size=(3, 4))), M.LayerSpec("argmax")], n)


def test_trace_self_consistency_random_models():
    rng = np.random.default_rng(11)
    for _ in range(50):
        model = random_model(rng)
        x = rng.integers(0, 256, size=(2, model.input_dim, model.input_dim))
        trace, _ = M.run_split(model, x, [0, 1])
        assert M.check_trace(model, trace)
        # no int64 wraparound: recompute the largest magnitude with Python ints
        big = max(abs(int(v)) for r in trace.records for v in np.asarray(r.output, dtype=object).ravel())
        assert big < 2**62


def test_model_json_roundtrip_and_version():
    model = M.toy_model()
    back = M.model_from_json(M.model_to_json(model))
    for a, b in zip(model.layers, back.layers):
        assert a.kind == b.kind
        assert (a.weights is None and b.weights is None) or np.array_equal(a.weights, b.weights)
    with pytest.raises(ValueError):
        M.model_from_json('{"prior": [], "later": []}')
    x, y = M.toy_batch(1, 2)
    x2, y2 = M.data_from_json(M.data_to_json(x, y))
    assert np.array_equal(x, x2) and np.array_equal(y, y2)
    with pytest.raises(ValueError):
        M.data_from_json('{"inputs": [], "labels": []}')


# -- conv2mm -------------------------------------------------------------------


def test_layout_dimensions():
    lay = C.plan_layout(C.ConvShape(1, 1, 1, 1))
    assert lay.L == 1 and lay.idxY(0, 0, 0, 0) == (0, 0)
    assert C.plan_layout(C.ConvShape(2, 2, 3, 1)).L == 4
    assert C.plan_layout(C.ConvShape(2, 3, 8, 4)).L == 144
    with pytest.raises(C.LayoutError):
        C.ConvShape(1, 3, 2, 1)


def test_build_matrices_and_map_replay():
    s = C.ConvShape(2, 2, 3, 1)
    lay = C.plan_layout(s)
    f = np.array([[[1, 2], [3, 4]], [[5, 6], [7, 8]]])
    w = C.build_weight_matrix(f, lay)
    for row, col, k, lr, lc in lay.idxW:
        assert w[row, col] == f[k, lr, lc]
    touched = {(r, c) for r, c, *_ in lay.idxW}
    assert all(w[r, c] == 0 for r in range(4) for c in range(4) if (r, c) not in touched)
    assert not C.build_weight_matrix(np.zeros((2, 2, 2)), lay).any()
    one = C.plan_layout(C.ConvShape(1, 1, 1, 1))
    assert C.build_weight_matrix([[[9]]], one).tolist() == [[9]]
    with pytest.raises(C.LayoutError):
        C.build_weight_matrix(np.zeros((3, 2, 2)), lay)


def test_extract_example():
    s = C.ConvShape(1, 2, 3, 1)
    lay = C.plan_layout(s)
    x = np.arange(1, 10).reshape(1, 3, 3)
    yr = C.build_weight_matrix([[[1, 0], [0, 1]]], lay) @ C.build_input_matrix(x, lay)
    assert C.extract_outputs(yr, lay)[0, 0].tolist() == [[6, 8], [12, 14]]
    assert not C.extract_outputs(np.zeros((lay.L, lay.L)), lay).any()
    with pytest.raises(C.LayoutError):
        C.extract_outputs(np.zeros((2, 2)), lay)


def test_reshape_oracle_equivalence_all_shapes():
    rng = np.random.default_rng(0)
    for M_, m, B in itertools.product(range(1, 4), range(1, 4), range(1, 4)):
        for n in range(m, 6):
            s = C.ConvShape(M_, m, n, B)
            lay = C.plan_layout(s)
            for _ in range(20):
                f = rng.integers(-5, 6, size=(M_, m, m))
                x = rng.integers(0, 256, size=(B, n, n))
                yr = C.build_weight_matrix(f, lay) @ C.build_input_matrix(x, lay)
                got = C.extract_outputs(yr, lay)
                for k in range(M_):
                    for b in range(B):
                        assert got[k, b].tolist() == brute_conv(x[b].tolist(), f[k].tolist())


def test_zero_padding_and_injective_y_map():
    s = C.ConvShape(3, 2, 5, 2)
    lay = C.plan_layout(s)
    xr = C.build_input_matrix(np.ones((2, 5, 5), dtype=int), lay)
    touched = {(r, c) for r, c, *_ in lay.idxX}
    assert all(xr[r, c] == 0 for r in range(lay.L) for c in range(lay.L) if (r, c) not in touched)
    cells = [rc for _, rc in lay.y_cells()]
    assert len(set(cells)) == len(cells)


# -- ringpoly ------------------------------------------------------------------


def rand_elem(rng, p, deg=None):
    deg = p.d if deg is None else deg
    return R.RingElem(tuple(rng.randrange(p.q) for _ in range(deg)), p)


def test_ring_basic_examples():
    p = R.RingParams(2, 97)
    a = R.RingElem((3, 4), p)
    zero = R.RingElem((), p)
    assert R.ring_add(a, zero).coeffs == (3, 4)
    x = R.RingElem((0, 1), p)
    sq = R.ring_mul_unreduced(x, x)
    assert sq.coeffs == (0, 0, 1) and not sq.reduced and sq.degree == 2
    with pytest.raises(R.RingError):
        R.ring_add(a, R.RingElem((1,), R.RingParams(4, 97)))
    with pytest.raises(R.RingError):
        R.RingParams(3, 97)
    with pytest.raises(R.RingError):
        R.RingParams(4, ORDER)


def test_ring_mul_matches_naive_convolution_mod_q():
    rng = random.Random(2)
    p = R.RingParams(4, R.DEFAULT_Q)
    for _ in range(50):
        a, b = rand_elem(rng, p), rand_elem(rng, p)
        got = R.ring_mul_unreduced(a, b)
        want = [0] * 7
        for i in range(4):
            for j in range(4):
                want[i + j] = (want[i + j] + a.coeffs[i] * b.coeffs[j]) % p.q
        assert list(got.mod_q()) + [0] * (7 - len(got.coeffs)) == want
        assert got.degree <= 2 * p.d - 2
        # reduction mod x^d+1 agrees with a direct negacyclic product
        neg = [0] * 4
        for i in range(4):
            for j in range(4):
                s = 1 if i + j < 4 else -1
                neg[(i + j) % 4] = (neg[(i + j) % 4] + s * a.coeffs[i] * b.coeffs[j]) % p.q
        assert list(got.reduce().coeffs) == neg


def test_encode_decode():
    p = R.RingParams(4, 97)
    bp = R.encode_matrix([[R.RingElem.const(5, p)]])
    assert bp.coeffs == ((5,),) and bp.deg_x == 0
    consts = [[R.RingElem.const(v, p) for v in r] for r in ((1, 2), (3, 4))]
    bp = R.encode_matrix(consts)
    assert bp.slots == 4 and bp.deg_x == 0
    rng = random.Random(5)
    m = [[rand_elem(rng, p) for _ in range(2)] for _ in range(2)]
    back = R.decode_matrix(R.encode_matrix(m), p)
    for r1, r2 in zip(m, back):
        for a, b in zip(r1, r2):
            assert a.coeffs[: a.degree + 1] == b.coeffs
    with pytest.raises(R.RingError):
        R.encode_matrix([[R.RingElem.const(1, p)], []])


def test_eval_examples():
    p = R.RingParams(4, 97)
    assert R.eval_at([[R.RingElem.const(7, p)]], 123) == [[7]]
    assert R.eval_at([[R.RingElem((0, 1), p)]], 5) == [[5]]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32), st.sampled_from([2, 4]), st.integers(1, ORDER - 1))
def test_eval_homomorphism(seed, L, k):
    rng = random.Random(seed)
    p = R.RingParams(8, R.DEFAULT_Q)
    a = [[rand_elem(rng, p) for _ in range(L)] for _ in range(L)]
    b = [[rand_elem(rng, p) for _ in range(L)] for _ in range(L)]
    prod = R.ring_matmul_unreduced(a, b)
    assert all(e.degree <= 2 * p.d - 2 for r in prod for e in r)
    assert R.eval_at(prod, k) == mat_mul(R.eval_at(a, k), R.eval_at(b, k))


def test_stub_roundtrip_and_injectivity():
    p = R.RingParams(8, R.DEFAULT_Q)
    zero = R.stub_encrypt([[0, 0], [0, 0]], p)
    assert all(e.degree == -1 for r in zero for e in r)
    rng = random.Random(9)
    x = [[rng.randrange(256) for _ in range(3)] for _ in range(3)]
    assert R.stub_decrypt(R.stub_encrypt(x, p, b"s")) == x
    seen = set()
    for cell in range(16):
        for v in range(256):
            grid = [[0] * 4 for _ in range(4)]
            grid[cell // 4][cell % 4] = v
            ct = R.stub_encrypt(grid, p, b"k")
            seen.add(tuple(e.coeffs for r in ct for e in r))
    # v == 0 gives the same all-zero grid for every cell
    assert len(seen) == 16 * 255 + 1


def test_stub_decrypt_survives_unreduced_layer_arithmetic():
    p = R.RingParams(8, R.DEFAULT_Q)
    rng = random.Random(1)
    x = [[rng.randrange(256) for _ in range(2)] for _ in range(2)]
    w = [[rng.randrange(-2, 3) for _ in range(2)] for _ in range(2)]
    ct = R.stub_encrypt(x, p, b"s")
    wc = [[R.RingElem.const(v, p).lift() if v >= 0 else R.RingElem((v,), p, False) for v in r] for r in w]
    y = R.ring_matmul_unreduced(wc, ct)
    assert R.stub_decrypt(y) == (np.array(w) @ np.array(x)).tolist()
    sq = [[R.ring_add(R.ring_mul_unreduced(e, e), e) for e in r] for r in y]
    assert R.stub_decrypt(sq) == M.square_act(np.array(w) @ np.array(x)).tolist()
