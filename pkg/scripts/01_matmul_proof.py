"""A single matrix product proved and checked, then one entry of Y nudged.

    python3 scripts/01_matmul_proof.py
"""
import random
import time

from qmpzk import algebra as A
from qmpzk import qmp_snark as Q

rng = random.Random(1)
L = 8

t = time.perf_counter()
crs = Q.qmp_setup(L, rng=rng)
print(f"setup L={L}: {1000 * (time.perf_counter() - t):.0f} ms, CRS {len(crs.to_bytes())} bytes")

W = [[rng.randrange(-50, 50) for _ in range(L)] for _ in range(L)]
X = [[rng.randrange(-50, 50) for _ in range(L)] for _ in range(L)]
Y = A.mat_mul(W, X)

pf = Q.qmp_prove(crs, W, X, Y, rng)
print("honest proof verifies:", Q.qmp_verify(crs, pf))

# a wrong product: the prover skips its own check and the verifier catches it
Y[2][5] += 1
bad = Q.qmp_prove(crs, W, X, Y, rng, check=False)
print("trace check alone:   ", Q.trace_check(crs, bad))
print("entrywise check:     ", Q.entrywise_check(crs, bad))
print("wrong product verifies:", Q.qmp_verify(crs, bad))
