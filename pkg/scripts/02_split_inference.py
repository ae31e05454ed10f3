"""Whole flow on the toy split CNN: setup, model commitment, one bundle for
two testers, verification, then a handful of tampered bundles.

    python3 scripts/02_split_inference.py      # a few minutes
"""
import random
import time

from qmpzk import pipeline as PL
from qmpzk.model import run_split, toy_batch, toy_model

rng = random.Random(2)
model = toy_model()
cfg = PL.PipelineConfig(batch=2, ring_degree=16, max_testers=2)

t = time.perf_counter()
params = PL.setup(model, cfg, rng)
print(f"setup: {time.perf_counter() - t:.1f} s")
sh = params.shapes
print(f"  conv {sh.M}x{sh.m}x{sh.m} on {sh.n}x{sh.n}, QMP dims",
      {n: sh.qmp_dim(n) for n in ("L1", "L4", "L7", "L8")})

# the developer publishes a commitment to the weights and keeps the openings
mc, secrets = PL.commit_model(params, model, rng)
print("model hash:", mc.model_hash[:16], "...")

batches = [toy_batch(10 + i, cfg.batch) for i in range(2)]
t = time.perf_counter()
bundle = PL.prove_bundle(params, model, mc, secrets, batches, rng)
print(f"prove (2 testers, aggregated): {time.perf_counter() - t:.1f} s")

for (x, y), st in zip(batches, bundle.statements):
    print(f"  tester {st.index}: labels {st.labels} predicted {st.l_test} correct {st.correct_count}"
          f" (plain run says {run_split(model, x, y)[1]})")

cache = PL.VerdictCache()
t = time.perf_counter()
report = PL.verify_bundle(params, bundle, cache)
print(f"verify: {'accept' if report.ok else 'reject'} in {time.perf_counter() - t:.1f} s,"
      f" {len(report.verdicts)} relations checked")

# tampering anywhere is caught; the cache re-checks only what changed
for _ in range(5):
    desc, bad = PL.random_mutation(bundle, rng)
    t = time.perf_counter()
    r = PL.verify_bundle(params, bad, cache)
    print(f"  {desc:<28} -> {'accept' if r.ok else 'reject'} ({r.failures[0].relation},"
          f" {time.perf_counter() - t:.2f} s)")

dropped = PL.drop_edge(bundle, 1, "L5-L6")
print("link L5-L6 removed for tester 1:", PL.verify_bundle(params, dropped, cache).failures[0].detail)
