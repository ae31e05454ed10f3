"""Command line: setup / commit-model / prove / verify / aggregate over the
split-CNN pipeline, the QMP-vs-QAP matmul benchmark, and gadget counts.

Exit codes: 0 accept (or success), 1 reject, 2 usage / missing / corrupt
files / mismatched model hash.  Every flag with an environment override
reads QMPZK_<FLAG> (e.g. QMPZK_TRIALS) when the flag is absent.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import random
import statistics
import sys
import time
from dataclasses import dataclass
from typing import Sequence

from . import algebra as A
from . import pipeline as PL
from . import qap_snark as P
from . import qmp_snark as Q
from .model import data_from_json, model_from_json

DEFAULT_CAP = 128
CSV_FIELDS = ("scheme", "L", "trial", "setup_ms", "prove_ms", "verify_ms", "crs_bytes", "proof_bytes")
# constraint counts quoted for one relu and one average pool in the original evaluation
REFERENCE_COUNTS = {"relu": 20, "avgpool": 144}


class UsageError(Exception):
    pass


@dataclass
class BenchRecord:
    scheme: str
    L: int
    trial: int
    setup_ms: float
    prove_ms: float
    verify_ms: float
    crs_bytes: int
    proof_bytes: int


def _ms(t0: float) -> float:
    return (time.perf_counter() - t0) * 1000.0


def _random_square(L: int, rng: random.Random) -> list:
    return [[rng.randrange(-100, 101) for _ in range(L)] for _ in range(L)]


def bench_qmp(L: int, trial: int, rng: random.Random) -> BenchRecord:
    W, X = _random_square(L, rng), _random_square(L, rng)
    t0 = time.perf_counter()
    crs = Q.qmp_setup(L, rng=rng)
    setup = _ms(t0)
    t0 = time.perf_counter()
    pf = Q.qmp_prove(crs, W, X, A.mat_mul(W, X), rng)
    prove = _ms(t0)
    t0 = time.perf_counter()
    ok = Q.qmp_verify(crs, pf)
    verify = _ms(t0)
    if not ok:
        raise RuntimeError(f"QMP proof at L={L} did not verify")
    return BenchRecord("qmp", L, trial, setup, prove, verify, crs.size_bytes, len(pf.to_bytes()))


def bench_qap(L: int, trial: int, rng: random.Random, gadget: P.Gadget | None = None) -> BenchRecord:
    """Groth16-style baseline over the L^3-constraint matmul circuit.  Setup
    time covers QAP interpolation and the CRS; prove time covers witness
    generation and the proof."""
    g = gadget or P.gadget_matmul_baseline(L)
    W, X = _random_square(L, rng), _random_square(L, rng)
    t0 = time.perf_counter()
    qap = P.compile_qap(g.r1cs)
    crs = P.cap_setup(qap, rng)
    setup = _ms(t0)
    t0 = time.perf_counter()
    w = g.assign([x for r in W for x in r] + [x for r in X for x in r])
    pf = P.cap_prove(crs, qap, w, rng, check=False)
    prove = _ms(t0)
    t0 = time.perf_counter()
    ok = P.cap_verify(crs.vk, g.io_values(w), pf)
    verify = _ms(t0)
    if not ok:
        raise RuntimeError(f"QAP proof at L={L} did not verify")
    r = g.r1cs
    size = P.crs_size_bytes(r.n_io, r.n_committed, r.n_free, qap.N)
    return BenchRecord("qap", L, trial, setup, prove, verify, size, len(pf.to_bytes()))


def cmd_bench_matmul(dims: Sequence[int], trials: int, out_csv: str | None, seed: int = 0,
                     cap: int = DEFAULT_CAP, schemes: Sequence[str] = ("qmp", "qap"), log=print) -> list:
    if not dims or trials < 1:
        raise UsageError("need at least one dimension and one trial")
    too_big = [d for d in dims if d > cap or d < 1]
    if too_big:
        raise UsageError(f"dimension(s) {too_big} outside [1, {cap}]; the QAP baseline has L^3 constraints. "
                         f"Raise the cap with --cap (or QMPZK_CAP) if you really mean it.")
    rng = random.Random(seed)
    recs = []
    for L in dims:
        gadget = P.gadget_matmul_baseline(L) if "qap" in schemes else None
        for t in range(trials):
            if "qmp" in schemes:
                recs.append(bench_qmp(L, t, rng))
            if "qap" in schemes:
                recs.append(bench_qap(L, t, rng, gadget))
    if out_csv:
        write_csv(out_csv, recs)
    if log:
        for line in speedup_table(recs):
            log(line)
    return recs


def write_csv(path: str, recs: Sequence[BenchRecord]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(CSV_FIELDS)
        for r in recs:
            w.writerow([r.scheme, r.L, r.trial, f"{r.setup_ms:.3f}", f"{r.prove_ms:.3f}",
                        f"{r.verify_ms:.3f}", r.crs_bytes, r.proof_bytes])


def read_csv(path: str) -> list:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    out = []
    for row in rows:
        out.append(BenchRecord(row["scheme"], int(row["L"]), int(row["trial"]), float(row["setup_ms"]),
                               float(row["prove_ms"]), float(row["verify_ms"]), int(row["crs_bytes"]),
                               int(row["proof_bytes"])))
    return out


def medians(recs: Sequence[BenchRecord]) -> dict:
    """(scheme, L) -> {setup_ms, prove_ms, verify_ms, crs_bytes, proof_bytes}."""
    groups: dict = {}
    for r in recs:
        groups.setdefault((r.scheme, r.L), []).append(r)
    out = {}
    for k, rs in groups.items():
        out[k] = {f: statistics.median(getattr(r, f) for r in rs)
                  for f in ("setup_ms", "prove_ms", "verify_ms", "crs_bytes", "proof_bytes")}
    return out


def speedup_table(recs: Sequence[BenchRecord]) -> list:
    med = medians(recs)
    dims = sorted({L for _, L in med})
    lines = [f"{'L':>5} {'qmp setup':>10} {'qap setup':>10} {'x':>6} {'qmp prove':>10} {'qap prove':>10} {'x':>6}"
             f" {'qmp crs KB':>11} {'qap crs KB':>11}"]
    for L in dims:
        q, p = med.get(("qmp", L)), med.get(("qap", L))
        if not (q and p):
            continue
        lines.append(f"{L:>5} {q['setup_ms']:>10.1f} {p['setup_ms']:>10.1f} {p['setup_ms'] / q['setup_ms']:>6.1f}"
                     f" {q['prove_ms']:>10.1f} {p['prove_ms']:>10.1f} {p['prove_ms'] / q['prove_ms']:>6.1f}"
                     f" {q['crs_bytes'] / 1024:>11.1f} {p['crs_bytes'] / 1024:>11.1f}")
    return lines


def gadget_counts(relu_bits: int = 16) -> list:
    """(name, constraints per unit, reference count or None)."""
    rows = [
        ("square_act", P.gadget_square_act(4).per_unit, None),
        ("relu", P.gadget_relu(4, relu_bits).per_unit, REFERENCE_COUNTS["relu"]),
        ("avgpool 2x2", P.gadget_avgpool(4, 2, relu_bits).per_unit, REFERENCE_COUNTS["avgpool"]),
        ("argmax 3-way", P.gadget_argmax(3, relu_bits).per_unit, None),
    ]
    return rows


def format_gadget_counts(rows) -> list:
    out = [f"{'gadget':<14} {'constraints':>11} {'reference':>9}"]
    for name, n, ref in rows:
        out.append(f"{name:<14} {n:>11} {ref if ref is not None else '-':>9}")
    return out


# -- pipeline commands --------------------------------------------------------

def _read_text(path: str) -> str:
    try:
        with open(path) as f:
            return f.read()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror}")


def _load_model(path: str):
    try:
        return model_from_json(_read_text(path))
    except UsageError:
        raise
    except (ValueError, KeyError, TypeError) as e:
        raise UsageError(f"{path}: not a usable model ({e})")


def _load_params(path: str) -> PL.PipelineParams:
    try:
        return PL.read_params(path)
    except PL.BundleError as e:
        raise UsageError(str(e))


def _config(args) -> PL.PipelineConfig:
    return PL.PipelineConfig(batch=args.batch, ring_degree=args.ring_degree,
                             ring_modulus_bits=args.ring_modulus_bits, relu_bits=args.relu_bits,
                             max_testers=args.max_testers)


def cmd_setup(args) -> int:
    model = _load_model(args.model)
    try:
        params = PL.setup(model, _config(args), random.Random(args.seed))
    except (PL.PipelineError, ValueError) as e:
        raise UsageError(str(e))
    PL.write_params(args.out, params)
    print(f"parameters written to {args.out} (digest {params.digest.hex()[:16]})")
    return 0


def cmd_commit_model(args) -> int:
    params = _load_params(args.params)
    model = _load_model(args.model)
    try:
        mc, sec = PL.commit_model(params, model, random.Random(args.seed))
    except PL.PipelineError as e:
        raise UsageError(str(e))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "commitment.json"), "w") as f:
        json.dump(mc.to_json(), f, indent=1)
    with open(os.path.join(args.out, "secrets.json"), "w") as f:
        json.dump({"r_prior": hex(sec.r_prior), "r_later": {k: hex(v) for k, v in sec.r_later.items()}}, f, indent=1)
    print(f"model {mc.model_hash[:16]} committed; secrets.json stays with the model owners")
    return 0


def _load_commitment(root: str):
    try:
        mc = PL.ModelCommitment.from_json(json.loads(_read_text(os.path.join(root, "commitment.json"))))
        s = json.loads(_read_text(os.path.join(root, "secrets.json")))
        sec = PL.ModelSecrets(int(s["r_prior"], 16), {k: int(v, 16) for k, v in s["r_later"].items()})
    except UsageError:
        raise
    except (ValueError, KeyError, TypeError, A.ArgumentError) as e:
        raise UsageError(f"{root}: corrupt commitment ({e})")
    return mc, sec


def cmd_prove(args) -> int:
    params = _load_params(args.params)
    model = _load_model(args.model)
    mc, sec = _load_commitment(args.commitment)
    if PL.model_hash(model) != mc.model_hash:
        raise UsageError("model file does not match the committed model hash")
    batches = []
    for path in args.data:
        try:
            batches.append(data_from_json(_read_text(path)))
        except UsageError:
            raise
        except (ValueError, KeyError, TypeError) as e:
            raise UsageError(f"{path}: not a usable data file ({e})")
    rng = random.Random(args.seed)
    try:
        bundle = PL.prove_bundle(params, model, mc, sec, batches, rng, aggregate=not args.no_aggregate)
    except PL.PipelineError as e:
        raise UsageError(str(e))
    PL.write_bundle(args.out, params, bundle)
    for st in bundle.statements:
        print(f"tester {st.index}: {st.correct_count}/{len(st.labels)} correct")
    return 0


def _load_bundle(path: str, params):
    """Returns the bundle, or None when the bytes do not match the manifest."""
    try:
        return PL.read_bundle(path, params)
    except PL.ManifestMismatch as e:
        print(f"reject: {e}")
        return None
    except PL.BundleError as e:
        raise UsageError(str(e))


def cmd_verify(args) -> int:
    params = _load_params(args.params)
    bundle = _load_bundle(args.bundle, params)
    if bundle is None:
        return 1
    if args.model_hash and args.model_hash != bundle.model.model_hash:
        print("reject: bundle is for a different model")
        return 1
    rep = PL.verify_bundle(params, bundle)
    for line in (rep.lines() if args.verbose else [l for l in rep.lines() if l.startswith("FAIL")]):
        print(line)
    if rep.ok:
        total = sum(st.correct_count for st in bundle.statements)
        n = sum(len(st.labels) for st in bundle.statements)
        print(f"accept: {len(rep.verdicts)} checks, {total}/{n} correct")
        return 0
    print(f"reject: {len(rep.failures)} of {len(rep.verdicts)} checks failed")
    return 1


def cmd_aggregate(args) -> int:
    params = _load_params(args.params)
    bundle = _load_bundle(args.bundle, params)
    if bundle is None:
        return 1
    try:
        agg = PL.aggregate_bundle(params, bundle)
    except (PL.PipelineError, A.ArgumentError) as e:
        print(f"reject: {e}")
        return 1
    PL.write_bundle(args.out, params, agg)
    print(f"aggregated {len(agg.aggregates)} relations over {len(agg.statements)} testers")
    return 0


def cmd_bench(args) -> int:
    cmd_bench_matmul(args.dim, args.trials, args.out, args.seed, args.cap)
    return 0


def cmd_gadgets(args) -> int:
    for line in format_gadget_counts(gadget_counts(args.relu_bits)):
        print(line)
    return 0


# -- argument parsing ---------------------------------------------------------

def _env(name: str, default, conv=int):
    v = os.environ.get("QMPZK_" + name)
    if v is None:
        return default
    try:
        return conv(v)
    except ValueError:
        raise UsageError(f"QMPZK_{name}={v!r} is not valid")


def _env_list(name: str, default):
    v = os.environ.get("QMPZK_" + name)
    if v is None:
        return default
    try:
        return [int(x) for x in v.replace(",", " ").split()]
    except ValueError:
        raise UsageError(f"QMPZK_{name}={v!r} is not a list of integers")


def build_parser() -> argparse.ArgumentParser:
    cfg = PL.PipelineConfig()
    ap = argparse.ArgumentParser(prog="qmpzk", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, seed=True):
        if seed:
            p.add_argument("--seed", type=int, default=_env("SEED", 0))

    def ring(p):
        p.add_argument("--batch", type=int, default=_env("BATCH", cfg.batch))
        p.add_argument("--ring-degree", type=int, default=_env("RING_DEGREE", cfg.ring_degree))
        p.add_argument("--ring-modulus-bits", type=int, default=_env("RING_MODULUS_BITS", cfg.ring_modulus_bits))
        p.add_argument("--relu-bits", type=int, default=_env("RELU_BITS", cfg.relu_bits))
        p.add_argument("--max-testers", type=int, default=_env("MAX_TESTERS", cfg.max_testers))

    p = sub.add_parser("setup", help="generate public parameters for a model architecture")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    ring(p)
    common(p)
    p.set_defaults(fn=cmd_setup)

    p = sub.add_parser("commit-model", help="commit to the model weights")
    p.add_argument("--params", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(fn=cmd_commit_model)

    p = sub.add_parser("prove", help="prove inference over one data file per tester")
    p.add_argument("--params", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--commitment", required=True, help="directory written by commit-model")
    p.add_argument("--data", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--no-aggregate", action="store_true")
    common(p)
    p.set_defaults(fn=cmd_prove)

    p = sub.add_parser("verify", help="verify a proof bundle")
    p.add_argument("--params", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--model-hash", default=None)
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("aggregate", help="replace per-tester CaP proofs by aggregates")
    p.add_argument("--params", required=True)
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_aggregate)

    p = sub.add_parser("bench", help="QMP vs QAP matmul benchmark")
    p.add_argument("--dim", type=int, action="append", default=None)
    p.add_argument("--trials", type=int, default=_env("TRIALS", 5))
    p.add_argument("--out", default=None, help="CSV path")
    p.add_argument("--cap", type=int, default=_env("CAP", DEFAULT_CAP))
    common(p)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("gadgets", help="constraint counts per gadget unit")
    p.add_argument("--relu-bits", type=int, default=_env("RELU_BITS", 16))
    p.set_defaults(fn=cmd_gadgets)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    try:
        ap = build_parser()
        try:
            args = ap.parse_args(argv)
        except SystemExit as e:
            return 0 if e.code == 0 else 2
        if args.cmd == "bench" and args.dim is None:
            args.dim = _env_list("DIM", [8, 16])
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
