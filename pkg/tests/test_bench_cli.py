import csv
import json
import os
import hashlib
import shutil

import pytest

from qmpzk import bench_cli as C
from qmpzk.model import data_to_json, model_to_json, toy_batch, toy_model

HERE = os.path.dirname(__file__)
SMALL = ["--batch", "1", "--ring-degree", "8", "--max-testers", "2"]


def test_csv_matches_golden(tmp_path):
    out = tmp_path / "b.csv"
    assert C.main(["bench", "--dim", "1", "--dim", "2", "--trials", "2", "--out", str(out)]) == 0
    got = list(csv.reader(open(out)))
    want = list(csv.reader(open(os.path.join(HERE, "golden", "bench_matmul.csv"))))
    assert got[0] == list(C.CSV_FIELDS) == want[0]
    assert len(got) == len(want)
    for g, w in zip(got[1:], want[1:]):
        assert len(g) == 8
        assert all(a == b for a, b in zip(g, w) if b != "*"), (g, w)
        assert all(float(x) >= 0 for x in g[3:6])


def test_trivial_dim_row_count(tmp_path):
    recs = C.cmd_bench_matmul([1], 3, str(tmp_path / "x.csv"), log=None)
    assert len(recs) == 6
    assert len(C.read_csv(str(tmp_path / "x.csv"))) == 6


def test_sizes_identical_across_trials():
    recs = C.cmd_bench_matmul([3, 4], 3, None, log=None)
    for scheme in ("qmp", "qap"):
        for L in (3, 4):
            rs = [r for r in recs if r.scheme == scheme and r.L == L]
            assert len({(r.crs_bytes, r.proof_bytes) for r in rs}) == 1


def test_cap_refused_with_hint(capsys):
    assert C.main(["bench", "--dim", "129"]) == 2
    assert "--cap" in capsys.readouterr().err
    with pytest.raises(C.UsageError):
        C.cmd_bench_matmul([200], 1, None)


def test_env_overrides(monkeypatch, tmp_path):
    monkeypatch.setenv("QMPZK_TRIALS", "2")
    monkeypatch.setenv("QMPZK_DIM", "1,2")
    out = tmp_path / "e.csv"
    assert C.main(["bench", "--out", str(out)]) == 0
    assert len(C.read_csv(str(out))) == 8
    monkeypatch.setenv("QMPZK_CAP", "1")
    assert C.main(["bench", "--out", str(out)]) == 2
    monkeypatch.setenv("QMPZK_TRIALS", "many")
    assert C.main(["bench"]) == 2


def test_speedup_table_and_gadget_counts(capsys):
    recs = C.cmd_bench_matmul([2], 1, None, log=None)
    table = C.speedup_table(recs)
    assert len(table) == 2 and table[1].split()[0] == "2"
    assert C.main(["gadgets"]) == 0
    out = capsys.readouterr().out
    assert "relu" in out and " 20" in out and "144" in out


def test_usage_errors():
    assert C.main([]) == 2
    assert C.main(["nonsense"]) == 2
    assert C.main(["--help"]) == 0


@pytest.fixture(scope="module")
def flow(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "model.json").write_text(model_to_json(toy_model()))
    for s in (1, 2):
        x, y = toy_batch(s, 1)
        (root / f"d{s}.json").write_text(data_to_json(x, y))
    p = lambda n: str(root / n)
    assert C.main(["setup", "--model", p("model.json"), "--out", p("params")] + SMALL) == 0
    assert C.main(["commit-model", "--params", p("params"), "--model", p("model.json"), "--out", p("com")]) == 0
    assert C.main(["prove", "--params", p("params"), "--model", p("model.json"), "--commitment", p("com"),
                   "--data", p("d1.json"), p("d2.json"), "--out", p("bundle"), "--no-aggregate"]) == 0
    return root, p


def test_verify_honest_and_aggregate(flow):
    root, p = flow
    assert C.main(["verify", "--params", p("params"), "--bundle", p("bundle")]) == 0
    assert C.main(["aggregate", "--params", p("params"), "--bundle", p("bundle"), "--out", p("agg")]) == 0
    assert C.main(["verify", "--params", p("params"), "--bundle", p("agg")]) == 0
    h = json.loads((root / "com" / "commitment.json").read_text())["model_hash"]
    assert C.main(["verify", "--params", p("params"), "--bundle", p("agg"), "--model-hash", h]) == 0
    assert C.main(["verify", "--params", p("params"), "--bundle", p("agg"), "--model-hash", "00" * 32]) == 1


def test_flipped_byte_rejected(flow):
    root, p = flow
    shutil.copytree(p("bundle"), p("flip"))
    f = root / "flip" / "t1.L7.qmp"
    data = bytearray(f.read_bytes())
    data[len(data) // 2] ^= 0x10
    f.write_bytes(bytes(data))
    assert C.main(["verify", "--params", p("params"), "--bundle", p("flip")]) == 1


def test_edited_statement_with_fixed_manifest_rejected(flow):
    """Rewriting the manifest does not help: the proofs still fail."""
    root, p = flow
    shutil.copytree(p("bundle"), p("edit"))
    st = json.loads((root / "edit" / "statements.json").read_text())
    st["testers"][0]["correct_count"] += 1
    raw = json.dumps(st, indent=1, sort_keys=True).encode()
    (root / "edit" / "statements.json").write_bytes(raw)
    man = json.loads((root / "edit" / "manifest.json").read_text())
    man["files"]["statements.json"] = hashlib.sha256(raw).hexdigest()
    (root / "edit" / "manifest.json").write_text(json.dumps(man))
    assert C.main(["verify", "--params", p("params"), "--bundle", p("edit")]) == 1


def test_mismatched_model_and_missing_files(flow):
    root, p = flow
    other = toy_model(seed=9)
    (root / "other.json").write_text(model_to_json(other))
    assert C.main(["prove", "--params", p("params"), "--model", p("other.json"), "--commitment", p("com"),
                   "--data", p("d1.json"), "--out", p("nope")]) == 2
    assert C.main(["verify", "--params", p("params"), "--bundle", p("missing")]) == 2
    assert C.main(["verify", "--params", p("missing"), "--bundle", p("bundle")]) == 2
    assert C.main(["setup", "--model", p("missing.json"), "--out", p("x")]) == 2
    (root / "junk.json").write_text("{not json")
    assert C.main(["setup", "--model", p("junk.json"), "--out", p("x")]) == 2
    shutil.copytree(p("bundle"), p("gone"))
    os.remove(root / "gone" / "t0.S1-L1.link")
    assert C.main(["verify", "--params", p("params"), "--bundle", p("gone")]) == 2
