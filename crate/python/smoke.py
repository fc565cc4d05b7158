"""Smoke test for the pyicrkit extension module.

Build and install first:

    pip install maturin
    maturin develop -m crates/python/Cargo.toml

Then run from the repository root:

    python python/smoke.py
"""

import json
import math
import pathlib
import subprocess
import sys
import tempfile

import pyicrkit as ik

ROOT = pathlib.Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "crates" / "cli" / "tests" / "fixtures"
KINDS = ["AO", "ID", "ID_C", "ID_Q", "R_JUDGE"]


def read_jsonl(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def check_scalars():
    assert ik.normalize_answer("The  Answer!") == "answer"
    assert ik.sub_exact_match("it was Arthur's Magazine.", "arthurs magazine")
    assert ik.rouge_l("the cat sat", "the cat") == 0.8
    assert ik.rouge_l("alpha beta", "gamma delta") == 0.0
    assert ik.ndcg_at_k([0, 1, 2], {0}, 10) == 1.0
    jac, f1, ngram = ik.similarity("abc def", "abc def")
    assert jac == f1 == ngram == 1.0

    tables = json.loads((FIXTURES / "drop_tables.json").read_text())
    r, p = ik.pearson(tables["correlation"]["x"], tables["correlation"]["y"])
    assert abs(r + 0.09) <= 0.01 and abs(p - 0.86) <= 0.02, (r, p)

    drops, avg = ik.drop_table({"MC": 72.0, "Sum": 31.2}, {"MC": 62.0, "Sum": 27.3})
    assert list(drops) == ["MC", "Sum"]
    assert math.isclose(avg, (drops["MC"] + drops["Sum"]) / 2)


def check_parser():
    parsed = ik.parse_output("Relevant Document IDs: [DOC 2], [DOC -1]\nThe answer is: x")
    assert "malformed_ids" in parsed["format_flags"], parsed
    assert parsed["answer"] == "x"


def scored_requests(scorer):
    preds = read_jsonl(FIXTURES / "predictions.jsonl")
    out = {}
    for p in preds:
        for kind in KINDS:
            rid = f"{p['id']}:{kind}"
            req = {"request_id": rid, "instance_id": p["id"], "output_text": p["output"], "kind": kind}
            out[rid] = scorer.score(req)
    return out


def cli_rewards(tmp):
    binary = ROOT / "target" / "debug" / "icrkit"
    if not binary.exists():
        return None
    subprocess.run(
        [
            str(binary),
            "--config", str(FIXTURES / "recorded.toml"),
            "reward",
            "--instances", str(FIXTURES / "instances.jsonl"),
            "--predictions", str(FIXTURES / "predictions.jsonl"),
            "--kind", ",".join(KINDS),
            "--out", tmp,
        ],
        check=True,
        env={"ICRKIT_LOG": "error"},
    )
    return {r["request_id"]: r for r in read_jsonl(pathlib.Path(tmp) / "rewards.jsonl")}


def check_scorer():
    scorer = ik.Scorer(str(FIXTURES / "instances.jsonl"), str(FIXTURES / "judge.jsonl"))
    assert len(scorer) == 10
    got = scored_requests(scorer)
    ao_mean = sum(got[f"{i}:AO"]["total"] for i in {k.split(":")[0] for k in got}) / 10
    assert ao_mean == 0.7, ao_mean

    inst = read_jsonl(FIXTURES / "instances.jsonl")[0]
    direct = ik.compute_reward(inst, "The answer is: Arthur's Magazine", "AO")
    assert direct["total"] == 1.0

    missing = scorer.score({"request_id": "x", "instance_id": "nope", "output_text": "", "kind": "AO"})
    assert "error" in missing

    with tempfile.TemporaryDirectory() as tmp:
        batch = cli_rewards(tmp)
    if batch is None:
        print("skipped CLI parity: target/debug/icrkit not built")
        return
    assert batch.keys() == got.keys()
    for rid, resp in got.items():
        assert resp == batch[rid], (rid, resp, batch[rid])
    print(f"CLI parity: {len(got)} responses identical")


def main():
    check_scalars()
    check_parser()
    check_scorer()
    print("smoke OK")
    return 0


if __name__ == "__main__":
    sys.exit(main())
