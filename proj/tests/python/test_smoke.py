import json
import math

import pytest

import oocdm

BLOCK2 = json.dumps({"name": "block", "counts": {"Block": 2}})
MOUSE = json.dumps({"name": "mouse", "counts": {"Food": 2, "Monster": 1, "Trap": 1}})


def test_eval_primitive():
    out = oocdm.eval_primitive("matmul", [[[1, 2], [3, 4]], [[1], [1]]])
    assert out == [[3.0], [7.0]]
    assert oocdm.eval_primitive("relu", [[-2.0, 0.0, 5.0]]) == [0.0, 0.0, 5.0]


def test_schema_and_grounding():
    schema = json.loads(oocdm.schema_json(BLOCK2))
    names = [c["name"] for c in schema["classes"]]
    assert names == ["Block", "Total"]
    assert oocdm.ground_sizes(BLOCK2) == (12, 10)
    big = json.dumps({"name": "block", "counts": {"Block": 5}})
    assert oocdm.ground_sizes(big) == (24, 19)


def test_ground_truth_graph_scores_perfectly():
    graph = oocdm.ground_truth_graph_json(BLOCK2)
    assert oocdm.graph_accuracy(BLOCK2, graph) == 100.0
    empty = json.dumps({"local": [], "global": []})
    assert oocdm.graph_accuracy(BLOCK2, empty) < 100.0


def test_collect_and_pipeline(tmp_path):
    n = oocdm.collect(MOUSE, "uniform", 50, 0.0, 7, False, str(tmp_path / "d.jsonl"))
    assert n == 50

    config = {
        "env": {"name": "block", "counts": {"Block": 2}},
        "data": {"train_steps": 150, "id_steps": 40, "ood_steps": 40},
        "mode": "oocdm",
        "dims": {"d_e": 4, "d_k": 6, "d_v": 6, "enc_hidden": [8], "dec_hidden": [8]},
        "train": {
            "n_iter": 1,
            "n_batch": 5,
            "batch_size": 32,
            "epsilon": 0.3,
            "discovery_subsample": 64,
            "threads": 1,
        },
        "suites": ["train", "id"],
        "planning": {"enabled": False},
        "seed": 3,
        "out": str(tmp_path / "exp"),
    }
    report = json.loads(oocdm.run_experiment(json.dumps(config)))
    suites = [row["suite"] for row in report["aill"]]
    assert suites == ["train", "id"]
    assert all(row["finite"] for row in report["aill"])
    assert 0.0 <= report["graph_accuracy"] <= 100.0

    aill = oocdm.checkpoint_aill(str(tmp_path / "exp/model"), str(tmp_path / "exp/train.jsonl"))
    assert math.isfinite(aill)

    disc = json.loads(
        oocdm.discover_checkpoint(
            str(tmp_path / "exp/model"), str(tmp_path / "exp/train.jsonl"), 0.3
        )
    )
    assert disc["report"]["entries"]


def test_oracle_planning_runs():
    ret = oocdm.oracle_mpc_episode(MOUSE, 3, 2, 6, 2, 0.95, 11)
    assert math.isfinite(ret)


def test_bad_env_rejected():
    with pytest.raises(Exception):
        oocdm.ground_sizes(json.dumps({"name": "starcraft"}))
