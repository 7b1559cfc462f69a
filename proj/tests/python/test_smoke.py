import json
import math

import numpy as np
import pytest

import gatekd


def test_entropy_and_confidence():
    p = [0.7, 0.2, 0.1]
    h = -sum(x * math.log(x) for x in p)
    assert gatekd.shannon_entropy(p) == pytest.approx(h, rel=1e-12)
    assert gatekd.confidence_exp(p) == pytest.approx(math.exp(-h), rel=1e-12)
    assert gatekd.confidence_normalized(p) == pytest.approx(1 - h / math.log(3), rel=1e-12)
    assert gatekd.confidence_normalized([0, 1, 0, 0]) == 1.0


def test_bad_distribution_raises():
    with pytest.raises(ValueError):
        gatekd.shannon_entropy([0.5, 0.6])


def test_batch_relative_gates():
    rng = np.random.default_rng(0)
    for _ in range(50):
        c = rng.random(int(rng.integers(1, 20))).tolist()
        mean = sum(c) / len(c)
        assert gatekd.make_gates(c) == [1.0 if x > mean else 0.0 for x in c]
    assert gatekd.make_gates([0.2, 0.9], "none") == [1.0, 1.0]


def test_tasks():
    assert gatekd.last_letter(["Max", "Mikey", "Cynthia", "Holly"])["target"] == "xyay"
    a = gatekd.gen_shuffled_objects(3, 2, 5)
    assert a == gatekd.gen_shuffled_objects(3, 2, 5)
    assert a["task"] == "shuffled_objects"


def test_config_round_trip():
    cfg = gatekd.parse_config("lambda2 = 0\nseeds = 0,1\n")
    assert list(cfg) == gatekd.config_keys()
    assert cfg["lambda2"] == "0"
    with pytest.raises(ValueError):
        gatekd.parse_config("nokey = 1\n")


def test_cli_usage_and_verify():
    code, _, err = gatekd.run_cli(["frobnicate"])
    assert code == 2
    assert json.loads(err.splitlines()[0])["error"] == "usage"
    assert all(passed for _, passed, _ in gatekd.verify())
