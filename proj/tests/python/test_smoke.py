import math
import os
from pathlib import Path

import numpy as np
import pytest

import cnnqa

SOURCE_DIR = Path(os.environ.get("CNNQA_SOURCE_DIR", Path(__file__).resolve().parents[2]))
ANIMALS = [("root", "ROOT"), ("animal", "root"), ("cat", "animal"), ("dog", "animal")]


def test_tokenize():
    assert cnnqa.tokenize("What is on the TABLE ?") == ["what", "is", "on", "the", "table"]


@pytest.mark.parametrize("mode", ["full", "concat", "language"])
def test_gradient_check_passes(mode):
    report = cnnqa.gradient_check(mode, seed=0)
    assert report["passed"]
    assert report["max_relative_error"] < 1e-3


def test_gradient_check_catches_corruption():
    assert not cnnqa.gradient_check("full", seed=0, corrupt=True)["passed"]


def test_sentence_shape_for_every_length():
    for length in range(1, 39):
        assert cnnqa.sentence_output_shape(length) == (3, 400)
    with pytest.raises(cnnqa.ArgumentError):
        cnnqa.sentence_output_shape(39)


def test_wups_examples():
    tree = cnnqa.Taxonomy(ANIMALS)
    assert tree.depth("cat") == 3
    assert tree.wup("cat", "animal") == pytest.approx(0.8)
    assert cnnqa.wups(["cat"], ["dog"], tree, 0.0) == pytest.approx(2 / 3)
    assert cnnqa.wups(["cat"], ["dog"], tree, 0.9) == pytest.approx(0.2 / 3)
    assert cnnqa.accuracy(["a", "b", "c", "x"], ["a", "b", "c", "d"]) == 0.75
    with pytest.raises(cnnqa.DimensionError):
        cnnqa.accuracy(["a"], ["a", "b"])


def test_synthetic_is_deterministic():
    a, fa = cnnqa.synthetic(samples=100, seed=7)
    b, fb = cnnqa.synthetic(samples=100, seed=7)
    assert a == b
    assert len(fa) == 100 and fa.feature_dim == 64
    assert np.array_equal(fa[a[0][0]], fb[b[0][0]])
    shuffled = cnnqa.shuffle_questions(a, 3)
    assert [sorted(q.split()) for _, q, _ in shuffled] == [sorted(q.split()) for _, q, _ in a]
    with pytest.raises(cnnqa.ArgumentError):
        cnnqa.synthetic(colors=1)


def test_train_predict_and_reload(tmp_path):
    triplets, features = cnnqa.synthetic(samples=50, seed=3)
    config = {"max_len": 23, "embed_dim": 16, "feature_maps": [32, 32, 32], "joint_dim": 32,
              "fusion_maps": 128, "batch_size": 1, "epochs": 3}
    model, log = cnnqa.train(triplets, features, config, eval=triplets)
    assert [entry["epoch"] for entry in log] == [1, 2, 3]
    assert all(math.isfinite(entry["mean_loss"]) for entry in log)
    assert log[-1]["mean_loss"] < log[0]["mean_loss"]

    image, question, _ = triplets[0]
    answer = model.predict(question, features[image])
    assert answer in model.answers

    path = tmp_path / "model.bin"
    model.save(path)
    again = cnnqa.Model.load(path)
    assert np.array_equal(again.parameters, model.parameters)
    assert again.config == model.config
    first = model.evaluate(triplets, features)
    second = again.evaluate(triplets, features)
    assert first == second
    assert "wups_0.0" not in first

    tree = cnnqa.Taxonomy.load(SOURCE_DIR / "data" / "toy_taxonomy.tsv")
    assert "wups_0.9" in model.evaluate(triplets, features, taxonomy=tree)

    with pytest.raises(cnnqa.ArgumentError):
        cnnqa.train(triplets, features, {"epochz": 1})


def test_run_cli(tmp_path):
    code, out, _ = cnnqa.run_cli(["gradcheck", "--mode", "concat"])
    assert code == 0
    assert out.startswith("PASS concat")
    code, _, _ = cnnqa.run_cli(["synth", "--out", str(tmp_path), "--samples", "20"])
    assert code == 0
    assert len(cnnqa.load_triplets(tmp_path / "triplets.tsv")) == 20
    assert cnnqa.run_cli(["synth", "--colors", "1", "--out", str(tmp_path)])[0] == 2
