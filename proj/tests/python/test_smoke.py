import math

import numpy as np
import pytest

import dynhd


def small_sim(**extra):
    cfg = {"n_factual": 60, "n_hallucinated": 60, "T": 8, "l": 10, "seed": 1}
    cfg.update(extra)
    return dynhd.simulate(cfg)


SMALL_TRAIN = {
    "splits": {"train": 80, "validation": 20, "test": 20},
    "stage1": {"epochs": 5},
    "stage2": {"epochs": 3},
    "generator": {"hidden": [16]},
    "detector": {"hidden": 8, "attention_dim": 4, "head_hidden": 4},
}


def test_entropy_closed_forms():
    assert dynhd.shannon_entropy([0.01] * 100) == pytest.approx(math.log(100), abs=1e-12)
    assert dynhd.shannon_entropy([0.0, 1.0]) == 0.0
    assert dynhd.entropy_from_logits([0.0] * 7) == pytest.approx(math.log(7), abs=1e-12)


def test_step_evidence():
    mean, peak, topk = dynhd.step_evidence([0.5, 1.0, 2.0, 0.1], k=2)
    assert (mean, peak, topk) == (pytest.approx(0.9), 2.0, 1.5)
    assert dynhd.step_evidence([], k=3) == (0.0, 0.0, 0.0)


def test_filtering():
    spec = dynhd.IgnoreSpec.defaults()
    tok = dynhd.TokenRecord(1, "<|endoftext|>")
    assert dynhd.classify_token(tok, spec) == dynhd.TokenClass.control
    assert dynhd.classify_token(dynhd.TokenRecord(1, "Peru"), dynhd.IgnoreSpec()) == dynhd.TokenClass.semantic
    custom = dynhd.ignore_spec({"stopwords": ["the"]})
    step = dynhd.StepRecord(0, [dynhd.TokenRecord(1, "the"), dynhd.TokenRecord(2, "Paris")])
    assert dynhd.valid_positions(step, custom) == [2]


def test_dataset_round_trip(tmp_path):
    ds = small_sim()
    assert len(ds) == 120
    path = str(tmp_path / "d.jsonl.gz")
    dynhd.write_dataset(ds, path)
    back = dynhd.read_dataset(path)
    assert back.header.T == 8
    assert back.labels() == ds.labels()
    a = ds.trajectories[0].steps[3].tokens[2].entropy
    assert back.trajectories[0].steps[3].tokens[2].entropy == a


def test_validation_errors():
    with pytest.raises(dynhd.ValidationError, match="line 1"):
        dynhd.parse_dataset("{not json\n")
    ds = small_sim()
    traj = ds.trajectories[0]
    traj.steps = list(reversed(traj.steps))
    ds.trajectories = [traj]
    with pytest.raises(dynhd.ValidationError, match="steps not descending"):
        dynhd.validate(ds)
    with pytest.raises(dynhd.IoError):
        dynhd.read_dataset("/nonexistent/file.jsonl")


def test_build_evidence_shape():
    ds = small_sim()
    ev, kept = dynhd.build_evidence(ds.trajectories[0], dynhd.IgnoreSpec.defaults())
    assert ev.shape == (9, 3)
    assert len(kept) == 9
    assert np.all(ev[:, 0] <= ev[:, 2] + 1e-12)
    assert np.all(ev[:, 2] <= ev[:, 1])


def test_train_score_evaluate(tmp_path):
    ds = small_sim()
    model, report = dynhd.train(ds, SMALL_TRAIN)
    assert len(report["stage2_epochs"]) == 3
    assert 0.0 <= report["test_auroc"] <= 1.0

    scores = model.score(ds)
    assert len(scores) == len(ds)
    for s in scores[:5]:
        assert s.omega.shape == (9,)
        assert s.omega.sum() == pytest.approx(1.0, abs=1e-9)
        assert 0.0 <= s.probability <= 1.0

    path = str(tmp_path / "model.json")
    model.save(path)
    again = dynhd.Model.load(path)
    assert [s.logit for s in again.score(ds)] == [s.logit for s in scores]
    test = dynhd.Dataset(ds.header, ds.trajectories[-20:])
    assert again.evaluate(test) == pytest.approx(report["test_auroc"])
    assert again.reference(ds.trajectories[0].query_embedding, 8).shape == (9, 3)


def test_training_determinism():
    ds = small_sim()
    _, a = dynhd.train(ds, SMALL_TRAIN)
    _, b = dynhd.train(ds, SMALL_TRAIN)
    assert a == b


def test_auroc():
    assert dynhd.auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    with pytest.raises(dynhd.Error):
        dynhd.auroc([0.1, 0.2], [1, 1])
