import pytest

from dualwaf.corpus import generate_corpus
from dualwaf.datasets import LabeledRecord
from dualwaf.errors import SingleClassData
from dualwaf.pipeline import load_bundle, save_bundle
from dualwaf.training import (LayerError, TrainConfig, default_created_at, evaluate_bundle,
                              record_truth, train)

SMALL = generate_corpus(250, 3)
QUICK = TrainConfig(seed=3, ngram=(1, 2))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(split=1.0)
    with pytest.raises(ValueError):
        TrainConfig(kfold=1)
    assert TrainConfig(ngram=[1, 3]).ngram == (1, 3)


def test_created_at(monkeypatch):
    monkeypatch.delenv("SOURCE_DATE_EPOCH", raising=False)
    assert default_created_at() == "1970-01-01T00:00:00Z"
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "86400")
    assert default_created_at() == "1970-01-02T00:00:00Z"


def test_train_small_and_deterministic(tmp_path):
    a = train(SMALL, SMALL, QUICK)
    b = train(SMALL, SMALL, QUICK)
    assert a.bundle.dumps() == b.bundle.dumps()
    assert a.to_dict() == b.to_dict()
    assert a.bundle.metadata["seed"] == 3
    save_bundle(a.bundle, tmp_path / "m.json")
    assert load_bundle(tmp_path / "m.json").fingerprint == a.bundle.fingerprint


def test_seed_changes_model():
    a = train(SMALL, SMALL, QUICK)
    b = train(SMALL, SMALL, TrainConfig(seed=4, ngram=(1, 2)))
    assert a.bundle.fingerprint != b.bundle.fingerprint


def test_layer_errors_are_tagged():
    only_valid = [r for r in SMALL if r.attack_class == "valid"]
    with pytest.raises(LayerError) as info:
        train(SMALL, only_valid, QUICK)
    assert info.value.layer == "layer 2"
    assert isinstance(info.value.cause, SingleClassData)
    normal = [r for r in SMALL if r.l1_label == 0]
    with pytest.raises(LayerError) as info:
        train(normal, SMALL, QUICK)
    assert info.value.layer == "layer 1"


def test_record_truth():
    assert record_truth(LabeledRecord("x", 1, "sqli")) == 1
    assert record_truth(LabeledRecord("x", 1, "valid")) == 0
    assert record_truth(LabeledRecord("x", 1)) == 1


def test_evaluate_bundle_fp_containment():
    res = train(SMALL, SMALL, QUICK)
    rep = evaluate_bundle(res.bundle, SMALL)
    assert rep.combined.confusion.fp <= rep.l1_only.confusion.fp
    assert rep.n_records == len(SMALL)
    assert list(rep.combined.per_class) == ["valid", "sqli", "xss", "path_traversal",
                                            "command_injection"]
    assert "Dual layer" in rep.table()


def test_seed42_holdout(trained42):
    assert trained42.l1_holdout.accuracy >= 0.95
    assert trained42.l1_kfold.mean_accuracy >= 0.95
    assert len(trained42.l1_kfold.reports) == 10
