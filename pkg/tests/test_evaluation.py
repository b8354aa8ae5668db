import random

import pytest
from hypothesis import given, strategies as st

from dualwaf.errors import EmptyConfusion, LengthMismatch, TooFewRecords
from dualwaf.evaluation import (ConfusionCounts, EvalReport, GridRow, _pick_best, accuracy, confusion,
                                format_comparison, format_per_class, grid_search, kfold,
                                kfold_indices, macro_recall, one_vs_rest_confusion,
                                per_class_report, precision, recall, run_grid)

CLS = ["valid", "sqli", "xss", "path_traversal", "command_injection"]


def test_precision_examples():
    assert precision(ConfusionCounts(tp=22625, fp=0)) == 1.0
    assert precision(ConfusionCounts(tp=0, fp=5)) == 0.0
    assert precision(ConfusionCounts(tp=3, fp=1)) == 0.75
    assert precision(ConfusionCounts(tn=4)) == 1.0


def test_recall_examples():
    assert recall(ConfusionCounts(tp=22625, fn=51)) == pytest.approx(0.997751, abs=1e-6)
    assert recall(ConfusionCounts(fn=1)) == 0.0
    assert recall(ConfusionCounts(tp=1, fn=1)) == 0.5


def test_accuracy_examples():
    assert accuracy(ConfusionCounts(22625, 0, 7835, 51)) == pytest.approx(0.99833, abs=1e-5)
    assert accuracy(ConfusionCounts(tp=5, tn=5)) == 1.0
    assert accuracy(ConfusionCounts(1, 1, 1, 1)) == 0.5
    with pytest.raises(EmptyConfusion):
        accuracy(ConfusionCounts())


def test_confusion_counts_validation():
    with pytest.raises(ValueError):
        ConfusionCounts(tp=-1)
    with pytest.raises(ValueError):
        ConfusionCounts(tp=1.5)


def test_confusion_examples():
    assert confusion([1, 0], [1, 0]) == ConfusionCounts(tp=1, tn=1)
    assert confusion([1], [0]) == ConfusionCounts(fp=1)
    with pytest.raises(LengthMismatch):
        confusion([1], [1, 0])


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=100))
def test_confusion_matches_tally(pairs):
    c = confusion([p for p, _ in pairs], [y for _, y in pairs])
    assert c.tp == sum(1 for p, y in pairs if p and y)
    assert c.fp == sum(1 for p, y in pairs if p and not y)
    assert c.tn == sum(1 for p, y in pairs if not p and not y)
    assert c.fn == sum(1 for p, y in pairs if not p and y)
    r = EvalReport.from_confusion(c)
    for v in (r.accuracy, r.precision, r.recall):
        assert 0.0 <= v <= 1.0
    assert abs(r.accuracy - (c.tp + c.tn) / c.total) <= 1e-12
    if c.tp + c.fp:
        assert abs(r.precision - c.tp / (c.tp + c.fp)) <= 1e-12
    if c.tp + c.fn:
        assert abs(r.recall - c.tp / (c.tp + c.fn)) <= 1e-12


def test_per_class_examples():
    labels = [c for c in CLS for _ in range(4)]
    rep = per_class_report(labels, labels)
    assert all(m.precision == m.recall == 1.0 for m in rep.values())
    preds = list(labels)
    i = labels.index("xss")
    preds[i] = "sqli"
    rep = per_class_report(preds, labels)
    assert rep["xss"].recall == pytest.approx(1 - 1 / 4)
    assert rep["sqli"].precision == pytest.approx(4 / 5)
    rep = per_class_report(["a", "a"], ["a", "b"])
    assert rep["b"].recall == 0.0 and rep["b"].precision == 1.0
    assert "precision" in rep["b"].vacuous


def test_per_class_order():
    rep = per_class_report(["xss", "zeta", "valid"], ["xss", "alpha", "valid"], CLS)
    assert list(rep) == ["valid", "xss", "alpha", "zeta"]


@given(st.lists(st.tuples(st.sampled_from(CLS), st.sampled_from(CLS)), min_size=1, max_size=60))
def test_per_class_collapses_to_binary(pairs):
    preds, labels = [p for p, _ in pairs], [y for _, y in pairs]
    binary = confusion([int(p != "valid") for p in preds], [int(y != "valid") for y in labels])
    rep = per_class_report(preds, labels)
    attack = [c for c in rep if c != "valid"]
    assert sum(rep[c].support for c in attack) == binary.tp + binary.fn
    predicted_attack = sum(
        one_vs_rest_confusion(preds, labels, c).tp + one_vs_rest_confusion(preds, labels, c).fp
        for c in attack)
    assert predicted_attack == binary.tp + binary.fp


def test_macro_recall():
    assert macro_recall(["a", "b", "b"], ["a", "b", "a"]) == pytest.approx((0.5 + 1.0) / 2)


def test_kfold_indices_examples():
    f = kfold_indices(4, 2, 0)
    assert sorted(map(len, f)) == [2, 2] and sorted(f[0] + f[1]) == [0, 1, 2, 3]
    assert [len(x) for x in kfold_indices(5, 2, 0)] == [3, 2]
    with pytest.raises(TooFewRecords):
        kfold_indices(2, 3, 0)
    with pytest.raises(ValueError):
        kfold_indices(5, 1, 0)


@given(st.integers(2, 40), st.integers(2, 12), st.integers(0, 100))
def test_kfold_partition(n, k, seed):
    if n < k:
        return
    folds = kfold_indices(n, k, seed)
    flat = [i for f in folds for i in f]
    assert sorted(flat) == list(range(n))
    sizes = [len(f) for f in folds]
    assert max(sizes) - min(sizes) <= 1
    assert kfold_indices(n, k, seed) == folds


def test_kfold_constant_classifier():
    records = [0, 1] * 50
    res = kfold(records, 10, 3, lambda tr: None,
                lambda _m, te: EvalReport.from_predictions([1] * len(te), te))
    assert len(res.reports) == 10
    assert res.mean_accuracy == pytest.approx(0.5, abs=0.1)
    par = kfold(records, 10, 3, lambda tr: None,
                lambda _m, te: EvalReport.from_predictions([1] * len(te), te), n_jobs=4)
    assert [r.to_dict() for r in par.reports] == [r.to_dict() for r in res.reports]


def test_run_grid_rules():
    scores = {((1, 1), "linear"): 0.5, ((1, 1), "rbf"): 0.9, ((1, 2), "linear"): 0.9}
    res = run_grid(list(scores), lambda n, k: scores[(n, k)])
    assert len(res.rows) == 3 and res.best_index == 1
    assert res.best.score == max(r.score for r in res.rows)
    res = run_grid([((1, 1), "linear")], lambda n, k: 0.1)
    assert res.best_index == 0

    def flaky(n, k):
        if k == "rbf":
            raise RuntimeError("boom")
        return 0.3
    res = run_grid([((1, 1), "rbf"), ((1, 2), "linear")], flaky)
    assert res.rows[0].error and res.best_index == 1
    with pytest.raises(RuntimeError):
        run_grid([((1, 1), "rbf")], flaky)
    with pytest.raises(ValueError):
        run_grid([], flaky)
    assert _pick_best([GridRow((1, 1), "a", 0.7), GridRow((1, 2), "b", 0.7)]) == 0


def test_grid_search_on_toy_texts():
    rng = random.Random(0)
    pools = {"valid": ["name=anna", "q=blue+shoes", "page=2"],
             "sqli": ["id=1' or '1'='1", "x=1 union select 1", "u=admin'--"],
             "xss": ["q=<script>alert(1)</script>", "<img onerror=alert(1)>", "<svg onload=x>"]}
    data = [(rng.choice(v) + str(i), c) for i in range(12) for c, v in pools.items()]
    res = grid_search(data[:24], data[24:], seed=1)
    assert len(res.rows) == 6
    assert res.best.score == max(r.score for r in res.rows if r.score is not None)
    assert "<- best" in res.table()


def test_formatting():
    r = EvalReport.from_predictions([1, 0, 0], [1, 1, 0], ["sqli", "valid", "valid"],
                                    ["sqli", "xss", "valid"], CLS)
    text = format_comparison({"A": r, "B": r})
    assert "Accuracy" in text and "0.6667" in text
    assert "xss" in format_per_class(r.per_class)
    d = r.to_dict()
    assert d["confusion"] == {"tp": 1, "fp": 0, "tn": 1, "fn": 1}
