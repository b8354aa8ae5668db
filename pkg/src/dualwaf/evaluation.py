"""Detection metrics, k-fold cross-validation and the layer-2 grid search.

Zero-denominator precision or recall is reported as 1.0 and listed in the
report's ``vacuous`` field, so fold means never turn into NaN.
"""
from __future__ import annotations

import logging
import math
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Hashable, NamedTuple, Sequence, TypeVar

from . import svm, vectorizer
from .errors import EmptyConfusion, LengthMismatch, TooFewRecords

log = logging.getLogger(__name__)

T = TypeVar("T")

DEFAULT_GRID = (((1, 1), "linear"), ((1, 1), "rbf"), ((1, 2), "linear"),
                ((1, 2), "rbf"), ((1, 4), "linear"), ((1, 4), "rbf"))


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "tn", "fn"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 0:
                raise ValueError(f"{name} must be a non-negative int, got {v!r}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp,
                               self.tn + other.tn, self.fn + other.fn)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn}


def precision(c: ConfusionCounts) -> float:
    d = c.tp + c.fp
    return 1.0 if d == 0 else c.tp / d


def recall(c: ConfusionCounts) -> float:
    d = c.tp + c.fn
    return 1.0 if d == 0 else c.tp / d


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise EmptyConfusion("accuracy of an empty confusion matrix")
    return (c.tp + c.tn) / c.total


def vacuous_metrics(c: ConfusionCounts) -> tuple[str, ...]:
    out = []
    if c.tp + c.fp == 0:
        out.append("precision")
    if c.tp + c.fn == 0:
        out.append("recall")
    return tuple(out)


def confusion(preds: Sequence[int], labels: Sequence[int]) -> ConfusionCounts:
    if len(preds) != len(labels):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(labels)} labels")
    if not preds:
        raise LengthMismatch("need at least one prediction")
    tp = fp = tn = fn = 0
    for p, y in zip(preds, labels):
        if p not in (0, 1) or y not in (0, 1):
            raise ValueError(f"binary labels must be 0/1, got pred={p!r} label={y!r}")
        if p == 1:
            if y == 1:
                tp += 1
            else:
                fp += 1
        elif y == 1:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, tn, fn)


class ClassMetrics(NamedTuple):
    precision: float
    recall: float
    support: int
    vacuous: tuple[str, ...] = ()


def _class_order(classes: set, reference: Sequence[str] = ()) -> list:
    known = [c for c in reference if c in classes]
    return known + sorted(c for c in classes if c not in reference)


def per_class_report(preds: Sequence[Hashable], labels: Sequence[Hashable],
                     order: Sequence[str] = ()) -> dict:
    """One-vs-rest precision/recall/support for every class seen in preds or labels."""
    if len(preds) != len(labels):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(labels)} labels")
    out = {}
    for cls in _class_order(set(preds) | set(labels), order):
        c = one_vs_rest_confusion(preds, labels, cls)
        out[cls] = ClassMetrics(precision(c), recall(c), c.tp + c.fn, vacuous_metrics(c))
    return out


def one_vs_rest_confusion(preds, labels, cls) -> ConfusionCounts:
    return confusion([int(p == cls) for p in preds], [int(y == cls) for y in labels])


def macro_recall(preds: Sequence[Hashable], labels: Sequence[Hashable]) -> float:
    """Mean recall over the classes present in ``labels``."""
    report = per_class_report(preds, labels)
    present = set(labels)
    return sum(m.recall for c, m in report.items() if c in present) / len(present)


@dataclass(frozen=True)
class EvalReport:
    confusion: ConfusionCounts
    accuracy: float
    precision: float
    recall: float
    per_class: dict | None = None
    vacuous: tuple[str, ...] = ()

    @classmethod
    def from_confusion(cls, c: ConfusionCounts, per_class: dict | None = None) -> "EvalReport":
        return cls(c, accuracy(c), precision(c), recall(c), per_class, vacuous_metrics(c))

    @classmethod
    def from_predictions(cls, preds, labels, class_preds=None, class_labels=None,
                         order: Sequence[str] = ()) -> "EvalReport":
        per_class = None
        if class_preds is not None:
            per_class = per_class_report(class_preds, class_labels, order)
        return cls.from_confusion(confusion(preds, labels), per_class)

    def to_dict(self) -> dict:
        d = {
            "confusion": self.confusion.to_dict(),
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "vacuous": list(self.vacuous),
        }
        if self.per_class is not None:
            d["per_class"] = {c: {"precision": m.precision, "recall": m.recall,
                                  "support": m.support, "vacuous": list(m.vacuous)}
                              for c, m in self.per_class.items()}
        return d


def format_comparison(columns: dict[str, EvalReport]) -> str:
    """Aligned text table: one column per report (e.g. layer-1 only vs combined)."""
    names = list(columns)
    rows = [("TP", lambda r: str(r.confusion.tp)), ("TN", lambda r: str(r.confusion.tn)),
            ("FP", lambda r: str(r.confusion.fp)), ("FN", lambda r: str(r.confusion.fn)),
            ("Accuracy", lambda r: f"{r.accuracy:.4f}"),
            ("Precision", lambda r: f"{r.precision:.4f}" + ("*" if "precision" in r.vacuous else "")),
            ("Recall", lambda r: f"{r.recall:.4f}" + ("*" if "recall" in r.vacuous else ""))]
    width = max(12, *(len(n) + 2 for n in names))
    lines = ["Metric".ljust(10) + "".join(n.rjust(width) for n in names)]
    for label, fmt in rows:
        lines.append(label.ljust(10) + "".join(fmt(columns[n]).rjust(width) for n in names))
    return "\n".join(lines)


def format_per_class(per_class: dict) -> str:
    width = max([len("Class")] + [len(str(c)) for c in per_class]) + 2
    lines = ["Class".ljust(width) + "Precision".rjust(11) + "Recall".rjust(9) + "Support".rjust(9)]
    for c, m in per_class.items():
        p = f"{m.precision:.4f}" + ("*" if "precision" in m.vacuous else "")
        r = f"{m.recall:.4f}" + ("*" if "recall" in m.vacuous else "")
        lines.append(str(c).ljust(width) + p.rjust(11) + r.rjust(9) + str(m.support).rjust(9))
    return "\n".join(lines)


# --- cross-validation --------------------------------------------------------------

def kfold_indices(n: int, k: int, seed: int) -> list[list[int]]:
    """Seeded shuffle of range(n) cut into k contiguous folds; the first n % k folds get one extra."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise TooFewRecords(f"{n} records cannot fill {k} folds")
    order = list(range(n))
    random.Random(seed).shuffle(order)
    base, extra = divmod(n, k)
    folds, start = [], 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(order[start:start + size])
        start += size
    return folds


@dataclass(frozen=True)
class KFoldResult:
    reports: list
    mean_accuracy: float
    std_accuracy: float

    def to_dict(self) -> dict:
        return {"k": len(self.reports), "mean_accuracy": self.mean_accuracy,
                "std_accuracy": self.std_accuracy,
                "folds": [r.to_dict() for r in self.reports]}


def _mean_std(xs: Sequence[float]) -> tuple[float, float]:
    m = math.fsum(xs) / len(xs)
    return m, math.sqrt(math.fsum((x - m) ** 2 for x in xs) / len(xs))


def kfold(records: Sequence[T], k: int, seed: int,
          train_fn: Callable[[list[T]], object],
          eval_fn: Callable[[object, list[T]], EvalReport], *, n_jobs: int = 1) -> KFoldResult:
    """Fold i tests on fold i and trains on the rest. Reports keep fold order."""
    folds = kfold_indices(len(records), k, seed)

    def run(i: int) -> EvalReport:
        train = [records[j] for m, f in enumerate(folds) if m != i for j in f]
        test = [records[j] for j in folds[i]]
        return eval_fn(train_fn(train), test)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            reports = list(pool.map(run, range(k)))
    else:
        reports = [run(i) for i in range(k)]
    mean, std = _mean_std([r.accuracy for r in reports])
    return KFoldResult(reports, mean, std)


# --- grid search -----------------------------------------------------------------------

class GridRow(NamedTuple):
    ngram_range: tuple[int, int]
    kernel: str
    score: float | None
    error: str | None = None


@dataclass(frozen=True)
class GridResult:
    rows: list
    best_index: int
    metric: str = "macro_recall"
    extra: dict = field(default_factory=dict)

    @property
    def best(self) -> GridRow:
        return self.rows[self.best_index]

    def to_dict(self) -> dict:
        return {
            "metric": self.metric,
            "best": {"ngram_range": list(self.best.ngram_range), "kernel": self.best.kernel,
                     "score": self.best.score},
            "rows": [{"ngram_range": list(r.ngram_range), "kernel": r.kernel,
                      "score": r.score, "error": r.error} for r in self.rows],
        }

    def table(self) -> str:
        lines = ["ngram".ljust(8) + "kernel".ljust(8) + self.metric.rjust(14)]
        for i, r in enumerate(self.rows):
            cell = f"{r.score:.4f}" if r.score is not None else f"error: {r.error}"
            mark = "  <- best" if i == self.best_index else ""
            lines.append(f"({r.ngram_range[0]},{r.ngram_range[1]})".ljust(8) + r.kernel.ljust(8)
                         + cell.rjust(14) + mark)
        return "\n".join(lines)


def _pick_best(rows: list[GridRow]) -> int:
    best = None
    for i, r in enumerate(rows):
        if r.score is not None and (best is None or r.score > rows[best].score):
            best = i
    if best is None:
        raise RuntimeError("every grid cell failed: " + "; ".join(
            f"{r.ngram_range}/{r.kernel}: {r.error}" for r in rows))
    return best


def run_grid(grid: Sequence[tuple[tuple[int, int], str]],
             score_fn: Callable[[tuple[int, int], str], float], *, n_jobs: int = 1) -> GridResult:
    """Score each (ngram_range, kernel) cell; failures are recorded, not raised."""
    if not grid:
        raise ValueError("grid must not be empty")

    def run(cell):
        ngram, kernel = cell
        try:
            return GridRow(tuple(ngram), kernel, float(score_fn(tuple(ngram), kernel)))
        except Exception as exc:  # keep going: one bad cell must not sink the search
            log.warning("grid cell %s/%s failed: %s", ngram, kernel, exc)
            return GridRow(tuple(ngram), kernel, None, f"{type(exc).__name__}: {exc}")

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            rows = list(pool.map(run, grid))
    else:
        rows = [run(c) for c in grid]
    return GridResult(rows, _pick_best(rows))


def train_layer2(texts: Sequence[str], classes: Sequence[str], ngram_range=(1, 4),
                 kernel: str = "rbf", C: float = 10.0, seed: int = 0,
                 max_features: int | None = vectorizer.NgramConfig.max_features):
    """Fit a vocabulary and a one-vs-rest SVM; returns (vocab, model)."""
    vocab = vectorizer.fit_vocabulary(
        list(texts), vectorizer.NgramConfig(ngram_range[0], ngram_range[1], max_features=max_features))
    X = vectorizer.transform_many(vocab, texts)
    model = svm.fit_multiclass(list(zip(X, classes)), svm.KernelSpec(kernel),
                               svm.SvmTrainConfig(C=C, seed=seed), n_features=len(vocab))
    return vocab, model


def score_layer2(vocab, model, texts: Sequence[str], classes: Sequence[str]) -> float:
    preds = [svm.predict_class(model, vectorizer.transform(vocab, t)) for t in texts]
    return macro_recall(preds, list(classes))


def grid_search(train: Sequence[tuple[str, str]], validation: Sequence[tuple[str, str]],
                grid: Sequence[tuple[tuple[int, int], str]] = DEFAULT_GRID, C: float = 10.0,
                seed: int = 0, *, n_jobs: int = 1) -> GridResult:
    """Train one layer-2 model per cell on ``train``; score macro recall on ``validation``.

    Inputs are (text, class) pairs. Ties go to the earlier cell.
    """
    tr_x, tr_y = [t for t, _ in train], [c for _, c in train]
    va_x, va_y = [t for t, _ in validation], [c for _, c in validation]

    def score(ngram, kernel):
        vocab, model = train_layer2(tr_x, tr_y, ngram, kernel, C, seed)
        return score_layer2(vocab, model, va_x, va_y)

    return run_grid(grid, score, n_jobs=n_jobs)


def cv_grid_search(data: Sequence[tuple[str, str]], k: int,
                   grid: Sequence[tuple[tuple[int, int], str]] = DEFAULT_GRID, C: float = 10.0,
                   seed: int = 0, *, n_jobs: int = 1) -> GridResult:
    """Grid search where each cell is scored by mean macro recall over k folds."""
    folds = kfold_indices(len(data), k, seed)

    def score(ngram, kernel):
        scores = []
        for i, fold in enumerate(folds):
            train = [data[j] for m, f in enumerate(folds) if m != i for j in f]
            vocab, model = train_layer2([t for t, _ in train], [c for _, c in train],
                                        ngram, kernel, C, seed)
            scores.append(score_layer2(vocab, model, [data[j][0] for j in fold],
                                       [data[j][1] for j in fold]))
        return math.fsum(scores) / len(scores)

    result = run_grid(grid, score, n_jobs=n_jobs)
    return GridResult(result.rows, result.best_index, "cv_macro_recall", {"k": k})
