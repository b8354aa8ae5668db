"""End-to-end training and scoring of a two-layer model bundle."""
from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Sequence

from . import dtree, evaluation, svm, vectorizer
from .datasets import CLASSES, LabeledRecord, balance, clean, split
from .errors import EmptyDataset, SingleClassData
from .evaluation import EvalReport, KFoldResult
from .features import LexiconConfig, default_lexicon, extract_features
from .http_model import DEFAULT_INSPECTED_HEADERS, DEFAULT_MAX_ROUNDS
from .pipeline import BENIGN_CLASS, BLOCK, WafModelBundle, classify_text
from .rng import derive_seed

log = logging.getLogger(__name__)


def default_created_at() -> str:
    """Bundle timestamp. Honors SOURCE_DATE_EPOCH so rebuilds stay byte-identical."""
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0"))
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 42
    split: float = 0.8
    kfold: int | None = None
    balance: bool = True
    # layer 1
    max_depth: int | None = 12
    min_samples_split: int = 2
    min_samples_leaf: int = 1
    # layer 2
    ngram: tuple[int, int] = (1, 4)
    kernel: str = "rbf"
    gamma: float | None = None
    C: float = 10.0
    tol: float = 1e-3
    max_passes: int = 10
    max_iterations: int = 200_000
    max_features: int | None = 50_000
    # inspection
    header_allowlist: tuple[str, ...] = DEFAULT_INSPECTED_HEADERS
    max_decode_rounds: int = DEFAULT_MAX_ROUNDS
    created_at: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "ngram", tuple(self.ngram))
        object.__setattr__(self, "header_allowlist", tuple(self.header_allowlist))
        if not 0.0 < self.split < 1.0:
            raise ValueError("split must lie in (0, 1)")
        if self.kfold is not None and self.kfold < 2:
            raise ValueError("kfold must be >= 2")

    def dt_config(self) -> dtree.DtConfig:
        return dtree.DtConfig(max_depth=self.max_depth, min_samples_split=self.min_samples_split,
                              min_samples_leaf=self.min_samples_leaf,
                              seed=derive_seed(self.seed, "tree"))

    def ngram_config(self) -> vectorizer.NgramConfig:
        return vectorizer.NgramConfig(self.ngram[0], self.ngram[1], max_features=self.max_features)

    def svm_config(self) -> svm.SvmTrainConfig:
        return svm.SvmTrainConfig(C=self.C, tol=self.tol, max_passes=self.max_passes,
                                  max_iterations=self.max_iterations, seed=derive_seed(self.seed, "smo"))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ngram"] = list(self.ngram)
        d["header_allowlist"] = list(self.header_allowlist)
        return d


class LayerError(Exception):
    """Training failure tagged with the layer that failed."""

    def __init__(self, layer: str, cause: BaseException):
        super().__init__(f"{layer}: {type(cause).__name__}: {cause}")
        self.layer = layer
        self.cause = cause


@dataclass
class TrainResult:
    bundle: WafModelBundle
    l1_holdout: EvalReport
    l2_holdout: EvalReport
    l1_kfold: KFoldResult | None = None
    notes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "fingerprint": self.bundle.fingerprint,
            "l1_holdout": self.l1_holdout.to_dict(),
            "l2_holdout": self.l2_holdout.to_dict(),
            "notes": self.notes,
        }
        if self.l1_kfold is not None:
            d["l1_kfold"] = self.l1_kfold.to_dict()
        return d


def _texts(records: Sequence[LabeledRecord], cfg: TrainConfig) -> list[str]:
    return [r.text(cfg.header_allowlist, cfg.max_decode_rounds) for r in records]


def l1_rows(records: Sequence[LabeledRecord], lexicon: LexiconConfig, cfg: TrainConfig):
    return [(extract_features(t, lexicon), r.l1_label) for t, r in zip(_texts(records, cfg), records)]


def _l1_report(model, rows) -> EvalReport:
    return EvalReport.from_predictions([dtree.predict(model, fv) for fv, _ in rows],
                                       [y for _, y in rows])


def training_fingerprint(l1_records, l2_records, cfg: TrainConfig) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(cfg.to_dict(), sort_keys=True).encode())
    for tag, recs in (("l1", l1_records), ("l2", l2_records)):
        h.update(tag.encode())
        for r in recs:
            h.update(json.dumps(r.to_json(), sort_keys=True, ensure_ascii=True).encode())
            h.update(b"\n")
    return h.hexdigest()[:16]


def train_layer1(records: Sequence[LabeledRecord], cfg: TrainConfig, lexicon: LexiconConfig):
    """Returns (model, holdout report, kfold result or None, counts)."""
    records = [r for r in records if r.l1_label is not None]
    if not records:
        raise EmptyDataset("no records with a layer-1 label")
    records, report = clean(records)
    if cfg.balance:
        records = balance(records, derive_seed(cfg.seed, "balance"))
    train, test = split(records, cfg.split, derive_seed(cfg.seed, "split"))
    if not train or not test:
        raise EmptyDataset(f"split left an empty side ({len(train)}/{len(test)})")
    train_rows, test_rows = l1_rows(train, lexicon, cfg), l1_rows(test, lexicon, cfg)
    model = dtree.fit(train_rows, cfg.dt_config())
    holdout = _l1_report(model, test_rows)
    folds = None
    if cfg.kfold:
        rows = train_rows + test_rows
        folds = evaluation.kfold(rows, cfg.kfold, derive_seed(cfg.seed, "kfold"),
                                 lambda tr: dtree.fit(tr, cfg.dt_config()), _l1_report)
    counts = {"clean": report.to_dict(), "used": len(records), "train": len(train), "test": len(test)}
    return model, holdout, folds, counts


def train_layer2(records: Sequence[LabeledRecord], cfg: TrainConfig):
    """Returns (vocab, model, holdout report, counts)."""
    records = [r for r in records if r.attack_class is not None]
    if not records:
        raise EmptyDataset("no records with an attack class")
    records, report = clean(records)
    train, test = split(records, cfg.split, derive_seed(cfg.seed, "split"))
    if len({r.attack_class for r in train}) < 2:
        raise SingleClassData("layer-2 training data needs at least two classes")
    texts = _texts(train, cfg)
    vocab = vectorizer.fit_vocabulary(texts, cfg.ngram_config())
    data = list(zip(vectorizer.transform_many(vocab, texts), [r.attack_class for r in train]))
    model = svm.fit_multiclass(data, svm.KernelSpec(cfg.kernel, cfg.gamma), cfg.svm_config(),
                               n_features=len(vocab))
    if test:
        preds = [svm.predict_class(model, vectorizer.transform(vocab, t)) for t in _texts(test, cfg)]
        labels = [r.attack_class for r in test]
    else:
        preds = labels = []
    if preds:
        holdout = EvalReport.from_predictions(
            [int(p != BENIGN_CLASS) for p in preds], [int(y != BENIGN_CLASS) for y in labels],
            preds, labels, CLASSES)
    else:
        raise EmptyDataset("layer-2 holdout split is empty")
    counts = {"clean": report.to_dict(), "train": len(train), "test": len(test),
              "converged": model.converged}
    return vocab, model, holdout, counts


def train(l1_records: Sequence[LabeledRecord], l2_records: Sequence[LabeledRecord],
          cfg: TrainConfig | None = None, lexicon: LexiconConfig | None = None) -> TrainResult:
    cfg = cfg or TrainConfig()
    lexicon = lexicon or default_lexicon()
    try:
        l1, l1_holdout, folds, l1_counts = train_layer1(l1_records, cfg, lexicon)
    except Exception as exc:
        raise LayerError("layer 1", exc) from exc
    try:
        vocab, l2, l2_holdout, l2_counts = train_layer2(l2_records, cfg)
    except Exception as exc:
        raise LayerError("layer 2", exc) from exc
    bundle = WafModelBundle(
        lexicon=lexicon, l1=l1, vocab=vocab, l2=l2,
        created_at=cfg.created_at or default_created_at(),
        training_fingerprint=training_fingerprint(l1_records, l2_records, cfg),
        header_allowlist=cfg.header_allowlist, max_decode_rounds=cfg.max_decode_rounds,
        metadata={"seed": cfg.seed, "config": cfg.to_dict(), "l1": l1_counts, "l2": l2_counts},
    )
    return TrainResult(bundle, l1_holdout, l2_holdout, folds, {"l1": l1_counts, "l2": l2_counts})


# --- scoring -------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonReport:
    """Layer-1-only vs combined detection on the same records, plus per-class results."""
    l1_only: EvalReport
    combined: EvalReport
    n_records: int

    def to_dict(self) -> dict:
        return {"n_records": self.n_records, "l1_only": self.l1_only.to_dict(),
                "combined": self.combined.to_dict()}

    def table(self) -> str:
        parts = [evaluation.format_comparison({"Layer 1 only": self.l1_only,
                                               "Dual layer": self.combined})]
        if self.combined.per_class:
            parts.append(evaluation.format_per_class(self.combined.per_class))
        return "\n\n".join(parts)


def record_truth(r: LabeledRecord) -> int:
    """Positive = attack; records without a class fall back to their layer-1 label."""
    if r.attack_class is not None:
        return int(r.attack_class != BENIGN_CLASS)
    return int(r.l1_label)


def evaluate_bundle(bundle: WafModelBundle, records: Sequence[LabeledRecord]) -> ComparisonReport:
    if not records:
        raise EmptyDataset("nothing to evaluate")
    truth, l1_pred, combined = [], [], []
    cls_pred, cls_true = [], []
    for r in records:
        text = r.text(bundle.header_allowlist, bundle.max_decode_rounds)
        v = classify_text(bundle, text)
        truth.append(record_truth(r))
        l1_pred.append(v.l1_flag)
        combined.append(int(v.action == BLOCK))
        if r.attack_class is not None:
            cls_true.append(r.attack_class)
            cls_pred.append(v.l2_class if v.action == BLOCK else BENIGN_CLASS)
    l1_report = EvalReport.from_predictions(l1_pred, truth)
    combined_report = EvalReport.from_predictions(
        combined, truth, cls_pred if cls_pred else None, cls_true if cls_true else None, CLASSES)
    return ComparisonReport(l1_report, combined_report, len(records))
