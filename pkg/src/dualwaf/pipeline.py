"""Dual-layer verdict logic and the deployable model bundle.

Layer 1 (decision tree over lexical ratios) gates every request. Only
requests it flags reach Layer 2 (TF-IDF + one-vs-rest SVM), whose class
decides between "anomaly but not attack" and "block".
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

from . import dtree, svm, vectorizer
from .errors import ContractViolation, CorruptBundle, UnsupportedVersion
from .features import L1FeatureVector, LexiconConfig, extract_features
from .http_model import (DEFAULT_INSPECTED_HEADERS, DEFAULT_MAX_ROUNDS, HttpRequest,
                         inspection_payload)

FORMAT_VERSION = "1.0"
SUPPORTED_VERSIONS = frozenset({FORMAT_VERSION})
BENIGN_CLASS = "valid"

ALLOW = "allow"
BLOCK = "block"

REASON_NORMAL = "normal traffic"
REASON_BENIGN_ANOMALY = "anomaly but not attack"
REASON_ATTACK = "anomaly and attack: {cls}"


def decision_rule(l1: int, l2: int | None) -> str:
    """The three allow/block rules. ``l2`` must be given exactly when ``l1`` is 1."""
    if l1 == 0:
        if l2 is not None:
            raise ContractViolation("layer 2 result present for normal traffic")
        return ALLOW
    if l1 == 1:
        if l2 is None:
            raise ContractViolation("layer 2 result missing for an anomaly")
        if l2 == 0:
            return ALLOW
        if l2 == 1:
            return BLOCK
        raise ContractViolation(f"layer 2 flag must be 0 or 1, got {l2!r}")
    raise ContractViolation(f"layer 1 flag must be 0 or 1, got {l1!r}")


def threat_flag(l2_class: str) -> int:
    return 0 if l2_class == BENIGN_CLASS else 1


@dataclass(frozen=True)
class Verdict:
    action: str
    l1_flag: int
    l2_class: str | None
    features: L1FeatureVector
    reason: str

    def to_dict(self) -> dict:
        return {
            "action": self.action,
            "l1": self.l1_flag,
            "l2_class": self.l2_class,
            "features": dict(zip(("alnum_ratio", "badword_ratio", "special_ratio",
                                  "illegal_special_ratio"), self.features)),
            "reason": self.reason,
        }


@dataclass(frozen=True)
class WafModelBundle:
    lexicon: LexiconConfig
    l1: dtree.DecisionTreeModel
    vocab: vectorizer.TfidfVocabulary
    l2: svm.MulticlassSvmModel
    created_at: str
    training_fingerprint: str
    header_allowlist: tuple[str, ...] = DEFAULT_INSPECTED_HEADERS
    max_decode_rounds: int = DEFAULT_MAX_ROUNDS
    format_version: str = FORMAT_VERSION
    metadata: dict = field(default_factory=dict, compare=False)

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "created_at": self.created_at,
            "training_fingerprint": self.training_fingerprint,
            "inspection": {
                "header_allowlist": list(self.header_allowlist),
                "max_decode_rounds": self.max_decode_rounds,
            },
            "lexicon": self.lexicon.to_dict(),
            "l1": self.l1.to_dict(),
            "vocab": self.vocab.to_dict(),
            "l2": self.l2.to_dict(),
            "metadata": self.metadata,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"),
                          ensure_ascii=True, allow_nan=False) + "\n"

    @cached_property
    def fingerprint(self) -> str:
        return hashlib.sha256(self.dumps().encode("ascii")).hexdigest()[:16]

    def payload_text(self, req: HttpRequest) -> str:
        return inspection_payload(req, self.header_allowlist, self.max_decode_rounds).text

    def validate(self) -> None:
        """Raise CorruptBundle naming the first violated invariant."""
        if self.max_decode_rounds < 1:
            raise CorruptBundle("inspection.max_decode_rounds >= 1")
        n_vocab = len(self.vocab)
        C = self.l2.config.C
        for cls, model in zip(self.l2.classes, self.l2.models):
            if not model.support_vectors:
                raise CorruptBundle("l2 binary model has >= 1 support vector", cls)
            for v in model.support_vectors:
                if v.max_index() >= n_vocab:
                    raise CorruptBundle(
                        "l2 support-vector index < vocab size",
                        f"class {cls!r} index {v.max_index()} >= {n_vocab}")
            for c in model.dual_coefs.tolist():
                if not (0.0 < abs(c) <= C * (1 + 1e-9)):
                    raise CorruptBundle("0 < |dual_coef| <= C", f"class {cls!r} coef {c!r}")
        if self.l2.kernel.kind == "rbf" and self.l2.kernel.gamma is None:
            raise CorruptBundle("rbf kernel has gamma")


def classify(bundle: WafModelBundle, req: HttpRequest, *,
             on_layer2: Callable[[str], None] | None = None) -> Verdict:
    """Run both layers on a request. ``on_layer2`` is called whenever layer 2 runs."""
    text = bundle.payload_text(req)
    return classify_text(bundle, text, on_layer2=on_layer2)


def classify_text(bundle: WafModelBundle, text: str, *,
                  on_layer2: Callable[[str], None] | None = None) -> Verdict:
    fv = extract_features(text, bundle.lexicon)
    l1 = dtree.predict(bundle.l1, fv)
    if l1 == 0:
        return Verdict(decision_rule(0, None), 0, None, fv, REASON_NORMAL)
    if on_layer2 is not None:
        on_layer2(text)
    l2_class = svm.predict_class(bundle.l2, vectorizer.transform(bundle.vocab, text))
    action = decision_rule(1, threat_flag(l2_class))
    reason = REASON_BENIGN_ANOMALY if action == ALLOW else REASON_ATTACK.format(cls=l2_class)
    return Verdict(action, 1, l2_class, fv, reason)


def save_bundle(bundle: WafModelBundle, path: str | os.PathLike) -> None:
    bundle.validate()
    data = bundle.dumps()
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".bundle-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="ascii") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def bundle_from_dict(data: dict) -> WafModelBundle:
    if not isinstance(data, dict):
        raise CorruptBundle("bundle is a JSON object")
    version = data.get("format_version")
    if version not in SUPPORTED_VERSIONS:
        raise UnsupportedVersion(f"bundle format_version {version!r} not in {sorted(SUPPORTED_VERSIONS)}")
    parts = {}
    for key, builder in (("lexicon", LexiconConfig.from_dict),
                         ("l1", dtree.DecisionTreeModel.from_dict),
                         ("vocab", vectorizer.TfidfVocabulary.from_dict),
                         ("l2", svm.MulticlassSvmModel.from_dict)):
        if key not in data:
            raise CorruptBundle(f"{key} present")
        try:
            parts[key] = builder(data[key])
        except (ValueError, KeyError, TypeError) as exc:
            raise CorruptBundle(f"{key} well-formed", str(exc)) from exc
    inspection = data.get("inspection", {})
    try:
        bundle = WafModelBundle(
            lexicon=parts["lexicon"], l1=parts["l1"], vocab=parts["vocab"], l2=parts["l2"],
            created_at=str(data["created_at"]),
            training_fingerprint=str(data["training_fingerprint"]),
            header_allowlist=tuple(inspection.get("header_allowlist", DEFAULT_INSPECTED_HEADERS)),
            max_decode_rounds=int(inspection.get("max_decode_rounds", DEFAULT_MAX_ROUNDS)),
            format_version=version,
            metadata=dict(data.get("metadata", {})),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptBundle("metadata fields present", str(exc)) from exc
    bundle.validate()
    return bundle


def load_bundle(path: str | os.PathLike) -> WafModelBundle:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptBundle("bundle is valid JSON", str(exc)) from exc
    return bundle_from_dict(data)
