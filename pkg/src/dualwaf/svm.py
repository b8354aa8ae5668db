"""Kernel SVM trained with sequential minimal optimization, plus one-vs-rest.

The binary solver follows Platt's SMO: an outer loop alternates full sweeps
and sweeps over non-bound multipliers, the second multiplier is chosen by the
largest |E_i - E_j| step with seeded random fallbacks, and errors are cached
for every training point.
"""
from __future__ import annotations

import logging
import math
import random
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import NonConvergence, SingleClassData
from .sparse import SparseVector, dot, sq_distance, stack

log = logging.getLogger(__name__)

SVM_FORMAT = "svm/1"
ALPHA_EPS = 1e-12
FULL_GRAM_LIMIT = 4000


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "rbf"
    gamma: float | None = None  # None on rbf: resolved from the data at fit time

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise ValueError(f"unknown kernel {self.kind!r}")
        if self.gamma is not None and not self.gamma > 0:
            raise ValueError("gamma must be > 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "gamma": self.gamma}


@dataclass(frozen=True)
class SvmTrainConfig:
    C: float = 10.0
    tol: float = 1e-3
    max_passes: int = 10
    max_iterations: int = 200_000
    seed: int = 0

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError("C must be > 0")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_passes < 1 or self.max_iterations < 1:
            raise ValueError("max_passes and max_iterations must be >= 1")


def kernel_eval(spec: KernelSpec, a: SparseVector, b: SparseVector) -> float:
    if spec.kind == "linear":
        return dot(a, b)
    if spec.gamma is None:
        raise ValueError("rbf kernel needs a resolved gamma")
    return math.exp(-spec.gamma * sq_distance(a, b))


def scale_gamma(X: sp.csr_matrix, n_features: int | None = None) -> float:
    """1 / (n_features * mean per-feature variance), or 1/n_features if flat."""
    n, width = X.shape
    n_features = max(n_features or width, 1)
    if n == 0:
        return 1.0 / n_features
    mean = np.asarray(X.mean(axis=0)).ravel()
    mean_sq = np.asarray(X.multiply(X).mean(axis=0)).ravel()
    total_var = float(np.sum(np.maximum(mean_sq - mean * mean, 0.0)))
    if total_var <= 0.0:
        return 1.0 / n_features
    # n_features * mean(var) over all n_features columns == total variance
    return 1.0 / total_var


def resolve_kernel(spec: KernelSpec, X: sp.csr_matrix, n_features: int | None = None) -> KernelSpec:
    if spec.kind == "rbf" and spec.gamma is None:
        return KernelSpec("rbf", scale_gamma(X, n_features))
    return spec


class KernelMatrix:
    """Kernel rows over a fixed training matrix; full Gram for small n, LRU rows otherwise."""

    def __init__(self, X: sp.csr_matrix, spec: KernelSpec, full_limit: int = FULL_GRAM_LIMIT,
                 cache_bytes: int = 256 * 2**20):
        self.X = X
        self.spec = spec
        self.n = X.shape[0]
        self.sq = np.asarray(X.multiply(X).sum(axis=1)).ravel()
        self._XT = X.T.tocsc()
        self._full = None
        self._rows: OrderedDict = OrderedDict()
        self._capacity = max(2, cache_bytes // max(8 * self.n, 1))
        if self.n <= full_limit:
            G = (X @ self._XT).toarray()
            self._full = self._finish(G, self.sq[:, None])
            self.diag = np.ascontiguousarray(np.diag(self._full))
        else:
            self.diag = self._finish(self.sq.copy(), self.sq)

    def _finish(self, lin, sq_rows):
        if self.spec.kind == "linear":
            return lin
        d = np.maximum(sq_rows + self.sq[None, :] - 2.0 * lin if lin.ndim == 2
                       else sq_rows + sq_rows - 2.0 * lin, 0.0)
        return np.exp(-self.spec.gamma * d)

    def row(self, i: int) -> np.ndarray:
        if self._full is not None:
            return self._full[i]
        r = self._rows.get(i)
        if r is not None:
            self._rows.move_to_end(i)
            return r
        lin = np.asarray((self.X[i] @ self._XT).todense()).ravel()
        if self.spec.kind == "linear":
            r = lin
        else:
            r = np.exp(-self.spec.gamma * np.maximum(self.sq[i] + self.sq - 2.0 * lin, 0.0))
        self._rows[i] = r
        if len(self._rows) > self._capacity:
            self._rows.popitem(last=False)
        return r

    def entry(self, i: int, j: int) -> float:
        if self._full is not None:
            return float(self._full[i, j])
        if i in self._rows:
            return float(self._rows[i][j])
        return float(self.row(j)[i])


@dataclass
class SmoResult:
    alpha: np.ndarray
    bias: float
    converged: bool
    n_iterations: int
    n_sweeps: int


def dual_objective(alpha: np.ndarray, y: np.ndarray, K: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def solve_smo(K: KernelMatrix, y: np.ndarray, cfg: SvmTrainConfig,
              callback: Callable[[np.ndarray, float], None] | None = None) -> SmoResult:
    """Solve the soft-margin dual for labels ``y`` in {-1, +1}."""
    n = K.n
    y = np.asarray(y, dtype=np.float64)
    C, tol = float(cfg.C), float(cfg.tol)
    eps = 1e-8
    rng = random.Random(cfg.seed)
    alpha = np.zeros(n)
    E = -y.copy()  # f(x) - y with f == 0
    state = {"b": 0.0, "iters": 0}

    def take_step(i: int, j: int) -> bool:
        if i == j:
            return False
        ai, aj, yi, yj = alpha[i], alpha[j], y[i], y[j]
        Ei, Ej = E[i], E[j]
        s = yi * yj
        if yi != yj:
            L, H = max(0.0, aj - ai), min(C, C + aj - ai)
        else:
            L, H = max(0.0, ai + aj - C), min(C, ai + aj)
        if H - L < 1e-12:
            return False
        Ki = K.row(i)
        kii, kij, kjj = K.diag[i], Ki[j], K.diag[j]
        eta = kii + kjj - 2.0 * kij
        if eta > 1e-12:
            aj_new = min(H, max(L, aj + yj * (Ei - Ej) / eta))
        else:
            # degenerate curvature: take whichever end has the larger objective
            b = state["b"]
            f1 = yi * (Ei - b) - ai * kii - s * aj * kij
            f2 = yj * (Ej - b) - s * ai * kij - aj * kjj
            L1, H1 = ai + s * (aj - L), ai + s * (aj - H)
            obj_L = L1 * f1 + L * f2 + 0.5 * L1 * L1 * kii + 0.5 * L * L * kjj + s * L * L1 * kij
            obj_H = H1 * f1 + H * f2 + 0.5 * H1 * H1 * kii + 0.5 * H * H * kjj + s * H * H1 * kij
            # these are negated dual objectives, so smaller wins
            if obj_L < obj_H - eps:
                aj_new = L
            elif obj_H < obj_L - eps:
                aj_new = H
            else:
                aj_new = aj
        if abs(aj_new - aj) < eps * (aj_new + aj + eps):
            return False
        ai_new = ai + s * (aj - aj_new)
        if ai_new < 0.0:
            aj_new += s * ai_new
            ai_new = 0.0
        elif ai_new > C:
            aj_new += s * (ai_new - C)
            ai_new = C
        dai, daj = ai_new - ai, aj_new - aj
        b = state["b"]
        b1 = b - Ei - yi * dai * kii - yj * daj * kij
        b2 = b - Ej - yi * dai * kij - yj * daj * kjj
        if 0.0 < ai_new < C:
            b_new = b1
        elif 0.0 < aj_new < C:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)
        Kj = K.row(j)
        E[:] += (yi * dai) * Ki + (yj * daj) * Kj + (b_new - b)
        alpha[i], alpha[j] = ai_new, aj_new
        state["b"] = b_new
        state["iters"] += 1
        if callback is not None:
            callback(alpha, b_new)
        return True

    def examine(i: int) -> int:
        yi, ai = y[i], alpha[i]
        r = yi * E[i]
        if not ((r < -tol and ai < C) or (r > tol and ai > 0.0)):
            return 0
        nonbound = np.flatnonzero((alpha > 0.0) & (alpha < C))
        if nonbound.size > 1:
            j = int(nonbound[np.argmax(np.abs(E[i] - E[nonbound]))])
            if take_step(i, j):
                return 1
        if nonbound.size:
            start = rng.randrange(nonbound.size)
            for j in promising(i, np.roll(nonbound, -start)):
                if take_step(i, j):
                    return 1
        start = rng.randrange(n)
        for j in promising(i, np.roll(np.arange(n), -start)):
            if take_step(i, j):
                return 1
        return 0

    def promising(i: int, order: np.ndarray) -> list[int]:
        # Vectorised pre-check of take_step's early exits, keeping loop order:
        # drops partners whose clipped step would be rejected anyway.
        ai, yi, Ei = alpha[i], y[i], E[i]
        aj, yj = alpha[order], y[order]
        same = yj == yi
        L = np.where(same, np.maximum(0.0, ai + aj - C), np.maximum(0.0, aj - ai))
        H = np.where(same, np.minimum(C, ai + aj), np.minimum(C, C + aj - ai))
        eta = K.diag[i] + K.diag[order] - 2.0 * K.row(i)[order]
        with np.errstate(divide="ignore", invalid="ignore"):
            aj_new = np.minimum(H, np.maximum(L, aj + yj * (Ei - E[order]) / eta))
            moves = np.abs(aj_new - aj) >= eps * (aj_new + aj + eps)
        ok = (order != i) & (H - L >= 1e-12) & ((eta <= 1e-12) | moves)
        return order[ok].tolist()

    def violators(mask: np.ndarray | None = None) -> np.ndarray:
        r = y * E
        v = ((r < -tol) & (alpha < C)) | ((r > tol) & (alpha > 0.0))
        if mask is not None:
            v &= mask
        return np.flatnonzero(v)

    examine_all = True
    quiet_full_sweeps = 0
    sweeps = 0
    converged = True
    while True:
        if state["iters"] >= cfg.max_iterations:
            converged = False
            break
        changed = 0
        if examine_all:
            candidates = violators()
        else:
            candidates = violators((alpha > 0.0) & (alpha < C))
        sweeps += 1
        for i in candidates.tolist():
            changed += examine(i)
            if state["iters"] >= cfg.max_iterations:
                break
        if examine_all:
            if changed == 0:
                quiet_full_sweeps += 1
                if quiet_full_sweeps >= cfg.max_passes or not violators().size:
                    break
            else:
                quiet_full_sweeps = 0
                examine_all = False
        elif changed == 0:
            examine_all = True
    bias = _refit_bias(alpha, y, E + y - state["b"], C, state["b"])
    return SmoResult(alpha, bias, converged, state["iters"], sweeps)


def _refit_bias(alpha: np.ndarray, y: np.ndarray, g: np.ndarray, C: float, fallback: float) -> float:
    """Bias that minimises the worst KKT violation over the training set.

    ``g`` is the kernel expansion without bias at every training point. Each
    point bounds b through ``y - g``: free multipliers from both sides, the
    bound ones from one side. The midpoint of the tightest bounds is the
    minimax choice; averaging the free targets instead can push a point past
    the stopping tolerance.
    """
    target = y - g
    free = (alpha > ALPHA_EPS) & (alpha < C - ALPHA_EPS)
    at_zero = alpha <= ALPHA_EPS
    at_c = ~(free | at_zero)
    lower = free | (at_zero & (y > 0)) | (at_c & (y < 0))
    upper = free | (at_zero & (y < 0)) | (at_c & (y > 0))
    lo = float(np.max(target[lower])) if np.any(lower) else -math.inf
    hi = float(np.min(target[upper])) if np.any(upper) else math.inf
    if math.isinf(lo) and math.isinf(hi):
        return fallback
    if math.isinf(lo):
        return hi
    if math.isinf(hi):
        return lo
    return 0.5 * (lo + hi)


@dataclass
class BinarySvmModel:
    support_vectors: list[SparseVector]
    dual_coefs: np.ndarray
    bias: float
    kernel: KernelSpec
    converged: bool = True
    n_iterations: int = 0
    _sv_matrix: sp.csr_matrix | None = field(default=None, init=False, repr=False, compare=False)
    _sv_sq: np.ndarray | None = field(default=None, init=False, repr=False, compare=False)

    def _prepare(self):
        if self._sv_matrix is None:
            self._sv_matrix = stack(self.support_vectors)
            self._sv_sq = np.asarray(self._sv_matrix.multiply(self._sv_matrix).sum(axis=1)).ravel()

    def kernel_column(self, x: SparseVector) -> np.ndarray:
        self._prepare()
        return _kernel_against(self._sv_matrix, self._sv_sq, self.kernel, x)

    def decision_value(self, x: SparseVector) -> float:
        return decision_value(self, x)

    def to_dict(self) -> dict:
        return {
            "bias": float(self.bias),
            "converged": self.converged,
            "n_iterations": self.n_iterations,
            "support_vectors": [
                {"indices": v.indices.tolist(), "weights": v.values.tolist()}
                for v in self.support_vectors
            ],
            "dual_coefs": [float(c) for c in self.dual_coefs],
        }

    @classmethod
    def from_dict(cls, data: dict, kernel: KernelSpec) -> "BinarySvmModel":
        svs = [SparseVector(d["indices"], d["weights"]) for d in data["support_vectors"]]
        coefs = np.asarray(data["dual_coefs"], dtype=np.float64)
        if len(svs) != coefs.size:
            raise ValueError("support vector / dual coefficient count mismatch")
        return cls(svs, coefs, float(data["bias"]), kernel,
                   bool(data.get("converged", True)), int(data.get("n_iterations", 0)))


def _kernel_against(M: sp.csr_matrix, M_sq: np.ndarray, spec: KernelSpec, x: SparseVector) -> np.ndarray:
    width = M.shape[1]
    keep = x.indices < width
    xd = np.zeros(width)
    xd[x.indices[keep]] = x.values[keep]
    lin = M @ xd
    if spec.kind == "linear":
        return lin
    return np.exp(-spec.gamma * np.maximum(M_sq + x.sq_norm() - 2.0 * lin, 0.0))


def decision_value(model: BinarySvmModel, x: SparseVector) -> float:
    if not model.support_vectors:
        return float(model.bias)
    return float(model.kernel_column(x) @ model.dual_coefs + model.bias)


def _labels_pm1(labels: Sequence[int]) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64)
    if not np.all((y == 1.0) | (y == -1.0)):
        raise ValueError("binary labels must be -1 or +1")
    return y


def _model_from_result(res: SmoResult, vectors: Sequence[SparseVector], y: np.ndarray,
                       kernel: KernelSpec) -> BinarySvmModel:
    keep = np.flatnonzero(res.alpha > ALPHA_EPS)
    svs = [vectors[i] for i in keep.tolist()]
    coefs = res.alpha[keep] * y[keep]
    return BinarySvmModel(svs, coefs, float(res.bias), kernel, res.converged, res.n_iterations)


def fit_binary(data: Sequence[tuple[SparseVector, int]], kernel: KernelSpec | None = None,
               cfg: SvmTrainConfig | None = None, *, n_features: int | None = None,
               strict: bool = False,
               callback: Callable[[np.ndarray, float], None] | None = None) -> BinarySvmModel:
    """Train a binary soft-margin SVM on (vector, ±1) pairs.

    A run that hits ``cfg.max_iterations`` returns the best-so-far model with
    ``converged=False``; pass ``strict=True`` to raise :class:`NonConvergence`.
    """
    kernel = kernel or KernelSpec()
    cfg = cfg or SvmTrainConfig()
    if len(data) < 2:
        raise SingleClassData("need at least two training points")
    vectors = [v for v, _ in data]
    y = _labels_pm1([lab for _, lab in data])
    if np.all(y == y[0]):
        raise SingleClassData("binary training data has a single class")
    X = stack(vectors, n_features)
    kernel = resolve_kernel(kernel, X, n_features)
    res = solve_smo(KernelMatrix(X, kernel), y, cfg, callback)
    if not res.converged:
        if strict:
            raise NonConvergence(f"SMO hit max_iterations={cfg.max_iterations}")
        log.warning("SMO stopped at max_iterations=%d without converging", cfg.max_iterations)
    return _model_from_result(res, vectors, y, kernel)


@dataclass
class MulticlassSvmModel:
    classes: list[str]
    models: list[BinarySvmModel]
    kernel: KernelSpec
    config: SvmTrainConfig
    _pool: tuple | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.classes) != len(self.models):
            raise ValueError("one binary model per class required")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("duplicate class names")

    @property
    def converged(self) -> bool:
        return all(m.converged for m in self.models)

    def _prepare(self):
        # all binary models share one training set, so pool identical vectors
        if self._pool is not None:
            return self._pool
        pool: dict = {}
        vecs: list[SparseVector] = []
        rows, cols, vals = [], [], []
        for c, m in enumerate(self.models):
            for v, coef in zip(m.support_vectors, m.dual_coefs.tolist()):
                key = (v.indices.tobytes(), v.values.tobytes())
                k = pool.get(key)
                if k is None:
                    k = pool[key] = len(vecs)
                    vecs.append(v)
                rows.append(k)
                cols.append(c)
                vals.append(coef)
        M = stack(vecs)
        M_sq = np.asarray(M.multiply(M).sum(axis=1)).ravel()
        coef = sp.csr_matrix((vals, (rows, cols)), shape=(len(vecs), len(self.models))).toarray()
        bias = np.array([m.bias for m in self.models])
        self._pool = (M, M_sq, coef, bias)
        return self._pool

    def decision_values(self, x: SparseVector) -> np.ndarray:
        M, M_sq, coef, bias = self._prepare()
        if M.shape[0] == 0:
            return bias.copy()
        return _kernel_against(M, M_sq, self.kernel, x) @ coef + bias

    def predict(self, x: SparseVector) -> str:
        return predict_class(self, x)

    def to_dict(self) -> dict:
        return {
            "format": SVM_FORMAT,
            "kernel": self.kernel.to_dict(),
            "config": {
                "C": self.config.C, "tol": self.config.tol, "max_passes": self.config.max_passes,
                "max_iterations": self.config.max_iterations, "seed": self.config.seed,
            },
            "classes": list(self.classes),
            "models": [m.to_dict() for m in self.models],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MulticlassSvmModel":
        if data.get("format") != SVM_FORMAT:
            raise ValueError(f"unknown svm format {data.get('format')!r}")
        kernel = KernelSpec(**data["kernel"])
        if kernel.kind == "rbf" and kernel.gamma is None:
            raise ValueError("stored rbf kernel lacks gamma")
        config = SvmTrainConfig(**data["config"])
        models = [BinarySvmModel.from_dict(m, kernel) for m in data["models"]]
        return cls(list(data["classes"]), models, kernel, config)


def fit_multiclass(data: Sequence[tuple[SparseVector, str]], kernel: KernelSpec | None = None,
                   cfg: SvmTrainConfig | None = None, *,
                   n_features: int | None = None) -> MulticlassSvmModel:
    """One-vs-rest: one binary SVM per class, classes in order of first appearance."""
    kernel = kernel or KernelSpec()
    cfg = cfg or SvmTrainConfig()
    classes: list[str] = []
    for _, c in data:
        if c not in classes:
            classes.append(c)
    if len(classes) < 2:
        raise SingleClassData(f"multi-class training needs >= 2 classes, got {classes}")
    vectors = [v for v, _ in data]
    labels = [c for _, c in data]
    X = stack(vectors, n_features)
    kernel = resolve_kernel(kernel, X, n_features)
    K = KernelMatrix(X, kernel)
    models = []
    for c in classes:
        y = np.array([1.0 if lab == c else -1.0 for lab in labels])
        try:
            res = solve_smo(K, y, cfg)
        except Exception as exc:
            raise type(exc)(f"class {c!r}: {exc}") from exc
        if not res.converged:
            log.warning("class %r: SMO stopped at max_iterations=%d", c, cfg.max_iterations)
        models.append(_model_from_result(res, vectors, y, kernel))
    return MulticlassSvmModel(classes, models, kernel, cfg)


def predict_class(model: MulticlassSvmModel, x: SparseVector) -> str:
    scores = model.decision_values(x)
    # np.argmax returns the first maximum, i.e. the earliest class on ties
    return model.classes[int(np.argmax(scores))]
