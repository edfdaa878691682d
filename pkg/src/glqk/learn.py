"""Kernel learners and their evaluation: ridge regression, an SMO support
vector machine, cross-validated grid search, kernel PCA and metrics."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .errors import InvalidArgument, NumericFailure, UndefinedMetric
from .kernels import GramMatrix

TASKS = ("krr", "svm")
LAMBDA_GRID = (1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4)
C_GRID = (0.1, 1.0, 10.0)
H_GRID = (1, 2)
ZETA_GRID = (2, 4, 6)


def _values(K) -> np.ndarray:
    return K.values if isinstance(K, GramMatrix) else np.asarray(K, dtype=float)


@dataclass
class TrainedModel:
    """Dual expansion ``f(x) = sum_i alpha_i k(x_i, x) + bias``.

    For the SVM ``alpha`` stores the signed coefficients ``y_i a_i``.
    """

    task: str
    alpha: np.ndarray
    bias: float = 0.0
    reg: float = 0.0
    config: dict = field(default_factory=dict)
    train_diag: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        d["alpha"] = self.alpha.tolist()
        d["train_diag"] = None if self.train_diag is None else self.train_diag.tolist()
        return json.dumps(d, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "TrainedModel":
        d = json.loads(text)
        d["alpha"] = np.array(d["alpha"], dtype=float)
        if d.get("train_diag") is not None:
            d["train_diag"] = np.array(d["train_diag"], dtype=float)
        return cls(**d)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "TrainedModel":
        return cls.from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# kernel ridge regression


def krr_fit(K, y, lam: float, max_jitter: float = 1e-6) -> TrainedModel:
    """Solve ``(K + 2 N lam I) alpha = y`` by Cholesky.

    On a failed factorisation a diagonal jitter starting at 1e-12 is grown
    tenfold up to ``max_jitter``; iterative refinement against the
    unjittered system then restores the residual.
    """
    Kv = _values(K)
    y = np.asarray(y, dtype=float)
    N = y.size
    if Kv.shape != (N, N):
        raise InvalidArgument(f"Gram shape {Kv.shape} does not match {N} labels")
    if not lam > 0:
        raise InvalidArgument(f"lambda must be positive, got {lam}")
    A = Kv + 2.0 * N * lam * np.eye(N)
    cfg = K.config.to_dict() if isinstance(K, GramMatrix) and K.config else {}
    diag = K.diag_rows if isinstance(K, GramMatrix) else None
    if not np.any(A - np.diag(np.diag(A))):
        # diagonal system: plain division is exact to rounding of one quotient
        d = np.diag(A)
        if np.any(d <= 0):
            raise NumericFailure("ridge system is not positive definite")
        return TrainedModel("krr", y / d, 0.0, float(lam), cfg, diag, {"jitter": 0.0})
    jitter, factor = 0.0, None
    while factor is None:
        try:
            factor = cho_factor(A + jitter * np.eye(N), lower=True, check_finite=True)
        except LinAlgError:
            jitter = 1e-12 if jitter == 0 else jitter * 10
            if jitter > max_jitter:
                raise NumericFailure("ridge system is not positive definite even with jitter")
    alpha = cho_solve(factor, y)
    ynorm = max(np.linalg.norm(y), np.finfo(float).tiny)
    for _ in range(5):
        r = y - A @ alpha
        if np.linalg.norm(r) <= 1e-10 * ynorm:
            break
        alpha = alpha + cho_solve(factor, r)
    res = np.linalg.norm(A @ alpha - y)
    if res > 1e-8 * ynorm:
        raise NumericFailure(f"ridge residual {res:.3e} exceeds 1e-8 ||y||")
    return TrainedModel("krr", alpha, 0.0, float(lam), cfg, diag, {"jitter": jitter})


def krr_objective_gradient(K, y, alpha, lam) -> np.ndarray:
    """Gradient of ``(1/2N)||K alpha - y||^2 + lam alpha^T K alpha``."""
    Kv = _values(K)
    N = len(y)
    return Kv @ (Kv @ alpha - y) / N + 2.0 * lam * (Kv @ alpha)


def krr_predict(model: TrainedModel, K_test) -> np.ndarray:
    """``K_test^T alpha + bias``; ``K_test`` is ``(N_train, N_test)``."""
    Kv = _values(K_test)
    if Kv.ndim != 2 or Kv.shape[0] != model.alpha.size:
        raise InvalidArgument(
            f"test Gram must have {model.alpha.size} rows (training points), got shape {Kv.shape}"
        )
    return Kv.T @ model.alpha + model.bias


# ---------------------------------------------------------------------------
# support vector machine (SMO with second-order working-set selection)


def svm_fit(K, labels, C: float, tol: float = 1e-4, max_iter: int | None = None) -> TrainedModel:
    """Soft-margin SVM dual on a precomputed Gram matrix.

    Minimises ``1/2 a^T Q a - sum a`` with ``Q_ij = y_i y_j K_ij``,
    ``0 <= a <= C`` and ``y^T a = 0``; stops when the maximal KKT violating
    pair gap drops below ``tol``.  The problem is solved with labels
    oriented so that the first one is +1, which makes negating every label
    negate the decision function exactly.
    """
    Kv = _values(K)
    y = np.asarray(labels, dtype=float)
    N = y.size
    if Kv.shape != (N, N):
        raise InvalidArgument(f"Gram shape {Kv.shape} does not match {N} labels")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise InvalidArgument("SVM labels must be -1 or +1")
    if np.unique(y).size < 2:
        raise InvalidArgument("SVM training needs both classes")
    if not C > 0:
        raise InvalidArgument(f"C must be positive, got {C}")
    orient = 1.0 if y[0] > 0 else -1.0
    y = orient * y
    Q = Kv * np.outer(y, y)
    a = np.zeros(N)
    G = -np.ones(N)  # gradient Q a - 1
    max_iter = max_iter or max(100_000, 1000 * N)
    tau = 1e-12
    for _ in range(max_iter):
        up = ((y > 0) & (a < C)) | ((y < 0) & (a > 0))
        low = ((y > 0) & (a > 0)) | ((y < 0) & (a < C))
        score = -y * G
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        m_up = score[i]
        M_low = score[low].min()
        if m_up - M_low < tol:
            break
        # second-order choice of j among violating low indices
        cand = low & (score < m_up)
        js = np.flatnonzero(cand)
        b = m_up - score[js]
        quad = Q[i, i] + np.diag(Q)[js] - 2.0 * y[i] * y[js] * Q[i, js]
        quad = np.where(quad > 0, quad, tau)
        j = int(js[np.argmax(b * b / quad)])
        # analytic two-variable update (LIBSVM)
        Qi, Qj = Q[i], Q[j]
        ai_old, aj_old = a[i], a[j]
        if y[i] != y[j]:
            q = Q[i, i] + Q[j, j] + 2 * Qi[j]
            q = q if q > 0 else tau
            delta = (-G[i] - G[j]) / q
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j], a[i] = 0.0, diff
            elif a[i] < 0:
                a[i], a[j] = 0.0, -diff
            if diff > 0:
                if a[i] > C:
                    a[i], a[j] = C, C - diff
            elif a[j] > C:
                a[j], a[i] = C, C + diff
        else:
            q = Q[i, i] + Q[j, j] - 2 * Qi[j]
            q = q if q > 0 else tau
            delta = (G[i] - G[j]) / q
            s = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if s > C:
                if a[i] > C:
                    a[i], a[j] = C, s - C
            elif a[j] < 0:
                a[j], a[i] = 0.0, s
            if s > C:
                if a[j] > C:
                    a[j], a[i] = C, s - C
            elif a[i] < 0:
                a[i], a[j] = 0.0, s
        G += Qi * (a[i] - ai_old) + Qj * (a[j] - aj_old)
    else:
        raise NumericFailure(f"SMO did not converge in {max_iter} iterations")

    free = (a > 1e-12 * C) & (a < C * (1 - 1e-12))
    score = -y * G
    if free.any():
        bias = float(score[free].mean())
    else:
        up = ((y > 0) & (a < C)) | ((y < 0) & (a > 0))
        low = ((y > 0) & (a > 0)) | ((y < 0) & (a < C))
        hi = score[up].max() if up.any() else score.max()
        lo = score[low].min() if low.any() else score.min()
        bias = float(0.5 * (hi + lo))
    cfg = K.config.to_dict() if isinstance(K, GramMatrix) and K.config else {}
    diag = K.diag_rows if isinstance(K, GramMatrix) else None
    return TrainedModel("svm", orient * (a * y), orient * bias, float(C), cfg, diag, {"dual": a.tolist()})


def svm_decision(model: TrainedModel, K_test) -> np.ndarray:
    return krr_predict(model, K_test)


def svm_predict(model: TrainedModel, K_test) -> np.ndarray:
    return np.where(svm_decision(model, K_test) >= 0, 1.0, -1.0)


def predict(model: TrainedModel, K_test) -> np.ndarray:
    return krr_predict(model, K_test) if model.task == "krr" else svm_predict(model, K_test)


# ---------------------------------------------------------------------------
# metrics


def r_squared(y_true, y_pred) -> float:
    y = np.asarray(y_true, dtype=float)
    f = np.asarray(y_pred, dtype=float)
    if y.size < 2:
        raise UndefinedMetric("R^2 needs at least two samples")
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedMetric("R^2 is undefined for constant targets")
    return 1.0 - float(np.sum((y - f) ** 2)) / ss_tot


def accuracy(y_true, y_pred) -> float:
    return float(np.mean(np.asarray(y_true) == np.asarray(y_pred)))


def shadow_noise_floor(g, test_states, shadows) -> float:
    """RMS gap between exact values ``g(rho_i)`` and plug-in estimates ``g(sigma_i)``.

    ``test_states`` may also be a sequence of precomputed exact values.
    """
    from .pauli_poly import evaluate_exact
    from .shadows import estimate_polynomial

    exact = [s if isinstance(s, (int, float, np.floating)) else evaluate_exact(g, s) for s in test_states]
    est = [estimate_polynomial(sh, g) for sh in shadows]
    if len(exact) != len(est):
        raise InvalidArgument("states and shadows must be paired")
    gaps = np.asarray(exact, float) - np.asarray(est, float)
    return float(math.sqrt(np.mean(gaps ** 2)))


# ---------------------------------------------------------------------------
# kernel PCA


@dataclass
class PCAResult:
    coords: np.ndarray
    eigenvalues: np.ndarray
    complete: bool


def kernel_pca(K, components: int = 2) -> PCAResult:
    """Double-centred eigendecomposition; coordinates are eigenvectors times sqrt(eigenvalue).

    Each component's sign makes its largest-magnitude coordinate positive.
    """
    Kv = _values(K)
    N = Kv.shape[0]
    if Kv.shape != (N, N):
        raise InvalidArgument("kernel PCA needs a square Gram matrix")
    H = np.eye(N) - 1.0 / N
    Kc = H @ Kv @ H
    Kc = 0.5 * (Kc + Kc.T)
    w, V = np.linalg.eigh(Kc)
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    thresh = 1e-12 * max(abs(w).max(), 1.0)
    keep = [i for i in range(min(components, N)) if w[i] > thresh]
    coords = np.zeros((N, components))
    for c, i in enumerate(keep):
        col = V[:, i] * math.sqrt(w[i])
        k = int(np.argmax(np.abs(col)))
        coords[:, c] = col if col[k] >= 0 else -col
    return PCAResult(coords, w[:components], len(keep) == components)


# ---------------------------------------------------------------------------
# cross-validated grid search


def kfold_assignments(N: int, folds: int, rng: np.random.Generator, strata=None) -> np.ndarray:
    """Fold id per sample; stratified round-robin dealing when ``strata`` is given."""
    if N < folds:
        raise InvalidArgument(f"need at least {folds} samples for {folds}-fold CV, got {N}")
    out = np.empty(N, dtype=np.int64)
    if strata is None:
        perm = rng.permutation(N)
        for f, part in enumerate(np.array_split(perm, folds)):
            out[part] = f
        return out
    strata = np.asarray(strata)
    offset = 0
    for cls in np.unique(strata):
        idx = rng.permutation(np.flatnonzero(strata == cls))
        out[idx] = (np.arange(idx.size) + offset) % folds
        offset += idx.size
    return out


@dataclass(frozen=True)
class Grid:
    reg: tuple[float, ...] = LAMBDA_GRID
    h: tuple[int | None, ...] = H_GRID
    zeta: tuple[int | None, ...] = ZETA_GRID

    def cells(self) -> list[tuple[float, int | None, int | None]]:
        """Deduplicated cells in canonical order: reg ascending, then h, then zeta."""

        def uniq(vals):
            vals = list(dict.fromkeys(vals))
            return sorted(vals, key=lambda v: (v is None, v if v is not None else 0))

        return [(r, h, z) for r in uniq(self.reg) for h in uniq(self.h) for z in uniq(self.zeta)]


@dataclass
class CVReport:
    task: str
    kernel_kind: str
    cells: list[dict]
    selected: dict
    folds: list[int]
    seed: int
    model: TrainedModel | None = None

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "kernel_kind": self.kernel_kind,
            "cells": self.cells,
            "selected": self.selected,
            "folds": self.folds,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _fit(task, K, y, reg):
    return krr_fit(K, y, reg) if task == "krr" else svm_fit(K, y, reg)


def _score(task, y_true, y_pred) -> float:
    if task == "svm":
        return accuracy(y_true, y_pred)
    try:
        return r_squared(y_true, y_pred)
    except UndefinedMetric:
        return float("nan")


def grid_search_cv(
    gram_for: Callable[[int | None, int | None], np.ndarray | None],
    y,
    task: str,
    grid: Grid,
    folds: int = 5,
    seed: int = 0,
    kernel_kind: str = "glqk_poly",
    rng: np.random.Generator | None = None,
) -> CVReport:
    """Pick ``(reg, h, zeta)`` by ``folds``-fold cross-validation, then refit on all data.

    ``gram_for(h, zeta)`` returns the (already standardised, if desired)
    ``N x N`` training Gram for that kernel setting, or ``None`` when the
    setting is infeasible (e.g. a window wider than the lattice); such cells
    are skipped and marked.
    """
    if task not in TASKS:
        raise InvalidArgument(f"task must be one of {TASKS}, got {task!r}")
    y = np.asarray(y, dtype=float)
    N = y.size
    rng = rng if rng is not None else np.random.default_rng(seed)
    fold_of = kfold_assignments(N, folds, rng, strata=y if task == "svm" else None)
    cells_out = []
    cache: dict = {}
    best = None
    for reg, h, zeta in grid.cells():
        if (h, zeta) not in cache:
            cache[(h, zeta)] = gram_for(h, zeta)
        K = cache[(h, zeta)]
        cell = {"reg": reg, "h": h, "zeta": zeta}
        if K is None:
            cells_out.append(dict(cell, score=None, skipped=True))
            continue
        K = _values(K)
        scores = []
        for f in range(folds):
            tr, va = np.flatnonzero(fold_of != f), np.flatnonzero(fold_of == f)
            if task == "svm" and np.unique(y[tr]).size < 2:
                scores.append(float("nan"))
                continue
            model = _fit(task, K[np.ix_(tr, tr)], y[tr], reg)
            pred = predict(model, K[np.ix_(tr, va)])
            scores.append(_score(task, y[va], pred))
        s = float(np.nanmean(scores)) if np.any(np.isfinite(scores)) else float("nan")
        cells_out.append(dict(cell, score=s, skipped=False))
        if math.isfinite(s) and (best is None or s > best[0]):
            best = (s, cell)
    if best is None:
        raise NumericFailure("no grid cell produced a finite validation score")
    sel = best[1]
    model = _fit(task, _values(cache[(sel["h"], sel["zeta"])]), y, sel["reg"])
    model.metadata.update(selected=sel)
    return CVReport(task, kernel_kind, cells_out, dict(sel, score=best[0]), fold_of.tolist(), int(seed), model)
