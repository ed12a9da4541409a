"""Learning the source-to-target feature map ``W`` (``N_Y x N_X``).

Both objectives separate over target rows, so each row is an independent
single-output problem over the same design ``M_X``:

* ridge: ``W = M_Y (K + lam I)^-1 M_X^T`` with the ``m x m`` Gram matrix
  ``K = M_X^T M_X``, which equals the primal ``M_Y M_X^T (M_X M_X^T + lam I)^-1``.
* lasso, approximated by forward stagewise regression: every row repeatedly
  nudges its most correlated coefficient by ``+-eps``. All rows share
  ``G = M_X M_X^T`` and are advanced together.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from regmt.features import FeatureIndex, FeatureMatrix, SparseVector, read_coo, write_coo

RIDGE_DROP = 1e-12


@dataclass(frozen=True)
class RidgeConfig:
    lam: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")


@dataclass(frozen=True)
class FsrConfig:
    step_eps: float = 0.01
    max_iters: int = 5000
    tol: float = 0.0

    def __post_init__(self):
        if not self.step_eps > 0:
            raise ValueError("step_eps must be > 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")


@dataclass
class MappingMatrix:
    w: sp.csr_matrix
    src_index: FeatureIndex | None
    tgt_index: FeatureIndex | None
    solver: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w = sp.csr_matrix(self.w)
        self.w.eliminate_zeros()
        if not np.all(np.isfinite(self.w.data)):
            raise ValueError("mapping has non-finite entries")
        self._csc = self.w.tocsc()

    @property
    def nnz(self) -> int:
        return self.w.nnz

    @property
    def shape(self) -> tuple[int, int]:
        return self.w.shape

    def dense(self) -> np.ndarray:
        return self.w.toarray()

    def save(self, path) -> None:
        """Coordinate list with a ``# solver ...`` header line."""
        write_coo(self.w, path)
        with open(path, encoding="utf-8") as f:
            body = f.read()
        header = " ".join(f"{k}={v!r}" for k, v in sorted(self.params.items()))
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"# solver {self.solver} {header}".rstrip() + "\n" + body)

    @classmethod
    def load(cls, path, src_index=None, tgt_index=None) -> "MappingMatrix":
        with open(path, encoding="utf-8") as f:
            first = f.readline().split()
        solver = first[2]
        params = {}
        for kv in first[3:]:
            k, v = kv.split("=", 1)
            params[k] = float(v) if "." in v or "e" in v else int(v)
        return cls(read_coo(path), src_index, tgt_index, solver, params)


def _as_dense(m) -> np.ndarray:
    if isinstance(m, FeatureMatrix):
        return m.dense()
    if sp.issparse(m):
        return m.toarray()
    return np.asarray(m, dtype=float)


def _check_dims(mx, my):
    X, Y = _as_dense(mx), _as_dense(my)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: M_X {X.shape}, M_Y {Y.shape}")
    if X.shape[1] < 1:
        raise ValueError("need at least one training instance")
    return X, Y


def _indices(m):
    return m.index if isinstance(m, FeatureMatrix) else None


def ridge_dense(X: np.ndarray, Y: np.ndarray, lam: float) -> np.ndarray:
    """Dual-form ridge solution for columns-as-instances ``X`` and ``Y``."""
    K = X.T @ X
    K[np.diag_indices_from(K)] += lam
    factor = scipy.linalg.cho_factor(K, lower=True)
    # (K + lam I)^-1 X^T, then left-multiply by Y
    return Y @ scipy.linalg.cho_solve(factor, X.T)


def fit_ridge(mx, my, cfg: RidgeConfig = RidgeConfig()) -> MappingMatrix:
    X, Y = _check_dims(mx, my)
    W = ridge_dense(X, Y, cfg.lam)
    W[np.abs(W) < RIDGE_DROP] = 0.0
    return MappingMatrix(sp.csr_matrix(W), _indices(mx), _indices(my), "ridge",
                         {"lam": cfg.lam})


def ridge_objective(W, X, Y, lam) -> float:
    R = Y - W @ X
    return float(np.sum(R * R) + lam * np.sum(W * W))


def fsr_path(mx, my, cfg: FsrConfig = FsrConfig(),
             budgets: Sequence[int] | None = None,
             trace: list | None = None) -> list[MappingMatrix]:
    """Forward stagewise fits, one per iteration budget in ``budgets``.

    A single run up to ``max(budgets)`` yields all snapshots, since a
    smaller budget is a prefix of a larger one. Each row stops early when
    its largest absolute correlation drops below ``cfg.tol`` or when the
    next ``eps`` step would no longer lower the row's residual, which keeps
    ``||M_Y - W M_X||_F^2`` non-increasing. If ``trace`` is a list, the
    residual after every iteration is appended to it.
    """
    X, Y = _check_dims(mx, my)
    budgets = sorted(set(budgets if budgets is not None else [cfg.max_iters]))
    eps = cfg.step_eps
    n_y, n_x = Y.shape[0], X.shape[0]
    G = X @ X.T
    g_diag = np.diag(G).copy()
    C = Y @ X.T  # residual correlations, one row per target feature
    W = np.zeros((n_y, n_x))
    active = np.flatnonzero(np.abs(C).max(axis=1, initial=0.0) > 0) if n_x else np.array([], int)
    if trace is not None:
        R = Y.copy()
        trace.append(float(np.sum(R * R)))

    snapshots = []
    params = {"step_eps": eps, "tol": cfg.tol}

    def snap(it):
        snapshots.append(MappingMatrix(sp.csr_matrix(W), _indices(mx), _indices(my), "fsr",
                                       dict(params, max_iters=it)))

    it = 0
    for target in budgets:
        while it < target and active.size:
            Ca = C[active]
            j = np.argmax(np.abs(Ca), axis=1)
            c = Ca[np.arange(active.size), j]
            # a step of eps*sign(c) changes the row's RSS by eps^2 G_jj - 2 eps |c|
            ok = (np.abs(c) >= max(cfg.tol, 1e-300)) & (2 * np.abs(c) > eps * g_diag[j])
            active, j, c = active[ok], j[ok], c[ok]
            if not active.size:
                break
            delta = eps * np.sign(c)
            W[active, j] += delta
            C[active] -= delta[:, None] * G[j]
            if trace is not None:
                R[active] -= delta[:, None] * X[j]
                trace.append(float(np.sum(R * R)))
            it += 1
        snap(target)
    return snapshots


def fit_fsr(mx, my, cfg: FsrConfig = FsrConfig()) -> MappingMatrix:
    return fsr_path(mx, my, cfg)[0]


def predict(w: MappingMatrix, phi_x: SparseVector) -> SparseVector:
    """``W @ phi_x`` touching only the columns present in ``phi_x``."""
    if not len(phi_x):
        return SparseVector()
    cols = np.fromiter(phi_x.entries.keys(), dtype=int, count=len(phi_x))
    vals = np.fromiter(phi_x.entries.values(), dtype=float, count=len(phi_x))
    y = w._csc[:, cols] @ vals
    return SparseVector.from_dense(np.asarray(y).ravel())


def sparsity_stats(w: MappingMatrix) -> dict:
    csc = w._csc
    per_col = np.diff(csc.indptr)
    hist = {int(k): int(v) for k, v in zip(*np.unique(per_col, return_counts=True))}
    return {
        "nnz": int(w.nnz),
        "nnz_per_source_col": hist,
        "frobenius": float(np.sqrt(np.sum(csc.data ** 2))),
        "l1_norm": float(np.sum(np.abs(csc.data))),
    }
