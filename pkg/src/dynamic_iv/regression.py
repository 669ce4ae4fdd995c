"""Linear estimation engine: OLS, 2SLS, CR1 cluster covariance and tests.

Solves go through pivoted QR so that collinear columns (wave dummies,
exposure indicators with no support) are detected and reported by name
instead of silently producing garbage.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy import stats


class RankError(ValueError):
    """Design or instrument matrix is rank deficient."""

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = list(columns)


class NotOverIdentified(ValueError):
    pass


@dataclass
class DesignMatrices:
    """Stacked regression inputs.

    ``endogenous`` lists indices of ``X`` columns that are instrumented; the
    remaining ``X`` columns are exogenous and must also appear in ``Zmat``.
    """

    y: np.ndarray
    X: np.ndarray
    Zmat: np.ndarray
    cluster: np.ndarray
    x_names: list[str]
    z_names: list[str]
    endogenous: list[int] = field(default_factory=list)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.y), -1)
        self.Zmat = np.asarray(self.Zmat, dtype=float).reshape(len(self.y), -1)
        self.cluster = np.asarray(self.cluster)
        n = len(self.y)
        if not (self.X.shape[0] == self.Zmat.shape[0] == len(self.cluster) == n):
            raise ValueError("y, X, Zmat and cluster must have the same number of rows")
        if len(self.x_names) != self.X.shape[1] or len(self.z_names) != self.Zmat.shape[1]:
            raise ValueError("column names do not match matrix widths")

    @classmethod
    def ols_design(cls, y, X, cluster, x_names):
        return cls(y, X, X, cluster, list(x_names), list(x_names), [])

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def over_identification(self) -> int:
        return self.Zmat.shape[1] - self.X.shape[1]


@dataclass
class TestResult:
    stat: float
    dof: int
    p: float
    kind: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "stat": float(self.stat), "dof": int(self.dof), "p": float(self.p)}


@dataclass
class EstimateTable:
    names: list[str]
    coef: np.ndarray
    vcov: np.ndarray
    n_obs: int
    n_clusters: int
    meta: dict = field(default_factory=dict)
    # per-cluster influence contributions (G x k) and their cluster labels
    influence: np.ndarray | None = field(default=None, repr=False)
    clusters: np.ndarray | None = field(default=None, repr=False)

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.vcov), 0, None))

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"no coefficient {name!r}") from None

    def __getitem__(self, name: str) -> float:
        return float(self.coef[self.index(name)])

    def se_of(self, name: str) -> float:
        return float(self.se[self.index(name)])

    def subset(self, names: Sequence[str]) -> "EstimateTable":
        idx = [self.index(n) for n in names]
        return EstimateTable(
            list(names), self.coef[idx], self.vcov[np.ix_(idx, idx)], self.n_obs,
            self.n_clusters, dict(self.meta),
            None if self.influence is None else self.influence[:, idx], self.clusters,
        )

    def to_dict(self) -> dict:
        return {
            "coef": dict(zip(self.names, map(float, self.coef))),
            "se": dict(zip(self.names, map(float, self.se))),
            "vcov": np.asarray(self.vcov, dtype=float).tolist(),
            "n_obs": int(self.n_obs),
            "n_clusters": int(self.n_clusters),
            "meta": _jsonable(self.meta),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    return obj


# --- linear algebra ----------------------------------------------------------

def _pivoted_qr(A: np.ndarray):
    Q, R, piv = sla.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0:
        return Q, R, piv, 0
    tol = np.finfo(float).eps * max(A.shape) * diag[0]
    rank = int(np.sum(diag > tol))
    return Q, R, piv, rank


def _check_rank(A: np.ndarray, names: Sequence[str], what: str):
    Q, R, piv, rank = _pivoted_qr(A)
    if rank < A.shape[1]:
        bad = [names[j] for j in piv[rank:]]
        raise RankError(f"{what} is rank deficient (rank {rank} < {A.shape[1]}); "
                        f"collinear columns: {bad}", bad)
    return Q, R, piv


def _solve_ls(A: np.ndarray, b: np.ndarray, names: Sequence[str], what: str):
    """Least squares via pivoted QR; returns coef and inverse of A'A."""
    Q, R, piv = _check_rank(A, names, what)
    k = A.shape[1]
    coef_p = sla.solve_triangular(R, Q.T @ b)
    coef = np.empty(k)
    coef[piv] = coef_p
    Rinv = sla.solve_triangular(R, np.eye(k))
    inv_p = Rinv @ Rinv.T
    inv = np.empty((k, k))
    inv[np.ix_(piv, piv)] = inv_p
    return coef, inv


def cluster_sums(scores: np.ndarray, cluster: np.ndarray):
    """Sum rows of ``scores`` within clusters; returns (labels, G x k sums)."""
    labels, inv = np.unique(cluster, return_inverse=True)
    G = len(labels)
    out = np.empty((G, scores.shape[1]))
    for j in range(scores.shape[1]):
        out[:, j] = np.bincount(inv, weights=scores[:, j], minlength=G)
    return labels, out


def cr1_factor(n: int, k: int, g: int) -> float:
    if n <= k:
        return float("nan")
    return g / (g - 1) * (n - 1) / (n - k)


# --- estimators ----------------------------------------------------------------

def _finish(dm: DesignMatrices, coef, bread, score_x, kind, meta):
    resid = dm.y - dm.X @ coef
    scores = score_x * resid[:, None]
    labels, s = cluster_sums(scores, dm.cluster)
    G = len(labels)
    if G < 2:
        raise ValueError("cluster-robust covariance needs at least 2 clusters")
    infl = s @ bread.T
    c = cr1_factor(dm.n, dm.X.shape[1], G)
    vcov = c * (infl.T @ infl)
    vcov = (vcov + vcov.T) / 2
    meta = dict(meta or {})
    meta.setdefault("estimator", kind)
    return EstimateTable(list(dm.x_names), coef, vcov, dm.n, G, meta, infl, labels)


def ols(dm: DesignMatrices, meta: dict | None = None) -> EstimateTable:
    """OLS of ``y`` on ``X`` with CR1 covariance clustered on ``dm.cluster``."""
    coef, bread = _solve_ls(dm.X, dm.y, dm.x_names, "regressor matrix X")
    return _finish(dm, coef, bread, dm.X, "ols", meta)


def _first_stage_fit(dm: DesignMatrices) -> np.ndarray:
    """Projection of X onto the instrument space."""
    if dm.Zmat.shape[1] < dm.X.shape[1]:
        raise RankError(
            f"more regressors ({dm.X.shape[1]}) than instruments ({dm.Zmat.shape[1]})",
            [dm.x_names[j] for j in dm.endogenous])
    Q, R, piv = _check_rank(dm.Zmat, dm.z_names, "instrument matrix")
    return Q @ (Q.T @ dm.X)


def iv_2sls(dm: DesignMatrices, meta: dict | None = None) -> EstimateTable:
    """Two-stage least squares with CR1 cluster covariance.

    In the exactly identified case this solves ``Z'(y - Xb) = 0``.
    """
    Xhat = _first_stage_fit(dm)
    coef, bread = _solve_ls(Xhat, dm.y, dm.x_names, "first-stage fitted regressors (Z'X)")
    return _finish(dm, coef, bread, Xhat, "2sls", meta)


def cluster_vcov(dm: DesignMatrices, coef: np.ndarray, kind: str = "iv") -> np.ndarray:
    """CR1 sandwich for given coefficients of the matching estimator."""
    if kind == "ols":
        _, bread = _solve_ls(dm.X, dm.y, dm.x_names, "regressor matrix X")
        score_x = dm.X
    elif kind == "iv":
        score_x = _first_stage_fit(dm)
        _, bread = _solve_ls(score_x, dm.y, dm.x_names, "first-stage fitted regressors (Z'X)")
    else:
        raise ValueError(f"kind must be 'ols' or 'iv', got {kind!r}")
    return _finish(dm, np.asarray(coef, dtype=float), bread, score_x, kind, None).vcov


# --- tests -------------------------------------------------------------------

def pinv_chi2(diff: np.ndarray, V: np.ndarray, kind: str) -> TestResult:
    V = (V + V.T) / 2
    w, U = np.linalg.eigh(V)
    top = max(np.max(np.abs(w)), 0.0) if w.size else 0.0
    keep = w > top * max(V.shape) * np.finfo(float).eps * 10
    rank = int(keep.sum())
    if rank == 0:
        raise ValueError("restriction variance has rank 0")
    proj = U[:, keep].T @ diff
    stat = float(np.sum(proj**2 / w[keep]))
    stat = max(stat, 0.0)
    return TestResult(stat, rank, float(stats.chi2.sf(stat, rank)), kind)


def wald_test(est: EstimateTable, R, q=None) -> TestResult:
    """Wald test of ``R b = q`` using the pseudo-inverse of ``R V R'``.

    The degrees of freedom equal the numerical rank of ``R V R'``.
    """
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape[1] != len(est.coef):
        raise ValueError(f"R has {R.shape[1]} columns, expected {len(est.coef)}")
    q = np.zeros(R.shape[0]) if q is None else np.asarray(q, dtype=float).ravel()
    if len(q) != R.shape[0]:
        raise ValueError("q must have one entry per restriction")
    return pinv_chi2(R @ est.coef - q, R @ est.vcov @ R.T, "wald")


def equality_restrictions(k: int, idx: Sequence[int]) -> np.ndarray:
    """Rows ``b[idx[0]] - b[idx[j]] = 0`` for j >= 1."""
    idx = list(idx)
    R = np.zeros((len(idx) - 1, k))
    for r, j in enumerate(idx[1:]):
        R[r, idx[0]] = 1.0
        R[r, j] = -1.0
    return R


def hansen_j(dm: DesignMatrices, est: EstimateTable | None = None) -> TestResult:
    """Hansen's J with cluster-robust weighting (two-step efficient GMM).

    The first step is 2SLS (``est`` if supplied); its residuals build the
    cluster-aggregated moment covariance ``S``.  J is evaluated at the
    second-step estimate with that weight.
    """
    dof = dm.over_identification
    if dof <= 0:
        raise NotOverIdentified("model is not over-identified")
    if est is None:
        est = iv_2sls(dm)
    Z, X, y = dm.Zmat, dm.X, dm.y
    e1 = y - X @ est.coef
    _, s = cluster_sums(Z * e1[:, None], dm.cluster)
    S = s.T @ s / dm.n
    cond = np.linalg.cond(S)
    if not np.isfinite(cond) or cond > 1 / np.finfo(float).eps:
        raise np.linalg.LinAlgError(f"moment covariance S is singular (condition number {cond:.3g})")
    W = np.linalg.inv(S)
    ZX = Z.T @ X / dm.n
    Zy = Z.T @ y / dm.n
    A = ZX.T @ W @ ZX
    b2 = np.linalg.solve(A, ZX.T @ W @ Zy)
    gbar = Z.T @ (y - X @ b2) / dm.n
    J = float(dm.n * gbar @ W @ gbar)
    J = max(J, 0.0)
    return TestResult(J, dof, float(stats.chi2.sf(J, dof)), "hansen_j")


@dataclass
class DifferenceTest:
    names: list[str]
    diff: np.ndarray
    se: np.ndarray
    vcov: np.ndarray
    joint: TestResult

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "diff": dict(zip(self.names, map(float, self.diff))),
            "se": dict(zip(self.names, map(float, self.se))),
            "joint": self.joint.to_dict(),
        }


def joint_difference_test(estA: EstimateTable, estB: EstimateTable,
                          names: Sequence[str] | None = None) -> DifferenceTest:
    """Test ``estA - estB = 0`` on shared coefficients.

    The covariance of the difference comes from the stacked per-cluster
    influence contributions of both fits, so any correlation between the
    estimators is allowed.  Small-sample factor is ``G/(G-1)``.
    """
    if names is None:
        if list(estA.names) != list(estB.names):
            raise ValueError(f"coefficient names differ: {estA.names} vs {estB.names}")
        names = list(estA.names)
    for nm in names:
        if nm not in estA.names or nm not in estB.names:
            raise ValueError(f"coefficient {nm!r} missing from one of the estimates")
    if estA.influence is None or estB.influence is None:
        raise ValueError("both estimates need per-cluster influence contributions")
    ia = [estA.index(n) for n in names]
    ib = [estB.index(n) for n in names]
    labels = np.union1d(estA.clusters, estB.clusters)
    G = len(labels)
    psi = np.zeros((G, len(names)))
    psi[np.searchsorted(labels, estA.clusters)] += estA.influence[:, ia]
    psi[np.searchsorted(labels, estB.clusters)] -= estB.influence[:, ib]
    V = G / (G - 1) * (psi.T @ psi)
    diff = estA.coef[ia] - estB.coef[ib]
    se = np.sqrt(np.clip(np.diag(V), 0, None))
    if np.allclose(diff, 0, atol=1e-14) and np.allclose(V, 0, atol=1e-300):
        joint = TestResult(0.0, len(names), 1.0, "hausman")
    else:
        joint = pinv_chi2(diff, V, "hausman")
    return DifferenceTest(list(names), diff, se, V, joint)
