"""Soft-margin RBF support vector machines trained from scratch.

The binary solver is sequential minimal optimization on the dual problem
with maximal-violating-pair working-set selection. Multiclass prediction
uses the one-against-one scheme: one machine per class pair, majority
voting for hard labels, and per-pair sigmoid calibration whose outputs are
coupled into a single probability vector by a quadratic pairwise-coupling
fixed point. Grid search runs stratified k-fold cross-validation.
"""

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParameterError, ShapeError, TrainingError

DEFAULT_C_GRID = tuple(2.0**p for p in range(-5, 16))
DEFAULT_GAMMA_GRID = tuple(2.0**p for p in range(-15, 4, 2))

_MAX_COUPLING_ITERS = 1000
_COUPLING_TOL = 1e-10


@dataclass(frozen=True)
class SvmConfig:
    """Penalty, kernel width and solver controls for one binary machine."""

    c: float = 1.0
    gamma: float = 0.1
    smo_tol: float = 1e-3
    max_passes: int = 200_000

    def __post_init__(self):
        if self.c <= 0 or self.gamma <= 0:
            raise ParameterError("c and gamma must be positive")
        if self.smo_tol <= 0:
            raise ParameterError("smo_tol must be positive")


@dataclass(frozen=True)
class BinarySvm:
    """A trained binary machine: support vectors, alpha*y, bias, sigmoid."""

    support_vectors: np.ndarray
    coef: np.ndarray
    bias: float
    gamma: float
    c: float
    platt_a: float = 0.0
    platt_b: float = 0.0
    dual_objective: float = 0.0
    kkt_residual: float = 0.0


@dataclass(frozen=True)
class OvoSvmModel:
    """K(K-1)/2 calibrated binary machines indexed by class pair (i < j)."""

    machines: dict
    k: int
    config: SvmConfig


def rbf_kernel(x, z, gamma):
    """exp(-gamma * ||x - z||^2) for two equal-length vectors."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if x.shape != z.shape:
        raise ShapeError(f"kernel operands differ in shape: {x.shape} vs {z.shape}")
    d = x - z
    return float(np.exp(-gamma * (d @ d)))


def kernel_matrix(A, B, gamma):
    """Pairwise RBF kernel values for two sample matrices."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.shape[1] != B.shape[1]:
        raise ShapeError("kernel operands differ in feature dimension")
    sq = (
        (A**2).sum(axis=1)[:, None]
        + (B**2).sum(axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    return np.exp(-gamma * np.maximum(sq, 0.0))


def _smo_solve(K, y, cfg):
    """Minimize 1/2 a^T Q a - e^T a over the box [0, C]^n with y^T a = 0.

    Working-set selection picks the maximal violating pair of the KKT
    conditions; each step solves the two-variable subproblem analytically.
    Returns (alpha, dual objective, final KKT residual).
    """
    n = len(y)
    Q = np.outer(y, y) * K
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of the dual objective at alpha = 0
    c = cfg.c
    for _ in range(cfg.max_passes):
        neg_yg = -y * grad
        up = ((alpha < c) & (y > 0)) | ((alpha > 0) & (y < 0))
        low = ((alpha < c) & (y < 0)) | ((alpha > 0) & (y > 0))
        if not up.any() or not low.any():
            break
        i = int(np.flatnonzero(up)[np.argmax(neg_yg[up])])
        j = int(np.flatnonzero(low)[np.argmin(neg_yg[low])])
        violation = neg_yg[i] - neg_yg[j]
        if violation <= cfg.smo_tol:
            break
        a = max(K[i, i] + K[j, j] - 2.0 * K[i, j], 1e-12)
        t = violation / a
        # largest feasible step along d = (y_i at i, -y_j at j)
        t = min(t, c - alpha[i] if y[i] > 0 else alpha[i])
        t = min(t, alpha[j] if y[j] > 0 else c - alpha[j])
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        np.clip(alpha, 0.0, c, out=alpha)
        grad += t * (Q[:, i] * y[i] - Q[:, j] * y[j])
    neg_yg = -y * grad
    up = ((alpha < c) & (y > 0)) | ((alpha > 0) & (y < 0))
    low = ((alpha < c) & (y < 0)) | ((alpha > 0) & (y > 0))
    residual = 0.0
    if up.any() and low.any():
        residual = max(0.0, float(neg_yg[up].max() - neg_yg[low].min()))
    dual = float(alpha.sum() - 0.5 * alpha @ Q @ alpha)
    return alpha, dual, residual


def train_binary(X, y, cfg=None):
    """Train one soft-margin binary machine on labels in {-1, +1}.

    The bias averages -y_i * grad_i over unbound support vectors, falling
    back to the violating-pair midpoint when every alpha sits on the box.
    """
    cfg = cfg or SvmConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if set(np.unique(y)) != {-1.0, 1.0}:
        raise TrainingError("binary training needs both labels -1 and +1")
    K = kernel_matrix(X, X, cfg.gamma)
    alpha, dual, residual = _smo_solve(K, y, cfg)
    grad = (np.outer(y, y) * K) @ alpha - 1.0
    unbound = (alpha > 1e-9) & (alpha < cfg.c - 1e-9)
    if unbound.any():
        bias = float((-y * grad)[unbound].mean())
    else:
        neg_yg = -y * grad
        up = ((alpha < cfg.c) & (y > 0)) | ((alpha > 0) & (y < 0))
        low = ((alpha < cfg.c) & (y < 0)) | ((alpha > 0) & (y > 0))
        bias = float((neg_yg[up].max() + neg_yg[low].min()) / 2.0)
    sv = alpha > 1e-12
    return BinarySvm(
        support_vectors=X[sv].copy(),
        coef=(alpha * y)[sv].copy(),
        bias=bias,
        gamma=cfg.gamma,
        c=cfg.c,
        dual_objective=dual,
        kkt_residual=residual,
    )


def decision_function(model, X):
    """Signed margin values sum_s coef_s k(sv_s, x) + b for each row of X."""
    X = np.asarray(X, dtype=np.float64)
    if len(model.coef) == 0:
        return np.full(X.shape[0], model.bias)
    K = kernel_matrix(X, model.support_vectors, model.gamma)
    return K @ model.coef + model.bias


def fit_platt_sigmoid(decision_values, y):
    """Fit P(y=+1 | f) = 1 / (1 + exp(a*f + b)) by penalized likelihood.

    Targets are smoothed to (N+ + 1)/(N+ + 2) and 1/(N- + 2); the Newton
    iteration uses a damped Hessian and backtracking line search.
    """
    f = np.asarray(decision_values, dtype=np.float64)
    y = np.asarray(y)
    n_pos = int((y > 0).sum())
    n_neg = int((y <= 0).sum())
    hi = (n_pos + 1.0) / (n_pos + 2.0)
    lo = 1.0 / (n_neg + 2.0)
    t = np.where(y > 0, hi, lo)

    def objective(a, b):
        fab = a * f + b
        # -sum t*log(p) + (1-t)*log(1-p) in the overflow-safe split form
        return float(np.where(fab >= 0,
                              t * fab + np.log1p(np.exp(-fab)),
                              (t - 1.0) * fab + np.log1p(np.exp(fab))).sum())

    a, b = 0.0, math.log((n_neg + 1.0) / (n_pos + 1.0))
    obj = objective(a, b)
    sigma = 1e-12
    for _ in range(100):
        fab = a * f + b
        p = np.where(fab >= 0,
                     np.exp(-fab) / (1.0 + np.exp(-fab)),
                     1.0 / (1.0 + np.exp(fab)))
        d1 = t - p
        d2 = p * (1.0 - p)
        g1 = float(f @ d1)
        g2 = float(d1.sum())
        if abs(g1) < 1e-10 and abs(g2) < 1e-10:
            break
        h11 = sigma + float(f @ (f * d2))
        h22 = sigma + float(d2.sum())
        h12 = float(f @ d2)
        det = h11 * h22 - h12 * h12
        da = -(h22 * g1 - h12 * g2) / det
        db = -(h11 * g2 - h12 * g1) / det
        step = 1.0
        while step >= 1e-12:
            na, nb = a + step * da, b + step * db
            nobj = objective(na, nb)
            if nobj < obj + 1e-12:
                a, b, obj = na, nb, nobj
                break
            step /= 2.0
        else:
            break
    return float(a), float(b)


def platt_probability(f, a, b):
    """Calibrated positive-class probability for one decision value."""
    fab = a * f + b
    if fab >= 0:
        e = math.exp(-fab)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(fab))


def couple_probabilities(R):
    """Combine pairwise probabilities into one distribution over K classes.

    R[i, j] is P(class i | {i, j}); the quadratic coupling objective
    1/2 sum (r_ji p_i - r_ij p_j)^2 is minimized over the simplex by a
    normalized Gauss-Seidel fixed point, stopping when every coordinate of
    Q p equals p^T Q p within 1e-10.
    """
    R = np.asarray(R, dtype=np.float64)
    k = R.shape[0]
    if k == 1:
        return np.ones(1)
    Q = np.zeros((k, k))
    for t in range(k):
        for u in range(k):
            if t == u:
                Q[t, t] = sum(R[j, t] ** 2 for j in range(k) if j != t)
            else:
                Q[t, u] = -R[u, t] * R[t, u]
    p = np.full(k, 1.0 / k)
    for _ in range(_MAX_COUPLING_ITERS):
        for t in range(k):
            pqp = float(p @ Q @ p)
            p[t] = (-(Q[t] @ p) + Q[t, t] * p[t] + pqp) / Q[t, t]
            p /= p.sum()
        qp = Q @ p
        pqp = float(p @ qp)
        if np.max(np.abs(qp - pqp)) < _COUPLING_TOL:
            break
    return p


def majority_vote(decisions, k):
    """Class from pairwise decision values {(i, j): f_ij} with i < j.

    f_ij > 0 votes for class i, otherwise j. Ties go to the class with the
    larger summed |f| over the machines it won, then to the lower index.
    """
    votes = {c: 0 for c in range(1, k + 1)}
    weight = {c: 0.0 for c in range(1, k + 1)}
    for (i, j), f in decisions.items():
        winner = i if f > 0 else j
        votes[winner] += 1
        weight[winner] += abs(f)
    best = max(votes.values())
    tied = [c for c, v in votes.items() if v == best]
    if len(tied) == 1:
        return tied[0]
    top = max(weight[c] for c in tied)
    tied = [c for c in tied if weight[c] == top]
    return min(tied)


def train_ovo(X, y, cfg=None, k=5):
    """Train one calibrated binary machine per class pair (i < j) <= k.

    Every class 1..k must be present; each machine sees only its own pair's
    samples, with +1 assigned to the lower class index.
    """
    cfg = cfg or SvmConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    for c in range(1, k + 1):
        if not (y == c).any():
            raise TrainingError(f"class {c} has no training samples")
    machines = {}
    for i, j in itertools.combinations(range(1, k + 1), 2):
        sel = (y == i) | (y == j)
        Xp = X[sel]
        yp = np.where(y[sel] == i, 1, -1)
        machine = train_binary(Xp, yp, cfg)
        f = decision_function(machine, Xp)
        a, b = fit_platt_sigmoid(f, yp)
        machines[(i, j)] = BinarySvm(
            support_vectors=machine.support_vectors,
            coef=machine.coef,
            bias=machine.bias,
            gamma=machine.gamma,
            c=machine.c,
            platt_a=a,
            platt_b=b,
            dual_objective=machine.dual_objective,
            kkt_residual=machine.kkt_residual,
        )
    return OvoSvmModel(machines=machines, k=k, config=cfg)


def _pair_decisions(model, X):
    """{(i, j): decision values over X} for every machine."""
    return {pair: decision_function(m, X) for pair, m in model.machines.items()}


def predict_classes(model, X):
    """Majority-vote class per row of X."""
    X = np.asarray(X, dtype=np.float64)
    decs = _pair_decisions(model, X)
    out = np.empty(X.shape[0], dtype=int)
    for n in range(X.shape[0]):
        out[n] = majority_vote({p: float(v[n]) for p, v in decs.items()}, model.k)
    return out


def predict_class(model, x):
    """Majority-vote class for a single vector."""
    return int(predict_classes(model, np.asarray(x, dtype=np.float64)[None, :])[0])


def predict_probas(model, X):
    """Coupled class probabilities per row of X; rows sum to 1."""
    X = np.asarray(X, dtype=np.float64)
    decs = _pair_decisions(model, X)
    out = np.empty((X.shape[0], model.k))
    for n in range(X.shape[0]):
        R = np.zeros((model.k, model.k))
        for (i, j), f in decs.items():
            m = model.machines[(i, j)]
            r = platt_probability(float(f[n]), m.platt_a, m.platt_b)
            R[i - 1, j - 1] = r
            R[j - 1, i - 1] = 1.0 - r
        out[n] = couple_probabilities(R)
    return out


def predict_proba(model, x):
    """Coupled class probabilities for a single vector."""
    return predict_probas(model, np.asarray(x, dtype=np.float64)[None, :])[0]


def stratified_folds(y, folds, seed):
    """Round-robin class-stratified fold assignment; returns index lists."""
    rng = np.random.default_rng(seed)
    assign = [[] for _ in range(folds)]
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        for pos, sample in enumerate(idx):
            assign[pos % folds].append(int(sample))
    return [np.array(sorted(f), dtype=int) for f in assign]


def grid_search_cv(X, y, c_grid, gamma_grid, folds=10, seed=0, k=None):
    """Stratified k-fold accuracy over the (C, gamma) grid.

    Returns (best C, best gamma, best accuracy); ties prefer the smaller C,
    then the smaller gamma. Classes with fewer samples than `folds` shrink
    the fold count (with a warning) so stratification stays valid.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    if len(c_grid) == 0 or len(gamma_grid) == 0:
        raise ParameterError("hyperparameter grid must be non-empty")
    if folds < 2:
        raise ParameterError("cross-validation needs at least 2 folds")
    k = int(y.max()) if k is None else k
    min_count = min(int((y == c).sum()) for c in range(1, k + 1))
    if min_count < folds:
        warnings.warn(
            f"smallest class has {min_count} samples; reducing folds "
            f"from {folds} to {min_count}", stacklevel=2)
        folds = min_count
    if folds < 2:
        raise TrainingError("a class is too small for 2-fold stratification")
    fold_idx = stratified_folds(y, folds, seed)
    best = None
    for c in sorted(c_grid):
        for gamma in sorted(gamma_grid):
            correct = 0
            for held in fold_idx:
                train = np.setdiff1d(np.arange(len(y)), held)
                model = train_ovo(X[train], y[train],
                                  SvmConfig(c=c, gamma=gamma), k=k)
                correct += int((predict_classes(model, X[held]) == y[held]).sum())
            acc = correct / len(y)
            if best is None or acc > best[2]:
                best = (float(c), float(gamma), acc)
    return best


def save_ovo(path, model):
    """Serialize an OvO model (support vectors, coefficients, sigmoids)."""
    payload = {
        "format": "ovo-svm",
        "version": 1,
        "k": model.k,
        "config": {"c": model.config.c, "gamma": model.config.gamma,
                   "smo_tol": model.config.smo_tol,
                   "max_passes": model.config.max_passes},
        "machines": [
            {
                "pair": list(pair),
                "support_vectors": m.support_vectors.tolist(),
                "coef": m.coef.tolist(),
                "bias": m.bias,
                "gamma": m.gamma,
                "c": m.c,
                "platt_a": m.platt_a,
                "platt_b": m.platt_b,
            }
            for pair, m in sorted(model.machines.items())
        ],
    }
    Path(path).write_text(json.dumps(payload))
    return Path(path)


def load_ovo(path):
    """Load a model written by save_ovo."""
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != "ovo-svm" or payload.get("version") != 1:
        raise ParameterError(f"{path} is not an OvO SVM model file")
    cfg = SvmConfig(**payload["config"])
    machines = {}
    for m in payload["machines"]:
        machines[tuple(m["pair"])] = BinarySvm(
            support_vectors=np.array(m["support_vectors"], dtype=np.float64),
            coef=np.array(m["coef"], dtype=np.float64),
            bias=m["bias"],
            gamma=m["gamma"],
            c=m["c"],
            platt_a=m["platt_a"],
            platt_b=m["platt_b"],
        )
    return OvoSvmModel(machines=machines, k=payload["k"], config=cfg)
