"""Evaluation machinery: accuracy, confusion matrices, one-vs-rest ROC/AUC,
multi-rater fusion and agreement, and the feature correlation/significance
report."""

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ParameterError

N_CLASSES = 5


def accuracy(y_hat, y):
    """Fraction of exact matches between predictions and reference labels."""
    y_hat = np.asarray(y_hat)
    y = np.asarray(y)
    if y_hat.shape != y.shape or y.size == 0:
        raise ParameterError("need two equal-length non-empty label vectors")
    return float(np.mean(y_hat == y))


def confusion_matrix(y_hat, y, n_classes=N_CLASSES):
    """Count matrix with entry (i, j) = true class i predicted as class j.

    Classes are 1-based; row/column 0 of the returned matrix is class 1.
    """
    y_hat = np.asarray(y_hat, dtype=int)
    y = np.asarray(y, dtype=int)
    if y_hat.shape != y.shape or y.size == 0:
        raise ParameterError("need two equal-length non-empty label vectors")
    for arr in (y_hat, y):
        if arr.min() < 1 or arr.max() > n_classes:
            raise ParameterError(f"labels must lie in [1, {n_classes}]")
    m = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(m, (y - 1, y_hat - 1), 1)
    return m


def _binary_roc(scores, positive):
    """Threshold-sweep ROC with tied scores grouped into single steps.

    The trapezoid area is accumulated in exact integer arithmetic
    (2 * area * P * N) and divided once, so it matches pair counting
    bit-for-bit.
    """
    scores = np.asarray(scores, dtype=float)
    positive = np.asarray(positive, dtype=bool)
    p_total = int(positive.sum())
    n_total = int(positive.size - p_total)
    if p_total == 0 or n_total == 0:
        return None, None
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    pos = positive[order]
    points = [(0.0, 0.0)]
    tp = fp = 0
    area2 = 0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        dtp = int(pos[i:j].sum())
        dfp = (j - i) - dtp
        area2 += dfp * (tp + (tp + dtp))
        tp += dtp
        fp += dfp
        points.append((fp / n_total, tp / p_total))
        i = j
    auc = area2 / (2 * p_total * n_total)
    return points, auc


def roc_auc_ovr(scores, y, n_classes=N_CLASSES):
    """One-vs-rest ROC and AUC per class.

    scores is (n, K); class k uses column k-1. A class absent from y gets
    {"roc": None, "auc": None} rather than a fabricated number.
    """
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y, dtype=int)
    if scores.ndim != 2 or scores.shape[0] != y.size or scores.shape[1] != n_classes:
        raise ParameterError("scores must be (n_samples, n_classes)")
    if not np.isfinite(scores).all():
        raise ParameterError("scores must be finite")
    out = {}
    for k in range(1, n_classes + 1):
        roc, auc = _binary_roc(scores[:, k - 1], y == k)
        out[k] = {"roc": roc, "auc": auc}
    return out


def fuse_labels(ratings):
    """Median fusion of ordinal ratings; even counts take the lower median.

    Accepts one dataset's ratings (1D -> int) or a raters x datasets matrix
    (2D -> int array per dataset). Invariant to rater order.
    """
    arr = np.asarray(ratings, dtype=int)
    if arr.size == 0:
        raise ParameterError("need at least one rating")
    if arr.ndim == 1:
        return int(np.sort(arr)[(arr.size - 1) // 2])
    if arr.ndim == 2:
        s = np.sort(arr, axis=0)
        return s[(arr.shape[0] - 1) // 2, :].astype(int)
    raise ParameterError("ratings must be 1D or 2D")


@dataclass
class RaterPanel:
    """Raters x datasets label matrix plus its agreement statistic."""

    labels: np.ndarray
    kappa: float | None = None
    g: int = 4

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)


def _weight_matrix(weighting, n_classes):
    idx = np.arange(n_classes, dtype=float)
    d = np.abs(idx[:, None] - idx[None, :])
    if weighting == "quadratic":
        return 1.0 - (d / (n_classes - 1)) ** 2
    if weighting == "linear":
        return 1.0 - d / (n_classes - 1)
    if weighting == "unweighted":
        return (d == 0).astype(float)
    if callable(weighting):
        w = np.array([[float(weighting(i, j, n_classes)) for j in range(n_classes)]
                      for i in range(n_classes)])
        return w
    raise ParameterError(f"unknown weighting {weighting!r}")


def rater_agreement(panel, g=4, weighting="quadratic", n_classes=N_CLASSES):
    """Weighted Fleiss' kappa over a raters x datasets panel.

    Default weights w_ij = 1 - ((i-j)/(K-1))^2. Returns None when the
    expected agreement is 1 (a single category used everywhere), in which
    case kappa is undefined. When a RaterPanel is passed its kappa/g fields
    are filled in.
    """
    is_panel = isinstance(panel, RaterPanel)
    labels = panel.labels if is_panel else np.asarray(panel, dtype=int)
    if labels.ndim != 2 or labels.shape[0] < 2 or labels.shape[1] < 2:
        raise ParameterError("need a raters x datasets matrix, >= 2 of each")
    if labels.min() < 1 or labels.max() > n_classes:
        raise ParameterError(f"ratings must lie in [1, {n_classes}]")
    m, n_items = labels.shape
    counts = np.zeros((n_items, n_classes), dtype=float)
    for r in range(m):
        np.add.at(counts, (np.arange(n_items), labels[r] - 1), 1.0)
    w = _weight_matrix(weighting, n_classes)
    # observed: weighted agreement over ordered rater pairs, self-pairs removed
    per_item = (np.einsum("ij,jk,ik->i", counts, w, counts) - m) / (m * (m - 1))
    p_obs = float(per_item.mean())
    marginals = counts.sum(axis=0) / (m * n_items)
    p_exp = float(marginals @ w @ marginals)
    if abs(1.0 - p_exp) < 1e-12:
        kappa = None
    else:
        kappa = float((p_obs - p_exp) / (1.0 - p_exp))
    if is_panel:
        panel.kappa = kappa
        panel.g = g
    return kappa


@dataclass
class SignificanceReport:
    """Feature cross-correlation and pairwise Welch t-test summary."""

    correlation: np.ndarray
    pvalues: np.ndarray
    kept: list
    excluded: list
    frac_p05: float
    frac_p01: float
    feature_names: list | None = None

    def to_dict(self):
        return {
            "kept": list(self.kept),
            "excluded_zero_variance": list(self.excluded),
            "frac_p05": self.frac_p05,
            "frac_p01": self.frac_p01,
            "n_features": len(self.kept),
        }


def feature_significance(x, y=None, feature_names=None):
    """Pairwise Pearson correlations and Welch t-test p-values over features.

    Entry (i, j) of the p-value grid compares feature i's sample against
    feature j's sample. Zero-variance features are excluded and noted.
    When labels are given, requires >= 2 classes with >= 2 samples each.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ParameterError("need a (n >= 2, F) feature matrix")
    if y is not None:
        _, counts = np.unique(np.asarray(y), return_counts=True)
        if len(counts) < 2 or (counts < 2).any():
            raise ParameterError("need >= 2 classes with >= 2 samples each")
    n, n_feat = x.shape
    var = x.var(axis=0, ddof=1)
    kept = [i for i in range(n_feat) if var[i] > 0]
    excluded = [i for i in range(n_feat) if var[i] <= 0]
    xk = x[:, kept]
    corr = np.corrcoef(xk, rowvar=False)
    if corr.ndim == 0:  # single kept feature
        corr = corr.reshape(1, 1)
    mean = xk.mean(axis=0)
    v = xk.var(axis=0, ddof=1)
    se2 = v / n
    denom = se2[:, None] + se2[None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (mean[:, None] - mean[None, :]) / np.sqrt(denom)
        df = denom**2 / (se2[:, None] ** 2 / (n - 1) + se2[None, :] ** 2 / (n - 1))
    p = 2.0 * stats.t.sf(np.abs(t), df)
    np.fill_diagonal(p, 1.0)
    iu = np.triu_indices(len(kept), k=1)
    off = p[iu]
    frac05 = float(np.mean(off < 0.05)) if off.size else 0.0
    frac01 = float(np.mean(off < 0.01)) if off.size else 0.0
    names = [feature_names[i] for i in kept] if feature_names else None
    return SignificanceReport(correlation=corr, pvalues=p, kept=kept,
                              excluded=excluded, frac_p05=frac05,
                              frac_p01=frac01, feature_names=names)


@dataclass
class EvaluationReport:
    """Accuracy, confusion matrix, and per-class ROC/AUC on a test set."""

    accuracy: float
    confusion: np.ndarray
    per_class: dict
    n_test: int
    missing_classes: list = field(default_factory=list)

    def to_dict(self):
        per_class = {}
        for k, v in self.per_class.items():
            per_class[str(k)] = {
                "auc": v["auc"],
                "roc": [[float(a), float(b)] for a, b in v["roc"]] if v["roc"] else None,
            }
        return {
            "accuracy": self.accuracy,
            "n_test": self.n_test,
            "confusion": self.confusion.tolist(),
            "per_class": per_class,
            "missing_classes": self.missing_classes,
        }


def build_report(y_true, y_pred, scores=None, n_classes=N_CLASSES):
    """Assemble the standard evaluation report for one classifier run."""
    acc = accuracy(y_pred, y_true)
    conf = confusion_matrix(y_pred, y_true, n_classes)
    per_class = {}
    missing = []
    if scores is not None:
        per_class = roc_auc_ovr(scores, y_true, n_classes)
        missing = [k for k, v in per_class.items() if v["auc"] is None]
    return EvaluationReport(accuracy=acc, confusion=conf, per_class=per_class,
                            n_test=len(np.asarray(y_true)), missing_classes=missing)
