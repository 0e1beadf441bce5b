"""Feature standardization and principal-component projection.

Features are scaled to zero mean and unit variance per column (constant
columns are flagged and mapped to zero), then projected onto the top-R
eigenvectors of the sample covariance. The eigen-solve runs as an SVD of
the centered data matrix, which stays stable and cheap when the feature
count exceeds the number of fitted vectors.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, ShapeError, TrainingError

DEFAULT_R_SVM = 45
DEFAULT_R_MLP = 47
MAX_R = 100

_ZERO_VAR_EPS = 1e-12
_MAGIC = b"ALQA-REDUCE\n"


@dataclass(frozen=True)
class Standardizer:
    """Per-column affine scaling fitted on the labeled training pool."""

    means: np.ndarray
    stds: np.ndarray
    zero_variance_flags: np.ndarray


@dataclass(frozen=True)
class PcaModel:
    """Top-R principal axes (rows) with their sample-covariance eigenvalues."""

    components: np.ndarray
    eigenvalues: np.ndarray
    r: int
    explained_variance_ratio: np.ndarray

    def checksum(self):
        h = hashlib.sha256()
        h.update(self.components.tobytes())
        h.update(self.eigenvalues.tobytes())
        h.update(str(self.r).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class ReducedVector:
    """Projection of one standardized feature vector, bound to its model."""

    values: np.ndarray
    model_hash: str


def fit_standardizer(X):
    """Fit per-column mean and population standard deviation.

    Columns with (near-)zero spread are flagged; applying the standardizer
    maps them to exactly zero instead of dividing by a degenerate scale.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("expected a 2D feature matrix")
    if X.shape[0] < 2:
        raise TrainingError("standardizer needs at least 2 vectors")
    means = X.mean(axis=0)
    stds = X.std(axis=0)
    flags = stds < _ZERO_VAR_EPS
    return Standardizer(means=means, stds=np.where(flags, 1.0, stds),
                        zero_variance_flags=flags)


def apply_standardizer(s, x):
    """Scale a vector or matrix with a fitted standardizer."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != s.means.shape[0]:
        raise ShapeError(
            f"feature length {x.shape[-1]} != fitted {s.means.shape[0]}")
    out = (x - s.means) / s.stds
    if x.ndim == 1:
        out[s.zero_variance_flags] = 0.0
    else:
        out[:, s.zero_variance_flags] = 0.0
    return out


def fit_pca(X_std, r):
    """Top-r principal axes of standardized data via SVD.

    Eigenvalues are those of the sample covariance (1/(N-1) scaling); the
    explained-variance ratio is taken against the total variance over all
    axes. Each component's largest-magnitude entry is made positive so the
    decomposition is deterministic.
    """
    X = np.asarray(X_std, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("expected a 2D data matrix")
    n, f = X.shape
    if not 1 <= r <= min(f, n - 1):
        raise ParameterError(
            f"r={r} outside 1..min(F={f}, N-1={n - 1})")
    Xc = X - X.mean(axis=0)
    _, svals, vt = np.linalg.svd(Xc, full_matrices=False)
    eig_all = svals**2 / (n - 1)
    components = vt[:r].copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    total = float(eig_all.sum())
    ratio = eig_all[:r] / total if total > 0 else np.zeros(r)
    return PcaModel(components=components, eigenvalues=eig_all[:r].copy(),
                    r=r, explained_variance_ratio=ratio)


def project(model, x_std):
    """Project one standardized vector onto the principal axes."""
    x = np.asarray(x_std, dtype=np.float64)
    if x.shape != (model.components.shape[1],):
        raise ShapeError(
            f"vector length {x.shape} != fitted {model.components.shape[1]}")
    return ReducedVector(values=model.components @ x,
                         model_hash=model.checksum())


def project_matrix(model, X_std):
    """Project N standardized vectors at once; returns an (N, R) array."""
    X = np.asarray(X_std, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.components.shape[1]:
        raise ShapeError("matrix width does not match the fitted model")
    return X @ model.components.T


def save_model(path, standardizer, model):
    """Write standardizer + PCA model: JSON header, then the raw component
    matrix as little-endian float64 rows."""
    header = {
        "format": "reduce-model",
        "version": 1,
        "r": int(model.r),
        "f": int(model.components.shape[1]),
        "eigenvalues": [float(v) for v in model.eigenvalues],
        "explained_variance_ratio": [float(v) for v in model.explained_variance_ratio],
        "means": [float(v) for v in standardizer.means],
        "stds": [float(v) for v in standardizer.stds],
        "zero_variance_flags": [bool(v) for v in standardizer.zero_variance_flags],
        "checksum": model.checksum(),
    }
    blob = json.dumps(header).encode() + b"\n"
    matrix = np.ascontiguousarray(model.components, dtype="<f8").tobytes()
    Path(path).write_bytes(_MAGIC + blob + matrix)
    return Path(path)


def load_model(path):
    """Read a model file back; returns (Standardizer, PcaModel)."""
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ParameterError(f"{path} is not a reduction model file")
    body = data[len(_MAGIC):]
    nl = body.index(b"\n")
    try:
        header = json.loads(body[:nl])
    except json.JSONDecodeError as exc:
        raise ParameterError(f"corrupt model header in {path}") from exc
    if header.get("format") != "reduce-model" or header.get("version") != 1:
        raise ParameterError(f"unsupported model format in {path}")
    r, f = header["r"], header["f"]
    matrix = body[nl + 1:]
    if len(matrix) != r * f * 8:
        raise ParameterError(
            f"component matrix in {path} has {len(matrix)} bytes, "
            f"expected {r * f * 8}")
    components = np.frombuffer(matrix, dtype="<f8").reshape(r, f).copy()
    model = PcaModel(
        components=components,
        eigenvalues=np.array(header["eigenvalues"], dtype=np.float64),
        r=r,
        explained_variance_ratio=np.array(
            header["explained_variance_ratio"], dtype=np.float64),
    )
    if model.checksum() != header.get("checksum"):
        raise ParameterError(f"model checksum mismatch in {path}")
    s = Standardizer(
        means=np.array(header["means"], dtype=np.float64),
        stds=np.array(header["stds"], dtype=np.float64),
        zero_variance_flags=np.array(header["zero_variance_flags"], dtype=bool),
    )
    return s, model
