"""Feedforward classifier trained from scratch with backpropagation.

The network stacks fully connected layers with ELU hidden activations and
a softmax output, minimizing mean cross-entropy plus an L2 penalty on the
weight matrices (biases unpenalized). Optimization is mini-batch ADAM with
bias correction; inverted dropout regularizes the hidden layers during
training only. A finite-difference gradient check validates the analytic
backward pass, and CV tuning searches the dropout/L2 grid with the same
stratified folds and tie rules as the SVM grid search.
"""

import copy
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ParameterError, ShapeError, TrainingError
from .svm import stratified_folds

DEFAULT_DROPOUT_GRID = (0.3, 0.35, 0.4, 0.45, 0.5)
FINE_DROPOUT_GRID = tuple(round(0.3 + 0.01 * i, 2) for i in range(21))
DEFAULT_L2_GRID = (1e-5, 1e-4, 1e-3, 1e-2)
FINE_L2_GRID = (1e-5, 2e-5, 5e-5, 1e-4, 2e-4, 5e-4, 1e-3, 2e-3, 5e-3, 1e-2)

_MAGIC = b"ALQA-MLP\n"
_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class MlpConfig:
    """Architecture and optimizer settings."""

    layer_sizes: tuple = (45, 140, 120, 120, 5)
    learning_rate: float = 0.001
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.99
    epsilon: float = 1e-8
    dropout: float = 0.4
    l2: float = 1e-4
    epochs: int = 300
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(self.layer_sizes))
        if len(self.layer_sizes) < 2 or any(s < 1 for s in self.layer_sizes):
            raise ParameterError("layer_sizes needs >= 2 positive entries")
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError("dropout must be in [0, 1)")
        if self.l2 < 0 or self.learning_rate < 0:
            raise ParameterError("l2 and learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ParameterError("batch_size >= 1 and epochs >= 0 required")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ParameterError("beta1 and beta2 must be in [0, 1)")


@dataclass
class MlpModel:
    """Weight matrices (out x in) and bias vectors per layer, plus logs."""

    weights: list
    biases: list
    config: MlpConfig
    training_log: list = field(default_factory=list)
    validation_log: list = field(default_factory=list)
    best_val_accuracy: float = None
    input_scale: np.ndarray = None  # optional per-dimension input rescaling


def elu(z):
    """v for v >= 0, exp(v) - 1 below."""
    z = np.asarray(z, dtype=np.float64)
    return np.where(z >= 0, z, np.expm1(np.minimum(z, 0.0)))


def _elu_prime(z):
    return np.where(z >= 0, 1.0, np.exp(np.minimum(z, 0.0)))


def _softmax(z):
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def init_model(cfg):
    """He-style initialization: W ~ N(0, 2/fan_in), biases zero."""
    rng = np.random.default_rng(cfg.seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(cfg.layer_sizes, cfg.layer_sizes[1:]):
        weights.append(rng.normal(0.0, math.sqrt(2.0 / fan_in),
                                  size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights=weights, biases=biases, config=cfg)


def _forward_cache(model, X, train_mode, rng):
    """All layer pre-activations and activations; dropout masks if training."""
    n_layers = len(model.weights)
    dropout = model.config.dropout if train_mode else 0.0
    a = X if model.input_scale is None else X * model.input_scale
    zs, activations, masks = [], [a], []
    for idx, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ W.T + b
        zs.append(z)
        if idx < n_layers - 1:
            a = elu(z)
            if dropout > 0.0:
                keep = 1.0 - dropout
                mask = (rng.random(a.shape) < keep) / keep
                a = a * mask
                masks.append(mask)
            else:
                masks.append(None)
            activations.append(a)
        else:
            a = _softmax(z)
            activations.append(a)
    return zs, activations, masks


def forward(model, x, train_mode=False, rng=None):
    """Class probabilities for one input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.config.layer_sizes[0],):
        raise ShapeError(
            f"input length {x.shape} != {model.config.layer_sizes[0]}")
    if not np.all(np.isfinite(x)):
        raise ParameterError("forward pass requires finite inputs")
    if train_mode and rng is None:
        rng = np.random.default_rng(model.config.seed)
    _, activations, _ = _forward_cache(model, x[None, :], train_mode, rng)
    return activations[-1][0]


def preactivations(model, x, train_mode=False, rng=None):
    """Final-layer pre-activation (logits) for one input vector."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ParameterError("forward pass requires finite inputs")
    if train_mode and rng is None:
        rng = np.random.default_rng(model.config.seed)
    zs, _, _ = _forward_cache(model, x[None, :], train_mode, rng)
    return zs[-1][0]


def _cross_entropy(probs, Y):
    p = np.clip(probs, _PROB_FLOOR, 1.0)
    return float(-(Y * np.log(p)).sum() / Y.shape[0])


def _l2_term(model):
    return 0.5 * model.config.l2 * sum(float((w**2).sum())
                                       for w in model.weights)


def loss(model, batch):
    """Mean cross-entropy plus (l2/2) * sum ||W||^2 over weight matrices."""
    X, Y = batch
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    _, activations, _ = _forward_cache(model, X, False, None)
    return _cross_entropy(activations[-1], Y) + _l2_term(model)


def _gradients(model, X, Y, train_mode=False, rng=None):
    """Backpropagated gradients of `loss` for one batch.

    Returns (weight grads, bias grads, batch cross-entropy).
    """
    zs, activations, masks = _forward_cache(model, X, train_mode, rng)
    n = X.shape[0]
    probs = activations[-1]
    delta = (probs - Y) / n
    gw = [None] * len(model.weights)
    gb = [None] * len(model.biases)
    for idx in reversed(range(len(model.weights))):
        gw[idx] = delta.T @ activations[idx] + model.config.l2 * model.weights[idx]
        gb[idx] = delta.sum(axis=0)
        if idx > 0:
            da = delta @ model.weights[idx]
            if masks[idx - 1] is not None:
                da = da * masks[idx - 1]
            delta = da * _elu_prime(zs[idx - 1])
    return gw, gb, _cross_entropy(probs, Y)


def adam_init(shapes):
    """First/second moment accumulators for a list of parameter shapes."""
    return {
        "m": [np.zeros(s) for s in shapes],
        "v": [np.zeros(s) for s in shapes],
    }


def adam_update(state, grads, cfg, t):
    """Bias-corrected ADAM deltas for step t >= 1; state is updated in place.

    delta = -lr * m_hat / (sqrt(v_hat) + eps * sqrt(1 - beta2^t)), so the
    first step with gradient g is -lr * g / (|g| + eps * sqrt(1 - beta2)).
    """
    deltas = []
    eps_t = cfg.epsilon * math.sqrt(1.0 - cfg.beta2**t)
    for m, v, g in zip(state["m"], state["v"], grads):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g**2
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        deltas.append(-cfg.learning_rate * m_hat / (np.sqrt(v_hat) + eps_t))
    return deltas


def _labels_to_onehot(y, k):
    y = np.asarray(y, dtype=int)
    if y.min() < 1 or y.max() > k:
        raise ParameterError(f"labels must lie in 1..{k}")
    return np.eye(k)[y - 1]


def train_adam(model, data, cfg=None, val_data=None):
    """Train for cfg.epochs epochs of shuffled mini-batches.

    Logs the mean training loss per epoch; with validation data, evaluates
    accuracy each epoch and returns the parameters of the best epoch.
    Aborts with a diagnostic if the loss goes non-finite.
    """
    cfg = cfg or model.config
    X, y = data
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise TrainingError("training data is empty")
    k = cfg.layer_sizes[-1]
    Y = _labels_to_onehot(y, k)
    out = MlpModel(weights=[w.copy() for w in model.weights],
                   biases=[b.copy() for b in model.biases],
                   config=cfg, input_scale=model.input_scale)
    rng = np.random.default_rng(cfg.seed)
    shapes = [w.shape for w in out.weights] + [b.shape for b in out.biases]
    state = adam_init(shapes)
    t = 0
    best_acc = -1.0
    best_params = None
    for epoch in range(cfg.epochs):
        order = rng.permutation(X.shape[0])
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            gw, gb, ce = _gradients(out, X[idx], Y[idx], train_mode=True,
                                    rng=rng)
            t += 1
            deltas = adam_update(state, gw + gb, cfg, t)
            for w, d in zip(out.weights, deltas[:len(gw)]):
                w += d
            for b, d in zip(out.biases, deltas[len(gw):]):
                b += d
            epoch_loss += ce * len(idx)
        epoch_loss = epoch_loss / X.shape[0] + _l2_term(out)
        if not math.isfinite(epoch_loss):
            raise TrainingError(
                f"training diverged: non-finite loss at epoch {epoch + 1}")
        out.training_log.append(epoch_loss)
        if val_data is not None:
            Xv, yv = val_data
            acc = float((predict_classes(out, Xv) == np.asarray(yv)).mean())
            out.validation_log.append(acc)
            if acc > best_acc:
                best_acc = acc
                best_params = ([w.copy() for w in out.weights],
                               [b.copy() for b in out.biases])
    if best_params is not None:
        out.weights, out.biases = best_params
        out.best_val_accuracy = best_acc
    return out


def predict_probas(model, X):
    """Class probabilities per row of X; rows sum to 1."""
    X = np.asarray(X, dtype=np.float64)
    _, activations, _ = _forward_cache(model, X, False, None)
    return activations[-1]


def predict_classes(model, X):
    """argmax class labels in 1..K per row of X."""
    return np.argmax(predict_probas(model, X), axis=1) + 1


def gradient_check(model, batch, h=1e-5, n_params=200, seed=0):
    """Max relative error between backprop and central finite differences.

    Samples at least n_params coordinates across all weights and biases
    (all of them if the model is smaller); dropout is off.
    """
    X, Y = batch
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    gw, gb, _ = _gradients(model, X, Y)
    analytic = gw + gb
    params = model.weights + model.biases
    sizes = [p.size for p in params]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    count = min(n_params, total)
    coords = rng.choice(total, size=count, replace=False)
    worst = 0.0
    for flat in coords:
        pi = 0
        while flat >= sizes[pi]:
            flat -= sizes[pi]
            pi += 1
        target = params[pi].ravel()
        orig = target[flat]
        target[flat] = orig + h
        up = loss(model, (X, Y))
        target[flat] = orig - h
        down = loss(model, (X, Y))
        target[flat] = orig
        numeric = (up - down) / (2.0 * h)
        ga = analytic[pi].ravel()[flat]
        rel = abs(ga - numeric) / max(abs(ga), abs(numeric), 1e-6)
        worst = max(worst, rel)
    return worst


def cv_tune_mlp(X, y, dropout_grid, l2_grid, folds=10, seed=0,
                layer_sizes=None, epochs=50, k=None):
    """Stratified CV accuracy argmax over the dropout/L2 grid.

    Ties prefer the smaller dropout, then the smaller l2. Returns
    (best MlpConfig, best accuracy).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    if len(dropout_grid) == 0 or len(l2_grid) == 0:
        raise ParameterError("hyperparameter grid must be non-empty")
    if folds < 2:
        raise ParameterError("cross-validation needs at least 2 folds")
    k = int(y.max()) if k is None else k
    if layer_sizes is None:
        layer_sizes = (X.shape[1], 140, 120, 120, k)
    min_count = min(int((y == c).sum()) for c in np.unique(y))
    if min_count < folds:
        warnings.warn(
            f"smallest class has {min_count} samples; reducing folds "
            f"from {folds} to {min_count}", stacklevel=2)
        folds = min_count
    if folds < 2:
        raise TrainingError("a class is too small for 2-fold stratification")
    fold_idx = stratified_folds(y, folds, seed)
    best = None
    for dropout in sorted(dropout_grid):
        for l2 in sorted(l2_grid):
            cfg = MlpConfig(layer_sizes=layer_sizes, dropout=dropout, l2=l2,
                            epochs=epochs, seed=seed)
            correct = 0
            for held in fold_idx:
                train = np.setdiff1d(np.arange(len(y)), held)
                trained = train_adam(init_model(cfg), (X[train], y[train]), cfg)
                correct += int((predict_classes(trained, X[held])
                                == y[held]).sum())
            acc = correct / len(y)
            if best is None or acc > best[1]:
                best = (cfg, acc)
    return best


def save_mlp(path, model):
    """Write the model: JSON header line + raw float64 parameter blobs."""
    blob = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes()
                    for p in model.weights + model.biases)
    cfg = model.config
    header = {
        "format": "mlp-model",
        "version": 1,
        "layer_sizes": list(cfg.layer_sizes),
        "learning_rate": cfg.learning_rate,
        "batch_size": cfg.batch_size,
        "beta1": cfg.beta1,
        "beta2": cfg.beta2,
        "epsilon": cfg.epsilon,
        "dropout": cfg.dropout,
        "l2": cfg.l2,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "training_log": model.training_log,
        "validation_log": model.validation_log,
        "best_val_accuracy": model.best_val_accuracy,
        "input_scale": None if model.input_scale is None
        else [float(v) for v in model.input_scale],
        "checksum": hashlib.sha256(blob).hexdigest(),
    }
    Path(path).write_bytes(_MAGIC + json.dumps(header).encode() + b"\n" + blob)
    return Path(path)


def load_mlp(path):
    """Read a model written by save_mlp."""
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ParameterError(f"{path} is not an MLP model file")
    body = data[len(_MAGIC):]
    nl = body.index(b"\n")
    try:
        header = json.loads(body[:nl])
    except json.JSONDecodeError as exc:
        raise ParameterError(f"corrupt model header in {path}") from exc
    if header.get("format") != "mlp-model" or header.get("version") != 1:
        raise ParameterError(f"unsupported model format in {path}")
    cfg = MlpConfig(
        layer_sizes=tuple(header["layer_sizes"]),
        learning_rate=header["learning_rate"],
        batch_size=header["batch_size"],
        beta1=header["beta1"],
        beta2=header["beta2"],
        epsilon=header["epsilon"],
        dropout=header["dropout"],
        l2=header["l2"],
        epochs=header["epochs"],
        seed=header["seed"],
    )
    blob = body[nl + 1:]
    if hashlib.sha256(blob).hexdigest() != header.get("checksum"):
        raise ParameterError(f"model checksum mismatch in {path}")
    sizes = cfg.layer_sizes
    weights, biases = [], []
    offset = 0
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        n = fan_out * fan_in * 8
        weights.append(np.frombuffer(blob[offset:offset + n], dtype="<f8")
                       .reshape(fan_out, fan_in).copy())
        offset += n
    for fan_out in sizes[1:]:
        n = fan_out * 8
        biases.append(np.frombuffer(blob[offset:offset + n], dtype="<f8").copy())
        offset += n
    scale = header.get("input_scale")
    model = MlpModel(weights=weights, biases=biases, config=cfg,
                     training_log=list(header["training_log"]),
                     validation_log=list(header["validation_log"]),
                     best_val_accuracy=header["best_val_accuracy"],
                     input_scale=None if scale is None else np.asarray(scale))
    return model
