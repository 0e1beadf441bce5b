"""Pool-based active learning with margin-based uncertainty sampling.

The loop labels a seeded random starter set, fits the standardize/project/
classify pipeline on the labeled pool, scores the unlabeled pool by the
margin between the two most probable classes, and repeatedly queries the
most ambiguous datasets until a target accuracy, a query budget, or pool
exhaustion stops it. A random-query baseline shares the loop so the two
variants differ only in how queries are chosen.
"""

import dataclasses
import json
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from . import mlp as mlp_mod
from . import svm as svm_mod
from .corpus import N_CLASSES, validate_class
from .errors import ParameterError, TrainingError
from .features import build_manifest, assemble_feature_vector
from .reduction import (apply_standardizer, fit_pca, fit_standardizer,
                        project_matrix)
from .segmentation import segment_volume

_SUM_TOL = 1e-6
_STATE_VERSION = 1

DEFAULT_C_GRID_COARSE = (2.0**-1, 2.0**3, 2.0**7, 2.0**11)
DEFAULT_GAMMA_GRID_COARSE = (2.0**-13, 2.0**-10, 2.0**-7, 2.0**-4)


@dataclass(frozen=True)
class ActiveLearningConfig:
    """Operating point of one learning run.

    `svm_c`/`svm_gamma` pin the kernel machine directly; leaving them None
    triggers a grid search at the initial fit whose winner is then frozen
    for every later refit. `mlp` overrides the network configuration (its
    input width is adjusted to the projection dimension automatically).
    """

    n_initial: int = 200
    query_size: int = 40
    max_queries: int | None = None
    target_accuracy: float = 0.90
    classifier: str = "svm"
    aggregation: str = "mean_margin"
    r: int = 45
    seed: int = 0
    svm_c: float | None = None
    svm_gamma: float | None = None
    svm_c_grid: tuple = DEFAULT_C_GRID_COARSE
    svm_gamma_grid: tuple = DEFAULT_GAMMA_GRID_COARSE
    grid_folds: int = 3
    mlp: mlp_mod.MlpConfig | None = None

    def __post_init__(self):
        if self.n_initial < N_CLASSES:
            raise ParameterError(
                f"n_initial must be >= {N_CLASSES} so every class can appear")
        if self.query_size < 1:
            raise ParameterError("query_size must be >= 1")
        if self.max_queries is not None and self.max_queries < 0:
            raise ParameterError("max_queries must be >= 0")
        if self.target_accuracy <= 0:
            raise ParameterError("target_accuracy must be > 0")
        if self.classifier not in ("svm", "mlp"):
            raise ParameterError(f"unknown classifier {self.classifier!r}")
        if self.aggregation not in ("mean_margin", "min_margin"):
            raise ParameterError(f"unknown aggregation {self.aggregation!r}")
        if self.r < 1:
            raise ParameterError("r must be >= 1")

    def fingerprint(self):
        return {
            "n_initial": self.n_initial,
            "query_size": self.query_size,
            "max_queries": self.max_queries,
            "target_accuracy": self.target_accuracy,
            "classifier": self.classifier,
            "aggregation": self.aggregation,
            "r": self.r,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class UncertaintyScore:
    dataset_id: str
    margin: float


@dataclass
class LearningCurve:
    """(labeled count, test accuracy, unix timestamp) per completed fit."""

    points: list = field(default_factory=list)
    reached_target_at: int | None = None


@dataclass
class FittedPipeline:
    """Standardizer + projection + classifier trained on one labeled pool."""

    standardizer: object
    pca: object
    kind: str
    model: object
    classes: tuple
    model_r: int
    hyperparams: tuple | None = None


def slice_margin(proba):
    """Margin between the two most probable classes of one slice.

    The vector must be a probability distribution (entries in [0, 1]
    summing to 1 within 1e-6); anything else is a hard error because it
    means the calibration upstream is broken.
    """
    p = np.asarray(proba, dtype=np.float64)
    if p.ndim != 1 or p.size < 2:
        raise ParameterError("probability vector must be 1D with >= 2 entries")
    if not np.isfinite(p).all():
        raise ParameterError("probability vector must be finite")
    if p.min() < -_SUM_TOL or p.max() > 1.0 + _SUM_TOL:
        raise ParameterError("probability entries must lie in [0, 1]")
    if abs(p.sum() - 1.0) > _SUM_TOL:
        raise ParameterError(f"probabilities sum to {p.sum():.8f}, not 1")
    top = np.sort(p)[::-1]
    return float(min(max(top[0] - top[1], 0.0), 1.0))


def aggregate_margins(margins, aggregation):
    """Collapse per-slice margins into one dataset-level ambiguity score."""
    m = np.asarray(margins, dtype=np.float64)
    if m.size == 0:
        raise ParameterError("cannot aggregate an empty margin list")
    if aggregation == "mean_margin":
        return float(m.mean())
    if aggregation == "min_margin":
        return float(m.min())
    raise ParameterError(f"unknown aggregation {aggregation!r}")


def order_queries(scores, q):
    """The q most ambiguous dataset ids, ascending margin, ties by id."""
    ranked = sorted(scores, key=lambda i: (scores[i], i))
    return ranked[: max(int(q), 0)]


def dataset_vote(slice_classes):
    """Majority vote over slice classes; ties go to the more severe class."""
    preds = [int(c) for c in slice_classes]
    if not preds:
        raise ParameterError("cannot vote over zero slices")
    counts = {}
    for c in preds:
        counts[c] = counts.get(c, 0) + 1
    best = max(counts.values())
    return max(c for c, n in counts.items() if n == best)


def extract_features(db, ids=None, seg_config=None, manifest=None,
                     progress=None):
    """Per-slice feature matrices for each volume: id -> (n_slices, F).

    Segmentation and feature extraction are label-free, so this runs once
    up front and every loop iteration works in feature space.
    """
    manifest = manifest or build_manifest()
    ids = sorted(db.volumes) if ids is None else list(ids)
    out = {}
    for n, vid in enumerate(ids):
        vol = db.volumes[vid]
        masks = segment_volume(vol, seg_config)
        rows = []
        for k, mask in enumerate(masks):
            fv = assemble_feature_vector(vol.voxels[k], mask.pixels, manifest,
                                         source=(vid, k))
            rows.append(fv.values)
        out[vid] = np.asarray(rows, dtype=np.float64)
        if progress is not None:
            progress(n + 1, len(ids), vid)
    return out


def _labeled_matrix(features, labeled):
    """Stack labeled per-slice features; dataset labels broadcast to slices."""
    xs, ys = [], []
    for vid in sorted(labeled):
        block = features[vid]
        xs.append(block)
        ys.extend([labeled[vid]] * block.shape[0])
    return np.vstack(xs), np.asarray(ys, dtype=int)


def fit_pipeline(features, labeled, cfg, frozen=None):
    """Fit standardizer, projection, and classifier on the labeled pool.

    The projection rank is clamped to what the pool supports. A kernel
    machine trained while some classes are still unseen covers only the
    present classes; `pipeline_probas` pads the missing ones with zeros.
    """
    if not labeled:
        raise TrainingError("cannot fit on an empty labeled pool")
    X, y = _labeled_matrix(features, labeled)
    standardizer = fit_standardizer(X)
    Xs = apply_standardizer(standardizer, X)
    r_eff = int(min(cfg.r, X.shape[1], X.shape[0] - 1))
    pca = fit_pca(Xs, r_eff)
    Z = project_matrix(pca, Xs)
    classes = tuple(sorted(set(int(c) for c in y)))
    hyper = frozen
    if cfg.classifier == "svm":
        if len(classes) < 2:
            raise TrainingError("need at least two labeled classes")
        remap = {c: i + 1 for i, c in enumerate(classes)}
        y_sub = np.array([remap[int(c)] for c in y])
        if cfg.svm_c is not None and cfg.svm_gamma is not None:
            hyper = (float(cfg.svm_c), float(cfg.svm_gamma))
        elif hyper is None:
            c_best, g_best, _ = svm_mod.grid_search_cv(
                Z, y_sub, cfg.svm_c_grid, cfg.svm_gamma_grid,
                folds=cfg.grid_folds, seed=cfg.seed, k=len(classes))
            hyper = (c_best, g_best)
        model = svm_mod.train_ovo(
            Z, y_sub, svm_mod.SvmConfig(c=hyper[0], gamma=hyper[1]),
            k=len(classes))
    else:
        base = cfg.mlp or mlp_mod.MlpConfig()
        sizes = (r_eff,) + tuple(base.layer_sizes[1:-1]) + (N_CLASSES,)
        if base.layer_sizes != sizes:
            base = dataclasses.replace(base, layer_sizes=sizes)
        model = mlp_mod.init_model(base)
        # normalize the overall magnitude of the projected coordinates so
        # the first ADAM steps are well conditioned; relative variances are
        # kept (full whitening would amplify the noisy tail directions)
        model.input_scale = np.full(
            r_eff, 1.0 / np.sqrt(max(float(pca.eigenvalues.mean()), 1e-12)))
        model = mlp_mod.train_adam(model, (Z, y), base)
        classes = tuple(range(1, N_CLASSES + 1))
    return FittedPipeline(standardizer=standardizer, pca=pca,
                          kind=cfg.classifier, model=model, classes=classes,
                          model_r=r_eff, hyperparams=hyper)


def _reduce(pipe, block):
    Xs = apply_standardizer(pipe.standardizer, np.asarray(block, dtype=np.float64))
    return project_matrix(pipe.pca, Xs)


def pipeline_probas(pipe, block):
    """Per-slice class probabilities over all classes, rows summing to 1."""
    Z = _reduce(pipe, block)
    if pipe.kind == "svm":
        sub = svm_mod.predict_probas(pipe.model, Z)
        out = np.zeros((Z.shape[0], N_CLASSES))
        for col, cls in enumerate(pipe.classes):
            out[:, cls - 1] = sub[:, col]
        return out
    return mlp_mod.predict_probas(pipe.model, Z)


def pipeline_slice_classes(pipe, block):
    """Native per-slice class predictions mapped back to 1..K labels."""
    Z = _reduce(pipe, block)
    if pipe.kind == "svm":
        sub = svm_mod.predict_classes(pipe.model, Z)
        return [pipe.classes[int(c) - 1] for c in sub]
    return [int(c) for c in mlp_mod.predict_classes(pipe.model, Z)]


def predict_dataset(pipe, block):
    """Dataset class: majority vote over slices, ties to the severe side."""
    return dataset_vote(pipeline_slice_classes(pipe, block))


def evaluate_accuracy(pipe, features, db, ids):
    """Dataset-level accuracy against the fused reference labels."""
    ids = list(ids)
    if not ids:
        raise ParameterError("cannot evaluate on an empty id list")
    hits = sum(predict_dataset(pipe, features[v]) == db.reference_labels[v]
               for v in ids)
    return hits / len(ids)


def pool_margins(pipe, features, pool_ids, aggregation):
    """Aggregated ambiguity score for every dataset in the pool."""
    scores = {}
    for vid in pool_ids:
        margins = [slice_margin(p) for p in pipeline_probas(pipe, features[vid])]
        scores[vid] = aggregate_margins(margins, aggregation)
    return scores


def select_query_set(pipe, features, pool_ids, q, aggregation="mean_margin"):
    """The q pool datasets the classifier is least sure about.

    Ascending aggregated margin, ties broken by dataset id; q larger than
    the pool returns the whole pool, and an empty pool returns the empty
    list (the caller's signal that labeling is complete).
    """
    pool_ids = list(pool_ids)
    if not pool_ids:
        return []
    scores = pool_margins(pipe, features, pool_ids, aggregation)
    return order_queries(scores, q)


def score_query_set(pipe, features, pool_ids, q, aggregation="mean_margin"):
    """Like select_query_set but returns UncertaintyScore records."""
    scores = pool_margins(pipe, features, list(pool_ids), aggregation)
    return [UncertaintyScore(i, scores[i]) for i in order_queries(scores, q)]


class OracleLabeler:
    """Replays the fused reference labels; stands in for a human rater."""

    def __init__(self, db):
        self.db = db

    def __call__(self, ids):
        return {i: self.db.reference_labels[i] for i in ids}


def _atomic_write_json(path, payload):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(payload, f)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


class _RunState:
    """Loop bookkeeping that survives labeler failures via a JSON file."""

    def __init__(self, cfg, strategy, path=None):
        self.cfg = cfg
        self.strategy = strategy
        self.path = path
        self.curve = LearningCurve()
        self.iteration = 0
        self.pending = None
        self.frozen = None
        self.labeled = {}

    def persist(self):
        if self.path is None:
            return
        payload = {
            "version": _STATE_VERSION,
            "strategy": self.strategy,
            "config": self.cfg.fingerprint(),
            "labeled": self.labeled,
            "curve": [list(p) for p in self.curve.points],
            "reached": self.curve.reached_target_at,
            "iteration": self.iteration,
            "pending": self.pending,
            "frozen": list(self.frozen) if self.frozen else None,
        }
        _atomic_write_json(self.path, payload)

    def try_resume(self):
        if self.path is None or not os.path.exists(self.path):
            return False
        with open(self.path) as f:
            payload = json.load(f)
        if payload.get("version") != _STATE_VERSION:
            raise ParameterError("unrecognized run-state version")
        if payload.get("strategy") != self.strategy:
            raise ParameterError("saved state belongs to a different strategy")
        if payload.get("config") != self.cfg.fingerprint():
            raise ParameterError("saved state was produced by a different run "
                                 "configuration")
        self.labeled = {k: int(v) for k, v in payload["labeled"].items()}
        self.curve.points = [tuple(p) for p in payload["curve"]]
        self.curve.reached_target_at = payload["reached"]
        self.iteration = int(payload["iteration"])
        self.pending = payload["pending"]
        self.frozen = tuple(payload["frozen"]) if payload["frozen"] else None
        return True


def _ask_labeler(state, db, labeler, ids):
    """Persist the pending query, call the labeler, record the answers.

    The state file is written before the call so a labeler failure (for
    example a human walking away from the labeling server) loses nothing:
    rerunning with the same state path replays the exact pending query.
    """
    state.pending = list(ids)
    state.persist()
    answers = labeler(list(ids))
    for vid in ids:
        cls = int(answers[vid])
        validate_class(cls)
        db.mark_labeled(vid, cls)
        state.labeled[vid] = cls
    state.pending = None
    state.persist()


def _run_loop(db, cfg, labeler, features, state_path, strategy,
              on_point=None):
    if db.splits is None:
        raise ParameterError("database needs splits before a learning run")
    if features is None:
        features = extract_features(db)
    state = _RunState(cfg, strategy, state_path)
    resumed = state.try_resume()
    if resumed:
        for vid, cls in state.labeled.items():
            if vid not in db.labeled:
                db.mark_labeled(vid, cls)
        if state.pending:
            was_initial_draw = not state.labeled
            _ask_labeler(state, db, labeler, list(state.pending))
            if not was_initial_draw:
                state.iteration += 1
    else:
        rng = np.random.default_rng([cfg.seed, 101])
        pool = sorted(db.unlabeled)
        n_init = min(cfg.n_initial, len(pool))
        first = [pool[i] for i in rng.choice(len(pool), size=n_init,
                                             replace=False)]
        _ask_labeler(state, db, labeler, sorted(first))
    test_ids = list(db.splits.test)

    while True:
        db.check_pools()
        pipe = fit_pipeline(features, state.labeled, cfg, frozen=state.frozen)
        state.frozen = pipe.hyperparams
        acc = evaluate_accuracy(pipe, features, db, test_ids)
        point = (len(state.labeled), acc, time.time())
        state.curve.points.append(point)
        if on_point is not None:
            on_point(*point)
        if acc >= cfg.target_accuracy and state.curve.reached_target_at is None:
            state.curve.reached_target_at = len(state.labeled)
            state.persist()
            break
        if cfg.max_queries is not None and state.iteration >= cfg.max_queries:
            state.persist()
            break
        if not db.unlabeled:
            state.persist()
            break
        if strategy == "uncertainty":
            query = select_query_set(pipe, features, sorted(db.unlabeled),
                                     cfg.query_size, cfg.aggregation)
        else:
            rng = np.random.default_rng([cfg.seed, 202, state.iteration])
            pool = sorted(db.unlabeled)
            take = min(cfg.query_size, len(pool))
            query = [pool[i] for i in rng.choice(len(pool), size=take,
                                                 replace=False)]
        _ask_labeler(state, db, labeler, query)
        state.iteration += 1
    db.check_pools()
    return state.curve


def run_active_learning(db, cfg, labeler, features=None, state_path=None,
                        on_point=None):
    """Uncertainty-sampling loop; returns the learning curve.

    Each iteration refits the pipeline on the labeled pool, records test
    accuracy, and queries the `query_size` most ambiguous unlabeled
    datasets, stopping at the accuracy target, the query budget, or pool
    exhaustion. With `state_path` set, progress survives labeler failures
    and a rerun resumes without repeating a single label.
    """
    return _run_loop(db, cfg, labeler, features, state_path, "uncertainty",
                     on_point)


def run_random_baseline(db, cfg, labeler, features=None, state_path=None,
                        on_point=None):
    """Same loop and schedule with seeded random queries instead."""
    return _run_loop(db, cfg, labeler, features, state_path, "random",
                     on_point)
