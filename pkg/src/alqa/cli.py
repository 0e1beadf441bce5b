"""Command-line interface binding the corpus, segmentation, feature,
reduction, classifier, learning-loop, evaluation, and server modules.

Subcommands: corpus, segment, extract, reduce, train, al, eval, serve,
predict. Every subcommand works on the on-disk formats the library
defines (database directory, feature CSV + manifest, model files), so
each stage can be rerun or swapped independently.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import active, mlp as mlp_mod, svm as svm_mod
from .corpus import (CorpusConfig, N_CLASSES, generate_corpus, load_database,
                     load_volume, save_database, split_database)
from .errors import AlqaError, ParameterError
from .evaluation import build_report, feature_significance
from .features import (build_manifest, load_feature_table, save_feature_table)
from .reduction import (apply_standardizer, fit_pca, fit_standardizer,
                        load_model, project_matrix, save_model)
from .segmentation import save_masks, segment_volume


def _progress(stream):
    def report(done, total, vid):
        stream.write(f"\r  {done}/{total} {vid}        ")
        stream.flush()
        if done == total:
            stream.write("\n")
    return report


def _load_features(path, manifest=None):
    return load_feature_table(path, manifest)


def _train_matrix(db, features, split="train"):
    """Per-slice matrix and broadcast dataset labels for one split."""
    ids = list(getattr(db.splits, split))
    xs, ys = [], []
    for vid in ids:
        block = features[vid]
        xs.append(block)
        ys.extend([db.reference_labels[vid]] * block.shape[0])
    return np.vstack(xs), np.asarray(ys, dtype=int), ids


def cmd_corpus(args):
    if args.action == "generate":
        cfg = CorpusConfig(count=args.count, seed=args.seed)
        db = generate_corpus(cfg)
        save_database(db, args.out)
        print(f"wrote {len(db.volumes)} volumes to {args.out}")
    else:
        db = load_database(args.db)
        ratios = tuple(float(x) for x in args.ratios.split(","))
        split_database(db, ratios=ratios, seed=args.seed)
        save_database(db, args.db)
        s = db.splits
        print(f"split: train={len(s.train)} validation={len(s.validation)} "
              f"test={len(s.test)}")
    return 0


def cmd_segment(args):
    db = load_database(args.db)
    vol_dir = Path(args.db) / "volumes"
    for n, vid in enumerate(sorted(db.volumes)):
        masks = segment_volume(db.volumes[vid])
        if args.save_masks:
            save_masks(vol_dir / f"{vid}.masks.json", vid, masks)
        _progress(sys.stderr)(n + 1, len(db.volumes), vid)
    print(f"segmented {len(db.volumes)} volumes"
          + (" (masks saved)" if args.save_masks else ""))
    return 0


def cmd_extract(args):
    db = load_database(args.db)
    manifest = build_manifest()
    feats = active.extract_features(db, progress=_progress(sys.stderr))
    save_feature_table(args.out, feats, manifest)
    manifest_path = Path(args.out).with_name("manifest.json")
    manifest.save(manifest_path)
    n_rows = sum(b.shape[0] for b in feats.values())
    print(f"wrote {n_rows} slice rows x {len(manifest.entries)} features "
          f"to {args.out} (manifest: {manifest_path})")
    return 0


def cmd_reduce(args):
    feats = _load_features(args.features)
    X = np.vstack([feats[v] for v in sorted(feats)])
    standardizer = fit_standardizer(X)
    Xs = apply_standardizer(standardizer, X)
    model = fit_pca(Xs, args.r)
    save_model(args.out, standardizer, model)
    kept = float(np.sum(model.explained_variance_ratio))
    print(f"projection {X.shape[1]} -> {model.r} keeps {kept:.1%} variance "
          f"({args.out})")
    return 0


def cmd_train(args):
    db = load_database(args.db)
    feats = _load_features(args.features)
    standardizer, pca = load_model(args.pca)
    X, y, _ = _train_matrix(db, feats)
    Z = project_matrix(pca, apply_standardizer(standardizer, X))
    if args.classifier == "svm":
        if args.grid == "none":
            c, gamma = args.c, args.gamma
        else:
            c_grid = svm_mod.DEFAULT_C_GRID if args.grid == "default" \
                else active.DEFAULT_C_GRID_COARSE
            g_grid = svm_mod.DEFAULT_GAMMA_GRID if args.grid == "default" \
                else active.DEFAULT_GAMMA_GRID_COARSE
            c, gamma, acc = svm_mod.grid_search_cv(
                Z, y, c_grid, g_grid, folds=args.folds, seed=args.seed)
            print(f"grid search: C={c:g} gamma={gamma:g} "
                  f"(cv accuracy {acc:.3f})")
        model = svm_mod.train_ovo(Z, y, svm_mod.SvmConfig(c=c, gamma=gamma))
        svm_mod.save_ovo(args.out, model)
    else:
        cfg = mlp_mod.MlpConfig(
            layer_sizes=(Z.shape[1], 140, 120, 120, N_CLASSES),
            epochs=args.epochs, dropout=args.dropout, l2=args.l2,
            seed=args.seed)
        model = mlp_mod.init_model(cfg)
        Xv, yv, _ = _train_matrix(db, feats, "validation")
        Zv = project_matrix(pca, apply_standardizer(standardizer, Xv))
        model = mlp_mod.train_adam(model, (Z, y), cfg, val_data=(Zv, yv))
        print(f"best validation accuracy {model.best_val_accuracy:.3f}")
        mlp_mod.save_mlp(args.out, model)
    print(f"saved {args.classifier} model to {args.out}")
    return 0


def _write_curve_csv(path, curve):
    with open(path, "w") as f:
        f.write("n_labeled,accuracy\n")
        for n, acc, _ts in curve.points:
            f.write(f"{n},{acc:.6f}\n")


def cmd_al(args):
    db_template = args.db
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    feats = _load_features(args.features) if args.features else None
    if feats is None:
        db0 = load_database(db_template)
        feats = active.extract_features(db0, progress=_progress(sys.stderr))
    if args.labeler == "server":
        # a human answers queries over HTTP; one interactive run, no baseline
        from . import server as server_mod

        db = load_database(db_template)
        cfg = active.ActiveLearningConfig(
            n_initial=args.ni, query_size=args.q, target_accuracy=args.target,
            classifier=args.classifier, r=args.r, seed=0,
            max_queries=args.max_queries)
        service = server_mod.serve(db, cfg, features=feats,
                                   run_dir=out / "server_run")
        if service.curve is not None:
            _write_curve_csv(out / "curve_active_seed0.csv", service.curve)
        return 0
    summary = {"classifier": args.classifier, "target": args.target,
               "n_initial": args.ni, "query_size": args.q, "runs": []}
    for seed in range(args.seeds):
        run = {"seed": seed}
        for strategy, runner in (("active", active.run_active_learning),
                                 ("random", active.run_random_baseline)):
            db = load_database(db_template)
            db.labeled.clear()
            db.unlabeled = set(db.splits.train)
            cfg = active.ActiveLearningConfig(
                n_initial=args.ni, query_size=args.q,
                target_accuracy=args.target, classifier=args.classifier,
                r=args.r, seed=seed, max_queries=args.max_queries)
            curve = runner(db, cfg, active.OracleLabeler(db), features=feats)
            name = f"curve_{strategy}_seed{seed}.csv"
            _write_curve_csv(out / name, curve)
            run[strategy] = {
                "labels_to_target": curve.reached_target_at,
                "final_accuracy": curve.points[-1][1],
                "curve_csv": name,
            }
            print(f"seed {seed} {strategy}: "
                  f"target at {curve.reached_target_at} labels, "
                  f"final accuracy {curve.points[-1][1]:.3f}")
        a, r = run["active"]["labels_to_target"], run["random"]["labels_to_target"]
        run["label_reduction_pct"] = (
            None if a is None or r is None else round(100.0 * (r - a) / r, 2))
        summary["runs"].append(run)
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    print(f"summary: {out / 'summary.json'}")
    return 0


def _load_classifier(path):
    """Model files are self-describing; sniff which classifier this is."""
    with open(path, "rb") as f:
        magic = f.read(9)
    if magic == b"ALQA-MLP\n":
        return "mlp", mlp_mod.load_mlp(path)
    return "svm", svm_mod.load_ovo(path)


def _classifier_probas(kind, model, Z):
    if kind == "svm":
        return svm_mod.predict_probas(model, Z)
    return mlp_mod.predict_probas(model, Z)


def _classifier_classes(kind, model, Z):
    if kind == "svm":
        return svm_mod.predict_classes(model, Z)
    return mlp_mod.predict_classes(model, Z)


def _write_pgm(path, grid):
    """8-bit PGM of a [0, 1] matrix (binary P5 format)."""
    g = np.asarray(grid, dtype=float)
    img = np.rint(np.clip(g, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


def cmd_eval(args):
    db = load_database(args.db)
    feats = _load_features(args.features)
    standardizer, pca = load_model(args.pca)
    kind, model = _load_classifier(args.model)
    if kind == "svm" and model.k != N_CLASSES:
        raise ParameterError(f"model covers {model.k} classes, need {N_CLASSES}")
    y_true, y_pred, scores = [], [], []
    for vid in db.splits.test:
        Z = project_matrix(pca, apply_standardizer(standardizer, feats[vid]))
        slice_classes = _classifier_classes(kind, model, Z)
        y_pred.append(active.dataset_vote([int(c) for c in slice_classes]))
        scores.append(_classifier_probas(kind, model, Z).mean(axis=0))
        y_true.append(db.reference_labels[vid])
    report = build_report(y_true, y_pred, np.asarray(scores))
    payload = report.to_dict()
    Xt = np.vstack([feats[v] for v in db.splits.test])
    sig = feature_significance(Xt)
    payload["feature_significance"] = sig.to_dict()
    Path(args.out).write_text(json.dumps(payload, indent=1))
    stem = Path(args.out).with_suffix("")
    _write_pgm(f"{stem}_correlation.pgm", np.abs(sig.correlation))
    with open(f"{stem}_correlation.csv", "w") as f:
        for row in sig.correlation:
            f.write(",".join(f"{v:.6f}" for v in row) + "\n")
    print(f"test accuracy {report.accuracy:.3f} over {report.n_test} datasets"
          f" -> {args.out}")
    return 0


def cmd_serve(args):
    from . import server as server_mod

    db = load_database(args.db)
    cfg_fields = {}
    if args.config:
        cfg_fields = json.loads(Path(args.config).read_text())
    features = None
    features_path = args.features or cfg_fields.pop("features_csv", None)
    if features_path:
        features = _load_features(features_path)
    cfg = active.ActiveLearningConfig(**cfg_fields)
    host, port = args.host, args.port
    bind = os.environ.get("ALQA_BIND")
    if bind and args.host is None:
        host, _, p = bind.partition(":")
        port = int(p) if p else port
    server_mod.serve(db, cfg, features=features, run_dir=args.run_dir,
                     token=args.token, host=host or "127.0.0.1",
                     port=port, static_dir=args.static)
    return 0


def cmd_predict(args):
    standardizer, pca = load_model(args.pca)
    kind, model = _load_classifier(args.model)
    vol = load_volume(args.volume)
    feats = active.extract_features(
        _single_volume_db(vol), ids=[vol.volume_id])
    Z = project_matrix(pca, apply_standardizer(standardizer,
                                               feats[vol.volume_id]))
    slice_classes = [int(c) for c in _classifier_classes(kind, model, Z)]
    cls = active.dataset_vote(slice_classes)
    probas = _classifier_probas(kind, model, Z).mean(axis=0)
    result = {
        "volume_id": vol.volume_id,
        "class": cls,
        "slice_classes": slice_classes,
        "probabilities": {str(k + 1): round(float(p), 6)
                          for k, p in enumerate(probas)},
    }
    print(json.dumps(result, indent=1))
    return 0


def _single_volume_db(vol):
    from .corpus import TestCaseDatabase

    db = TestCaseDatabase()
    db.volumes[vol.volume_id] = vol
    return db


def build_parser():
    p = argparse.ArgumentParser(
        prog="alqa",
        description="reference-free image quality scoring with active labeling")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("corpus", help="generate or split the image database")
    cs = c.add_subparsers(dest="action", required=True)
    g = cs.add_parser("generate", help="synthesize a labeled database")
    g.add_argument("--count", type=int, default=900)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    s = cs.add_parser("split", help="assign train/validation/test splits")
    s.add_argument("--db", required=True)
    s.add_argument("--ratios", default="0.7,0.1,0.2")
    s.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_corpus)

    seg = sub.add_parser("segment", help="segment every volume")
    seg.add_argument("--db", required=True)
    seg.add_argument("--save-masks", action="store_true")
    seg.set_defaults(fn=cmd_segment)

    ex = sub.add_parser("extract", help="compute per-slice features")
    ex.add_argument("--db", required=True)
    ex.add_argument("--out", required=True)
    ex.set_defaults(fn=cmd_extract)

    rd = sub.add_parser("reduce", help="fit the projection model")
    rd.add_argument("--features", required=True)
    rd.add_argument("--r", type=int, default=45)
    rd.add_argument("--out", required=True)
    rd.set_defaults(fn=cmd_reduce)

    tr = sub.add_parser("train", help="train a classifier on the train split")
    tr.add_argument("classifier", choices=("svm", "mlp"))
    tr.add_argument("--db", required=True)
    tr.add_argument("--features", required=True)
    tr.add_argument("--pca", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--grid", choices=("default", "coarse", "none"),
                    default="coarse")
    tr.add_argument("--c", type=float, default=8.0)
    tr.add_argument("--gamma", type=float, default=0.125)
    tr.add_argument("--folds", type=int, default=3)
    tr.add_argument("--epochs", type=int, default=300)
    tr.add_argument("--dropout", type=float, default=0.4)
    tr.add_argument("--l2", type=float, default=1e-4)
    tr.add_argument("--seed", type=int, default=0)
    tr.set_defaults(fn=cmd_train)

    al = sub.add_parser("al", help="run the labeling loop")
    als = al.add_subparsers(dest="action", required=True)
    r = als.add_parser("run", help="active loop plus random baseline")
    r.add_argument("--db", required=True)
    r.add_argument("--classifier", choices=("svm", "mlp"), default="svm")
    r.add_argument("--labeler", choices=("oracle", "server"), default="oracle")
    r.add_argument("--ni", type=int, default=200)
    r.add_argument("--q", type=int, default=40)
    r.add_argument("--target", type=float, default=0.90)
    r.add_argument("--seeds", type=int, default=5)
    r.add_argument("--r", type=int, default=45)
    r.add_argument("--max-queries", type=int, default=None)
    r.add_argument("--features", default=None,
                   help="precomputed feature CSV (skips extraction)")
    r.add_argument("--out", required=True)
    al.set_defaults(fn=cmd_al)

    ev = sub.add_parser("eval", help="score a trained model on the test split")
    ev.add_argument("--model", required=True)
    ev.add_argument("--db", required=True)
    ev.add_argument("--features", required=True)
    ev.add_argument("--pca", required=True)
    ev.add_argument("--out", required=True)
    ev.set_defaults(fn=cmd_eval)

    sv = sub.add_parser("serve", help="start the HTTP labeling service")
    sv.add_argument("--db", required=True)
    sv.add_argument("--config", default=None,
                    help="JSON file of learning-loop settings")
    sv.add_argument("--features", default=None)
    sv.add_argument("--run-dir", default=None)
    sv.add_argument("--host", default=None)
    sv.add_argument("--port", type=int, default=8000)
    sv.add_argument("--token", default=None)
    sv.add_argument("--static", default=None,
                    help="directory of UI assets to serve at /")
    sv.set_defaults(fn=cmd_serve)

    pr = sub.add_parser("predict", help="score one volume with a saved model")
    pr.add_argument("--model", required=True)
    pr.add_argument("--pca", required=True)
    pr.add_argument("--volume", required=True)
    pr.set_defaults(fn=cmd_predict)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except AlqaError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
