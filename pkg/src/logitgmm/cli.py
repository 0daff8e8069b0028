"""Command-line front end.

Subcommands wire the library into reproducible file-to-file runs:
split-dataset, fit, score, eval, train-toy, report. Every output embeds
the tool version, the resolved parameter set and sha256 hashes of the
inputs. Exit codes: 0 ok, 1 usage/validation, 2 data problem, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__, dataset as ds, evaluation as ev, extraction as ex
from .errors import ContractViolation, DataError, NumericalError
from .gmm import EmConfig, GMMSet, fit_all, select_components
from .interchange import (
    DetectionSet,
    detection_set_to_dict,
    load_detections,
    load_scored_detections,
)
from .toytrain import (
    ToyHeadConfig,
    detections_from_logits,
    synthetic_openset_blobs,
    train_toy_head,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _meta(command: str, params: dict, inputs: dict) -> dict:
    return {
        "tool": f"logitgmm {__version__}",
        "command": command,
        "params": params,
        "input_hashes": {name: _sha256(path) for name, path in inputs.items()},
    }


def _write_json(doc: dict, path):
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise DataError(f"{path}: config must be a mapping")
    return doc


def _resolve(cli_value, config: dict, key: str, default):
    """CLI flag beats config file beats default."""
    if cli_value is not None:
        return cli_value
    if key in config:
        return config[key]
    return default


def _parse_components(text: str) -> list[int]:
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..", 1)
        counts = list(range(int(lo), int(hi) + 1))
    else:
        counts = [int(tok) for tok in text.split(",") if tok.strip()]
    if not counts or any(c < 1 for c in counts):
        raise ContractViolation(f"bad component counts {text!r}")
    return counts


# --- split-dataset -----------------------------------------------------


def _cmd_split_dataset(args) -> int:
    cfg = _load_config(args.config)
    known_prefix = _resolve(args.known_prefix, cfg, "known_prefix", None)
    known_classes = _resolve(args.known_classes, cfg, "known_classes", None)
    seed = _resolve(args.seed, cfg, "seed", 0)
    val_fraction = _resolve(args.val_fraction, cfg, "val_fraction", 0.2)
    if (known_prefix is None) == (known_classes is None):
        raise ContractViolation("give exactly one of --known-prefix / --known-classes")

    train = ds.load_coco(args.train)
    if known_prefix is not None:
        selector = int(known_prefix)
    elif isinstance(known_classes, str):
        selector = [c.strip() for c in known_classes.split(",")]
    else:
        selector = list(known_classes)
    known, unknown = ds.split_classes(train.category_names, selector)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    inputs = {"train": args.train}
    if args.val:
        inputs["val"] = args.val
    if args.test:
        inputs["test"] = args.test
    params = {"known_prefix": known_prefix, "known_classes": known_classes,
              "seed": seed, "val_fraction": val_fraction}
    meta = _meta("split-dataset", params, inputs)

    if args.val:
        train_part, val_part = train, ds.load_coco(args.val)
    else:
        train_part, val_part = ds.split_train_val(train, val_fraction, seed)

    filtered_train = ds.filter_images(train_part, unknown)
    filtered_val = ds.filter_images(val_part, unknown)
    ds.save_coco(filtered_train, out_dir / "train.json", meta=meta)
    ds.save_coco(filtered_val, out_dir / "val.json", meta=meta)

    counts = {
        "train_images": {"before": len(train_part.images), "after": len(filtered_train.images)},
        "val_images": {"before": len(val_part.images), "after": len(filtered_val.images)},
    }
    if args.test:
        test = ds.load_coco(args.test)
        filtered_test = ds.filter_images(test, unknown)
        ds.save_coco(filtered_test, out_dir / "test_closed.json", meta=meta)
        ds.save_coco(test, out_dir / "test_open.json", meta=meta)
        counts["test_images"] = {"before": len(test.images), "after": len(filtered_test.images)}

    ratio = ds.check_instance_ratio(train_part, filtered_train, known, train.category_names)
    manifest = {
        "known": known,
        "unknown": unknown,
        "seed": seed,
        "counts": counts,
        "instance_ratio": {"floor": ratio.floor, "ratios": ratio.ratios,
                           "flagged": ratio.flagged},
        "meta": meta,
    }
    _write_json(manifest, out_dir / "manifest.json")
    if ratio.flagged:
        print(f"warning: classes below the instance-ratio floor {ratio.floor:.3f}: "
              f"{', '.join(ratio.flagged)}", file=sys.stderr)
    print(f"split-dataset: {len(known)} known / {len(unknown)} unknown classes "
          f"-> {out_dir}")
    return EXIT_OK


# --- fit ----------------------------------------------------------------


def _known_gt(path, class_names):
    ann = ds.load_coco(path)
    return [gt for gt in ds.ground_truth_objects(ann, class_names) if gt.known_flag]


def _cmd_fit(args) -> int:
    cfg = _load_config(args.config)
    theta_iou = _resolve(args.theta_iou, cfg, "theta_iou", 0.6)
    theta_conf = _resolve(args.theta_conf, cfg, "theta_conf", 0.7)
    components = _parse_components(_resolve(args.components, cfg, "components", "1..6"))
    em = EmConfig(
        max_iterations=int(_resolve(args.max_iter, cfg, "max_iterations", 200)),
        convergence_tol=float(_resolve(args.tol, cfg, "convergence_tol", 1e-5)),
        covariance_regulariser=float(_resolve(args.reg, cfg, "covariance_regulariser", 1e-6)),
        n_restarts=int(_resolve(args.restarts, cfg, "n_restarts", 3)),
        seed=int(_resolve(args.seed, cfg, "seed", 0)),
    )

    det_set = load_detections(args.detections)
    gt = _known_gt(args.annotations, det_set.class_names)
    train_sets = ex.build_training_logit_sets(det_set.detections, gt, theta_iou, theta_conf)

    inputs = {"detections": args.detections, "annotations": args.annotations}
    if len(components) > 1:
        if args.val_detections:
            val_set = load_detections(args.val_detections)
            val_gt = _known_gt(args.val_annotations or args.annotations, val_set.class_names)
            inputs["val_detections"] = args.val_detections
            if args.val_annotations:
                inputs["val_annotations"] = args.val_annotations
        else:
            val_set, val_gt = det_set, gt
        correct, mis = ex.split_correct_misclassified(val_set.detections, val_gt)
        if not correct or not mis:
            raise DataError("component selection needs both correct and misclassified "
                            "validation detections; give --val-detections or a single count")
        selected, table = select_components(components, train_sets, correct, mis, em)
    else:
        selected, table = components[0], {}

    params = {
        "theta_iou": theta_iou, "theta_conf": theta_conf,
        "components": components, "selected_components": selected,
        "max_iterations": em.max_iterations, "convergence_tol": em.convergence_tol,
        "covariance_regulariser": em.covariance_regulariser,
        "n_restarts": em.n_restarts, "seed": em.seed,
    }
    meta = _meta("fit", params, inputs)
    meta["classes"] = det_set.class_names
    meta["selection_auroc"] = {str(k): v for k, v in table.items()}

    gmm_set = fit_all(train_sets, selected, em, metadata=meta)
    _write_json(gmm_set.to_dict(), args.out)

    if args.selection_report:
        _write_json({"selected": selected,
                     "per_count_auroc": {str(k): v for k, v in table.items()},
                     "meta": meta}, args.selection_report)
    print(f"fit: {gmm_set.n_classes} class models, {selected} components -> {args.out}")
    return EXIT_OK


# --- score --------------------------------------------------------------


def _cmd_score(args) -> int:
    with open(args.gmmset) as fh:
        gmm_set = GMMSet.from_dict(json.load(fh))
    det_set = load_detections(args.detections)
    if det_set.dim != gmm_set.dim:
        raise DataError(f"detections have {det_set.dim} classes but the GMMSet has {gmm_set.dim}")

    logits = np.stack([d.logits for d in det_set.detections]) if det_set.detections \
        else np.empty((0, gmm_set.dim))
    vectors = ex.uncertainty_vectors(gmm_set, logits)

    uncertainties = []
    n_accepted = 0
    for det, u in zip(det_set.detections, vectors):
        baselines = ev.baseline_uncertainties(det)
        rec = {
            "logliks": u.log_likelihoods.tolist(),
            "max_loglik": u.max_loglik,
            "argmax_class": u.argmax_class,
            "class_mismatch": ex.flag_class_mismatch(det, u),
            "score": baselines["score"],
            "entropy": baselines["entropy"],
        }
        if args.theta_ose is not None:
            rec["accepted"] = bool(u.max_loglik >= args.theta_ose)
            n_accepted += rec["accepted"]
        uncertainties.append(rec)

    params = {"theta_ose": args.theta_ose}
    meta = _meta("score", params, {"gmmset": args.gmmset, "detections": args.detections})
    if args.theta_ose is not None:
        meta["accepted"] = n_accepted
        meta["rejected"] = len(det_set.detections) - n_accepted
    out_set = DetectionSet(det_set.normalisation, det_set.class_names,
                           det_set.detections, meta=meta)
    _write_json(detection_set_to_dict(out_set, uncertainties), args.out)
    msg = f"score: {len(det_set.detections)} detections"
    if args.theta_ose is not None:
        msg += f", accepted {n_accepted}, rejected {len(det_set.detections) - n_accepted}"
    print(msg + f" -> {args.out}")
    return EXIT_OK


# --- eval ---------------------------------------------------------------


def _categorised_from_files(scored_path, annotations_path):
    det_set, uncertainties = load_scored_detections(scored_path)
    ann = ds.load_coco(annotations_path)
    gt = ds.ground_truth_objects(ann, det_set.class_names)
    gt_known = [g for g in gt if g.known_flag]
    gt_unknown = [g for g in gt if not g.known_flag]
    categorised = ev.categorise(det_set.detections, gt_known, gt_unknown)
    # baselines are pure functions of the stored scores; only the GMM value
    # has to come from the uncertainty block
    ev.attach_method_scores(categorised, [unc["max_loglik"] for unc in uncertainties])
    return categorised, gt_known


def _cmd_eval(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    categorised, gt_known = _categorised_from_files(args.scored, args.annotations)
    report = ev.evaluate(categorised, gt_known, methods=methods)

    params = {"methods": methods}
    meta = _meta("eval", params, {"scored": args.scored, "annotations": args.annotations})

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = report.to_dict()
    doc["meta"] = meta
    _write_json(doc, out_dir / f"{args.prefix}.json")
    ev.write_report_csv(report, out_dir / f"{args.prefix}.csv", meta=meta)
    for method in methods:
        ev.write_roc_csv(report.methods[method].curve,
                         out_dir / f"{args.prefix}_roc_{method}.csv", meta=meta)

    print(f"eval: {report.counts['total']} detections "
          f"(D_c {report.counts['D_c']}, D_CSE {report.counts['D_CSE']}, "
          f"D_OSE {report.counts['D_OSE']}) -> {out_dir / args.prefix}.json")
    for method in methods:
        print(f"  {method}: AUROC {report.methods[method].auroc:.4f}")
    return EXIT_OK


# --- train-toy ----------------------------------------------------------


def _toy_annotation_set(image_ids, labels, class_names):
    images = [{"id": img_id, "width": 1, "height": 1} for img_id in image_ids]
    annotations = [
        {"id": i, "image_id": img_id, "category_id": int(label), "bbox": [0.0, 0.0, 1.0, 1.0]}
        for i, (img_id, label) in enumerate(zip(image_ids, labels))
    ]
    categories = [{"id": i, "name": name} for i, name in enumerate(class_names)]
    return ds.AnnotationSet(images=images, annotations=annotations, categories=categories)


def run_toy_pipeline_data(cfg: dict):
    """Generate blobs, train the head, and assemble the interchange and
    annotation documents for the train/val/test splits. Returns a dict of
    in-memory artefacts; the CLI writes them to disk."""
    n_known = int(cfg.get("n_known", 10))
    n_unknown = int(cfg.get("n_unknown", 3))
    input_dim = int(cfg.get("input_dim", 16))
    n_per_class = int(cfg.get("n_per_class", 200))
    seed = int(cfg.get("seed", 0))
    spread = float(cfg.get("spread", 2.0))
    centre_scale = float(cfg.get("centre_scale", 2.0))
    unknown_radius = tuple(cfg.get("unknown_radius", (1.75, 2.25)))

    head_cfg = ToyHeadConfig(
        input_dim=input_dim,
        n_classes=n_known,
        hidden_dims=tuple(cfg.get("hidden_dims", [64])),
        lam=float(cfg.get("lambda", 0.1)),
        alpha=float(cfg.get("alpha", 10.0)),
        learning_rate=float(cfg.get("learning_rate", 0.05)),
        epochs=int(cfg.get("epochs", 100)),
        batch_size=int(cfg.get("batch_size", 64)),
        seed=seed,
        cls_loss=cfg.get("cls_loss", "cross_entropy"),
    )

    n_all = n_known + n_unknown
    x, y = synthetic_openset_blobs(n_known, n_unknown, input_dim, n_per_class,
                                   centre_scale, spread, unknown_radius, seed)
    class_names = [f"class{i:02d}" for i in range(n_all)]
    known_names = class_names[:n_known]

    # per-class 60/20/20 train/val/test split, deterministic
    rng = np.random.default_rng(seed + 1)
    split = np.empty(len(y), dtype="U5")
    for c in range(n_all):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        n_train, n_val = int(0.6 * len(idx)), int(0.2 * len(idx))
        split[idx[:n_train]] = "train"
        split[idx[n_train:n_train + n_val]] = "val"
        split[idx[n_train + n_val:]] = "test"

    known_mask = y < n_known
    train_idx = np.flatnonzero((split == "train") & known_mask)
    val_idx = np.flatnonzero((split == "val") & known_mask)
    test_idx = np.flatnonzero(split == "test")  # knowns and unknowns

    result = train_toy_head(x[train_idx], y[train_idx], head_cfg)

    artefacts = {"loss_curve": (result.epoch_mean_loss, result.epoch_mean_anchor),
                 "class_names": class_names, "known_names": known_names,
                 "head": result.head}
    for name, idx in (("train", train_idx), ("val", val_idx), ("test", test_idx)):
        logits = result.head.logits(x[idx])
        det_set = detections_from_logits(logits, "softmax", known_names,
                                         image_prefix=f"{name}")
        image_ids = [d.image_id for d in det_set.detections]
        ann = _toy_annotation_set(image_ids, y[idx], class_names)
        artefacts[name] = (det_set, ann)
    return artefacts


def _cmd_train_toy(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.lambda_weight is not None:
        cfg["lambda"] = args.lambda_weight
    if args.alpha is not None:
        cfg["alpha"] = args.alpha
    artefacts = run_toy_pipeline_data(cfg)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = _meta("train-toy", cfg, {"config": args.config})

    from .interchange import save_detections

    for name in ("train", "val", "test"):
        det_set, ann = artefacts[name]
        det_set.meta = meta
        save_detections(det_set, out_dir / f"{name}_detections.json")
        ds.save_coco(ann, out_dir / f"{name}_annotations.json", meta=meta)

    losses, anchors = artefacts["loss_curve"]
    with open(out_dir / "loss_curve.csv", "w", newline="") as fh:
        fh.write(f"# meta: {json.dumps(meta, sort_keys=True)}\n")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_combined_loss", "mean_anchor_loss"])
        for epoch, (loss, anchor) in enumerate(zip(losses, anchors)):
            writer.writerow([epoch, repr(loss), repr(anchor)])

    print(f"train-toy: {len(losses)} epochs, final loss {losses[-1]:.4f} -> {out_dir}")
    return EXIT_OK


# --- report -------------------------------------------------------------


def _cmd_report(args) -> int:
    with open(args.report) as fh:
        doc = json.load(fh)
    counts = doc.get("counts", {})
    print("detection counts:")
    for key in ("D_c", "D_CSE", "D_OSE", "total"):
        if key in counts:
            print(f"  {key:6s} {counts[key]}")
    if "map" in doc:
        print(f"mAP@0.5: {doc['map']['map_percent']:.2f}%")
    print(f"{'method':10s} {'AUROC':>8s}" + "".join(
        f" {'TPR@' + str(round(lvl * 100)) + '%':>10s}" for lvl in (0.05, 0.1, 0.2)))
    for name, rep in doc.get("methods", {}).items():
        by_level = {round(op["level"], 4): op["tpr"] for op in rep["tpr_at_osr"]}
        cells = "".join(f" {by_level.get(lvl, float('nan')):>10.4f}" for lvl in (0.05, 0.1, 0.2))
        print(f"{name:10s} {rep['auroc']:>8.4f}{cells}")
    return EXIT_OK


# --- wiring -------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="logitgmm", description=__doc__)
    parser.add_argument("--version", action="version", version=f"logitgmm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split-dataset", help="partition classes and filter unknown-class images")
    p.add_argument("--train", required=True, help="COCO-format training annotations")
    p.add_argument("--val", help="COCO-format validation annotations (default: hash split of train)")
    p.add_argument("--test", help="COCO-format test annotations (kept unfiltered for open-set eval)")
    p.add_argument("--known-prefix", type=int, help="first N classes in dataset order stay known")
    p.add_argument("--known-classes", help="comma-separated known class names")
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_split_dataset)

    p = sub.add_parser("fit", help="harvest training logits and fit the per-class mixtures")
    p.add_argument("--detections", required=True)
    p.add_argument("--annotations", required=True, help="COCO-format ground truth")
    p.add_argument("--val-detections", help="detections for component selection "
                   "(default: reuse --detections)")
    p.add_argument("--val-annotations")
    p.add_argument("--theta-iou", type=float)
    p.add_argument("--theta-conf", type=float)
    p.add_argument("--components", help="candidate counts, e.g. '1..6' or '2,4,8'")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--reg", type=float)
    p.add_argument("--restarts", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--selection-report")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("score", help="per-class log-likelihoods for every detection")
    p.add_argument("--gmmset", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--theta-ose", type=float, help="accept iff max log-likelihood >= this")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("eval", help="categorise detections and compute open-set metrics")
    p.add_argument("--scored", required=True, help="output of the score command")
    p.add_argument("--annotations", required=True, help="COCO-format open-set ground truth")
    p.add_argument("--methods", default="gmm,score,entropy")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--prefix", default="report")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("train-toy", help="train the toy head and emit interchange files")
    p.add_argument("--config", required=True, help="YAML/JSON toy pipeline config")
    p.add_argument("--seed", type=int)
    p.add_argument("--lambda", dest="lambda_weight", type=float,
                   help="anchor loss weight (default 0.1)")
    p.add_argument("--alpha", type=float, help="centre magnitude (default 10)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("report", help="pretty-print an eval report JSON")
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ContractViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, json.JSONDecodeError, yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
