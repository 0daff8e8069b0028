"""Converting a labelled detection dataset into an open-set benchmark.

The labelled classes are split into known and held-out unknown sets; every
image containing an unknown-class object is dropped from the training-side
subsets, which makes the held-out classes genuinely unseen. The original
test subset stays untouched so unknown objects remain available for
open-set evaluation. COCO-style annotation JSON is the canonical format; a
VOC XML reader normalises into the same structure.
"""

from __future__ import annotations

import hashlib
import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ContractViolation, DataError
from .interchange import GroundTruthObject


@dataclass
class AnnotationSet:
    """COCO-shaped annotation container (bbox stored as [x, y, w, h])."""

    images: list[dict]
    annotations: list[dict]
    categories: list[dict]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        image_ids = {img["id"] for img in self.images}
        category_ids = {cat["id"] for cat in self.categories}
        for ann in self.annotations:
            if ann["image_id"] not in image_ids:
                raise DataError(f"annotation {ann.get('id')} references missing image {ann['image_id']}")
            if ann["category_id"] not in category_ids:
                raise DataError(f"annotation {ann.get('id')} references missing category {ann['category_id']}")

    @property
    def category_names(self) -> list[str]:
        return [cat["name"] for cat in self.categories]

    def category_id_by_name(self, name: str) -> int:
        for cat in self.categories:
            if cat["name"] == name:
                return cat["id"]
        raise DataError(f"no category named {name!r}")

    def instance_counts(self) -> dict[int, int]:
        counts = {cat["id"]: 0 for cat in self.categories}
        for ann in self.annotations:
            counts[ann["category_id"]] += 1
        return counts

    def to_dict(self) -> dict:
        return {
            "images": self.images,
            "annotations": self.annotations,
            "categories": self.categories,
            "meta": self.meta,
        }


def load_coco(path) -> AnnotationSet:
    with open(path) as fh:
        doc = json.load(fh)
    for key in ("images", "annotations", "categories"):
        if key not in doc:
            raise DataError(f"{path}: not COCO-style annotation JSON, missing {key!r}")
    return AnnotationSet(images=doc["images"], annotations=doc["annotations"],
                         categories=doc["categories"], meta=doc.get("meta", {}))


def save_coco(ann: AnnotationSet, path, meta: dict | None = None):
    doc = ann.to_dict()
    if meta is not None:
        doc["meta"] = meta
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_voc_dir(xml_dir) -> AnnotationSet:
    """Import a directory of VOC XML annotation files.

    Categories are assigned ids in alphabetical name order, which matches
    the conventional ordering of the VOC class list.
    """
    xml_dir = Path(xml_dir)
    files = sorted(xml_dir.glob("*.xml"))
    if not files:
        raise DataError(f"no XML annotation files under {xml_dir}")

    names = set()
    parsed = []
    for path in files:
        root = ET.parse(path).getroot()
        size = root.find("size")
        record = {
            "file": root.findtext("filename") or path.stem,
            "width": int(size.findtext("width")) if size is not None else 0,
            "height": int(size.findtext("height")) if size is not None else 0,
            "objects": [],
        }
        for obj in root.iter("object"):
            name = obj.findtext("name")
            box = obj.find("bndbox")
            x1, y1 = float(box.findtext("xmin")), float(box.findtext("ymin"))
            x2, y2 = float(box.findtext("xmax")), float(box.findtext("ymax"))
            record["objects"].append((name, [x1, y1, x2 - x1, y2 - y1]))
            names.add(name)
        parsed.append(record)

    categories = [{"id": i, "name": n} for i, n in enumerate(sorted(names))]
    cat_ids = {c["name"]: c["id"] for c in categories}
    images, annotations = [], []
    ann_id = 0
    for img_id, record in enumerate(parsed):
        images.append({"id": img_id, "file_name": record["file"],
                       "width": record["width"], "height": record["height"]})
        for name, bbox in record["objects"]:
            annotations.append({"id": ann_id, "image_id": img_id,
                                "category_id": cat_ids[name], "bbox": bbox})
            ann_id += 1
    return AnnotationSet(images=images, annotations=annotations, categories=categories)


def split_classes(all_classes: list[str], known_spec) -> tuple[list[str], list[str]]:
    """Partition the class list into known and unknown.

    known_spec is either an int (the first n classes in dataset order stay
    known) or an explicit list of known class names. Both sides must end up
    nonempty.
    """
    if isinstance(known_spec, int):
        if not 0 < known_spec < len(all_classes):
            raise ContractViolation(
                f"known-class prefix {known_spec} must be in (0, {len(all_classes)})"
            )
        known = list(all_classes[:known_spec])
    else:
        known_set = set(known_spec)
        unknown_names = known_set - set(all_classes)
        if unknown_names:
            raise ContractViolation(f"known classes not in the dataset: {sorted(unknown_names)}")
        known = [c for c in all_classes if c in known_set]
    unknown = [c for c in all_classes if c not in set(known)]
    if not known or not unknown:
        raise ContractViolation("both known and unknown class sets must be nonempty")
    return known, unknown


def filter_images(dataset: AnnotationSet, unknown_classes: list[str]) -> AnnotationSet:
    """Drop every image containing any unknown-class object; keep the rest
    with all their annotations. Images without annotations are retained and
    the category table shrinks to the known classes."""
    if not unknown_classes:
        raise ContractViolation("unknown class list must be nonempty")
    unknown_ids = {dataset.category_id_by_name(n) for n in unknown_classes}
    tainted = {ann["image_id"] for ann in dataset.annotations
               if ann["category_id"] in unknown_ids}
    images = [img for img in dataset.images if img["id"] not in tainted]
    kept_ids = {img["id"] for img in images}
    annotations = [ann for ann in dataset.annotations if ann["image_id"] in kept_ids]
    categories = [cat for cat in dataset.categories if cat["id"] not in unknown_ids]
    return AnnotationSet(images=images, annotations=annotations,
                         categories=categories, meta=dict(dataset.meta))


@dataclass
class RatioReport:
    """Per-class retention ratios after filtering, with the recommended
    floor |known| / |all|. Classes under the floor are flagged, never
    fatal: dense class co-occurrence can make the floor unreachable."""

    floor: float
    ratios: dict[str, float]
    flagged: list[str]


def check_instance_ratio(original: AnnotationSet, filtered: AnnotationSet,
                         known_classes: list[str], all_classes: list[str]) -> RatioReport:
    floor = len(known_classes) / len(all_classes)
    original_counts = original.instance_counts()
    filtered_counts = filtered.instance_counts()
    ratios, flagged = {}, []
    for name in known_classes:
        cat_id = original.category_id_by_name(name)
        before = original_counts.get(cat_id, 0)
        after = filtered_counts.get(cat_id, 0)
        ratio = after / before if before else 1.0
        ratios[name] = ratio
        if ratio < floor:
            flagged.append(name)
    return RatioReport(floor=floor, ratios=ratios, flagged=flagged)


def _val_fraction_of(image_id, seed: int) -> float:
    digest = hashlib.sha256(f"{seed}:{image_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2**64


def split_train_val(dataset: AnnotationSet, val_fraction: float = 0.2,
                    seed: int = 0) -> tuple[AnnotationSet, AnnotationSet]:
    """Deterministic train/val split keyed on a stable hash of each image
    id, so reruns with the same seed reproduce byte-identical subsets."""
    if not 0.0 < val_fraction < 1.0:
        raise ContractViolation("val_fraction must be in (0, 1)")
    val_ids = {img["id"] for img in dataset.images
               if _val_fraction_of(img["id"], seed) < val_fraction}

    def subset(keep_ids):
        images = [img for img in dataset.images if img["id"] in keep_ids]
        annotations = [a for a in dataset.annotations if a["image_id"] in keep_ids]
        return AnnotationSet(images=images, annotations=annotations,
                             categories=list(dataset.categories), meta=dict(dataset.meta))

    train_ids = {img["id"] for img in dataset.images} - val_ids
    return subset(train_ids), subset(val_ids)


def ground_truth_objects(dataset: AnnotationSet, known_classes: list[str],
                         class_index: dict[str, int] | None = None) -> list[GroundTruthObject]:
    """Flatten annotations into evaluation ground truth.

    class_index maps known class names to logit indices; by default the
    position in known_classes. Unknown-class objects get class_id -1 and
    known_flag False.
    """
    if class_index is None:
        class_index = {name: i for i, name in enumerate(known_classes)}
    known = set(known_classes)
    names_by_cat = {cat["id"]: cat["name"] for cat in dataset.categories}
    out = []
    for ann in dataset.annotations:
        name = names_by_cat[ann["category_id"]]
        x, y, w, h = ann["bbox"]
        out.append(GroundTruthObject(
            image_id=str(ann["image_id"]),
            bbox=(x, y, x + w, y + h),
            class_id=class_index[name] if name in known else -1,
            known_flag=name in known,
        ))
    return out
