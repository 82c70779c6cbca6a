"""Dataset ingestion, on-disk layout, augmentation, splits, and a synthetic
desk-scale generator.

On-disk layout, one directory per instance::

    root/<instance-id>/manifest.json
    root/<instance-id>/frame_000.png ... frame_004.png

The manifest carries ``label`` ("2d" | "3d"), ``city``, ``object_class``
("HU" | "VE" | "AN"), ``interval_ms`` and ``crop_margin_px``; frame index
order is temporal order and all frames of an instance share dimensions.
Frames are stored as 8-bit PNG (lossless, so blur and edge statistics
survive a round trip up to quantization).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.ndimage
from PIL import Image as PILImage

from . import imaging
from .experts import MAX_FRAMES, ObjectSequence

LABELS = ("2d", "3d")
OBJECT_CLASSES = ("HU", "VE", "AN")
CITIES = ("NY", "SF", "DU", "MI", "LO", "LA", "GT")

# Generalization-split floor: minimum original (non-augmented) training
# counts below which a split is considered too thin to train on.
MIN_TRAIN_2D = 56
MIN_TRAIN_3D = 120


class DatasetError(ValueError):
    """Raised when an on-disk dataset violates the layout contract."""


@dataclass
class LabeledInstance:
    sequence: ObjectSequence
    label: str
    city: str = ""
    object_class: str = ""
    augmented: bool = False
    instance_id: str = ""

    def __post_init__(self):
        if self.label not in LABELS:
            raise DatasetError(f"unknown label {self.label!r}")
        if self.augmented and self.label != "2d":
            raise DatasetError("augmented instances must carry label 2d")

    def tag(self, axis: str) -> str:
        if axis == "city":
            return self.city
        if axis == "object_class":
            return self.object_class
        raise ValueError(f"unknown tag axis {axis!r}")


@dataclass
class LabeledDataset:
    instances: list[LabeledInstance]
    provenance: str = ""

    def __post_init__(self):
        if not self.instances:
            raise DatasetError("dataset is empty")

    def __len__(self) -> int:
        return len(self.instances)

    def count(self, label: str) -> int:
        return sum(1 for inst in self.instances if inst.label == label)

    def labels(self) -> np.ndarray:
        """Binary labels, 1 for 3d."""
        return np.array(
            [1.0 if inst.label == "3d" else 0.0 for inst in self.instances]
        )

    def tags(self, axis: str) -> list[str]:
        return sorted({inst.tag(axis) for inst in self.instances})


# ---------------------------------------------------------------------------
# PNG round trip


def _decode_png(path: Path) -> np.ndarray:
    with PILImage.open(path) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float64) / 255.0


def _encode_png(path: Path, frame: np.ndarray) -> None:
    data = np.clip(np.round(frame * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(data, mode="RGB").save(path, format="PNG")


def load_instance(inst_dir: Path) -> LabeledInstance:
    inst_id = inst_dir.name
    manifest_path = inst_dir / "manifest.json"
    if not manifest_path.is_file():
        raise DatasetError(f"{inst_id}: missing manifest.json")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{inst_id}: unreadable manifest ({exc})") from exc

    label = manifest.get("label")
    if label not in LABELS:
        raise DatasetError(f"{inst_id}: unknown label {label!r}")
    object_class = manifest.get("object_class", "")
    if object_class not in OBJECT_CLASSES:
        raise DatasetError(f"{inst_id}: unknown object_class {object_class!r}")

    frame_paths = sorted(inst_dir.glob("frame_*.png"))
    if len(frame_paths) < 2:
        raise DatasetError(f"{inst_id}: needs at least 2 frames")
    if len(frame_paths) > MAX_FRAMES:
        raise DatasetError(f"{inst_id}: more than {MAX_FRAMES} frames")
    frames = []
    for fp in frame_paths:
        try:
            frames.append(_decode_png(fp))
        except Exception as exc:
            raise DatasetError(f"{inst_id}: corrupt frame {fp.name} ({exc})") from exc
    try:
        seq = ObjectSequence(
            frames=frames,
            interval_ms=float(manifest.get("interval_ms", 200.0)),
            source_meta={
                "instance_id": inst_id,
                "crop_margin_px": manifest.get("crop_margin_px", 0),
            },
        )
    except ValueError as exc:
        raise DatasetError(f"{inst_id}: {exc}") from exc
    return LabeledInstance(
        sequence=seq,
        label=label,
        city=manifest.get("city", ""),
        object_class=object_class,
        augmented=bool(manifest.get("augmented", False)),
        instance_id=inst_id,
    )


def load_dataset(root) -> LabeledDataset:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    inst_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not inst_dirs:
        raise DatasetError(f"no instances under {root}")
    instances = [load_instance(d) for d in inst_dirs]
    return LabeledDataset(instances=instances, provenance=str(root))


def save_instance(root, instance: LabeledInstance) -> Path:
    root = Path(root)
    inst_dir = root / instance.instance_id
    inst_dir.mkdir(parents=True, exist_ok=False)
    manifest = {
        "label": instance.label,
        "city": instance.city,
        "object_class": instance.object_class,
        "interval_ms": instance.sequence.interval_ms,
        "crop_margin_px": instance.sequence.source_meta.get("crop_margin_px", 0),
    }
    if instance.augmented:
        manifest["augmented"] = True
    (inst_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    for i, frame in enumerate(instance.sequence.frames):
        _encode_png(inst_dir / f"frame_{i:03d}.png", frame)
    return inst_dir


def save_dataset(root, dataset: LabeledDataset) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for instance in dataset.instances:
        save_instance(root, instance)


# ---------------------------------------------------------------------------
# augmentation


def augment_to_parity(dataset: LabeledDataset, seed: int) -> LabeledDataset:
    """Clone random 2d instances (with replacement), rotating every frame of
    a clone by one uniform draw in [90, 180] degrees, until the class counts
    match.  Originals are never modified; clones carry ``augmented=True``."""
    originals_2d = [
        inst for inst in dataset.instances if inst.label == "2d" and not inst.augmented
    ]
    n_2d = dataset.count("2d")
    n_3d = dataset.count("3d")
    if not originals_2d:
        raise DatasetError("no 2d instances to augment")
    if n_2d > n_3d:
        raise DatasetError("2d class already outnumbers 3d")
    if n_2d == n_3d:
        return dataset

    rng = np.random.default_rng(seed)
    clones = []
    for k in range(n_3d - n_2d):
        src = originals_2d[int(rng.integers(len(originals_2d)))]
        angle = float(rng.uniform(90.0, 180.0))
        frames = [imaging.rotate(f, angle) for f in src.sequence.frames]
        seq = ObjectSequence(
            frames=frames,
            interval_ms=src.sequence.interval_ms,
            source_meta={**src.sequence.source_meta, "rotation_deg": angle},
        )
        clones.append(
            LabeledInstance(
                sequence=seq,
                label="2d",
                city=src.city,
                object_class=src.object_class,
                augmented=True,
                instance_id=f"{src.instance_id}-aug{k:03d}",
            )
        )
    return LabeledDataset(
        instances=list(dataset.instances) + clones,
        provenance=dataset.provenance,
    )


# ---------------------------------------------------------------------------
# splits


def split_by_tag(
    dataset: LabeledDataset,
    axis: str,
    train_tags,
    test_tags,
    min_train_2d: int = MIN_TRAIN_2D,
    min_train_3d: int = MIN_TRAIN_3D,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Partition by city or object class into disjoint train/test sides.

    The training side must hold at least ``min_train_2d`` 2d and
    ``min_train_3d`` 3d original instances; below that no meaningful model
    can be trained and the split is rejected.
    """
    train_tags = set(train_tags)
    test_tags = set(test_tags)
    if not train_tags or not test_tags:
        raise ValueError("tag sets must be non-empty")
    if train_tags & test_tags:
        raise ValueError(f"tag sets overlap: {sorted(train_tags & test_tags)}")

    train = [i for i in dataset.instances if i.tag(axis) in train_tags]
    test = [i for i in dataset.instances if i.tag(axis) in test_tags]
    if not train or not test:
        raise DatasetError("a split side is empty")

    n2 = sum(1 for i in train if i.label == "2d" and not i.augmented)
    n3 = sum(1 for i in train if i.label == "3d")
    if n2 < min_train_2d or n3 < min_train_3d:
        raise DatasetError(
            f"training side too thin: {n2} 2d / {n3} 3d, "
            f"need {min_train_2d} / {min_train_3d}"
        )
    return (
        LabeledDataset(train, provenance=f"{dataset.provenance}[train]"),
        LabeledDataset(test, provenance=f"{dataset.provenance}[test]"),
    )


# ---------------------------------------------------------------------------
# synthetic generator

FRAME_SIZE = 128
_T = MAX_FRAMES


def _smooth_texture(rng, cells, lo, hi):
    return imaging.resize(
        rng.uniform(lo, hi, (cells, cells, 3)), FRAME_SIZE, FRAME_SIZE
    )


def _gauss_rgb(img, sigma):
    if sigma <= 0:
        return img
    return np.stack(
        [scipy.ndimage.gaussian_filter(img[..., c], sigma) for c in range(3)],
        axis=-1,
    )


def _draw_patch(canvas, rng):
    size = int(rng.integers(12, 24))
    y = int(rng.integers(0, FRAME_SIZE - size))
    x = int(rng.integers(0, FRAME_SIZE - size))
    color = rng.uniform(0.0, 1.0, 3)
    color = np.where(color > 0.5, 0.92, 0.08)  # saturated corner-ish colors
    canvas[y : y + size, x : x + size] = color


def _base_scene(rng):
    """Background texture, color patches, object layer and soft mask.

    Static fine grain is baked into both layers so blur maps reflect where
    scene detail survives defocus rather than per-frame sensor noise."""
    grain = scipy.ndimage.gaussian_filter(
        0.05 * rng.standard_normal((FRAME_SIZE, FRAME_SIZE)), 0.6
    )[..., None]
    bg = np.clip(_smooth_texture(rng, 8, 0.2, 0.8) + grain, 0.0, 1.0)
    patches = bg.copy()
    for _ in range(5):
        _draw_patch(patches, rng)

    yy, xx = np.mgrid[0:FRAME_SIZE, 0:FRAME_SIZE].astype(float)
    cy = 64 + float(rng.integers(-6, 7))
    cx = 64 + float(rng.integers(-6, 7))
    ry = float(rng.integers(22, 34))
    rx = float(rng.integers(22, 34))
    mask = (((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0).astype(float)
    mask = scipy.ndimage.gaussian_filter(mask, 1.0)

    obj = _smooth_texture(rng, 5, 0.1, 0.9)
    stripes = 0.5 + 0.5 * np.sign(
        np.sin(2.0 * np.pi * (xx * float(rng.uniform(2, 5)) / FRAME_SIZE))
    )
    obj = np.clip(obj + 0.18 * (stripes[..., None] - 0.5) + grain, 0.0, 1.0)
    return patches, obj, mask


def _finish_frame(frame, rng, brightness):
    frame = frame + brightness + 0.003 * rng.standard_normal(frame.shape)
    return np.clip(frame, 0.0, 1.0)


def _affine_jitter(img, dy, dx, scale):
    # subpixel translate plus zoom about the frame center
    center = (FRAME_SIZE - 1) / 2.0
    matrix = np.diag([1.0 / scale, 1.0 / scale])
    offset = center * (1.0 - 1.0 / scale) + np.array([dy, dx])
    return np.stack(
        [
            scipy.ndimage.affine_transform(
                img[..., c], matrix, offset=offset, order=1, mode="nearest"
            )
            for c in range(3)
        ],
        axis=-1,
    )


def _make_2d_frames(scene_rng, dyn_rng):
    """Planar surface: one static composite, one global blur level shared by
    object and background across all frames, whole-frame affine jitter
    (subpixel shift plus slight zoom) and brightness wobble per frame."""
    patches, obj, mask = _base_scene(scene_rng)
    scene = mask[..., None] * obj + (1.0 - mask[..., None]) * patches
    sigma = float(dyn_rng.uniform(0.6, 1.4))
    blurred = _gauss_rgb(scene, sigma)
    frames = []
    for _ in range(_T):
        dy, dx = dyn_rng.uniform(-1.0, 1.0, 2)
        scale = float(dyn_rng.uniform(0.99, 1.01))
        jittered = _affine_jitter(blurred, dy, dx, scale)
        frames.append(
            _finish_frame(jittered, dyn_rng, float(dyn_rng.uniform(-0.05, 0.05)))
        )
    return frames


def _make_3d_frames(scene_rng, dyn_rng):
    """Real object: object and background blur levels change independently
    per frame, background patches churn, the object drifts a few px.

    Most instances are focus-rich: the auto-focus alternates between object
    and background, with occasional stalls, plus one randomly placed strong
    refocus so the full sequence always carries blur evidence.  A minority
    is motion-rich instead: blur levels stay mild and the evidence sits in
    heavy patch churn and larger drift, which forces the meta-classifier to
    fuse the color and edge experts rather than lean on blur alone."""
    patches, obj, mask = _base_scene(scene_rng)
    offset = np.zeros(2, dtype=int)
    motion_rich = dyn_rng.uniform() < 0.15
    focus_on_object = bool(dyn_rng.integers(2))
    forced_flip = int(dyn_rng.integers(1, _T))
    frames = []
    for t in range(_T):
        bg = patches.copy()
        if motion_rich:
            for _ in range(7):
                _draw_patch(bg, dyn_rng)
            step = dyn_rng.choice([-6, -5, -4, 4, 5, 6], size=2)
        else:
            churn = dyn_rng.uniform(size=5) < 0.5
            if not churn.any():
                churn[int(dyn_rng.integers(5))] = True
            for redraw in churn:
                if redraw:
                    _draw_patch(bg, dyn_rng)
            step = dyn_rng.choice([-3, -2, -1, 1, 2, 3], size=2)
        offset = np.clip(offset + step, -8, 8)
        obj_shifted = np.roll(obj, tuple(offset), axis=(0, 1))
        mask_shifted = np.roll(mask, tuple(offset), axis=(0, 1))

        if motion_rich:
            sigma_obj = float(dyn_rng.uniform(0.6, 1.4))
            sigma_bg = float(dyn_rng.uniform(0.6, 1.4))
        else:
            if t == forced_flip:
                focus_on_object = not focus_on_object
                sharp = float(dyn_rng.uniform(0.15, 0.3))
                soft = float(dyn_rng.uniform(1.8, 2.6))
            else:
                if t > 0 and dyn_rng.uniform() < 0.75:
                    focus_on_object = not focus_on_object
                sharp = float(dyn_rng.uniform(0.15, 0.7))
                soft = float(dyn_rng.uniform(0.9, 2.6))
            sigma_obj, sigma_bg = (
                (sharp, soft) if focus_on_object else (soft, sharp)
            )

        frame = mask_shifted[..., None] * _gauss_rgb(obj_shifted, sigma_obj) + (
            1.0 - mask_shifted[..., None]
        ) * _gauss_rgb(bg, sigma_bg)
        frames.append(
            _finish_frame(frame, dyn_rng, float(dyn_rng.uniform(-0.05, 0.05)))
        )
    return frames


def generate_synthetic(n_3d: int, n_2d: int, seed: int) -> LabeledDataset:
    """Deterministic synthetic dataset.

    A 3d instance and the 2d instance with the same index share the same
    base scene when generated under the same seed, so the classes differ
    only in their frame-to-frame dynamics.
    """
    if n_3d < 1 or n_2d < 1:
        raise ValueError("need at least one instance per class")
    instances = []
    for label, count, code in (("3d", n_3d, 1), ("2d", n_2d, 0)):
        for i in range(count):
            scene_rng = np.random.default_rng([seed, i])
            dyn_rng = np.random.default_rng([seed, i, code])
            tag_rng = np.random.default_rng([seed, i, 7])
            city = CITIES[int(tag_rng.integers(len(CITIES)))]
            object_class = OBJECT_CLASSES[int(tag_rng.integers(len(OBJECT_CLASSES)))]
            frames = (
                _make_3d_frames(scene_rng, dyn_rng)
                if label == "3d"
                else _make_2d_frames(scene_rng, dyn_rng)
            )
            instances.append(
                LabeledInstance(
                    sequence=ObjectSequence(
                        frames=frames,
                        interval_ms=200.0,
                        source_meta={"crop_margin_px": 8},
                    ),
                    label=label,
                    city=city,
                    object_class=object_class,
                    instance_id=f"{label}_{i:04d}",
                )
            )
    return LabeledDataset(
        instances=instances, provenance=f"synthetic(seed={seed})"
    )
