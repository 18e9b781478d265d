"""Dataset schema, file formats, splits, and the synthetic pair generator.

File formats (all text/binary layouts are documented in the README):
  * point file: line 1 ``points <N>``, then N lines ``x y z label``
  * image file: binary PPM (P6, maxval 255)
  * manifest:   JSON with entries referencing the two formats above
"""

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

DEFAULT_NUM_CLASSES = 23
DEFAULT_NUM_AFFORDANCES = 17
DATA_ROOT_ENV = "MIFAG_DATA_ROOT"

# Fixed 5x5 binary glyph per affordance id (row-major, bit 24 = top-left).
# The glyph is the invariant signal shared by all images of one affordance.
GLYPH_MASKS = [
    0x191ba0b, 0x1acf0b6, 0x11a395b, 0x1474a5c, 0x058a4c3, 0x15461bf,
    0x03ed931, 0x0def7d3, 0x112b761, 0x1111b7a, 0x1b8eefb, 0x07e090e,
    0x1d0ad25, 0x0c19af5, 0x0c5a79a, 0x0431027, 0x15e78f0,
]


class ValidationError(ValueError):
    """A document parsed but violates a schema or invariant."""


class FormatError(ValueError):
    """A file does not conform to its declared format."""


class DegenerateCloudError(ValueError):
    """All points coincide; normalization scale is undefined."""


def glyph_pattern(affordance):
    """5x5 boolean array for an affordance id."""
    mask = GLYPH_MASKS[affordance % len(GLYPH_MASKS)]
    bits = [(mask >> (24 - i)) & 1 for i in range(25)]
    return np.array(bits, dtype=bool).reshape(5, 5)


@dataclass
class PointCloudSample:
    coords: np.ndarray  # (N, 3) float64
    labels: np.ndarray  # (N,) float64 in [0, 1]
    object_class: int
    affordance: int
    sample_id: str

    def validate(self):
        if self.coords.ndim != 2 or self.coords.shape[1] != 3:
            raise ValidationError(f"{self.sample_id}: coords must be Nx3")
        if self.labels.shape != (self.coords.shape[0],):
            raise ValidationError(f"{self.sample_id}: one label per point required")
        if not np.all(np.isfinite(self.coords)):
            raise ValidationError(f"{self.sample_id}: non-finite coordinate")
        if np.any(self.labels < 0.0) or np.any(self.labels > 1.0):
            raise ValidationError(f"{self.sample_id}: label outside [0, 1]")
        return self


@dataclass
class ReferenceImageSet:
    images: list  # each (H, W, 3) float64 in [0, 1]
    affordance: int
    image_ids: list

    def validate(self):
        if len(self.images) < 1:
            raise ValidationError("reference image set must contain >= 1 image")
        for img in self.images:
            if img.ndim != 3 or img.shape[2] != 3:
                raise ValidationError("reference images must be HxWx3")
        return self


@dataclass
class AffordancePair:
    cloud: PointCloudSample
    refs: ReferenceImageSet

    def validate(self):
        if self.cloud.affordance != self.refs.affordance:
            raise ValidationError(
                f"{self.cloud.sample_id}: cloud/image affordance mismatch")
        return self


@dataclass
class ManifestEntry:
    sample_id: str
    object_class: int
    affordance: int
    point_file: str
    image_files: list


@dataclass
class DatasetManifest:
    entries: list
    split: str  # train | test
    setting: str  # seen | unseen
    class_names: list = field(default_factory=list)
    affordance_names: list = field(default_factory=list)
    root: str = "."

    def to_json_obj(self):
        return {
            "setting": self.setting,
            "split": self.split,
            "class_names": list(self.class_names),
            "affordance_names": list(self.affordance_names),
            "entries": [
                {
                    "sample_id": e.sample_id,
                    "object_class": e.object_class,
                    "affordance": e.affordance,
                    "point_file": e.point_file,
                    "image_files": list(e.image_files),
                }
                for e in self.entries
            ],
        }


def save_point_file(path, sample):
    """Write a point file. Fixed 6-fractional-digit decimals for exact round trips."""
    sample.validate()
    lines = [f"points {sample.coords.shape[0]}"]
    for (x, y, z), lab in zip(sample.coords, sample.labels):
        lines.append(f"{x:.6f} {y:.6f} {z:.6f} {lab:.6f}")
    with open(path, "w", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def load_point_file(path, object_class=0, affordance=0, sample_id=None):
    if not os.path.exists(path):
        raise FileNotFoundError(f"point file not found: {path}")
    with open(path) as f:
        header = f.readline().split()
        if len(header) != 2 or header[0] != "points":
            raise FormatError(f"{path}: bad header, expected 'points <N>'")
        try:
            n = int(header[1])
        except ValueError:
            raise FormatError(f"{path}: non-integer point count") from None
        coords = np.empty((n, 3), dtype=np.float64)
        labels = np.empty(n, dtype=np.float64)
        for i in range(n):
            parts = f.readline().split()
            if len(parts) != 4:
                raise FormatError(f"{path}: row {i} must have 4 fields")
            x, y, z, lab = (float(p) for p in parts)
            if not all(math.isfinite(v) for v in (x, y, z)):
                raise ValidationError(f"{path}: non-finite coordinate in row {i}")
            if not (0.0 <= lab <= 1.0):
                raise ValidationError(f"{path}: label {lab} out of [0,1] in row {i}")
            coords[i] = (x, y, z)
            labels[i] = lab
    sid = sample_id if sample_id is not None else os.path.splitext(os.path.basename(path))[0]
    return PointCloudSample(coords, labels, object_class, affordance, sid).validate()


def _read_ppm_token(f):
    # single whitespace-separated token, skipping '#' comments
    tok = b""
    while True:
        c = f.read(1)
        if not c:
            raise FormatError("truncated PPM header")
        if c == b"#":
            while c not in (b"\n", b""):
                c = f.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def load_image_raw(path):
    """Read a binary PPM (P6, maxval 255) into an HxWx3 array in [0, 1]."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"image file not found: {path}")
    with open(path, "rb") as f:
        magic = f.read(2)
        if magic != b"P6":
            raise FormatError(f"{path}: unsupported magic {magic!r}, P6 required")
        w = int(_read_ppm_token(f))
        h = int(_read_ppm_token(f))
        maxval = int(_read_ppm_token(f))
        if maxval != 255:
            raise FormatError(f"{path}: maxval must be 255, got {maxval}")
        payload = f.read(w * h * 3)
        if len(payload) != w * h * 3:
            raise FormatError(f"{path}: truncated pixel payload")
    img = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return img.astype(np.float64) / 255.0


def save_image(path, img):
    """Write an HxWx3 array in [0, 1] as binary PPM (values rounded to bytes)."""
    h, w, _ = img.shape
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(data.tobytes())


def resize_nearest(img, side):
    """Nearest-neighbor resize to side x side."""
    h, w, _ = img.shape
    rows = (np.arange(side) * h // side).astype(int)
    cols = (np.arange(side) * w // side).astype(int)
    return img[np.ix_(rows, cols)]


def load_image(path, side=None):
    img = load_image_raw(path)
    if side is not None:
        img = resize_nearest(img, side)
    return img


def normalize_cloud(sample):
    """Center the cloud at the origin and scale the max point norm to 1."""
    centroid = sample.coords.mean(axis=0)
    centered = sample.coords - centroid
    radius = np.linalg.norm(centered, axis=1).max()
    if radius == 0.0:
        raise DegenerateCloudError(f"{sample.sample_id}: all points coincident")
    return PointCloudSample(centered / radius, sample.labels.copy(),
                            sample.object_class, sample.affordance, sample.sample_id)


def save_manifest(path, manifest):
    with open(path, "w", newline="\n") as f:
        json.dump(manifest.to_json_obj(), f, indent=2)
        f.write("\n")


def load_manifest(path, check_files=True):
    if path is None:
        raise FileNotFoundError("no manifest path given")
    if not os.path.exists(path):
        raise FileNotFoundError(f"manifest not found: {path}")
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from None
    for key in ("setting", "split", "class_names", "affordance_names", "entries"):
        if key not in doc:
            raise ValidationError(f"{path}: missing manifest key '{key}'")
    if len(doc["class_names"]) != DEFAULT_NUM_CLASSES:
        raise ValidationError(
            f"{path}: expected {DEFAULT_NUM_CLASSES} class names, "
            f"got {len(doc['class_names'])}")
    if len(doc["affordance_names"]) != DEFAULT_NUM_AFFORDANCES:
        raise ValidationError(
            f"{path}: expected {DEFAULT_NUM_AFFORDANCES} affordance names, "
            f"got {len(doc['affordance_names'])}")
    root = os.path.dirname(os.path.abspath(path))
    entries = []
    seen_ids = set()
    for raw in doc["entries"]:
        entry = ManifestEntry(raw["sample_id"], int(raw["object_class"]),
                              int(raw["affordance"]), raw["point_file"],
                              list(raw["image_files"]))
        if entry.sample_id in seen_ids:
            raise ValidationError(f"{path}: duplicate sample_id '{entry.sample_id}'")
        seen_ids.add(entry.sample_id)
        if check_files:
            pf = os.path.join(root, entry.point_file)
            if not os.path.exists(pf):
                raise FileNotFoundError(f"{path}: entry '{entry.sample_id}' "
                                        f"references missing point file {pf}")
            for rel in entry.image_files:
                imf = os.path.join(root, rel)
                if not os.path.exists(imf):
                    raise FileNotFoundError(f"{path}: entry '{entry.sample_id}' "
                                            f"references missing image file {imf}")
        entries.append(entry)
    manifest = DatasetManifest(entries, doc["split"], doc["setting"],
                               doc["class_names"], doc["affordance_names"], root)
    return manifest


def check_unseen_disjoint(train, test):
    """Under the unseen setting, train/test object classes must not overlap."""
    train_classes = {e.object_class for e in train.entries}
    test_classes = {e.object_class for e in test.entries}
    overlap = train_classes & test_classes
    if overlap:
        raise ValidationError(
            f"unseen setting but object classes {sorted(overlap)} appear "
            "in both train and test")


def load_pair(manifest, entry, image_side=None):
    cloud = load_point_file(os.path.join(manifest.root, entry.point_file),
                            entry.object_class, entry.affordance, entry.sample_id)
    images = [load_image(os.path.join(manifest.root, rel), side=image_side)
              for rel in entry.image_files]
    refs = ReferenceImageSet(images, entry.affordance, list(entry.image_files))
    return AffordancePair(cloud, refs).validate()


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

@dataclass
class GenConfig:
    num_samples: int = 8
    points_per_cloud: int = 512
    images_per_sample: int = 2
    image_side: int = 32
    num_object_classes: int = DEFAULT_NUM_CLASSES
    num_affordances: int = DEFAULT_NUM_AFFORDANCES

    def validate(self):
        for name in ("num_samples", "points_per_cloud", "images_per_sample",
                     "image_side", "num_object_classes", "num_affordances"):
            if getattr(self, name) < 1:
                raise ValidationError(f"gen_config.{name} must be >= 1")
        return self


def _class_proportions(object_class):
    # deterministic, class-keyed box/cylinder proportions
    rng = np.random.default_rng([931, object_class])
    return 0.5 + rng.random(3)


def _sample_box_surface(rng, n, dims):
    """Uniform surface samples on an axis-aligned box with half-extents dims."""
    dx, dy, dz = dims
    areas = np.array([dy * dz, dy * dz, dx * dz, dx * dz, dx * dy, dx * dy])
    faces = rng.choice(6, size=n, p=areas / areas.sum())
    u = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    for i, face in enumerate(faces):
        axis = face // 2
        sign = 1.0 if face % 2 == 0 else -1.0
        other = [a for a in range(3) if a != axis]
        pts[i, axis] = sign * dims[axis]
        pts[i, other[0]] = u[i, 0] * dims[other[0]]
        pts[i, other[1]] = u[i, 1] * dims[other[1]]
    return pts


def _sample_cylinder_surface(rng, n, dims):
    """Uniform surface samples on a z-aligned cylinder (radius, _, half-height)."""
    radius, _, hh = dims
    lateral = 2.0 * np.pi * radius * 2.0 * hh
    cap = np.pi * radius ** 2
    part = rng.choice(3, size=n, p=np.array([lateral, cap, cap]) / (lateral + 2 * cap))
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    pts = np.empty((n, 3))
    for i in range(n):
        if part[i] == 0:
            pts[i] = (radius * np.cos(theta[i]), radius * np.sin(theta[i]),
                      rng.uniform(-hh, hh))
        else:
            r = radius * np.sqrt(rng.random())
            z = hh if part[i] == 1 else -hh
            pts[i] = (r * np.cos(theta[i]), r * np.sin(theta[i]), z)
    return pts


def _region_labels(coords, object_class, affordance):
    """Label a contiguous sub-surface: 1 at the core, cosine decay to 0."""
    rng = np.random.default_rng([4177, object_class, affordance])
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    center = coords[np.argmax(coords @ direction)]
    scale = np.linalg.norm(coords - coords.mean(axis=0), axis=1).max()
    r_core, r_edge = 0.35 * scale, 0.55 * scale
    dist = np.linalg.norm(coords - center, axis=1)
    labels = np.zeros(len(coords))
    labels[dist <= r_core] = 1.0
    band = (dist > r_core) & (dist < r_edge)
    t = (dist[band] - r_core) / (r_edge - r_core)
    labels[band] = 0.5 * (1.0 + np.cos(np.pi * t))
    # the anchor point has dist 0, so every sample has at least one label of 1
    return np.clip(labels, 0.0, 1.0)


def _render_reference_image(rng, side, affordance):
    """Uniform-noise background with the affordance glyph at a random pose."""
    img = rng.random((side, side, 3))
    pattern = glyph_pattern(affordance)
    max_cell = max(1, side // 8)
    cell = int(rng.integers(1, max_cell + 1))
    extent = 5 * cell
    row = int(rng.integers(0, max(1, side - extent + 1)))
    col = int(rng.integers(0, max(1, side - extent + 1)))
    block = np.repeat(np.repeat(pattern, cell, axis=0), cell, axis=1)
    block = block[: side - row, : side - col]
    img[row:row + block.shape[0], col:col + block.shape[1], :] = \
        block[..., None].astype(float)
    return img


def make_synthetic_dataset(gen_config, seed, out_dir, setting="seen", split="train"):
    """Generate a synthetic paired dataset on disk and return its manifest.

    Each cloud is a box or cylinder (keyed by object class) carrying one
    labeled affordance region; each reference image embeds the affordance
    glyph over noise. Identical (config, seed) yields identical bytes.
    """
    cfg = gen_config.validate()
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "points"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    entries = []
    for i in range(cfg.num_samples):
        rng = np.random.default_rng([seed, i])
        object_class = i % cfg.num_object_classes
        affordance = int(rng.integers(0, cfg.num_affordances))
        dims = _class_proportions(object_class)
        if object_class % 2 == 0:
            coords = _sample_box_surface(rng, cfg.points_per_cloud, dims)
        else:
            coords = _sample_cylinder_surface(rng, cfg.points_per_cloud, dims)
        labels = _region_labels(coords, object_class, affordance)
        sample_id = f"syn_{i:04d}"
        sample = PointCloudSample(coords, labels, object_class, affordance, sample_id)
        point_rel = os.path.join("points", f"{sample_id}.pts")
        save_point_file(os.path.join(out_dir, point_rel), sample)
        image_rels = []
        for j in range(cfg.images_per_sample):
            img = _render_reference_image(rng, cfg.image_side, affordance)
            rel = os.path.join("images", f"{sample_id}_{j}.ppm")
            save_image(os.path.join(out_dir, rel), img)
            image_rels.append(rel)
        entries.append(ManifestEntry(sample_id, object_class, affordance,
                                     point_rel, image_rels))
    class_names = [f"class_{c:02d}" for c in range(DEFAULT_NUM_CLASSES)]
    affordance_names = [f"affordance_{a:02d}" for a in range(DEFAULT_NUM_AFFORDANCES)]
    manifest = DatasetManifest(entries, split, setting, class_names,
                               affordance_names, out_dir)
    save_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest


def split_seen_unseen(manifest, setting, unseen_classes=None, seed=0, train_ratio=0.9):
    """Split a manifest into (train, test) under the seen or unseen setting."""
    if setting == "seen":
        rng = np.random.default_rng(seed)
        by_class = {}
        for e in manifest.entries:
            by_class.setdefault(e.object_class, []).append(e)
        train_entries, test_entries = [], []
        for cls in sorted(by_class):
            group = list(by_class[cls])
            order = rng.permutation(len(group))
            n_train = int(round(train_ratio * len(group)))
            for rank, idx in enumerate(order):
                (train_entries if rank < n_train else test_entries).append(group[idx])
    elif setting == "unseen":
        unseen_classes = set(unseen_classes or ())
        all_classes = {e.object_class for e in manifest.entries}
        if not unseen_classes:
            raise ValidationError("unseen setting requires nonempty unseen_classes")
        if all_classes <= unseen_classes:
            raise ValidationError("unseen_classes cover every class; train is empty")
        train_entries = [e for e in manifest.entries
                         if e.object_class not in unseen_classes]
        test_entries = [e for e in manifest.entries
                        if e.object_class in unseen_classes]
    else:
        raise ValidationError(f"unknown setting '{setting}'")
    key = lambda e: e.sample_id
    train = DatasetManifest(sorted(train_entries, key=key), "train", setting,
                            manifest.class_names, manifest.affordance_names,
                            manifest.root)
    test = DatasetManifest(sorted(test_entries, key=key), "test", setting,
                           manifest.class_names, manifest.affordance_names,
                           manifest.root)
    if setting == "unseen":
        check_unseen_disjoint(train, test)
    return train, test


def default_data_root():
    return os.environ.get(DATA_ROOT_ENV, ".")
