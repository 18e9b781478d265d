"""Training loop, configuration, checkpointing, and evaluation entry points."""

import csv
import logging
import math
import os
import struct
from dataclasses import dataclass, fields

import numpy as np
import torch

from . import data as data_mod
from . import export as export_mod
from . import metrics as metrics_mod
from .data import ValidationError, load_manifest, load_pair, normalize_cloud
from .losses import LossWeights, total_loss
from .model import MifagModel

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
FLAT_MAGIC = b"MFW1"
DETERMINISTIC_ENV = "MIFAG_DETERMINISTIC"


class NumericalError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    learning_rate: float = 4e-5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    batch_size: int = 64
    epochs: int = 80
    max_steps: int = 0  # 0 = run every epoch to completion
    n_images: int = 5
    iam_layers: int = 4
    tokens: int = 16
    channels: int = 64
    heads: int = 4
    cosine_scale: float = 10.0
    lambda1: float = 1.0
    lambda2: float = 0.5
    lambda3: float = 1.0
    seed_params: int = 0
    seed_data: int = 0
    seed_sampler: int = 0
    deterministic: bool = False
    image_side: int = 32
    image_channels: tuple = (16, 32, 64, 64)
    num_points: int = 2048
    stage_points: tuple = (512, 128, 64)
    stage_hidden: tuple = (320, 512, 512)
    neighbors: int = 16
    num_affordances: int = 17
    num_object_classes: int = 23
    checkpoint_interval: int = 0  # epochs between periodic checkpoints, 0 = final only

    def validate(self):
        positive = ("learning_rate", "batch_size", "epochs", "n_images",
                    "iam_layers", "tokens", "channels", "heads", "image_side",
                    "num_points", "neighbors", "num_affordances",
                    "num_object_classes")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValidationError(f"config field {name} must be positive")
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValidationError(f"config field {name} must be nonnegative")
        if self.channels % self.heads != 0:
            raise ValidationError("channels must be divisible by heads")
        if self.image_side % 16 != 0:
            raise ValidationError("image_side must be divisible by 16")
        if len(self.stage_points) != len(self.stage_hidden):
            raise ValidationError("stage_points and stage_hidden lengths differ")
        if len(self.image_channels) != 4:
            raise ValidationError("image_channels must list 4 widths")
        return self

    def loss_weights(self):
        return LossWeights(self.lambda1, self.lambda2, self.lambda3)

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _parse_value(field, raw):
    raw = raw.strip()
    if field.type is bool or isinstance(field.default, bool):
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise ValidationError(f"config field {field.name}: bad boolean '{raw}'")
    if isinstance(field.default, tuple):
        return tuple(int(v) for v in raw.split(","))
    if isinstance(field.default, int):
        return int(raw)
    if isinstance(field.default, float):
        return float(raw)
    return raw


def parse_config_text(text):
    """Parse the flat 'key = value' config format; unknown keys are errors."""
    by_name = {f.name: f for f in fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in by_name:
            raise ValidationError(f"config line {lineno}: unknown key '{key}'")
        try:
            values[key] = _parse_value(by_name[key], raw)
        except (ValueError, TypeError):
            raise ValidationError(
                f"config line {lineno}: bad value '{raw}' for {key}") from None
    return TrainConfig(**values).validate()


def load_config(path):
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    with open(path) as f:
        return parse_config_text(f.read())


def deterministic_mode(config):
    return config.deterministic or os.environ.get(DETERMINISTIC_ENV) == "1"


def apply_determinism(config):
    if deterministic_mode(config):
        torch.set_num_threads(1)


def build_model(config):
    """Construct the model in float64 with parameter-seeded initialization.

    Initialization runs under a float64 default dtype so the sampled values
    (and hence whole training runs) are identical regardless of the ambient
    process-wide default.
    """
    config.validate()
    torch.manual_seed(config.seed_params)
    previous_dtype = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    try:
        model = MifagModel(
            image_side=config.image_side, image_channels=config.image_channels,
            stage_points=config.stage_points, stage_hidden=config.stage_hidden,
            neighbors=config.neighbors, channels=config.channels,
            tokens=config.tokens, layers=config.iam_layers, heads=config.heads,
            cosine_scale=config.cosine_scale,
            num_affordances=config.num_affordances)
    finally:
        torch.set_default_dtype(previous_dtype)
    return model.double()


def cosine_lr(base_lr, epoch, total_epochs):
    """lr(e) = lr0 * (1 + cos(pi * e / E)) / 2."""
    return base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0


def select_train_images(num_available, n_images, rng):
    """Seeded sampling; falls back to replacement when too few images exist."""
    if num_available >= n_images:
        return rng.choice(num_available, size=n_images, replace=False).tolist()
    return rng.integers(0, num_available, size=n_images).tolist()


def select_eval_images(num_available, n_images):
    """Deterministic: the first n images in manifest order, cycling if short."""
    return [i % num_available for i in range(n_images)]


@dataclass
class PreparedPair:
    sample_id: str
    affordance: int
    object_class: int
    coords: torch.Tensor  # (N, 3) normalized, float64
    raw_coords: np.ndarray  # pre-normalization, for exports
    labels: torch.Tensor  # (N,) float64
    labels_np: np.ndarray
    images: list  # (H, W, 3) float64 tensors


def prepare_pairs(manifest, config):
    pairs = []
    for entry in manifest.entries:
        pair = load_pair(manifest, entry, image_side=config.image_side)
        cloud = normalize_cloud(pair.cloud)
        images = [torch.from_numpy(np.ascontiguousarray(img))
                  for img in pair.refs.images]
        pairs.append(PreparedPair(
            entry.sample_id, entry.affordance, entry.object_class,
            torch.from_numpy(cloud.coords), pair.cloud.coords,
            torch.from_numpy(cloud.labels), cloud.labels, images))
    return pairs


def forward_pair(model, pair, image_indices):
    images = [pair.images[i] for i in image_indices]
    return model(pair.coords, images)


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def save_checkpoint(path, model, optimizer, step, config):
    arrays = {"meta/version": np.int64(CHECKPOINT_VERSION),
              "meta/step": np.int64(step),
              "meta/config": np.frombuffer(config.to_text().encode(),
                                           dtype=np.uint8)}
    for name, param in model.named_parameters():
        arrays[f"param/{name}"] = param.detach().numpy()
        state = optimizer.state.get(param, {}) if optimizer is not None else {}
        if "exp_avg" in state:
            arrays[f"adam_m/{name}"] = state["exp_avg"].numpy()
            arrays[f"adam_v/{name}"] = state["exp_avg_sq"].numpy()
            arrays[f"adam_step/{name}"] = np.int64(int(state["step"]))
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Return (config, model, optimizer, step) restored bit-exactly."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with np.load(path) as archive:
        version = int(archive["meta/version"])
        if version != CHECKPOINT_VERSION:
            raise ValidationError(
                f"checkpoint version {version} unsupported "
                f"(expected {CHECKPOINT_VERSION})")
        step = int(archive["meta/step"])
        config = parse_config_text(bytes(archive["meta/config"]).decode())
        model = build_model(config)
        optimizer = make_optimizer(model, config)
        params = dict(model.named_parameters())
        for name, param in params.items():
            key = f"param/{name}"
            if key not in archive:
                raise ValidationError(f"checkpoint missing parameter '{name}'")
            with torch.no_grad():
                param.copy_(torch.from_numpy(archive[key]))
        for name, param in params.items():
            mkey = f"adam_m/{name}"
            if mkey in archive:
                optimizer.state[param] = {
                    "step": torch.tensor(float(archive[f"adam_step/{name}"])),
                    "exp_avg": torch.from_numpy(archive[mkey].copy()),
                    "exp_avg_sq": torch.from_numpy(archive[f"adam_v/{name}"].copy()),
                }
    return config, model, optimizer, step


def export_flat(path, model):
    """Portable weight dump: per array, a UTF-8 name, the shape, and the
    row-major float32 little-endian payload (layout documented in README)."""
    with open(path, "wb") as f:
        named = list(model.named_parameters())
        f.write(FLAT_MAGIC)
        f.write(struct.pack("<I", len(named)))
        for name, param in named:
            blob = name.encode()
            arr = param.detach().numpy().astype("<f4")
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def import_flat(path):
    """Read a flat weight dump into a name -> float32 array mapping."""
    with open(path, "rb") as f:
        if f.read(4) != FLAT_MAGIC:
            raise ValidationError(f"{path}: not a flat weight export")
        count = struct.unpack("<I", f.read(4))[0]
        arrays = {}
        for _ in range(count):
            name_len = struct.unpack("<I", f.read(4))[0]
            name = f.read(name_len).decode()
            ndim = struct.unpack("<I", f.read(4))[0]
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            arrays[name] = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(shape)
    return arrays


def load_flat_into(model, path):
    arrays = import_flat(path)
    with torch.no_grad():
        for name, param in model.named_parameters():
            if name not in arrays:
                raise ValidationError(f"flat export missing parameter '{name}'")
            param.copy_(torch.from_numpy(arrays[name].astype(np.float64)))


# ---------------------------------------------------------------------------
# Training and evaluation
# ---------------------------------------------------------------------------

def make_optimizer(model, config):
    return torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                            betas=(config.adam_beta1, config.adam_beta2))


LOG_HEADER = ["step", "ce", "sim", "focal", "dice", "hm", "total", "lr"]


def train(config, manifest, out_dir):
    """Train on a manifest; writes checkpoint(s) and the loss log CSV.

    Returns (model, log_rows, final_checkpoint_path).
    """
    config.validate()
    apply_determinism(config)
    os.makedirs(out_dir, exist_ok=True)
    model = build_model(config)
    optimizer = make_optimizer(model, config)
    pairs = prepare_pairs(manifest, config)
    if not pairs:
        raise ValidationError("manifest contains no samples")
    for pair in pairs:
        if pair.labels_np.max() <= 0.0:
            raise ValidationError(
                f"training sample {pair.sample_id} has no positive label")
    data_rng = np.random.default_rng(config.seed_data)
    sampler_rng = np.random.default_rng(config.seed_sampler)
    weights = config.loss_weights()
    log_rows = []
    step = 0
    done = False
    for epoch in range(config.epochs):
        lr = cosine_lr(config.learning_rate, epoch, config.epochs)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = sampler_rng.permutation(len(pairs))
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            breakdowns = []
            for idx in batch:
                pair = pairs[idx]
                image_indices = select_train_images(len(pair.images),
                                                    config.n_images, data_rng)
                fwd = forward_pair(model, pair, image_indices)
                breakdowns.append(total_loss(fwd.logits, pair.affordance,
                                             fwd.snapshots, fwd.pred,
                                             pair.labels, weights))
            batch_loss = torch.stack([b.total for b in breakdowns]).mean()
            if not torch.isfinite(batch_loss):
                raise NumericalError(f"non-finite loss at step {step}")
            optimizer.zero_grad()
            batch_loss.backward()
            optimizer.step()
            mean = lambda attr: float(torch.stack(
                [getattr(b, attr) for b in breakdowns]).mean().detach())
            log_rows.append([step, mean("ce"), mean("sim"), mean("focal"),
                             mean("dice"), mean("hm"),
                             float(batch_loss.detach()), lr])
            step += 1
            if config.max_steps and step >= config.max_steps:
                done = True
                break
        if done:
            break
        if config.checkpoint_interval and (epoch + 1) % config.checkpoint_interval == 0:
            save_checkpoint(os.path.join(out_dir, f"checkpoint_{epoch:04d}.npz"),
                            model, optimizer, step, config)
    final_path = os.path.join(out_dir, "checkpoint.npz")
    save_checkpoint(final_path, model, optimizer, step, config)
    write_loss_log(os.path.join(out_dir, "train_log.csv"), log_rows)
    return model, log_rows, final_path


def write_loss_log(path, rows):
    with open(path, "w", newline="\n") as f:
        writer = csv.writer(f)
        writer.writerow(LOG_HEADER)
        for row in rows:
            writer.writerow([row[0]] + [f"{v:.8f}" for v in row[1:]])


@torch.no_grad()
def evaluate_model(model, manifest, config):
    """One deterministic forward pass per pair; aggregate the metric report."""
    apply_determinism(config)
    model.eval()
    pairs = prepare_pairs(manifest, config)
    samples = []
    for pair in pairs:
        image_indices = select_eval_images(len(pair.images), config.n_images)
        fwd = forward_pair(model, pair, image_indices)
        samples.append(metrics_mod.score_sample(
            pair.sample_id, pair.affordance, fwd.pred.numpy(), pair.labels_np))
    model.train()
    return metrics_mod.build_report(samples, config.num_affordances)


def evaluate_checkpoint(checkpoint_path, manifest):
    config, model, _, _ = load_checkpoint(checkpoint_path)
    for entry in manifest.entries:
        if entry.affordance >= config.num_affordances:
            raise ValidationError(
                f"sample {entry.sample_id}: affordance {entry.affordance} "
                f"outside the checkpoint's {config.num_affordances} classes")
    return evaluate_model(model, manifest, config), config


@torch.no_grad()
def predict(checkpoint_path, manifest, sample_id, out_dir):
    """Write the PLY heatmap and score CSV for one sample."""
    config, model, _, _ = load_checkpoint(checkpoint_path)
    apply_determinism(config)
    model.eval()
    entries = [e for e in manifest.entries if e.sample_id == sample_id]
    if not entries:
        raise ValidationError(f"sample '{sample_id}' not found in manifest")
    pairs = prepare_pairs(
        data_mod.DatasetManifest(entries, manifest.split, manifest.setting,
                                 manifest.class_names, manifest.affordance_names,
                                 manifest.root), config)
    pair = pairs[0]
    image_indices = select_eval_images(len(pair.images), config.n_images)
    fwd = forward_pair(model, pair, image_indices)
    os.makedirs(out_dir, exist_ok=True)
    scores = fwd.pred.numpy()
    ply_path = os.path.join(out_dir, f"{sample_id}.ply")
    csv_path = os.path.join(out_dir, f"{sample_id}.csv")
    export_mod.write_prediction_ply(ply_path, pair.raw_coords, scores)
    export_mod.write_prediction_csv(csv_path, scores)
    return ply_path, csv_path


@torch.no_grad()
def export_queries(checkpoint_path, manifest, out_file):
    """Query-token CSV: one row per (sample, layer, image, token)."""
    config, model, _, _ = load_checkpoint(checkpoint_path)
    apply_determinism(config)
    model.eval()
    pairs = prepare_pairs(manifest, config)
    rows = []
    for pair in pairs:
        image_indices = select_eval_images(len(pair.images), config.n_images)
        history = model.query_history([pair.images[i] for i in image_indices])
        for layer_idx, layer_queries in enumerate(history, start=1):
            for image_idx, queries in enumerate(layer_queries):
                for token_idx, vec in enumerate(queries):
                    rows.append((layer_idx, image_idx, token_idx,
                                 pair.affordance, vec.numpy()))
    export_mod.write_query_csv(out_file, rows, config.channels)
    return len(rows)
