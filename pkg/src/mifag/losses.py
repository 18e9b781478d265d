"""The three-term training objective and its weighted total."""

import logging
from dataclasses import dataclass

import torch

log = logging.getLogger(__name__)

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
DICE_EPS = 1e-6


@dataclass
class LossWeights:
    category: float = 1.0
    similarity: float = 0.5
    heatmap: float = 1.0


@dataclass
class LossBreakdown:
    ce: torch.Tensor
    sim: torch.Tensor
    focal: torch.Tensor
    dice: torch.Tensor
    hm: torch.Tensor
    total: torch.Tensor


def cross_entropy(logits, target):
    """-log softmax(logits)[target], stabilized by max subtraction."""
    if not 0 <= target < logits.shape[0]:
        raise ValueError(f"target {target} out of range for {logits.shape[0]} classes")
    shifted = logits - logits.max()
    return torch.logsumexp(shifted, dim=0) - shifted[target]


def similarity_loss(snapshots):
    """Mean (1 - cosine) over image pairs, averaged over layers.

    snapshots: [layer][image] -> token matrix; each matrix is flattened to a
    single vector before the cosine. Returns 0 when only one image exists.
    """
    num_images = len(snapshots[0])
    if num_images < 2:
        log.warning("similarity loss undefined for a single image; returning 0")
        ref = snapshots[0][0]
        return ref.sum() * 0.0
    per_layer = []
    for layer_feats in snapshots:
        flat = [f.reshape(-1) for f in layer_feats]
        pair_terms = []
        for i in range(num_images):
            for j in range(i + 1, num_images):
                cos = torch.dot(flat[i], flat[j]) / (flat[i].norm() * flat[j].norm())
                pair_terms.append(1.0 - cos)
        per_layer.append(torch.stack(pair_terms).mean())
    return torch.stack(per_layer).mean()


def focal_loss(pred, gt, alpha=FOCAL_ALPHA, gamma=FOCAL_GAMMA):
    """Mean focal loss against soft targets; pred must lie strictly in (0, 1)."""
    pos = alpha * (1.0 - pred) ** gamma * gt * torch.log(pred)
    neg = (1.0 - alpha) * pred ** gamma * (1.0 - gt) * torch.log(1.0 - pred)
    return -(pos + neg).mean()


def dice_loss(pred, gt, eps=DICE_EPS):
    inter = (pred * gt).sum()
    return 1.0 - (2.0 * inter + eps) / (pred.sum() + gt.sum() + eps)


def heatmap_loss(pred, gt):
    """Return (focal, dice, focal + dice)."""
    focal = focal_loss(pred, gt)
    dice = dice_loss(pred, gt)
    return focal, dice, focal + dice


def total_loss(logits, target, snapshots, pred, gt, weights=None):
    weights = weights or LossWeights()
    ce = cross_entropy(logits, target)
    sim = similarity_loss(snapshots)
    focal, dice, hm = heatmap_loss(pred, gt)
    total = weights.category * ce + weights.similarity * sim + weights.heatmap * hm
    return LossBreakdown(ce, sim, focal, dice, hm, total)
