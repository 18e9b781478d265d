"""Reduced-scale image and point-cloud feature extractors.

Point branch: 3-stage set abstraction (farthest point sampling + kNN
grouping + shared per-point MLP + max pool) and inverse-distance feature
propagation back to the full cloud. Image branch: a 4-stage strided
convolution stack producing a dense channels-first feature map.
"""

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


def _as_numpy(coords):
    if isinstance(coords, torch.Tensor):
        return coords.detach().cpu().numpy()
    return np.asarray(coords, dtype=np.float64)


def farthest_point_sample(coords, k, start_index=0):
    """Greedy max-min farthest point sampling.

    Each selected index (after the first) maximizes the minimum Euclidean
    distance to the already-selected set; ties break to the lowest index.

    Input:
        coords: (N, 3) array or tensor
        k: number of samples, 1 <= k <= N
        start_index: first selected index (default 0, deterministic)
    Return:
        (k,) int64 array of selected indices
    """
    pts = _as_numpy(coords)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} points")
    if not 0 <= start_index < n:
        raise ValueError(f"start_index={start_index} out of range")
    selected = np.empty(k, dtype=np.int64)
    selected[0] = start_index
    min_dist = np.linalg.norm(pts - pts[start_index], axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(min_dist))  # argmax returns the first (lowest) index
        selected[i] = nxt
        min_dist = np.minimum(min_dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return selected


def knn_group(coords, centers, k):
    """k nearest source points per center, ties broken by lowest index.

    Return: (K, k) int64 neighbor indices into coords.
    """
    pts = _as_numpy(coords)
    ctr = _as_numpy(centers)
    if k > pts.shape[0]:
        raise ValueError(f"k={k} exceeds {pts.shape[0]} source points")
    d2 = ((ctr[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :k].astype(np.int64)


def interpolation_weights(fine_coords, coarse_coords, num_neighbors=3, eps=1e-8):
    """Inverse-distance weights of the nearest coarse points per fine point.

    A fine point coincident with a coarse point takes that coarse feature
    exactly (one-hot weight). Returns (idx, w), each (N_fine, num_neighbors).
    """
    fine = _as_numpy(fine_coords)
    coarse = _as_numpy(coarse_coords)
    nn_count = min(num_neighbors, coarse.shape[0])
    d2 = ((fine[:, None, :] - coarse[None, :, :]) ** 2).sum(-1)
    idx = np.argsort(d2, axis=1, kind="stable")[:, :nn_count]
    dist = np.sqrt(np.take_along_axis(d2, idx, axis=1))
    w = 1.0 / (dist + eps)
    zero = dist == 0.0
    exact = zero.any(axis=1)
    w[exact] = zero[exact].astype(np.float64)
    w /= w.sum(axis=1, keepdims=True)
    return idx, w


def interpolate_features(fine_coords, coarse_coords, coarse_feats, num_neighbors=3):
    """Interpolate coarse per-point features onto fine coordinates."""
    idx, w = interpolation_weights(fine_coords, coarse_coords, num_neighbors)
    idx_t = torch.from_numpy(idx)
    w_t = torch.from_numpy(w).to(coarse_feats.dtype)
    gathered = coarse_feats[idx_t]  # (N_fine, nn, C)
    return (w_t[..., None] * gathered).sum(dim=1)


@dataclass
class PyramidStage:
    coords: torch.Tensor  # (K_s, 3)
    features: torch.Tensor  # (K_s, C_s)


@dataclass
class PointFeaturePyramid:
    stages: list  # PyramidStage, stage 0 = full cloud

    @property
    def deepest(self):
        return self.stages[-1]


class SharedPointMLP(nn.Module):
    """Shared per-point MLP: (linear + bias + ReLU) per configured width."""

    def __init__(self, in_dim, dims):
        super().__init__()
        layers = []
        prev = in_dim
        for d in dims:
            layers.append(nn.Linear(prev, d))
            prev = d
        self.layers = nn.ModuleList(layers)

    def forward(self, x):
        for layer in self.layers:
            x = F.relu(layer(x))
        return x


class SetAbstractionStage(nn.Module):
    """Sample K centers, group k neighbors, shared MLP, max-pool per group."""

    def __init__(self, in_dim, mlp_dims, num_centers, num_neighbors):
        super().__init__()
        self.num_centers = num_centers
        self.num_neighbors = num_neighbors
        self.mlp = SharedPointMLP(in_dim + 3, mlp_dims)

    def forward(self, coords, feats):
        k = min(self.num_neighbors, coords.shape[0])
        center_idx = farthest_point_sample(coords, self.num_centers)
        centers = coords[torch.from_numpy(center_idx)]
        group_idx = torch.from_numpy(knn_group(coords, centers, k))
        neighbor_feats = feats[group_idx]  # (K, k, C_in)
        rel = coords[group_idx] - centers[:, None, :]
        grouped = torch.cat([neighbor_feats, rel], dim=-1)
        out = self.mlp(grouped).max(dim=1).values
        return centers, out


class PointEncoder(nn.Module):
    """3-stage set abstraction; initial per-point feature is the coordinate."""

    def __init__(self, stage_points=(512, 128, 64), stage_mlp_dims=None,
                 num_neighbors=16):
        super().__init__()
        if stage_mlp_dims is None:
            stage_mlp_dims = ((320, 512), (512, 128), (512, 64))
        if len(stage_points) != len(stage_mlp_dims):
            raise ValueError("one MLP spec per abstraction stage required")
        stages = []
        in_dim = 3
        for pts, dims in zip(stage_points, stage_mlp_dims):
            stages.append(SetAbstractionStage(in_dim, dims, pts, num_neighbors))
            in_dim = dims[-1]
        self.stages = nn.ModuleList(stages)
        self.out_dim = in_dim

    def forward(self, coords):
        coords = coords.to(torch.get_default_dtype()) \
            if not torch.is_floating_point(coords) else coords
        feats = coords
        pyramid = [PyramidStage(coords, feats)]
        for stage in self.stages:
            coords, feats = stage(coords, feats)
            pyramid.append(PyramidStage(coords, feats))
        return PointFeaturePyramid(pyramid)


class ImageEncoder(nn.Module):
    """4 stages of 3x3 stride-2 convolution + ReLU; spatial side shrinks 16x."""

    def __init__(self, side, channels=(16, 32, 64, 64)):
        super().__init__()
        if side % 16 != 0:
            raise ValueError(f"image side {side} not divisible by 16")
        if len(channels) != 4:
            raise ValueError("image encoder expects 4 channel widths")
        self.side = side
        convs = []
        prev = 3
        for c in channels:
            convs.append(nn.Conv2d(prev, c, kernel_size=3, stride=2, padding=1))
            prev = c
        self.convs = nn.ModuleList(convs)
        self.out_channels = channels[-1]
        self.out_side = side // 16

    def forward(self, image):
        """image: (H, W, 3) in [0, 1] -> (D, H/16, W/16) feature map."""
        if image.shape[0] != self.side or image.shape[1] != self.side:
            raise ValueError(f"expected {self.side}x{self.side} input, "
                             f"got {tuple(image.shape[:2])}")
        x = image.permute(2, 0, 1).unsqueeze(0)
        for conv in self.convs:
            x = F.relu(conv(x))
        return x.squeeze(0)


class FeaturePropagation(nn.Module):
    """Upsample deep features through the pyramid back to the full cloud.

    Each step interpolates with inverse-distance 3-NN weights and applies a
    shared linear + ReLU layer.
    """

    def __init__(self, in_dim, num_stages, hidden_dim=None):
        super().__init__()
        hidden_dim = hidden_dim or in_dim
        layers = []
        prev = in_dim
        for _ in range(num_stages):
            layers.append(nn.Linear(prev, hidden_dim))
            prev = hidden_dim
        self.layers = nn.ModuleList(layers)
        self.out_dim = prev

    def forward(self, pyramid, deep_feats):
        feats = deep_feats
        stages = pyramid.stages
        if deep_feats.shape[0] != stages[-1].coords.shape[0]:
            raise ValueError("deep features not aligned with deepest stage")
        for level, layer in zip(range(len(stages) - 1, 0, -1), self.layers):
            feats = interpolate_features(stages[level - 1].coords,
                                         stages[level].coords, feats)
            feats = F.relu(layer(feats))
        return feats
