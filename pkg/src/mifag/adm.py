"""Dictionary-guided fusion of point features and the per-point decoder.

Point features query the invariant dictionary through cosine-similarity
cross-attention, per-image results are gated by a self-weighted attention
over the image axis, and the mean-fused result is added residually to the
original point features before decoding to a per-point heatmap.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .encoders import FeaturePropagation

COSINE_EPS = 1e-8


def cosine_scores(point_queries, dict_keys, eps=COSINE_EPS):
    """Pairwise cosine similarity, entry (i, p, m) in [-1, 1].

    Input:
        point_queries: (K, d)
        dict_keys: (n, M, d)
    Return:
        (n, K, M)
    """
    qn = point_queries / (point_queries.norm(dim=-1, keepdim=True) + eps)
    kn = dict_keys / (dict_keys.norm(dim=-1, keepdim=True) + eps)
    return torch.einsum("kd,nmd->nkm", qn, kn)


class DictionaryCrossAttention(nn.Module):
    """Cosine-similarity attention of point features over dictionary tokens.

    The softmax runs over the M token axis; raw cosine scores are sharpened
    by a fixed scale before the softmax.
    """

    def __init__(self, point_dim, dict_dim, attn_dim=None, scale=10.0):
        super().__init__()
        attn_dim = attn_dim or dict_dim
        self.scale = scale
        self.wq = nn.Linear(point_dim, attn_dim, bias=False)
        self.wk = nn.Linear(dict_dim, attn_dim, bias=False)
        self.wv = nn.Linear(dict_dim, attn_dim, bias=False)
        self.attn_dim = attn_dim

    def forward(self, point_feats, dict_tokens, return_weights=False):
        """point_feats: (K, C); dict_tokens: (n, M, C) -> (n, K, d)."""
        q = self.wq(point_feats)
        keys = self.wk(dict_tokens)
        values = self.wv(dict_tokens)
        attn = torch.softmax(self.scale * cosine_scores(q, keys), dim=-1)
        weighted = torch.einsum("nkm,nmd->nkd", attn, values)
        if return_weights:
            return weighted, attn
        return weighted


class SelfWeightedAttention(nn.Module):
    """Per-point gating over the image axis.

    A learned linear score per (image, point) is softmaxed over images and
    rescaled by n so that uniform weights are the identity; n=1 is exact
    identity.
    """

    def __init__(self, dim):
        super().__init__()
        self.score = nn.Linear(dim, 1)

    def forward(self, per_image_feats):
        """per_image_feats: (n, K, d) -> (n, K, d)."""
        n = per_image_feats.shape[0]
        if n == 1:
            return per_image_feats
        weights = torch.softmax(self.score(per_image_feats), dim=0)
        return n * weights * per_image_feats


class ResidualFusion(nn.Module):
    """Mean over images, linear projection, residual add onto point features."""

    def __init__(self, attn_dim, point_dim):
        super().__init__()
        self.proj = nn.Linear(attn_dim, point_dim)

    def forward(self, mixed, point_feats):
        return point_feats + self.proj(mixed.mean(dim=0))


@dataclass
class FusedPointFeatures:
    per_image: torch.Tensor  # (n, K, d) dictionary-weighted queries
    mixed: torch.Tensor  # (n, K, d) after self-weighted gating
    fused: torch.Tensor  # (K, C) residual-fused point features
    attention: torch.Tensor  # (n, K, M) row-stochastic over M


class DictionaryFusion(nn.Module):
    """IQDCA + self-weighted gating + residual fusion, end to end."""

    def __init__(self, point_dim, dict_dim, attn_dim=None, scale=10.0):
        super().__init__()
        self.cross = DictionaryCrossAttention(point_dim, dict_dim, attn_dim, scale)
        self.gate = SelfWeightedAttention(self.cross.attn_dim)
        self.fuse = ResidualFusion(self.cross.attn_dim, point_dim)

    def forward(self, point_feats, dict_tokens):
        per_image, attn = self.cross(point_feats, dict_tokens, return_weights=True)
        mixed = self.gate(per_image)
        fused = self.fuse(mixed, point_feats)
        return FusedPointFeatures(per_image, mixed, fused, attn)


class AffordanceDecoder(nn.Module):
    """Propagate fused features to the full cloud and score each point.

    Output is sigmoid-bounded in (0, 1), one score per input point.
    """

    def __init__(self, in_dim, num_stages=3):
        super().__init__()
        self.propagate = FeaturePropagation(in_dim, num_stages)
        hidden = max(1, self.propagate.out_dim // 2)
        self.fc1 = nn.Linear(self.propagate.out_dim, hidden)
        self.fc2 = nn.Linear(hidden, 1)

    def forward(self, fused, pyramid):
        feats = self.propagate(pyramid, fused)
        return torch.sigmoid(self.fc2(torch.relu(self.fc1(feats)))).squeeze(-1)
