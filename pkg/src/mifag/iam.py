"""Invariant knowledge extraction over a set of reference images.

A stack of iterative dual-branch layers refines learnable query tokens
against per-image feature tokens. The final-layer queries of all images
form the invariant dictionary; per-layer image-feature snapshots feed the
similarity loss, and pooled final features feed the category classifier.
"""

from dataclasses import dataclass

import torch
import torch.nn as nn


def scaled_dot_attention(q, k, v, heads, wq, wk, wv, wo):
    """Multi-head attention core (no residual, no normalization).

    q: (T_q, C), k/v: (T_k, C); each projection is (C, C). Per head the
    scores are q_h k_h^T / sqrt(C/heads), row-softmaxed. Returns the
    concatenated, output-projected result plus the per-head attention
    weights (heads, T_q, T_k).
    """
    c = q.shape[-1]
    if c % heads != 0:
        raise ValueError(f"C={c} not divisible by {heads} heads")
    dh = c // heads
    qp = (q @ wq).reshape(-1, heads, dh).transpose(0, 1)
    kp = (k @ wk).reshape(-1, heads, dh).transpose(0, 1)
    vp = (v @ wv).reshape(-1, heads, dh).transpose(0, 1)
    scores = qp @ kp.transpose(1, 2) / (dh ** 0.5)
    weights = torch.softmax(scores, dim=-1)
    out = weights @ vp  # (heads, T_q, dh)
    out = out.transpose(0, 1).reshape(-1, c) @ wo
    return out, weights


class MultiHeadAttention(nn.Module):
    """Attention block with residual connection and layer normalization."""

    def __init__(self, channels, heads):
        super().__init__()
        if channels % heads != 0:
            raise ValueError(f"C={channels} not divisible by {heads} heads")
        self.heads = heads
        self.wq = nn.Parameter(torch.empty(channels, channels))
        self.wk = nn.Parameter(torch.empty(channels, channels))
        self.wv = nn.Parameter(torch.empty(channels, channels))
        self.wo = nn.Parameter(torch.empty(channels, channels))
        for w in (self.wq, self.wk, self.wv, self.wo):
            nn.init.xavier_uniform_(w)
        self.norm = nn.LayerNorm(channels)

    def forward(self, q, k, v, normalize=True, return_weights=False):
        out, weights = scaled_dot_attention(q, k, v, self.heads,
                                            self.wq, self.wk, self.wv, self.wo)
        out = q + out
        if normalize:
            out = self.norm(out)
        if return_weights:
            return out, weights
        return out


class QueryAggregator(nn.Module):
    """Token-wise mean over the image axis followed by a 2-layer MLP."""

    def __init__(self, channels):
        super().__init__()
        self.fc1 = nn.Linear(channels, channels)
        self.fc2 = nn.Linear(channels, channels)

    def forward(self, queries):
        """queries: list of (M, C) -> aggregated (M, C)."""
        mean = torch.stack(queries, dim=0).mean(dim=0)
        return self.fc2(torch.relu(self.fc1(mean)))


class IterativeLayer(nn.Module):
    """One dual-branch refinement layer (independent parameters per layer)."""

    def __init__(self, channels, heads):
        super().__init__()
        self.query_attn = MultiHeadAttention(channels, heads)
        self.aggregate = QueryAggregator(channels)
        self.self_proj = nn.Linear(channels, channels, bias=False)
        self.self_attn = MultiHeadAttention(channels, heads)
        self.image_attn = MultiHeadAttention(channels, heads)

    def forward(self, queries, feats):
        """queries/feats: lists of (M, C) and (T, C) per image."""
        new_queries = [self.query_attn(q, f, f) for q, f in zip(queries, feats)]
        fused_query = self.aggregate(new_queries)
        new_feats = []
        for f in feats:
            bar = self.self_attn(*[self.self_proj(f)] * 3)
            new_feats.append(self.image_attn(bar, fused_query, fused_query))
        return new_queries, new_feats, fused_query


@dataclass
class InvariantDictionary:
    tokens: torch.Tensor  # (n, M, C), final-layer queries stacked per image
    layer_index: int


@dataclass
class IamOutput:
    dictionary: InvariantDictionary
    snapshots: list  # [layer][image] -> (T, C) token matrix
    final_feats: list  # (T, C) per image
    query_history: list  # [layer][image] -> (M, C)


class InvariantKnowledgeExtractor(nn.Module):
    """The full iterative stack plus the affordance category classifier."""

    def __init__(self, in_dim, channels=64, tokens=16, layers=4, heads=4,
                 num_affordances=17):
        super().__init__()
        self.channels = channels
        self.num_layers = layers
        self.query_tokens = nn.Parameter(torch.randn(tokens, channels) * 0.02)
        self.input_proj = nn.Linear(in_dim, channels)
        self.layers = nn.ModuleList(
            IterativeLayer(channels, heads) for _ in range(layers))
        self.classifier = nn.Linear(channels, num_affordances)

    def tokenize(self, feature_map):
        """(D, H', W') channels-first map -> ((H'W'), C) token matrix."""
        d = feature_map.shape[0]
        return self.input_proj(feature_map.reshape(d, -1).transpose(0, 1))

    def forward(self, feature_maps):
        """feature_maps: list of (D, H', W') per reference image."""
        feats = [self.tokenize(m) for m in feature_maps]
        queries = [self.query_tokens for _ in feats]
        snapshots, history = [], []
        for layer in self.layers:
            queries, feats, _ = layer(queries, feats)
            snapshots.append(list(feats))
            history.append(list(queries))
        dictionary = InvariantDictionary(torch.stack(queries, dim=0),
                                         self.num_layers)
        return IamOutput(dictionary, snapshots, list(feats), history)

    def classify(self, final_feats):
        """Mean-pool tokens, mean over images, linear map to logits."""
        pooled = torch.stack([f.mean(dim=0) for f in final_feats], dim=0).mean(dim=0)
        return self.classifier(pooled)
