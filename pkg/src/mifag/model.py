"""The full grounding network: encoders, knowledge extraction, fusion, decoder."""

from dataclasses import dataclass

import torch
import torch.nn as nn

from .adm import AffordanceDecoder, DictionaryFusion
from .encoders import ImageEncoder, PointEncoder
from .iam import InvariantKnowledgeExtractor


@dataclass
class ForwardResult:
    pred: torch.Tensor  # (N,) per-point scores in (0, 1)
    logits: torch.Tensor  # (num_affordances,)
    snapshots: list  # [layer][image] image-feature token matrices
    dictionary: torch.Tensor  # (n, M, C)
    fused: object  # FusedPointFeatures
    pyramid: object  # PointFeaturePyramid


class MifagModel(nn.Module):
    def __init__(self, image_side=32, image_channels=(16, 32, 64, 64),
                 stage_points=(128, 32, 16), stage_hidden=(64, 64, 64),
                 neighbors=16, channels=64, tokens=16, layers=4, heads=4,
                 cosine_scale=10.0, num_affordances=17):
        super().__init__()
        self.image_encoder = ImageEncoder(image_side, image_channels)
        mlp_dims = [(h, h) for h in stage_hidden[:-1]]
        mlp_dims.append((stage_hidden[-1], channels))
        self.point_encoder = PointEncoder(stage_points, tuple(mlp_dims), neighbors)
        self.iam = InvariantKnowledgeExtractor(
            self.image_encoder.out_channels, channels, tokens, layers, heads,
            num_affordances)
        self.fusion = DictionaryFusion(channels, channels, channels, cosine_scale)
        self.decoder = AffordanceDecoder(channels, num_stages=len(stage_points))

    def forward(self, coords, images):
        """coords: (N, 3); images: list of (H, W, 3) arrays in [0, 1]."""
        maps = [self.image_encoder(img) for img in images]
        iam_out = self.iam(maps)
        logits = self.iam.classify(iam_out.final_feats)
        pyramid = self.point_encoder(coords)
        fused = self.fusion(pyramid.deepest.features, iam_out.dictionary.tokens)
        pred = self.decoder(fused.fused, pyramid)
        return ForwardResult(pred, logits, iam_out.snapshots,
                             iam_out.dictionary.tokens, fused, pyramid)

    def query_history(self, images):
        """Per-layer query token outputs for the export interface."""
        maps = [self.image_encoder(img) for img in images]
        return self.iam(maps).query_history
