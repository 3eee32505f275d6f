"""Spatio-temporal attention over per-frame convolutional features.

Three independent spatial "hops" each produce a sigmoid attention map from
their own convolution, weight the feature map with it, and pool spatially.
A temporal branch scores every frame with a sigmoid of a shared linear map
of the pooled features. Fusion adds the weighted temporal sequence to each
hop's features and sums the three results, keeping the time axis so the
recurrent backend still sees a sequence:

    fused = sum_k (spatial_k + weighted_temporal)
          = sum_k spatial_k + 3 * weighted_temporal
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

N_HOPS = 3


@dataclass
class AttentionParams:
    hop_weights: list[Tensor]   # each (1, C, k, k)
    hop_biases: list[Tensor]    # each (1,)
    temporal_weight: Tensor     # (C, 1)
    temporal_bias: Tensor       # (1,)

    def named(self, prefix: str = "attn") -> dict[str, Tensor]:
        out = {}
        for k in range(N_HOPS):
            out[f"{prefix}.hop{k}.w"] = self.hop_weights[k]
            out[f"{prefix}.hop{k}.b"] = self.hop_biases[k]
        out[f"{prefix}.temporal.w"] = self.temporal_weight
        out[f"{prefix}.temporal.b"] = self.temporal_bias
        return out


@dataclass
class AttentionBundle:
    spatial_maps: list[Tensor]    # 3 x (T, 1, h, w), values in (0, 1)
    spatial_feats: list[Tensor]   # 3 x (T, C)
    temporal_scores: Tensor       # (T,), values in (0, 1)
    weighted_temporal: Tensor     # (T, C)
    fused: Tensor                 # (T, C)


def _xavier(rng: np.random.Generator, shape: tuple[int, ...],
            fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, shape)


def init_attention_params(channels: int, kernel: int,
                          rng: np.random.Generator) -> AttentionParams:
    hop_w, hop_b = [], []
    for _ in range(N_HOPS):
        fan_in = channels * kernel * kernel
        hop_w.append(Tensor(_xavier(rng, (1, channels, kernel, kernel), fan_in, kernel * kernel),
                            requires_grad=True))
        hop_b.append(Tensor(np.zeros(1), requires_grad=True))
    temporal_w = Tensor(_xavier(rng, (channels, 1), channels, 1), requires_grad=True)
    temporal_b = Tensor(np.zeros(1), requires_grad=True)
    return AttentionParams(hop_w, hop_b, temporal_w, temporal_b)


def _suppression_masks(t: int, h: int, w: int,
                       suppress_frames) -> tuple[Tensor, Tensor] | None:
    """Constant 0/1 masks zeroing the given frames' maps and scores."""
    frames = sorted(set(int(f) for f in suppress_frames))
    if not frames:
        return None
    map_mask = np.ones((t, 1, h, w))
    score_mask = np.ones((t, 1))
    for f in frames:
        if not 0 <= f < t:
            raise ValueError(f"suppressed frame {f} out of range for T={t}")
        map_mask[f] = 0.0
        score_mask[f] = 0.0
    return T.constant(map_mask), T.constant(score_mask)


def spatial_attention(feature_map: Tensor, params: AttentionParams,
                      suppress_frames=()) -> tuple[list[Tensor], list[Tensor]]:
    """Per-hop sigmoid maps and the spatially averaged weighted features."""
    t, c, h, w = feature_map.shape
    masks = _suppression_masks(t, h, w, suppress_frames)
    maps, feats = [], []
    for k in range(N_HOPS):
        kernel = params.hop_weights[k].shape[-1]
        attn = T.sigmoid(T.conv2d(feature_map, params.hop_weights[k], params.hop_biases[k],
                                  stride=1, padding=kernel // 2))
        if masks is not None:
            attn = attn * masks[0]
        weighted = T.expand(attn, 1, c) * feature_map
        maps.append(attn)
        feats.append(T.avg_pool2d(weighted))
    return maps, feats


def temporal_attention(frame_features: Tensor, params: AttentionParams,
                       suppress_frames=()) -> tuple[Tensor, Tensor]:
    """Sigmoid score per frame and the score-weighted feature sequence."""
    t, c = frame_features.shape
    scores = T.sigmoid(T.add_rowvec(T.matmul(frame_features, params.temporal_weight),
                                    params.temporal_bias))     # (T, 1)
    masks = _suppression_masks(t, 1, 1, suppress_frames)
    if masks is not None:
        scores = scores * masks[1]
    weighted = T.expand(scores, 1, c) * frame_features
    return scores, weighted


def fuse_attention(spatial_feats: list[Tensor], weighted_temporal: Tensor) -> Tensor:
    """Add the temporal sequence to every hop and sum: linear in each input."""
    if len(spatial_feats) != N_HOPS:
        raise ValueError(f"expected {N_HOPS} hops, got {len(spatial_feats)}")
    for feats in spatial_feats:
        if feats.shape != weighted_temporal.shape:
            raise ValueError(f"fusion shape mismatch: {feats.shape} vs "
                             f"{weighted_temporal.shape}")
    fused = spatial_feats[0] + weighted_temporal
    for feats in spatial_feats[1:]:
        fused = fused + feats + weighted_temporal
    return fused


def attention_forward(feature_map: Tensor, params: AttentionParams,
                      suppress_frames=()) -> AttentionBundle:
    """Full block: spatial hops + temporal scores + fusion, over (T, C, h, w)."""
    maps, feats = spatial_attention(feature_map, params, suppress_frames)
    pooled = T.avg_pool2d(feature_map)                         # (T, C), shared input
    scores, weighted = temporal_attention(pooled, params, suppress_frames)
    fused = fuse_attention(feats, weighted)
    return AttentionBundle(
        spatial_maps=maps,
        spatial_feats=feats,
        temporal_scores=scores.reshape(feature_map.shape[0]),
        weighted_temporal=weighted,
        fused=fused,
    )
