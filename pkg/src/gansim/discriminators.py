"""Three adversarial judges over a shared frame encoding.

* single-frame: a patch grid of logits plus one full-frame logit
* action-conditioned: scores whether two consecutive frames are consistent
  with the action (plus shared-trunk aux heads recovering z and the action)
* temporal: hierarchical 3D-conv pyramid; level heads see exactly 6, 18 and
  32 frames (true receptive fields, certified by a perturbation probe)

The published layer table for the pyramid yields true windows of 4/7/17
under standard receptive-field arithmetic while the text claims 6/18/32;
the kernels/strides here are chosen so the claimed windows hold exactly.
"""

from __future__ import annotations

import numpy as np

from . import nn, ops
from .config import ModelConfig
from .rng import SeedStream
from .tensor import ContractError, ShapeError, Tensor


class SharedEncoder(nn.Module):
    def __init__(self, config: ModelConfig, rng: SeedStream):
        super().__init__()
        self.config = config
        s = config.image_size
        if config.preset == "pacman":
            specs = [(16, 5, 2, 0), (32, 5, 2, 0), (64, 3, 2, 0), (64, 3, 2, 0)]
        else:
            specs = [(16, 3, 2, 1), (32, 3, 2, 1), (config.disc_dim, 3, 2, 1)]
        in_ch = config.image_channels
        self.convs = []
        self.norms = []
        for i, (ch, k, st, p) in enumerate(specs):
            conv = nn.Conv2d(in_ch, ch, k, rng.child(f"conv{i}"), stride=st, padding=p)
            norm = nn.BatchNorm(ch)
            self._modules[f"conv{i}"] = conv
            self._modules[f"norm{i}"] = norm
            self.convs.append(conv)
            self.norms.append(norm)
            s = (s + 2 * p - k) // st + 1
            in_ch = ch
        self.out_channels = in_ch
        self.out_size = s

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[2] != self.config.image_size:
            raise ShapeError(f"encoder expects (B,3,{self.config.image_size},"
                             f"{self.config.image_size}), got {tuple(x.shape)}")
        for conv, norm in zip(self.convs, self.norms):
            x = ops.leaky_relu(norm(conv(x)))
        return x


class SingleFrameHeads(nn.Module):
    def __init__(self, config: ModelConfig, enc_ch: int, enc_size: int, rng: SeedStream):
        super().__init__()
        dim = config.disc_dim
        if config.preset == "pacman":
            # patch: 3x3 logits; full: one logit
            self.patch_c0 = nn.Conv2d(enc_ch, dim, 2, rng.child("p0"), stride=1, padding=1)
            self.patch_n0 = nn.BatchNorm(dim)
            self.patch_c1 = nn.Conv2d(dim, 1, 1, rng.child("p1"), stride=2, padding=1)
            self.full_c0 = nn.Conv2d(enc_ch, dim, 2, rng.child("f0"), stride=1, padding=0)
            self.full_n0 = nn.BatchNorm(dim)
            self.full_c1 = nn.Conv2d(dim, 1, 2, rng.child("f1"), stride=1, padding=0)
        else:
            self.patch_c0 = nn.Conv2d(enc_ch, dim, 1, rng.child("p0"))
            self.patch_n0 = nn.BatchNorm(dim)
            self.patch_c1 = nn.Conv2d(dim, 1, 1, rng.child("p1"))
            self.full_c0 = nn.Conv2d(enc_ch, dim, enc_size, rng.child("f0"))
            self.full_n0 = nn.BatchNorm(dim)
            self.full_c1 = nn.Conv2d(dim, 1, 1, rng.child("f1"))

    def __call__(self, feats: Tensor):
        patch = self.patch_c1(ops.leaky_relu(self.patch_n0(self.patch_c0(feats))))
        full = self.full_c1(ops.leaky_relu(self.full_n0(self.full_c0(feats))))
        b = feats.shape[0]
        return patch, ops.reshape(full, (b, 1))


class ActionPairJudge(nn.Module):
    """Merges two frame encodings, conditions on the action embedding."""

    def __init__(self, config: ModelConfig, enc_ch: int, enc_size: int, rng: SeedStream):
        super().__init__()
        dim = config.disc_dim
        self.dim = dim
        self.embed = nn.Linear(config.action_count, dim, rng.child("embed"), bias=False)
        self.merge = nn.Conv2d(2 * enc_ch, dim, enc_size, rng.child("merge"))
        self.merge_norm = nn.BatchNorm(dim)
        self.judge_l0 = nn.Linear(2 * dim, dim, rng.child("judge_l0"))
        self.judge_norm = nn.BatchNorm(dim)
        self.judge_l1 = nn.Linear(dim, 1, rng.child("judge_l1"))

    def pair_feature(self, f0: Tensor, f1: Tensor) -> Tensor:
        merged = self.merge(ops.concat([f0, f1], axis=1))
        merged = ops.leaky_relu(self.merge_norm(merged))
        return ops.reshape(merged, (f0.shape[0], self.dim))

    def logit(self, pair: Tensor, actions) -> Tensor:
        emb = self.embed(ops.one_hot(np.asarray(actions, dtype=np.int64),
                                     self.embed.weight.shape[0]))
        x = ops.concat([emb, pair], axis=1)
        return self.judge_l1(ops.leaky_relu(self.judge_norm(self.judge_l0(x))))


class AuxHeads(nn.Module):
    """InfoGAN-style heads on the pair trunk: phi recovers z, psi the action.

    They share every layer with the action judge except these final linears;
    their parameters train with the generator objective.
    """

    def __init__(self, config: ModelConfig, dim: int, rng: SeedStream):
        super().__init__()
        self.z_head = nn.Linear(dim, config.z_dim, rng.child("z_head"))
        self.action_head = nn.Linear(dim, config.action_count, rng.child("action_head"))

    def predict_z(self, pair: Tensor) -> Tensor:
        return self.z_head(pair)

    def predict_action(self, pair: Tensor) -> Tensor:
        return self.action_head(pair)


# temporal chains per level: (kernel, temporal stride) pairs for the trunk
# extension, then the head kernel.  True receptive fields: 6, 18, 32.
_LEVEL_TRUNKS = (((2, 2), (3, 1)), ((4, 1),), ((5, 2),))
_LEVEL_HEADS = (1, 4, 4)


def temporal_receptive_fields(levels: int):
    """(rf, jump) per level head under standard conv arithmetic."""
    out = []
    rf, jump = 1, 1
    for lvl in range(levels):
        for k, s in _LEVEL_TRUNKS[lvl]:
            rf = rf + (k - 1) * jump
            jump *= s
        out.append((rf + (_LEVEL_HEADS[lvl] - 1) * jump, jump))
    return out


class TemporalPyramid(nn.Module):
    def __init__(self, config: ModelConfig, enc_ch: int, enc_size: int, rng: SeedStream):
        super().__init__()
        self.levels = config.temporal_levels
        if not 1 <= self.levels <= 3:
            raise ContractError("temporal_levels must be 1..3")
        if config.preset == "pacman":
            widths = (64, 128, 256, 512)
        else:
            widths = (16, 32, 48, 64)
        chain_ch = [widths[0], widths[1], widths[2], widths[3]]
        self.blocks = []   # per level: list of (conv, norm)
        self.heads = []
        in_ch = enc_ch
        spatial = enc_size
        ch_iter = iter(chain_ch)
        for lvl in range(self.levels):
            blocks = []
            for j, (k, s) in enumerate(_LEVEL_TRUNKS[lvl]):
                ks = 2 if spatial >= 2 else 1
                ch = next(ch_iter)
                conv = nn.Conv3d(in_ch, ch, (k, ks, ks), rng.child(f"l{lvl}c{j}"),
                                 stride=(s, 1, 1), padding=0)
                norm = nn.BatchNorm(ch)
                self._modules[f"l{lvl}c{j}"] = conv
                self._modules[f"l{lvl}n{j}"] = norm
                blocks.append((conv, norm))
                spatial = spatial - ks + 1
                in_ch = ch
            head = nn.Conv3d(in_ch, 1, (_LEVEL_HEADS[lvl], spatial, spatial),
                             rng.child(f"head{lvl}"), stride=1, padding=0)
            self._modules[f"head{lvl}"] = head
            self.blocks.append(blocks)
            self.heads.append(head)

    def min_frames(self, levels: int | None = None) -> int:
        rf, _ = temporal_receptive_fields(levels or self.levels)[-1]
        return rf

    def __call__(self, feats: Tensor) -> list[Tensor]:
        """feats (B, C, T, h, w) -> one logit tensor per level (B, 1, t_l)."""
        if feats.ndim != 5:
            raise ShapeError("temporal judge expects (B,C,T,h,w) features")
        if feats.shape[2] < self.min_frames():
            raise ContractError(
                f"sequence of {feats.shape[2]} frames shorter than the deepest "
                f"receptive field ({self.min_frames()})")
        x = feats
        logits = []
        for blocks, head in zip(self.blocks, self.heads):
            for conv, norm in blocks:
                x = ops.leaky_relu(norm(conv(x)))
            y = head(x)
            b = y.shape[0]
            logits.append(ops.reshape(y, (b, 1, y.shape[2])))
        return logits


class DiscriminatorBundle(nn.Module):
    def __init__(self, config: ModelConfig, rng: SeedStream):
        super().__init__()
        self.config = config
        self.encoder = SharedEncoder(config, rng.child("encoder"))
        ch, size = self.encoder.out_channels, self.encoder.out_size
        self.single = SingleFrameHeads(config, ch, size, rng.child("single"))
        self.action = ActionPairJudge(config, ch, size, rng.child("action"))
        self.aux = AuxHeads(config, config.disc_dim, rng.child("aux"))
        self.temporal = TemporalPyramid(config, ch, size, rng.child("temporal"))

    def encode(self, frames: Tensor) -> Tensor:
        return self.encoder(frames)

    def judge_single_frame(self, feats: Tensor):
        return self.single(feats)

    def judge_action_pair(self, f0: Tensor, f1: Tensor, actions):
        pair = self.action.pair_feature(f0, f1)
        return self.action.logit(pair, actions), pair

    def judge_temporal(self, feats_seq: Tensor) -> list[Tensor]:
        return self.temporal(feats_seq)

    def adversarial_parameters(self):
        """Everything the discriminator optimizer owns (aux heads excluded)."""
        aux_ids = {p.id for p in self.aux.parameters()}
        return [p for p in self.parameters() if p.id not in aux_ids]


def sample_negative_actions(actions, action_count: int, rng: SeedStream) -> np.ndarray:
    """Uniform over A \\ {a} per element."""
    idx = np.asarray(actions, dtype=np.int64)
    if action_count < 2:
        raise ContractError("need at least 2 actions to sample a negative")
    draw = rng.integers(0, action_count - 1, idx.shape)
    return np.where(draw >= idx, draw + 1, draw).astype(np.int64)
