"""End-to-end alternating optimization.

Per iteration: one generator step (GAN terms from all three judges, action
cross-entropy, noise-recovery L2, image/feature reconstruction, and for the
disentangling configuration the memory cycle term and the dynamic-mask
regularizer), then one discriminator step (logistic real/fake terms plus the
gradient penalty on real data).  A warm-up schedule feeds real frames into
the engine early in training and anneals to the single initial frame.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn, ops
from .checkpoint import save_checkpoint
from .config import LossWeights, ModelConfig, TrainConfig
from .data import frame_to_float
from .discriminators import DiscriminatorBundle, sample_negative_actions
from .model import Rollout, Simulator
from .optim import Adam
from .renderer import STATIC, DYNAMIC
from .rng import SeedStream
from .tensor import (ContractError, NumericError, Tensor, backward, grad_of,
                     reset_tape)


class DataError(ValueError):
    pass


def warmup_real_frames(epoch: int, cfg: TrainConfig) -> int:
    """Linear anneal from warmup_initial at epoch 1 to 1 at the final epoch
    (half-up rounding); clamped at 1 afterward.  x_0 is always real."""
    if epoch < 1:
        raise ContractError("epochs are 1-indexed")
    if epoch >= cfg.warmup_final_epoch or cfg.warmup_initial <= 1:
        return 1
    span = cfg.warmup_final_epoch - 1
    value = cfg.warmup_initial - (cfg.warmup_initial - 1) * (epoch - 1) / span
    return max(1, int(np.floor(value + 0.5)))


def softplus_mean(x: Tensor) -> Tensor:
    return ops.mean(ops.softplus(x))


def g_loss_from_logits(logits: Tensor) -> Tensor:
    """Non-saturating generator objective: softplus(-D)."""
    return softplus_mean(ops.neg(logits))


def d_loss_real(logits: Tensor) -> Tensor:
    return softplus_mean(ops.neg(logits))


def d_loss_fake(logits: Tensor) -> Tensor:
    return softplus_mean(logits)


@dataclass
class LossBreakdown:
    terms: dict
    total: float

    def resums(self, rtol: float = 1e-6) -> bool:
        # 1e-6 is relative: the total is accumulated in f32, whose ulp at
        # typical magnitudes already exceeds 1e-6 absolute
        return abs(sum(self.terms.values()) - self.total) <= rtol * max(1.0, abs(self.total))


@dataclass
class StepMetrics:
    step: int
    g: LossBreakdown
    d: LossBreakdown
    wall_time: float

    def to_json(self) -> str:
        row = {"step": self.step, "wall_time": self.wall_time, "g_total": self.g.total,
               "d_total": self.d.total}
        row.update({f"g_{k}": v for k, v in self.g.terms.items()})
        row.update({f"d_{k}": v for k, v in self.d.terms.items()})
        return json.dumps(row, sort_keys=True)


class Trainer:
    def __init__(self, model_config: ModelConfig, train_config: TrainConfig,
                 weights: LossWeights | None = None, out_dir=None):
        self.config = model_config
        self.tc = train_config
        self.w = weights or LossWeights()
        self.root = SeedStream(train_config.seed)
        self.sim = Simulator(model_config, self.root.child("generator"))
        self.disc = DiscriminatorBundle(model_config, self.root.child("discriminator"))
        min_frames = self.disc.temporal.min_frames()
        if train_config.sequence_length < min_frames:
            raise ContractError(
                f"sequence_length {train_config.sequence_length} is shorter than the "
                f"temporal judge's deepest receptive field ({min_frames})")
        self.g_params = self.sim.parameters() + self.disc.aux.parameters()
        self.d_params = self.disc.adversarial_parameters()
        self.g_opt = Adam(self.g_params, lr=train_config.lr)
        self.d_opt = Adam(self.d_params, lr=train_config.lr)
        self.z_rng = self.root.child("z")
        self.neg_rng = self.root.child("negatives")
        self.batch_rng = self.root.child("batching")
        self.rollout_rng = self.root.child("rollouts")
        self.out_dir = Path(out_dir) if out_dir else None
        self.step_count = 0
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    # ------------------------------------------------------------------
    # data plumbing
    # ------------------------------------------------------------------

    def _check_dataset(self, episodes):
        if len(episodes) < self.tc.batch_size:
            raise DataError(f"dataset has {len(episodes)} episodes; "
                            f"batch_size is {self.tc.batch_size}")
        need = self.tc.sequence_length + 1
        for i, ep in enumerate(episodes):
            if len(ep.frames) < need:
                raise DataError(f"episode {i} has {len(ep.frames)} frames; "
                                f"need >= {need} for T={self.tc.sequence_length}")

    def make_batch(self, episodes, indices):
        """Random windows of T+1 frames -> (frames list of (B,3,S,S) Tensors,
        actions (B,T))."""
        t_len = self.tc.sequence_length
        frames = []
        actions = []
        for idx in indices:
            ep = episodes[idx]
            start = int(self.batch_rng.integers(0, len(ep.frames) - t_len))
            frames.append(frame_to_float(ep.frames[start:start + t_len + 1]))
            actions.append(ep.actions[start:start + t_len])
        stacked = np.stack(frames)  # (B, T+1, 3, S, S)
        frame_tensors = [Tensor(stacked[:, t]) for t in range(t_len + 1)]
        return frame_tensors, np.stack(actions).astype(np.int64)

    # ------------------------------------------------------------------
    # generator objective
    # ------------------------------------------------------------------

    def _encode_stack(self, frames: list) -> Tensor:
        """Encode a list of per-step (B,...) frames in one discriminator
        pass; returns features (len(frames)*B, C, h, w), t-major."""
        return self.disc.encode(ops.concat(frames, axis=0))

    def _pair_features(self, feats: Tensor, batch: int, steps: int):
        """Consecutive-step pair features from a t-major feature stack."""
        c, h, w = feats.shape[1], feats.shape[2], feats.shape[3]
        pairs = []
        for t in range(steps - 1):
            f0 = ops.slice_nd(feats, (t * batch, 0, 0, 0), (batch, c, h, w))
            f1 = ops.slice_nd(feats, ((t + 1) * batch, 0, 0, 0), (batch, c, h, w))
            pairs.append(self.disc.action.pair_feature(f0, f1))
        return pairs

    def _temporal_feats(self, feats: Tensor, batch: int, steps: int, skip_first: int) -> Tensor:
        c, h, w = feats.shape[1], feats.shape[2], feats.shape[3]
        seq = ops.slice_nd(feats, (skip_first * batch, 0, 0, 0),
                           ((steps - skip_first) * batch, c, h, w))
        seq = ops.reshape(seq, (steps - skip_first, batch, c, h, w))
        return ops.permute(seq, (1, 2, 0, 3, 4))

    def generator_loss(self, rollout: Rollout, real_frames: list, actions: np.ndarray,
                       zs: list) -> tuple[Tensor, LossBreakdown]:
        """Total objective with a per-term breakdown (breakdown always
        re-sums to the reported total)."""
        t_len = actions.shape[1]
        batch = actions.shape[0]
        gen_seq = [real_frames[0]] + rollout.frames  # x0 real, then generated

        feats_gen = self._encode_stack(gen_seq)
        feats_real = self._encode_stack(real_frames)

        # single-frame judges over generated frames (skip the real x0)
        c, h, w = feats_gen.shape[1], feats_gen.shape[2], feats_gen.shape[3]
        gen_only = ops.slice_nd(feats_gen, (batch, 0, 0, 0), (t_len * batch, c, h, w))
        patch, full = self.disc.judge_single_frame(gen_only)
        single = ops.scale(ops.add(g_loss_from_logits(patch), g_loss_from_logits(full)), 0.5)

        # action-conditioned judge over generated pairs
        pairs = self._pair_features(feats_gen, batch, t_len + 1)
        flat_actions = actions.T.reshape(-1)  # t-major to match the pair list
        pair_stack = ops.concat(pairs, axis=0)
        action_logits = self.disc.action.logit(pair_stack, flat_actions)
        action_gan = g_loss_from_logits(action_logits)

        # temporal judge over the generated sequence
        temporal_logits = self.disc.judge_temporal(
            self._temporal_feats(feats_gen, batch, t_len + 1, skip_first=1))
        temporal = None
        for lg in temporal_logits:
            term = g_loss_from_logits(lg)
            temporal = term if temporal is None else ops.add(temporal, term)
        temporal = ops.scale(temporal, 1.0 / len(temporal_logits))

        gan = ops.add(ops.add(single, action_gan), temporal)

        # aux heads: recover the action and the noise from generated pairs
        action_ce = ops.cross_entropy_with_logits(self.disc.aux.predict_action(pair_stack),
                                                  flat_actions)
        z_target = ops.concat(zs, axis=0)
        z_pred = self.disc.aux.predict_z(pair_stack)
        diff = ops.sub(z_pred, z_target)
        info = ops.mean(ops.sum_(ops.mul(diff, diff), axis=1))

        # reconstruction in image and feature space
        recon = None
        for t in range(t_len):
            term = ops.mse(rollout.frames[t], real_frames[t + 1])
            recon = term if recon is None else ops.add(recon, term)
        recon = ops.scale(recon, 1.0 / t_len)
        c_r = feats_real.shape[1]
        real_tail = ops.slice_nd(feats_real, (batch, 0, 0, 0),
                                 (t_len * batch, c_r, feats_real.shape[2], feats_real.shape[3]))
        feat = ops.mse(gen_only, real_tail)

        terms = {
            "gan": gan,
            "action": ops.scale(action_ce, self.w.lambda_a),
            "info": ops.scale(info, self.w.lambda_i),
            "recon": ops.scale(recon, self.w.lambda_r),
            "feat": ops.scale(feat, self.w.lambda_f),
        }
        cycle_term = None
        if self.sim.disentangled:
            if self.w.lambda_c > 0:
                cycle_term = ops.scale(self.cycle_loss(rollout), self.w.lambda_c)
                terms["cycle"] = cycle_term
            terms["mask_reg"] = ops.scale(self.dynamic_mask_area(rollout), self.w.mask_reg)

        main_total = None
        for name, term in terms.items():
            if name == "cycle":
                continue
            main_total = term if main_total is None else ops.add(main_total, term)
        report_total = main_total if cycle_term is None else ops.add(main_total, cycle_term)
        if not np.isfinite(report_total.data).all():
            bad = [k for k, v in terms.items() if not np.isfinite(v.data).all()]
            raise NumericError(f"non-finite generator loss terms: {bad}")
        breakdown = LossBreakdown(terms={k: v.item() for k, v in terms.items()},
                                  total=report_total.item())
        return main_total, cycle_term, breakdown

    def cycle_loss(self, rollout: Rollout) -> Tensor:
        """Sum over t of the distance between the static component rendered
        from m_t and from the end-of-rollout re-read m_hat_t.  Renderer
        parameters are frozen here: consistency pressure trains the dynamics
        engine and the memory networks only."""
        if not self.sim.disentangled:
            raise ContractError("cycle loss requires the disentangling renderer")
        rereads = self.sim.reread_memory(rollout)
        total = None
        with nn.frozen_parameters():
            for m_t, m_hat in zip(rollout.ms, rereads):
                x_m = self.sim.renderer.component_content(STATIC, m_t)
                x_hat = self.sim.renderer.component_content(STATIC, m_hat)
                term = ops.mse(x_m, x_hat)
                total = term if total is None else ops.add(total, term)
        return total

    def dynamic_mask_area(self, rollout: Rollout) -> Tensor:
        """Mean over steps of the dynamic component's total fine-mask mass
        (keeps the static path in use; trains the renderer too)."""
        total = None
        for packets in rollout.packets_seq:
            area = ops.sum_(packets[DYNAMIC].fine_mask, axis=(1, 2, 3))
            term = ops.mean(area)
            total = term if total is None else ops.add(total, term)
        return ops.scale(total, 1.0 / len(rollout.packets_seq))

    # ------------------------------------------------------------------
    # discriminator objective
    # ------------------------------------------------------------------

    def discriminator_loss(self, real_frames: list, gen_frames: list,
                           actions: np.ndarray) -> tuple[Tensor, LossBreakdown, Tensor]:
        """Logistic terms over all heads + R1 penalty on real data.  The
        generated frames must already be detached."""
        t_len = actions.shape[1]
        batch = actions.shape[0]

        real_all = Tensor(np.concatenate([f.data for f in real_frames], axis=0),
                          requires_grad=True)
        feats_real = self.disc.encode(real_all)
        gen_seq = [real_frames[0]] + gen_frames
        feats_gen = self._encode_stack(gen_seq)

        c, h, w = feats_real.shape[1], feats_real.shape[2], feats_real.shape[3]
        real_tail = ops.slice_nd(feats_real, (batch, 0, 0, 0), (t_len * batch, c, h, w))
        gen_tail = ops.slice_nd(feats_gen, (batch, 0, 0, 0), (t_len * batch, c, h, w))

        patch_r, full_r = self.disc.judge_single_frame(real_tail)
        patch_g, full_g = self.disc.judge_single_frame(gen_tail)
        single = ops.scale(
            ops.add(ops.add(d_loss_real(patch_r), d_loss_fake(patch_g)),
                    ops.add(d_loss_real(full_r), d_loss_fake(full_g))), 0.5)

        pairs_real = self._pair_features(feats_real, batch, t_len + 1)
        pairs_gen = self._pair_features(feats_gen, batch, t_len + 1)
        flat_actions = actions.T.reshape(-1)
        neg_actions = sample_negative_actions(flat_actions, self.config.action_count,
                                              self.neg_rng)
        pair_real_stack = ops.concat(pairs_real, axis=0)
        pair_gen_stack = ops.concat(pairs_gen, axis=0)
        logits_real_a = self.disc.action.logit(pair_real_stack, flat_actions)
        logits_real_neg = self.disc.action.logit(pair_real_stack, neg_actions)
        logits_gen_a = self.disc.action.logit(pair_gen_stack, flat_actions)
        action = ops.scale(ops.add(ops.add(d_loss_real(logits_real_a),
                                           d_loss_fake(logits_real_neg)),
                                   d_loss_fake(logits_gen_a)), 1.0 / 3.0)

        temporal_real = self.disc.judge_temporal(
            self._temporal_feats(feats_real, batch, t_len + 1, skip_first=1))
        temporal_gen = self.disc.judge_temporal(
            self._temporal_feats(feats_gen, batch, t_len + 1, skip_first=1))
        temporal = None
        for lr_, lg_ in zip(temporal_real, temporal_gen):
            term = ops.add(d_loss_real(lr_), d_loss_fake(lg_))
            temporal = term if temporal is None else ops.add(temporal, term)
        temporal = ops.scale(temporal, 1.0 / len(temporal_real))

        # R1: squared input-gradient of the real-data logits
        real_score = ops.add(ops.add(ops.sum_(patch_r), ops.sum_(full_r)),
                             ops.add(ops.sum_(logits_real_a), ops.sum_(temporal_real[0])))
        for lg in temporal_real[1:]:
            real_score = ops.add(real_score, ops.sum_(lg))
        penalty = self.r1_penalty(real_score, real_all)

        terms = {"single": single, "action": action, "temporal": temporal, "r1": penalty}
        total = None
        for term in terms.values():
            total = term if total is None else ops.add(total, term)
        breakdown = LossBreakdown(terms={k: v.item() for k, v in terms.items()},
                                  total=total.item())
        return total, breakdown, real_all

    def r1_penalty(self, real_score: Tensor, real_inputs: Tensor) -> Tensor:
        """gamma * E[ ||d(sum of real logits)/d(real frames)||^2 ], the
        expectation taken per frame sample."""
        if self.w.gamma_r1 == 0:
            return ops.zeros(())
        (gx,) = grad_of(real_score, [real_inputs], create_graph=True)
        per_sample = ops.sum_(ops.mul(gx, gx), axis=(1, 2, 3))
        return ops.scale(ops.mean(per_sample), self.w.gamma_r1)

    # ------------------------------------------------------------------
    # steps and loop
    # ------------------------------------------------------------------

    def generator_step(self, real_frames, actions, zs, warm: int):
        """Forward rollout, total generator objective, Adam on the
        generator-side parameters (aux heads included).

        The cycle term is accumulated through its own gradient walk that
        excludes renderer parameters outright: besides the frozen render
        branches, the term also reaches the renderer through the closed
        generation loop (generated frames feed the next step's encoder), and
        the rendering engine must not train on consistency pressure at all.
        """
        roll = self.sim.rollout(real_frames, actions, zs,
                                min(warm, actions.shape[1]),
                                self.rollout_rng.child(f"it{self.step_count}"))
        main_total, cycle_term, breakdown = self.generator_loss(roll, real_frames, actions, zs)
        self.accumulate_generator_gradients(main_total, cycle_term)
        reset_tape()
        self.g_opt.step()
        self._zero_all()
        return breakdown, roll

    def accumulate_generator_gradients(self, main_total: Tensor, cycle_term) -> None:
        """Populate .grad on the generator-side parameters; the cycle term's
        walk excludes renderer parameters."""
        grads = [g.data.copy() for g in grad_of(main_total, self.g_params)]
        if cycle_term is not None:
            renderer_ids = {p.id for p in self.sim.renderer.parameters()}
            cycle_params = [p for p in self.g_params if p.id not in renderer_ids]
            cycle_grads = iter(grad_of(cycle_term, cycle_params))
            for i, p in enumerate(self.g_params):
                if p.id not in renderer_ids:
                    grads[i] += next(cycle_grads).data
        for p, g in zip(self.g_params, grads):
            p.grad = g if p.grad is None else p.grad + g

    def discriminator_step(self, real_frames, gen_frames, actions):
        """One adversary update on a detached rollout."""
        gen_detached = [f.detach() for f in gen_frames]
        d_total, breakdown, _ = self.discriminator_loss(real_frames, gen_detached, actions)
        backward(d_total, params=self.d_params)
        self.d_opt.step()
        self._zero_all()
        return breakdown

    def run_step(self, episodes, indices, epoch: int) -> StepMetrics:
        t0 = time.monotonic()
        real_frames, actions = self.make_batch(episodes, indices)
        t_len = actions.shape[1]
        batch = actions.shape[0]
        zs = [Tensor(self.z_rng.normal((batch, self.config.z_dim))) for _ in range(t_len)]
        warm = warmup_real_frames(epoch, self.tc)
        g_breakdown, roll = self.generator_step(real_frames, actions, zs, warm)
        d_breakdown = self.discriminator_step(real_frames, roll.frames, actions)
        self.step_count += 1
        return StepMetrics(step=self.step_count, g=g_breakdown, d=d_breakdown,
                           wall_time=time.monotonic() - t0)

    def _zero_all(self):
        for p in self.g_params:
            p.grad = None
        for p in self.d_params:
            p.grad = None

    def state_tensors(self) -> dict:
        out = {f"generator.{k}": v for k, v in self.sim.state().items()}
        out.update({f"discriminator.{k}": v for k, v in self.disc.state().items()})
        return out

    def save(self, path, meta=None):
        save_checkpoint(path, self.config,
                        self.state_tensors(),
                        meta={"step": self.step_count, **(meta or {})})

    def load_state(self, tensors: dict):
        gen = {k[len("generator."):]: v for k, v in tensors.items() if k.startswith("generator.")}
        dis = {k[len("discriminator."):]: v for k, v in tensors.items()
               if k.startswith("discriminator.")}
        self.sim.load_state(gen)
        if dis:
            self.disc.load_state(dis)

    def train(self, episodes, log_path=None, on_step=None) -> list:
        """Alternating optimization over the dataset; returns the metric
        history.  Checkpoints (init, periodic, final) land in out_dir."""
        self._check_dataset(episodes)
        history = []
        log_file = open(log_path, "a") if log_path else None
        if self.out_dir:
            self.save(self.out_dir / "checkpoint_init.ggck")
        try:
            done = False
            for epoch in range(1, self.tc.epochs + 1):
                order = np.arange(len(episodes))
                self.batch_rng.shuffle(order)
                for lo in range(0, len(order) - self.tc.batch_size + 1, self.tc.batch_size):
                    indices = order[lo:lo + self.tc.batch_size]
                    metrics = self.run_step(episodes, indices, epoch)
                    history.append(metrics)
                    if log_file:
                        log_file.write(metrics.to_json() + "\n")
                        log_file.flush()
                    if on_step:
                        on_step(metrics)
                    if self.out_dir and self.step_count % self.tc.checkpoint_interval == 0:
                        self.save(self.out_dir / f"checkpoint_{self.step_count:06d}.ggck")
                    if self.tc.max_iterations and self.step_count >= self.tc.max_iterations:
                        done = True
                        break
                if done:
                    break
        finally:
            if log_file:
                log_file.close()
        if self.out_dir and self.step_count > 0:
            self.save(self.out_dir / "checkpoint_final.ggck")
        return history
