"""Discriminator bundle: shared encoding, head contracts, temporal
receptive-field certificates, negative-action sampling."""

import numpy as np
import pytest

from gansim import ops
from gansim.config import desk_config, paper_pacman_config
from gansim.discriminators import (
    DiscriminatorBundle,
    TemporalPyramid,
    sample_negative_actions,
    temporal_receptive_fields,
)
from gansim.rng import SeedStream
from gansim.tensor import ContractError, Tensor, backward, fresh_tape, no_grad


@pytest.fixture
def cfg():
    return desk_config()


@pytest.fixture
def bundle(cfg):
    return DiscriminatorBundle(cfg, SeedStream(41).child("disc"))


class TestSharedEncoder:
    def test_paper_feature_geometry(self):
        d = DiscriminatorBundle(paper_pacman_config(), SeedStream(1).child("d"))
        d.eval()
        with no_grad():
            f = d.encode(Tensor(np.zeros((1, 3, 84, 84), dtype=np.float32)))
        assert f.shape == (1, 64, 3, 3)

    def test_identical_frames_identical_features(self, bundle, cfg, rng):
        bundle.eval()
        x = Tensor(rng.uniform(-1, 1, (2, 3, 16, 16)).astype(np.float32))
        with no_grad():
            f1 = bundle.encode(x).data
            f2 = bundle.encode(x).data
        np.testing.assert_array_equal(f1, f2)

    def test_single_pixel_perturbation_changes_features(self, bundle, cfg, rng):
        bundle.eval()
        x = rng.uniform(-1, 1, (1, 3, 16, 16)).astype(np.float32)
        y = x.copy()
        y[0, 1, 7, 9] += 0.25
        with no_grad():
            fx = bundle.encode(Tensor(x)).data
            fy = bundle.encode(Tensor(y)).data
        assert np.abs(fx - fy).max() > 0


class TestSingleFrameHeads:
    def test_paper_patch_grid_and_full_scalar(self):
        d = DiscriminatorBundle(paper_pacman_config(), SeedStream(1).child("d"))
        d.eval()
        with no_grad():
            f = d.encode(Tensor(np.zeros((2, 3, 84, 84), dtype=np.float32)))
            patch, full = d.judge_single_frame(f)
        assert patch.shape == (2, 1, 3, 3)
        assert full.shape == (2, 1)

    def test_desk_patch_grid(self, bundle, cfg, rng):
        bundle.eval()
        with no_grad():
            f = bundle.encode(Tensor(rng.uniform(-1, 1, (3, 3, 16, 16)).astype(np.float32)))
            patch, full = bundle.judge_single_frame(f)
        assert patch.shape == (3, 1, 2, 2)
        assert full.shape == (3, 1)

    def test_gradients_reach_encoder_from_both_heads(self, bundle, cfg, rng):
        for head in ("patch", "full"):
            bundle.zero_grad()
            with fresh_tape():
                x = Tensor(rng.uniform(-1, 1, (2, 3, 16, 16)).astype(np.float32))
                feats = bundle.encode(x)
                patch, full = bundle.judge_single_frame(feats)
                target = patch if head == "patch" else full
                backward(ops.sum_(target))
            g = bundle.encoder.convs[0].weight.grad
            assert g is not None and np.abs(g).max() > 0


class TestActionPair:
    def test_aux_head_contract_shapes(self, bundle, cfg, rng):
        bundle.eval()
        with no_grad():
            f = bundle.encode(Tensor(rng.uniform(-1, 1, (4, 3, 16, 16)).astype(np.float32)))
            logit, pair = bundle.judge_action_pair(f, f, [0, 1, 2, 3])
            z_pred = bundle.aux.predict_z(pair)
            a_pred = bundle.aux.predict_action(pair)
        assert logit.shape == (4, 1)
        assert z_pred.shape == (4, cfg.z_dim)
        assert a_pred.shape == (4, cfg.action_count)

    def test_negative_sampler_never_returns_the_action(self):
        rng = SeedStream(5).child("neg")
        actions = np.full(10_000, 2, dtype=np.int64)
        neg = sample_negative_actions(actions, 5, rng)
        assert (neg != 2).all()
        counts = np.bincount(neg, minlength=5)
        # uniform over the remaining four actions
        for a in (0, 1, 3, 4):
            assert abs(counts[a] / 10_000 - 0.25) < 0.025
        assert counts[2] == 0

    def test_negative_sampler_two_actions(self):
        rng = SeedStream(6).child("neg")
        neg = sample_negative_actions(np.array([0, 1, 0, 1]), 2, rng)
        np.testing.assert_array_equal(neg, [1, 0, 1, 0])


class TestTemporal:
    def test_receptive_field_arithmetic(self):
        assert temporal_receptive_fields(3) == [(6, 2), (18, 2), (32, 4)]

    def test_level_logit_counts_paper_config(self):
        cfg = paper_pacman_config(temporal_levels=3)
        d = TemporalPyramid(cfg, 64, 3, SeedStream(2).child("t"))
        d.eval()
        with no_grad():
            logits = d(Tensor(np.zeros((1, 64, 32, 3, 3), dtype=np.float32)))
        assert [t.shape[2] for t in logits] == [14, 8, 1]

    def test_sequence_too_short_rejected(self, cfg):
        d = TemporalPyramid(desk_config(temporal_levels=1), 32, 2, SeedStream(2).child("t"))
        d.eval()
        with pytest.raises(ContractError):
            d(Tensor(np.zeros((1, 32, 5, 2, 2), dtype=np.float32)))

    def test_zero_weight_network_outputs_zero(self):
        d = TemporalPyramid(desk_config(temporal_levels=1), 32, 2, SeedStream(2).child("t"))
        for p in d.parameters():
            p.data[...] = 0.0
        d.eval()
        with no_grad():
            logits = d(Tensor(np.ones((1, 32, 8, 2, 2), dtype=np.float32)))
        for t in logits:
            np.testing.assert_array_equal(t.data, 0.0)

    @pytest.mark.parametrize("levels,t_frames", [(1, 10), (2, 20), (3, 32)])
    def test_influence_windows_match_arithmetic_exactly(self, levels, t_frames, rng):
        """Receptive-field certificate: the set of frames influencing each
        logit (probed by perturbation, eval mode) equals the conv-pyramid
        arithmetic window, frame for frame."""
        cfg = paper_pacman_config(temporal_levels=levels)
        d = TemporalPyramid(cfg, 8, 3, SeedStream(3).child("t"))
        d.eval()
        base = rng.standard_normal((1, 8, t_frames, 3, 3)).astype(np.float32)
        with no_grad():
            ref = [t.data.copy() for t in d(Tensor(base))]
        windows = temporal_receptive_fields(levels)
        for frame in range(t_frames):
            pert = base.copy()
            pert[:, :, frame] += 0.5
            with no_grad():
                out = [t.data for t in d(Tensor(pert))]
            for lvl, (rf, jump) in enumerate(windows):
                changed = np.abs(out[lvl] - ref[lvl])[0, 0] > 0
                for n in range(ref[lvl].shape[2]):
                    lo, hi = n * jump, n * jump + rf - 1
                    inside = lo <= frame <= hi
                    assert changed[n] == inside, (
                        f"level {lvl} logit {n}: frame {frame} influence {changed[n]}, "
                        f"window [{lo},{hi}]")


def test_generator_and_discriminator_parameters_disjoint(cfg):
    from gansim.model import Simulator

    sim = Simulator(cfg, SeedStream(7).child("g"))
    disc = DiscriminatorBundle(cfg, SeedStream(7).child("d"))
    g_ids = {p.id for p in sim.parameters()}
    d_ids = {p.id for p in disc.adversarial_parameters()}
    aux_ids = {p.id for p in disc.aux.parameters()}
    assert not g_ids & d_ids
    assert not aux_ids & d_ids  # aux heads train with the generator objective
