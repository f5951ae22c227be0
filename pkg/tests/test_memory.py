"""Memory-module algebra: shift/write/read identities, kernel flip sharing,
loop closure, differentiability of all three subnetworks."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gansim import ops
from gansim.config import desk_config
from gansim.memory import MemoryModule, MemoryState, init_memory_state, resize_block
from gansim.rng import SeedStream
from gansim.tensor import ContractError, Tensor, backward, fresh_tape, no_grad


@pytest.fixture
def cfg():
    return desk_config()


@pytest.fixture
def module(cfg):
    return MemoryModule(cfg, SeedStream(11).child("memory"))


def delta_kernel(b, di, dj):
    """One-hot 3x3 kernel at offset (di, dj) from the center."""
    w = np.zeros((b, 3, 3), dtype=np.float32)
    w[:, 1 + di, 1 + dj] = 1.0
    return Tensor(w)


def shift_oracle(alpha, w):
    """Naive 9-term weighted shift sum + renormalization."""
    b, n, _ = alpha.shape
    pad = np.pad(alpha, ((0, 0), (1, 1), (1, 1)))
    out = np.zeros_like(alpha)
    for i in range(3):
        for j in range(3):
            out += w[:, i, j][:, None, None] * pad[:, i:i + n, j:j + n]
    return out / (out.sum(axis=(1, 2), keepdims=True) + 1e-12)


class TestShiftKernels:
    def test_kernels_sum_to_one(self, module, cfg):
        with no_grad():
            k = module.all_kernels().data
        np.testing.assert_allclose(k.sum(axis=(1, 2)), 1.0, atol=1e-6)
        assert (k >= 0).all()

    def test_counterpart_kernel_is_exact_double_flip(self, module, cfg):
        with no_grad():
            k = module.all_kernels().data
        for a, ahat in (("left", "right"), ("up", "down")):
            ka = k[cfg.action_index(a)]
            kh = k[cfg.action_index(ahat)]
            np.testing.assert_array_equal(kh, ka[::-1, ::-1])

    def test_stay_registered_without_counterpart(self, module, cfg):
        # 'stay' maps to its own (unflipped) kernel; nothing forces symmetry
        i = cfg.action_index("stay")
        assert module._flip.data[i, 0] == 0.0
        assert module._source.data[i, i] == 1.0

    def test_action_out_of_range(self, module):
        with pytest.raises(ContractError):
            module.compute_shift_kernel([99])


class TestShiftAttention:
    def test_gate_closed_is_identity(self, module, cfg, rng):
        state = init_memory_state(2, cfg.memory_N, cfg.memory_D, SeedStream(0))
        w = Tensor(rng.dirichlet(np.ones(9), size=2).reshape(2, 3, 3).astype(np.float32))
        with no_grad():
            out = module.shift_attention(state, w, ops.zeros((2, 1)))
        np.testing.assert_array_equal(out.data, state.alpha.data)

    def test_delta_kernel_shifts_one_cell(self, module, cfg):
        state = init_memory_state(1, cfg.memory_N, cfg.memory_D, SeedStream(0))
        c = cfg.memory_N // 2
        with no_grad():
            out = module.shift_attention(state, delta_kernel(1, 1, 0), ops.ones((1, 1))).data
        expected = np.zeros_like(out)
        expected[0, c - 1, c] = 1.0  # kernel offset (+1, 0) gathers from below
        np.testing.assert_array_equal(out, expected)

    def test_soft_kernel_matches_oracle_and_stays_normalized(self, module, cfg, rng):
        n = cfg.memory_N
        alpha = rng.random((3, n, n)).astype(np.float32)
        alpha[:, 0, :] = 0  # interior support
        alpha[:, -1, :] = 0
        alpha[:, :, 0] = 0
        alpha[:, :, -1] = 0
        alpha /= alpha.sum(axis=(1, 2), keepdims=True)
        state = MemoryState(M=ops.zeros((3, n, n, cfg.memory_D)), alpha=Tensor(alpha))
        w = rng.dirichlet(np.ones(9), size=3).reshape(3, 3, 3).astype(np.float32)
        with no_grad():
            out = module.shift_attention(state, Tensor(w), ops.ones((3, 1))).data
        np.testing.assert_allclose(out.sum(axis=(1, 2)), 1.0, atol=1e-6)
        np.testing.assert_allclose(out, shift_oracle(alpha, w), atol=1e-6)


def forced_write_vectors(module, cfg, d_star, erase_logit=40.0):
    """Craft the erase/add net so e == 1 exactly (f32) and d == d_star."""
    module.erase_add.weight.data[...] = 0.0
    module.erase_add.bias.data[:cfg.memory_D] = erase_logit
    module.erase_add.bias.data[cfg.memory_D:] = d_star


class TestWriteRead:
    def test_unattended_location_unchanged_exactly(self, module, cfg, rng):
        n, d = cfg.memory_N, cfg.memory_D
        state = init_memory_state(1, n, d, SeedStream(5))
        before = state.M.data.copy()
        h = Tensor(rng.standard_normal((1, cfg.hidden_dim)).astype(np.float32))
        with no_grad():
            after = module.write(state, h).data
        # attention is one-hot center: every other cell must be bit-identical
        mask = np.ones((n, n), dtype=bool)
        mask[n // 2, n // 2] = False
        np.testing.assert_array_equal(after[0][mask], before[0][mask])

    def test_full_erase_add_replaces_exactly(self, module, cfg):
        n, d = cfg.memory_N, cfg.memory_D
        d_star = np.linspace(-1, 1, d).astype(np.float32)
        forced_write_vectors(module, cfg, d_star)
        state = init_memory_state(1, n, d, SeedStream(5))
        h = ops.zeros((1, cfg.hidden_dim))
        with no_grad():
            m_new = module.write(state, h).data
        np.testing.assert_array_equal(m_new[0, n // 2, n // 2], d_star)

    def test_write_matches_per_location_oracle(self, module, cfg, rng):
        n, d = cfg.memory_N, cfg.memory_D
        state = init_memory_state(2, n, d, SeedStream(5))
        alpha = rng.random((2, n, n)).astype(np.float32)
        alpha /= alpha.sum(axis=(1, 2), keepdims=True)
        state = MemoryState(M=state.M, alpha=Tensor(alpha))
        h = Tensor(rng.standard_normal((2, cfg.hidden_dim)).astype(np.float32))
        with no_grad():
            e, dv = module.erase_add_vectors(h)
            got = module.write(state, h).data
        want = np.empty_like(got)
        for b in range(2):
            for i in range(n):
                for j in range(n):
                    a = alpha[b, i, j]
                    want[b, i, j] = state.M.data[b, i, j] * (1 - a * e.data[b]) + a * dv.data[b]
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_read_one_hot_and_uniform(self, module, cfg, rng):
        n, d = cfg.memory_N, cfg.memory_D
        block = rng.standard_normal((1, n, n, d)).astype(np.float32)
        one_hot = np.zeros((1, n, n), dtype=np.float32)
        one_hot[0, 2, 3] = 1.0
        with no_grad():
            m = module.read(MemoryState(M=Tensor(block), alpha=Tensor(one_hot))).data
        np.testing.assert_array_equal(m[0], block[0, 2, 3])
        uniform = np.full((1, n, n), 1.0 / (n * n), dtype=np.float32)
        with no_grad():
            m = module.read(MemoryState(M=Tensor(block), alpha=Tensor(uniform))).data
        np.testing.assert_allclose(m[0], block[0].mean(axis=(0, 1)), atol=1e-6)

    def test_write_then_read_composition(self, module, cfg):
        n, d = cfg.memory_N, cfg.memory_D
        d_star = np.linspace(0.5, -0.5, d).astype(np.float32)
        forced_write_vectors(module, cfg, d_star)
        state = init_memory_state(1, n, d, SeedStream(6))
        with no_grad():
            new_m = module.write(state, ops.zeros((1, cfg.hidden_dim)))
            out = module.read(MemoryState(M=new_m, alpha=state.alpha)).data
        np.testing.assert_allclose(out[0], d_star, atol=1e-7)


class TestResize:
    def test_resize_runs_with_same_weights(self, module, cfg, rng):
        state = resize_block(1, 25, cfg.memory_D, SeedStream(1))
        assert state.block_size == 25
        h = Tensor(rng.standard_normal((1, cfg.hidden_dim)).astype(np.float32))
        with no_grad():
            new_state, m = module.step(state, [0], h)
        assert m.shape == (1, cfg.memory_D)
        np.testing.assert_allclose(new_state.alpha_sum(), 1.0, atol=1e-6)

    def test_even_size_rejected(self, cfg):
        with pytest.raises(ContractError):
            resize_block(1, 10, cfg.memory_D, SeedStream(1))

    def test_fresh_alpha_is_centered_one_hot(self, cfg):
        state = resize_block(1, 13, cfg.memory_D, SeedStream(1))
        a = state.alpha.data[0]
        assert a[6, 6] == 1.0
        assert a.sum() == 1.0


def run_loop(module, cfg, seq, n):
    """Apply delta-kernel shifts for seq then reversed counterparts; one-hot regime."""
    offsets = {"left": (0, -1), "right": (0, 1), "up": (-1, 0), "down": (1, 0)}
    state = init_memory_state(1, n, cfg.memory_D, SeedStream(2))
    start = state.alpha.data.copy()
    g = ops.ones((1, 1))

    def apply(action):
        nonlocal state
        di, dj = offsets[action]
        alpha = module.shift_attention(state, delta_kernel(1, di, dj), g)
        state = MemoryState(M=state.M, alpha=alpha)

    with no_grad():
        for a in seq:
            apply(a)
        for a in reversed(seq):
            apply(cfg.counterparts[a])
    return start, state.alpha.data


@given(st.lists(st.sampled_from(["left", "right", "up", "down"]), min_size=1, max_size=4))
def test_loop_closure_one_hot_regime(seq):
    cfg = desk_config()
    module = MemoryModule(cfg, SeedStream(11).child("memory"))
    start, end = run_loop(module, cfg, seq, n=cfg.memory_N)
    np.testing.assert_array_equal(start, end)


def test_content_persists_across_excursion():
    cfg = desk_config()
    module = MemoryModule(cfg, SeedStream(11).child("memory"))
    n, d = cfg.memory_N, cfg.memory_D
    d_star = np.linspace(1, -1, d).astype(np.float32)
    forced_write_vectors(module, cfg, d_star)
    state = init_memory_state(1, n, d, SeedStream(3))
    g = ops.ones((1, 1))
    with no_grad():
        new_m = module.write(state, ops.zeros((1, cfg.hidden_dim)))
        state = MemoryState(M=new_m, alpha=state.alpha)
        # wander off and come back without writing
        for di, dj in [(0, 1), (0, 1), (1, 0)]:
            state = MemoryState(M=state.M, alpha=module.shift_attention(state, delta_kernel(1, di, dj), g))
        for di, dj in [(-1, 0), (0, -1), (0, -1)]:
            state = MemoryState(M=state.M, alpha=module.shift_attention(state, delta_kernel(1, di, dj), g))
        out = module.read(state).data
    np.testing.assert_allclose(out[0], d_star, atol=1e-5)


def test_gradients_reach_all_three_subnetworks():
    cfg = desk_config()
    module = MemoryModule(cfg, SeedStream(11).child("memory"))
    rng = np.random.default_rng(0)
    with fresh_tape():
        state = init_memory_state(1, cfg.memory_N, cfg.memory_D, SeedStream(4))
        h = Tensor(rng.standard_normal((1, cfg.hidden_dim)).astype(np.float32), requires_grad=True)
        _, m = module.step(state, [0], h)
        w = Tensor(rng.standard_normal(m.shape).astype(np.float32))
        backward(ops.sum_(ops.mul(m, w)))
    for net, name in ((module.kernel_l1, "kernel"), (module.gate_l1, "gate"), (module.erase_add, "erase/add")):
        g = net.weight.grad
        assert g is not None and np.abs(g).max() > 0, f"{name} network got no gradient"
