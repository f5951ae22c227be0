"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion
lines.  The training smoke performs two full 200-iteration desk runs (the
second one feeds the bit-identical determinism check), so this module takes
a few minutes of CPU.
"""

import time

import numpy as np
import pytest

from gansim import ops
from gansim.config import LossWeights, TrainConfig, desk_config, paper_pacman_config, paper_train_config
from gansim.discriminators import TemporalPyramid, temporal_receptive_fields
from gansim.env import generate_maze, rollout
from gansim.evaluation import cbh_distance, run_cbh_real_env
from gansim.memory import MemoryModule, MemoryState, init_memory_state
from gansim.model import Simulator
from gansim.optim import gradient_check
from gansim.renderer import DisentangledRenderer, compose_final
from gansim.rng import SeedStream
from gansim.tensor import Tensor, fresh_tape, no_grad
from gansim.training import Trainer, warmup_real_frames

from test_gradients import CASES


def report(criterion: str, detail: str = ""):
    suffix = f" ({detail})" if detail else ""
    print(f"\n[ACCEPTANCE] {criterion}: PASS{suffix}", flush=True)


# ---------------------------------------------------------------------------
# 1. autodiff certificate
# ---------------------------------------------------------------------------

# every catalog primitive and the gradient-check case(s) that certify it
CATALOG_COVERAGE = {
    "add": ("add", "add_broadcast"),
    "mul": ("mul", "mul_broadcast"),
    "scale": ("scale",),
    "add_scalar": ("add_scalar",),
    "pow_const": ("pow_const", "pow_rsqrt"),
    "exp": ("exp",),
    "log": ("log",),
    "reshape": ("reshape",),
    "permute": ("permute",),
    "broadcast_to": ("broadcast_to",),
    "slice": ("slice",),
    "pad": ("pad",),
    "concat": ("concat",),
    "split": ("split",),
    "sum": ("sum_axis",),
    "mean": ("mean_keepdims",),
    "sigmoid": ("sigmoid",),
    "tanh": ("tanh",),
    "leaky_relu": ("leaky_relu",),
    "softplus": ("softplus",),
    "softmax": ("softmax", "spatial_softmax"),
    "matmul": ("matmul", "matmul_batched"),
    "linear": ("linear",),
    "embedding": ("embedding",),
    "conv2d": ("conv2d", "conv2d_weights"),
    "conv_transpose2d": ("conv_transpose2d", "conv_transpose2d_weights"),
    "conv3d": ("conv3d", "conv3d_weights"),
    "instance_norm": ("instance_norm",),
    "batch_norm": ("batch_norm_1d", "batch_norm_2d", "batch_norm_3d", "batch_norm_affine"),
    "bce_with_logits": ("bce_with_logits",),
    "cross_entropy_with_logits": ("cross_entropy",),
    "l2_distance": ("l2_distance",),
}


def test_autodiff_certificate():
    t0 = time.monotonic()
    missing = set(ops.PRIMITIVES) - set(CATALOG_COVERAGE)
    assert not missing, f"catalog primitives without a certificate: {missing}"
    worst = 0.0
    for prim, case_names in CATALOG_COVERAGE.items():
        for name in case_names:
            rng = np.random.default_rng(abs(hash(name)) % (2 ** 32))
            f, x = CASES[name](rng)
            rep = gradient_check(f, x, eps=1e-3, tol=1e-3)
            assert rep.passed, f"{prim} via {name}: {rep}"
            worst = max(worst, rep.max_rel_error)

    # composed generator path (engine -> memory -> renderer) on a tiny
    # config where the finite-difference oracle stays on one activation
    # branch; two steps are unrolled because z is gated off at t=0
    cfg = desk_config(hidden_dim=8, z_dim=8, memory_N=5, memory_D=8, image_size=8,
                      use_disentangled_renderer=False)
    sim = Simulator(cfg, SeedStream(8).child("m"))
    rng = np.random.default_rng(0)
    x = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)).astype(np.float32))
    readout = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)).astype(np.float32))
    z0 = Tensor(rng.standard_normal((1, 8)).astype(np.float32))

    def composed(z1):
        state = sim.initial_state(1, SeedStream(12))
        state, out = sim.step(state, x, [1], z0)
        state, out = sim.step(state, out.frame, [2], z1)
        return ops.mean(ops.mul(out.frame, readout))

    probe = Tensor(np.random.default_rng(3).standard_normal((1, 8)).astype(np.float32))
    rep = gradient_check(composed, probe, eps=1e-3, tol=1e-3)
    assert rep.passed and rep.max_rel_error > 0, rep
    elapsed = time.monotonic() - t0
    assert elapsed < 120, f"certificate took {elapsed:.0f}s (budget 120s)"
    report("autodiff certificate",
           f"{sum(len(v) for v in CATALOG_COVERAGE.values())} primitive checks + composed path, "
           f"worst rel err {max(worst, rep.max_rel_error):.1e}, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 2. memory algebra
# ---------------------------------------------------------------------------

def test_memory_algebra_suite():
    cfg = desk_config()
    module = MemoryModule(cfg, SeedStream(11).child("memory"))
    n, d = cfg.memory_N, cfg.memory_D
    rng = np.random.default_rng(2)

    # write identities
    state = init_memory_state(1, n, d, SeedStream(5))
    before = state.M.data.copy()
    with no_grad():
        after = module.write(state, Tensor(rng.standard_normal((1, cfg.hidden_dim)).astype(np.float32))).data
    mask = np.ones((n, n), dtype=bool)
    mask[n // 2, n // 2] = False
    np.testing.assert_array_equal(after[0][mask], before[0][mask])

    d_star = np.linspace(-1, 1, d).astype(np.float32)
    module.erase_add.weight.data[...] = 0.0
    module.erase_add.bias.data[:d] = 40.0  # e == 1 exactly in f32
    module.erase_add.bias.data[d:] = d_star
    with no_grad():
        replaced = module.write(state, ops.zeros((1, cfg.hidden_dim))).data
    np.testing.assert_array_equal(replaced[0, n // 2, n // 2], d_star)

    # normalization drift across 10k soft shifts
    state = init_memory_state(1, n, d, SeedStream(6))
    worst_drift = 0.0
    with no_grad():
        alpha = state.alpha
        for i in range(10_000):
            w = Tensor(rng.dirichlet(np.ones(9)).reshape(1, 3, 3).astype(np.float32))
            g = Tensor(rng.random((1, 1)).astype(np.float32))
            alpha = module.shift_attention(MemoryState(M=state.M, alpha=alpha), w, g)
            worst_drift = max(worst_drift, abs(float(alpha.data.sum()) - 1.0))
    assert worst_drift <= 1e-6, worst_drift

    # kernel flip constraint, exact
    with no_grad():
        kernels = module.all_kernels().data
    for a, ahat in (("left", "right"), ("up", "down")):
        np.testing.assert_array_equal(kernels[cfg.action_index(ahat)],
                                      kernels[cfg.action_index(a)][::-1, ::-1])

    # one-hot loop closure for every K <= (N-1)/2
    offsets = {"left": (0, -1), "right": (0, 1), "up": (-1, 0), "down": (1, 0)}
    names = list(offsets)
    for k in range(1, (n - 1) // 2 + 1):
        seq = [names[int(rng.integers(0, 4))] for _ in range(k)]
        state = init_memory_state(1, n, d, SeedStream(7))
        start = state.alpha.data.copy()
        g1 = ops.ones((1, 1))
        with no_grad():
            alpha = state.alpha
            for name in seq + [cfg.counterparts[s] for s in reversed(seq)]:
                di, dj = offsets[name]
                w = np.zeros((1, 3, 3), dtype=np.float32)
                w[0, 1 + di, 1 + dj] = 1.0
                alpha = module.shift_attention(MemoryState(M=state.M, alpha=alpha), Tensor(w), g1)
        np.testing.assert_array_equal(start, alpha.data)
    report("memory algebra suite", f"alpha drift {worst_drift:.1e} over 10k shifts")


# ---------------------------------------------------------------------------
# 3. renderer partition of unity
# ---------------------------------------------------------------------------

def test_renderer_partition_of_unity():
    cfg = desk_config()
    renderer = DisentangledRenderer(cfg, SeedStream(31).child("renderer"))
    rng = np.random.default_rng(4)
    worst = 0.0
    with no_grad():
        for _ in range(8):  # 8 batches of 125 = 1000 random states
            m = Tensor(rng.standard_normal((125, cfg.memory_D)).astype(np.float32))
            h = Tensor(rng.standard_normal((125, cfg.hidden_dim)).astype(np.float32))
            packets = renderer.render_components(m, h)
            compose_final(packets)
            total = packets[0].fine_mask.data + packets[1].fine_mask.data
            worst = max(worst, float(np.abs(total - 1.0).max()))
        assert worst <= 1e-5, worst

        # K=1 degenerate case is exact
        m = Tensor(rng.standard_normal((3, cfg.memory_D)).astype(np.float32))
        h = Tensor(rng.standard_normal((3, cfg.hidden_dim)).astype(np.float32))
        packets = renderer.render_components(m, h)
        frame = compose_final(packets[:1])
        np.testing.assert_array_equal(packets[0].fine_mask.data, 1.0)
        np.testing.assert_array_equal(frame.data, packets[0].content.data)
    report("renderer partition of unity", f"1000 states, worst |sum-1| = {worst:.1e}")


# ---------------------------------------------------------------------------
# 4. temporal receptive fields
# ---------------------------------------------------------------------------

def test_temporal_receptive_fields():
    windows = temporal_receptive_fields(3)
    assert [rf for rf, _ in windows] == [6, 18, 32]

    cfg = paper_pacman_config(temporal_levels=3)
    pyramid = TemporalPyramid(cfg, 64, 3, SeedStream(3).child("t"))
    pyramid.eval()
    rng = np.random.default_rng(5)
    t_frames = 32
    base = rng.standard_normal((1, 64, t_frames, 3, 3)).astype(np.float32)
    with no_grad():
        ref = [t.data.copy() for t in pyramid(Tensor(base))]
    for frame in range(t_frames):
        pert = base.copy()
        pert[:, :, frame] += 0.5
        with no_grad():
            out = [t.data for t in pyramid(Tensor(pert))]
        for lvl, (rf, jump) in enumerate(windows):
            changed = np.abs(out[lvl] - ref[lvl])[0, 0] > 0
            for i in range(ref[lvl].shape[2]):
                lo, hi = i * jump, i * jump + rf - 1
                assert changed[i] == (lo <= frame <= hi), (
                    f"level {lvl + 1} logit {i}: frame {frame} vs window [{lo},{hi}]")
    report("temporal receptive fields", "influence windows exactly 6 / 18 / 32 frames")


# ---------------------------------------------------------------------------
# 5. come-back-home metric
# ---------------------------------------------------------------------------

def test_cbh_metric_oracle_equivalence():
    rng = np.random.default_rng(6)
    for _ in range(10_000):
        s = (rng.random((8, 8)) > 0.5).astype(np.uint8)
        s_hat = (rng.random((8, 8)) > 0.5).astype(np.uint8)
        got = cbh_distance(s, s_hat)
        want = int(np.abs(s.astype(int) - s_hat.astype(int)).sum()) / (int(s.sum()) + 1)
        assert got == want
    for k in (5, 10, 20):
        result = run_cbh_real_env(k=k, trials=5, seed=3)
        assert result.distances == [0.0] * 5, (k, result.distances)
    report("CBH metric oracle equivalence", "10k pairs exact; real env d = 0 at K = 5/10/20")


# ---------------------------------------------------------------------------
# 6. warm-up schedule
# ---------------------------------------------------------------------------

def test_warmup_schedule():
    tc = paper_train_config()
    assert warmup_real_frames(1, tc) == 9
    for epoch in range(20, 40):
        assert warmup_real_frames(epoch, tc) == 1
    for epoch in range(2, 20):
        closed_form = int(np.floor(9 - 8 * (epoch - 1) / 19 + 0.5))
        assert warmup_real_frames(epoch, tc) == max(1, closed_form), epoch
    report("warm-up schedule", "epoch 1 -> 9, epoch >= 20 -> 1, linear between")


# ---------------------------------------------------------------------------
# 7. training smoke + determinism
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def smoke_episodes():
    return [rollout(generate_maze(1000 + i, 15), "random", 12, seed=i) for i in range(64)]


def _smoke_run(episodes, out_dir):
    tc = TrainConfig(sequence_length=8, batch_size=4, epochs=20,
                     max_iterations=200, seed=7, checkpoint_interval=100)
    trainer = Trainer(desk_config(), tc, out_dir=out_dir)
    t0 = time.monotonic()
    history = trainer.train(episodes)
    return history, time.monotonic() - t0


def test_training_smoke_and_determinism(tmp_path, smoke_episodes):
    history, elapsed = _smoke_run(smoke_episodes, tmp_path / "run_a")
    assert len(history) == 200
    assert elapsed < 600, f"smoke run took {elapsed:.0f}s (budget 600s)"
    g = np.array([m.g.total for m in history])
    d = np.array([m.d.total for m in history])
    assert np.isfinite(g).all() and np.isfinite(d).all()
    ma_20 = g[:20].mean()
    ma_200 = g[180:200].mean()
    assert ma_200 < ma_20, f"moving average did not decrease: {ma_20:.3f} -> {ma_200:.3f}"

    _, elapsed_b = _smoke_run(smoke_episodes, tmp_path / "run_b")
    blob_a = (tmp_path / "run_a" / "checkpoint_final.ggck").read_bytes()
    blob_b = (tmp_path / "run_b" / "checkpoint_final.ggck").read_bytes()
    assert blob_a == blob_b, "seeded runs are not bit-identical"
    report("training smoke",
           f"200 iters in {elapsed:.0f}s, MA {ma_20:.2f} -> {ma_200:.2f}, "
           f"two runs bit-identical")


# ---------------------------------------------------------------------------
# 8. cycle-loss gradient partition
# ---------------------------------------------------------------------------

def _generator_grads(lambda_c, episodes):
    tc = TrainConfig(sequence_length=8, batch_size=2, epochs=1, seed=13)
    trainer = Trainer(desk_config(), tc, weights=LossWeights(lambda_c=lambda_c))
    real_frames, actions = trainer.make_batch(episodes, [0, 1])
    zs = [Tensor(trainer.z_rng.normal((2, trainer.config.z_dim)))
          for _ in range(actions.shape[1])]
    with fresh_tape():
        roll = trainer.sim.rollout(real_frames, actions, zs, 1, SeedStream(4))
        main_total, cycle_term, _ = trainer.generator_loss(roll, real_frames, actions, zs)
        trainer.accumulate_generator_gradients(main_total, cycle_term)
    return ({n: p.grad.copy() for n, p in trainer.sim.renderer.named_parameters()},
            {n: p.grad.copy() for n, p in trainer.sim.dynamics.named_parameters()},
            {n: p.grad.copy() for n, p in trainer.sim.memory.named_parameters()})


def test_cycle_loss_gradient_partition(smoke_episodes):
    r_on, dyn_on, mem_on = _generator_grads(0.05, smoke_episodes)
    r_off, dyn_off, mem_off = _generator_grads(0.0, smoke_episodes)
    for name in r_on:
        np.testing.assert_array_equal(r_on[name], r_off[name],
                                      err_msg=f"renderer grad changed: {name}")
    assert any(np.abs(dyn_on[k] - dyn_off[k]).max() > 0 for k in dyn_on)
    assert any(np.abs(mem_on[k] - mem_off[k]).max() > 0 for k in mem_on)
    report("cycle-loss gradient partition",
           "renderer grads bit-identical; dynamics/memory grads respond")
