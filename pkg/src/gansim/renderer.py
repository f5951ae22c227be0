"""Frame decoders.

Two variants: a plain transposed-conv decoder driven by the hidden state,
and the disentangling renderer that draws one component per input vector
(memory read -> static scene, hidden state -> dynamic content), modulates
each rough sketch with a SPADE block conditioned on the masked attribute
map, and composes contents through per-pixel fine-mask softmax.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import nn, ops
from .config import ModelConfig
from .rng import SeedStream
from .tensor import ContractError, Tensor

STATIC, DYNAMIC = 0, 1
COMPONENT_NAMES = ("static", "dynamic")


class SimpleRenderer(nn.Module):
    """hidden state -> frame in [-1, 1]."""

    def __init__(self, config: ModelConfig, rng: SeedStream):
        super().__init__()
        self.config = config
        hd = config.hidden_dim
        if config.preset == "pacman":
            self.seed_ch, self.seed_size = 512, 7
            self.proj = nn.Linear(hd, 512 * 7 * 7, rng.child("proj"))
            self.deconvs = [
                nn.ConvTranspose2d(512, 512, 3, rng.child("d0"), stride=1),            # 9
                nn.ConvTranspose2d(512, 256, 3, rng.child("d1"), stride=2, output_padding=1),  # 20
                nn.ConvTranspose2d(256, 128, 4, rng.child("d2"), stride=2),            # 42
                nn.ConvTranspose2d(128, 64, 4, rng.child("d3"), stride=2),             # 86
                nn.ConvTranspose2d(64, 3, 3, rng.child("d4"), stride=1, padding=2),    # 84
            ]
        else:
            self.seed_ch, self.seed_size = 64, config.image_size // 4
            self.proj = nn.Linear(hd, self.seed_ch * self.seed_size ** 2, rng.child("proj"))
            self.deconvs = [
                nn.ConvTranspose2d(64, 32, 4, rng.child("d0"), stride=2, padding=1),
                nn.ConvTranspose2d(32, 16, 4, rng.child("d1"), stride=2, padding=1),
            ]
            self.head = nn.Conv2d(16, 3, 3, rng.child("head"), stride=1, padding=1)
        for i, m in enumerate(self.deconvs):
            self._modules[f"deconv{i}"] = m

    def __call__(self, h: Tensor) -> Tensor:
        b = h.shape[0]
        x = ops.leaky_relu(self.proj(h))
        x = ops.reshape(x, (b, self.seed_ch, self.seed_size, self.seed_size))
        if self.config.preset == "pacman":
            for m in self.deconvs[:-1]:
                x = ops.leaky_relu(m(x))
            x = self.deconvs[-1](x)
        else:
            for m in self.deconvs:
                x = ops.leaky_relu(m(x))
            x = self.head(x)
        return ops.tanh(x)


class Spade(nn.Module):
    """Instance-normalize, then modulate with gamma/beta from a context map."""

    def __init__(self, feat_ch: int, ctx_ch: int, rng: SeedStream):
        super().__init__()
        hidden = max(16, ctx_ch)
        self.shared = nn.Conv2d(ctx_ch, hidden, 3, rng.child("shared"), padding=1)
        self.gamma = nn.Conv2d(hidden, feat_ch, 3, rng.child("gamma"), padding=1)
        self.beta = nn.Conv2d(hidden, feat_ch, 3, rng.child("beta"), padding=1)
        # identity modulation at init so the normalized signal passes through
        self.gamma.weight.data[...] = 0.0
        self.beta.weight.data[...] = 0.0

    def __call__(self, x: Tensor, context: Tensor) -> Tensor:
        normalized = ops.instance_norm(x)
        ctx = ops.resize_nearest(context, (x.shape[2], x.shape[3]))
        actv = ops.leaky_relu(self.shared(ctx))
        g = self.gamma(actv)
        b = self.beta(actv)
        return ops.add(ops.mul(normalized, ops.add_scalar(g, 1.0)), b)


@dataclass
class ComponentPacket:
    """Per-component maps produced while rendering one frame."""

    attribute_map: Tensor   # (B, D1, H1, H1)
    object_map: Tensor      # (B, 1, H1, H1), post-attention
    type_vector: Tensor     # (B, D1)
    sketch: Tensor          # (B, D2, H2, H2)
    mask_logits: Tensor     # (B, 1, S, S)
    fine_mask: Tensor       # (B, 1, S, S), filled in by compose
    content: Tensor         # (B, 3, S, S)


class _ComponentDecoder(nn.Module):
    """One decoding column; the renderer owns K of these."""

    def __init__(self, config: ModelConfig, in_dim: int, rng: SeedStream):
        super().__init__()
        self.config = config
        if config.preset == "pacman":
            self.d1, seed_ch = 32, 128
            self.sketch_proj = nn.Linear(in_dim, seed_ch * 9, rng.child("sketch_proj"))
            self.sketch_d0 = nn.ConvTranspose2d(seed_ch, 512, 3, rng.child("sk_d0"))      # 5
            self.sketch_d1 = nn.ConvTranspose2d(512, self.d1 + 1, 3, rng.child("sk_d1"))  # 7
            self.type_proj = nn.Linear(in_dim, self.d1, rng.child("type_proj"))
            self.rough_d0 = nn.ConvTranspose2d(self.d1, 256, 3, rng.child("rg_d0"))       # 9
            self.rough_d1 = nn.ConvTranspose2d(256, 128, 3, rng.child("rg_d1"),
                                               stride=2, output_padding=1)                # 20
            self.spade = Spade(128, self.d1, rng.child("spade"))
            self.dec_d0 = nn.ConvTranspose2d(128, 64, 4, rng.child("dec_d0"), stride=2)   # 42
            self.dec_d1 = nn.ConvTranspose2d(64, 32, 4, rng.child("dec_d1"), stride=2)    # 86
            self.mask_head = nn.Conv2d(32, 1, 3, rng.child("mask_head"))                  # 84
            self.content_head = nn.Conv2d(32, 3, 3, rng.child("content_head"))            # 84
        else:
            self.d1, seed_ch = 32, 32
            self.sketch_proj = nn.Linear(in_dim, seed_ch * 9, rng.child("sketch_proj"))
            self.sketch_d0 = nn.ConvTranspose2d(seed_ch, 64, 3, rng.child("sk_d0"))       # 5
            self.sketch_d1 = nn.ConvTranspose2d(64, self.d1 + 1, 3, rng.child("sk_d1"))   # 7
            self.type_proj = nn.Linear(in_dim, self.d1, rng.child("type_proj"))
            self.rough_d0 = nn.ConvTranspose2d(self.d1, 64, 2, rng.child("rg_d0"))        # 8
            self.spade = Spade(64, self.d1, rng.child("spade"))
            self.dec_d0 = nn.ConvTranspose2d(64, 32, 3, rng.child("dec_d0"), stride=2)    # 17
            self.dec_d1 = nn.ConvTranspose2d(32, 16, 2, rng.child("dec_d1"))              # 18
            self.mask_head = nn.Conv2d(16, 1, 3, rng.child("mask_head"))                  # 16
            self.content_head = nn.Conv2d(16, 3, 3, rng.child("content_head"))            # 16
        self.seed_ch = seed_ch

    def sketch(self, c: Tensor):
        """Attribute map, raw object logits, type vector (pre-attention)."""
        b = c.shape[0]
        x = ops.reshape(self.sketch_proj(c), (b, self.seed_ch, 3, 3))
        x = ops.leaky_relu(x)
        x = self.sketch_d1(ops.leaky_relu(self.sketch_d0(x)))
        h1 = x.shape[2]
        attr = ops.slice_nd(x, (0, 0, 0, 0), (b, self.d1, h1, h1))
        obj_logits = ops.slice_nd(x, (0, self.d1, 0, 0), (b, 1, h1, h1))
        v = ops.leaky_relu(self.type_proj(c))
        return attr, obj_logits, v

    def rough(self, v: Tensor, obj: Tensor) -> Tensor:
        """Sketch tensor R from the type vector painted through the mask."""
        b, d1 = v.shape
        painted = ops.mul(obj, ops.reshape(v, (b, d1, 1, 1)))
        if self.config.preset == "pacman":
            return self.rough_d1(ops.leaky_relu(self.rough_d0(painted)))
        return self.rough_d0(painted)

    def decode(self, r: Tensor, context: Tensor):
        y = self.spade(r, context)
        y = ops.leaky_relu(self.dec_d0(ops.leaky_relu(y)))
        y = ops.leaky_relu(self.dec_d1(y))
        return self.mask_head(y), ops.tanh(self.content_head(y))


class DisentangledRenderer(nn.Module):
    """Two-component renderer: c = {memory read, hidden state}."""

    def __init__(self, config: ModelConfig, rng: SeedStream):
        super().__init__()
        self.config = config
        self.static_dec = _ComponentDecoder(config, config.memory_D, rng.child("static"))
        self.dynamic_dec = _ComponentDecoder(config, config.hidden_dim, rng.child("dynamic"))

    def _decoders(self):
        return (self.static_dec, self.dynamic_dec)

    def render_components(self, m: Tensor, h: Tensor) -> list[ComponentPacket]:
        inputs = (m, h)
        sketches = [dec.sketch(c) for dec, c in zip(self._decoders(), inputs)]
        obj_raw = ops.concat([s[1] for s in sketches], axis=1)  # (B, K, H1, H1)
        if self.config.object_attention == "softmax":
            obj_attn = ops.softmax(obj_raw, axis=1)
        else:
            obj_attn = ops.sigmoid(obj_raw)

        packets = []
        b = m.shape[0]
        h1 = obj_raw.shape[2]
        for k, (dec, (attr, _, v)) in enumerate(zip(self._decoders(), sketches)):
            obj_k = ops.slice_nd(obj_attn, (0, k, 0, 0), (b, 1, h1, h1))
            r = dec.rough(v, obj_k)
            context = ops.mul(obj_k, attr)
            mask_logits, content = dec.decode(r, context)
            packets.append(ComponentPacket(
                attribute_map=attr, object_map=obj_k, type_vector=v,
                sketch=r, mask_logits=mask_logits, fine_mask=None, content=content))
        return packets

    def __call__(self, m: Tensor, h: Tensor):
        packets = self.render_components(m, h)
        frame = compose_final(packets)
        return frame, packets

    def component_content(self, component: int, c: Tensor) -> Tensor:
        """Content image of one component with the other input zeroed
        (cycle-loss branches, swaps, disentanglement reports)."""
        b = c.shape[0]
        if component == STATIC:
            packets = self.render_components(c, ops.zeros((b, self.config.hidden_dim)))
        elif component == DYNAMIC:
            packets = self.render_components(ops.zeros((b, self.config.memory_D)), c)
        else:
            raise ContractError(f"unknown component index {component}")
        return packets[component].content


def compose_final(packets: list[ComponentPacket], override_content: dict | None = None) -> Tensor:
    """x = sum_k eta_k * X_k with per-pixel softmax over mask logits.

    The sum is order-free, so composition is permutation-equivariant in the
    components.  `override_content` replaces a component's content image
    (static/dynamic swapping) without touching the masks.
    """
    if not packets:
        raise ContractError("compose_final needs at least one component")
    shapes = {tuple(p.content.shape) for p in packets}
    if len(shapes) != 1:
        raise ContractError(f"component content shapes differ: {shapes}")
    logits = ops.concat([p.mask_logits for p in packets], axis=1)  # (B, K, S, S)
    masks = ops.softmax(logits, axis=1)
    b, k, s, _ = masks.shape
    frame = None
    for i, p in enumerate(packets):
        eta = ops.slice_nd(masks, (0, i, 0, 0), (b, 1, s, s))
        p.fine_mask = eta
        content = p.content
        if override_content and i in override_content:
            content = override_content[i]
        term = ops.mul(eta, content)
        frame = term if frame is None else ops.add(frame, term)
    return frame
