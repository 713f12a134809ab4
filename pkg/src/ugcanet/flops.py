"""Analytic parameter and FLOP counts.

Only multiply-accumulate work is counted (FLOPs = 2 x MACs): convolutions,
linear layers, attention scores and weighted sums, the compact CGNL dot
products and bilinear sampling inside deformable convs. Normalization,
activations, pooling and fixed upsampling are left out.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .autodiff.nn import Module
from .encoder import Conv2d, LayerNorm, Linear


@dataclass
class Item:
    name: str
    params: int
    macs: int

    @property
    def flops(self) -> int:
        return 2 * self.macs


@dataclass
class CostReport:
    items: list = field(default_factory=list)

    def add(self, name, params=0, macs=0):
        self.items.append(Item(name, int(params), int(macs)))

    @property
    def params(self) -> int:
        return sum(i.params for i in self.items)

    @property
    def flops(self) -> int:
        return sum(i.flops for i in self.items)

    def by_prefix(self, prefix: str) -> int:
        return sum(i.flops for i in self.items if i.name.startswith(prefix))

    def table(self) -> str:
        w = max((len(i.name) for i in self.items), default=4)
        lines = [f"{'item':<{w}}  {'params':>10}  {'MFLOPs':>10}"]
        for i in self.items:
            lines.append(f"{i.name:<{w}}  {i.params:>10}  {i.flops / 1e6:>10.3f}")
        lines.append(f"{'total':<{w}}  {self.params:>10}  {self.flops / 1e6:>10.3f}")
        return "\n".join(lines)


def _nparams(m: Module) -> int:
    return m.num_parameters()


def conv_out(h, w, k, stride, pad):
    return (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1


def count_conv(rep: CostReport, name: str, conv: Conv2d, h: int, w: int) -> tuple:
    cout, cin_g, k, _ = conv.weight.shape
    oh, ow = conv_out(h, w, k, conv.stride, conv.padding)
    rep.add(name, _nparams(conv), cout * oh * ow * cin_g * k * k)
    return oh, ow


def count_linear(rep: CostReport, name: str, lin: Linear, tokens: int) -> None:
    fan_out, fan_in = lin.weight.shape
    rep.add(name, _nparams(lin), tokens * fan_in * fan_out)


def attention_core_macs(dim: int, n: int, m: int) -> int:
    """Score (QK^T) plus apply (AV) MACs; independent of the head split."""
    return 2 * n * m * dim


def attention_flop_ratio(dim: int, h: int, w: int, sr: int) -> float:
    """Dense / reduced attention core cost on an h x w grid; equals sr**2."""
    n = h * w
    return attention_core_macs(dim, n, n) / attention_core_macs(dim, n, (h // sr) * (w // sr))


def _count_encoder(rep, enc, h, w) -> list:
    grids = []
    for si, stage in enumerate(enc.stages):
        p = f"encoder.stage{si + 1}"
        h, w = count_conv(rep, f"{p}.embed", stage.embed.proj, h, w)
        rep.add(f"{p}.embed.norm", _nparams(stage.embed.norm))
        n = h * w
        for bi, blk in enumerate(stage.blocks):
            b = f"{p}.block{bi}"
            attn = blk.attn
            dim = attn.dim
            rep.add(f"{b}.norms", _nparams(blk.norm1) + _nparams(blk.norm2))
            count_linear(rep, f"{b}.attn.q", attn.q, n)
            m = n
            if attn.sr_ratio > 1:
                sh, sw = count_conv(rep, f"{b}.attn.sr", attn.sr, h, w)
                rep.add(f"{b}.attn.sr_norm", _nparams(attn.sr_norm))
                m = sh * sw
            count_linear(rep, f"{b}.attn.k", attn.k, m)
            count_linear(rep, f"{b}.attn.v", attn.v, m)
            rep.add(f"{b}.attn.core", 0, attention_core_macs(dim, n, m))
            count_linear(rep, f"{b}.attn.proj", attn.proj, n)
            count_linear(rep, f"{b}.ffn.fc1", blk.ffn.fc1, n)
            count_conv(rep, f"{b}.ffn.dwconv", blk.ffn.dwconv, h, w)
            count_linear(rep, f"{b}.ffn.fc2", blk.ffn.fc2, n)
        rep.add(f"{p}.norm", _nparams(stage.norm))
        grids.append((h, w))
    return grids


def _count_context(rep, ctx, channels, grids) -> None:
    for li, (lvl, c, (h, w)) in enumerate(zip(ctx.levels, channels[1:], grids[1:])):
        p = f"context.level{li + 2}"
        if lvl.cgnl is not None:
            cg = lvl.cgnl
            for part in ("theta", "phi", "g"):
                count_conv(rep, f"{p}.cgnl.{part}", getattr(cg, part), h, w)
            # per order: <phi^p, g> and theta^p * s, each c*h*w MACs
            rep.add(f"{p}.cgnl.compact", 0, 2 * cg.cfg.order * c * h * w)
            count_conv(rep, f"{p}.cgnl.z", cg.z, h, w)
            rep.add(f"{p}.cgnl.gamma", cg.gamma.data.size, c * h * w)
        if lvl.se is not None:
            count_linear(rep, f"{p}.se.fc1", lvl.se.fc1, 1)
            count_linear(rep, f"{p}.se.fc2", lvl.se.fc2, 1)


def _count_decoder(rep, dec, grids) -> None:
    for i, (fsm, (h, w)) in enumerate(zip(dec.fsm, grids)):
        count_linear(rep, f"decoder.fsm{i + 1}.fc", fsm.fc, 1)
        count_conv(rep, f"decoder.fsm{i + 1}.proj", fsm.proj, h, w)
    for i in (2, 1, 0):
        fam = dec.fam[i]
        h, w = grids[i]
        p = f"decoder.fam{i + 1}"
        count_conv(rep, f"{p}.offset", fam.offset, h, w)
        oh, ow = count_conv(rep, f"{p}.deform", fam.dcn, h, w)
        cin, k = fam.dcn.weight.shape[1], fam.k
        rep.add(f"{p}.sampling", 0, 4 * cin * k * k * oh * ow)
    count_conv(rep, "decoder.head", dec.head, *grids[0])


def count_model(model, height: int, width: int) -> CostReport:
    """Itemized cost of a UGCANet for one image of the given size."""
    rep = CostReport()
    grids = _count_encoder(rep, model.encoder, height, width)
    _count_context(rep, model.context, model.cfg.encoder.channels, grids)
    _count_decoder(rep, model.decoder, grids)
    cls = model.classifier
    for part in ("pos", "le", "hp"):
        count_linear(rep, f"classifier.{part}", getattr(cls, part), 1)
    return rep


def flop_param_count(model, height: int = 352, width: int = 352) -> tuple:
    """(params, FLOPs) for one image."""
    if isinstance(model, Conv2d):
        rep = CostReport()
        count_conv(rep, "conv", model, height, width)
    elif isinstance(model, (Linear, LayerNorm)):
        raise TypeError("pass a conv or a full model")
    else:
        rep = count_model(model, height, width)
    return rep.params, rep.flops
