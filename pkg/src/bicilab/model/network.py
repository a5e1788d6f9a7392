"""Deep ACE forward graph: encoder, envelope detector, TCN separator, masker, decoder.

Parameters live in a flat ``dict[str, np.ndarray]`` keyed by dotted names such as
``left.tcn.0.3.dw.weight``. Stacks are prefixed ``left.``/``right.`` for the
two-sided variants and ``mono.`` for the single shared monaural stack.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .. import runtime as rt
from ..ace import select_n_of_m
from ..runtime import Tensor
from .config import VARIANTS, ModelConfig, ModelConfigError

ANTIRECT_EPS = 1e-8
PRELU_INIT = 0.25
Params = Mapping[str, np.ndarray]


@dataclass
class SideOutput:
    """Per-ear network outputs: p in (0, 1) and the masker's pre-sigmoid logits."""

    p: Tensor
    mask_logits: Tensor


def side_prefixes(variant: str) -> tuple[str, ...]:
    if variant not in VARIANTS:
        raise ModelConfigError(f"unknown variant {variant!r}; choose from {', '.join(VARIANTS)}")
    return ("mono",) if variant == "monaural" else ("left", "right")


def parameter_shapes(config: ModelConfig, prefix: str) -> dict[str, tuple[int, ...]]:
    """Every parameter of one stack with its shape; order is the init order."""
    c = config
    f, p = c.n_filters, c.kernel_size
    shapes: dict[str, tuple[int, ...]] = {
        "encoder.kernel": (f, 1, c.filter_len),
        "antirect.weight": (f, 2 * f, 1),
        "antirect.bias": (f,),
    }
    c_in = f
    for i, c_out in enumerate(c.ded_channels):
        shapes[f"ded.{i}.weight"] = (c_out, c_in, p)
        shapes[f"ded.{i}.bias"] = (c_out,)
        if i < len(c.ded_channels) - 1:
            shapes[f"ded.{i}.prelu"] = ()
        c_in = c_out
    shapes["bottleneck.weight"] = (c.bottleneck_channels, f, 1)
    shapes["bottleneck.bias"] = (c.bottleneck_channels,)
    b, h, s = c.bottleneck_channels, c.hidden_channels, c.skip_channels
    n_blocks = c.repeats * c.blocks_per_repeat
    for r in range(c.repeats):
        for x in range(c.blocks_per_repeat):
            k = f"tcn.{r}.{x}."
            shapes.update({
                k + "in.weight": (h, b, 1), k + "in.bias": (h,), k + "prelu1": (),
                k + "norm1.gamma": (h, 1), k + "norm1.beta": (h, 1),
                k + "dw.weight": (h, 1, p), k + "dw.bias": (h,), k + "prelu2": (),
                k + "norm2.gamma": (h, 1), k + "norm2.beta": (h, 1),
            })
            if r * c.blocks_per_repeat + x < n_blocks - 1:
                # the final block's residual output would feed nothing
                shapes[k + "res.weight"] = (b, h, 1)
                shapes[k + "res.bias"] = (b,)
            shapes[k + "skip.weight"] = (s, h, 1)
            shapes[k + "skip.bias"] = (s,)
    m = c.m_channels
    shapes["mask.weight"] = (m, s, 1)
    shapes["mask.bias"] = (m,)
    shapes["decoder.weight"] = (m, m, 1)  # transposed conv layout (C_in, C_out, K)
    shapes["decoder.bias"] = (m,)
    return {f"{prefix}.{k}": v for k, v in shapes.items()}


def init_params(config: ModelConfig, variant: str, seed: int = 0) -> dict[str, np.ndarray]:
    """Seeded initialisation: uniform(+-1/sqrt(fan_in)) weights, zero biases, unit gLN gains."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for prefix in side_prefixes(variant):
        for name, shape in parameter_shapes(config, prefix).items():
            leaf = name.rsplit(".", 1)[1]
            if leaf in ("weight", "kernel"):
                fan_in = shape[1] * shape[2] if not name.endswith("decoder.weight") else shape[0]
                bound = 1.0 / np.sqrt(fan_in)
                params[name] = rng.uniform(-bound, bound, shape)
            elif leaf.startswith("prelu"):
                params[name] = np.array(PRELU_INIT)
            elif leaf == "gamma":
                params[name] = np.ones(shape)
            else:
                params[name] = np.zeros(shape)
    return params


def mirror_params(params: Params, source: str = "left", target: str = "right") -> dict[str, np.ndarray]:
    """Copy one side's stack onto the other (used for symmetry checks)."""
    out = dict(params)
    for name, v in params.items():
        if name.startswith(source + "."):
            out[target + name[len(source):]] = np.array(v, copy=True)
    return out


def check_params(params: Params, config: ModelConfig, variant: str) -> None:
    expected = {}
    for prefix in side_prefixes(variant):
        expected.update(parameter_shapes(config, prefix))
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        detail = f"missing {missing[:3]}" if missing else f"unexpected {extra[:3]}"
        raise ModelConfigError(f"parameters do not match a {variant} model: {detail}")
    for name, shape in expected.items():
        if tuple(np.shape(params[name])) != shape:
            raise ModelConfigError(f"{name} has shape {np.shape(params[name])}, expected {shape}")


def as_tensors(params: Params, requires_grad: bool = False) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=requires_grad, name=k) for k, v in params.items()}


class _Stack:
    """Views one side's parameters through its name prefix."""

    def __init__(self, tensors: Mapping[str, Tensor], prefix: str, config: ModelConfig):
        self.t = tensors
        self.prefix = prefix
        self.config = config

    def __getitem__(self, key: str) -> Tensor:
        return self.t[f"{self.prefix}.{key}"]

    def conv(self, x: Tensor, key: str, padding: int = 0, dilation: int = 1, groups: int = 1) -> Tensor:
        return rt.conv1d(x, self[key + ".weight"], self[key + ".bias"], padding=padding,
                         dilation=dilation, groups=groups)

    def encode(self, x: Tensor) -> Tensor:
        c = self.config
        if x.shape[-1] < c.filter_len:
            raise ModelConfigError(f"input of {x.shape[-1]} samples is shorter than one {c.filter_len}-sample filter")
        z = rt.conv1d(x, self["encoder.kernel"], stride=c.stride)
        return self.antirectify(z)

    def antirectify(self, z: Tensor) -> Tensor:
        centred = z - rt.mean(z, axis=-1, keepdims=True)
        rms = rt.sqrt(rt.mean(centred * centred, axis=-1, keepdims=True) + ANTIRECT_EPS)
        unit = centred / rms
        both = rt.concat([rt.relu(unit), rt.relu(rt.neg(unit))], axis=1)
        return self.conv(both, "antirect")

    def ded(self, z: Tensor) -> Tensor:
        pad = (self.config.kernel_size - 1) // 2
        n_layers = len(self.config.ded_channels)
        for i in range(n_layers):
            z = self.conv(z, f"ded.{i}", padding=pad)
            if i < n_layers - 1:
                z = rt.prelu(z, self[f"ded.{i}.prelu"])
        return z

    def separate(self, z: Tensor) -> Tensor:
        c = self.config
        z = self.conv(z, "bottleneck")
        skip_sum = None
        for r in range(c.repeats):
            for x in range(c.blocks_per_repeat):
                k = f"tcn.{r}.{x}."
                dilation = 2**x
                h = rt.prelu(self.conv(z, k + "in"), self[k + "prelu1"])
                h = rt.global_layer_norm(h, self[k + "norm1.gamma"], self[k + "norm1.beta"])
                h = self.conv(h, k + "dw", padding=dilation * (c.kernel_size - 1) // 2,
                              dilation=dilation, groups=c.hidden_channels)
                h = rt.prelu(h, self[k + "prelu2"])
                h = rt.global_layer_norm(h, self[k + "norm2.gamma"], self[k + "norm2.beta"])
                skip = self.conv(h, k + "skip")
                skip_sum = skip if skip_sum is None else skip_sum + skip
                if f"{self.prefix}.{k}res.weight" in self.t:
                    z = z + self.conv(h, k + "res")
        return skip_sum

    def mask_and_decode(self, separated: Tensor, envelopes: Tensor) -> SideOutput:
        logits = self.conv(separated, "mask")
        if logits.shape != envelopes.shape:
            raise ModelConfigError(f"masker output {logits.shape} does not align with envelopes {envelopes.shape}")
        masked = rt.sigmoid(logits) * envelopes
        p = rt.sigmoid(rt.conv1d_transposed(masked, self["decoder.weight"], self["decoder.bias"]))
        return SideOutput(p, logits)


def fuse(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise (Hadamard) product of two equally shaped latent tensors."""
    if a.shape != b.shape:
        raise ValueError(f"cannot fuse tensors of shapes {a.shape} and {b.shape}")
    return a * b


def _as_batch(x) -> tuple[Tensor, bool]:
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim == 1:
        return rt.reshape(x, (1, 1, x.shape[0])), True
    if x.ndim == 2:
        return rt.reshape(x, (x.shape[0], 1, x.shape[1])), False
    raise ValueError(f"expected a waveform (n,) or batch (N, n), got shape {x.shape}")


def _unbatch(out: SideOutput, single: bool) -> SideOutput:
    if not single:
        return out
    return SideOutput(rt.reshape(out.p, out.p.shape[1:]), rt.reshape(out.mask_logits, out.mask_logits.shape[1:]))


def forward_graph(variant: str, x_left, x_right, tensors: Mapping[str, Tensor],
                  config: ModelConfig) -> tuple[SideOutput, SideOutput | None]:
    """Build the differentiable graph. Inputs are (n,) or (N, n) waveforms."""
    side_prefixes(variant)
    xl, single = _as_batch(x_left)
    xr = None
    if x_right is not None:
        xr, _ = _as_batch(x_right)
        if xr.shape != xl.shape:
            raise ValueError(f"left and right inputs differ in shape: {xl.shape} vs {xr.shape}")
    elif variant != "monaural":
        raise ValueError(f"the {variant} variant needs both ear signals")

    if variant == "monaural":
        stack = _Stack(tensors, "mono", config)

        def run(x):
            z = stack.encode(x)
            return _unbatch(stack.mask_and_decode(stack.separate(z), stack.ded(z)), single)

        return run(xl), (run(xr) if xr is not None else None)

    left, right = _Stack(tensors, "left", config), _Stack(tensors, "right", config)
    zl, zr = left.encode(xl), right.encode(xr)
    if variant == "bilateral":
        outs = [s.mask_and_decode(s.separate(z), s.ded(z)) for s, z in ((left, zl), (right, zr))]
    else:
        latent = fuse(zl, zr)
        separated = fuse(left.separate(latent), right.separate(latent))
        outs = [s.mask_and_decode(separated, s.ded(z)) for s, z in ((left, zl), (right, zr))]
    return _unbatch(outs[0], single), _unbatch(outs[1], single)


def forward(variant: str, x_left, x_right, params: Params,
            config: ModelConfig) -> tuple[np.ndarray, np.ndarray | None]:
    """Inference pass returning (p_left, p_right) as arrays of shape (M, T)."""
    check_params(params, config, variant)
    out_l, out_r = forward_graph(variant, x_left, x_right, as_tensors(params), config)
    return out_l.p.data, (out_r.p.data if out_r is not None else None)


def denoised_electrodogram(p: np.ndarray, n_select: int) -> np.ndarray:
    """Keep the ``n_select`` largest outputs per frame, zeroing the rest."""
    p = np.asarray(p, dtype=np.float64)
    return p * select_n_of_m(p, n_select)
